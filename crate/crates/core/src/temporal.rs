//! Temporal encoder: lightweight frame features → contextualized frame
//! representations used by prompt-aware sampling and stage-1 pruning.
//!
//! Pipeline per video: linear projection D_v→D, sinusoidal positions, then a
//! stack of pre-norm single-head self-attention blocks whose depth depends on
//! the clip duration. Short and long clips share one parameter bank; short
//! clips use its first `short_depth` layers.

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::layers::{join, sinusoidal_positions, EncoderLayer, Linear, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRule {
    pub short_depth: usize,
    pub long_depth: usize,
    pub threshold_s: f64,
}

impl Default for DepthRule {
    fn default() -> Self {
        Self { short_depth: 3, long_depth: 5, threshold_s: 60.0 }
    }
}

impl DepthRule {
    /// Layers applied for a clip of this duration; the threshold itself is short.
    pub fn depth_for(&self, duration_s: f64) -> usize {
        if duration_s <= self.threshold_s {
            self.short_depth
        } else {
            self.long_depth
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub projection: Linear,
    pub layers: Vec<EncoderLayer>,
    pub depth_rule: DepthRule,
}

impl EncoderParams {
    pub fn init(raw_dim: usize, dim: usize, depth_rule: DepthRule, rng: &mut SplitMix64) -> Self {
        let depth = depth_rule.short_depth.max(depth_rule.long_depth);
        Self {
            projection: Linear::init(raw_dim, dim, rng),
            layers: (0..depth).map(|_| EncoderLayer::init(dim, 1, 4 * dim, rng)).collect(),
            depth_rule,
        }
    }

    pub fn raw_dim(&self) -> usize {
        self.projection.fan_in()
    }

    pub fn dim(&self) -> usize {
        self.projection.fan_out()
    }

    pub fn validate(&self) -> Result<()> {
        let need = self.depth_rule.short_depth.max(self.depth_rule.long_depth);
        if self.layers.len() < need {
            return Err(Error::InvalidArgument(format!(
                "encoder has {} layers, depth rule needs {need}",
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Projection, optional positions, then the duration-dependent layer stack.
    /// Returns the output node and the number of layers applied.
    pub fn forward<'a>(
        &'a self,
        tape: &mut Tape<'a>,
        raw: Var,
        duration_s: f64,
        positions: bool,
    ) -> (Var, usize) {
        let mut x = self.projection.forward(tape, raw);
        if positions {
            let (n, d) = tape.value(x).shape();
            let pe = tape.constant_owned(sinusoidal_positions(n, d));
            x = tape.add(x, pe);
        }
        self.forward_layers(tape, x, duration_s)
    }

    pub fn forward_layers<'a>(&'a self, tape: &mut Tape<'a>, mut x: Var, duration_s: f64) -> (Var, usize) {
        let depth = self.depth_rule.depth_for(duration_s);
        for layer in &self.layers[..depth] {
            x = layer.forward(tape, x).0;
        }
        (x, depth)
    }
}

impl ParamSet for EncoderParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        self.projection.collect(&join(prefix, "projection"), out);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect(&join(prefix, &format!("layers.{i}")), out);
        }
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.projection.collect_mut(&join(prefix, "projection"), out);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.collect_mut(&join(prefix, &format!("layers.{i}")), out);
        }
    }
}

/// Contextualized frame features F for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameContextMatrix {
    pub rows: Mat,
    pub source_video: String,
    pub layers_applied: usize,
}

/// Output of a single block together with its attention weights.
#[derive(Debug, Clone)]
pub struct LayerTrace {
    pub output: Mat,
    pub attention: Mat,
}

pub fn project_frames(raw: &Mat, params: &EncoderParams) -> Result<Mat> {
    if raw.cols() != params.raw_dim() {
        return Err(dim_err(format!(
            "raw frames have {} columns, projection expects {}",
            raw.cols(),
            params.raw_dim()
        )));
    }
    let mut tape = Tape::inference();
    let x = tape.constant(raw);
    let y = params.projection.forward(&mut tape, x);
    Ok(tape.value(y).clone())
}

pub fn add_positional(x: &Mat) -> Mat {
    x.zip_map(&sinusoidal_positions(x.rows(), x.cols()), |a, b| a + b)
}

pub fn self_attention_layer(x: &Mat, layer: &EncoderLayer) -> Result<LayerTrace> {
    if x.cols() != layer.attention.dim() {
        return Err(dim_err(format!("layer width {} vs input {}", layer.attention.dim(), x.cols())));
    }
    let mut tape = Tape::inference();
    let xv = tape.constant(x);
    let (out, weights) = layer.forward(&mut tape, xv);
    Ok(LayerTrace { output: tape.value(out).clone(), attention: tape.value(weights[0]).clone() })
}

/// Applies the depth-selected layer stack to already-positioned features.
pub fn encode_temporal(x: &Mat, duration_s: f64, params: &EncoderParams) -> Result<FrameContextMatrix> {
    if !(duration_s >= 0.0) {
        return Err(Error::InvalidArgument(format!("duration {duration_s} must be nonnegative")));
    }
    if x.cols() != params.dim() {
        return Err(dim_err(format!("encoder width {} vs input {}", params.dim(), x.cols())));
    }
    params.validate()?;
    let mut tape = Tape::inference();
    let xv = tape.constant(x);
    let (out, layers_applied) = params.forward_layers(&mut tape, xv, duration_s);
    Ok(FrameContextMatrix { rows: tape.value(out).clone(), source_video: String::new(), layers_applied })
}

/// Full path from raw extractor features: projection, positions, layer stack.
pub fn encode_frames(raw: &Mat, duration_s: f64, params: &EncoderParams) -> Result<FrameContextMatrix> {
    let projected = project_frames(raw, params)?;
    encode_temporal(&add_positional(&projected), duration_s, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(raw_dim: usize, dim: usize, seed: u64) -> EncoderParams {
        EncoderParams::init(raw_dim, dim, DepthRule::default(), &mut SplitMix64::new(seed))
    }

    #[test]
    fn identity_projection_is_passthrough() {
        let mut p = params(3, 3, 1);
        p.projection.weight = Mat::identity(3);
        p.projection.bias = Mat::zeros(1, 3);
        let raw = Mat::gaussian(4, 3, 1.0, &mut SplitMix64::new(2));
        assert_eq!(project_frames(&raw, &p).unwrap(), raw);
    }

    #[test]
    fn zero_input_projects_to_bias() {
        let p = params(5, 3, 1);
        let out = project_frames(&Mat::zeros(2, 5), &p).unwrap();
        for row in out.row_iter() {
            assert_eq!(row, p.projection.bias.data());
        }
    }

    #[test]
    fn projection_matches_triple_loop() {
        let p = params(3, 4, 8);
        let raw = Mat::gaussian(4, 3, 1.0, &mut SplitMix64::new(9));
        let got = project_frames(&raw, &p).unwrap();
        for n in 0..4 {
            for o in 0..4 {
                let mut acc = p.projection.bias[(0, o)];
                for i in 0..3 {
                    acc += raw[(n, i)] * p.projection.weight[(o, i)];
                }
                assert!((got[(n, o)] - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn projection_rejects_wrong_width() {
        let p = params(5, 3, 1);
        let err = project_frames(&Mat::zeros(2, 4), &p).unwrap_err();
        assert_eq!(err.code(), "dimension-mismatch");
    }

    #[test]
    fn positional_row_zero_alternates() {
        let out = add_positional(&Mat::zeros(2, 6));
        assert_eq!(out.row(0), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn positional_row_one_matches_formula() {
        let out = add_positional(&Mat::zeros(2, 4));
        let expected = [1f64.sin(), 1f64.cos(), 0.01f64.sin(), 0.01f64.cos()];
        for (a, b) in out.row(1).iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn positional_offsets_are_bounded() {
        let x = Mat::gaussian(40, 10, 3.0, &mut SplitMix64::new(4));
        let out = add_positional(&x);
        for (a, b) in out.data().iter().zip(x.data()) {
            assert!((a - b).abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn single_frame_attention_is_exactly_one() {
        let p = params(4, 4, 3);
        let x = Mat::gaussian(1, 4, 1.0, &mut SplitMix64::new(5));
        let trace = self_attention_layer(&x, &p.layers[0]).unwrap();
        assert_eq!(trace.attention.data(), &[1.0]);
    }

    #[test]
    fn identical_rows_give_uniform_attention() {
        let p = params(4, 4, 3);
        let row = [0.3, -1.2, 0.7, 2.0];
        let x = Mat::from_rows(&vec![row.to_vec(); 5]);
        let trace = self_attention_layer(&x, &p.layers[1]).unwrap();
        for v in trace.attention.data() {
            assert!((v - 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn depth_rule_boundaries() {
        let p = params(4, 4, 3);
        let x = Mat::gaussian(3, 4, 1.0, &mut SplitMix64::new(6));
        assert_eq!(encode_temporal(&x, 59.9, &p).unwrap().layers_applied, 3);
        assert_eq!(encode_temporal(&x, 60.0, &p).unwrap().layers_applied, 3);
        assert_eq!(encode_temporal(&x, 61.0, &p).unwrap().layers_applied, 5);
    }

    #[test]
    fn negative_duration_rejected() {
        let p = params(4, 4, 3);
        assert!(encode_temporal(&Mat::zeros(2, 4), -1.0, &p).is_err());
    }
}
