//! Frame scoring and K-frame selection.
//!
//! Inference uses exact top-k with lowest-index tie-breaking. Training uses a
//! tempered relaxation: K softmax rows over the frame scores, where each row
//! suppresses the frames already claimed by earlier rows. The suppression
//! pattern is treated as constant, so gradients flow through the softmax
//! values only.

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::layers::{join, FeedForward, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::{softmax, Mat};

pub const DEFAULT_INITIAL_TEMPERATURE: f64 = 5.0;
pub const DEFAULT_TEMPERATURE_DECAY: f64 = 0.045;

/// Additive logit penalty for claimed frames.
const SUPPRESSION: f64 = -1e30;

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerParams {
    /// Logit head on the contextualized frame features.
    pub frame_head: FeedForward,
    /// Relevance head on the fused features; squashed by a sigmoid.
    pub fused_head: FeedForward,
}

impl ScorerParams {
    pub fn init(dim: usize, hidden: usize, rng: &mut SplitMix64) -> Self {
        Self {
            frame_head: FeedForward::init(dim, hidden, 1, rng),
            fused_head: FeedForward::init(dim, hidden, 1, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.frame_head.hidden.fan_in()
    }

    pub fn hidden(&self) -> usize {
        self.frame_head.hidden.fan_out()
    }

    /// Final frame scores `logit ⊙ σ(relevance)`, N×1.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, frames: Var, fused: Var) -> Var {
        let logits = self.frame_head.forward(tape, frames);
        let rel = self.fused_head.forward(tape, fused);
        let rel = tape.sigmoid(rel);
        tape.mul(logits, rel)
    }
}

impl ParamSet for ScorerParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        self.frame_head.collect(&join(prefix, "frame_head"), out);
        self.fused_head.collect(&join(prefix, "fused_head"), out);
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.frame_head.collect_mut(&join(prefix, "frame_head"), out);
        self.fused_head.collect_mut(&join(prefix, "fused_head"), out);
    }
}

/// K frames chosen for aggregation.
#[derive(Debug, Clone, PartialEq)]
pub struct SelectedFrames {
    /// Ascending frame indices.
    pub indices: Vec<usize>,
    /// Saliency weights aligned with `indices`; positive, summing to one.
    pub alpha: Vec<f64>,
    pub scores_all: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftSelection {
    /// K×N, row-stochastic.
    pub weights: Mat,
    pub temperature: f64,
    /// Frame claimed by each row, in row order.
    pub claimed: Vec<usize>,
}

pub fn frame_scores(frames: &Mat, fused: &Mat, params: &ScorerParams) -> Result<Vec<f64>> {
    if frames.shape() != fused.shape() {
        return Err(dim_err(format!("frames {:?} vs fused {:?}", frames.shape(), fused.shape())));
    }
    if frames.cols() != params.dim() || params.fused_head.hidden.fan_in() != params.dim() {
        return Err(dim_err(format!("scorer width {} vs features {}", params.dim(), frames.cols())));
    }
    let mut tape = Tape::inference();
    let f = tape.constant(frames);
    let y = tape.constant(fused);
    let s = params.forward(&mut tape, f, y);
    Ok(tape.value(s).data().to_vec())
}

/// Indices of the K largest scores (lower index wins ties), ascending.
pub fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut chosen = order[..k.min(order.len())].to_vec();
    chosen.sort_unstable();
    chosen
}

fn check_k(k: usize, n: usize) -> Result<()> {
    if k == 0 || k > n {
        return Err(Error::InvalidArgument(format!("K = {k} must lie in 1..={n}")));
    }
    Ok(())
}

pub fn topk_infer(scores: &[f64], k: usize) -> Result<SelectedFrames> {
    check_k(k, scores.len())?;
    let indices = top_k_indices(scores, k);
    let picked: Vec<f64> = indices.iter().map(|&i| scores[i]).collect();
    Ok(SelectedFrames { alpha: softmax(&picked), indices, scores_all: scores.to_vec() })
}

fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Suppression mask (K×N) and claim order for the relaxed selection.
fn suppression_pattern(scores: &[f64], k: usize, temperature: f64) -> (Mat, Vec<usize>) {
    let n = scores.len();
    let inv = 1.0 / temperature;
    let mut mask = Mat::zeros(k, n);
    let mut claimed = Vec::with_capacity(k);
    let mut penalty = vec![0.0; n];
    for r in 0..k {
        mask.row_mut(r).copy_from_slice(&penalty);
        let logits: Vec<f64> = scores.iter().zip(&penalty).map(|(s, p)| s * inv + p).collect();
        let pick = argmax_lowest(&softmax(&logits));
        claimed.push(pick);
        penalty[pick] = SUPPRESSION;
    }
    (mask, claimed)
}

/// Relaxed selection on the tape. `scores` is N×1; returns the K×N weights
/// node and the claim order.
pub fn hard_topk_graph(tape: &mut Tape<'_>, scores: Var, k: usize, temperature: f64) -> (Var, Vec<usize>) {
    let (mask, claimed) = suppression_pattern(tape.value(scores).data(), k, temperature);
    let row = tape.transpose(scores);
    let tiled = tape.repeat_rows(row, k);
    let tempered = tape.scale(tiled, 1.0 / temperature);
    let mask = tape.constant_owned(mask);
    let logits = tape.add(tempered, mask);
    (tape.softmax_rows(logits), claimed)
}

pub fn hard_topk_train(scores: &[f64], k: usize, temperature: f64) -> Result<SoftSelection> {
    check_k(k, scores.len())?;
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::InvalidArgument(format!("temperature {temperature} must be positive")));
    }
    let s = Mat::column_vector(scores);
    let mut tape = Tape::inference();
    let sv = tape.constant(&s);
    let (w, claimed) = hard_topk_graph(&mut tape, sv, k, temperature);
    Ok(SoftSelection { weights: tape.value(w).clone(), temperature, claimed })
}

/// Training-path selection: soft mixtures of teacher frame rows and their
/// saliency weights. Returns (K×D selected features, K×1 α).
pub fn soft_select_graph(
    tape: &mut Tape<'_>,
    scores: Var,
    teacher_frames: Var,
    k: usize,
    temperature: f64,
) -> (Var, Var) {
    let (weights, _) = hard_topk_graph(tape, scores, k, temperature);
    let selected = tape.matmul(weights, teacher_frames);
    let expected = tape.matmul(weights, scores);
    let row = tape.transpose(expected);
    let alpha = tape.softmax_rows(row);
    (selected, tape.transpose(alpha))
}

/// τ(step) = τ₀ · exp(−decay · step).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSchedule {
    pub initial: f64,
    pub decay: f64,
}

impl Default for TemperatureSchedule {
    fn default() -> Self {
        Self { initial: DEFAULT_INITIAL_TEMPERATURE, decay: DEFAULT_TEMPERATURE_DECAY }
    }
}

impl TemperatureSchedule {
    pub fn at(&self, step: u64) -> f64 {
        self.initial * (-self.decay * step as f64).exp()
    }
}

pub fn anneal_temperature(step: u64) -> f64 {
    TemperatureSchedule::default().at(step)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Linear;
    use crate::tensor::sigmoid;

    fn constant_head(dim: usize, hidden: usize, bias: f64) -> FeedForward {
        let mut out = Linear::zeros(hidden, 1);
        out.bias = Mat::filled(1, 1, bias);
        FeedForward { hidden: Linear::zeros(dim, hidden), out }
    }

    #[test]
    fn constant_heads_give_half() {
        let params = ScorerParams { frame_head: constant_head(3, 4, 1.0), fused_head: constant_head(3, 4, 0.0) };
        let f = Mat::gaussian(5, 3, 1.0, &mut SplitMix64::new(1));
        let scores = frame_scores(&f, &f, &params).unwrap();
        assert!(scores.iter().all(|&s| s == 0.5));
    }

    #[test]
    fn saturated_relevance_returns_logits() {
        let mut params = ScorerParams::init(3, 4, &mut SplitMix64::new(2));
        params.fused_head = constant_head(3, 4, 50.0);
        let f = Mat::gaussian(5, 3, 1.0, &mut SplitMix64::new(3));
        let scores = frame_scores(&f, &f, &params).unwrap();
        let logits = {
            let mut tape = Tape::inference();
            let fv = tape.constant(&f);
            let l = params.frame_head.forward(&mut tape, fv);
            tape.value(l).data().to_vec()
        };
        for (s, l) in scores.iter().zip(&logits) {
            assert!((s - l).abs() < 1e-6);
        }
    }

    #[test]
    fn scores_match_reference_quick_gelu_perceptrons() {
        let params = ScorerParams::init(3, 5, &mut SplitMix64::new(4));
        let f = Mat::gaussian(4, 3, 1.0, &mut SplitMix64::new(5));
        let y = Mat::gaussian(4, 3, 1.0, &mut SplitMix64::new(6));
        let scores = frame_scores(&f, &y, &params).unwrap();
        let mlp = |head: &FeedForward, x: &[f64]| {
            let mut out = head.out.bias[(0, 0)];
            for h in 0..5 {
                let mut pre = head.hidden.bias[(0, h)];
                for (i, xi) in x.iter().enumerate() {
                    pre += head.hidden.weight[(h, i)] * xi;
                }
                out += head.out.weight[(0, h)] * pre * sigmoid(1.702 * pre);
            }
            out
        };
        for n in 0..4 {
            let expected = mlp(&params.frame_head, f.row(n)) * sigmoid(mlp(&params.fused_head, y.row(n)));
            assert!((scores[n] - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn topk_examples() {
        let sel = topk_infer(&[0.1, 0.9, 0.5], 2).unwrap();
        assert_eq!(sel.indices, vec![1, 2]);
        let e = (0.4f64).exp();
        assert!((sel.alpha[0] - e / (e + 1.0)).abs() < 1e-12);
        assert!((sel.alpha[0] - 0.599).abs() < 1e-3);

        let sel = topk_infer(&[0.3; 4], 2).unwrap();
        assert_eq!(sel.indices, vec![0, 1]);
        assert_eq!(sel.alpha, vec![0.5, 0.5]);

        let scores = [0.2, -1.0, 0.7];
        let sel = topk_infer(&scores, 3).unwrap();
        assert_eq!(sel.indices, vec![0, 1, 2]);
        assert_eq!(sel.alpha, softmax(&scores));

        assert!(topk_infer(&scores, 4).is_err());
        assert!(topk_infer(&scores, 0).is_err());
    }

    #[test]
    fn relaxed_selection_limits() {
        let sel = hard_topk_train(&[0.1, 0.9, 0.5], 2, 1e-4).unwrap();
        assert!((sel.weights[(0, 1)] - 1.0).abs() < 1e-6);
        assert!((sel.weights[(1, 2)] - 1.0).abs() < 1e-6);
        let mut claimed = sel.claimed.clone();
        claimed.sort_unstable();
        assert_eq!(claimed, topk_infer(&[0.1, 0.9, 0.5], 2).unwrap().indices);

        let flat = hard_topk_train(&[0.1, 0.9, 0.5], 1, 1e4).unwrap();
        for v in flat.weights.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-3);
        }

        assert!(hard_topk_train(&[0.1], 1, 0.0).is_err());
        assert!(hard_topk_train(&[0.1], 2, 1.0).is_err());
    }

    #[test]
    fn temperature_schedule() {
        assert_eq!(anneal_temperature(0), 5.0);
        assert!((anneal_temperature(10) - 5.0 * (-0.45f64).exp()).abs() < 1e-15);
        for step in 0..500 {
            assert!(anneal_temperature(step + 1) < anneal_temperature(step));
        }
    }
}
