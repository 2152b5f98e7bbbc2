//! Stage-1 coarse filtering.
//!
//! A three-layer multi-head encoder distills contextualized frame features
//! into one unit-norm video embedding φ(v) aligned with the teacher's video
//! space. Videos are ranked by cosine(φ(v), sentence) and the top k% survive.

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::layers::{join, sinusoidal_positions, EncoderLayer, Linear, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::{dot, norm, Mat};

pub const DISTILL_LAYERS: usize = 3;
pub const DISTILL_HEADS: usize = 8;
pub const DISTILL_FFN: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct DistillParams {
    pub input: Linear,
    pub layers: Vec<EncoderLayer>,
}

impl DistillParams {
    pub fn init(dim: usize, rng: &mut SplitMix64) -> Self {
        Self::init_with(dim, DISTILL_HEADS, DISTILL_FFN, rng)
    }

    pub fn init_with(dim: usize, heads: usize, ffn_hidden: usize, rng: &mut SplitMix64) -> Self {
        Self {
            input: Linear::init(dim, dim, rng),
            layers: (0..DISTILL_LAYERS).map(|_| EncoderLayer::init(dim, heads, ffn_hidden, rng)).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.input.fan_out()
    }

    pub fn heads(&self) -> usize {
        self.layers.first().map_or(1, |l| l.attention.heads)
    }

    pub fn ffn_hidden(&self) -> usize {
        self.layers.first().map_or(0, |l| l.ffn.hidden.fan_out())
    }

    /// Encoded frames pooled by mean, before normalization (1×D).
    pub fn pooled<'a>(&'a self, tape: &mut Tape<'a>, frames: Var) -> Var {
        let mut x = self.input.forward(tape, frames);
        let (n, d) = tape.value(x).shape();
        let pe = tape.constant_owned(sinusoidal_positions(n, d));
        x = tape.add(x, pe);
        for layer in &self.layers {
            x = layer.forward(tape, x).0;
        }
        tape.mean_rows(x)
    }

    /// Unit-norm φ(v), 1×D.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, frames: Var) -> Var {
        let pooled = self.pooled(tape, frames);
        tape.normalize_rows(pooled)
    }
}

impl ParamSet for DistillParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        self.input.collect(&join(prefix, "input"), out);
        for (i, layer) in self.layers.iter().enumerate() {
            layer.collect(&join(prefix, &format!("layers.{i}")), out);
        }
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.input.collect_mut(&join(prefix, "input"), out);
        for (i, layer) in self.layers.iter_mut().enumerate() {
            layer.collect_mut(&join(prefix, &format!("layers.{i}")), out);
        }
    }
}

pub fn distill_forward(frame_context: &Mat, params: &DistillParams) -> Result<Vec<f64>> {
    if frame_context.cols() != params.dim() {
        return Err(dim_err(format!("distill width {} vs input {}", params.dim(), frame_context.cols())));
    }
    if frame_context.rows() == 0 {
        return Err(dim_err("distill input has no frames"));
    }
    let mut tape = Tape::inference();
    let f = tape.constant(frame_context);
    let out = params.forward(&mut tape, f);
    Ok(tape.value(out).data().to_vec())
}

/// Squared Euclidean distance between a student and teacher embedding.
pub fn mse_distill_loss(student: &[f64], teacher: &[f64]) -> Result<f64> {
    mse_distill_batch(&[(student, teacher)])
}

/// Mean over pairs of squared Euclidean distance.
pub fn mse_distill_batch(pairs: &[(&[f64], &[f64])]) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("empty distillation batch".into()));
    }
    let mut total = 0.0;
    for (s, t) in pairs {
        if s.len() != t.len() {
            return Err(dim_err(format!("student dim {} vs teacher dim {}", s.len(), t.len())));
        }
        total += s.iter().zip(*t).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok(total / pairs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    /// Descending by coarse score.
    pub video_ids: Vec<String>,
    pub coarse_scores: Vec<f64>,
    pub k_percent: f64,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.video_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.video_ids.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.video_ids.iter().any(|v| v == id)
    }
}

/// ⌈k/100 · M⌉, clamped to [1, M].
pub fn retained_count(k_percent: f64, corpus_size: usize) -> usize {
    let raw = (k_percent * corpus_size as f64 / 100.0).ceil();
    (raw as usize).clamp(1, corpus_size.max(1))
}

pub fn check_k_percent(k_percent: f64) -> Result<()> {
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidArgument(format!("k_percent {k_percent} must lie in (0, 100]")));
    }
    Ok(())
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        0.0
    } else {
        dot(a, b) / denom
    }
}

/// Positions into `ids` sorted by descending score, ties by ascending id.
pub fn rank_descending(ids: &[&str], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..ids.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then_with(|| ids[a].cmp(ids[b])));
    order
}

pub fn prune_candidates<'a, I>(query_sentence: &[f64], distilled: I, k_percent: f64) -> Result<CandidateSet>
where
    I: IntoIterator<Item = (&'a str, &'a [f64])>,
{
    check_k_percent(k_percent)?;
    let mut ids = Vec::new();
    let mut scores = Vec::new();
    for (id, emb) in distilled {
        if emb.len() != query_sentence.len() {
            return Err(dim_err(format!("video {id}: embedding dim {} vs query {}", emb.len(), query_sentence.len())));
        }
        ids.push(id);
        scores.push(cosine(emb, query_sentence));
    }
    if ids.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let order = rank_descending(&ids, &scores);
    let keep = retained_count(k_percent, ids.len());
    Ok(CandidateSet {
        video_ids: order[..keep].iter().map(|&i| ids[i].to_string()).collect(),
        coarse_scores: order[..keep].iter().map(|&i| scores[i]).collect(),
        k_percent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn output_is_unit_norm() {
        let params = DistillParams::init(8, &mut SplitMix64::new(1));
        let mut rng = SplitMix64::new(2);
        for _ in 0..100 {
            let n = rng.range_inclusive(1, 6);
            let x = Mat::gaussian(n, 8, 2.0, &mut rng);
            let v = distill_forward(&x, &params).unwrap();
            assert!((norm(&v) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn single_frame_pooling_is_identity() {
        let params = DistillParams::init(8, &mut SplitMix64::new(1));
        let x = Mat::gaussian(1, 8, 1.0, &mut SplitMix64::new(3));
        let mut tape = Tape::inference();
        let f = tape.constant(&x);
        let pooled = params.pooled(&mut tape, f);
        let pooled = tape.value(pooled).clone();

        let mut tape = Tape::inference();
        let f = tape.constant(&x);
        let mut h = params.input.forward(&mut tape, f);
        let pe = tape.constant_owned(sinusoidal_positions(1, 8));
        h = tape.add(h, pe);
        for layer in &params.layers {
            h = layer.forward(&mut tape, h).0;
        }
        assert_eq!(tape.value(h), &pooled);
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse_distill_loss(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
        assert_eq!(mse_distill_loss(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 2.0);
        let a = [[0.1, 0.2], [0.5, -0.5], [1.0, 2.0]];
        let b = [[0.0, 0.0], [0.5, 0.5], [-1.0, 2.5]];
        let pairs: Vec<(&[f64], &[f64])> = a.iter().zip(&b).map(|(x, y)| (&x[..], &y[..])).collect();
        let expected = ((0.01 + 0.04) + (0.0 + 1.0) + (4.0 + 0.25)) / 3.0;
        assert!((mse_distill_batch(&pairs).unwrap() - expected).abs() < 1e-15);
        assert!(mse_distill_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn retained_counts() {
        assert_eq!(retained_count(50.0, 1000), 500);
        assert_eq!(retained_count(100.0, 7), 7);
        assert_eq!(retained_count(10.0, 10), 1);
        assert_eq!(retained_count(0.01, 10), 1);
        for k in [100.0, 90.0, 80.0, 70.0, 60.0, 50.0, 40.0, 30.0, 20.0, 10.0, 5.0] {
            assert_eq!(retained_count(k, 1000), (k as usize) * 10);
        }
    }

    #[test]
    fn prune_orders_and_breaks_ties_by_id() {
        let vecs = [
            ("b", vec![1.0, 0.0]),
            ("a", vec![1.0, 0.0]),
            ("c", vec![0.0, 1.0]),
        ];
        let set = prune_candidates(&[1.0, 0.0], vecs.iter().map(|(i, v)| (*i, v.as_slice())), 100.0).unwrap();
        assert_eq!(set.video_ids, vec!["a", "b", "c"]);
        let set = prune_candidates(&[1.0, 0.0], vecs.iter().map(|(i, v)| (*i, v.as_slice())), 30.0).unwrap();
        assert_eq!(set.video_ids, vec!["a"]);
    }

    #[test]
    fn prune_rejects_bad_input() {
        let none: Vec<(&str, &[f64])> = Vec::new();
        assert_eq!(prune_candidates(&[1.0], none, 50.0).unwrap_err().code(), "empty-corpus");
        let one = [("a", vec![1.0])];
        let it = || one.iter().map(|(i, v)| (*i, v.as_slice()));
        assert!(prune_candidates(&[1.0], it(), 0.0).is_err());
        assert!(prune_candidates(&[1.0], it(), 100.5).is_err());
    }
}
