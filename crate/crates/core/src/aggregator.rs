//! Stage-2 video embedding: α-weighted teacher frame features pass through a
//! single-head self-attention layer with LayerNorm, then mean pooling and
//! unit normalization.

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Error, Result};
use crate::layers::{join, LayerNorm, ParamSet, SelfAttention};
use crate::rng::SplitMix64;
use crate::tensor::{dot, norm, Mat};

#[derive(Debug, Clone, PartialEq)]
pub struct AggregatorParams {
    pub attention: SelfAttention,
    pub norm: LayerNorm,
}

impl AggregatorParams {
    pub fn init(dim: usize, rng: &mut SplitMix64) -> Self {
        Self { attention: SelfAttention::init(dim, 1, rng), norm: LayerNorm::new(dim) }
    }

    pub fn dim(&self) -> usize {
        self.attention.dim()
    }

    /// `LN(x + Attn(x))` for K×D input; returns (encoded, attention weights).
    pub fn encode<'a>(&'a self, tape: &mut Tape<'a>, weighted: Var) -> (Var, Var) {
        let (attended, weights) = self.attention.forward(tape, weighted);
        let residual = tape.add(weighted, attended);
        (self.norm.forward(tape, residual), weights[0])
    }

    /// Unit-norm video embedding, 1×D.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, weighted: Var) -> Var {
        let (encoded, _) = self.encode(tape, weighted);
        let pooled = tape.mean_rows(encoded);
        tape.normalize_rows(pooled)
    }
}

impl ParamSet for AggregatorParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        self.attention.collect(&join(prefix, "attention"), out);
        self.norm.collect(&join(prefix, "norm"), out);
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.attention.collect_mut(&join(prefix, "attention"), out);
        self.norm.collect_mut(&join(prefix, "norm"), out);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoEmbedding {
    pub v: Vec<f64>,
}

pub fn weight_frames(selected: &Mat, alpha: &[f64]) -> Result<Mat> {
    if selected.rows() != alpha.len() {
        return Err(dim_err(format!("{} selected rows vs {} weights", selected.rows(), alpha.len())));
    }
    let mut out = selected.clone();
    for (k, &a) in alpha.iter().enumerate() {
        for x in out.row_mut(k) {
            *x *= a;
        }
    }
    Ok(out)
}

pub fn aggregate_video(weighted: &Mat, params: &AggregatorParams) -> Result<VideoEmbedding> {
    if weighted.rows() == 0 {
        return Err(dim_err("aggregation needs at least one frame"));
    }
    if weighted.cols() != params.dim() {
        return Err(dim_err(format!("aggregator width {} vs input {}", params.dim(), weighted.cols())));
    }
    let mut tape = Tape::inference();
    let x = tape.constant(weighted);
    let v = params.forward(&mut tape, x);
    Ok(VideoEmbedding { v: tape.value(v).data().to_vec() })
}

pub fn cosine_similarity(v: &[f64], t: &[f64]) -> Result<f64> {
    if v.len() != t.len() {
        return Err(dim_err(format!("vector dims {} vs {}", v.len(), t.len())));
    }
    let (nv, nt) = (norm(v), norm(t));
    if nv == 0.0 || nt == 0.0 {
        return Err(Error::ZeroVector("cosine similarity of a zero vector".into()));
    }
    Ok((dot(v, t) / (nv * nt)).clamp(-1.0, 1.0))
}
