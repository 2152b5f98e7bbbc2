//! Parameterized building blocks shared by the encoders.

use crate::autodiff::{Tape, Var};
use crate::rng::SplitMix64;
use crate::tensor::Mat;

/// Anything holding named trainable tensors in a fixed order.
pub trait ParamSet {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>);
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>);

    fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        self.collect("", &mut out);
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Mat)> {
        let mut out = Vec::new();
        self.collect_mut("", &mut out);
        out
    }

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.len()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Affine map `x · Wᵀ + b` with `W` stored out×in.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Mat,
    pub bias: Mat,
}

impl Linear {
    /// Uniform init in ±1/√fan_in.
    pub fn init(fan_in: usize, fan_out: usize, rng: &mut SplitMix64) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            weight: Mat::uniform(fan_out, fan_in, bound, rng),
            bias: Mat::uniform(1, fan_out, bound, rng),
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Mat::zeros(fan_out, fan_in), bias: Mat::zeros(1, fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.cols()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Var {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        let xw = tape.matmul_t(x, w);
        tape.add_row(xw, b)
    }
}

impl ParamSet for Linear {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        out.push((join(prefix, "weight"), &self.weight));
        out.push((join(prefix, "bias"), &self.bias));
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        out.push((join(prefix, "weight"), &mut self.weight));
        out.push((join(prefix, "bias"), &mut self.bias));
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Mat,
    pub beta: Mat,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        Self { gamma: Mat::filled(1, dim, 1.0), beta: Mat::zeros(1, dim) }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Var {
        let g = tape.param(&self.gamma);
        let b = tape.param(&self.beta);
        tape.layer_norm(x, g, b)
    }
}

impl ParamSet for LayerNorm {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        out.push((join(prefix, "gamma"), &self.gamma));
        out.push((join(prefix, "beta"), &self.beta));
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        out.push((join(prefix, "gamma"), &mut self.gamma));
        out.push((join(prefix, "beta"), &mut self.beta));
    }
}

/// Scaled dot-product self-attention with `heads` equal-width heads.
///
/// The key projection has no bias: a key bias shifts every logit of a softmax
/// row by the same amount and never changes the output.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub query: Linear,
    pub key: Mat,
    pub value: Linear,
    pub output: Linear,
    pub heads: usize,
}

impl SelfAttention {
    pub fn init(dim: usize, heads: usize, rng: &mut SplitMix64) -> Self {
        assert!(heads >= 1 && dim.is_multiple_of(heads), "head count {heads} must divide width {dim}");
        Self {
            query: Linear::init(dim, dim, rng),
            key: Mat::uniform(dim, dim, 1.0 / (dim as f64).sqrt(), rng),
            value: Linear::init(dim, dim, rng),
            output: Linear::init(dim, dim, rng),
            heads,
        }
    }

    pub fn dim(&self) -> usize {
        self.query.fan_out()
    }

    /// Returns the projected output and one N×N weight matrix per head.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> (Var, Vec<Var>) {
        let q = self.query.forward(tape, x);
        let key = tape.param(&self.key);
        let k = tape.matmul_t(x, key);
        let v = self.value.forward(tape, x);
        let head_dim = self.dim() / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                let start = h * head_dim;
                (
                    tape.slice_cols(q, start, head_dim),
                    tape.slice_cols(k, start, head_dim),
                    tape.slice_cols(v, start, head_dim),
                )
            };
            let logits = tape.matmul_t(qh, kh);
            let logits = tape.scale(logits, scale);
            let attn = tape.softmax_rows(logits);
            outs.push(tape.matmul(attn, vh));
            weights.push(attn);
        }
        let merged = if outs.len() == 1 { outs[0] } else { tape.concat_cols(&outs) };
        (self.output.forward(tape, merged), weights)
    }
}

impl ParamSet for SelfAttention {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        self.query.collect(&join(prefix, "query"), out);
        out.push((join(prefix, "key.weight"), &self.key));
        self.value.collect(&join(prefix, "value"), out);
        self.output.collect(&join(prefix, "output"), out);
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.query.collect_mut(&join(prefix, "query"), out);
        out.push((join(prefix, "key.weight"), &mut self.key));
        self.value.collect_mut(&join(prefix, "value"), out);
        self.output.collect_mut(&join(prefix, "output"), out);
    }
}

/// Two-layer perceptron with a sigmoid-GELU between the layers.
#[derive(Debug, Clone, PartialEq)]
pub struct FeedForward {
    pub hidden: Linear,
    pub out: Linear,
}

impl FeedForward {
    pub fn init(dim_in: usize, hidden: usize, dim_out: usize, rng: &mut SplitMix64) -> Self {
        Self { hidden: Linear::init(dim_in, hidden, rng), out: Linear::init(hidden, dim_out, rng) }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Var {
        let h = self.hidden.forward(tape, x);
        let h = quick_gelu(tape, h);
        self.out.forward(tape, h)
    }
}

impl ParamSet for FeedForward {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        self.hidden.collect(&join(prefix, "hidden"), out);
        self.out.collect(&join(prefix, "out"), out);
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.hidden.collect_mut(&join(prefix, "hidden"), out);
        self.out.collect_mut(&join(prefix, "out"), out);
    }
}

/// `x·σ(1.702x)`, the smooth GELU approximation used by CLIP encoders.
pub fn quick_gelu(tape: &mut Tape<'_>, x: Var) -> Var {
    let sharp = tape.scale(x, 1.702);
    let gate = tape.sigmoid(sharp);
    tape.mul(x, gate)
}

/// Pre-norm residual block: `y = x + Attn(LN(x))`, `z = y + FFN(LN(y))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub norm_attn: LayerNorm,
    pub attention: SelfAttention,
    pub norm_ffn: LayerNorm,
    pub ffn: FeedForward,
}

impl EncoderLayer {
    pub fn init(dim: usize, heads: usize, ffn_hidden: usize, rng: &mut SplitMix64) -> Self {
        Self {
            norm_attn: LayerNorm::new(dim),
            attention: SelfAttention::init(dim, heads, rng),
            norm_ffn: LayerNorm::new(dim),
            ffn: FeedForward::init(dim, ffn_hidden, dim, rng),
        }
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> (Var, Vec<Var>) {
        let normed = self.norm_attn.forward(tape, x);
        let (attended, weights) = self.attention.forward(tape, normed);
        let y = tape.add(x, attended);
        let normed = self.norm_ffn.forward(tape, y);
        let fed = self.ffn.forward(tape, normed);
        (tape.add(y, fed), weights)
    }
}

impl ParamSet for EncoderLayer {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        self.norm_attn.collect(&join(prefix, "norm_attn"), out);
        self.attention.collect(&join(prefix, "attention"), out);
        self.norm_ffn.collect(&join(prefix, "norm_ffn"), out);
        self.ffn.collect(&join(prefix, "ffn"), out);
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.norm_attn.collect_mut(&join(prefix, "norm_attn"), out);
        self.attention.collect_mut(&join(prefix, "attention"), out);
        self.norm_ffn.collect_mut(&join(prefix, "norm_ffn"), out);
        self.ffn.collect_mut(&join(prefix, "ffn"), out);
    }
}

/// Sinusoidal table: `PE(n, 2i) = sin(n / 10000^(2i/D))`, `PE(n, 2i+1) = cos(...)`.
pub fn sinusoidal_positions(rows: usize, dim: usize) -> Mat {
    let mut pe = Mat::zeros(rows, dim);
    for n in 0..rows {
        for j in 0..dim {
            let pair = (j / 2) * 2;
            let angle = n as f64 / 10000f64.powf(pair as f64 / dim as f64);
            pe[(n, j)] = if j % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    pe
}
