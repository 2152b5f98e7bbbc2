//! Word- and sentence-aware cross attention over frames, fused by a learned
//! per-frame gate.
//!
//! Both attention paths reweight each frame row by a scalar score: the word
//! path uses the mean over words of the per-word softmax over frames (left
//! un-renormalized), the sentence path uses a single softmax over frames.

use crate::autodiff::{Tape, Var};
use crate::error::{dim_err, Result};
use crate::layers::{join, Linear, ParamSet};
use crate::rng::SplitMix64;
use crate::tensor::Mat;

/// Two-layer gate `g = σ(ReLU(x·W1ᵀ + b1)·W2ᵀ + b2)` on concatenated
/// `[W_o; S_o]` rows. `hidden` holds W1 (D×2D) and b1, `out` holds W2 (1×D)
/// and b2.
#[derive(Debug, Clone, PartialEq)]
pub struct GateParams {
    pub hidden: Linear,
    pub out: Linear,
}

impl GateParams {
    pub fn init(dim: usize, rng: &mut SplitMix64) -> Self {
        Self { hidden: Linear::init(2 * dim, dim, rng), out: Linear::init(dim, 1, rng) }
    }

    pub fn dim(&self) -> usize {
        self.hidden.fan_out()
    }

    fn check(&self, dim: usize) -> Result<()> {
        if self.hidden.fan_in() != 2 * dim || self.hidden.fan_out() != dim || self.out.fan_in() != dim || self.out.fan_out() != 1 {
            return Err(dim_err(format!("gate parameters do not match feature width {dim}")));
        }
        Ok(())
    }

    /// Gate values, N×1.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, word_out: Var, sentence_out: Var) -> Var {
        let x = tape.concat_cols(&[word_out, sentence_out]);
        let h = self.hidden.forward(tape, x);
        let h = tape.relu(h);
        let logit = self.out.forward(tape, h);
        tape.sigmoid(logit)
    }
}

impl ParamSet for GateParams {
    fn collect<'a>(&'a self, prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        self.hidden.collect(&join(prefix, "hidden"), out);
        self.out.collect(&join(prefix, "out"), out);
    }
    fn collect_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.hidden.collect_mut(&join(prefix, "hidden"), out);
        self.out.collect_mut(&join(prefix, "out"), out);
    }
}

/// Graph handles for one prompt-attention pass.
#[derive(Debug, Clone, Copy)]
pub struct FusionVars {
    /// W×N word-to-frame attention.
    pub word_attention: Var,
    /// N×1 mean word scores.
    pub word_scores: Var,
    /// N×1 sentence softmax scores.
    pub sentence_scores: Var,
    pub word_out: Var,
    pub sentence_out: Var,
    /// N×1 gate values.
    pub gate: Var,
    pub fused: Var,
}

/// Returns (attention W×N, scores N×1, reweighted frames N×D).
pub fn word_attention_graph(tape: &mut Tape<'_>, words: Var, frames: Var) -> (Var, Var, Var) {
    let d = tape.value(frames).cols();
    let logits = tape.matmul_t(words, frames);
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let attention = tape.softmax_rows(logits);
    let mean = tape.mean_rows(attention);
    let scores = tape.transpose(mean);
    let out = tape.scale_rows(frames, scores);
    (attention, scores, out)
}

/// Returns (scores N×1, reweighted frames N×D). `sentence` is 1×D.
pub fn sentence_attention_graph(tape: &mut Tape<'_>, sentence: Var, frames: Var) -> (Var, Var) {
    let d = tape.value(frames).cols();
    let logits = tape.matmul_t(sentence, frames);
    let logits = tape.scale(logits, 1.0 / (d as f64).sqrt());
    let probs = tape.softmax_rows(logits);
    let scores = tape.transpose(probs);
    let out = tape.scale_rows(frames, scores);
    (scores, out)
}

/// `y = g ⊙ W_o + (1 − g) ⊙ S_o`, gate broadcast across features.
pub fn blend_graph(tape: &mut Tape<'_>, gate: Var, word_out: Var, sentence_out: Var) -> Var {
    let from_words = tape.scale_rows(word_out, gate);
    let neg = tape.scale(gate, -1.0);
    let complement = tape.add_scalar(neg, 1.0);
    let from_sentence = tape.scale_rows(sentence_out, complement);
    tape.add(from_words, from_sentence)
}

/// Full prompt-attention pass on the tape.
pub fn fuse_graph<'a>(
    tape: &mut Tape<'a>,
    gate: &'a GateParams,
    words: Var,
    sentence: Var,
    frames: Var,
) -> FusionVars {
    let (word_attention, word_scores, word_out) = word_attention_graph(tape, words, frames);
    let (sentence_scores, sentence_out) = sentence_attention_graph(tape, sentence, frames);
    let g = gate.forward(tape, word_out, sentence_out);
    let fused = blend_graph(tape, g, word_out, sentence_out);
    FusionVars { word_attention, word_scores, sentence_scores, word_out, sentence_out, gate: g, fused }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordAttention {
    /// W×N, each row a softmax over frames.
    pub attention: Mat,
    pub scores: Vec<f64>,
    pub reweighted: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SentenceAttention {
    pub scores: Vec<f64>,
    pub reweighted: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FusionOutput {
    pub y: Mat,
    pub g: Vec<f64>,
    pub word_scores: Vec<f64>,
    pub sentence_scores: Vec<f64>,
    pub word_out: Mat,
    pub sentence_out: Mat,
}

pub fn word_cross_attention(words: &Mat, frames: &Mat) -> Result<WordAttention> {
    if words.cols() != frames.cols() {
        return Err(dim_err(format!("words width {} vs frames width {}", words.cols(), frames.cols())));
    }
    let mut tape = Tape::inference();
    let w = tape.constant(words);
    let f = tape.constant(frames);
    let (attention, scores, out) = word_attention_graph(&mut tape, w, f);
    Ok(WordAttention {
        attention: tape.value(attention).clone(),
        scores: tape.value(scores).data().to_vec(),
        reweighted: tape.value(out).clone(),
    })
}

pub fn sentence_cross_attention(sentence: &[f64], frames: &Mat) -> Result<SentenceAttention> {
    if sentence.len() != frames.cols() {
        return Err(dim_err(format!("sentence width {} vs frames width {}", sentence.len(), frames.cols())));
    }
    let s = Mat::row_vector(sentence);
    let mut tape = Tape::inference();
    let sv = tape.constant(&s);
    let f = tape.constant(frames);
    let (scores, out) = sentence_attention_graph(&mut tape, sv, f);
    Ok(SentenceAttention { scores: tape.value(scores).data().to_vec(), reweighted: tape.value(out).clone() })
}

/// Gate and blend already-reweighted frame features. Score fields of the
/// returned output are left empty.
pub fn gated_fusion(word_out: &Mat, sentence_out: &Mat, params: &GateParams) -> Result<FusionOutput> {
    if word_out.shape() != sentence_out.shape() {
        return Err(dim_err(format!("W_o {:?} vs S_o {:?}", word_out.shape(), sentence_out.shape())));
    }
    params.check(word_out.cols())?;
    let mut tape = Tape::inference();
    let w = tape.constant(word_out);
    let s = tape.constant(sentence_out);
    let g = params.forward(&mut tape, w, s);
    let y = blend_graph(&mut tape, g, w, s);
    Ok(FusionOutput {
        y: tape.value(y).clone(),
        g: tape.value(g).data().to_vec(),
        word_scores: Vec::new(),
        sentence_scores: Vec::new(),
        word_out: word_out.clone(),
        sentence_out: sentence_out.clone(),
    })
}

/// Word attention, sentence attention and gated fusion in one pass.
pub fn prompt_fusion(words: &Mat, sentence: &[f64], frames: &Mat, params: &GateParams) -> Result<FusionOutput> {
    if words.cols() != frames.cols() || sentence.len() != frames.cols() {
        return Err(dim_err("query and frame widths differ"));
    }
    params.check(frames.cols())?;
    let s = Mat::row_vector(sentence);
    let mut tape = Tape::inference();
    let w = tape.constant(words);
    let sv = tape.constant(&s);
    let f = tape.constant(frames);
    let vars = fuse_graph(&mut tape, params, w, sv, f);
    Ok(FusionOutput {
        y: tape.value(vars.fused).clone(),
        g: tape.value(vars.gate).data().to_vec(),
        word_scores: tape.value(vars.word_scores).data().to_vec(),
        sentence_scores: tape.value(vars.sentence_scores).data().to_vec(),
        word_out: tape.value(vars.word_out).clone(),
        sentence_out: tape.value(vars.sentence_out).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{sigmoid, softmax};

    fn rand(rows: usize, cols: usize, seed: u64) -> Mat {
        Mat::gaussian(rows, cols, 1.0, &mut SplitMix64::new(seed))
    }

    #[test]
    fn single_frame_word_attention() {
        let words = rand(3, 4, 1);
        let frames = rand(1, 4, 2);
        let out = word_cross_attention(&words, &frames).unwrap();
        assert_eq!(out.attention.data(), &[1.0, 1.0, 1.0]);
        assert_eq!(out.scores, vec![1.0]);
        assert_eq!(out.reweighted, frames);
    }

    #[test]
    fn identical_words_reduce_to_one_softmax_row() {
        let word = [0.4, -0.3, 1.1];
        let words = Mat::from_rows(&vec![word.to_vec(); 4]);
        let frames = rand(5, 3, 3);
        let out = word_cross_attention(&words, &frames).unwrap();
        let logits: Vec<f64> = frames.row_iter().map(|f| crate::tensor::dot(&word, f) / 3f64.sqrt()).collect();
        let expected = softmax(&logits);
        for (a, b) in out.scores.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }

        let twin = Mat::from_rows(&[vec![0.5, 0.5, 0.5], vec![0.5, 0.5, 0.5]]);
        let out = word_cross_attention(&words, &twin).unwrap();
        assert_eq!(out.scores, vec![0.5, 0.5]);
    }

    #[test]
    fn word_attention_reference_evaluation() {
        // W=2, N=3, D=2
        let words = Mat::from_rows(&[vec![0.3, -0.8], vec![1.2, 0.5]]);
        let frames = Mat::from_rows(&[vec![0.1, 0.9], vec![-0.7, 0.2], vec![0.6, -0.4]]);
        let out = word_cross_attention(&words, &frames).unwrap();
        let scale = 1.0 / 2f64.sqrt();
        let mut scores = [0.0; 3];
        for w in 0..2 {
            let logits: Vec<f64> = (0..3)
                .map(|n| (words[(w, 0)] * frames[(n, 0)] + words[(w, 1)] * frames[(n, 1)]) * scale)
                .collect();
            let total: f64 = logits.iter().map(|l| l.exp()).sum();
            for n in 0..3 {
                scores[n] += logits[n].exp() / total / 2.0;
            }
        }
        for n in 0..3 {
            assert!((out.scores[n] - scores[n]).abs() < 1e-12);
            for d in 0..2 {
                assert!((out.reweighted[(n, d)] - scores[n] * frames[(n, d)]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sentence_attention_degenerate_cases() {
        let frames = rand(1, 3, 4);
        let out = sentence_cross_attention(&[0.2, 0.1, -0.5], &frames).unwrap();
        assert_eq!(out.scores, vec![1.0]);
        assert_eq!(out.reweighted, frames);

        let same = Mat::from_rows(&vec![vec![0.3, 0.3, 0.9]; 4]);
        let out = sentence_cross_attention(&[1.0, -2.0, 0.5], &same).unwrap();
        assert!(out.scores.iter().all(|s| (s - 0.25).abs() < 1e-6));

        let frames = Mat::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 2.0], vec![0.0, -1.0, 1.0]]);
        let out = sentence_cross_attention(&[3.0, 0.0, 0.0], &frames).unwrap();
        assert!(out.scores.iter().all(|s| (s - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn equal_inputs_pass_through_fusion() {
        let gate = GateParams::init(3, &mut SplitMix64::new(5));
        let x = rand(4, 3, 6);
        let out = gated_fusion(&x, &x, &gate).unwrap();
        for (a, b) in out.y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn saturated_gate_selects_word_path() {
        let mut gate = GateParams::init(2, &mut SplitMix64::new(5));
        gate.hidden.weight = Mat::zeros(2, 4);
        gate.out.weight = Mat::zeros(1, 2);
        gate.out.bias = Mat::filled(1, 1, 40.0);
        let w = rand(3, 2, 7);
        let s = rand(3, 2, 8);
        let out = gated_fusion(&w, &s, &gate).unwrap();
        for g in &out.g {
            assert!((1.0 - g).abs() < 1e-12);
        }
        for (a, b) in out.y.data().iter().zip(w.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn fusion_reference_evaluation() {
        let gate = GateParams::init(2, &mut SplitMix64::new(9));
        let w = rand(3, 2, 10);
        let s = rand(3, 2, 11);
        let out = gated_fusion(&w, &s, &gate).unwrap();
        for n in 0..3 {
            let x = [w[(n, 0)], w[(n, 1)], s[(n, 0)], s[(n, 1)]];
            let mut logit = gate.out.bias[(0, 0)];
            for h in 0..2 {
                let mut pre = gate.hidden.bias[(0, h)];
                for (i, xi) in x.iter().enumerate() {
                    pre += gate.hidden.weight[(h, i)] * xi;
                }
                logit += gate.out.weight[(0, h)] * pre.max(0.0);
            }
            let g = sigmoid(logit);
            assert!((out.g[n] - g).abs() < 1e-12);
            for d in 0..2 {
                let y = g * w[(n, d)] + (1.0 - g) * s[(n, d)];
                assert!((out.y[(n, d)] - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn mismatched_widths_are_errors() {
        assert!(word_cross_attention(&rand(2, 3, 1), &rand(2, 4, 2)).is_err());
        assert!(sentence_cross_attention(&[1.0, 2.0], &rand(2, 3, 2)).is_err());
        let gate = GateParams::init(3, &mut SplitMix64::new(1));
        assert!(gated_fusion(&rand(2, 3, 1), &rand(3, 3, 1), &gate).is_err());
        assert!(gated_fusion(&rand(2, 4, 1), &rand(2, 4, 1), &gate).is_err());
    }
}
