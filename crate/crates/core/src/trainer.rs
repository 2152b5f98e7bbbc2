//! Two-stage optimization and the gradient verification harness.
//!
//! Stage 1 trains frame sampling and aggregation end to end with a symmetric
//! cross-entropy over the batch similarity matrix, using the relaxed top-k
//! selection. Stage 2 freezes everything except the distillation encoder and
//! fits φ(v) to the teacher video features with an MSE loss.
//!
//! The optimizer is plain gradient descent with one learning rate for the
//! temporal encoder (the "backbone" group) and one for everything else, and
//! global-norm clipping of the trainable gradient.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::str::FromStr;

use crate::aggregator::AggregatorParams;
use crate::autodiff::{Tape, Var};
use crate::corpus::{CorpusBundle, QueryRecord, VideoRecord};
use crate::error::{Error, Result};
use crate::layers::{EncoderLayer, ParamSet};
use crate::model::{ModelConfig, ModelParams, ParamGroup};
use crate::prompt::{blend_graph, fuse_graph, GateParams};
use crate::pruner::DistillParams;
use crate::rng::SplitMix64;
use crate::sampler::{soft_select_graph, ScorerParams, TemperatureSchedule};
use crate::temporal::{DepthRule, EncoderParams};
use crate::tensor::{normalized, Mat};

/// Symmetric cross-entropy over a B×B similarity matrix with positives on
/// the diagonal: ½(L_v2t + L_t2v).
pub fn contrastive_loss(sim: &Mat) -> Result<f64> {
    if sim.rows() != sim.cols() || sim.rows() == 0 {
        return Err(Error::InvalidArgument(format!("similarity matrix must be square, got {:?}", sim.shape())));
    }
    let mut tape = Tape::inference();
    let s = tape.constant(sim);
    let l = tape.contrastive_loss(s);
    Ok(tape.scalar(l))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate of the temporal encoder.
    pub lr_backbone: f64,
    /// Learning rate of every other group.
    pub lr_head: f64,
    pub seed: u64,
    /// Advanced once per epoch.
    pub temperature: TemperatureSchedule,
    pub clip_norm: f64,
    pub k_frames: usize,
    /// Fixed multiplier on cosine similarities before the contrastive loss.
    pub logit_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 8,
            epochs: 30,
            lr_backbone: 1e-3,
            lr_head: 0.1,
            seed: 0,
            temperature: TemperatureSchedule::default(),
            clip_norm: 1.0,
            k_frames: crate::engine::DEFAULT_K_FRAMES,
            logit_scale: 10.0,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidArgument("batch size must be at least 2".into()));
        }
        if !(self.lr_backbone >= 0.0 && self.lr_head > 0.0) {
            return Err(Error::InvalidArgument("learning rates must be positive".into()));
        }
        if !(self.clip_norm > 0.0 && self.logit_scale > 0.0) || self.k_frames == 0 {
            return Err(Error::InvalidArgument("clip norm, logit scale and k_frames must be positive".into()));
        }
        Ok(())
    }

    fn lr_for(&self, group: ParamGroup) -> f64 {
        match group {
            ParamGroup::Encoder => self.lr_backbone,
            _ => self.lr_head,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub temperature: f64,
}

pub fn training_log_csv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,loss,temperature\n");
    for e in log {
        let _ = writeln!(out, "{},{},{}", e.epoch, e.loss, e.temperature);
    }
    out
}

fn shuffle<T>(items: &mut [T], rng: &mut SplitMix64) {
    for i in (1..items.len()).rev() {
        let j = (rng.next_u64() % (i as u64 + 1)) as usize;
        items.swap(i, j);
    }
}

/// Greedy batching of shuffled queries so ground-truth videos are distinct
/// within a batch. Partial batches smaller than two are dropped.
fn query_batches<'c>(queries: &[&'c QueryRecord], batch: usize) -> Vec<Vec<&'c QueryRecord>> {
    let mut pending: Vec<&QueryRecord> = queries.to_vec();
    let mut batches = Vec::new();
    while !pending.is_empty() {
        let mut current = Vec::with_capacity(batch);
        let mut seen = HashSet::new();
        let mut rest = Vec::new();
        for q in pending {
            if current.len() < batch && seen.insert(q.ground_truth_video.as_str()) {
                current.push(q);
            } else {
                rest.push(q);
            }
        }
        if current.len() < 2 {
            break;
        }
        batches.push(current);
        pending = rest;
    }
    batches
}

/// Parameter update for the trainable groups with global-norm clipping.
fn apply_update(model: &mut ModelParams, grads: &[(ParamGroup, Vec<Mat>)], config: &TrainConfig) {
    let norm_sq: f64 = grads.iter().flat_map(|(_, gs)| gs.iter()).map(Mat::frobenius_sq).sum();
    let norm = norm_sq.sqrt();
    let clip = if norm > config.clip_norm { config.clip_norm / norm } else { 1.0 };
    for (group, gs) in grads {
        let lr = config.lr_for(*group) * clip;
        for ((_, p), g) in model.group_mut(*group).into_iter().zip(gs) {
            for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= lr * d;
            }
        }
    }
}

fn collect_grads(tape: &Tape<'_>, model: &ModelParams) -> Vec<(ParamGroup, Vec<Mat>)> {
    ParamGroup::ALL
        .iter()
        .filter(|g| model.is_trainable(**g))
        .map(|&g| (g, model.group(g).into_iter().map(|(_, m)| tape.param_grad(m)).collect()))
        .collect()
}

/// Training-path fine embedding of one video for one query (1×D).
fn soft_video_embedding<'a>(
    tape: &mut Tape<'a>,
    model: &'a ModelParams,
    frames: Var,
    video: &'a VideoRecord,
    query: &'a QueryRecord,
    sentence: &'a Mat,
    k_frames: usize,
    temperature: f64,
) -> Var {
    let words = tape.constant(&query.words);
    let sent = tape.constant(sentence);
    let fusion = fuse_graph(tape, &model.gate, words, sent, frames);
    let scores = model.scorer.forward(tape, frames, fusion.fused);
    let clip = tape.constant(&video.clip_frames);
    let k = k_frames.clamp(1, video.clip_frames.rows());
    let (selected, alpha) = soft_select_graph(tape, scores, clip, k, temperature);
    let weighted = tape.scale_rows(selected, alpha);
    model.aggregator.forward(tape, weighted)
}

/// Batch loss on the training path; returns the tape-owned loss value.
fn retrieval_batch_loss<'a>(
    tape: &mut Tape<'a>,
    model: &'a ModelParams,
    corpus: &'a CorpusBundle,
    batch: &[&'a QueryRecord],
    sentences: &'a [Mat],
    config: &TrainConfig,
    temperature: f64,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(batch.len());
    let texts: Vec<Var> = sentences.iter().map(|s| tape.constant(s)).collect();
    for q_video in batch {
        let video = corpus.video(&q_video.ground_truth_video).ok_or_else(|| Error::MissingGroundTruth {
            query: q_video.id.clone(),
            video: q_video.ground_truth_video.clone(),
        })?;
        let raw = tape.constant(&video.raw_frames);
        let (frames, _) = model.encoder.forward(tape, raw, video.duration_s, true);
        let mut cells = Vec::with_capacity(batch.len());
        for (j, q_text) in batch.iter().enumerate() {
            let v = soft_video_embedding(tape, model, frames, video, q_text, &sentences[j], config.k_frames, temperature);
            cells.push(tape.matmul_t(v, texts[j]));
        }
        rows.push(tape.concat_cols(&cells));
    }
    let sim = tape.concat_rows(&rows);
    let logits = tape.scale(sim, config.logit_scale);
    Ok(tape.contrastive_loss(logits))
}

fn sentence_rows(batch: &[&QueryRecord]) -> Vec<Mat> {
    batch.iter().map(|q| Mat::row_vector(&normalized(&q.sentence))).collect()
}

pub fn train_retrieval_stage(corpus: &CorpusBundle, config: &TrainConfig) -> Result<(ModelParams, Vec<EpochLog>)> {
    let model = ModelParams::init(ModelConfig::new(corpus.raw_dim, corpus.dim), config.seed)?;
    train_retrieval_from(model, corpus, config)
}

/// End-to-end retrieval training starting from `model`. The distillation
/// group is frozen; every other group is trainable.
pub fn train_retrieval_from(
    mut model: ModelParams,
    corpus: &CorpusBundle,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    config.validate()?;
    for g in ParamGroup::ALL {
        model.set_trainable(g, g != ParamGroup::Distill);
    }
    let queries: Vec<&QueryRecord> = corpus.queries.iter().collect();
    if query_batches(&queries, config.batch_size).is_empty() {
        return Err(Error::BatchInfeasible(format!(
            "cannot form a batch of at least 2 queries with distinct ground-truth videos (batch size {})",
            config.batch_size
        )));
    }
    let mut rng = SplitMix64::new(config.seed ^ 0x5EED_0001);
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let temperature = config.temperature.at(epoch as u64);
        let mut order = queries.clone();
        shuffle(&mut order, &mut rng);
        let batches = query_batches(&order, config.batch_size);
        let mut total = 0.0;
        for batch in &batches {
            let sentences = sentence_rows(batch);
            let grads = {
                let mut tape = Tape::new();
                let loss = retrieval_batch_loss(&mut tape, &model, corpus, batch, &sentences, config, temperature)?;
                total += tape.scalar(loss);
                tape.backward(loss);
                collect_grads(&tape, &model)
            };
            apply_update(&mut model, &grads, config);
        }
        log.push(EpochLog { epoch, loss: total / batches.len() as f64, temperature });
    }
    Ok((model, log))
}

/// Frame context for every video under the (frozen) encoder.
pub fn frozen_frame_contexts(corpus: &CorpusBundle, model: &ModelParams) -> Vec<Mat> {
    corpus
        .videos
        .iter()
        .map(|v| {
            let mut tape = Tape::inference();
            let raw = tape.constant(&v.raw_frames);
            let (f, _) = model.encoder.forward(&mut tape, raw, v.duration_s, true);
            tape.value(f).clone()
        })
        .collect()
}

/// Mean squared distance between φ(v) and the teacher video feature over the corpus.
pub fn corpus_distill_mse(corpus: &CorpusBundle, model: &ModelParams, contexts: &[Mat]) -> f64 {
    let total: f64 = corpus
        .videos
        .iter()
        .zip(contexts)
        .map(|(v, f)| {
            let mut tape = Tape::inference();
            let fv = tape.constant(f);
            let phi = model.distill.forward(&mut tape, fv);
            tape.value(phi).data().iter().zip(&v.teacher_video).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
        })
        .sum();
    total / corpus.videos.len() as f64
}

/// Distillation training: only the distill group changes. The logged loss of
/// each epoch is the corpus-wide MSE after that epoch's updates.
pub fn train_distill_stage(
    corpus: &CorpusBundle,
    model: &ModelParams,
    config: &TrainConfig,
) -> Result<(ModelParams, Vec<EpochLog>)> {
    config.validate()?;
    if corpus.videos.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut model = model.clone();
    model.train_only(ParamGroup::Distill);
    let contexts = frozen_frame_contexts(corpus, &model);
    let teachers: Vec<Mat> = corpus.videos.iter().map(|v| Mat::row_vector(&v.teacher_video)).collect();
    let mut rng = SplitMix64::new(config.seed ^ 0x5EED_0002);
    let mut order: Vec<usize> = (0..corpus.videos.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        shuffle(&mut order, &mut rng);
        for chunk in order.chunks(config.batch_size) {
            let grads = {
                let mut tape = Tape::new();
                let mut students = Vec::with_capacity(chunk.len());
                let mut targets = Vec::with_capacity(chunk.len());
                for &i in chunk {
                    let f = tape.constant(&contexts[i]);
                    students.push(model.distill.forward(&mut tape, f));
                    targets.push(tape.constant(&teachers[i]));
                }
                let s = tape.concat_rows(&students);
                let t = tape.concat_rows(&targets);
                let loss = tape.mse_rows(s, t);
                tape.backward(loss);
                collect_grads(&tape, &model)
            };
            apply_update(&mut model, &grads, config);
        }
        let loss = corpus_distill_mse(corpus, &model, &contexts);
        log.push(EpochLog { epoch, loss, temperature: 0.0 });
    }
    Ok((model, log))
}

/// Differentiable blocks registered with the gradient checker.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    EncoderLayer,
    TemporalEncoder,
    Gate,
    Scorer,
    Distill,
    Aggregator,
    ContrastiveLoss,
    MseLoss,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::EncoderLayer,
        Block::TemporalEncoder,
        Block::Gate,
        Block::Scorer,
        Block::Distill,
        Block::Aggregator,
        Block::ContrastiveLoss,
        Block::MseLoss,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::EncoderLayer => "encoder-layer",
            Block::TemporalEncoder => "temporal-encoder",
            Block::Gate => "gate",
            Block::Scorer => "scorer",
            Block::Distill => "distill",
            Block::Aggregator => "aggregator",
            Block::ContrastiveLoss => "contrastive-loss",
            Block::MseLoss => "mse-loss",
        }
    }
}

impl FromStr for Block {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Block::ALL.into_iter().find(|b| b.name() == s).ok_or_else(|| Error::UnknownBlock(s.to_string()))
    }
}

/// Problem size for a gradient check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradSample {
    pub frames: usize,
    pub dim: usize,
    pub batch: usize,
    pub seed: u64,
}

impl Default for GradSample {
    fn default() -> Self {
        Self { frames: 4, dim: 8, batch: 3, seed: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub block: Block,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub max_rel_error: f64,
}

/// max over entries of |a − n| / max(|a|, |n|, 1e-8).
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

/// Plain tensors checked directly (loss inputs).
#[derive(Debug, Clone)]
struct Inputs(Vec<Mat>);

impl ParamSet for Inputs {
    fn collect<'a>(&'a self, _prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        for (i, m) in self.0.iter().enumerate() {
            out.push((format!("input{i}"), m));
        }
    }
    fn collect_mut<'a>(&'a mut self, _prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        for (i, m) in self.0.iter_mut().enumerate() {
            out.push((format!("input{i}"), m));
        }
    }
}

fn check_params<P, F>(block: Block, params: &P, eps: f64, objective: F) -> GradCheckReport
where
    P: ParamSet + Clone,
    F: for<'a> Fn(&mut Tape<'a>, &'a P) -> Var,
{
    let analytic: Vec<f64> = {
        let mut tape = Tape::new();
        let out = objective(&mut tape, params);
        tape.backward(out);
        params.tensors().iter().flat_map(|(_, m)| tape.param_grad(m).into_vec()).collect()
    };
    let eval = |p: &P| {
        let mut tape = Tape::inference();
        let out = objective(&mut tape, p);
        tape.scalar(out)
    };
    let mut probe = params.clone();
    let shapes: Vec<usize> = params.tensors().iter().map(|(_, m)| m.len()).collect();
    let mut numeric = Vec::with_capacity(analytic.len());
    for (t, &len) in shapes.iter().enumerate() {
        for e in 0..len {
            let orig = probe.tensors()[t].1.data()[e];
            let mut at = |offset: f64| {
                probe.tensors_mut()[t].1.data_mut()[e] = orig + offset;
                eval(&probe)
            };
            let (p1, m1, p2, m2) = (at(eps), at(-eps), at(2.0 * eps), at(-2.0 * eps));
            probe.tensors_mut()[t].1.data_mut()[e] = orig;
            numeric.push((8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps));
        }
    }
    let max_rel_error = max_relative_error(&analytic, &numeric);
    GradCheckReport { block, analytic, numeric, max_rel_error }
}

/// Σ(output ⊙ R) for a fixed random R, making every output entry matter.
fn project_sum(tape: &mut Tape<'_>, out: Var, seed: u64) -> Var {
    let (r, c) = tape.value(out).shape();
    let weights = Mat::gaussian(r, c, 1.0, &mut SplitMix64::new(seed));
    let w = tape.constant_owned(weights);
    let prod = tape.mul(out, w);
    tape.sum_all(prod)
}

/// Minimum distance of every gate hidden pre-activation from the ReLU kink.
const KINK_MARGIN: f64 = 0.05;

/// Draws gate inputs whose hidden pre-activations all sit at least
/// `KINK_MARGIN` away from zero, so finite-difference probes stay on one
/// linear piece. Gives up after a bounded number of draws at large sizes.
fn away_from_kinks(params: &GateParams, n: usize, d: usize, rng: &mut SplitMix64) -> (Mat, Mat) {
    let mut attempts = 0;
    loop {
        attempts += 1;
        let w = Mat::gaussian(n, d, 1.0, rng);
        let s = Mat::gaussian(n, d, 1.0, rng);
        let mut tape = Tape::inference();
        let (wv, sv) = (tape.constant(&w), tape.constant(&s));
        let joined = tape.concat_cols(&[wv, sv]);
        let pre = params.hidden.forward(&mut tape, joined);
        if attempts >= 10_000 || tape.value(pre).data().iter().all(|a| a.abs() >= KINK_MARGIN) {
            return (w, s);
        }
    }
}

/// Compares analytic parameter gradients of `block` with fourth-order central
/// finite differences on random inputs of the requested size.
pub const DEFAULT_GRAD_EPSILON: f64 = 1e-3;

pub fn grad_check(block: Block, sample: GradSample, eps: f64) -> Result<GradCheckReport> {
    let GradSample { frames: n, dim: d, batch, seed } = sample;
    if n == 0 || d == 0 || batch == 0 || !(eps > 0.0) {
        return Err(Error::InvalidArgument("grad_check needs positive sizes and epsilon".into()));
    }
    let mut rng = SplitMix64::new(seed);
    let x = Mat::gaussian(n, d, 1.0, &mut rng);
    let x2 = Mat::gaussian(n, d, 1.0, &mut rng);
    let proj_seed = seed.wrapping_add(1000);
    let report = match block {
        Block::EncoderLayer => {
            let layer = EncoderLayer::init(d, 1, 4 * d, &mut rng);
            check_params(block, &layer, eps, |t, p: &EncoderLayer| {
                let xv = t.constant_owned(x.clone());
                let (out, _) = p.forward(t, xv);
                project_sum(t, out, proj_seed)
            })
        }
        Block::TemporalEncoder => {
            let raw_dim = d + 2;
            let raw = Mat::gaussian(n, raw_dim, 1.0, &mut rng);
            let params = EncoderParams::init(raw_dim, d, DepthRule::default(), &mut rng);
            check_params(block, &params, eps, |t, p: &EncoderParams| {
                let rv = t.constant_owned(raw.clone());
                let (out, _) = p.forward(t, rv, 30.0, true);
                project_sum(t, out, proj_seed)
            })
        }
        Block::Gate => {
            let params = GateParams::init(d, &mut rng);
            let (w_in, s_in) = away_from_kinks(&params, n, d, &mut rng);
            check_params(block, &params, eps, |t, p: &GateParams| {
                let w = t.constant_owned(w_in.clone());
                let s = t.constant_owned(s_in.clone());
                let g = p.forward(t, w, s);
                let y = blend_graph(t, g, w, s);
                project_sum(t, y, proj_seed)
            })
        }
        Block::Scorer => {
            let params = ScorerParams::init(d, d, &mut rng);
            check_params(block, &params, eps, |t, p: &ScorerParams| {
                let f = t.constant_owned(x.clone());
                let y = t.constant_owned(x2.clone());
                let s = p.forward(t, f, y);
                project_sum(t, s, proj_seed)
            })
        }
        Block::Distill => {
            let heads = if d % 8 == 0 { 8 } else { 1 };
            let params = DistillParams::init_with(d, heads, crate::pruner::DISTILL_FFN, &mut rng);
            check_params(block, &params, eps, |t, p: &DistillParams| {
                let f = t.constant_owned(x.clone());
                let phi = p.forward(t, f);
                project_sum(t, phi, proj_seed)
            })
        }
        Block::Aggregator => {
            let params = AggregatorParams::init(d, &mut rng);
            check_params(block, &params, eps, |t, p: &AggregatorParams| {
                let w = t.constant_owned(x.clone());
                let v = p.forward(t, w);
                project_sum(t, v, proj_seed)
            })
        }
        Block::ContrastiveLoss => {
            let sim = Inputs(vec![Mat::uniform(batch, batch, 1.0, &mut rng)]);
            check_params(block, &sim, eps, |t, p: &Inputs| {
                let s = t.param(&p.0[0]);
                t.contrastive_loss(s)
            })
        }
        Block::MseLoss => {
            let pair = Inputs(vec![Mat::gaussian(batch, d, 1.0, &mut rng), Mat::gaussian(batch, d, 1.0, &mut rng)]);
            check_params(block, &pair, eps, |t, p: &Inputs| {
                let a = t.param(&p.0[0]);
                let b = t.param(&p.0[1]);
                t.mse_rows(a, b)
            })
        }
    };
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn contrastive_loss_examples() {
        let sat = Mat::from_rows(&[vec![10.0, -10.0], vec![-10.0, 10.0]]);
        assert!(contrastive_loss(&sat).unwrap() < 1e-6);
        for b in 1..6 {
            let flat = Mat::filled(b, b, 0.37);
            assert!((contrastive_loss(&flat).unwrap() - (b as f64).ln()).abs() < 1e-12);
        }
        assert!(contrastive_loss(&Mat::zeros(2, 3)).is_err());
    }

    #[test]
    fn contrastive_loss_matches_log_sum_exp() {
        let sim = Mat::from_rows(&[vec![0.2, -0.5, 0.9], vec![0.4, 0.1, -0.3], vec![-0.8, 0.6, 0.7]]);
        let mut v2t = 0.0;
        let mut t2v = 0.0;
        for i in 0..3 {
            let row: f64 = (0..3).map(|j| f64::exp(sim[(i, j)])).sum();
            v2t += row.ln() - sim[(i, i)];
            let col: f64 = (0..3).map(|j| f64::exp(sim[(j, i)])).sum();
            t2v += col.ln() - sim[(i, i)];
        }
        let expected = 0.5 * (v2t / 3.0 + t2v / 3.0);
        assert!((contrastive_loss(&sim).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn batching_keeps_ground_truth_distinct() {
        let q = |id: &str, gt: &str| QueryRecord {
            id: id.into(),
            words: Mat::zeros(1, 1),
            sentence: vec![1.0],
            ground_truth_video: gt.into(),
        };
        let qs = [q("a", "x"), q("b", "x"), q("c", "y"), q("d", "z")];
        let refs: Vec<&QueryRecord> = qs.iter().collect();
        let batches = query_batches(&refs, 3);
        assert_eq!(batches.len(), 1);
        let ids: Vec<&str> = batches[0].iter().map(|q| q.id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c", "d"]);
    }

    #[test]
    fn block_names_round_trip() {
        for b in Block::ALL {
            assert_eq!(b.name().parse::<Block>().unwrap(), b);
        }
        assert_eq!("nope".parse::<Block>().unwrap_err().code(), "unknown-block");
    }
}
