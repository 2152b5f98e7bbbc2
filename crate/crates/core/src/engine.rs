//! Two-stage retrieval: index build, per-query retrieval, metrics, latency
//! benchmarking, and index persistence.
//!
//! Index file layout (little-endian):
//!
//! ```text
//! "PCLX" u16 version=1 u16 flags u64 model_hash u32 M u32 D
//! per video: u16 len, id bytes, u32 N, u16 layers applied, φ(v) D f32, frame context N·D f32
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::{Duration, Instant};

use byteorder::{LittleEndian, WriteBytesExt};
use rayon::prelude::*;

use crate::aggregator::{cosine_similarity, weight_frames};
use crate::autodiff::Tape;
use crate::corpus::{write_f32s, write_id, CorpusBundle, QueryRecord, Reader, VideoRecord};
use crate::error::{dim_err, Error, Result};
use crate::model::ModelParams;
use crate::prompt::fuse_graph;
use crate::pruner::{check_k_percent, cosine, rank_descending, retained_count};
use crate::sampler::{topk_infer, SelectedFrames};
use crate::tensor::Mat;

pub const INDEX_MAGIC: [u8; 4] = *b"PCLX";
pub const INDEX_VERSION: u16 = 1;
pub const DEFAULT_K_PERCENT: f64 = 50.0;
pub const DEFAULT_K_FRAMES: usize = 12;

/// Cached query-independent features for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedVideo {
    pub id: String,
    /// Contextualized frame features F (N×D).
    pub frame_context: Mat,
    /// Unit-norm distilled embedding φ(v).
    pub distilled: Vec<f64>,
    pub layers_applied: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildStats {
    pub videos: usize,
    pub frames: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrievalIndex {
    pub model_hash: u64,
    pub dim: usize,
    pub entries: Vec<IndexedVideo>,
    pub build_stats: BuildStats,
}

fn index_video(video: &VideoRecord, model: &ModelParams) -> IndexedVideo {
    let mut tape = Tape::inference();
    let raw = tape.constant(&video.raw_frames);
    let (frames, layers_applied) = model.encoder.forward(&mut tape, raw, video.duration_s, true);
    let phi = model.distill.forward(&mut tape, frames);
    IndexedVideo {
        id: video.id.clone(),
        frame_context: tape.value(frames).quantize_f32(),
        distilled: tape.value(phi).quantize_f32().into_vec(),
        layers_applied,
    }
}

fn check_compatible(corpus: &CorpusBundle, model: &ModelParams) -> Result<()> {
    let c = &model.config;
    if corpus.raw_dim != c.raw_dim || corpus.dim != c.dim {
        return Err(dim_err(format!(
            "corpus dims (D_v={}, D={}) vs model dims (D_v={}, D={})",
            corpus.raw_dim, corpus.dim, c.raw_dim, c.dim
        )));
    }
    Ok(())
}

/// Encodes every video once; `parallel` fans out over videos with identical results.
pub fn index_corpus(corpus: &CorpusBundle, model: &ModelParams, parallel: bool) -> Result<RetrievalIndex> {
    check_compatible(corpus, model)?;
    if corpus.videos.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    for v in &corpus.videos {
        if v.raw_frames.rows() == 0 || v.raw_frames.cols() != corpus.raw_dim {
            return Err(dim_err(format!("video {} has malformed raw frames", v.id)));
        }
    }
    let start = Instant::now();
    let entries: Vec<IndexedVideo> = if parallel {
        corpus.videos.par_iter().map(|v| index_video(v, model)).collect()
    } else {
        corpus.videos.iter().map(|v| index_video(v, model)).collect()
    };
    let frames = entries.iter().map(|e| e.frame_context.rows()).sum();
    Ok(RetrievalIndex {
        model_hash: model.fingerprint(),
        dim: model.config.dim,
        build_stats: BuildStats { videos: entries.len(), frames, elapsed: start.elapsed() },
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrieveConfig {
    pub k_percent: f64,
    pub k_frames: usize,
    pub parallel: bool,
}

impl Default for RetrieveConfig {
    fn default() -> Self {
        Self { k_percent: DEFAULT_K_PERCENT, k_frames: DEFAULT_K_FRAMES, parallel: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Coarse,
    Fine,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub video_id: String,
    pub score: f64,
    pub stage: Stage,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    /// Candidates by stage-2 score, then pruned videos by stage-1 score.
    pub entries: Vec<RankedEntry>,
    pub stage2_count: usize,
    pub frames_aggregated: usize,
    pub stage1_time: Duration,
    pub stage2_time: Duration,
}

impl RankedList {
    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.video_id.as_str()).collect()
    }

    /// 1-based rank of `video_id`.
    pub fn rank_of(&self, video_id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.video_id == video_id).map(|p| p + 1)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stage2Outcome {
    pub score: f64,
    pub selection: SelectedFrames,
}

/// Fine score of one video for one query: prompt fusion, frame scoring,
/// exact top-K, α-weighting of teacher rows, aggregation, cosine.
pub fn stage2_score(
    model: &ModelParams,
    query: &QueryRecord,
    frame_context: &Mat,
    clip_frames: &Mat,
    k_frames: usize,
) -> Result<Stage2Outcome> {
    let d = model.config.dim;
    if query.words.cols() != d || query.sentence.len() != d {
        return Err(dim_err(format!("query {} width does not match model width {d}", query.id)));
    }
    if frame_context.rows() != clip_frames.rows() {
        return Err(dim_err("frame context and teacher frames disagree on N"));
    }
    let sentence = Mat::row_vector(&query.sentence);
    let mut tape = Tape::inference();
    let words = tape.constant(&query.words);
    let sent = tape.constant(&sentence);
    let frames = tape.constant(frame_context);
    let fusion = fuse_graph(&mut tape, &model.gate, words, sent, frames);
    let scores = model.scorer.forward(&mut tape, frames, fusion.fused);
    let k = k_frames.clamp(1, frame_context.rows());
    let selection = topk_infer(tape.value(scores).data(), k)?;
    let weighted = weight_frames(&clip_frames.gather_rows(&selection.indices), &selection.alpha)?;
    let wv = tape.constant_owned(weighted);
    let v = model.aggregator.forward(&mut tape, wv);
    let score = cosine_similarity(tape.value(v).data(), &query.sentence)?;
    Ok(Stage2Outcome { score, selection })
}

fn by_score_then_id(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.video_id.cmp(&b.video_id))
}

/// Read-only view tying a corpus, a model and its index together.
pub struct Pipeline<'a> {
    pub corpus: &'a CorpusBundle,
    pub model: &'a ModelParams,
    pub index: &'a RetrievalIndex,
}

impl<'a> Pipeline<'a> {
    pub fn new(corpus: &'a CorpusBundle, model: &'a ModelParams, index: &'a RetrievalIndex) -> Result<Self> {
        check_compatible(corpus, model)?;
        if index.model_hash != model.fingerprint() {
            return Err(Error::InvalidData("index was built with a different model".into()));
        }
        if index.entries.len() != corpus.videos.len()
            || index.entries.iter().zip(&corpus.videos).any(|(e, v)| e.id != v.id || e.frame_context.rows() != v.clip_frames.rows())
        {
            return Err(Error::InvalidData("index entries do not match corpus videos".into()));
        }
        Ok(Self { corpus, model, index })
    }

    fn score_videos(&self, query: &QueryRecord, positions: &[usize], config: &RetrieveConfig) -> Result<Vec<(usize, Stage2Outcome)>> {
        let run = |&p: &usize| {
            let e = &self.index.entries[p];
            stage2_score(self.model, query, &e.frame_context, &self.corpus.videos[p].clip_frames, config.k_frames)
                .map(|o| (p, o))
        };
        if config.parallel {
            positions.par_iter().map(run).collect()
        } else {
            positions.iter().map(run).collect()
        }
    }

    /// Stage-1 cosine scores against φ(v), in corpus order.
    pub fn coarse_scores(&self, query: &QueryRecord) -> Result<Vec<f64>> {
        if query.sentence.len() != self.index.dim {
            return Err(dim_err(format!("query {} has width {}, index has {}", query.id, query.sentence.len(), self.index.dim)));
        }
        Ok(self.index.entries.iter().map(|e| cosine(&e.distilled, &query.sentence)).collect())
    }

    pub fn retrieve(&self, query: &QueryRecord, config: &RetrieveConfig) -> Result<RankedList> {
        check_k_percent(config.k_percent)?;
        let t0 = Instant::now();
        let coarse = self.coarse_scores(query)?;
        let ids: Vec<&str> = self.index.entries.iter().map(|e| e.id.as_str()).collect();
        let order = rank_descending(&ids, &coarse);
        let keep = retained_count(config.k_percent, ids.len());
        let stage1_time = t0.elapsed();

        let t1 = Instant::now();
        let fine = self.score_videos(query, &order[..keep], config)?;
        let stage2_time = t1.elapsed();

        let frames_aggregated = fine.iter().map(|(_, o)| o.selection.indices.len()).sum();
        let mut head: Vec<RankedEntry> = fine
            .into_iter()
            .map(|(p, o)| RankedEntry { video_id: ids[p].to_string(), score: o.score, stage: Stage::Fine })
            .collect();
        head.sort_by(by_score_then_id);
        head.extend(order[keep..].iter().map(|&p| RankedEntry {
            video_id: ids[p].to_string(),
            score: coarse[p],
            stage: Stage::Coarse,
        }));
        Ok(RankedList { entries: head, stage2_count: keep, frames_aggregated, stage1_time, stage2_time })
    }

    /// Stage-2 scoring of every video with no pruning step.
    pub fn retrieve_unpruned(&self, query: &QueryRecord, config: &RetrieveConfig) -> Result<RankedList> {
        let all: Vec<usize> = (0..self.index.entries.len()).collect();
        let t1 = Instant::now();
        let fine = self.score_videos(query, &all, config)?;
        let stage2_time = t1.elapsed();
        let frames_aggregated = fine.iter().map(|(_, o)| o.selection.indices.len()).sum();
        let mut entries: Vec<RankedEntry> = fine
            .into_iter()
            .map(|(p, o)| RankedEntry { video_id: self.index.entries[p].id.clone(), score: o.score, stage: Stage::Fine })
            .collect();
        entries.sort_by(by_score_then_id);
        Ok(RankedList { stage2_count: entries.len(), entries, frames_aggregated, stage1_time: Duration::ZERO, stage2_time })
    }

    pub fn evaluate(&self, queries: &[QueryRecord], config: &RetrieveConfig) -> Result<MetricsReport> {
        let mut ranks = Vec::with_capacity(queries.len());
        for q in queries {
            if self.corpus.video(&q.ground_truth_video).is_none() {
                return Err(Error::MissingGroundTruth { query: q.id.clone(), video: q.ground_truth_video.clone() });
            }
            let list = self.retrieve(q, config)?;
            let rank = list.rank_of(&q.ground_truth_video).expect("every corpus video is ranked");
            ranks.push((q.id.clone(), rank));
        }
        MetricsReport::from_ranks(ranks)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub mean_rank: f64,
    pub ranks: Vec<(String, usize)>,
}

impl MetricsReport {
    pub fn from_ranks(ranks: Vec<(String, usize)>) -> Result<Self> {
        if ranks.is_empty() {
            return Err(Error::InvalidArgument("no queries to evaluate".into()));
        }
        let n = ranks.len() as f64;
        let recall = |k: usize| ranks.iter().filter(|(_, r)| *r <= k).count() as f64 / n;
        Ok(Self {
            r1: recall(1),
            r5: recall(5),
            r10: recall(10),
            mean_rank: ranks.iter().map(|(_, r)| *r as f64).sum::<f64>() / n,
            ranks,
        })
    }

    pub fn to_csv(&self) -> String {
        format!(
            "metric,value\nR@1,{}\nR@5,{}\nR@10,{}\nMnR,{}\n",
            self.r1, self.r5, self.r10, self.mean_rank
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub k_percents: Vec<f64>,
    pub rounds: usize,
    pub k_frames: usize,
    pub parallel: bool,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            k_percents: vec![100.0, 90.0, 80.0, 70.0, 60.0, 50.0, 40.0, 30.0, 20.0, 10.0, 5.0],
            rounds: 10,
            k_frames: DEFAULT_K_FRAMES,
            parallel: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub k_percent: f64,
    /// Cold index build plus one retrieval.
    pub fq_latency_s: f64,
    /// Mean warm retrieval time over `rounds`.
    pub aq_latency_s: f64,
    pub rounds: usize,
    pub corpus_size: usize,
    pub stage2_count: usize,
    pub frames_aggregated: usize,
}

/// Measures FQ and AQ latency for each k. Round r retrieves query
/// `r mod |queries|` against an index built once before the AQ rounds.
pub fn bench(corpus: &CorpusBundle, model: &ModelParams, config: &BenchConfig) -> Result<Vec<LatencyReport>> {
    if corpus.queries.is_empty() {
        return Err(Error::InvalidArgument("benchmark needs at least one query".into()));
    }
    if config.rounds == 0 {
        return Err(Error::InvalidArgument("rounds must be at least 1".into()));
    }
    for &k in &config.k_percents {
        check_k_percent(k)?;
    }
    let warm = index_corpus(corpus, model, config.parallel)?;
    let warm_pipeline = Pipeline::new(corpus, model, &warm)?;
    let mut reports = Vec::with_capacity(config.k_percents.len());
    for &k_percent in &config.k_percents {
        let rc = RetrieveConfig { k_percent, k_frames: config.k_frames, parallel: config.parallel };

        let t = Instant::now();
        let cold = index_corpus(corpus, model, config.parallel)?;
        let cold_pipeline = Pipeline::new(corpus, model, &cold)?;
        cold_pipeline.retrieve(&corpus.queries[0], &rc)?;
        let fq = t.elapsed().as_secs_f64();

        let mut total = 0.0;
        let mut last = None;
        for r in 0..config.rounds {
            let q = &corpus.queries[r % corpus.queries.len()];
            let t = Instant::now();
            let list = warm_pipeline.retrieve(q, &rc)?;
            total += t.elapsed().as_secs_f64();
            last = Some(list);
        }
        let last = last.expect("rounds >= 1");
        reports.push(LatencyReport {
            k_percent,
            fq_latency_s: fq,
            aq_latency_s: total / config.rounds as f64,
            rounds: config.rounds,
            corpus_size: corpus.videos.len(),
            stage2_count: last.stage2_count,
            frames_aggregated: last.frames_aggregated,
        });
    }
    Ok(reports)
}

pub fn latency_csv(reports: &[LatencyReport]) -> String {
    let mut out = String::from("k_percent,fq_s,aq_s,stage2_count\n");
    for r in reports {
        let _ = writeln!(out, "{},{:.6},{:.6},{}", r.k_percent, r.fq_latency_s, r.aq_latency_s, r.stage2_count);
    }
    out
}

pub fn ranked_csv(list: &RankedList, top: usize) -> String {
    let mut out = String::from("rank,video_id,score,stage\n");
    for (i, e) in list.entries.iter().take(top).enumerate() {
        let stage = match e.stage {
            Stage::Fine => "fine",
            Stage::Coarse => "coarse",
        };
        let _ = writeln!(out, "{},{},{},{}", i + 1, e.video_id, e.score, stage);
    }
    out
}

pub fn encode_index(index: &RetrievalIndex) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&INDEX_MAGIC);
    out.write_u16::<LittleEndian>(INDEX_VERSION)?;
    out.write_u16::<LittleEndian>(0)?;
    out.write_u64::<LittleEndian>(index.model_hash)?;
    out.write_u32::<LittleEndian>(index.entries.len() as u32)?;
    out.write_u32::<LittleEndian>(index.dim as u32)?;
    for e in &index.entries {
        if e.distilled.len() != index.dim || e.frame_context.cols() != index.dim {
            return Err(dim_err(format!("index entry {} does not match width {}", e.id, index.dim)));
        }
        write_id(&mut out, &e.id)?;
        out.write_u32::<LittleEndian>(e.frame_context.rows() as u32)?;
        out.write_u16::<LittleEndian>(e.layers_applied as u16)?;
        write_f32s(&mut out, &e.distilled)?;
        write_f32s(&mut out, e.frame_context.data())?;
    }
    Ok(out)
}

/// Decodes an index. Build statistics are not persisted.
pub fn decode_index(bytes: &[u8]) -> Result<RetrievalIndex> {
    let mut r = Reader::new(bytes);
    r.magic(INDEX_MAGIC)?;
    let version = r.u16("version")?;
    if version != INDEX_VERSION {
        return Err(Error::VersionMismatch { expected: INDEX_VERSION, found: version });
    }
    r.u16("flags")?;
    let model_hash = r.u64("model hash")?;
    let m = r.u32("video count")? as usize;
    let dim = r.u32("width")? as usize;
    if dim == 0 {
        return Err(dim_err("index declares zero width"));
    }
    let mut entries = Vec::with_capacity(m.min(1 << 16));
    for _ in 0..m {
        let id = r.id("video id")?;
        let n = r.u32("frame count")? as usize;
        let layers_applied = r.u16("layer count")? as usize;
        let distilled = r.f32s(dim, "distilled embedding")?;
        let frame_context = r.mat(n, dim, "frame context")?;
        entries.push(IndexedVideo { id, frame_context, distilled, layers_applied });
    }
    r.finish()?;
    let frames = entries.iter().map(|e| e.frame_context.rows()).sum();
    Ok(RetrievalIndex {
        model_hash,
        dim,
        build_stats: BuildStats { videos: entries.len(), frames, elapsed: Duration::ZERO },
        entries,
    })
}

pub fn write_index(index: &RetrievalIndex, path: &Path) -> Result<()> {
    std::fs::write(path, encode_index(index)?)?;
    Ok(())
}

pub fn read_index(path: &Path) -> Result<RetrievalIndex> {
    decode_index(&std::fs::read(path)?)
}

/// Ground-truth rank per query from a full score matrix (queries × videos),
/// ties resolved by ascending video id.
pub fn ranks_from_scores(video_ids: &[&str], scores: &[Vec<f64>], ground_truth: &[&str]) -> Vec<usize> {
    let pos: HashMap<&str, usize> = video_ids.iter().enumerate().map(|(i, v)| (*v, i)).collect();
    scores
        .iter()
        .zip(ground_truth)
        .map(|(row, gt)| {
            let g = pos[gt];
            1 + (0..row.len())
                .filter(|&j| row[j] > row[g] || (row[j] == row[g] && video_ids[j] < video_ids[g]))
                .count()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_definitions() {
        let all_first = MetricsReport::from_ranks(vec![("a".into(), 1), ("b".into(), 1)]).unwrap();
        assert_eq!((all_first.r1, all_first.r5, all_first.mean_rank), (1.0, 1.0, 1.0));
        let mixed = MetricsReport::from_ranks(vec![("a".into(), 1), ("b".into(), 3)]).unwrap();
        assert_eq!((mixed.r1, mixed.r5, mixed.r10, mixed.mean_rank), (0.5, 1.0, 1.0, 2.0));
        assert!(MetricsReport::from_ranks(Vec::new()).is_err());
    }

    #[test]
    fn csv_shapes() {
        let m = MetricsReport::from_ranks(vec![("a".into(), 2)]).unwrap();
        assert_eq!(m.to_csv(), "metric,value\nR@1,0\nR@5,1\nR@10,1\nMnR,2\n");
        let r = LatencyReport {
            k_percent: 50.0,
            fq_latency_s: 1.5,
            aq_latency_s: 0.25,
            rounds: 10,
            corpus_size: 4,
            stage2_count: 2,
            frames_aggregated: 24,
        };
        assert_eq!(latency_csv(&[r]), "k_percent,fq_s,aq_s,stage2_count\n50,1.500000,0.250000,2\n");
    }

    #[test]
    fn brute_force_ranks() {
        let ids = ["v0", "v1", "v2"];
        let scores = vec![vec![0.1, 0.9, 0.5], vec![0.3, 0.3, 0.3]];
        assert_eq!(ranks_from_scores(&ids, &scores, &["v2", "v1"]), vec![2, 2]);
    }
}
