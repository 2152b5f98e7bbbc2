//! Embedding corpus: in-memory bundle, binary file format, validation, and a
//! deterministic synthetic generator with planted text↔video relevance.
//!
//! # File layout (little-endian, f32 floats)
//!
//! ```text
//! "PCLP" u16 version=1 u16 flags u32 D_v u32 D u32 n_videos u32 n_queries
//! per video: u16 len, id bytes, f32 duration_s, u32 N,
//!            raw_frames N·D_v, clip_frames N·D, teacher_video D
//! per query: u16 len, id bytes, u32 W, words W·D, sentence D,
//!            u16 len, ground-truth id bytes
//! ```
//!
//! A JSON sidecar (`<path>.json`) carries counts and provenance.

use std::collections::{HashMap, HashSet};
use std::io::{Cursor, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::rng::SplitMix64;
use crate::tensor::{normalized, Mat};

pub const CORPUS_MAGIC: [u8; 4] = *b"PCLP";
pub const CORPUS_VERSION: u16 = 1;
pub const GENERATOR_VERSION: &str = "proclip-synth/1";
const FLAG_SYNTHETIC: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub id: String,
    pub duration_s: f64,
    /// N×D_v lightweight-extractor features.
    pub raw_frames: Mat,
    /// N×D teacher features, one row per frame.
    pub clip_frames: Mat,
    /// Teacher's pooled video feature, length D.
    pub teacher_video: Vec<f64>,
}

impl VideoRecord {
    pub fn frame_count(&self) -> usize {
        self.raw_frames.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryRecord {
    pub id: String,
    /// W×D token embeddings.
    pub words: Mat,
    /// Sentence ([EOS]) embedding, length D.
    pub sentence: Vec<f64>,
    pub ground_truth_video: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: Option<u64>,
    pub generator: Option<String>,
    pub created_unix: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBundle {
    pub videos: Vec<VideoRecord>,
    pub queries: Vec<QueryRecord>,
    pub raw_dim: usize,
    pub dim: usize,
    pub provenance: Provenance,
}

impl CorpusBundle {
    pub fn video_position(&self) -> HashMap<&str, usize> {
        self.videos.iter().enumerate().map(|(i, v)| (v.id.as_str(), i)).collect()
    }

    pub fn video(&self, id: &str) -> Option<&VideoRecord> {
        self.videos.iter().find(|v| v.id == id)
    }

    pub fn query(&self, id: &str) -> Option<&QueryRecord> {
        self.queries.iter().find(|q| q.id == id)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            format: "PCLP".into(),
            version: CORPUS_VERSION,
            n_videos: self.videos.len(),
            n_queries: self.queries.len(),
            raw_dim: self.raw_dim,
            dim: self.dim,
            provenance: self.provenance.clone(),
        }
    }
}

/// Sidecar JSON contents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u16,
    pub n_videos: usize,
    pub n_queries: usize,
    pub raw_dim: usize,
    pub dim: usize,
    #[serde(flatten)]
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_videos: usize,
    pub n_queries: usize,
    /// Inclusive range of frames per video.
    pub frames_per_video: (usize, usize),
    pub raw_dim: usize,
    pub dim: usize,
    pub words_per_query: usize,
    pub duration_range: (f64, f64),
    /// Planted signal strength; `f64::INFINITY` gives noise-free relevant frames.
    pub relevance_snr: f64,
    pub relevant_frame_fraction: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_videos: 50,
            n_queries: 50,
            frames_per_video: (32, 32),
            raw_dim: 48,
            dim: 32,
            words_per_query: 8,
            duration_range: (10.0, 120.0),
            relevance_snr: 10.0,
            relevant_frame_fraction: 0.5,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.n_videos == 0 || self.n_queries == 0 {
            return bad("n_videos and n_queries must be at least 1");
        }
        if self.frames_per_video.0 == 0 || self.frames_per_video.0 > self.frames_per_video.1 {
            return bad("frames_per_video must be a nonempty range starting at 1 or more");
        }
        if self.raw_dim == 0 || self.dim == 0 || self.words_per_query == 0 {
            return bad("dimensions and words_per_query must be at least 1");
        }
        let (lo, hi) = self.duration_range;
        if !(lo.is_finite() && hi.is_finite() && lo >= 0.0 && lo <= hi) {
            return bad("duration_range must be finite with 0 <= lo <= hi");
        }
        if !(self.relevance_snr > 0.0) || self.relevance_snr.is_nan() {
            return bad("relevance_snr must be positive");
        }
        let f = self.relevant_frame_fraction;
        if !(f > 0.0 && f <= 1.0) {
            return bad("relevant_frame_fraction must lie in (0, 1]");
        }
        Ok(())
    }
}

fn q32(x: f64) -> f64 {
    x as f32 as f64
}

fn q32_vec(v: Vec<f64>) -> Vec<f64> {
    v.into_iter().map(q32).collect()
}

/// `base + noise/snr` with noise ~ N(0, I/D); exact `base` when snr is infinite.
fn perturb(base: &[f64], snr: f64, rng: &mut SplitMix64) -> Vec<f64> {
    let std = 1.0 / (base.len() as f64).sqrt();
    let noise: Vec<f64> = base.iter().map(|_| std * rng.gaussian()).collect();
    if snr.is_infinite() {
        return base.to_vec();
    }
    base.iter().zip(noise).map(|(b, n)| b + n / snr).collect()
}

fn orthogonalize(v: &[f64], against: &[f64]) -> Vec<f64> {
    let proj = crate::tensor::dot(v, against);
    let out: Vec<f64> = v.iter().zip(against).map(|(a, b)| a - proj * b).collect();
    normalized(&out)
}

/// Builds a corpus with planted relevance. Generation order on a single
/// SplitMix64 stream seeded with `spec.seed`:
///
/// 1. extractor matrix E (D_v×D, entries N(0, 1/D));
/// 2. per query: direction (unit vector; queries beyond `n_videos` perturb
///    the direction of query `q mod n_videos`), then W word rows
///    `normalize(direction + N(0, I/D))`;
/// 3. per video: frame count, duration, relevant-frame subset (if the video
///    is some query's ground truth), then per frame the teacher row and the
///    raw row `E · (teacher row + raw noise)`.
///
/// Relevant teacher rows are `direction + noise/snr`; other rows are uniform
/// unit directions, orthogonalized against the owner's direction when snr is
/// infinite. Teacher video = normalized mean of relevant rows (all rows for
/// videos nobody asks about). All floats are rounded to f32.
pub fn synth_corpus(spec: &SynthSpec) -> Result<CorpusBundle> {
    spec.validate()?;
    let mut rng = SplitMix64::new(spec.seed);
    let d = spec.dim;
    let snr = spec.relevance_snr;
    let extractor = Mat::gaussian(spec.raw_dim, d, 1.0 / (d as f64).sqrt(), &mut rng);

    let mut directions: Vec<Vec<f64>> = Vec::with_capacity(spec.n_queries);
    let mut queries = Vec::with_capacity(spec.n_queries);
    for q in 0..spec.n_queries {
        let dir = if q < spec.n_videos {
            rng.unit_vector(d)
        } else {
            normalized(&perturb(&directions[q % spec.n_videos], snr, &mut rng))
        };
        let words: Vec<Vec<f64>> = (0..spec.words_per_query)
            .map(|_| q32_vec(normalized(&perturb(&dir, 1.0, &mut rng))))
            .collect();
        queries.push(QueryRecord {
            id: query_id(q),
            words: Mat::from_rows(&words),
            sentence: q32_vec(dir.clone()),
            ground_truth_video: video_id(q % spec.n_videos),
        });
        directions.push(dir);
    }

    let mut videos = Vec::with_capacity(spec.n_videos);
    for v in 0..spec.n_videos {
        let n = rng.range_inclusive(spec.frames_per_video.0, spec.frames_per_video.1);
        let duration = q32(rng.uniform(spec.duration_range.0, spec.duration_range.1.max(spec.duration_range.0)));
        let owner = (v < spec.n_queries).then(|| &directions[v]);
        let relevant: HashSet<usize> = match owner {
            Some(_) => {
                let count = ((spec.relevant_frame_fraction * n as f64).round() as usize).clamp(1, n);
                rng.choose_indices(n, count).into_iter().collect()
            }
            None => HashSet::new(),
        };
        let mut clip_rows = Vec::with_capacity(n);
        let mut raw_rows = Vec::with_capacity(n);
        for f in 0..n {
            let (clip, raw_src) = match owner {
                Some(dir) if relevant.contains(&f) => {
                    let clip = perturb(dir, snr, &mut rng);
                    let raw_src = perturb(dir, snr, &mut rng);
                    (clip, raw_src)
                }
                _ => {
                    let mut dist = rng.unit_vector(d);
                    if let (Some(dir), true) = (owner, snr.is_infinite()) {
                        dist = orthogonalize(&dist, dir);
                    }
                    (dist.clone(), dist)
                }
            };
            let raw: Vec<f64> = (0..spec.raw_dim).map(|r| crate::tensor::dot(extractor.row(r), &raw_src)).collect();
            clip_rows.push(q32_vec(clip));
            raw_rows.push(q32_vec(raw));
        }
        let pooled_rows: Vec<&Vec<f64>> = if relevant.is_empty() {
            clip_rows.iter().collect()
        } else {
            let mut idx: Vec<usize> = relevant.iter().copied().collect();
            idx.sort_unstable();
            idx.into_iter().map(|i| &clip_rows[i]).collect()
        };
        let mut mean = vec![0.0; d];
        for row in &pooled_rows {
            for (m, x) in mean.iter_mut().zip(row.iter()) {
                *m += x;
            }
        }
        videos.push(VideoRecord {
            id: video_id(v),
            duration_s: duration,
            raw_frames: Mat::from_rows(&raw_rows),
            clip_frames: Mat::from_rows(&clip_rows),
            teacher_video: q32_vec(normalized(&mean)),
        });
    }

    Ok(CorpusBundle {
        videos,
        queries,
        raw_dim: spec.raw_dim,
        dim: d,
        provenance: Provenance {
            seed: Some(spec.seed),
            generator: Some(GENERATOR_VERSION.to_string()),
            created_unix: None,
        },
    })
}

pub fn video_id(i: usize) -> String {
    format!("video{i:05}")
}

pub fn query_id(i: usize) -> String {
    format!("query{i:05}")
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub(crate) fn write_id(out: &mut Vec<u8>, id: &str) -> Result<()> {
    let len = u16::try_from(id.len()).map_err(|_| Error::InvalidArgument(format!("id too long: {id}")))?;
    out.write_u16::<LittleEndian>(len)?;
    out.write_all(id.as_bytes())?;
    Ok(())
}

pub(crate) fn write_f32s(out: &mut Vec<u8>, values: &[f64]) -> Result<()> {
    for &v in values {
        out.write_f32::<LittleEndian>(v as f32)?;
    }
    Ok(())
}

/// Byte reader that reports short reads as truncation.
pub(crate) struct Reader<'a> {
    cur: Cursor<&'a [u8]>,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8]) -> Self {
        Self { cur: Cursor::new(bytes) }
    }

    fn eof(what: &str) -> Error {
        Error::TruncatedPayload(format!("unexpected end of data while reading {what}"))
    }

    pub(crate) fn magic(&mut self, expected: [u8; 4]) -> Result<()> {
        let mut found = [0u8; 4];
        self.cur.read_exact(&mut found).map_err(|_| Error::BadMagic { expected, found })?;
        if found != expected {
            return Err(Error::BadMagic { expected, found });
        }
        Ok(())
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        self.cur.read_u16::<LittleEndian>().map_err(|_| Self::eof(what))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        self.cur.read_u32::<LittleEndian>().map_err(|_| Self::eof(what))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        self.cur.read_u64::<LittleEndian>().map_err(|_| Self::eof(what))
    }

    pub(crate) fn f32(&mut self, what: &str) -> Result<f64> {
        self.cur.read_f32::<LittleEndian>().map(f64::from).map_err(|_| Self::eof(what))
    }

    pub(crate) fn f32s(&mut self, count: usize, what: &str) -> Result<Vec<f64>> {
        let remaining = self.remaining();
        if count.checked_mul(4).is_none_or(|bytes| bytes > remaining) {
            return Err(Self::eof(what));
        }
        (0..count).map(|_| self.f32(what)).collect()
    }

    pub(crate) fn mat(&mut self, rows: usize, cols: usize, what: &str) -> Result<Mat> {
        Ok(Mat::from_vec(rows, cols, self.f32s(rows * cols, what)?))
    }

    pub(crate) fn id(&mut self, what: &str) -> Result<String> {
        let len = self.u16(what)? as usize;
        if len > self.remaining() {
            return Err(Self::eof(what));
        }
        let mut buf = vec![0u8; len];
        self.cur.read_exact(&mut buf).map_err(|_| Self::eof(what))?;
        String::from_utf8(buf).map_err(|_| Error::InvalidData(format!("{what} is not UTF-8")))
    }

    pub(crate) fn remaining(&self) -> usize {
        self.cur.get_ref().len() - self.cur.position() as usize
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.remaining() != 0 {
            return Err(dim_err(format!("{} bytes beyond the payload declared by the header", self.remaining())));
        }
        Ok(())
    }
}

pub fn encode_corpus(bundle: &CorpusBundle) -> Result<Vec<u8>> {
    let (dv, d) = (bundle.raw_dim, bundle.dim);
    let mut out = Vec::new();
    out.extend_from_slice(&CORPUS_MAGIC);
    out.write_u16::<LittleEndian>(CORPUS_VERSION)?;
    let flags = if bundle.provenance.generator.is_some() { FLAG_SYNTHETIC } else { 0 };
    out.write_u16::<LittleEndian>(flags)?;
    out.write_u32::<LittleEndian>(dv as u32)?;
    out.write_u32::<LittleEndian>(d as u32)?;
    out.write_u32::<LittleEndian>(bundle.videos.len() as u32)?;
    out.write_u32::<LittleEndian>(bundle.queries.len() as u32)?;
    for v in &bundle.videos {
        let n = v.raw_frames.rows();
        if v.raw_frames.cols() != dv || v.clip_frames.shape() != (n, d) || v.teacher_video.len() != d {
            return Err(dim_err(format!("video {} does not match header dims D_v={dv}, D={d}", v.id)));
        }
        write_id(&mut out, &v.id)?;
        out.write_f32::<LittleEndian>(v.duration_s as f32)?;
        out.write_u32::<LittleEndian>(n as u32)?;
        write_f32s(&mut out, v.raw_frames.data())?;
        write_f32s(&mut out, v.clip_frames.data())?;
        write_f32s(&mut out, &v.teacher_video)?;
    }
    for q in &bundle.queries {
        if q.words.cols() != d || q.sentence.len() != d {
            return Err(dim_err(format!("query {} does not match header dim D={d}", q.id)));
        }
        write_id(&mut out, &q.id)?;
        out.write_u32::<LittleEndian>(q.words.rows() as u32)?;
        write_f32s(&mut out, q.words.data())?;
        write_f32s(&mut out, &q.sentence)?;
        write_id(&mut out, &q.ground_truth_video)?;
    }
    Ok(out)
}

pub fn decode_corpus(bytes: &[u8]) -> Result<CorpusBundle> {
    let mut r = Reader::new(bytes);
    r.magic(CORPUS_MAGIC)?;
    let version = r.u16("version")?;
    if version != CORPUS_VERSION {
        return Err(Error::VersionMismatch { expected: CORPUS_VERSION, found: version });
    }
    let flags = r.u16("flags")?;
    let dv = r.u32("D_v")? as usize;
    let d = r.u32("D")? as usize;
    let n_videos = r.u32("n_videos")? as usize;
    let n_queries = r.u32("n_queries")? as usize;
    if dv == 0 || d == 0 {
        return Err(dim_err("header declares a zero dimension"));
    }
    let mut videos = Vec::with_capacity(n_videos.min(1 << 16));
    for _ in 0..n_videos {
        let id = r.id("video id")?;
        let duration_s = r.f32("duration")?;
        let n = r.u32("frame count")? as usize;
        let raw_frames = r.mat(n, dv, "raw frames")?;
        let clip_frames = r.mat(n, d, "clip frames")?;
        let teacher_video = r.f32s(d, "teacher video")?;
        videos.push(VideoRecord { id, duration_s, raw_frames, clip_frames, teacher_video });
    }
    let mut queries = Vec::with_capacity(n_queries.min(1 << 16));
    for _ in 0..n_queries {
        let id = r.id("query id")?;
        let w = r.u32("word count")? as usize;
        let words = r.mat(w, d, "words")?;
        let sentence = r.f32s(d, "sentence")?;
        let ground_truth_video = r.id("ground-truth id")?;
        queries.push(QueryRecord { id, words, sentence, ground_truth_video });
    }
    r.finish()?;
    let provenance = if flags & FLAG_SYNTHETIC != 0 {
        Provenance { generator: Some(GENERATOR_VERSION.to_string()), ..Provenance::default() }
    } else {
        Provenance::default()
    };
    Ok(CorpusBundle { videos, queries, raw_dim: dv, dim: d, provenance })
}

/// Writes the binary corpus and its JSON sidecar.
pub fn write_corpus(bundle: &CorpusBundle, path: &Path) -> Result<()> {
    let bytes = encode_corpus(bundle)?;
    std::fs::write(path, bytes)?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&bundle.manifest())?)?;
    Ok(())
}

/// Reads a corpus; provenance comes from the sidecar when it is present.
pub fn read_corpus(path: &Path) -> Result<CorpusBundle> {
    let bytes = std::fs::read(path)?;
    let mut bundle = decode_corpus(&bytes)?;
    let sidecar = sidecar_path(path);
    if sidecar.exists() {
        let manifest: Manifest = serde_json::from_str(&std::fs::read_to_string(sidecar)?)?;
        if manifest.n_videos != bundle.videos.len() || manifest.n_queries != bundle.queries.len() {
            return Err(dim_err("sidecar counts disagree with the corpus header"));
        }
        bundle.provenance = manifest.provenance;
    }
    Ok(bundle)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    DuplicateVideoId(String),
    DuplicateQueryId(String),
    NoFrames { video: String },
    FrameCountMismatch { video: String, raw: usize, clip: usize },
    WrongWidth { record: String, field: &'static str, expected: usize, found: usize },
    NonFinite { record: String, field: &'static str, row: usize },
    NegativeDuration { video: String },
    NoWords { query: String },
    SentenceOutOfRange { query: String },
    UnknownGroundTruth { query: String, video: String },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::DuplicateVideoId(id) => write!(f, "duplicate video id {id}"),
            Violation::DuplicateQueryId(id) => write!(f, "duplicate query id {id}"),
            Violation::NoFrames { video } => write!(f, "video {video} has no frames"),
            Violation::FrameCountMismatch { video, raw, clip } => {
                write!(f, "video {video}: {raw} raw frames vs {clip} clip frames")
            }
            Violation::WrongWidth { record, field, expected, found } => {
                write!(f, "{record}: {field} width {found}, expected {expected}")
            }
            Violation::NonFinite { record, field, row } => write!(f, "{record}: non-finite value in {field} row {row}"),
            Violation::NegativeDuration { video } => write!(f, "video {video} has a negative or NaN duration"),
            Violation::NoWords { query } => write!(f, "query {query} has no words"),
            Violation::SentenceOutOfRange { query } => {
                write!(f, "query {query}: sentence entries must be finite and within [-1, 1]")
            }
            Violation::UnknownGroundTruth { query, video } => {
                write!(f, "query {query}: ground truth {video} is not in the corpus")
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

fn non_finite_rows(m: &Mat) -> impl Iterator<Item = usize> + '_ {
    m.row_iter().enumerate().filter(|(_, r)| r.iter().any(|x| !x.is_finite())).map(|(i, _)| i)
}

pub fn validate_corpus(bundle: &CorpusBundle) -> ValidationReport {
    let mut out = Vec::new();
    let (dv, d) = (bundle.raw_dim, bundle.dim);
    let mut seen = HashSet::new();
    for v in &bundle.videos {
        if !seen.insert(v.id.as_str()) {
            out.push(Violation::DuplicateVideoId(v.id.clone()));
        }
        let (n_raw, n_clip) = (v.raw_frames.rows(), v.clip_frames.rows());
        if n_raw == 0 {
            out.push(Violation::NoFrames { video: v.id.clone() });
        }
        if n_raw != n_clip {
            out.push(Violation::FrameCountMismatch { video: v.id.clone(), raw: n_raw, clip: n_clip });
        }
        for (field, found, expected) in [
            ("raw_frames", v.raw_frames.cols(), dv),
            ("clip_frames", v.clip_frames.cols(), d),
            ("teacher_video", v.teacher_video.len(), d),
        ] {
            if found != expected {
                out.push(Violation::WrongWidth { record: v.id.clone(), field, expected, found });
            }
        }
        for row in non_finite_rows(&v.raw_frames) {
            out.push(Violation::NonFinite { record: v.id.clone(), field: "raw_frames", row });
        }
        for row in non_finite_rows(&v.clip_frames) {
            out.push(Violation::NonFinite { record: v.id.clone(), field: "clip_frames", row });
        }
        if v.teacher_video.iter().any(|x| !x.is_finite()) {
            out.push(Violation::NonFinite { record: v.id.clone(), field: "teacher_video", row: 0 });
        }
        if !(v.duration_s >= 0.0) {
            out.push(Violation::NegativeDuration { video: v.id.clone() });
        }
    }
    let mut seen_q = HashSet::new();
    for q in &bundle.queries {
        if !seen_q.insert(q.id.as_str()) {
            out.push(Violation::DuplicateQueryId(q.id.clone()));
        }
        if q.words.rows() == 0 {
            out.push(Violation::NoWords { query: q.id.clone() });
        }
        if q.words.cols() != d {
            out.push(Violation::WrongWidth { record: q.id.clone(), field: "words", expected: d, found: q.words.cols() });
        }
        if q.sentence.len() != d {
            out.push(Violation::WrongWidth { record: q.id.clone(), field: "sentence", expected: d, found: q.sentence.len() });
        }
        for row in non_finite_rows(&q.words) {
            out.push(Violation::NonFinite { record: q.id.clone(), field: "words", row });
        }
        if q.sentence.iter().any(|x| !x.is_finite() || x.abs() > 1.0) {
            out.push(Violation::SentenceOutOfRange { query: q.id.clone() });
        }
        if !seen.contains(q.ground_truth_video.as_str()) {
            out.push(Violation::UnknownGroundTruth { query: q.id.clone(), video: q.ground_truth_video.clone() });
        }
    }
    ValidationReport { violations: out }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pruner::cosine;

    fn small() -> SynthSpec {
        SynthSpec {
            n_videos: 6,
            n_queries: 5,
            frames_per_video: (3, 7),
            raw_dim: 6,
            dim: 4,
            words_per_query: 3,
            seed: 7,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn synthesis_is_deterministic() {
        let a = synth_corpus(&small()).unwrap();
        let b = synth_corpus(&small()).unwrap();
        assert_eq!(encode_corpus(&a).unwrap(), encode_corpus(&b).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn noise_free_teacher_matches_sentence() {
        let spec = SynthSpec {
            n_videos: 1,
            n_queries: 1,
            relevant_frame_fraction: 1.0,
            relevance_snr: f64::INFINITY,
            ..small()
        };
        let c = synth_corpus(&spec).unwrap();
        let cos = cosine(&c.videos[0].teacher_video, &c.queries[0].sentence);
        assert!((cos - 1.0).abs() < 1e-6, "cos {cos}");
    }

    #[test]
    fn rejects_invalid_specs() {
        for spec in [
            SynthSpec { n_videos: 0, ..small() },
            SynthSpec { n_queries: 0, ..small() },
            SynthSpec { relevance_snr: 0.0, ..small() },
            SynthSpec { relevance_snr: f64::NAN, ..small() },
            SynthSpec { relevant_frame_fraction: 0.0, ..small() },
            SynthSpec { duration_range: (0.0, f64::INFINITY), ..small() },
            SynthSpec { frames_per_video: (0, 3), ..small() },
        ] {
            assert_eq!(synth_corpus(&spec).unwrap_err().code(), "invalid-argument");
        }
    }

    #[test]
    fn durations_span_requested_range() {
        let c = synth_corpus(&SynthSpec { n_videos: 40, ..small() }).unwrap();
        assert!(c.videos.iter().all(|v| (10.0..=120.0).contains(&v.duration_s)));
        assert!(c.videos.iter().any(|v| v.duration_s <= 60.0));
        assert!(c.videos.iter().any(|v| v.duration_s > 60.0));
    }

    #[test]
    fn valid_bundle_has_empty_report() {
        assert!(validate_corpus(&synth_corpus(&small()).unwrap()).is_valid());
    }

    #[test]
    fn duplicate_id_reported_once() {
        let mut c = synth_corpus(&small()).unwrap();
        c.videos[2].id = c.videos[1].id.clone();
        let report = validate_corpus(&c);
        let dups: Vec<_> = report.violations.iter().filter(|v| matches!(v, Violation::DuplicateVideoId(_))).collect();
        assert_eq!(dups, vec![&Violation::DuplicateVideoId(c.videos[1].id.clone())]);
        assert!(report.violations.contains(&Violation::UnknownGroundTruth {
            query: c.queries[2].id.clone(),
            video: "video00002".into()
        }));
    }

    #[test]
    fn nan_row_reported_with_location() {
        let mut c = synth_corpus(&small()).unwrap();
        c.videos[3].clip_frames[(2, 1)] = f64::NAN;
        let report = validate_corpus(&c);
        assert_eq!(
            report.violations,
            vec![Violation::NonFinite { record: c.videos[3].id.clone(), field: "clip_frames", row: 2 }]
        );
    }

    #[test]
    fn corrupted_magic_and_truncation() {
        let c = synth_corpus(&small()).unwrap();
        let mut bytes = encode_corpus(&c).unwrap();
        let cut = bytes.len() - 9;
        assert_eq!(decode_corpus(&bytes[..cut]).unwrap_err().code(), "truncated-payload");
        bytes[0] = b'X';
        assert_eq!(decode_corpus(&bytes).unwrap_err().code(), "bad-magic");
    }

    #[test]
    fn version_and_trailing_bytes() {
        let c = synth_corpus(&small()).unwrap();
        let mut bytes = encode_corpus(&c).unwrap();
        let mut extra = bytes.clone();
        extra.push(0);
        assert_eq!(decode_corpus(&extra).unwrap_err().code(), "dimension-mismatch");
        bytes[4] = 9;
        assert_eq!(decode_corpus(&bytes).unwrap_err().code(), "version-mismatch");
    }
}
