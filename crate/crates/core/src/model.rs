//! All learnable parameters of the pipeline and the checkpoint file.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! "PCLW" u16 version=1 u16 trainable-bitmask
//! u32 D_v u32 D u32 scorer_hidden u32 distill_heads u32 distill_ffn
//! u32 short_depth u32 long_depth f64 threshold_s u32 n_tensors
//! per tensor: u16 len, name bytes, u32 rows, u32 cols, rows·cols f32
//! ```

use std::path::Path;

use byteorder::{LittleEndian, WriteBytesExt};
use sha2::{Digest, Sha256};

use crate::aggregator::AggregatorParams;
use crate::corpus::{write_f32s, write_id, Reader};
use crate::error::{dim_err, Error, Result};
use crate::layers::ParamSet;
use crate::prompt::GateParams;
use crate::pruner::{DistillParams, DISTILL_FFN, DISTILL_HEADS};
use crate::rng::SplitMix64;
use crate::sampler::ScorerParams;
use crate::temporal::{DepthRule, EncoderParams};
use crate::tensor::Mat;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PCLW";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Encoder,
    Gate,
    Scorer,
    Aggregator,
    Distill,
}

impl ParamGroup {
    pub const ALL: [ParamGroup; 5] =
        [ParamGroup::Encoder, ParamGroup::Gate, ParamGroup::Scorer, ParamGroup::Aggregator, ParamGroup::Distill];

    pub fn name(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Gate => "gate",
            ParamGroup::Scorer => "scorer",
            ParamGroup::Aggregator => "aggregator",
            ParamGroup::Distill => "distill",
        }
    }

    fn bit(self) -> u16 {
        1 << (self as u16)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelConfig {
    pub raw_dim: usize,
    pub dim: usize,
    pub scorer_hidden: usize,
    pub distill_heads: usize,
    pub distill_ffn: usize,
    pub depth_rule: DepthRule,
}

impl ModelConfig {
    pub fn new(raw_dim: usize, dim: usize) -> Self {
        Self {
            raw_dim,
            dim,
            scorer_hidden: dim,
            distill_heads: DISTILL_HEADS,
            distill_ffn: DISTILL_FFN,
            depth_rule: DepthRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.raw_dim == 0 || self.dim == 0 || self.scorer_hidden == 0 || self.distill_ffn == 0 {
            return Err(Error::InvalidArgument("model dimensions must be positive".into()));
        }
        if self.distill_heads == 0 || !self.dim.is_multiple_of(self.distill_heads) {
            return Err(Error::InvalidArgument(format!(
                "distill head count {} must divide width {}",
                self.distill_heads, self.dim
            )));
        }
        if self.depth_rule.short_depth == 0 || self.depth_rule.long_depth == 0 {
            return Err(Error::InvalidArgument("encoder depths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub encoder: EncoderParams,
    pub gate: GateParams,
    pub scorer: ScorerParams,
    pub aggregator: AggregatorParams,
    pub distill: DistillParams,
    trainable: u16,
}

impl ModelParams {
    /// Seeded initialization; every value is representable in f32, so a fresh
    /// model survives a checkpoint round trip unchanged.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let root = SplitMix64::new(seed);
        let d = config.dim;
        let mut model = Self {
            config,
            encoder: EncoderParams::init(config.raw_dim, d, config.depth_rule, &mut root.fork(1)),
            gate: GateParams::init(d, &mut root.fork(2)),
            scorer: ScorerParams::init(d, config.scorer_hidden, &mut root.fork(3)),
            aggregator: AggregatorParams::init(d, &mut root.fork(4)),
            distill: DistillParams::init_with(d, config.distill_heads, config.distill_ffn, &mut root.fork(5)),
            trainable: ParamGroup::ALL.iter().map(|g| g.bit()).sum(),
        };
        model.quantize();
        Ok(model)
    }

    pub fn is_trainable(&self, group: ParamGroup) -> bool {
        self.trainable & group.bit() != 0
    }

    pub fn set_trainable(&mut self, group: ParamGroup, on: bool) {
        if on {
            self.trainable |= group.bit();
        } else {
            self.trainable &= !group.bit();
        }
    }

    /// Freezes everything except `group`.
    pub fn train_only(&mut self, group: ParamGroup) {
        self.trainable = group.bit();
    }

    pub fn group(&self, group: ParamGroup) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        match group {
            ParamGroup::Encoder => self.encoder.collect("encoder", &mut out),
            ParamGroup::Gate => self.gate.collect("gate", &mut out),
            ParamGroup::Scorer => self.scorer.collect("scorer", &mut out),
            ParamGroup::Aggregator => self.aggregator.collect("aggregator", &mut out),
            ParamGroup::Distill => self.distill.collect("distill", &mut out),
        }
        out
    }

    pub fn group_mut(&mut self, group: ParamGroup) -> Vec<(String, &mut Mat)> {
        let mut out = Vec::new();
        match group {
            ParamGroup::Encoder => self.encoder.collect_mut("encoder", &mut out),
            ParamGroup::Gate => self.gate.collect_mut("gate", &mut out),
            ParamGroup::Scorer => self.scorer.collect_mut("scorer", &mut out),
            ParamGroup::Aggregator => self.aggregator.collect_mut("aggregator", &mut out),
            ParamGroup::Distill => self.distill.collect_mut("distill", &mut out),
        }
        out
    }

    pub fn quantize(&mut self) {
        for (_, m) in self.tensors_mut() {
            *m = m.quantize_f32();
        }
    }

    /// First 8 bytes of SHA-256 over the checkpoint encoding.
    pub fn fingerprint(&self) -> u64 {
        let bytes = encode_checkpoint(self).expect("in-memory checkpoint encoding");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
    }
}

impl ParamSet for ModelParams {
    fn collect<'a>(&'a self, _prefix: &str, out: &mut Vec<(String, &'a Mat)>) {
        for g in ParamGroup::ALL {
            out.extend(self.group(g));
        }
    }
    fn collect_mut<'a>(&'a mut self, _prefix: &str, out: &mut Vec<(String, &'a mut Mat)>) {
        self.encoder.collect_mut("encoder", out);
        self.gate.collect_mut("gate", out);
        self.scorer.collect_mut("scorer", out);
        self.aggregator.collect_mut("aggregator", out);
        self.distill.collect_mut("distill", out);
    }
}

pub fn encode_checkpoint(model: &ModelParams) -> Result<Vec<u8>> {
    let c = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.write_u16::<LittleEndian>(CHECKPOINT_VERSION)?;
    out.write_u16::<LittleEndian>(model.trainable)?;
    for v in [c.raw_dim, c.dim, c.scorer_hidden, c.distill_heads, c.distill_ffn, c.depth_rule.short_depth, c.depth_rule.long_depth] {
        out.write_u32::<LittleEndian>(v as u32)?;
    }
    out.write_f64::<LittleEndian>(c.depth_rule.threshold_s)?;
    let tensors = model.tensors();
    out.write_u32::<LittleEndian>(tensors.len() as u32)?;
    for (name, m) in tensors {
        write_id(&mut out, &name)?;
        out.write_u32::<LittleEndian>(m.rows() as u32)?;
        out.write_u32::<LittleEndian>(m.cols() as u32)?;
        write_f32s(&mut out, m.data())?;
    }
    Ok(out)
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut r = Reader::new(bytes);
    r.magic(CHECKPOINT_MAGIC)?;
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch { expected: CHECKPOINT_VERSION, found: version });
    }
    let trainable = r.u16("trainable flags")?;
    let mut dims = [0usize; 7];
    for (i, d) in dims.iter_mut().enumerate() {
        *d = r.u32(&format!("config field {i}"))? as usize;
    }
    let threshold_s = f64::from_bits(r.u64("depth threshold")?);
    let config = ModelConfig {
        raw_dim: dims[0],
        dim: dims[1],
        scorer_hidden: dims[2],
        distill_heads: dims[3],
        distill_ffn: dims[4],
        depth_rule: DepthRule { short_depth: dims[5], long_depth: dims[6], threshold_s },
    };
    config.validate().map_err(|e| dim_err(format!("checkpoint header: {e}")))?;
    let mut model = ModelParams::init(config, 0)?;
    model.trainable = trainable;
    let count = r.u32("tensor count")? as usize;
    let mut slots = model.tensors_mut();
    if count != slots.len() {
        return Err(dim_err(format!("checkpoint has {count} tensors, configuration implies {}", slots.len())));
    }
    for (name, slot) in slots.iter_mut() {
        let found = r.id("tensor name")?;
        if &found != name {
            return Err(Error::InvalidData(format!("expected tensor {name}, found {found}")));
        }
        let rows = r.u32("tensor rows")? as usize;
        let cols = r.u32("tensor cols")? as usize;
        if (rows, cols) != slot.shape() {
            return Err(dim_err(format!("tensor {name}: {rows}x{cols} vs expected {:?}", slot.shape())));
        }
        **slot = r.mat(rows, cols, name)?;
    }
    drop(slots);
    r.finish()?;
    Ok(model)
}

pub fn write_checkpoint(model: &ModelParams, path: &Path) -> Result<()> {
    std::fs::write(path, encode_checkpoint(model)?)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<ModelParams> {
    decode_checkpoint(&std::fs::read(path)?)
}
