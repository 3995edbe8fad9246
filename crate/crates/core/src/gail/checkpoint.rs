//! Binary checkpoint container.
//!
//! Layout (little-endian):
//! `"EGAIL"`, `u32` version, `u8` precision bits, three length-prefixed UTF-8
//! blocks (canonical config JSON, newline-joined vocabulary, state JSON), a
//! `u32` segment count, the segments, and a trailing SHA-256 of everything
//! before it. A segment is a `u16`-prefixed name, `u8` rank, `u32` dims, a
//! `u64` byte length, the raw values and the SHA-256 of those values.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::discriminator::{DiscConfig, Discriminator};
use crate::numcore::{AdamWState, LrSchedule, ParamSet, Precision, Real, Tensor};
use crate::policy::{Policy, PolicyConfig};
use crate::ppo::GenOptimizer;
use crate::textdata::Vocab;

use super::{GailError, Models, TrainConfig, TrainState};

pub const MAGIC: &[u8; 5] = b"EGAIL";
pub const FORMAT_VERSION: u32 = 1;

/// Every configuration needed to rebuild the models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointConfig {
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub disc: DiscConfig,
    pub vocab_hash: String,
}

impl CheckpointConfig {
    pub fn canonical_text(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical text, hex encoded.
    pub fn hash(&self) -> String {
        hex(&Sha256::digest(self.canonical_text().as_bytes()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerMeta {
    step: u64,
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateBlock {
    train: TrainState,
    generator_optimizer: OptimizerMeta,
    generator_schedule: LrSchedule,
    disc_optimizer: OptimizerMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Real> {
    pub config: CheckpointConfig,
    pub vocab: Vocab,
    pub state: TrainState,
    pub models: Models<T>,
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn opt_meta<T: Real>(s: &AdamWState<T>) -> OptimizerMeta {
    OptimizerMeta {
        step: s.step,
        lr: s.lr,
        weight_decay: s.weight_decay,
        beta1: s.beta1,
        beta2: s.beta2,
        eps: s.eps,
    }
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn text(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
    fn segment<T: Real>(&mut self, name: &str, shape: &[usize], data: &[T]) {
        self.u16(name.len() as u16);
        self.buf.extend_from_slice(name.as_bytes());
        self.u8(shape.len() as u8);
        for &d in shape {
            self.u32(d as u32);
        }
        let mut raw = Vec::with_capacity(data.len() * T::BYTES);
        for &v in data {
            v.write_le(&mut raw);
        }
        self.u64(raw.len() as u64);
        self.buf.extend_from_slice(&raw);
        self.buf.extend_from_slice(&Sha256::digest(&raw));
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], GailError> {
        if self.pos + n > self.buf.len() {
            return Err(GailError::Corrupt(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, GailError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, GailError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, GailError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, GailError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn text(&mut self) -> Result<&'a str, GailError> {
        let n = self.u32()? as usize;
        std::str::from_utf8(self.take(n)?).map_err(|e| GailError::Corrupt(e.to_string()))
    }
    fn segment<T: Real>(&mut self, precision: Precision) -> Result<(String, Tensor<T>), GailError> {
        let n = self.u16()? as usize;
        let name = std::str::from_utf8(self.take(n)?)
            .map_err(|e| GailError::Corrupt(e.to_string()))?
            .to_string();
        let rank = self.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(self.u32()? as usize);
        }
        let len = self.u64()? as usize;
        let raw = self.take(len)?;
        let digest = self.take(32)?;
        if Sha256::digest(raw).as_slice() != digest {
            return Err(GailError::Corrupt(format!("checksum mismatch in segment {name}")));
        }
        let width = precision.bits() as usize / 8;
        let data: Vec<T> = raw
            .chunks_exact(width)
            .map(|b| match precision {
                Precision::F32 => T::from_f64_lossy(f32::read_le(b) as f64),
                Precision::F64 => T::from_f64_lossy(f64::read_le(b)),
            })
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| GailError::Corrupt(format!("{name}: {e}")))?;
        Ok((name, t))
    }
}

fn push_params<T: Real>(w: &mut Writer, prefix: &str, p: &ParamSet<T>) {
    for (name, t) in p.iter() {
        w.segment(&format!("{prefix}/{name}"), t.shape(), t.data());
    }
}

fn push_moments<T: Real>(w: &mut Writer, prefix: &str, p: &ParamSet<T>, s: &AdamWState<T>) {
    for (i, (name, t)) in p.iter().enumerate() {
        w.segment(&format!("{prefix}/m/{name}"), t.shape(), &s.first_moment[i]);
    }
    for (i, (name, t)) in p.iter().enumerate() {
        w.segment(&format!("{prefix}/v/{name}"), t.shape(), &s.second_moment[i]);
    }
}

impl<T: Real> Checkpoint<T> {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.models;
        let mut w = Writer { buf: Vec::new() };
        w.buf.extend_from_slice(MAGIC);
        w.u32(FORMAT_VERSION);
        w.u8(T::PRECISION.bits());
        w.text(&self.config.canonical_text());
        w.text(&self.vocab.tokens().join("\n"));
        let block = StateBlock {
            train: self.state.clone(),
            generator_optimizer: opt_meta(&m.gen_opt.adam),
            generator_schedule: m.gen_opt.schedule,
            disc_optimizer: opt_meta(&m.disc_opt),
        };
        w.text(&serde_json::to_string(&block).expect("state serializes"));
        let (pp, dp) = (m.policy.params(), m.disc.params());
        w.u32((3 * pp.len() + 3 * dp.len()) as u32);
        push_params(&mut w, "policy", pp);
        push_params(&mut w, "disc", dp);
        push_moments(&mut w, "generator_optimizer", pp, &m.gen_opt.adam);
        push_moments(&mut w, "disc_optimizer", dp, &m.disc_opt);
        let digest = Sha256::digest(&w.buf);
        w.buf.extend_from_slice(&digest);
        w.buf
    }

    /// Parses a container; values stored at another precision are converted.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GailError> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(GailError::Corrupt("missing EGAIL magic".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(GailError::Corrupt("container checksum mismatch".into()));
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(GailError::Corrupt(format!("unsupported format version {version}")));
        }
        let bits = r.u8()?;
        let precision = Precision::from_bits(bits)
            .ok_or_else(|| GailError::Corrupt(format!("unknown precision {bits}")))?;
        let config: CheckpointConfig = serde_json::from_str(r.text()?)
            .map_err(|e| GailError::Corrupt(format!("config: {e}")))?;
        let vocab = Vocab::from_tokens(r.text()?.split('\n').map(String::from).collect())
            .map_err(|e| GailError::Corrupt(format!("vocab: {e}")))?;
        if vocab.hash() != config.vocab_hash {
            return Err(GailError::Corrupt("vocabulary hash mismatch".into()));
        }
        let block: StateBlock = serde_json::from_str(r.text()?)
            .map_err(|e| GailError::Corrupt(format!("state: {e}")))?;
        let count = r.u32()? as usize;
        let mut segments = Vec::with_capacity(count);
        for _ in 0..count {
            segments.push(r.segment::<T>(precision)?);
        }
        if r.pos != body.len() {
            return Err(GailError::Corrupt("trailing bytes after segments".into()));
        }

        let mut it = segments.into_iter();
        let mut take_params = |prefix: &str, template: &ParamSet<T>| -> Result<ParamSet<T>, GailError> {
            let mut out = ParamSet::new();
            for name in template.names() {
                let (seg, t) = it
                    .next()
                    .ok_or_else(|| GailError::Corrupt(format!("missing segment {prefix}/{name}")))?;
                if seg != format!("{prefix}/{name}") {
                    return Err(GailError::Corrupt(format!("expected {prefix}/{name}, found {seg}")));
                }
                out.push(name.clone(), t);
            }
            Ok(out)
        };
        let policy_template = Policy::<T>::new(config.policy, 0)?;
        let disc_template = Discriminator::<T>::new(config.disc, 0)?;
        let pp = take_params("policy", policy_template.params())?;
        let dp = take_params("disc", disc_template.params())?;
        let gm = take_params("generator_optimizer/m", &pp)?;
        let gv = take_params("generator_optimizer/v", &pp)?;
        let dm = take_params("disc_optimizer/m", &dp)?;
        let dv = take_params("disc_optimizer/v", &dp)?;

        let policy = Policy::from_params(config.policy, pp)?;
        let disc = Discriminator::from_params(config.disc, dp)?;
        let restore = |meta: OptimizerMeta, m: ParamSet<T>, v: ParamSet<T>| AdamWState {
            step: meta.step,
            lr: meta.lr,
            weight_decay: meta.weight_decay,
            beta1: meta.beta1,
            beta2: meta.beta2,
            eps: meta.eps,
            first_moment: m.tensors().iter().map(|t| t.data().to_vec()).collect(),
            second_moment: v.tensors().iter().map(|t| t.data().to_vec()).collect(),
        };
        let models = Models {
            policy,
            disc,
            gen_opt: GenOptimizer {
                adam: restore(block.generator_optimizer, gm, gv),
                schedule: block.generator_schedule,
            },
            disc_opt: restore(block.disc_optimizer, dm, dv),
        };
        Ok(Checkpoint {
            config,
            vocab,
            state: block.train,
            models,
        })
    }

    /// Writes through a temporary file and renames it into place.
    pub fn save(&self, path: &Path) -> Result<(), GailError> {
        let bytes = self.to_bytes();
        let tmp = path.with_extension("egail.tmp");
        let io = |e: std::io::Error| GailError::Io(format!("{}: {e}", path.display()));
        let mut f = fs::File::create(&tmp).map_err(io)?;
        f.write_all(&bytes).map_err(io)?;
        f.sync_all().map_err(io)?;
        fs::rename(&tmp, path).map_err(io)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, GailError> {
        let bytes =
            fs::read(path).map_err(|e| GailError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}

/// Precision recorded in a checkpoint file header.
pub fn checkpoint_precision(path: &Path) -> Result<Precision, GailError> {
    let bytes = fs::read(path).map_err(|e| GailError::Io(format!("{}: {e}", path.display())))?;
    if bytes.len() < 10 || &bytes[..5] != MAGIC {
        return Err(GailError::Corrupt("missing EGAIL magic".into()));
    }
    Precision::from_bits(bytes[9]).ok_or_else(|| GailError::Corrupt("unknown precision".into()))
}
