//! The `MMFM` checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "MMFM" | u32 version | u64 body length | body | sha256(everything before)
//! body = u64 config hash | u64 seed | u64 step | u64 epoch
//!      | u32 n_tensors | n × (str name | u32 ndim | ndim × u64 dim | f32 data)
//!      | u32 n_blobs   | n × (str name | u64 len | bytes)
//! str  = u32 len | utf-8 bytes
//! ```
//!
//! Tensors and blobs are written in lexicographic name order, so encoding
//! is a pure function of the contents.

use std::collections::BTreeMap;
use std::path::Path;

use crate::autodiff::{Array, OptimizerState, ParamSet};
use crate::bytes::{unframe, Reader, Writer};
use crate::config::RunConfig;
use crate::error::{CheckpointError, Error, Result};
use crate::memory::MemoryBank;
use crate::train::{LossRow, TrainState};

pub const MAGIC: [u8; 4] = *b"MMFM";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config_hash: u64,
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
    pub tensors: BTreeMap<String, Array<f32>>,
    pub blobs: BTreeMap<String, Vec<u8>>,
}

impl Checkpoint {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        for v in [self.config_hash, self.seed, self.step, self.epoch] {
            w.u64(v);
        }
        w.u32(self.tensors.len() as u32);
        for (name, t) in &self.tensors {
            w.str(name);
            w.u32(t.ndim() as u32);
            for &d in t.shape() {
                w.u64(d as u64);
            }
            w.f32s(t.data());
        }
        w.u32(self.blobs.len() as u32);
        for (name, b) in &self.blobs {
            w.str(name);
            w.blob(b);
        }
        w.finish(MAGIC, VERSION)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let mut r = unframe(bytes, MAGIC, VERSION)?;
        let (config_hash, seed, step, epoch) = (r.u64()?, r.u64()?, r.u64()?, r.u64()?);
        let mut tensors = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| Ok(r.u64()? as usize)).collect::<Result<Vec<_>>>()?;
            let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
            let n = n.ok_or_else(|| CheckpointError::Integrity(format!("tensor `{name}` is too large")))?;
            let data = r.f32s(n)?;
            let t = Array::new(shape, data)
                .map_err(|_| CheckpointError::Integrity(format!("tensor `{name}` has an invalid shape")))?;
            tensors.insert(name, t);
        }
        let mut blobs = BTreeMap::new();
        for _ in 0..r.u32()? {
            let name = r.str()?;
            blobs.insert(name, r.blob()?.to_vec());
        }
        r.expect_end()?;
        Ok(Self { config_hash, seed, step, epoch, tensors, blobs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.encode())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes)
    }

    /// Fails unless the stored hash matches `cfg`'s encoder geometry or the
    /// caller explicitly allows a mismatch.
    pub fn check_config(&self, cfg: &RunConfig, allow_mismatch: bool) -> Result<()> {
        let expected = cfg.config_hash();
        if self.config_hash != expected && !allow_mismatch {
            return Err(CheckpointError::ConfigHashMismatch { expected, found: self.config_hash }.into());
        }
        Ok(())
    }

    /// Parameters stored under `prefix/`, validated against `like`.
    pub fn params(&self, prefix: &str, like: &ParamSet<f32>) -> Result<ParamSet<f32>> {
        let mut out = ParamSet::new();
        for (name, expected) in like.iter() {
            let key = format!("{prefix}/{name}");
            let t = self.tensors.get(&key).ok_or_else(|| CheckpointError::Missing(key.clone()))?;
            if t.shape() != expected.shape() {
                return Err(CheckpointError::ShapeMismatch {
                    name: key,
                    expected: expected.shape().to_vec(),
                    found: t.shape().to_vec(),
                }
                .into());
            }
            out.insert(name.clone(), t.clone())?;
        }
        Ok(out)
    }

    pub fn blob(&self, name: &str) -> Result<&[u8]> {
        self.blobs.get(name).map(Vec::as_slice).ok_or_else(|| CheckpointError::Missing(name.into()).into())
    }

    pub fn from_state(state: &TrainState, cfg: &RunConfig) -> Self {
        let mut tensors = BTreeMap::new();
        let groups = [
            ("student", &state.student),
            ("teacher", &state.teacher),
            ("adam.m", &state.optimizer.m),
            ("adam.v", &state.optimizer.v),
        ];
        for (prefix, set) in groups {
            for (name, t) in set.iter() {
                tensors.insert(format!("{prefix}/{name}"), t.clone());
            }
        }
        let mut blobs = BTreeMap::new();
        blobs.insert("memory".to_string(), state.bank.snapshot());
        let o = &state.optimizer;
        let mut w = Writer::default();
        w.u64(o.t);
        for v in [o.beta1, o.beta2, o.eps] {
            w.f64(v);
        }
        blobs.insert("optimizer".to_string(), w.buf);
        let mut w = Writer::default();
        w.u64(state.log.len() as u64);
        for row in &state.log {
            w.u64(row.step);
            w.u64(row.epoch);
            for v in [row.lr, row.wd, row.tau_t, row.momentum, row.loss] {
                w.f64(v);
            }
        }
        blobs.insert("loss_log".to_string(), w.buf);
        Self { config_hash: cfg.config_hash(), seed: state.seed, step: state.step, epoch: state.epoch, tensors, blobs }
    }

    /// Rebuilds the full training state; every tensor is checked against
    /// the shapes `cfg` implies.
    pub fn to_state(&self, cfg: &RunConfig) -> Result<TrainState> {
        let template = TrainState::new(cfg)?;
        let student = self.params("student", &template.student)?;
        let teacher = self.params("teacher", &template.teacher)?;
        let m = self.params("adam.m", &template.student)?;
        let v = self.params("adam.v", &template.student)?;

        let mut r = Reader::new(self.blob("optimizer")?);
        let (t, beta1, beta2, eps) = (r.u64()?, r.f64()?, r.f64()?, r.f64()?);
        r.expect_end()?;
        let optimizer = OptimizerState { m, v, t, beta1, beta2, eps };

        let bank = MemoryBank::restore(self.blob("memory")?)?;
        if bank.capacity() != cfg.memory.k || bank.block_size() != cfg.memory.block || bank.dim() != cfg.encoder.proj_out_dim {
            return Err(CheckpointError::ShapeMismatch {
                name: "memory".into(),
                expected: vec![cfg.memory.k, cfg.encoder.proj_out_dim, cfg.memory.block],
                found: vec![bank.capacity(), bank.dim(), bank.block_size()],
            }
            .into());
        }

        let mut r = Reader::new(self.blob("loss_log")?);
        let n = r.u64()?;
        let mut log = Vec::new();
        for _ in 0..n {
            log.push(LossRow {
                step: r.u64()?,
                epoch: r.u64()?,
                lr: r.f64()?,
                wd: r.f64()?,
                tau_t: r.f64()?,
                momentum: r.f64()?,
                loss: r.f64()?,
            });
        }
        r.expect_end()?;
        Ok(TrainState { student, teacher, optimizer, bank, seed: self.seed, step: self.step, epoch: self.epoch, log })
    }
}
