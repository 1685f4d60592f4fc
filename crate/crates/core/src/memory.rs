//! Fixed-capacity FIFO ring of unit-norm embeddings with random block
//! retrieval. Storage is plain data: it never enters a gradient tape except
//! as a constant.

use rand::seq::index;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Array, Real};
use crate::bytes::{unframe, Writer};
use crate::error::{Error, Result};

pub const UNIT_TOLERANCE: f64 = 1e-4;
const SNAPSHOT_MAGIC: [u8; 4] = *b"MMBK";
const SNAPSHOT_VERSION: u32 = 1;

/// How a step's memory support is chosen.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BlockMode {
    /// One block of `N_b` distinct rows drawn uniformly per step.
    #[default]
    Random,
    /// The filled rows split into consecutive blocks of `N_b`; the loss is
    /// averaged over all of them.
    Partition,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MemoryBlock {
    pub indices: Vec<usize>,
}

impl MemoryBlock {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MemoryBank {
    capacity: usize,
    dim: usize,
    block_size: usize,
    storage: Vec<f32>,
    cursor: usize,
    filled: usize,
}

impl MemoryBank {
    pub fn new(capacity: usize, dim: usize, block_size: usize) -> Result<Self> {
        if capacity == 0 || dim == 0 || block_size == 0 {
            return Err(Error::Config("memory: capacity, dim and block size must be positive".into()));
        }
        if capacity % block_size != 0 {
            return Err(Error::Config(format!("memory: block {block_size} must divide capacity {capacity}")));
        }
        Ok(Self { capacity, dim, block_size, storage: vec![0.0; capacity * dim], cursor: 0, filled: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    pub fn filled(&self) -> usize {
        self.filled
    }

    pub fn is_empty(&self) -> bool {
        self.filled == 0
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.storage[i * self.dim..(i + 1) * self.dim]
    }

    /// Writes `rows` (`[B, dim]`, unit norm) at the cursor, overwriting the
    /// oldest entries.
    pub fn push(&mut self, rows: &Array<f32>) -> Result<()> {
        if rows.ndim() != 2 || rows.cols() != self.dim {
            return Err(Error::shape("memory push", format!("{:?} vs dim {}", rows.shape(), self.dim)));
        }
        let b = rows.rows();
        if b > self.capacity {
            return Err(Error::Memory(format!("cannot push {b} rows into capacity {}", self.capacity)));
        }
        for i in 0..b {
            let norm = rows.row(i).iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
            if (norm - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::Memory(format!("row {i} has norm {norm}, expected unit norm")));
            }
        }
        for i in 0..b {
            let at = self.cursor * self.dim;
            self.storage[at..at + self.dim].copy_from_slice(rows.row(i));
            self.cursor = (self.cursor + 1) % self.capacity;
        }
        self.filled = (self.filled + b).min(self.capacity);
        Ok(())
    }

    /// `N_b` distinct filled rows drawn uniformly without replacement. While
    /// fewer than `N_b` rows are filled, every filled row is returned.
    pub fn sample_block(&self, rng: &mut impl RngCore) -> Result<MemoryBlock> {
        if self.filled == 0 {
            return Err(Error::Memory("cannot sample from an empty bank".into()));
        }
        if self.filled <= self.block_size {
            return Ok(MemoryBlock { indices: (0..self.filled).collect() });
        }
        Ok(MemoryBlock { indices: index::sample(rng, self.filled, self.block_size).into_vec() })
    }

    /// Consecutive blocks of `N_b` covering the filled rows; the last block
    /// is shorter when `filled` is not a multiple of `N_b`.
    pub fn partition(&self) -> Vec<MemoryBlock> {
        (0..self.filled)
            .step_by(self.block_size)
            .map(|s| MemoryBlock { indices: (s..(s + self.block_size).min(self.filled)).collect() })
            .collect()
    }

    pub fn blocks(&self, mode: BlockMode, rng: &mut impl RngCore) -> Result<Vec<MemoryBlock>> {
        match mode {
            BlockMode::Random => Ok(vec![self.sample_block(rng)?]),
            BlockMode::Partition if self.filled == 0 => Err(Error::Memory("empty bank".into())),
            BlockMode::Partition => Ok(self.partition()),
        }
    }

    /// The block's rows as a `[N_b, dim]` matrix.
    pub fn gather<T: Real>(&self, block: &MemoryBlock) -> Result<Array<T>> {
        let mut data = Vec::with_capacity(block.len() * self.dim);
        for &i in &block.indices {
            if i >= self.filled {
                return Err(Error::Memory(format!("block index {i} is beyond the {} filled rows", self.filled)));
            }
            data.extend(self.row(i).iter().map(|&v| T::lit(v as f64)));
        }
        Array::new(vec![block.len(), self.dim], data)
    }

    /// Dot products of each query row with each block row: `[V, N_b]`.
    pub fn similarities(&self, queries: &Array<f32>, block: &MemoryBlock) -> Result<Array<f32>> {
        if queries.ndim() != 2 || queries.cols() != self.dim {
            return Err(Error::shape("similarities", format!("queries {:?} vs dim {}", queries.shape(), self.dim)));
        }
        let keys = self.gather::<f32>(block)?;
        let (v, n) = (queries.rows(), block.len());
        let mut out = vec![0.0f32; v * n];
        f32::gemm(v, self.dim, n, queries.data(), false, keys.data(), true, &mut out, false);
        Array::new(vec![v, n], out)
    }

    /// Byte image of the bank; only filled rows are stored.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = Writer::default();
        for v in [self.capacity, self.dim, self.block_size, self.cursor, self.filled] {
            w.u64(v as u64);
        }
        w.f32s(&self.storage[..self.filled * self.dim]);
        w.finish(SNAPSHOT_MAGIC, SNAPSHOT_VERSION)
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let mut r = unframe(bytes, SNAPSHOT_MAGIC, SNAPSHOT_VERSION)?;
        let mut next = || -> Result<usize> { Ok(r.u64()? as usize) };
        let (capacity, dim, block_size, cursor, filled) = (next()?, next()?, next()?, next()?, next()?);
        let mut bank = Self::new(capacity, dim, block_size)?;
        if filled > capacity || cursor >= capacity || (filled < capacity && cursor != filled) {
            return Err(crate::CheckpointError::Integrity("inconsistent memory cursor/fill".into()).into());
        }
        let rows = r.f32s(filled * dim)?;
        r.expect_end()?;
        bank.storage[..filled * dim].copy_from_slice(&rows);
        bank.cursor = cursor;
        bank.filled = filled;
        Ok(bank)
    }
}
