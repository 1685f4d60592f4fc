use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoder and projection-head geometry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ViTConfig {
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub channels: usize,
    pub global_view_px: usize,
    pub local_view_px: usize,
    pub proj_hidden_dim: usize,
    pub proj_out_dim: usize,
}

impl Default for ViTConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ViTConfig {
    /// ViT-B/16 with a 2048-wide, 256-out projection head.
    pub fn paper() -> Self {
        Self {
            patch_size: 16,
            embed_dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4,
            channels: 3,
            global_view_px: 224,
            local_view_px: 96,
            proj_hidden_dim: 2048,
            proj_out_dim: 256,
        }
    }

    /// CPU-sized encoder that still exercises every code path.
    pub fn desk() -> Self {
        Self {
            patch_size: 8,
            embed_dim: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            channels: 3,
            global_view_px: 64,
            local_view_px: 32,
            proj_hidden_dim: 256,
            proj_out_dim: 128,
        }
    }

    /// One block, two heads; used by gradient checks and hand-built oracles.
    pub fn tiny() -> Self {
        Self {
            patch_size: 8,
            embed_dim: 32,
            depth: 1,
            heads: 2,
            mlp_ratio: 2,
            channels: 3,
            global_view_px: 16,
            local_view_px: 8,
            proj_hidden_dim: 16,
            proj_out_dim: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("depth", self.depth),
            ("heads", self.heads),
            ("mlp_ratio", self.mlp_ratio),
            ("channels", self.channels),
            ("global_view_px", self.global_view_px),
            ("local_view_px", self.local_view_px),
            ("proj_hidden_dim", self.proj_hidden_dim),
            ("proj_out_dim", self.proj_out_dim),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("encoder.{name} must be positive")));
            }
        }
        for (name, px) in [("global_view_px", self.global_view_px), ("local_view_px", self.local_view_px)] {
            if px % self.patch_size != 0 {
                return Err(Error::Config(format!(
                    "encoder.{name} ({px}) must be a multiple of encoder.patch_size ({})",
                    self.patch_size
                )));
            }
        }
        if self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "encoder.embed_dim ({}) must be divisible by encoder.heads ({})",
                self.embed_dim, self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.heads
    }

    /// Side length of the positional grid (global resolution).
    pub fn grid(&self) -> usize {
        self.global_view_px / self.patch_size
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }
}
