//! Manifests, image decoding, multi-crop augmentation, balanced batching
//! and the synthetic corpus.

mod augment;
mod image_io;
mod manifest;
mod sampler;
mod synth;

pub use augment::{center_view, generate_views, AugmentConfig, ViewSet, NUM_GLOBAL_VIEWS, NUM_LOCAL_VIEWS};
pub use image_io::{encode_png, load_image};
pub use manifest::{
    load_manifest, load_manifest_with, num_classes, write_manifest, ManifestOptions, Modality, SampleRecord, Split,
    MANIFEST_HEADER,
};
pub use sampler::{BalanceAxis, BalancedSampler};
pub use synth::{generate_synthetic_corpus, SynthCorpus, SynthSpec, SHAPES};

use crate::error::{Error, Result};
use crate::raster::Image;

/// Records with their decoded images held in memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub records: Vec<SampleRecord>,
    pub images: Vec<Image>,
}

impl Dataset {
    pub fn load(records: Vec<SampleRecord>) -> Result<Self> {
        let images = records.iter().map(|r| load_image(&r.image_path)).collect::<Result<Vec<_>>>()?;
        Ok(Self { records, images })
    }

    pub fn from_synth(corpus: SynthCorpus) -> Self {
        let images = corpus.images.iter().map(Image::to_rgb).collect();
        Self { records: corpus.records, images }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    /// Per-channel pixel mean and standard deviation over every image
    /// (RGB), for use as `augment.mean` / `augment.std`.
    pub fn channel_stats(&self) -> Result<([f32; 3], [f32; 3])> {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut n = 0usize;
        for img in &self.images {
            if img.channels != 3 {
                return Err(Error::Data("channel statistics need RGB images".into()));
            }
            for px in img.data.chunks_exact(3) {
                for c in 0..3 {
                    sum[c] += px[c] as f64;
                    sq[c] += (px[c] as f64).powi(2);
                }
            }
            n += img.height * img.width;
        }
        if n == 0 {
            return Err(Error::Data("channel statistics of an empty dataset".into()));
        }
        let mut mean = [0f32; 3];
        let mut std = [0f32; 3];
        for c in 0..3 {
            let m = sum[c] / n as f64;
            mean[c] = m as f32;
            std[c] = (sq[c] / n as f64 - m * m).max(0.0).sqrt().max(1e-3) as f32;
        }
        Ok((mean, std))
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// The subset whose records satisfy `keep`, in original order.
    pub fn filter(&self, mut keep: impl FnMut(&SampleRecord) -> bool) -> Dataset {
        let (records, images) = self
            .records
            .iter()
            .zip(&self.images)
            .filter(|(r, _)| keep(r))
            .map(|(r, i)| (r.clone(), i.clone()))
            .unzip();
        Dataset { records, images }
    }

    pub fn split(&self, split: Split) -> Dataset {
        self.filter(|r| r.split == split)
    }
}
