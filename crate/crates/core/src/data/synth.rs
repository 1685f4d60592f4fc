//! Procedural multi-modality corpus. The modality fixes a background
//! texture family; the class fixes a foreground shape. All shapes cover
//! the same area at the same intensity and are placed at a jittered
//! position, so class identity is structural rather than a brightness cue.

use std::f32::consts::PI;
use std::path::Path;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::image_io::encode_png;
use super::manifest::{write_manifest, Modality, SampleRecord, Split};
use crate::error::{Error, Result};
use crate::raster::Image;
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub n_modalities: usize,
    pub n_classes: usize,
    pub samples_per_class: usize,
    pub image_px: usize,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { n_modalities: 3, n_classes: 4, samples_per_class: 200, image_px: 64 }
    }
}

impl SynthSpec {
    pub fn total(&self) -> usize {
        self.n_modalities * self.n_classes * self.samples_per_class
    }

    fn validate(&self) -> Result<()> {
        if self.n_modalities == 0 || self.n_classes == 0 || self.samples_per_class == 0 || self.image_px < 8 {
            return Err(Error::Config("synth: counts must be >= 1 and image_px >= 8".into()));
        }
        if self.n_modalities > 256 {
            return Err(Error::Config("synth: at most 256 modalities".into()));
        }
        Ok(())
    }
}

pub const SHAPES: [&str; 6] = ["circle", "square", "ring", "cross", "triangle", "diamond"];

/// Records (paths relative to the corpus root) with their images, already
/// quantized to 8 bits so they equal what a round trip through PNG yields.
pub struct SynthCorpus {
    pub records: Vec<SampleRecord>,
    pub images: Vec<Image>,
}

pub fn generate_synthetic_corpus(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus> {
    spec.validate()?;
    let n = spec.samples_per_class;
    let n_train = (n as f64 * 0.7).round() as usize;
    let n_val = (n as f64 * 0.15).round() as usize;
    let mut records = Vec::with_capacity(spec.total());
    let mut images = Vec::with_capacity(spec.total());
    for m in 0..spec.n_modalities {
        for c in 0..spec.n_classes {
            for i in 0..n {
                let id = ((m * spec.n_classes + c) * n + i) as u64;
                let mut r = rng::stream(seed, "synth", id);
                let img = render(spec, m, c, &mut r);
                let split = match i {
                    i if i < n_train => Split::Train,
                    i if i < n_train + n_val => Split::Val,
                    _ => Split::Test,
                };
                records.push(SampleRecord {
                    image_path: format!("images/m{m}_c{c}_{i:04}.png").into(),
                    modality: Modality::Synthetic(m as u8),
                    specialty: format!("family{}", m % 2),
                    label: Some(c),
                    split,
                });
                images.push(img);
            }
        }
    }
    Ok(SynthCorpus { records, images })
}

impl SynthCorpus {
    /// Writes `images/*.png` and `manifest.csv` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        for (r, img) in self.records.iter().zip(&self.images) {
            crate::io::write_atomic(&dir.join(&r.image_path), &encode_png(img)?)?;
        }
        let records: Vec<SampleRecord> =
            self.records.iter().map(|r| SampleRecord { image_path: dir.join(&r.image_path), ..r.clone() }).collect();
        write_manifest(&dir.join("manifest.csv"), dir, &records)
    }

    /// Records with paths resolved against `dir`.
    pub fn records_in(&self, dir: &Path) -> Vec<SampleRecord> {
        self.records.iter().map(|r| SampleRecord { image_path: dir.join(&r.image_path), ..r.clone() }).collect()
    }
}

fn texture(m: usize, y: f32, x: f32, px: f32, phase: f32, freq: f32) -> f32 {
    let u = y / px;
    let v = x / px;
    match m % 3 {
        0 => 0.35 + 0.12 * (2.0 * PI * freq * u + phase).sin(),
        1 => 0.35 + 0.07 * ((2.0 * PI * freq * (u + v) + phase).sin() + (2.0 * PI * freq * (u - v) - phase).sin()),
        _ => 0.35 + 0.12 * (2.0 * PI * freq * 0.5 * v + phase).sin() * (2.0 * PI * freq * 0.5 * u).cos(),
    }
}

fn tint(m: usize) -> [f32; 3] {
    match (m / 3) % 3 {
        0 => [1.0, 1.0, 1.0],
        1 => [1.1, 0.95, 0.85],
        _ => [0.85, 1.0, 1.1],
    }
}

/// Signed inclusion test for shape `c` centred at the origin, for a shape
/// of area `area` px².
fn inside(c: usize, dy: f32, dx: f32, area: f32) -> bool {
    match c % SHAPES.len() {
        0 => dy * dy + dx * dx <= area / PI,
        1 => {
            let h = area.sqrt() / 2.0;
            dy.abs() <= h && dx.abs() <= h
        }
        2 => {
            // annulus with outer radius 1.3× the equal-area disc
            let r2 = area / PI;
            let outer = 1.69 * r2;
            let inner = outer - r2;
            let d = dy * dy + dx * dx;
            d <= outer && d >= inner
        }
        3 => {
            // arms of width L/3: area 5L²/9
            let l = (9.0 * area / 5.0).sqrt();
            let (h, w) = (l / 2.0, l / 6.0);
            (dy.abs() <= h && dx.abs() <= w) || (dx.abs() <= h && dy.abs() <= w)
        }
        4 => {
            // equilateral triangle, centroid at the origin
            let a = (4.0 * area / 3f32.sqrt()).sqrt();
            let hgt = a * 3f32.sqrt() / 2.0;
            let top = -2.0 * hgt / 3.0;
            let bottom = hgt / 3.0;
            dy >= top && dy <= bottom && dx.abs() <= (dy - top) / hgt * a / 2.0
        }
        _ => {
            let h = (area / 2.0).sqrt();
            dy.abs() + dx.abs() <= h
        }
    }
}

fn render(spec: &SynthSpec, m: usize, c: usize, r: &mut impl RngCore) -> Image {
    let px = spec.image_px;
    let pxf = px as f32;
    let phase = r.random_range(0.0..2.0 * PI);
    let freq = r.random_range(3.0..5.0) * (1.0 + (m / 9) as f32 * 0.5);
    let area = pxf * pxf * 0.1 * r.random_range(0.85f32..1.15);
    let margin = pxf * 0.3;
    let cy = r.random_range(margin..pxf - margin);
    let cx = r.random_range(margin..pxf - margin);
    let fg = r.random_range(0.75f32..0.9);
    let hatch = (c / SHAPES.len()) as f32;
    let tint = tint(m);
    let noise = Normal::new(0.0f32, 0.03).expect("valid std");

    const SS: usize = 4;
    let mut img = Image::filled(px, px, 3, 0.0);
    for y in 0..px {
        for x in 0..px {
            let mut cover = 0.0;
            for sy in 0..SS {
                for sx in 0..SS {
                    let yy = y as f32 + (sy as f32 + 0.5) / SS as f32;
                    let xx = x as f32 + (sx as f32 + 0.5) / SS as f32;
                    if inside(c, yy - cy, xx - cx, area) {
                        cover += 1.0;
                    }
                }
            }
            cover /= (SS * SS) as f32;
            let bg = texture(m, y as f32, x as f32, pxf, phase, freq);
            let mut f = fg;
            if hatch > 0.0 {
                f += 0.1 * (2.0 * PI * (hatch + 1.0) * x as f32 / 8.0).sin();
            }
            let base = bg * (1.0 - cover) + f * cover;
            let n = noise.sample(r);
            for (k, t) in tint.iter().enumerate() {
                *img.at_mut(y, x, k) = ((base * t + n).clamp(0.0, 1.0) * 255.0).round() / 255.0;
            }
        }
    }
    img
}
