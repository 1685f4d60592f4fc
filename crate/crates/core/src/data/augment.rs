//! Multi-crop view generation: two global and ten local crops per image,
//! each independently flipped, colour-jittered, blurred and solarized.

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::Image;
use crate::rng;

pub const NUM_GLOBAL_VIEWS: usize = 2;
pub const NUM_LOCAL_VIEWS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Crop area as a fraction of the source, `(low, high]`.
    pub global_scale: (f32, f32),
    pub local_scale: (f32, f32),
    /// Aspect-ratio range of random crops.
    pub aspect: (f32, f32),
    pub flip_p: f32,
    pub jitter_p: f32,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub hue: f32,
    pub blur_sigma: (f32, f32),
    /// Blur probability for global view 1, global view 2 and local views.
    pub blur_p: [f32; 3],
    pub solarize_threshold: f32,
    /// Solarization probability for global view 1, global view 2 and local views.
    pub solarize_p: [f32; 3],
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            global_scale: (0.4, 1.0),
            local_scale: (0.05, 0.4),
            aspect: (3.0 / 4.0, 4.0 / 3.0),
            flip_p: 0.5,
            jitter_p: 0.8,
            brightness: 0.4,
            contrast: 0.4,
            saturation: 0.2,
            hue: 0.1,
            blur_sigma: (0.1, 2.0),
            blur_p: [1.0, 0.1, 0.5],
            solarize_threshold: 0.5,
            solarize_p: [0.0, 0.2, 0.0],
            mean: [0.5; 3],
            std: [0.25; 3],
        }
    }
}

impl AugmentConfig {
    /// Crops at full scale with every stochastic transform disabled.
    pub fn identity() -> Self {
        Self {
            global_scale: (1.0, 1.0),
            local_scale: (1.0, 1.0),
            flip_p: 0.0,
            jitter_p: 0.0,
            blur_p: [0.0; 3],
            solarize_p: [0.0; 3],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(format!("augment.{m}")));
        for (name, (lo, hi)) in [("global_scale", self.global_scale), ("local_scale", self.local_scale)] {
            if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
                return bad(format!("{name} ({lo}, {hi}) must satisfy 0 < low <= high <= 1"));
            }
        }
        let probs = [self.flip_p, self.jitter_p].into_iter().chain(self.blur_p).chain(self.solarize_p);
        if probs.clone().any(|p| !(0.0..=1.0).contains(&p)) {
            return bad("probabilities must lie in [0, 1]".into());
        }
        if !(self.aspect.0 > 0.0 && self.aspect.0 <= self.aspect.1) {
            return bad("aspect range must be positive and ordered".into());
        }
        if !(self.blur_sigma.0 > 0.0 && self.blur_sigma.0 <= self.blur_sigma.1) {
            return bad("blur_sigma range must be positive and ordered".into());
        }
        if self.std.iter().any(|&s| s <= 0.0) {
            return bad("std must be positive".into());
        }
        if [self.brightness, self.contrast, self.saturation].iter().any(|&s| !(0.0..1.0).contains(&s))
            || !(0.0..=0.5).contains(&self.hue)
        {
            return bad("jitter strengths out of range".into());
        }
        Ok(())
    }

    /// Range of standardized pixel values, per channel.
    pub fn normalized_range(&self, c: usize) -> (f32, f32) {
        ((0.0 - self.mean[c]) / self.std[c], (1.0 - self.mean[c]) / self.std[c])
    }
}

/// The twelve views drawn from one source image.
#[derive(Clone, Debug, PartialEq)]
pub struct ViewSet {
    pub global: Vec<Image>,
    pub local: Vec<Image>,
    pub source_id: u64,
    pub seed: u64,
}

impl ViewSet {
    /// Globals first, then locals.
    pub fn iter(&self) -> impl Iterator<Item = &Image> {
        self.global.iter().chain(self.local.iter())
    }
}

/// Generates the 2 + 10 views of `image`; fully determined by
/// `(image, config, seed)`.
pub fn generate_views(
    image: &Image,
    cfg: &AugmentConfig,
    global_px: usize,
    local_px: usize,
    source_id: u64,
    seed: u64,
) -> Result<ViewSet> {
    if image.height < local_px || image.width < local_px {
        return Err(Error::Data(format!(
            "image {}x{} is smaller than the {local_px}px local crop",
            image.height, image.width
        )));
    }
    let image = image.to_rgb();
    let mut r = rng::stream(seed, "views", source_id);
    let mut global = Vec::with_capacity(NUM_GLOBAL_VIEWS);
    for i in 0..NUM_GLOBAL_VIEWS {
        global.push(augment_one(&image, cfg, cfg.global_scale, global_px, i, &mut r));
    }
    let mut local = Vec::with_capacity(NUM_LOCAL_VIEWS);
    for _ in 0..NUM_LOCAL_VIEWS {
        local.push(augment_one(&image, cfg, cfg.local_scale, local_px, 2, &mut r));
    }
    Ok(ViewSet { global, local, source_id, seed })
}

/// Resizes the whole image and standardizes it; the evaluation-time view.
pub fn center_view(image: &Image, cfg: &AugmentConfig, px: usize) -> Image {
    let mut v = image.to_rgb().resize(px, px);
    normalize(&mut v, cfg);
    v
}

fn augment_one(
    image: &Image,
    cfg: &AugmentConfig,
    scale: (f32, f32),
    px: usize,
    slot: usize,
    r: &mut impl RngCore,
) -> Image {
    let (y0, x0, h, w) = random_crop(image, scale, cfg.aspect, r);
    let mut v = image.resample_region(y0, x0, h, w, px, px);
    if r.random::<f32>() < cfg.flip_p {
        flip_horizontal(&mut v);
    }
    if r.random::<f32>() < cfg.jitter_p {
        color_jitter(&mut v, cfg, r);
    }
    if r.random::<f32>() < cfg.blur_p[slot] {
        let sigma = sample(r, cfg.blur_sigma);
        gaussian_blur(&mut v, sigma);
    }
    if r.random::<f32>() < cfg.solarize_p[slot] {
        solarize(&mut v, cfg.solarize_threshold);
    }
    normalize(&mut v, cfg);
    v
}

fn sample(r: &mut impl RngCore, (lo, hi): (f32, f32)) -> f32 {
    if lo >= hi {
        lo
    } else {
        r.random_range(lo..hi)
    }
}

/// Random-resized-crop region `(y0, x0, h, w)`: area fraction from `scale`,
/// log-uniform aspect ratio; falls back to the largest centred crop within
/// the aspect bounds after ten rejected draws.
fn random_crop(img: &Image, scale: (f32, f32), aspect: (f32, f32), r: &mut impl RngCore) -> (f32, f32, f32, f32) {
    let (hh, ww) = (img.height as f32, img.width as f32);
    let area = hh * ww;
    for _ in 0..10 {
        let target = area * sample(r, scale);
        let log_ratio = sample(r, (aspect.0.ln(), aspect.1.ln()));
        let ratio = log_ratio.exp();
        let w = (target * ratio).sqrt();
        let h = (target / ratio).sqrt();
        if w <= ww && h <= hh {
            let y0 = if hh > h { r.random_range(0.0..=hh - h) } else { 0.0 };
            let x0 = if ww > w { r.random_range(0.0..=ww - w) } else { 0.0 };
            return (y0, x0, h, w);
        }
    }
    let in_ratio = ww / hh;
    let (h, w) = if in_ratio < aspect.0 {
        (ww / aspect.0, ww)
    } else if in_ratio > aspect.1 {
        (hh, hh * aspect.1)
    } else {
        (hh, ww)
    };
    ((hh - h) / 2.0, (ww - w) / 2.0, h, w)
}

fn flip_horizontal(img: &mut Image) {
    let (w, c) = (img.width, img.channels);
    for row in img.data.chunks_mut(w * c) {
        for x in 0..w / 2 {
            for k in 0..c {
                row.swap(x * c + k, (w - 1 - x) * c + k);
            }
        }
    }
}

fn luma(p: &[f32]) -> f32 {
    0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]
}

fn color_jitter(img: &mut Image, cfg: &AugmentConfig, r: &mut impl RngCore) {
    let b = sample(r, (1.0 - cfg.brightness, 1.0 + cfg.brightness));
    let c = sample(r, (1.0 - cfg.contrast, 1.0 + cfg.contrast));
    let s = sample(r, (1.0 - cfg.saturation, 1.0 + cfg.saturation));
    let h = sample(r, (-cfg.hue, cfg.hue));

    for v in img.data.iter_mut() {
        *v = (*v * b).clamp(0.0, 1.0);
    }
    let mean_luma = img.data.chunks(3).map(luma).sum::<f32>() / (img.height * img.width) as f32;
    for v in img.data.iter_mut() {
        *v = ((*v - mean_luma) * c + mean_luma).clamp(0.0, 1.0);
    }
    for p in img.data.chunks_mut(3) {
        let g = luma(p);
        for v in p.iter_mut() {
            *v = ((*v - g) * s + g).clamp(0.0, 1.0);
        }
    }
    if h != 0.0 {
        for p in img.data.chunks_mut(3) {
            let (hue, sat, val) = rgb_to_hsv(p[0], p[1], p[2]);
            let [r2, g2, b2] = hsv_to_rgb((hue + h).rem_euclid(1.0), sat, val);
            p.copy_from_slice(&[r2, g2, b2]);
        }
    }
}

fn rgb_to_hsv(r: f32, g: f32, b: f32) -> (f32, f32, f32) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let h6 = h * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - s * f), v * (1.0 - s * (1.0 - f)));
    let rgb = match i as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    };
    rgb.map(|x| x.clamp(0.0, 1.0))
}

/// Separable Gaussian blur (radius ⌈3σ⌉, edge clamp).
fn gaussian_blur(img: &mut Image, sigma: f32) {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f32> = (-radius..=radius).map(|i| (-((i * i) as f32) / (2.0 * sigma * sigma)).exp()).collect();
    let total: f32 = kernel.iter().sum();
    let kernel: Vec<f32> = kernel.iter().map(|k| k / total).collect();
    let (h, w, c) = (img.height as isize, img.width as isize, img.channels);

    let mut tmp = img.clone();
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let xx = (x + j as isize - radius).clamp(0, w - 1);
                    acc += kv * img.at(y as usize, xx as usize, k);
                }
                *tmp.at_mut(y as usize, x as usize, k) = acc;
            }
        }
    }
    for y in 0..h {
        for x in 0..w {
            for k in 0..c {
                let mut acc = 0.0;
                for (j, kv) in kernel.iter().enumerate() {
                    let yy = (y + j as isize - radius).clamp(0, h - 1);
                    acc += kv * tmp.at(yy as usize, x as usize, k);
                }
                *img.at_mut(y as usize, x as usize, k) = acc.clamp(0.0, 1.0);
            }
        }
    }
}

fn solarize(img: &mut Image, threshold: f32) {
    for v in img.data.iter_mut() {
        if *v >= threshold {
            *v = 1.0 - *v;
        }
    }
}

fn normalize(img: &mut Image, cfg: &AugmentConfig) {
    let c = img.channels;
    for (i, v) in img.data.iter_mut().enumerate() {
        let k = i % c;
        *v = (*v - cfg.mean[k]) / cfg.std[k];
    }
}
