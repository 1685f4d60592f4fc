//! Helpers shared by the integration tests and the acceptance harness.
#![allow(dead_code)]

use memssl::autodiff::gradcheck::{grad_check_params_strided, DEFAULT_STEP};
use memssl::autodiff::{grad_check, Array, ParamSet, Tape, Var, LAYER_NORM_EPS};
use memssl::data::{generate_views, AugmentConfig, BalanceAxis, BalancedSampler, Modality, SampleRecord, Split, ViewSet};
use memssl::memory::MemoryBank;
use memssl::raster::Image;
use memssl::train::{ssl_loss, ViewLayout};
use memssl::vit::{encode, init_params, project, ViTConfig};
use memssl::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Array<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.random_range(-scale..scale)).collect();
    Array::new(shape.to_vec(), data).unwrap()
}

pub fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Array<f64> {
    let mut data = Vec::with_capacity(rows * dim);
    for _ in 0..rows {
        let v: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(v.iter().map(|x| x / n));
    }
    Array::new(vec![rows, dim], data).unwrap()
}

/// Weighted sum with fixed random weights: every output coordinate gets a
/// distinct gradient.
pub fn project_to_scalar(tape: &mut Tape<f64>, y: Var, seed: u64) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let w = tape.constant(random(&mut rng(seed), &shape, 1.0));
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

type OpFn = Box<dyn Fn(&mut Tape<f64>, Var) -> Result<Var>>;

/// Worst relative error per op over `trials` random `[3, 4]` inputs.
pub fn op_grad_errors(trials: usize) -> Vec<(&'static str, f64)> {
    let mut r = rng(2024);
    let w = random(&mut r, &[4, 5], 1.0);
    let w3 = random(&mut r, &[2, 4, 3], 1.0);
    let row = random(&mut r, &[4], 1.0);
    let gamma = random(&mut r, &[4], 1.0);
    let beta = random(&mut r, &[4], 1.0);
    let target = memssl::autodiff::softmax_rows_array(&random(&mut r, &[3, 4], 2.0), 1.0).unwrap();
    let ops: Vec<(&'static str, OpFn)> = vec![
        ("matmul", Box::new(move |t, x| {
            let wv = t.param(w.clone());
            let y = t.matmul(x, wv)?;
            project_to_scalar(t, y, 1)
        })),
        ("matmul_t", Box::new(|t, x| {
            let y = t.matmul_t(x, x, true)?;
            project_to_scalar(t, y, 2)
        })),
        ("bmm", Box::new(move |t, x| {
            let x3 = t.reshape(x, &[1, 3, 4])?;
            let x3 = t.concat(&[x3, x3], 0)?;
            let wv = t.param(w3.clone());
            let y = t.bmm(x3, wv, false)?;
            let z = t.bmm(y, x3, false)?;
            let z = t.bmm(x3, z, true)?;
            project_to_scalar(t, z, 3)
        })),
        ("add_mul_scale", Box::new(|t, x| {
            let a = t.mul(x, x)?;
            let b = t.add(a, x)?;
            let c = t.scale(b, -1.7)?;
            project_to_scalar(t, c, 4)
        })),
        ("add_row", Box::new(move |t, x| {
            let rv = t.param(row.clone());
            let y = t.add_row(x, rv)?;
            let y = t.mul(y, y)?;
            project_to_scalar(t, y, 5)
        })),
        ("gelu", Box::new(|t, x| {
            let y = t.gelu(x)?;
            project_to_scalar(t, y, 6)
        })),
        ("softmax", Box::new(|t, x| {
            let y = t.softmax_rows(x, 0.5)?;
            project_to_scalar(t, y, 7)
        })),
        ("log_softmax", Box::new(|t, x| {
            let y = t.log_softmax_rows(x, 0.3)?;
            project_to_scalar(t, y, 8)
        })),
        ("cross_entropy", Box::new(move |t, x| {
            let y = t.log_softmax_rows(x, 0.1)?;
            t.cross_entropy_rows(&target, y)
        })),
        ("l2_normalize", Box::new(|t, x| {
            let y = t.l2_normalize_rows(x)?;
            project_to_scalar(t, y, 9)
        })),
        ("layer_norm", Box::new(move |t, x| {
            let g = t.param(gamma.clone());
            let b = t.param(beta.clone());
            let y = t.layer_norm(x, g, b)?;
            project_to_scalar(t, y, 10)
        })),
        ("mean", Box::new(|t, x| {
            let sq = t.mul(x, x)?;
            t.mean(sq)
        })),
        ("slice_concat", Box::new(|t, x| {
            let a = t.slice(x, 1, 1, 3)?;
            let b = t.slice(x, 0, 0, 2)?;
            let b = t.reshape(b, &[4, 2])?;
            let a3 = t.slice(x, 1, 0, 2)?;
            let a = t.add(a, a3)?;
            let c = t.concat(&[a, b, a], 0)?;
            let c = t.mul(c, c)?;
            project_to_scalar(t, c, 11)
        })),
        ("permute", Box::new(|t, x| {
            let y = t.reshape(x, &[3, 2, 2])?;
            let y = t.permute(y, &[2, 0, 1])?;
            let y = t.mul(y, y)?;
            project_to_scalar(t, y, 12)
        })),
        ("gather_tile", Box::new(|t, x| {
            let g = t.gather_rows(x, &[2, 0, 2, 1])?;
            let y = t.tile(g, 3)?;
            let y = t.mul(y, y)?;
            project_to_scalar(t, y, 13)
        })),
        ("linear", Box::new(|t, x| {
            let w = t.param(random(&mut rng(14), &[4, 2], 1.0));
            let b = t.param(random(&mut rng(15), &[2], 1.0));
            let y = t.linear(x, w, b)?;
            project_to_scalar(t, y, 16)
        })),
    ];
    ops.iter()
        .map(|(name, op)| {
            let mut worst: f64 = 0.0;
            for _ in 0..trials {
                let x = random(&mut r, &[3, 4], 2.0);
                worst = worst.max(grad_check(|t, v| op(t, v), &x, DEFAULT_STEP).unwrap());
            }
            (*name, worst)
        })
        .collect()
}

/// All parameters (encoder and head) replaced by random values so that
/// biases and norm gains are exercised too.
pub fn perturbed_params(cfg: &ViTConfig, seed: u64, scale: f64) -> ParamSet<f64> {
    let mut p = init_params(cfg, seed).unwrap().cast::<f64>();
    let mut r = rng(seed ^ 0x5eed);
    for (name, a) in p.iter_mut() {
        let gain = name.ends_with("norm1.weight") || name.ends_with("norm2.weight") || name.ends_with("norm.weight");
        for v in a.data_mut() {
            let noise = r.random_range(-scale..scale);
            *v = if gain { 1.0 + noise } else { noise };
        }
    }
    p
}

pub fn random_image(seed: u64, px: usize) -> Image {
    let mut r = rng(seed);
    Image::new(px, px, 3, (0..px * px * 3).map(|_| r.random_range(-1.0f32..1.0)).collect()).unwrap()
}

/// Twelve-view set of a random image under `cfg`'s view sizes.
pub fn random_view_set(cfg: &ViTConfig, seed: u64) -> ViewSet {
    let img = random_image(seed, 32);
    let mut aug = AugmentConfig::default();
    aug.blur_p = [0.0; 3];
    generate_views(&img, &aug, cfg.global_view_px, cfg.local_view_px, seed, seed).unwrap()
}

/// Student projections of `views` in loss row order (globals, then locals).
pub fn student_rows(tape: &mut Tape<f64>, b: &memssl::autodiff::Bound, cfg: &ViTConfig, views: &[ViewSet]) -> Result<Var> {
    let globals: Vec<&Image> = views.iter().flat_map(|v| v.global.iter()).collect();
    let locals: Vec<&Image> = views.iter().flat_map(|v| v.local.iter()).collect();
    let g = encode(tape, b, cfg, &globals)?;
    let g = project(tape, b, cfg, g)?;
    let l = encode(tape, b, cfg, &locals)?;
    let l = project(tape, b, cfg, l)?;
    tape.concat(&[g, l], 0)
}

/// Gradient check of `ssl_loss(project(encode(views)))` over every
/// encoder and head parameter (one sample, fixed teacher and block).
pub fn composite_grad_error(stride: usize) -> (f64, usize) {
    let cfg = ViTConfig::tiny();
    let params = perturbed_params(&cfg, 3, 0.3);
    let views = vec![random_view_set(&cfg, 11)];
    let mut r = rng(12);
    let layout = ViewLayout::new(1);
    let teacher = unit_rows(&mut r, layout.teacher_rows(), cfg.proj_out_dim);
    let block = unit_rows(&mut r, 5, cfg.proj_out_dim);
    let report = grad_check_params_strided(&params, DEFAULT_STEP, stride, |tape, b| {
        let s = student_rows(tape, b, &cfg, &views)?;
        ssl_loss(tape, &teacher, s, &block, layout, 0.07, 0.1)
    })
    .unwrap();
    (report.max_rel_err, report.checked)
}

fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
    x.iter().zip(g).zip(b).map(|((v, g), b)| (v - mu) * inv * g + b).collect()
}

fn linear(x: &[f64], w: &Array<f64>, b: &Array<f64>) -> Vec<f64> {
    let (fan_in, fan_out) = (w.rows(), w.cols());
    assert_eq!(x.len(), fan_in);
    (0..fan_out)
        .map(|j| b.data()[j] + (0..fan_in).map(|i| x[i] * w.data()[i * fan_out + j]).sum::<f64>())
        .collect()
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

/// Independent single-block forward for a one-patch view: tokens are
/// `[CLS]` and the lone patch, positional rows are the `[CLS]` entry and the
/// mean of the four global-grid entries (bilinear 2×2 → 1×1).
pub fn one_patch_oracle(p: &ParamSet<f64>, cfg: &ViTConfig, view: &Image) -> Vec<f64> {
    assert_eq!(cfg.depth, 1);
    assert_eq!(cfg.grid(), 2);
    assert_eq!(view.height, cfg.patch_size);
    let g = |n: &str| p.get(n).unwrap();
    let d = cfg.embed_dim;
    let pos = g("encoder.pos_embed");
    let patch: Vec<f64> = view.data.iter().map(|&v| v as f64).collect();
    let mut x0: Vec<f64> = (0..d).map(|j| g("encoder.cls_token").data()[j] + pos.row(0)[j]).collect();
    let e = linear(&patch, g("encoder.patch_embed.weight"), g("encoder.patch_embed.bias"));
    let mut x1: Vec<f64> = (0..d).map(|j| e[j] + (1..5).map(|r| pos.row(r)[j]).sum::<f64>() / 4.0).collect();

    let blk = |s: &str| g(&format!("encoder.block0.{s}"));
    let h0 = layer_norm(&x0, blk("norm1.weight").data(), blk("norm1.bias").data());
    let h1 = layer_norm(&x1, blk("norm1.weight").data(), blk("norm1.bias").data());
    let qkv = [linear(&h0, blk("attn.qkv.weight"), blk("attn.qkv.bias")), linear(&h1, blk("attn.qkv.weight"), blk("attn.qkv.bias"))];
    let dh = cfg.head_dim();
    let mut out = [vec![0.0; d], vec![0.0; d]];
    for head in 0..cfg.heads {
        let q = |t: usize| &qkv[t][head * dh..(head + 1) * dh];
        let k = |t: usize| &qkv[t][d + head * dh..d + (head + 1) * dh];
        let v = |t: usize| &qkv[t][2 * d + head * dh..2 * d + (head + 1) * dh];
        for (i, o) in out.iter_mut().enumerate() {
            let s: Vec<f64> = (0..2).map(|j| q(i).iter().zip(k(j)).map(|(a, b)| a * b).sum::<f64>() / (dh as f64).sqrt()).collect();
            let m = s[0].max(s[1]);
            let z = (s[0] - m).exp() + (s[1] - m).exp();
            let a = [(s[0] - m).exp() / z, (s[1] - m).exp() / z];
            for c in 0..dh {
                o[head * dh + c] = a[0] * v(0)[c] + a[1] * v(1)[c];
            }
        }
    }
    for (x, o) in [(&mut x0, &out[0]), (&mut x1, &out[1])] {
        let o = linear(o, blk("attn.proj.weight"), blk("attn.proj.bias"));
        x.iter_mut().zip(&o).for_each(|(a, b)| *a += b);
        let h = layer_norm(x, blk("norm2.weight").data(), blk("norm2.bias").data());
        let h: Vec<f64> = linear(&h, blk("mlp.fc1.weight"), blk("mlp.fc1.bias")).into_iter().map(gelu).collect();
        let h = linear(&h, blk("mlp.fc2.weight"), blk("mlp.fc2.bias"));
        x.iter_mut().zip(&h).for_each(|(a, b)| *a += b);
    }
    layer_norm(&x0, g("encoder.norm.weight").data(), g("encoder.norm.bias").data())
}

/// Tie-aware all-pairs count: P(score⁺ > score⁻) + ½·P(tie).
pub fn brute_auroc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut num, mut den) = (0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if !labels[i] {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] {
                continue;
            }
            den += 2;
            num += if si > sj { 2 } else if si == sj { 1 } else { 0 };
        }
    }
    num as f64 / den as f64
}

/// Naive FIFO: a growable vector that drops its oldest rows beyond `k`.
pub struct NaiveFifo {
    pub k: usize,
    pub rows: Vec<Vec<f32>>,
}

impl NaiveFifo {
    pub fn push(&mut self, batch: &[Vec<f32>]) {
        self.rows.extend_from_slice(batch);
        let excess = self.rows.len().saturating_sub(self.k);
        self.rows.drain(..excess);
    }
}

pub fn unit_f32_rows(r: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<Vec<f32>> {
    let a = unit_rows(r, n, dim);
    (0..n).map(|i| a.row(i).iter().map(|&v| v as f32).collect()).collect()
}

/// Seconds-scale pretraining setup: tiny encoder, small corpus and bank.
pub fn tiny_run_config(seed: u64) -> memssl::config::RunConfig {
    let mut cfg = memssl::config::RunConfig::desk();
    cfg.seed = seed;
    cfg.encoder = ViTConfig::tiny();
    cfg.memory.k = 64;
    cfg.memory.block = 16;
    cfg.pretrain.batch_size = 3;
    cfg.pretrain.epochs = 2;
    cfg.pretrain.checkpoint_every = 1;
    cfg.schedule.lr_start = 1e-3;
    cfg.synth = memssl::data::SynthSpec { n_modalities: 3, n_classes: 2, samples_per_class: 6, image_px: 16 };
    cfg.finetune.batch_size = 4;
    cfg.finetune.epochs = 3;
    cfg.finetune.warmup_epochs = 1;
    cfg.eval.bootstrap = 100;
    cfg
}

pub fn tiny_dataset(cfg: &memssl::config::RunConfig) -> memssl::data::Dataset {
    memssl::data::Dataset::from_synth(memssl::data::generate_synthetic_corpus(&cfg.synth, cfg.seed).unwrap())
}

pub fn rows_to_array(rows: &[Vec<f32>]) -> Array<f32> {
    Array::from_rows(rows).unwrap()
}

/// Runs a push sequence on both the bank and the naive oracle; the bank's
/// filled rows must be the oracle's rows, rotated so the oldest comes first
/// once the ring has wrapped.
pub fn fifo_agrees(k: usize, pushes: &[usize], seed: u64) -> std::result::Result<(), String> {
    let dim = 3;
    let mut bank = MemoryBank::new(k, dim, 1).unwrap();
    let mut oracle = NaiveFifo { k, rows: Vec::new() };
    let mut r = rng(seed);
    for &b in pushes {
        let batch = unit_f32_rows(&mut r, b, dim);
        bank.push(&rows_to_array(&batch)).map_err(|e| e.to_string())?;
        oracle.push(&batch);
        if bank.filled() != oracle.rows.len() {
            return Err(format!("filled {} vs {}", bank.filled(), oracle.rows.len()));
        }
        // slot of the oldest row: the cursor once full, 0 before
        let start = if bank.filled() == k { bank.cursor() } else { 0 };
        for (age, want) in oracle.rows.iter().enumerate() {
            if bank.row((start + age) % k) != want.as_slice() {
                return Err(format!("mismatch at age {age}"));
            }
        }
    }
    Ok(())
}

/// Per-index inclusion frequency over `draws` blocks; returns the largest
/// deviation from `N_b/filled` in units of the binomial σ.
pub fn inclusion_z(filled: usize, block: usize, draws: usize, seed: u64) -> f64 {
    let mut bank = MemoryBank::new(256, 4, block).unwrap();
    let mut r = rng(seed);
    bank.push(&rows_to_array(&unit_f32_rows(&mut r, filled, 4))).unwrap();
    let mut counts = vec![0usize; filled];
    for _ in 0..draws {
        for i in bank.sample_block(&mut r).unwrap().indices {
            counts[i] += 1;
        }
    }
    let p = block as f64 / filled as f64;
    let sigma = (draws as f64 * p * (1.0 - p)).sqrt();
    counts.iter().map(|&c| (c as f64 - draws as f64 * p).abs() / sigma).fold(0.0, f64::max)
}

pub fn record(m: usize, spec: usize) -> SampleRecord {
    SampleRecord {
        image_path: "x.png".into(),
        modality: Modality::Synthetic(m as u8),
        specialty: format!("s{spec}"),
        label: Some(0),
        split: Split::Train,
    }
}

/// Checks that every batch of two epochs holds exactly `per` records of
/// each modality and that every record index is valid.
pub fn sampler_is_balanced(sizes: &[usize], per: usize, seed: u64) -> std::result::Result<(), String> {
    let records: Vec<SampleRecord> =
        sizes.iter().enumerate().flat_map(|(m, &n)| (0..n).map(move |i| record(m, i % 2))).collect();
    let m = sizes.len();
    let s = BalancedSampler::new(&records, per * m, BalanceAxis::Modality, seed).map_err(|e| e.to_string())?;
    for e in 0..2 {
        let batches = s.epoch(e);
        if batches.len() != s.batches_per_epoch() {
            return Err("batch count".into());
        }
        for b in &batches {
            let mut counts = vec![0usize; m];
            for &i in b {
                match records[i].modality {
                    Modality::Synthetic(k) => counts[k as usize] += 1,
                    _ => unreachable!(),
                }
            }
            if counts.iter().any(|&c| c != per) {
                return Err(format!("epoch {e}: counts {counts:?}"));
            }
        }
    }
    Ok(())
}

