//! Pre-norm Vision Transformer returning the final `[CLS]` row, and the
//! three-layer projection head onto the unit sphere.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::ViTConfig;
use super::patch::{bilinear_matrix, patchify_into};
use crate::autodiff::{Array, Bound, ParamSet, Real, Tape, Var};
use crate::error::{Error, Result};
use crate::raster::Image;

pub const ENCODER_PREFIX: &str = "encoder.";
pub const HEAD_PREFIX: &str = "head.";

const INIT_STD: f64 = 0.02;

pub(crate) fn trunc_normal(rng: &mut ChaCha8Rng, shape: &[usize]) -> Array<f32> {
    trunc_normal_std(rng, shape, INIT_STD)
}

/// Normal(0, std²) truncated at ±2 std.
fn trunc_normal_std(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Array<f32> {
    let normal = Normal::new(0.0, std).expect("valid std");
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v: f64 = normal.sample(rng);
            if v.abs() <= 2.0 * std {
                break v as f32;
            }
        })
        .collect();
    Array::new(shape.to_vec(), data).expect("init shape")
}

fn insert_linear(p: &mut ParamSet<f32>, rng: &mut ChaCha8Rng, name: &str, fan_in: usize, fan_out: usize) -> Result<()> {
    p.insert(format!("{name}.weight"), trunc_normal(rng, &[fan_in, fan_out]))?;
    p.insert(format!("{name}.bias"), Array::zeros(&[fan_out]))
}

fn insert_norm(p: &mut ParamSet<f32>, name: &str, dim: usize) -> Result<()> {
    p.insert(format!("{name}.weight"), Array::filled(&[dim], 1.0))?;
    p.insert(format!("{name}.bias"), Array::zeros(&[dim]))
}

/// Encoder parameters: truncated-normal (σ = 0.02) weights; zero `[CLS]`,
/// positional table and biases; unit layer-norm gains.
///
/// A random `[CLS]`/positional table is a constant offset shared by every
/// image and dominates the untrained `[CLS]` output, which starts the
/// student next to the collapsed solution.
pub fn init_encoder(cfg: &ViTConfig, rng: &mut ChaCha8Rng) -> Result<ParamSet<f32>> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let mut p = ParamSet::new();
    insert_linear(&mut p, rng, "encoder.patch_embed", cfg.patch_len(), d)?;
    p.insert("encoder.cls_token", Array::zeros(&[1, d]))?;
    p.insert("encoder.pos_embed", Array::zeros(&[1 + cfg.grid() * cfg.grid(), d]))?;
    for i in 0..cfg.depth {
        let b = format!("encoder.block{i}");
        insert_norm(&mut p, &format!("{b}.norm1"), d)?;
        insert_linear(&mut p, rng, &format!("{b}.attn.qkv"), d, 3 * d)?;
        insert_linear(&mut p, rng, &format!("{b}.attn.proj"), d, d)?;
        insert_norm(&mut p, &format!("{b}.norm2"), d)?;
        insert_linear(&mut p, rng, &format!("{b}.mlp.fc1"), d, d * cfg.mlp_ratio)?;
        insert_linear(&mut p, rng, &format!("{b}.mlp.fc2"), d * cfg.mlp_ratio, d)?;
    }
    insert_norm(&mut p, "encoder.norm", d)?;
    Ok(p)
}

/// Head weights use fan-in scaling (std 1/√fan_in, truncated at ±2 std) so
/// the embedding spread survives three layers; biases are zero.
pub fn init_projection_head(cfg: &ViTConfig, rng: &mut ChaCha8Rng) -> Result<ParamSet<f32>> {
    let mut p = ParamSet::new();
    let dims = [
        ("head.layer1", cfg.embed_dim, cfg.proj_hidden_dim),
        ("head.layer2", cfg.proj_hidden_dim, cfg.proj_hidden_dim),
        ("head.layer3", cfg.proj_hidden_dim, cfg.proj_out_dim),
    ];
    for (name, fan_in, fan_out) in dims {
        let std = 1.0 / (fan_in as f64).sqrt();
        p.insert(format!("{name}.weight"), trunc_normal_std(rng, &[fan_in, fan_out], std))?;
        p.insert(format!("{name}.bias"), Array::zeros(&[fan_out]))?;
    }
    Ok(p)
}

/// Encoder plus projection head, deterministic in `seed`.
pub fn init_params(cfg: &ViTConfig, seed: u64) -> Result<ParamSet<f32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = init_encoder(cfg, &mut rng)?;
    p.extend(init_projection_head(cfg, &mut rng)?)?;
    Ok(p)
}

/// Encodes a batch of equally sized square views; returns `[B, embed_dim]`.
pub fn encode<T: Real>(tape: &mut Tape<T>, p: &Bound, cfg: &ViTConfig, views: &[&Image]) -> Result<Var> {
    let first = views.first().ok_or_else(|| Error::shape("encode", "empty batch"))?;
    let (h, w) = (first.height, first.width);
    if h != w {
        return Err(Error::shape("encode", format!("views must be square, got {h}x{w}")));
    }
    if views.iter().any(|v| v.height != h || v.width != w || v.channels != cfg.channels) {
        return Err(Error::shape("encode", "views in a batch must share size and channel count"));
    }
    if h % cfg.patch_size != 0 {
        return Err(Error::shape("encode", format!("{h}px view is not a multiple of patch {}", cfg.patch_size)));
    }
    let b = views.len();
    let d = cfg.embed_dim;
    let g = h / cfg.patch_size;
    let n = g * g;
    let t_len = n + 1;
    let (heads, dh) = (cfg.heads, cfg.head_dim());

    let mut raw = Vec::with_capacity(b * n * cfg.patch_len());
    for v in views {
        patchify_into(v, cfg.patch_size, &mut raw)?;
    }
    let tokens = tape.constant(Array::new(vec![b * n, cfg.patch_len()], raw)?);
    let x = tape.linear(tokens, p.get("encoder.patch_embed.weight")?, p.get("encoder.patch_embed.bias")?)?;
    let x = tape.reshape(x, &[b, n, d])?;
    let cls = tape.tile(p.get("encoder.cls_token")?, b)?;
    let x = tape.concat(&[cls, x], 1)?;

    let pos = p.get("encoder.pos_embed")?;
    let grid = cfg.grid();
    let pos = if g == grid {
        pos
    } else {
        let pos_cls = tape.slice(pos, 0, 0, 1)?;
        let pos_grid = tape.slice(pos, 0, 1, 1 + grid * grid)?;
        let m = tape.constant(bilinear_matrix(grid, g)?);
        let resampled = tape.matmul(m, pos_grid)?;
        tape.concat(&[pos_cls, resampled], 0)?
    };
    let pos = tape.tile(pos, b)?;
    let x = tape.add(x, pos)?;
    let mut x = tape.reshape(x, &[b * t_len, d])?;

    let attn_scale = T::lit(1.0 / (dh as f64).sqrt());
    for i in 0..cfg.depth {
        let pre = format!("encoder.block{i}");
        let get = |s: &str| p.get(&format!("{pre}.{s}"));

        let h = tape.layer_norm(x, get("norm1.weight")?, get("norm1.bias")?)?;
        let qkv = tape.linear(h, get("attn.qkv.weight")?, get("attn.qkv.bias")?)?;
        let qkv = tape.reshape(qkv, &[b, t_len, 3, heads, dh])?;
        let qkv = tape.permute(qkv, &[2, 0, 3, 1, 4])?;
        let qkv = tape.reshape(qkv, &[3, b * heads * t_len * dh])?;
        let mut qkv_parts = [qkv; 3];
        for (j, part) in qkv_parts.iter_mut().enumerate() {
            let s = tape.slice(qkv, 0, j, j + 1)?;
            *part = tape.reshape(s, &[b * heads, t_len, dh])?;
        }
        let [q, k, v] = qkv_parts;
        let scores = tape.bmm(q, k, true)?;
        let scores = tape.scale(scores, attn_scale)?;
        let attn = tape.softmax_rows(scores, T::one())?;
        let o = tape.bmm(attn, v, false)?;
        let o = tape.reshape(o, &[b, heads, t_len, dh])?;
        let o = tape.permute(o, &[0, 2, 1, 3])?;
        let o = tape.reshape(o, &[b * t_len, d])?;
        let o = tape.linear(o, get("attn.proj.weight")?, get("attn.proj.bias")?)?;
        x = tape.add(x, o)?;

        let h = tape.layer_norm(x, get("norm2.weight")?, get("norm2.bias")?)?;
        let h = tape.linear(h, get("mlp.fc1.weight")?, get("mlp.fc1.bias")?)?;
        let h = tape.gelu(h)?;
        let h = tape.linear(h, get("mlp.fc2.weight")?, get("mlp.fc2.bias")?)?;
        x = tape.add(x, h)?;
    }

    // the final norm is row-wise, so only the [CLS] rows need it
    let x = tape.reshape(x, &[b, t_len, d])?;
    let cls = tape.slice(x, 1, 0, 1)?;
    let cls = tape.reshape(cls, &[b, d])?;
    tape.layer_norm(cls, p.get("encoder.norm.weight")?, p.get("encoder.norm.bias")?)
}

/// Projection head: linear → GELU → linear → GELU → linear → unit norm.
pub fn project<T: Real>(tape: &mut Tape<T>, p: &Bound, cfg: &ViTConfig, cls: Var) -> Result<Var> {
    let shape = tape.shape(cls);
    if shape.len() != 2 || shape[1] != cfg.embed_dim {
        return Err(Error::shape("project", format!("input {shape:?}, expected [_, {}]", cfg.embed_dim)));
    }
    let h = tape.linear(cls, p.get("head.layer1.weight")?, p.get("head.layer1.bias")?)?;
    let h = tape.gelu(h)?;
    let h = tape.linear(h, p.get("head.layer2.weight")?, p.get("head.layer2.bias")?)?;
    let h = tape.gelu(h)?;
    let h = tape.linear(h, p.get("head.layer3.weight")?, p.get("head.layer3.bias")?)?;
    tape.l2_normalize_rows(h)
}

/// Gradient-free batch forward returning `[B, embed_dim]` `[CLS]` embeddings.
pub fn encode_batch<T: Real>(params: &ParamSet<T>, cfg: &ViTConfig, views: &[&Image]) -> Result<Array<T>> {
    let mut tape = Tape::new();
    let bound = params.filter_prefix(ENCODER_PREFIX).bind(&mut tape, false);
    let out = encode(&mut tape, &bound, cfg, views)?;
    Ok(tape.value(out).clone())
}

/// Single-view convenience form of [`encode_batch`].
pub fn encode_view<T: Real>(view: &Image, params: &ParamSet<T>, cfg: &ViTConfig) -> Result<Vec<T>> {
    Ok(encode_batch(params, cfg, &[view])?.into_data())
}

/// Gradient-free projection of `[B, embed_dim]` embeddings onto the sphere.
pub fn project_batch<T: Real>(cls: &Array<T>, params: &ParamSet<T>, cfg: &ViTConfig) -> Result<Array<T>> {
    let mut tape = Tape::new();
    let bound = params.filter_prefix(HEAD_PREFIX).bind(&mut tape, false);
    let x = tape.constant(cls.clone());
    let out = project(&mut tape, &bound, cfg, x)?;
    Ok(tape.value(out).clone())
}
