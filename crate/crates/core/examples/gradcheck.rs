//! Finite-difference check of a few tape ops and of the full
//! encoder → head → loss graph in f64.

use memssl::autodiff::gradcheck::DEFAULT_STEP;
use memssl::autodiff::{grad_check, grad_check_params, Array, ParamSet};
use memssl::data::{generate_views, AugmentConfig};
use memssl::memory::MemoryBank;
use memssl::raster::Image;
use memssl::train::{ssl_loss, ViewLayout};
use memssl::vit::{encode, init_params, project, ViTConfig};

fn main() -> memssl::Result<()> {
    let x = Array::new(vec![2, 3], vec![0.3, -1.2, 0.8, 2.0, 0.1, -0.4])?;
    let err = grad_check(
        |t, x| {
            let y = t.softmax_rows(x, 0.5)?;
            let y = t.mul(y, x)?;
            t.sum(y)
        },
        &x,
        DEFAULT_STEP,
    )?;
    println!("softmax·x       max rel err {err:.2e}");

    let err = grad_check(
        |t, x| {
            let y = t.l2_normalize_rows(x)?;
            let y = t.gelu(y)?;
            t.sum(y)
        },
        &x,
        DEFAULT_STEP,
    )?;
    println!("gelu(l2norm(x)) max rel err {err:.2e}");

    // composite: one sample, tiny encoder, memory block of 4 rows
    let cfg = ViTConfig::tiny();
    let mut params: ParamSet<f64> = init_params(&cfg, 1)?.cast();
    // Probe at a generic point. At init `[CLS]` is exactly zero, and its first
    // layer norm sits on a zero-variance row whose curvature scale (√ε) is far
    // below any usable finite-difference step.
    for (_, a) in params.iter_mut() {
        for (i, v) in a.data_mut().iter_mut().enumerate() {
            *v += 0.2 * ((i as f64) * 0.7 + 0.3).sin();
        }
    }
    let image = Image::new(16, 16, 3, (0..16 * 16 * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect())?;
    let views = generate_views(&image, &AugmentConfig::default(), cfg.global_view_px, cfg.local_view_px, 0, 3)?;
    let globals: Vec<&Image> = views.global.iter().collect();
    let locals: Vec<&Image> = views.local.iter().collect();
    let mut bank = MemoryBank::new(4, cfg.proj_out_dim, 4)?;
    let rows: Vec<Vec<f32>> = (0..4)
        .map(|r| {
            let v: Vec<f32> = (0..cfg.proj_out_dim).map(|c| ((r * 7 + c * 3) % 5) as f32 - 2.0).collect();
            let n = v.iter().map(|a| a * a).sum::<f32>().sqrt();
            v.iter().map(|a| a / n).collect()
        })
        .collect();
    bank.push(&Array::from_rows(&rows)?)?;
    let block = bank.gather::<f64>(&bank.partition()[0])?;
    let teacher = memssl::vit::project_batch(&memssl::vit::encode_batch(&params, &cfg, &globals)?, &params, &cfg)?;
    let layout = ViewLayout::new(1);

    let report = grad_check_params(&params, DEFAULT_STEP, |t, b| {
        let g = encode(t, b, &cfg, &globals)?;
        let l = encode(t, b, &cfg, &locals)?;
        let g = project(t, b, &cfg, g)?;
        let l = project(t, b, &cfg, l)?;
        let s = t.concat(&[g, l], 0)?;
        ssl_loss(t, &teacher, s, &block, layout, 0.04, 0.1)
    })?;
    println!("composite graph max rel err {:.2e} over {} parameters", report.max_rel_err, params.num_elements());
    Ok(())
}
