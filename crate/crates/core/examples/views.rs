//! Writes the 2 global and 10 local views of one synthetic image as PNGs.
//!
//! `cargo run --example views -- [out_dir]`

use std::path::PathBuf;

use memssl::data::{encode_png, generate_synthetic_corpus, generate_views, AugmentConfig, SynthSpec};
use memssl::raster::Image;

fn main() -> memssl::Result<()> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("memssl_views"));
    memssl::io::ensure_writable_dir(&out)?;

    let spec = SynthSpec { n_modalities: 1, n_classes: 1, samples_per_class: 1, image_px: 64 };
    let image = &generate_synthetic_corpus(&spec, 11)?.images[0];
    let aug = AugmentConfig::default();
    let views = generate_views(image, &aug, 64, 32, 0, 5)?;

    // undo the standardization so the PNGs are viewable
    let show = |v: &Image| {
        let mut img = v.clone();
        for px in img.data.chunks_exact_mut(3) {
            for c in 0..3 {
                px[c] = (px[c] * aug.std[c] + aug.mean[c]).clamp(0.0, 1.0);
            }
        }
        img
    };
    let write = |name: String, img: &Image| -> memssl::Result<()> {
        let path = out.join(name);
        memssl::io::write_atomic(&path, &encode_png(img)?)
    };
    write("source.png".into(), image)?;
    for (i, v) in views.global.iter().enumerate() {
        write(format!("global{i}.png"), &show(v))?;
    }
    for (i, v) in views.local.iter().enumerate() {
        write(format!("local{i}.png"), &show(v))?;
    }
    println!("wrote {} views to {}", views.global.len() + views.local.len(), out.display());
    Ok(())
}
