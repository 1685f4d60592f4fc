//! Embeds one synthetic image with the desk-sized ViT and projection head.

use memssl::data::{center_view, generate_synthetic_corpus, AugmentConfig, SynthSpec};
use memssl::vit::{encode_batch, init_params, project_batch, ViTConfig};

fn main() -> memssl::Result<()> {
    let cfg = ViTConfig::desk();
    let params = init_params(&cfg, 0)?;
    println!("desk ViT: {} tensors, {} parameters", params.len(), params.num_elements());

    let spec = SynthSpec { n_modalities: 1, n_classes: 2, samples_per_class: 2, image_px: 64 };
    let corpus = generate_synthetic_corpus(&spec, 0)?;
    let aug = AugmentConfig::default();
    let views: Vec<_> = corpus.images.iter().map(|im| center_view(im, &aug, cfg.global_view_px)).collect();
    let refs: Vec<_> = views.iter().collect();

    let cls = encode_batch(&params, &cfg, &refs)?;
    let z = project_batch(&cls, &params, &cfg)?;
    println!("[CLS] {:?} -> embeddings {:?}", cls.shape(), z.shape());
    for i in 0..z.rows() {
        let norm = z.row(i).iter().map(|v| v * v).sum::<f32>().sqrt();
        let head: Vec<String> = z.row(i)[..4].iter().map(|v| format!("{v:+.3}")).collect();
        println!("  image {i}: |z| = {norm:.4}  z[..4] = {}", head.join(" "));
    }
    Ok(())
}
