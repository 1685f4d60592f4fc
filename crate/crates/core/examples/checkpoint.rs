//! Saves a pretraining checkpoint mid-run, resumes from it, and checks the
//! resumed run ends bit-identical to an uninterrupted one.

use memssl::checkpoint::Checkpoint;
use memssl::config::RunConfig;
use memssl::data::{generate_synthetic_corpus, Dataset, SynthSpec};
use memssl::train::{checkpoint_path, pretrain, LOSS_CSV};
use memssl::vit::ViTConfig;

fn main() -> memssl::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.encoder = ViTConfig::tiny();
    cfg.memory.k = 48;
    cfg.memory.block = 16;
    cfg.pretrain.batch_size = 3;
    cfg.pretrain.epochs = 4;
    cfg.pretrain.checkpoint_every = 2;
    cfg.synth = SynthSpec { n_modalities: 3, n_classes: 2, samples_per_class: 5, image_px: 16 };
    let data = Dataset::from_synth(generate_synthetic_corpus(&cfg.synth, cfg.seed)?);

    let root = std::env::temp_dir().join("memssl_checkpoint_example");
    let full = pretrain(&cfg, &data, &root.join("full"), None, |_| {})?;
    println!("checkpoints: {:?}", full.checkpoints.iter().map(|p| p.file_name().unwrap()).collect::<Vec<_>>());

    let mid = Checkpoint::load(&full.checkpoints[full.checkpoints.len() / 2])?;
    println!("resuming from step {} (epoch {})", mid.step, mid.epoch);
    let resumed = pretrain(&cfg, &data, &root.join("resumed"), Some(mid.to_state(&cfg)?), |_| {})?;

    let last = |dir: &str, state: &memssl::train::TrainState| checkpoint_path(&root.join(dir), state.step);
    let read = |p: std::path::PathBuf| std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    let same = read(last("full", &full.state)) == read(last("resumed", &resumed.state));
    println!("final checkpoints identical: {same}");
    let same = read(root.join("full").join(LOSS_CSV)) == read(root.join("resumed").join(LOSS_CSV));
    println!("loss logs identical: {same}");
    Ok(())
}
