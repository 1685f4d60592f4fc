//! Short pretraining, then a frozen-encoder probe against a random encoder
//! under the same protocol, with bootstrap confidence intervals.

use memssl::config::RunConfig;
use memssl::data::{generate_synthetic_corpus, Dataset, Split, SynthSpec};
use memssl::eval::finetune;
use memssl::train::{pretrain, TrainState};
use memssl::vit::ViTConfig;

fn main() -> memssl::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.seed = 3;
    cfg.encoder = ViTConfig { global_view_px: 32, local_view_px: 16, ..ViTConfig::tiny() };
    cfg.memory.k = 96;
    cfg.memory.block = 32;
    cfg.pretrain.batch_size = 6;
    cfg.pretrain.epochs = 2;
    cfg.pretrain.checkpoint_every = 0;
    cfg.synth = SynthSpec { n_modalities: 3, n_classes: 3, samples_per_class: 30, image_px: 32 };
    cfg.finetune.freeze_encoder = true;
    cfg.finetune.epochs = 40;
    cfg.finetune.warmup_epochs = 4;
    cfg.finetune.lr_peak = 2e-2;
    cfg.eval.bootstrap = 200;

    let data = Dataset::from_synth(generate_synthetic_corpus(&cfg.synth, cfg.seed)?);
    let out = std::env::temp_dir().join("memssl_finetune_example");
    let run = pretrain(&cfg, &data.split(Split::Train), &out, None, |_| {})?;
    println!("pretrained {} steps", run.state.step);

    let n_classes = cfg.synth.n_classes;
    for (name, encoder) in [("pretrained", run.state.student), ("random-init", TrainState::new(&cfg)?.student)] {
        let o = finetune(&encoder, &data, n_classes, &cfg, name)?;
        let r = &o.report;
        println!(
            "{name:>11}: AUROC {:.3} [{:.3}, {:.3}]  sens {:.3}  spec {:.3}  (best epoch {})",
            r.auroc, r.auroc_ci.0, r.auroc_ci.1, r.sens, r.spec, o.best_epoch
        );
    }
    Ok(())
}
