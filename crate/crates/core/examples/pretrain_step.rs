//! 200 self-supervised steps of the tiny encoder on a small synthetic
//! corpus; the late loss should sit below the early loss.

use memssl::config::RunConfig;
use memssl::data::{generate_synthetic_corpus, BalanceAxis, BalancedSampler, Dataset, SynthSpec};
use memssl::train::{batch_views, pretrain_step, TrainState};
use memssl::vit::ViTConfig;

fn main() -> memssl::Result<()> {
    let mut cfg = RunConfig::desk();
    cfg.encoder = ViTConfig::tiny();
    cfg.memory.k = 64;
    cfg.memory.block = 16;
    cfg.pretrain.batch_size = 3;
    cfg.synth = SynthSpec { n_modalities: 3, n_classes: 2, samples_per_class: 10, image_px: 16 };
    let data = Dataset::from_synth(generate_synthetic_corpus(&cfg.synth, cfg.seed)?);

    let steps = 200u64;
    let sampler = BalancedSampler::new(&data.records, cfg.pretrain.batch_size, BalanceAxis::Modality, cfg.seed)?;
    let mut state = TrainState::new(&cfg)?;
    let mut losses = Vec::new();
    let mut epoch = 0;
    'outer: loop {
        for batch in sampler.epoch(epoch) {
            if state.step == steps {
                break 'outer;
            }
            let sched = cfg.schedule.at(state.step, steps - 1, epoch);
            let views = batch_views(&cfg, &data, &batch, state.step)?;
            losses.push(pretrain_step(&mut state, &views, &cfg, sched)?);
            if state.step % 25 == 0 {
                println!("step {:3} loss {:.4} lr {:.2e} tau_t {:.3}", state.step, losses.last().unwrap(), sched.lr, sched.tau_t);
            }
        }
        epoch += 1;
    }
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&losses[..20]), mean(&losses[losses.len() - 20..]));
    println!("mean loss: first 20 steps {first:.4}, last 20 steps {last:.4}");
    println!("{}", if last < first { "loss decreased" } else { "loss did NOT decrease" });
    Ok(())
}
