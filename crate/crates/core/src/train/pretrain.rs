use std::path::{Path, PathBuf};

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::data::{generate_views, BalancedSampler, Dataset, ViewSet};
use crate::error::{Error, Result};
use crate::io::{ensure_writable_dir, write_atomic};
use crate::rng;

use super::state::{loss_csv, pretrain_step, LossRow, TrainState};

pub const LOSS_CSV: &str = "loss.csv";
pub const CHECKPOINT_DIR: &str = "checkpoints";

pub fn checkpoint_path(out_dir: &Path, step: u64) -> PathBuf {
    out_dir.join(CHECKPOINT_DIR).join(format!("step_{step:08}.mmfm"))
}

pub struct PretrainOutcome {
    pub state: TrainState,
    pub checkpoints: Vec<PathBuf>,
}

/// Step budget of a run: full epochs, optionally cut at `max_steps`.
pub fn total_steps(cfg: &RunConfig, batches_per_epoch: usize) -> u64 {
    let full = cfg.pretrain.epochs * batches_per_epoch as u64;
    match cfg.pretrain.max_steps {
        0 => full,
        m => full.min(m),
    }
}

/// Builds the view sets for one batch; every sample's stream is keyed by
/// `(seed, step, record index)`, independent of batch composition.
pub fn batch_views(cfg: &RunConfig, data: &Dataset, indices: &[usize], step: u64) -> Result<Vec<ViewSet>> {
    let seed = rng::derive_seed(cfg.seed, "views", step);
    let (g, l) = (cfg.encoder.global_view_px, cfg.encoder.local_view_px);
    indices
        .iter()
        .map(|&i| {
            let image = data
                .images
                .get(i)
                .ok_or_else(|| Error::Data(format!("batch index {i} is beyond the {} records", data.len())))?;
            generate_views(image, &cfg.augment, g, l, i as u64, seed)
        })
        .collect()
}

/// Runs (or resumes) pretraining over every record of `data`.
///
/// Writes `run_manifest.toml`, a checkpoint at step 0, one every
/// `checkpoint_every` epochs and one at the end, and `loss.csv`. A resumed
/// run reproduces the uninterrupted run bit for bit.
pub fn pretrain(
    cfg: &RunConfig,
    data: &Dataset,
    out_dir: &Path,
    resume: Option<TrainState>,
    mut on_step: impl FnMut(&LossRow),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    ensure_writable_dir(out_dir)?;
    ensure_writable_dir(&out_dir.join(CHECKPOINT_DIR))?;
    cfg.write_manifest(out_dir)?;

    let sampler = BalancedSampler::new(
        &data.records,
        cfg.pretrain.batch_size,
        cfg.pretrain.balance,
        rng::derive_seed(cfg.seed, "sampler", 0),
    )?;
    let bpe = sampler.batches_per_epoch();
    let total = total_steps(cfg, bpe);
    let last_step = total.saturating_sub(1);

    let mut checkpoints = Vec::new();
    let save = |state: &TrainState, checkpoints: &mut Vec<PathBuf>| -> Result<()> {
        let path = checkpoint_path(out_dir, state.step);
        Checkpoint::from_state(state, cfg).save(&path)?;
        write_atomic(&out_dir.join(LOSS_CSV), loss_csv(&state.log).as_bytes())?;
        checkpoints.push(path);
        Ok(())
    };

    let mut state = match resume {
        Some(s) => {
            if s.seed != cfg.seed {
                return Err(Error::Config(format!("checkpoint seed {} differs from config seed {}", s.seed, cfg.seed)));
            }
            s
        }
        None => {
            let s = TrainState::new(cfg)?;
            save(&s, &mut checkpoints)?;
            s
        }
    };

    let mut cached: Option<(u64, Vec<Vec<usize>>)> = None;
    while state.step < total {
        let epoch = state.step / bpe as u64;
        let in_epoch = (state.step % bpe as u64) as usize;
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            cached = Some((epoch, sampler.epoch(epoch)));
        }
        let indices = &cached.as_ref().expect("cached epoch").1[in_epoch];
        let views = batch_views(cfg, data, indices, state.step)?;
        let sched = cfg.schedule.at(state.step, last_step, epoch);
        let step = state.step;
        let loss = pretrain_step(&mut state, &views, cfg, sched)?;
        let row = LossRow { step, epoch, lr: sched.lr, wd: sched.wd, tau_t: sched.tau_t, momentum: sched.momentum, loss };
        state.log.push(row);
        state.epoch = state.step / bpe as u64;
        on_step(&row);

        let epoch_done = state.step % bpe as u64 == 0;
        let every = cfg.pretrain.checkpoint_every;
        if state.step == total || (epoch_done && every > 0 && state.epoch % every == 0) {
            save(&state, &mut checkpoints)?;
        }
    }
    if checkpoints.is_empty() || state.log.is_empty() {
        // resumed at (or initialized to) the final step: keep the outputs current
        write_atomic(&out_dir.join(LOSS_CSV), loss_csv(&state.log).as_bytes())?;
    }
    Ok(PretrainOutcome { state, checkpoints })
}
