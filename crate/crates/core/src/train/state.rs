use crate::autodiff::{adamw_step, Array, OptimizerState, ParamSet, Tape};
use crate::config::RunConfig;
use crate::data::ViewSet;
use crate::error::{Error, Result};
use crate::memory::MemoryBank;
use crate::raster::Image;
use crate::rng;
use crate::vit::{encode, encode_batch, init_params, project, project_batch};

use super::loss::{ssl_loss_blocks, ViewLayout};
use super::schedule::ScheduleValues;

/// `θ_t ← m·θ_t + (1 − m)·θ_s` for every parameter.
pub fn ema_update(teacher: &mut ParamSet<f32>, student: &ParamSet<f32>, momentum: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&momentum) {
        return Err(Error::Config(format!("EMA momentum {momentum} outside [0, 1]")));
    }
    if !teacher.same_layout(student) {
        return Err(Error::Config("EMA: teacher and student parameter sets differ".into()));
    }
    let m = momentum as f32;
    let one_minus = (1.0 - momentum) as f32;
    for ((_, t), (_, s)) in teacher.iter_mut().zip(student.iter()) {
        for (tv, sv) in t.data_mut().iter_mut().zip(s.data()) {
            *tv = m * *tv + one_minus * *sv;
        }
    }
    Ok(())
}

/// Everything needed to continue pretraining bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub student: ParamSet<f32>,
    pub teacher: ParamSet<f32>,
    pub optimizer: OptimizerState<f32>,
    pub bank: MemoryBank,
    pub seed: u64,
    pub step: u64,
    pub epoch: u64,
    /// One row per completed step.
    pub log: Vec<LossRow>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub epoch: u64,
    pub lr: f64,
    pub wd: f64,
    pub tau_t: f64,
    pub momentum: f64,
    pub loss: f64,
}

pub const LOSS_HEADER: &str = "step,epoch,lr,wd,tau_t,momentum,loss";

impl LossRow {
    pub fn csv_line(&self) -> String {
        format!("{},{},{},{},{},{},{}", self.step, self.epoch, self.lr, self.wd, self.tau_t, self.momentum, self.loss)
    }
}

pub fn loss_csv(rows: &[LossRow]) -> String {
    let mut s = String::from(LOSS_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&r.csv_line());
        s.push('\n');
    }
    s
}

impl TrainState {
    /// Student initialized from the seed; the teacher starts as its copy.
    pub fn new(cfg: &RunConfig) -> Result<Self> {
        let student = init_params(&cfg.encoder, rng::derive_seed(cfg.seed, "init", 0))?;
        Self::from_student(cfg, student)
    }

    pub fn from_student(cfg: &RunConfig, student: ParamSet<f32>) -> Result<Self> {
        Ok(Self {
            teacher: student.clone(),
            optimizer: OptimizerState::new(&student),
            student,
            bank: MemoryBank::new(cfg.memory.k, cfg.encoder.proj_out_dim, cfg.memory.block)?,
            seed: cfg.seed,
            step: 0,
            epoch: 0,
            log: Vec::new(),
        })
    }
}

fn teacher_embeddings(params: &ParamSet<f32>, cfg: &RunConfig, views: &[&Image]) -> Result<Array<f32>> {
    let cls = encode_batch(params, &cfg.encoder, views)?;
    project_batch(&cls, params, &cfg.encoder)
}

/// One optimization step on a batch of view sets; returns the loss.
///
/// The teacher embeds the global views, the student all twelve; one memory
/// support is drawn for the step and shared by both. After the AdamW and
/// EMA updates the teacher's global embeddings enter the memory. On the very
/// first step the memory is empty, so those embeddings are pushed before the
/// loss instead.
pub fn pretrain_step(state: &mut TrainState, batch: &[ViewSet], cfg: &RunConfig, sched: ScheduleValues) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Data("empty batch".into()));
    }
    let layout = ViewLayout { samples: batch.len(), teacher_locals: cfg.pretrain.teacher_locals };
    let globals: Vec<&Image> = batch.iter().flat_map(|v| v.global.iter()).collect();
    let locals: Vec<&Image> = batch.iter().flat_map(|v| v.local.iter()).collect();

    let teacher_globals = teacher_embeddings(&state.teacher, cfg, &globals)?;
    let teacher = if layout.teacher_locals {
        let t_locals = teacher_embeddings(&state.teacher, cfg, &locals)?;
        let d = t_locals.cols();
        let mut data = teacher_globals.data().to_vec();
        data.extend_from_slice(t_locals.data());
        Array::new(vec![layout.teacher_rows(), d], data)?
    } else {
        teacher_globals.clone()
    };
    let pushed_early = state.bank.is_empty();
    if pushed_early {
        state.bank.push(&teacher_globals)?;
    }
    let mut block_rng = rng::stream(state.seed, "block", state.step);
    let blocks = state.bank.blocks(cfg.memory.mode, &mut block_rng)?;
    let blocks: Vec<Array<f32>> = blocks.iter().map(|b| state.bank.gather(b)).collect::<Result<_>>()?;

    let mut tape = Tape::new();
    let bound = state.student.bind(&mut tape, true);
    let enc = &cfg.encoder;
    let g = encode(&mut tape, &bound, enc, &globals)?;
    let g = project(&mut tape, &bound, enc, g)?;
    let l = encode(&mut tape, &bound, enc, &locals)?;
    let l = project(&mut tape, &bound, enc, l)?;
    let student = tape.concat(&[g, l], 0)?;
    let loss = ssl_loss_blocks(&mut tape, &teacher, student, &blocks, layout, sched.tau_t, sched.tau_s)?;
    let loss_value = tape.value(loss).item() as f64;
    if !loss_value.is_finite() {
        return Err(Error::Data(format!("non-finite loss at step {}", state.step)));
    }
    let mut grads = tape.backward(loss)?;
    let grads = bound.gradients(&mut grads)?;
    drop(tape);

    adamw_step(&mut state.student, &grads, &mut state.optimizer, sched.lr, sched.wd)?;
    ema_update(&mut state.teacher, &state.student, sched.momentum)?;
    if !pushed_early {
        state.bank.push(&teacher_globals)?;
    }
    state.step += 1;
    Ok(loss_value)
}
