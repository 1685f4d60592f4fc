//! View–memory consistency loss: cross-entropy between the teacher's and
//! the student's softmax distributions over a shared memory block.

use crate::autodiff::{softmax_rows_array, Array, Real, Tape, Var};
use crate::data::{NUM_GLOBAL_VIEWS, NUM_LOCAL_VIEWS};
use crate::error::{Error, Result};

/// Row layout of a batch of `samples` view sets.
///
/// Student rows hold every global view first, sample-major (`s·2 + g`),
/// then the local views sample-major (`2·samples + s·10 + l`). Teacher rows
/// are the global views in the same order, followed by the local views when
/// `teacher_locals` is set.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ViewLayout {
    pub samples: usize,
    pub teacher_locals: bool,
}

const VIEWS: usize = NUM_GLOBAL_VIEWS + NUM_LOCAL_VIEWS;

impl ViewLayout {
    pub fn new(samples: usize) -> Self {
        Self { samples, teacher_locals: false }
    }

    pub fn teacher_views(&self) -> usize {
        if self.teacher_locals {
            VIEWS
        } else {
            NUM_GLOBAL_VIEWS
        }
    }

    pub fn teacher_rows(&self) -> usize {
        self.samples * self.teacher_views()
    }

    pub fn student_rows(&self) -> usize {
        self.samples * VIEWS
    }

    pub fn student_row(&self, sample: usize, view: usize) -> usize {
        if view < NUM_GLOBAL_VIEWS {
            sample * NUM_GLOBAL_VIEWS + view
        } else {
            self.samples * NUM_GLOBAL_VIEWS + sample * NUM_LOCAL_VIEWS + (view - NUM_GLOBAL_VIEWS)
        }
    }

    /// `(teacher row, student row)` for every pair that enters the loss:
    /// each teacher view against every student view except the one with the
    /// same index.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.teacher_rows() * (VIEWS - 1));
        for s in 0..self.samples {
            for t in 0..self.teacher_views() {
                for v in (0..VIEWS).filter(|&v| v != t) {
                    out.push((self.student_row(s, t), self.student_row(s, v)));
                }
            }
        }
        out
    }
}

/// Loss over one memory block `[N_b, d]`.
///
/// Teacher targets `softmax(t·Mᵀ/τ_t)` are plain data, so no gradient can
/// reach the teacher embeddings or the memory.
pub fn ssl_loss<T: Real>(
    tape: &mut Tape<T>,
    teacher: &Array<T>,
    student: Var,
    block: &Array<T>,
    layout: ViewLayout,
    tau_t: f64,
    tau_s: f64,
) -> Result<Var> {
    let d = block.cols();
    if teacher.ndim() != 2 || teacher.cols() != d || teacher.rows() != layout.teacher_rows() {
        return Err(Error::shape(
            "ssl_loss",
            format!("teacher {:?} vs block {:?} and {} samples", teacher.shape(), block.shape(), layout.samples),
        ));
    }
    let sshape = tape.shape(student);
    if sshape.len() != 2 || sshape[1] != d || sshape[0] != layout.student_rows() {
        return Err(Error::shape("ssl_loss", format!("student {sshape:?} vs block {:?}", block.shape())));
    }
    let n_b = block.rows();

    let mut t_sim = vec![T::zero(); teacher.rows() * n_b];
    T::gemm(teacher.rows(), d, n_b, teacher.data(), false, block.data(), true, &mut t_sim, false);
    let p = softmax_rows_array(&Array::new(vec![teacher.rows(), n_b], t_sim)?, T::lit(tau_t))?;

    let pairs = layout.pairs();
    let mut target = Vec::with_capacity(pairs.len() * n_b);
    for &(t, _) in &pairs {
        target.extend_from_slice(p.row(t));
    }
    let target = Array::new(vec![pairs.len(), n_b], target)?;

    let keys = tape.constant(block.clone());
    let s_sim = tape.matmul_t(student, keys, true)?;
    let log_q = tape.log_softmax_rows(s_sim, T::lit(tau_s))?;
    let idx: Vec<usize> = pairs.iter().map(|&(_, s)| s).collect();
    let log_q = tape.gather_rows(log_q, &idx)?;
    tape.cross_entropy_rows(&target, log_q)
}

/// Mean of [`ssl_loss`] over several blocks.
pub fn ssl_loss_blocks<T: Real>(
    tape: &mut Tape<T>,
    teacher: &Array<T>,
    student: Var,
    blocks: &[Array<T>],
    layout: ViewLayout,
    tau_t: f64,
    tau_s: f64,
) -> Result<Var> {
    let mut total: Option<Var> = None;
    for b in blocks {
        let l = ssl_loss(tape, teacher, student, b, layout, tau_t, tau_s)?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::Memory("no memory blocks".into()))?;
    if blocks.len() == 1 {
        return Ok(total);
    }
    tape.scale(total, T::lit(1.0 / blocks.len() as f64))
}
