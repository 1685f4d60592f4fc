//! AdamW with decoupled weight decay.

use super::array::Real;
use super::params::ParamSet;
use crate::error::{Error, Result};

pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

/// First/second moments per parameter plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T> {
    pub m: ParamSet<T>,
    pub v: ParamSet<T>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Real> OptimizerState<T> {
    /// Zero moments shaped like `params`, default betas and epsilon.
    pub fn new(params: &ParamSet<T>) -> Self {
        Self::with_hyper(params, DEFAULT_BETA1, DEFAULT_BETA2, DEFAULT_EPS)
    }

    pub fn with_hyper(params: &ParamSet<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { m: params.zeros_like(), v: params.zeros_like(), t: 0, beta1, beta2, eps }
    }
}

/// One AdamW update.
///
/// The decay `θ ← θ − lr·wd·θ` is applied first and independently of the
/// gradient; the bias-corrected Adam step follows.
pub fn adamw_step<T: Real>(
    params: &mut ParamSet<T>,
    grads: &ParamSet<T>,
    state: &mut OptimizerState<T>,
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if !params.same_layout(grads) || !params.same_layout(&state.m) {
        return Err(Error::Config("adamw_step: parameter, gradient and state layouts differ".into()));
    }
    if lr < 0.0 || weight_decay < 0.0 {
        return Err(Error::Config(format!("adamw_step: lr {lr} and weight decay {weight_decay} must be >= 0")));
    }
    state.t += 1;
    let t = state.t as i32;
    let (b1, b2) = (T::lit(state.beta1), T::lit(state.beta2));
    let one = T::one();
    // bias corrections in T so they cancel the (1 - β) factors exactly
    let bc1 = one - b1.powi(t);
    let bc2 = one - b2.powi(t);
    let eps = T::lit(state.eps);
    let lr_t = T::lit(lr);
    let decay = T::lit(1.0 - lr * weight_decay);

    let moments = state.m.iter_mut().zip(state.v.iter_mut());
    for (((_, p), (_, g)), ((_, m), (_, v))) in params.iter_mut().zip(grads.iter()).zip(moments) {
        let (p, g, m, v) = (p.data_mut(), g.data(), m.data_mut(), v.data_mut());
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] = p[i] * decay - lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Array;

    fn single(x: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.insert("w", Array::scalar(x)).unwrap();
        p
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut p = single(1.5);
        let g = single(0.0);
        let mut s = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut s, 0.1, 0.0).unwrap();
        assert_eq!(p.get("w").unwrap().item(), 1.5);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn decay_only_step() {
        let mut p = single(2.0);
        let g = single(0.0);
        let mut s = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut s, 1.0, 0.1).unwrap();
        assert!((p.get("w").unwrap().item() - 1.8).abs() < 1e-15);
    }

    #[test]
    fn one_step_matches_hand_recurrence() {
        // m = 0.1, v = 0.001, m_hat = 1, v_hat = 1 -> θ' = 1 - 0.1 / (1 + 1e-8)
        let expected = 1.0 - 0.1 / (1.0 + 1e-8);
        let mut p = single(1.0);
        let g = single(1.0);
        let mut s = OptimizerState::new(&p);
        adamw_step(&mut p, &g, &mut s, 0.1, 0.0).unwrap();
        assert!((p.get("w").unwrap().item() - expected).abs() < 1e-7);

        let mut p32 = single(1.0).cast::<f32>();
        let g32 = single(1.0).cast::<f32>();
        let mut s32 = OptimizerState::new(&p32);
        adamw_step(&mut p32, &g32, &mut s32, 0.1, 0.0).unwrap();
        assert!((p32.get("w").unwrap().item() as f64 - expected).abs() < 1e-7);
    }

    #[test]
    fn deterministic_bitwise() {
        let run = || {
            let mut p = ParamSet::new();
            p.insert("a", Array::<f32>::from_f64(vec![3], &[0.3, -1.2, 7.0]).unwrap()).unwrap();
            let mut g = ParamSet::new();
            g.insert("a", Array::<f32>::from_f64(vec![3], &[0.01, 2.0, -0.5]).unwrap()).unwrap();
            let mut s = OptimizerState::new(&p);
            for _ in 0..5 {
                adamw_step(&mut p, &g, &mut s, 1e-3, 0.04).unwrap();
            }
            p.get("a").unwrap().data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_layout_mismatch() {
        let mut p = single(1.0);
        let mut g = ParamSet::new();
        g.insert("other", Array::scalar(0.0)).unwrap();
        let mut s = OptimizerState::new(&p);
        assert!(adamw_step(&mut p, &g, &mut s, 0.1, 0.0).is_err());
    }
}
