//! Straight-line flows between clean and degraded samples.
//!
//! The state at time `t` is `xt = t·x1 + (1−t)·x0`, with `x0` clean and
//! `x1` degraded, so `t = 0` is the clean sample and `t = 1` is the
//! observation itself. [`CoupledSchedule`] generalizes this to
//! `α(t)·x0 + β(t)·x1 + γ(t)·ε` for comparison against noise-coupled
//! formulations.

use rand::{Rng, RngCore};

use crate::error::{Error, Result};
use crate::mct::TrainConfig;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct FlowState {
    pub x0: Tensor,
    pub x1: Tensor,
    pub t: f64,
    pub xt: Tensor,
}

pub(crate) fn check_unit_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::OutOfRange {
            name: "t",
            value: t,
            lo: 0.0,
            hi: 1.0,
        });
    }
    Ok(())
}

/// `t·x1 + (1−t)·x0` written elementwise without checks.
pub(crate) fn lerp_into(out: &mut [f64], x0: &[f64], x1: &[f64], t: f64) {
    let s = 1.0 - t;
    for ((o, &a), &b) in out.iter_mut().zip(x0).zip(x1) {
        *o = t * b + s * a;
    }
}

pub fn interpolate(x0: &Tensor, x1: &Tensor, t: f64) -> Result<FlowState> {
    check_unit_time(t)?;
    if x0.shape() != x1.shape() {
        return Err(Error::shape("interpolate", x0.shape(), x1.shape()));
    }
    let mut xt = alloc::vec![0.0; x0.len()];
    lerp_into(&mut xt, x0.data(), x1.data(), t);
    Ok(FlowState {
        x0: x0.clone(),
        x1: x1.clone(),
        t,
        xt: Tensor::from_parts(x0.shape().to_vec(), xt),
    })
}

/// Time-dependent coefficients `(α, β, γ)` of the coupled parameterization.
#[derive(Clone, Copy)]
pub struct CoupledSchedule {
    pub alpha: fn(f64) -> f64,
    pub beta: fn(f64) -> f64,
    pub gamma: fn(f64) -> f64,
}

impl core::fmt::Debug for CoupledSchedule {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str("CoupledSchedule")
    }
}

impl CoupledSchedule {
    /// `(1−t, t, 0)`: the noise-free straight path.
    pub fn linear() -> Self {
        CoupledSchedule {
            alpha: |t| 1.0 - t,
            beta: |t| t,
            gamma: |_| 0.0,
        }
    }

    pub fn coefficients(&self, t: f64) -> Result<(f64, f64, f64)> {
        let c = ((self.alpha)(t), (self.beta)(t), (self.gamma)(t));
        if !(c.0.is_finite() && c.1.is_finite() && c.2.is_finite()) {
            return Err(Error::config("schedule coefficient is not finite"));
        }
        Ok(c)
    }
}

pub fn coupled_interpolate(x0: &Tensor, x1: &Tensor, eps: &Tensor, sched: &CoupledSchedule, t: f64) -> Result<Tensor> {
    if x0.shape() != x1.shape() {
        return Err(Error::shape("coupled_interpolate", x0.shape(), x1.shape()));
    }
    if x0.shape() != eps.shape() {
        return Err(Error::shape("coupled_interpolate", x0.shape(), eps.shape()));
    }
    let (a, b, g) = sched.coefficients(t)?;
    let data = x0
        .data()
        .iter()
        .zip(x1.data())
        .zip(eps.data())
        .map(|((&p, &q), &e)| a * p + b * q + g * e)
        .collect();
    Tensor::new(x0.shape().to_vec(), data)
}

/// Uniform draw from the grid `{1/T, 2/T, …, 1}`.
pub fn sample_time(rng: &mut dyn RngCore, cfg: &TrainConfig) -> Result<f64> {
    if cfg.timesteps < 1 {
        return Err(Error::config("timesteps must be at least 1"));
    }
    let k = rng.random_range(1..=cfg.timesteps);
    Ok(k as f64 / cfg.timesteps as f64)
}
