//! Few-step Euler integration from the degraded sample back to `t = 0`.
//!
//! Both solvers walk the grid `t_i = i/N` for `i = N, …, 1`:
//!
//! * cumulative field: `x ← x − (1/i)·v̂(x, i/N)`
//! * standard field:   `x ← x − (1/N)·v(x, i/N)`
//!
//! The cumulative update is exact for an exact field in any number of
//! steps because the residual shrinks by `∏ (1 − 1/i)`, whose `i = 1`
//! factor is zero.
//!
//! The solver is generic over the state type, so the same code integrates
//! plain tensors at inference time and taped variables inside the
//! consistency loss.

use alloc::vec::Vec;
use core::cell::Cell;

use crate::autodiff::Var;
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::velocity::VelocityMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SamplerConfig {
    pub steps: usize,
    pub mode: VelocityMode,
    pub record_trajectory: bool,
}

impl SamplerConfig {
    pub fn new(steps: usize, mode: VelocityMode) -> Self {
        SamplerConfig {
            steps,
            mode,
            record_trajectory: false,
        }
    }

    pub fn recording(mut self) -> Self {
        self.record_trajectory = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.steps < 1 {
            return Err(Error::config("sampler needs at least one step"));
        }
        Ok(())
    }

    /// Weight applied to the velocity at step `i` (counting down from N).
    pub fn weight(&self, i: usize) -> f64 {
        match self.mode {
            VelocityMode::Cumulative => 1.0 / i as f64,
            VelocityMode::Standard => 1.0 / self.steps as f64,
        }
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.steps as f64
    }
}

/// A velocity model evaluated at a single time for every row of `x`.
pub trait VelocityField<S> {
    fn velocity(&self, x: &S, t: f64) -> Result<S>;
}

impl<S, F> VelocityField<S> for F
where
    F: Fn(&S, f64) -> Result<S>,
{
    fn velocity(&self, x: &S, t: f64) -> Result<S> {
        self(x, t)
    }
}

/// State types the Euler solver can advance.
pub trait SolverState: Clone {
    fn euler_update(&self, weight: f64, velocity: &Self) -> Result<Self>;
    fn all_finite(&self) -> bool;
}

impl SolverState for Tensor {
    fn euler_update(&self, weight: f64, velocity: &Self) -> Result<Self> {
        Tensor::euler_update(self, weight, velocity)
    }

    fn all_finite(&self) -> bool {
        Tensor::all_finite(self)
    }
}

impl SolverState for Var<'_> {
    fn euler_update(&self, weight: f64, velocity: &Self) -> Result<Self> {
        Var::euler_update(self, weight, *velocity)
    }

    fn all_finite(&self) -> bool {
        self.tape().value(*self).all_finite()
    }
}

/// Result of one integration.
pub struct Solution<S> {
    pub output: S,
    /// `N + 1` states from `x1` to `output` when recording was requested.
    pub trajectory: Option<Vec<S>>,
}

/// Integrates with whatever mode `cfg` selects. Exactly `cfg.steps` calls
/// are made to `field`.
pub fn solve<S, F>(field: &F, x1: &S, cfg: &SamplerConfig) -> Result<Solution<S>>
where
    S: SolverState,
    F: VelocityField<S> + ?Sized,
{
    cfg.validate()?;
    let mut trajectory = cfg.record_trajectory.then(|| {
        let mut v = Vec::with_capacity(cfg.steps + 1);
        v.push(x1.clone());
        v
    });
    let mut x = x1.clone();
    for i in (1..=cfg.steps).rev() {
        let d = field.velocity(&x, cfg.time(i))?;
        x = x.euler_update(cfg.weight(i), &d)?;
        if !x.all_finite() {
            return Err(Error::Numerical { step: i });
        }
        if let Some(traj) = trajectory.as_mut() {
            traj.push(x.clone());
        }
    }
    Ok(Solution { output: x, trajectory })
}

fn require_mode(cfg: &SamplerConfig, mode: VelocityMode) -> Result<()> {
    if cfg.mode != mode {
        return Err(Error::config(alloc::format!(
            "sampler configured for the {} field, expected {}",
            cfg.mode.name(),
            mode.name()
        )));
    }
    Ok(())
}

/// Weighted Euler solve for a cumulative-velocity model.
pub fn sample_cvf<S, F>(field: &F, x1: &S, cfg: &SamplerConfig) -> Result<S>
where
    S: SolverState,
    F: VelocityField<S> + ?Sized,
{
    require_mode(cfg, VelocityMode::Cumulative)?;
    Ok(solve(
        field,
        x1,
        &SamplerConfig {
            record_trajectory: false,
            ..*cfg
        },
    )?
    .output)
}

/// Constant-step Euler solve for a standard rectified-flow model.
pub fn sample_rf<S, F>(field: &F, x1: &S, cfg: &SamplerConfig) -> Result<S>
where
    S: SolverState,
    F: VelocityField<S> + ?Sized,
{
    require_mode(cfg, VelocityMode::Standard)?;
    Ok(solve(
        field,
        x1,
        &SamplerConfig {
            record_trajectory: false,
            ..*cfg
        },
    )?
    .output)
}

/// All `N + 1` states of a solve, starting with `x1`.
pub fn trajectory<S, F>(field: &F, x1: &S, cfg: &SamplerConfig) -> Result<Vec<S>>
where
    S: SolverState,
    F: VelocityField<S> + ?Sized,
{
    if !cfg.record_trajectory {
        return Err(Error::config("trajectory requested without record_trajectory"));
    }
    let sol = solve(field, x1, cfg)?;
    Ok(sol.trajectory.expect("recording enabled"))
}

/// Wraps a field and counts its evaluations.
pub struct CountingField<F> {
    inner: F,
    calls: Cell<usize>,
}

impl<F> CountingField<F> {
    pub fn new(inner: F) -> Self {
        CountingField {
            inner,
            calls: Cell::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.get()
    }

    pub fn reset(&self) {
        self.calls.set(0);
    }

    pub fn inner(&self) -> &F {
        &self.inner
    }
}

impl<S, F: VelocityField<S>> VelocityField<S> for CountingField<F> {
    fn velocity(&self, x: &S, t: f64) -> Result<S> {
        self.calls.set(self.calls.get() + 1);
        self.inner.velocity(x, t)
    }
}
