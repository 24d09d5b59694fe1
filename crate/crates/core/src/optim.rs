//! Adam with bias correction.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates plus the step counter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step: u64,
}

impl AdamState {
    pub fn zeros_like(params: &[Tensor]) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|p| Tensor::from_parts(p.shape().to_vec(), alloc::vec![0.0; p.len()]))
            .collect();
        AdamState {
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }
}

/// One Adam update of `params` in place:
///
/// ```text
/// m ← β1·m + (1−β1)·g        v ← β2·v + (1−β2)·g²
/// p ← p − lr · m̂ / (√v̂ + ε)   with m̂ = m/(1−β1ᵗ), v̂ = v/(1−β2ᵗ)
/// ```
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() || params.len() != state.v.len() {
        return Err(Error::shape(
            "adam_step",
            &[params.len(), state.m.len()],
            &[grads.len(), state.v.len()],
        ));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.m[i].shape() || p.shape() != state.v[i].shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
    }
    state.step += 1;
    let t = state.step.min(i32::MAX as u64) as i32;
    let c1 = 1.0 - math::powi(cfg.beta1, t);
    let c2 = 1.0 - math::powi(cfg.beta2, t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        let it = p
            .data_mut()
            .iter_mut()
            .zip(m.data_mut())
            .zip(v.data_mut())
            .zip(g.data());
        for (((pj, mj), vj), &gj) in it {
            *mj = cfg.beta1 * *mj + (1.0 - cfg.beta1) * gj;
            *vj = cfg.beta2 * *vj + (1.0 - cfg.beta2) * gj * gj;
            let m_hat = *mj / c1;
            let v_hat = *vj / c2;
            *pj -= lr * m_hat / (math::sqrt(v_hat) + cfg.eps);
        }
    }
    Ok(())
}
