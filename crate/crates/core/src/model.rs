//! Small time-conditioned MLPs standing in for a U-Net.
//!
//! A sample is flattened, a sinusoidal embedding of `t` is appended, and
//! the result goes through affine layers with ReLU between them. The
//! output has the input's shape.
//!
//! Samples enter the first layer as `(x − input_offset)·input_scale` and
//! the last layer's output is divided by `input_scale`, so velocities stay
//! in data units. Pixel data in `[0, 1]` is small next to the `±1/√fan_in`
//! initialization; without the rescale, the hidden ReLUs of the patch
//! model go dark within a few hundred Adam steps.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::math;
use crate::rng;
use crate::sampler::VelocityField;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct ArchConfig {
    /// Flattened sample size.
    pub input_dim: usize,
    /// Hidden layer widths.
    pub hidden: Vec<usize>,
    /// Size of the time embedding (even; half sines, half cosines).
    pub time_features: usize,
    /// Fixed (untrained) input shift.
    pub input_offset: f64,
    /// Fixed (untrained) input gain; outputs are divided by it.
    pub input_scale: f64,
}

impl ArchConfig {
    /// 16×16 grayscale patches, two hidden layers of 256.
    pub fn patch_default() -> Self {
        ArchConfig {
            input_dim: 256,
            hidden: vec![256, 256],
            time_features: 16,
            input_offset: 0.5,
            input_scale: 4.0,
        }
    }

    /// Points in the plane, three hidden layers of 128.
    pub fn toy2d_default() -> Self {
        ArchConfig {
            input_dim: 2,
            hidden: vec![128, 128, 128],
            time_features: 16,
            input_offset: 0.0,
            input_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::config("layer widths must be positive"));
        }
        if !self.time_features.is_multiple_of(2) || self.time_features > 64 {
            return Err(Error::config("time_features must be even and at most 64"));
        }
        if !(self.input_scale > 0.0 && self.input_scale.is_finite()) || !self.input_offset.is_finite() {
            return Err(Error::config("input_scale must be positive and input_offset finite"));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` for each affine layer.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim + self.time_features];
        widths.extend_from_slice(&self.hidden);
        widths.push(self.input_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.layer_dims().len())
            .flat_map(|i| [format!("layers.{i}.weight"), format!("layers.{i}.bias")])
            .collect()
    }

    /// `(shift, gain)` with `first_layer_input = gain·x + shift`.
    pub(crate) fn input_affine(&self) -> (f64, f64) {
        (-self.input_offset * self.input_scale, self.input_scale)
    }

    /// Angular frequencies `π·2^j` of the time embedding.
    pub fn time_frequencies(&self) -> Vec<f64> {
        (0..self.time_features / 2)
            .map(|j| core::f64::consts::PI * (1u64 << j) as f64)
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimeConditionedNet {
    arch: ArchConfig,
    /// `[weight_0, bias_0, weight_1, bias_1, …]`; weights are `[fan_in, fan_out]`.
    params: Vec<Tensor>,
}

impl TimeConditionedNet {
    /// Weights uniform in `±1/√fan_in`, biases zero.
    pub fn init(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut r = rng::stream(seed);
        let mut params = Vec::new();
        for (fan_in, fan_out) in arch.layer_dims() {
            let bound = 1.0 / math::sqrt(fan_in as f64);
            let w = (0..fan_in * fan_out).map(|_| r.random_range(-bound..bound)).collect();
            params.push(Tensor::new(vec![fan_in, fan_out], w)?);
            params.push(Tensor::zeros(vec![fan_out])?);
        }
        Ok(TimeConditionedNet {
            arch: arch.clone(),
            params,
        })
    }

    /// Rebuilds a network from tensors named as in [`ArchConfig::param_names`].
    pub fn from_named(arch: &ArchConfig, named: &[(String, Tensor)]) -> Result<Self> {
        arch.validate()?;
        let mut params = Vec::new();
        let dims = arch.layer_dims();
        for (i, name) in arch.param_names().iter().enumerate() {
            let (_, t) = named
                .iter()
                .find(|(n, _)| n == name)
                .ok_or_else(|| Error::config(format!("missing parameter {name}")))?;
            let (fi, fo) = dims[i / 2];
            let want: Vec<usize> = if i % 2 == 0 { vec![fi, fo] } else { vec![fo] };
            if t.shape() != want.as_slice() {
                return Err(Error::shape("from_named", t.shape(), &want));
            }
            params.push(t.clone());
        }
        Ok(TimeConditionedNet {
            arch: arch.clone(),
            params,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    pub fn named_params(&self) -> Vec<(String, Tensor)> {
        self.arch
            .param_names()
            .into_iter()
            .zip(self.params.iter().cloned())
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    fn rows_of(&self, shape: &[usize], len: usize) -> Result<usize> {
        let d = self.arch.input_dim;
        if !len.is_multiple_of(d) {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: "sample size does not match the network input",
            });
        }
        Ok(len / d)
    }

    fn time_matrix(&self, ts: &[f64]) -> Result<(Tensor, Tensor)> {
        for &t in ts {
            crate::flow::check_unit_time(t)?;
        }
        let col = Tensor::new(vec![ts.len(), 1], ts.to_vec())?;
        let freqs = self.arch.time_frequencies();
        let row = Tensor::new(vec![1, freqs.len()], freqs)?;
        Ok((col, row))
    }

    /// Plain evaluation on rows of `x` (any shape whose size is a multiple
    /// of `input_dim`) with one time per row. Output has `x`'s shape.
    pub fn forward_rows(&self, x: &Tensor, ts: &[f64]) -> Result<Tensor> {
        let rows = self.rows_of(x.shape(), x.len())?;
        if ts.len() != rows {
            return Err(Error::shape("forward_rows", &[rows], &[ts.len()]));
        }
        let (shift, gain) = self.arch.input_affine();
        let mut h = x
            .reshape(vec![rows, self.arch.input_dim])?
            .scale(gain)
            .add(&Tensor::scalar(shift)?)?;
        if self.arch.time_features > 0 {
            let (col, row) = self.time_matrix(ts)?;
            let phase = col.matmul(&row)?;
            h = h.concat_last(&phase.sin().concat_last(&phase.cos())?)?;
        }
        let layers = self.params.len() / 2;
        for l in 0..layers {
            h = h.matmul(&self.params[2 * l])?;
            h = h.add(&self.params[2 * l + 1].broadcast_rows(rows)?)?;
            if l + 1 < layers {
                h = h.relu();
            }
        }
        h.scale(1.0 / self.arch.input_scale).reshape(x.shape().to_vec())
    }

    pub fn forward(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        let rows = self.rows_of(x.shape(), x.len())?;
        self.forward_rows(x, &vec![t; rows])
    }

    /// Records the parameters as leaves on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape) -> BoundNet<'_, 't> {
        let params = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        BoundNet { net: self, params }
    }

    /// Evaluates with caller-owned parameter variables in place of the
    /// stored ones, e.g. perturbed copies for finite differences.
    pub fn bind_with<'t>(&self, params: Vec<Var<'t>>) -> Result<BoundNet<'_, 't>> {
        if params.len() != self.params.len() {
            return Err(Error::shape("bind_with", &[self.params.len()], &[params.len()]));
        }
        for (p, v) in self.params.iter().zip(&params) {
            if p.shape() != v.shape().as_slice() {
                return Err(Error::shape("bind_with", p.shape(), &v.shape()));
            }
        }
        Ok(BoundNet { net: self, params })
    }

    /// Upper bound on the Lipschitz constant in `x`: the product of the
    /// layers' spectral norms, each estimated from above by
    /// `√(‖W‖₁·‖W‖∞)`. ReLU is 1-Lipschitz and the time features do not
    /// depend on `x`. The fixed input gain cancels against the output
    /// division.
    pub fn lipschitz_bound(&self) -> f64 {
        let d = self.arch.input_dim;
        let mut bound = 1.0;
        for (l, w) in self.params.iter().step_by(2).enumerate() {
            let (fi, fo) = (w.shape()[0], w.shape()[1]);
            // only the data rows of the first layer act on x
            let rows = if l == 0 { d } else { fi };
            let mut col_sums = vec![0.0; fo];
            let mut max_row: f64 = 0.0;
            for r in 0..rows {
                let row = &w.data()[r * fo..(r + 1) * fo];
                let mut s = 0.0;
                for (c, v) in row.iter().enumerate() {
                    s += v.abs();
                    col_sums[c] += v.abs();
                }
                max_row = max_row.max(s);
            }
            let max_col = col_sums.into_iter().fold(0.0, f64::max);
            bound *= math::sqrt(max_row * max_col);
        }
        bound
    }
}

impl VelocityField<Tensor> for TimeConditionedNet {
    fn velocity(&self, x: &Tensor, t: f64) -> Result<Tensor> {
        self.forward(x, t)
    }
}

/// Models that can be evaluated on a tape with one time per row.
pub trait TapeModel<'t> {
    fn forward_rows(&self, x: Var<'t>, ts: &[f64]) -> Result<Var<'t>>;

    /// Evaluates every sample of `x` at time `t`. The default treats the
    /// leading extent as the batch.
    fn forward_at(&self, x: Var<'t>, t: f64) -> Result<Var<'t>> {
        let rows = x.shape().first().copied().unwrap_or(1);
        self.forward_rows(x, &vec![t; rows])
    }
}

/// A network whose parameters are leaves on a tape. Every evaluation
/// reuses the same leaves, so gradients from repeated calls accumulate.
pub struct BoundNet<'n, 't> {
    net: &'n TimeConditionedNet,
    params: Vec<Var<'t>>,
}

impl<'n, 't> BoundNet<'n, 't> {
    pub fn param_vars(&self) -> &[Var<'t>] {
        &self.params
    }

    pub fn net(&self) -> &'n TimeConditionedNet {
        self.net
    }
}

impl<'t> TapeModel<'t> for BoundNet<'_, 't> {
    fn forward_rows(&self, x: Var<'t>, ts: &[f64]) -> Result<Var<'t>> {
        let tape = x.tape();
        let shape = x.shape();
        let len = shape.iter().product();
        let rows = self.net.rows_of(&shape, len)?;
        if ts.len() != rows {
            return Err(Error::shape("forward_rows", &[rows], &[ts.len()]));
        }
        let (shift, gain) = self.net.arch.input_affine();
        let mut h = x
            .reshape(&[rows, self.net.arch.input_dim])?
            .scale(gain)?
            .add(tape.constant(Tensor::scalar(shift)?))?;
        if self.net.arch.time_features > 0 {
            let (col, row) = self.net.time_matrix(ts)?;
            let phase = tape.constant(col).matmul(tape.constant(row))?;
            h = h.concat_last(phase.sin()?.concat_last(phase.cos()?)?)?;
        }
        let layers = self.params.len() / 2;
        for l in 0..layers {
            h = h.matmul(self.params[2 * l])?;
            h = h.add(self.params[2 * l + 1].broadcast_rows(rows)?)?;
            if l + 1 < layers {
                h = h.relu()?;
            }
        }
        h.scale(1.0 / self.net.arch.input_scale)?.reshape(&shape)
    }

    fn forward_at(&self, x: Var<'t>, t: f64) -> Result<Var<'t>> {
        let shape = x.shape();
        let rows = self.net.rows_of(&shape, shape.iter().product())?;
        self.forward_rows(x, &vec![t; rows])
    }
}

/// Evaluates a [`TapeModel`] at a single time for every row, making it a
/// [`VelocityField`] over taped states.
pub struct AtTime<'m, M: ?Sized>(pub &'m M);

impl<'t, M: TapeModel<'t> + ?Sized> VelocityField<Var<'t>> for AtTime<'_, M> {
    fn velocity(&self, x: &Var<'t>, t: f64) -> Result<Var<'t>> {
        self.0.forward_at(*x, t)
    }
}

/// Training snapshot: parameters, optimizer moments and bookkeeping.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    /// Field the network was trained to predict.
    pub mode: crate::velocity::VelocityMode,
    pub iteration: u64,
    pub params: Vec<(String, Tensor)>,
    pub adam_m: Vec<Tensor>,
    pub adam_v: Vec<Tensor>,
    pub adam_step: u64,
    /// Free-form description of the run configuration.
    pub config_echo: String,
}

impl Checkpoint {
    pub fn network(&self) -> Result<TimeConditionedNet> {
        TimeConditionedNet::from_named(&self.arch, &self.params)
    }
}
