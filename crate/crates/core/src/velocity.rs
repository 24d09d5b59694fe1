//! Velocity regression targets, matching losses and transport energy.
//!
//! Two fields are supported. The standard rectified-flow velocity is the
//! constant `x1 − x0`. The cumulative velocity is `xt − x0 = t·(x1 − x0)`,
//! the displacement from the current state straight back to the clean
//! sample. At `t = 1` the two coincide.
//!
//! Losses sum squared errors over the elements of a sample and average
//! over the batch.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::flow::{check_unit_time, lerp_into};
use crate::mct::PairBatch;
use crate::model::TapeModel;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum VelocityMode {
    Standard,
    Cumulative,
}

impl VelocityMode {
    pub fn name(self) -> &'static str {
        match self {
            VelocityMode::Standard => "standard",
            VelocityMode::Cumulative => "cumulative",
        }
    }
}

impl core::str::FromStr for VelocityMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" | "rf" => Ok(VelocityMode::Standard),
            "cumulative" | "cvf" => Ok(VelocityMode::Cumulative),
            other => Err(Error::config(alloc::format!("unknown velocity mode {other:?}"))),
        }
    }
}

pub fn rf_target(x0: &Tensor, x1: &Tensor) -> Result<Tensor> {
    if x0.shape() != x1.shape() {
        return Err(Error::shape("rf_target", x0.shape(), x1.shape()));
    }
    x1.sub(x0)
}

pub fn cvf_target(x0: &Tensor, x1: &Tensor, t: f64) -> Result<Tensor> {
    check_unit_time(t)?;
    if x0.shape() != x1.shape() {
        return Err(Error::shape("cvf_target", x0.shape(), x1.shape()));
    }
    let mut xt = alloc::vec![0.0; x0.len()];
    lerp_into(&mut xt, x0.data(), x1.data(), t);
    Tensor::from_parts(x0.shape().to_vec(), xt).sub(x0)
}

/// Interpolated inputs and regression targets for a batch, row by row.
pub fn batch_inputs_and_targets(batch: &PairBatch, mode: VelocityMode) -> (Tensor, Tensor) {
    let (rows, dim) = (batch.len(), batch.dim());
    let mut xt = alloc::vec![0.0; rows * dim];
    let mut target = alloc::vec![0.0; rows * dim];
    for (r, &t) in batch.ts.iter().enumerate() {
        let span = r * dim..(r + 1) * dim;
        let (x0, x1) = (&batch.x0.data()[span.clone()], &batch.x1.data()[span.clone()]);
        lerp_into(&mut xt[span.clone()], x0, x1, t);
        for i in span.clone() {
            target[i] = match mode {
                VelocityMode::Standard => batch.x1.data()[i] - batch.x0.data()[i],
                VelocityMode::Cumulative => xt[i] - batch.x0.data()[i],
            };
        }
    }
    let shape = alloc::vec![rows, dim];
    (Tensor::from_parts(shape.clone(), xt), Tensor::from_parts(shape, target))
}

/// Mean over the batch of `‖target − model(xt, t)‖²`.
pub fn matching_loss<'t, M: TapeModel<'t> + ?Sized>(
    tape: &'t Tape,
    model: &M,
    batch: &PairBatch,
    mode: VelocityMode,
) -> Result<Var<'t>> {
    if batch.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let (xt, target) = batch_inputs_and_targets(batch, mode);
    let pred = model.forward_rows(tape.constant(xt), &batch.ts)?;
    let target = tape.constant(target);
    pred.squared_error(target)?.scale(1.0 / batch.len() as f64)
}

/// Kinetic action `∫₀¹ E‖v(xt, t)‖² dt` of the chosen field over paired
/// samples. Both fields have closed-form time dependence, so the integral
/// is exact: `E‖x1−x0‖²` for the standard field and a third of that for
/// the cumulative one (`∫₀¹ t² dt = 1/3`).
pub fn transport_energy(pairs: &[(Tensor, Tensor)], mode: VelocityMode) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Empty("pair list"));
    }
    let mut total = 0.0;
    for (x0, x1) in pairs {
        total += rf_target(x0, x1)?.sum_squares();
    }
    let mean = total / pairs.len() as f64;
    Ok(match mode {
        VelocityMode::Standard => mean,
        VelocityMode::Cumulative => mean / 3.0,
    })
}

/// Per-pair `(standard, cumulative)` actions, for reporting.
pub fn energy_pair(pairs: &[(Tensor, Tensor)]) -> Result<(f64, f64)> {
    Ok((
        transport_energy(pairs, VelocityMode::Standard)?,
        transport_energy(pairs, VelocityMode::Cumulative)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn v(data: &[f64]) -> Tensor {
        Tensor::new(vec![data.len()], data.to_vec()).unwrap()
    }

    struct Zero;
    impl<'t> TapeModel<'t> for Zero {
        fn forward_rows(&self, x: Var<'t>, _ts: &[f64]) -> Result<Var<'t>> {
            x.scale(0.0)
        }
    }

    struct Exact(Tensor);
    impl<'t> TapeModel<'t> for Exact {
        fn forward_rows(&self, x: Var<'t>, _ts: &[f64]) -> Result<Var<'t>> {
            Ok(x.tape().constant(self.0.clone()))
        }
    }

    #[test]
    fn targets() {
        let a = v(&[1.0, 2.0]);
        assert!(rf_target(&a, &a).unwrap().data().iter().all(|&x| x == 0.0));
        assert_eq!(rf_target(&v(&[0.0, 0.0]), &v(&[3.0, 4.0])).unwrap().data(), &[3.0, 4.0]);
        let x0 = v(&[1.0, -0.5]);
        let x1 = v(&[5.0, 0.25]);
        assert!(cvf_target(&x0, &x1, 0.0).unwrap().data().iter().all(|&x| x == 0.0));
        assert_eq!(cvf_target(&x0, &x1, 1.0).unwrap(), rf_target(&x0, &x1).unwrap());
        assert_eq!(cvf_target(&v(&[1.0]), &v(&[5.0]), 0.5).unwrap().data(), &[2.0]);
        assert!(cvf_target(&x0, &x1, 1.01).is_err());
        assert!(rf_target(&x0, &v(&[1.0])).is_err());
    }

    #[test]
    fn zero_model_loss_is_squared_norm() {
        let batch = PairBatch::new(
            Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap(),
            Tensor::new(vec![1, 2], vec![3.0, 4.0]).unwrap(),
            vec![1.0],
        )
        .unwrap();
        let tape = Tape::new();
        let l = matching_loss(&tape, &Zero, &batch, VelocityMode::Cumulative).unwrap();
        assert_eq!(l.value().item().unwrap(), 25.0);
    }

    #[test]
    fn exact_model_loss_is_zero() {
        let batch = PairBatch::new(
            Tensor::new(vec![2, 2], vec![0.1, 0.2, 0.3, 0.4]).unwrap(),
            Tensor::new(vec![2, 2], vec![1.0, -1.0, 0.5, 0.0]).unwrap(),
            vec![0.25, 0.8],
        )
        .unwrap();
        for mode in [VelocityMode::Standard, VelocityMode::Cumulative] {
            let (_, target) = batch_inputs_and_targets(&batch, mode);
            let tape = Tape::new();
            let l = matching_loss(&tape, &Exact(target), &batch, mode).unwrap();
            assert_eq!(l.value().item().unwrap(), 0.0);
        }
    }

    #[test]
    fn energy_examples() {
        let pair = vec![(v(&[0.0, 0.0]), v(&[3.0, 4.0]))];
        assert_eq!(transport_energy(&pair, VelocityMode::Standard).unwrap(), 25.0);
        assert!((transport_energy(&pair, VelocityMode::Cumulative).unwrap() - 25.0 / 3.0).abs() < 1e-15);
        let same = vec![(v(&[1.0]), v(&[1.0])), (v(&[2.0]), v(&[2.0]))];
        assert_eq!(transport_energy(&same, VelocityMode::Standard).unwrap(), 0.0);
        assert_eq!(transport_energy(&same, VelocityMode::Cumulative).unwrap(), 0.0);
        assert!(matches!(
            transport_energy(&[], VelocityMode::Standard),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("cumulative".parse::<VelocityMode>().unwrap(), VelocityMode::Cumulative);
        assert_eq!("standard".parse::<VelocityMode>().unwrap(), VelocityMode::Standard);
        assert!("other".parse::<VelocityMode>().is_err());
    }
}
