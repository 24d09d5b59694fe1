//! Dense row-major `f64` arrays and the forward kernels shared by the
//! plain and the taped evaluation paths.
//!
//! Both paths call the same functions here, so a network evaluated with
//! or without a tape produces bit-identical values.

use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::math;

/// Dense tensor. `shape` may be empty, which denotes a scalar.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be positive",
        });
    }
    Ok(shape.iter().product())
}

impl Tensor {
    /// Builds a tensor, rejecting non-positive extents, a length that does
    /// not match the shape, and non-finite values.
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::InvalidShape {
                shape,
                reason: "element count does not match data length",
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Tensor { shape, data })
    }

    /// Kernel outputs skip the finiteness scan; callers that need it
    /// (samplers, the training loop) check explicitly.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    pub fn scalar(value: f64) -> Result<Self> {
        Tensor::new(Vec::new(), vec![value])
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::full(shape, 0.0)
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        Tensor::new(shape, vec![value; len])
    }

    /// Stacks equally-sized tensors as the rows of a `[n, len]` matrix.
    pub fn stack_rows(rows: &[Tensor]) -> Result<Self> {
        let first = rows.first().ok_or(Error::Empty("row list"))?;
        let width = first.len();
        let mut data = Vec::with_capacity(width * rows.len());
        for row in rows {
            if row.len() != width {
                return Err(Error::shape("stack_rows", &first.shape, &row.shape));
            }
            data.extend_from_slice(&row.data);
        }
        Ok(Tensor::from_parts(vec![rows.len(), width], data))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub(crate) fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "expected a single element",
            });
        }
        Ok(self.data[0])
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `i` of a `[rows, cols]` view where `cols` is the last extent.
    pub fn row(&self, i: usize) -> &[f64] {
        let cols = self.shape.last().copied().unwrap_or(1);
        &self.data[i * cols..(i + 1) * cols]
    }

    pub fn reshape(&self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let len = check_shape(&shape)?;
        if len != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, &shape));
        }
        Ok(Tensor::from_parts(shape, self.data.clone()))
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.same_shape("max_abs_diff", other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn sum_squares(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    fn same_shape(&self, op: &'static str, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok(())
    }

    fn zip_with(&self, op: &'static str, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape == other.shape {
            let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
            return Ok(Tensor::from_parts(self.shape.clone(), data));
        }
        if other.data.len() == 1 {
            let b = other.data[0];
            let data = self.data.iter().map(|&a| f(a, b)).collect();
            return Ok(Tensor::from_parts(self.shape.clone(), data));
        }
        if self.data.len() == 1 {
            let a = self.data[0];
            let data = other.data.iter().map(|&b| f(a, b)).collect();
            return Ok(Tensor::from_parts(other.shape.clone(), data));
        }
        Err(Error::shape(op, &self.shape, &other.shape))
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn add(&self, other: &Tensor) -> Result<Self> {
        self.zip_with("add", other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.zip_with("sub", other, |a, b| a - b)
    }

    pub fn mul(&self, other: &Tensor) -> Result<Self> {
        self.zip_with("mul", other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self - weight * d`, the explicit Euler update.
    pub fn euler_update(&self, weight: f64, d: &Tensor) -> Result<Self> {
        self.same_shape("euler_update", d)?;
        let data = self.data.iter().zip(&d.data).map(|(&x, &v)| x - weight * v).collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    pub fn relu(&self) -> Self {
        self.map(|v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sin(&self) -> Self {
        self.map(math::sin)
    }

    pub fn cos(&self) -> Self {
        self.map(math::cos)
    }

    pub fn sum(&self) -> Self {
        Tensor::from_parts(Vec::new(), vec![self.data.iter().sum()])
    }

    pub fn mean(&self) -> Self {
        let n = self.data.len() as f64;
        Tensor::from_parts(Vec::new(), vec![self.data.iter().sum::<f64>() / n])
    }

    /// Sum over all elements of `(self - other)^2`.
    pub fn squared_error(&self, other: &Tensor) -> Result<Self> {
        self.same_shape("squared_error", other)?;
        let s = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| {
                let d = a - b;
                d * d
            })
            .sum();
        Ok(Tensor::from_parts(Vec::new(), vec![s]))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Self> {
        let (m, k) = self.as_matrix("matmul")?;
        let (k2, n) = other.as_matrix("matmul")?;
        if k != k2 {
            return Err(Error::shape("matmul", &self.shape, &other.shape));
        }
        let mut out = vec![0.0; m * n];
        gemm_nn(&self.data, &other.data, &mut out, m, k, n);
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// Joins two tensors along their last axis; leading extents must agree.
    pub fn concat_last(&self, other: &Tensor) -> Result<Self> {
        let (ra, ca) = self.split_last("concat_last", other)?;
        let cb = *other.shape.last().unwrap_or(&1);
        let mut data = Vec::with_capacity(self.data.len() + other.data.len());
        for r in 0..ra {
            data.extend_from_slice(&self.data[r * ca..(r + 1) * ca]);
            data.extend_from_slice(&other.data[r * cb..(r + 1) * cb]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().expect("rank >= 1") = ca + cb;
        Ok(Tensor::from_parts(shape, data))
    }

    /// Repeats a vector (`[n]` or `[1, n]`) as `rows` rows: `[rows, n]`.
    pub fn broadcast_rows(&self, rows: usize) -> Result<Self> {
        let n = match self.shape.as_slice() {
            [n] => *n,
            [1, n] => *n,
            _ => {
                return Err(Error::InvalidShape {
                    shape: self.shape.clone(),
                    reason: "broadcast_rows expects [n] or [1, n]",
                })
            }
        };
        if rows == 0 {
            return Err(Error::InvalidShape {
                shape: vec![rows, n],
                reason: "extents must be positive",
            });
        }
        let mut data = Vec::with_capacity(rows * n);
        for _ in 0..rows {
            data.extend_from_slice(&self.data);
        }
        Ok(Tensor::from_parts(vec![rows, n], data))
    }

    /// Fills `shape` with the value of a one-element tensor.
    pub fn broadcast_scalar(&self, shape: &[usize]) -> Result<Self> {
        let v = self.item()?;
        Tensor::full(shape.to_vec(), v)
    }

    pub(crate) fn as_matrix(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: match op {
                    "matmul" => "matmul operands must be rank 2",
                    _ => "expected a rank-2 tensor",
                },
            }),
        }
    }

    fn split_last(&self, op: &'static str, other: &Tensor) -> Result<(usize, usize)> {
        let (Some((&ca, lead_a)), Some((_, lead_b))) = (self.shape.split_last(), other.shape.split_last()) else {
            return Err(Error::shape(op, &self.shape, &other.shape));
        };
        if lead_a != lead_b {
            return Err(Error::shape(op, &self.shape, &other.shape));
        }
        Ok((lead_a.iter().product(), ca))
    }
}

/// `out += a · b` with `a: [m, k]`, `b: [k, n]`.
pub(crate) fn gemm_nn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        let a_row = &a[i * k..(i + 1) * k];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bpj) in out_row.iter_mut().zip(b_row) {
                *o += aip * bpj;
            }
        }
    }
}

/// `out += a · bᵀ` with `a: [m, n]`, `b: [k, n]`, `out: [m, k]`.
pub(crate) fn gemm_nt(a: &[f64], b: &[f64], out: &mut [f64], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let a_row = &a[i * n..(i + 1) * n];
        for p in 0..k {
            let b_row = &b[p * n..(p + 1) * n];
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            out[i * k + p] += dot;
        }
    }
}

/// `out += aᵀ · b` with `a: [m, k]`, `b: [m, n]`, `out: [k, n]`.
pub(crate) fn gemm_tn(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &aip) in a_row.iter().enumerate() {
            if aip == 0.0 {
                continue;
            }
            let out_row = &mut out[p * n..(p + 1) * n];
            for (o, &bij) in out_row.iter_mut().zip(b_row) {
                *o += aip * bij;
            }
        }
    }
}
