//! Dense row-major tensors and the handful of differentiable primitives the
//! transformer needs.
//!
//! Values are always held as `f64`. When a tensor is tagged [`Precision::F32`]
//! every stored value is rounded through `f32`, so each primitive's output is
//! exactly what single-precision storage would hold. Mixed inputs produce an
//! `F32` result.

pub mod ops;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl Precision {
    #[inline]
    pub fn round(self, v: f64) -> f64 {
        match self {
            Precision::F32 => v as f32 as f64,
            Precision::F64 => v,
        }
    }

    pub fn join(self, other: Precision) -> Precision {
        if self == Precision::F32 || other == Precision::F32 {
            Precision::F32
        } else {
            Precision::F64
        }
    }

    pub fn parse(s: &str) -> Option<Precision> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f32" => Some(Precision::F32),
            "f64" => Some(Precision::F64),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    precision: Precision,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>, precision: Precision) -> Result<Self> {
        Self::from_op("tensor", shape, data, precision)
    }

    /// Shorthand for an `f64` tensor.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::new(shape, data, Precision::F64)
    }

    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        mut data: Vec<f64>,
        precision: Precision,
    ) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::shape(
                op,
                format!("shape {:?} needs {} values, got {}", shape, expected, data.len()),
            ));
        }
        for v in data.iter_mut() {
            *v = precision.round(*v);
            if !v.is_finite() {
                return Err(Error::NonFinite { op });
            }
        }
        Ok(Tensor { shape, data, precision })
    }

    pub fn zeros(shape: Vec<usize>, precision: Precision) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
            precision,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Extent of the last axis.
    pub fn last_dim(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn with_precision(&self, precision: Precision) -> Tensor {
        let data = self.data.iter().map(|&v| precision.round(v)).collect();
        Tensor {
            shape: self.shape.clone(),
            data,
            precision,
        }
    }

    pub fn reshape(&self, shape: Vec<usize>) -> Result<Tensor> {
        Tensor::from_op("reshape", shape, self.data.clone(), self.precision)
    }

    /// Row `i` of the tensor viewed as `[numel / last_dim, last_dim]`.
    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.last_dim();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn n_rows(&self) -> usize {
        self.data.len().checked_div(self.last_dim()).unwrap_or(0)
    }

    /// Leading rows `[0, count)` of a rank-2 tensor.
    pub fn take_rows(&self, count: usize) -> Result<Tensor> {
        if self.rank() != 2 || count > self.shape[0] {
            return Err(Error::shape(
                "take_rows",
                format!("cannot take {} rows of {:?}", count, self.shape),
            ));
        }
        let n = self.shape[1];
        Tensor::from_op(
            "take_rows",
            vec![count, n],
            self.data[..count * n].to_vec(),
            self.precision,
        )
    }

    fn zip_with(&self, other: &Tensor, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::shape(op, format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        let data = self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect();
        Tensor::from_op(op, self.shape.clone(), data, self.precision.join(other.precision))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    /// `self + c * other`
    pub fn add_scaled(&self, other: &Tensor, c: f64) -> Result<Tensor> {
        self.zip_with(other, "add_scaled", |a, b| a + c * b)
    }

    pub fn scale(&self, c: f64) -> Result<Tensor> {
        let data = self.data.iter().map(|&v| v * c).collect();
        Tensor::from_op("scale", self.shape.clone(), data, self.precision)
    }

    /// Euclidean inner product over all entries, summed in storage order.
    pub fn dot(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(Error::shape("dot", format!("{:?} vs {:?}", self.shape, other.shape)));
        }
        Ok(self.data.iter().zip(&other.data).fold(0.0, |acc, (a, b)| acc + a * b))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc + v)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_all_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_must_match_data() {
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::from_vec(vec![2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn non_finite_is_rejected() {
        let err = Tensor::from_vec(vec![2], vec![1.0, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert!(Tensor::from_vec(vec![1], vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn f32_rounds_storage() {
        let t = Tensor::new(vec![1], vec![0.1], Precision::F32).unwrap();
        assert_eq!(t.data()[0], 0.1f32 as f64);
        let u = Tensor::from_vec(vec![1], vec![0.1]).unwrap();
        assert_eq!(t.add(&u).unwrap().precision(), Precision::F32);
    }

    #[test]
    fn overflow_in_op_is_an_error() {
        let t = Tensor::from_vec(vec![1], vec![1e300]).unwrap();
        assert!(matches!(t.scale(1e300), Err(Error::NonFinite { op: "scale" })));
    }
}
