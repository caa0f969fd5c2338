//! Dense row-major `f32` tensors.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A dense n-dimensional array of `f32` in row-major order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: &[usize], data: Vec<f32>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("Tensor::new", format!("zero-sized dimension in {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::new",
                format!("shape {shape:?} needs {numel} values, got {}", data.len()),
            ));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    /// Builds a tensor whose length is known to match; panics otherwise.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f32>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = shape.iter().product();
        Self::from_parts(shape.to_vec(), vec![value; n])
    }

    pub fn scalar(value: f32) -> Self {
        Self::from_parts(vec![1], vec![value])
    }

    pub fn from_vec(data: Vec<f32>) -> Self {
        let n = data.len();
        Self::from_parts(vec![n], data)
    }

    /// Standard normal draws from `rng`.
    pub fn randn<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.sample::<f32, _>(StandardNormal)).collect();
        Self::from_parts(shape.to_vec(), data)
    }

    /// Uniform draws on `[lo, hi)`.
    pub fn rand_uniform<R: Rng + ?Sized>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Self {
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.gen_range(lo..hi)).collect();
        Self::from_parts(shape.to_vec(), data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(Error::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.shape),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    /// Returns an error unless `other` has the same shape.
    pub fn check_same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Self::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, op: &'static str, f: impl Fn(f32, f32) -> f32) -> Result<Tensor> {
        self.check_same_shape(other, op)?;
        Ok(Self::from_parts(
            self.shape.clone(),
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        ))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "sub", |a, b| a - b)
    }

    pub fn scale(&self, s: f32) -> Tensor {
        self.map(|v| v * s)
    }

    /// `self + s * other`, elementwise.
    pub fn axpy(&self, s: f32, other: &Tensor) -> Result<Tensor> {
        self.zip_map(other, "axpy", |a, b| a + s * b)
    }

    pub fn clamp(&self, lo: f32, hi: f32) -> Tensor {
        self.map(|v| v.clamp(lo, hi))
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64) * (v as f64)).sum()
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
    }

    /// Shape `[C, H, W]` of an image tensor.
    pub fn chw(&self) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(Error::shape("chw", format!("expected C x H x W, got {:?}", self.shape))),
        }
    }

    /// Splits the leading axis into owned sub-tensors.
    pub fn unstack(&self) -> Vec<Tensor> {
        let inner: Vec<usize> = self.shape[1..].to_vec();
        let n: usize = inner.iter().product();
        self.data
            .chunks(n)
            .map(|c| Self::from_parts(inner.clone(), c.to_vec()))
            .collect()
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Tensor> {
        let first = items
            .first()
            .ok_or_else(|| Error::shape("stack", "no tensors to stack"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        let mut data = Vec::with_capacity(first.numel() * items.len());
        for t in items {
            first.check_same_shape(t, "stack")?;
            data.extend_from_slice(&t.data);
        }
        Ok(Self::from_parts(shape, data))
    }

    /// Concatenates `C x H x W` tensors along the channel axis.
    pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
        let (ca, ha, wa) = a.chw()?;
        let (cb, hb, wb) = b.chw()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::shape(
                "concat_channels",
                format!("spatial {ha}x{wa} vs {hb}x{wb}"),
            ));
        }
        let mut data = Vec::with_capacity(a.numel() + b.numel());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Ok(Self::from_parts(vec![ca + cb, ha, wa], data))
    }

    /// Mean absolute difference.
    pub fn mean_abs_diff(&self, other: &Tensor) -> Result<f64> {
        self.check_same_shape(other, "mean_abs_diff")?;
        let s: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .sum();
        Ok(s / self.numel() as f64)
    }

    /// True when both tensors have the same shape and identical bit patterns.
    pub fn bitwise_eq(&self, other: &Tensor) -> bool {
        self.shape == other.shape
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
