//! Dense row-major tensors over a generic [`Scalar`] field.
//!
//! Contraction is permute-then-reshape followed by a single matrix multiply;
//! see [`contract`].

mod contract;
pub mod linalg;
pub mod unitary;

pub use contract::contract;
pub use linalg::{eigh, inverse, lanczos_lowest, svd, LanczosResult, SvdResult};
pub use unitary::{cayley_from_generator, materialize_unitary, UnitaryParam, CAYLEY_REGULARIZATIONS};
pub(crate) use unitary::generator_from_raw;

use num_complex::Complex;
use num_traits::{Float, Zero};
use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::{one, zero, Real, Scalar};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for k in (0..shape.len().saturating_sub(1)).rev() {
        s[k] = s[k + 1] * shape[k + 1];
    }
    s
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        if shape.iter().any(|&n| n == 0) {
            return Err(Error::Dimension(format!("zero-length axis in shape {shape:?}")));
        }
        if numel(&shape) != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} needs {} entries, got {}",
                numel(&shape),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![zero(); numel(shape)] }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; numel(shape)] }
    }

    pub fn scalar(value: S) -> Self {
        Tensor { shape: vec![], data: vec![value] }
    }

    pub fn eye(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = one();
        }
        t
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(&[usize]) -> S) -> Self {
        let mut idx = vec![0usize; shape.len()];
        let mut data = Vec::with_capacity(numel(shape));
        for _ in 0..numel(shape) {
            data.push(f(&idx));
            for ax in (0..shape.len()).rev() {
                idx[ax] += 1;
                if idx[ax] < shape[ax] {
                    break;
                }
                idx[ax] = 0;
            }
        }
        Tensor { shape: shape.to_vec(), data }
    }

    /// Entries with real (and, for complex fields, imaginary) parts uniform in [-1, 1].
    pub fn random<R: Rng + ?Sized>(shape: &[usize], rng: &mut R) -> Self {
        let data = (0..numel(shape))
            .map(|_| {
                let re = S::Real::lit(rng.gen_range(-1.0..1.0));
                let im = S::Real::lit(rng.gen_range(-1.0..1.0));
                S::from_parts(re, im)
            })
            .collect();
        Tensor { shape: shape.to_vec(), data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    fn offset(&self, idx: &[usize]) -> usize {
        assert_eq!(idx.len(), self.shape.len(), "index rank mismatch");
        let mut off = 0;
        for (k, (&i, &n)) in idx.iter().zip(&self.shape).enumerate() {
            assert!(i < n, "index {i} out of range for axis {k} of length {n}");
            off = off * n + i;
        }
        off
    }

    pub fn get(&self, idx: &[usize]) -> S {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], value: S) {
        let o = self.offset(idx);
        self.data[o] = value;
    }

    /// Value of a rank-0 (or single-entry) tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.data.len(), 1, "item() on tensor with {} entries", self.data.len());
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        self.clone().into_reshape(shape)
    }

    pub fn into_reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::new(shape.to_vec(), self.data)
    }

    pub fn permute(&self, perm: &[usize]) -> Result<Self> {
        let r = self.rank();
        if perm.len() != r {
            return Err(Error::Dimension(format!("permutation {perm:?} for rank {r}")));
        }
        let mut seen = vec![false; r];
        for &p in perm {
            if p >= r || seen[p] {
                return Err(Error::Dimension(format!("invalid permutation {perm:?}")));
            }
            seen[p] = true;
        }
        if perm.iter().enumerate().all(|(i, &p)| i == p) {
            return Ok(self.clone());
        }
        let new_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let old_strides = strides(&self.shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| old_strides[p]).collect();
        let mut data = Vec::with_capacity(self.data.len());
        let mut idx = vec![0usize; r];
        let mut src = 0usize;
        for _ in 0..self.data.len() {
            data.push(self.data[src]);
            for ax in (0..r).rev() {
                idx[ax] += 1;
                src += src_strides[ax];
                if idx[ax] < new_shape[ax] {
                    break;
                }
                src -= src_strides[ax] * new_shape[ax];
                idx[ax] = 0;
            }
        }
        Ok(Tensor { shape: new_shape, data })
    }

    fn expect_matrix(&self) -> Result<(usize, usize)> {
        if self.rank() != 2 {
            return Err(Error::Rank { expected: 2, actual: self.rank() });
        }
        Ok((self.shape[0], self.shape[1]))
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.expect_matrix()?;
        let (k2, n) = other.expect_matrix()?;
        if k != k2 {
            return Err(Error::Dimension(format!("matmul inner dims {k} != {k2}")));
        }
        let mut out = vec![zero::<S>(); m * n];
        matmul_into(&self.data, &other.data, &mut out, m, k, n);
        Ok(Tensor { shape: vec![m, n], data: out })
    }

    /// Conjugate transpose of a matrix.
    pub fn adjoint(&self) -> Result<Self> {
        let (m, n) = self.expect_matrix()?;
        Ok(Tensor::from_fn(&[n, m], |ix| self.data[ix[1] * n + ix[0]].conj()))
    }

    pub fn transpose(&self) -> Result<Self> {
        self.expect_matrix()?;
        self.permute(&[1, 0])
    }

    pub fn conj(&self) -> Self {
        self.map(|x| x.conj())
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| f(x)).collect() }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(S, S) -> S) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "elementwise shapes {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: S) -> Self {
        self.map(|x| x * s)
    }

    pub fn norm_fro(&self) -> S::Real {
        self.data.iter().map(|x| x.abs_sq()).sum::<S::Real>().sqrt()
    }

    pub fn max_abs(&self) -> S::Real {
        self.data.iter().fold(S::Real::zero(), |m, x| m.max(x.abs()))
    }

    /// Largest entrywise modulus of `self - other`.
    pub fn max_abs_diff(&self, other: &Self) -> Result<S::Real> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Trace of a square matrix.
    pub fn trace(&self) -> Result<S> {
        let (m, n) = self.expect_matrix()?;
        if m != n {
            return Err(Error::Dimension(format!("trace of non-square {m}x{n}")));
        }
        Ok((0..n).map(|i| self.data[i * n + i]).sum())
    }
}

impl<T: Real> Tensor<T> {
    /// Lift a real tensor into the complex field.
    pub fn to_complex(&self) -> Tensor<Complex<T>>
    where
        Complex<T>: Scalar<Real = T>,
    {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&x| Complex::new(x, T::zero())).collect() }
    }
}

impl<T: Real> Tensor<Complex<T>>
where
    Complex<T>: Scalar<Real = T>,
{
    pub fn from_re_im(re: &Tensor<T>, im: &Tensor<T>) -> Result<Self> {
        if re.shape != im.shape {
            return Err(Error::Dimension(format!("re {:?} vs im {:?}", re.shape, im.shape)));
        }
        Ok(Tensor {
            shape: re.shape.clone(),
            data: re.data.iter().zip(&im.data).map(|(&a, &b)| Complex::new(a, b)).collect(),
        })
    }

    pub fn re(&self) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|z| z.re).collect() }
    }

    pub fn im(&self) -> Tensor<T> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|z| z.im).collect() }
    }
}

/// `c += a · b` for row-major `m×k` and `k×n` slices.
pub(crate) fn matmul_into<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            if aip == zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cj, &bj) in crow.iter_mut().zip(brow) {
                *cj += aip * bj;
            }
        }
    }
}
