//! Cayley-transform parameterization of unitary matrices.

use std::sync::atomic::{AtomicUsize, Ordering};

use num_complex::Complex;


use super::{inverse, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

/// Number of times [`materialize_unitary`] had to shrink its generator to
/// escape a singular `I + A`.
pub static CAYLEY_REGULARIZATIONS: AtomicUsize = AtomicUsize::new(0);

const PIVOT_TOL: f64 = 1e-12;

/// Unconstrained parameters of a `dim × dim` unitary.
///
/// `raw` has shape `[2, dim, dim]`: slice 0 feeds the real part of the
/// skew-Hermitian generator, slice 1 the imaginary part.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryParam<T> {
    pub dim: usize,
    pub raw: Tensor<T>,
}

impl<T: Real + Scalar<Real = T>> UnitaryParam<T> {
    pub fn new(raw: Tensor<T>) -> Result<Self> {
        match raw.shape() {
            &[2, a, b] if a == b => Ok(UnitaryParam { dim: a, raw }),
            s => Err(Error::Dimension(format!("unitary raw parameters must be [2, n, n], got {s:?}"))),
        }
    }

    pub fn zeros(dim: usize) -> Self {
        UnitaryParam { dim, raw: Tensor::zeros(&[2, dim, dim]) }
    }

    /// Skew-Hermitian generator: real part `L − Lᵀ` from the strict lower
    /// triangle of slice 0, imaginary part `(M + Mᵀ)/2` from slice 1.
    pub fn generator(&self) -> Tensor<Complex<T>>
    where
        Complex<T>: Scalar<Real = T>,
    {
        generator_from_raw(&self.raw, self.dim)
    }
}

pub(crate) fn generator_from_raw<T>(raw: &Tensor<T>, n: usize) -> Tensor<Complex<T>>
where
    T: Real + Scalar<Real = T>,
    Complex<T>: Scalar<Real = T>,
{
    let r = raw.data();
    let half = T::lit(0.5);
    Tensor::from_fn(&[n, n], |ix| {
        let (i, j) = (ix[0], ix[1]);
        let re = if i > j {
            r[i * n + j]
        } else if i < j {
            -r[j * n + i]
        } else {
            T::zero()
        };
        let im = (r[n * n + i * n + j] + r[n * n + j * n + i]) * half;
        Complex::new(re, im)
    })
}

/// `U = (I − A)(I + A)⁻¹` for a skew-Hermitian `A`.
pub fn cayley_from_generator<T>(a: &Tensor<Complex<T>>) -> Result<Tensor<Complex<T>>>
where
    T: Real,
    Complex<T>: Scalar<Real = T>,
{
    let n = a.shape()[0];
    let eye = Tensor::<Complex<T>>::eye(n);
    let inv = inverse(&eye.add(a)?, T::lit(PIVOT_TOL))?;
    // (I − A)(I + A)⁻¹ = 2(I + A)⁻¹ − I
    let two = Complex::new(T::lit(2.0), T::zero());
    inv.scale(two).sub(&eye)
}

/// Materialize the unitary described by `p`.
///
/// A singular `I + A` cannot occur for an exactly skew-Hermitian generator;
/// if round-off produces one anyway the generator is halved (up to 8 times)
/// and [`CAYLEY_REGULARIZATIONS`] is bumped.
pub fn materialize_unitary<T>(p: &UnitaryParam<T>) -> Result<Tensor<Complex<T>>>
where
    T: Real + Scalar<Real = T>,
    Complex<T>: Scalar<Real = T>,
{
    let mut a = p.generator();
    for attempt in 0..8 {
        match cayley_from_generator(&a) {
            Ok(u) => return Ok(u),
            Err(Error::Numerical { .. }) => {
                CAYLEY_REGULARIZATIONS.fetch_add(1, Ordering::Relaxed);
                log::warn!("singular Cayley denominator, shrinking generator (attempt {attempt})");
                a = a.scale(Complex::new(T::lit(0.5), T::zero()));
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::Numerical { what: "Cayley transform stayed singular".into(), iterations: 8 })
}
