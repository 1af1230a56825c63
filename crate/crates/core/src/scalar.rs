//! Scalar abstractions shared by the tensor, geometry and tensor-network code.
//!
//! [`Real`] covers `f32`/`f64`; [`Scalar`] additionally covers their complex
//! counterparts so that tensors, SVD and eigensolvers can be written once.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_complex::Complex;
use num_traits::{Float, FloatConst, FromPrimitive, NumAssign, One, Zero};

/// Real floating point field.
pub trait Real:
    Float + FloatConst + FromPrimitive + NumAssign + Sum + Default + Debug + Display + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for literals and tolerances.
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Element type of a [`Tensor`](crate::tensor::Tensor): a real or complex field.
pub trait Scalar:
    Copy
    + Debug
    + Default
    + PartialEq
    + NumAssign
    + Sum
    + std::ops::Neg<Output = Self>
    + Send
    + Sync
    + 'static
{
    type Real: Real;

    const IS_COMPLEX: bool;

    fn from_real(r: Self::Real) -> Self;
    /// Build from real and imaginary parts; the imaginary part is dropped for real types.
    fn from_parts(re: Self::Real, im: Self::Real) -> Self;
    fn re(self) -> Self::Real;
    fn im(self) -> Self::Real;
    fn conj(self) -> Self;
    fn abs_sq(self) -> Self::Real;
    fn abs(self) -> Self::Real;
    fn scale(self, r: Self::Real) -> Self;
    fn is_finite(self) -> bool;

    /// Unit-modulus phase `z/|z|`, or one for zero.
    fn phase(self) -> Self {
        let a = self.abs();
        if a == Self::Real::zero() {
            Self::one()
        } else {
            self.scale(a.recip())
        }
    }
}

macro_rules! impl_real_scalar {
    ($t:ty) => {
        impl Scalar for $t {
            type Real = $t;
            const IS_COMPLEX: bool = false;

            fn from_real(r: $t) -> Self {
                r
            }
            fn from_parts(re: $t, _im: $t) -> Self {
                re
            }
            fn re(self) -> $t {
                self
            }
            fn im(self) -> $t {
                0.0
            }
            fn conj(self) -> Self {
                self
            }
            fn abs_sq(self) -> $t {
                self * self
            }
            fn abs(self) -> $t {
                <$t>::abs(self)
            }
            fn scale(self, r: $t) -> Self {
                self * r
            }
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

macro_rules! impl_complex_scalar {
    ($t:ty) => {
        impl Scalar for Complex<$t> {
            type Real = $t;
            const IS_COMPLEX: bool = true;

            fn from_real(r: $t) -> Self {
                Complex::new(r, 0.0)
            }
            fn from_parts(re: $t, im: $t) -> Self {
                Complex::new(re, im)
            }
            fn re(self) -> $t {
                self.re
            }
            fn im(self) -> $t {
                self.im
            }
            fn conj(self) -> Self {
                Complex::conj(&self)
            }
            fn abs_sq(self) -> $t {
                self.norm_sqr()
            }
            fn abs(self) -> $t {
                self.re.hypot(self.im)
            }
            fn scale(self, r: $t) -> Self {
                Complex::new(self.re * r, self.im * r)
            }
            fn is_finite(self) -> bool {
                self.re.is_finite() && self.im.is_finite()
            }
        }
    };
}

impl_real_scalar!(f32);
impl_real_scalar!(f64);
impl_complex_scalar!(f32);
impl_complex_scalar!(f64);

#[inline]
pub(crate) fn zero<S: Zero>() -> S {
    S::zero()
}

#[inline]
pub(crate) fn one<S: One>() -> S {
    S::one()
}
