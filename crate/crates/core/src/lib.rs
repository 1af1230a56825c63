//! Equivariant matrix-product-state message passing for geometric graphs.
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`] – dense tensors generic over real/complex scalars, SVD,
//!   Hermitian eigensolvers and Cayley unitaries.
//! * [`autodiff`] – a reverse-mode tape over real tensors.
//! * [`geometry`] – SE(3)-equivariant frames, scalarization and neighbour ordering.
//! * [`model`] – the MPS spatial/temporal aggregation network and its
//!   mean-field baseline.
//! * [`compress`] – canonical forms and truncation of matrix-product chains.
//! * [`dmrg`] – one-site DMRG for the transverse-field Ising chain.
//! * [`nbody`] – charged N-body trajectory generation.
//! * [`harness`] – the training, evaluation and checking workflows behind the CLI.

pub mod error;
pub mod scalar;
pub mod tensor;
pub mod geometry;
pub mod autodiff;
pub mod model;
pub mod compress;
pub mod dmrg;
pub mod nbody;
pub mod harness;

pub use error::{Error, Result};
pub use num_complex::Complex64;
pub use scalar::{Real, Scalar};
pub use tensor::Tensor;

/// Complex double-precision tensor, the default value type for kernels.
pub type CTensor = Tensor<Complex64>;
/// Real double-precision tensor, the value type of the autodiff tape.
pub type RTensor = Tensor<f64>;
