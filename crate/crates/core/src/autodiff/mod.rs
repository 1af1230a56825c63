//! Reverse-mode automatic differentiation over real tensors.
//!
//! Every complex quantity is carried as a pair of real tensors (see
//! [`CVar`]), so all recorded primitives are real and losses are real
//! scalars. SVD is deliberately not recordable.

mod check;
mod ops;
mod tape;

pub use check::{finite_diff_check, FdReport};
pub use tape::{forward_eval, Gradients, Tape, Var};

/// Complex value on a tape as a `(re, im)` pair of real variables.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CVar {
    pub re: Var,
    pub im: Var,
}

impl Tape {
    pub fn cconst(&self, re: crate::RTensor, im: crate::RTensor) -> CVar {
        CVar { re: self.constant(re), im: self.constant(im) }
    }

    pub fn cconj(&self, z: CVar) -> CVar {
        CVar { re: z.re, im: self.conj_part(z.im) }
    }

    pub fn cadd(&self, a: CVar, b: CVar) -> CVar {
        CVar { re: self.add(a.re, b.re), im: self.add(a.im, b.im) }
    }

    /// Elementwise (broadcasting) complex product.
    pub fn cmul(&self, a: CVar, b: CVar) -> CVar {
        let re = self.sub(self.mul(a.re, b.re), self.mul(a.im, b.im));
        let im = self.add(self.mul(a.re, b.im), self.mul(a.im, b.re));
        CVar { re, im }
    }

    /// Complex matrix product of rank-2 operands.
    pub fn cmatmul(&self, a: CVar, b: CVar) -> CVar {
        let re = self.sub(self.matmul(a.re, b.re), self.matmul(a.im, b.im));
        let im = self.add(self.matmul(a.re, b.im), self.matmul(a.im, b.re));
        CVar { re, im }
    }

    /// Batched complex matrix product of rank-3 operands.
    pub fn cbmm(&self, a: CVar, b: CVar) -> CVar {
        let re = self.sub(self.bmm(a.re, b.re), self.bmm(a.im, b.im));
        let im = self.add(self.bmm(a.re, b.im), self.bmm(a.im, b.re));
        CVar { re, im }
    }

    pub fn creshape(&self, z: CVar, shape: &[usize]) -> CVar {
        CVar { re: self.reshape(z.re, shape), im: self.reshape(z.im, shape) }
    }

    pub fn cpermute(&self, z: CVar, perm: &[usize]) -> CVar {
        CVar { re: self.permute(z.re, perm), im: self.permute(z.im, perm) }
    }

    pub fn cgather(&self, z: CVar, idx: &[Option<usize>]) -> CVar {
        CVar { re: self.gather_rows(z.re, idx), im: self.gather_rows(z.im, idx) }
    }

    /// Squared modulus summed over the last axis.
    pub fn cabs_sq_last(&self, z: CVar) -> Var {
        self.add(self.sum_last(self.mul(z.re, z.re)), self.sum_last(self.mul(z.im, z.im)))
    }
}
