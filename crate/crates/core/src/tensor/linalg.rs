//! Dense linear algebra: one-sided Jacobi SVD, Hermitian Jacobi eigensolver,
//! Gauss-Jordan inverse and a Lanczos lowest-eigenpair solver.

use num_traits::{Float, One, Zero};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{Real, Scalar};

const MAX_SWEEPS: usize = 100;

/// `a = u · diag(s) · v` with `u` of shape `m×r`, `v` of shape `r×n`, `r = min(m, n)`.
#[derive(Clone, Debug)]
pub struct SvdResult<S: Scalar> {
    pub u: Tensor<S>,
    pub s: Vec<S::Real>,
    pub v: Tensor<S>,
}

impl<S: Scalar> SvdResult<S> {
    pub fn rank(&self) -> usize {
        self.s.len()
    }

    /// Recompose `u · diag(s) · v`, optionally keeping only the leading `keep` triplets.
    pub fn recompose(&self, keep: Option<usize>) -> Tensor<S> {
        let r = keep.unwrap_or(self.rank()).min(self.rank());
        let m = self.u.shape()[0];
        let n = self.v.shape()[1];
        let full_r = self.rank();
        let mut out = Tensor::zeros(&[m, n]);
        let (u, v) = (self.u.data(), self.v.data());
        let o = out.data_mut();
        for i in 0..m {
            for k in 0..r {
                let f = u[i * full_r + k].scale(self.s[k]);
                if f == S::zero() {
                    continue;
                }
                for j in 0..n {
                    o[i * n + j] += f * v[k * n + j];
                }
            }
        }
        out
    }
}

fn columns<S: Scalar>(a: &Tensor<S>) -> Vec<Vec<S>> {
    let (m, n) = (a.shape()[0], a.shape()[1]);
    (0..n).map(|j| (0..m).map(|i| a.data()[i * n + j]).collect()).collect()
}

fn dot<S: Scalar>(x: &[S], y: &[S]) -> S {
    x.iter().zip(y).map(|(&a, &b)| a.conj() * b).sum()
}

fn norm_sq<S: Scalar>(x: &[S]) -> S::Real {
    x.iter().map(|v| v.abs_sq()).sum()
}

/// Singular value decomposition by one-sided (Hestenes) Jacobi rotations.
///
/// Singular values come back sorted in descending order.
pub fn svd<S: Scalar>(a: &Tensor<S>) -> Result<SvdResult<S>> {
    if a.rank() != 2 {
        return Err(Error::Rank { expected: 2, actual: a.rank() });
    }
    let (m, n) = (a.shape()[0], a.shape()[1]);
    if m < n {
        let t = svd(&a.adjoint()?)?;
        return Ok(SvdResult { u: t.v.adjoint()?, s: t.s, v: t.u.adjoint()? });
    }

    let eps = S::Real::epsilon();
    let tol = eps * S::Real::lit(m as f64).sqrt();
    let fro2: S::Real = a.data().iter().map(|x| x.abs_sq()).sum();
    let floor = eps * eps * fro2;

    let mut w = columns(a);
    let mut vc: Vec<Vec<S>> =
        (0..n).map(|j| (0..n).map(|i| if i == j { S::one() } else { S::zero() }).collect()).collect();

    let mut converged = n < 2;
    let mut sweeps = 0;
    while !converged {
        if sweeps == MAX_SWEEPS {
            return Err(Error::Numerical { what: "jacobi svd did not converge".into(), iterations: sweeps });
        }
        sweeps += 1;
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = norm_sq(&w[p]);
                let beta = norm_sq(&w[q]);
                let gamma = dot(&w[p], &w[q]);
                let g = gamma.abs();
                if g <= floor || g <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let (c, s) = jacobi_cs((beta - alpha) / (S::Real::lit(2.0) * g));
                let ph = gamma.phase();
                let sp = ph.scale(s);
                let sm = ph.conj().scale(s);
                rotate_pair(&mut w, p, q, c, sp, sm);
                rotate_pair(&mut vc, p, q, c, sp, sm);
            }
        }
        converged = !rotated;
    }

    let mut order: Vec<(usize, S::Real)> = w.iter().map(|col| norm_sq(col).sqrt()).enumerate().collect();
    order.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap_or(std::cmp::Ordering::Equal).then(x.0.cmp(&y.0)));
    let smax = order.first().map(|x| x.1).unwrap_or_else(S::Real::zero);
    let null_cut = smax * eps * S::Real::lit((m.max(n) * 4) as f64);

    let mut ucols: Vec<Vec<S>> = Vec::with_capacity(n);
    let mut pending = Vec::new();
    for (k, &(j, sv)) in order.iter().enumerate() {
        if sv > null_cut && sv > S::Real::zero() {
            let inv = sv.recip();
            ucols.push(w[j].iter().map(|x| x.scale(inv)).collect());
        } else {
            ucols.push(vec![S::zero(); m]);
            pending.push(k);
        }
    }
    complete_basis(&mut ucols, &pending, m);

    let s: Vec<S::Real> = order.iter().map(|x| x.1).collect();
    let u = Tensor::from_fn(&[m, n], |ix| ucols[ix[1]][ix[0]]);
    let v = Tensor::from_fn(&[n, n], |ix| vc[order[ix[0]].0][ix[1]].conj());
    Ok(SvdResult { u, s, v })
}

/// Fill the columns listed in `pending` with unit vectors orthogonal to all others.
fn complete_basis<S: Scalar>(cols: &mut [Vec<S>], pending: &[usize], m: usize) {
    let half = S::Real::lit(0.5);
    let mut probe = 0;
    for &k in pending {
        loop {
            assert!(probe < m, "basis completion ran out of probe vectors");
            let mut cand = vec![S::zero(); m];
            cand[probe] = S::one();
            probe += 1;
            for _ in 0..2 {
                for (j, col) in cols.iter().enumerate() {
                    if j == k || (pending.contains(&j) && norm_sq(col) == S::Real::zero()) {
                        continue;
                    }
                    let proj = dot(col, &cand);
                    for (c, &x) in cand.iter_mut().zip(col) {
                        *c -= x * proj;
                    }
                }
            }
            let nrm = norm_sq(&cand).sqrt();
            if nrm > half {
                let inv = nrm.recip();
                cols[k] = cand.into_iter().map(|x| x.scale(inv)).collect();
                break;
            }
        }
    }
}

fn jacobi_cs<T: Real>(zeta: T) -> (T, T) {
    let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
    let t = sign / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
    let c = (T::one() + t * t).sqrt().recip();
    (c, c * t)
}

/// `x_p ← c x_p − sm x_q`, `x_q ← sp x_p + c x_q`.
fn rotate_pair<S: Scalar>(cols: &mut [Vec<S>], p: usize, q: usize, c: S::Real, sp: S, sm: S) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (xp, xq) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*xp, *xq);
        *xp = a.scale(c) - b * sm;
        *xq = a * sp + b.scale(c);
    }
}

/// Eigen-decomposition of a Hermitian matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching eigenvectors as
/// the columns of the returned matrix.
pub fn eigh<S: Scalar>(a: &Tensor<S>) -> Result<(Vec<S::Real>, Tensor<S>)> {
    if a.rank() != 2 {
        return Err(Error::Rank { expected: 2, actual: a.rank() });
    }
    let n = a.shape()[0];
    if a.shape()[1] != n {
        return Err(Error::Dimension(format!("eigh of non-square {:?}", a.shape())));
    }
    let mut m: Vec<S> = a.data().to_vec();
    // symmetrize away round-off in the input
    for i in 0..n {
        m[i * n + i] = S::from_real(m[i * n + i].re());
        for j in i + 1..n {
            let h = (m[i * n + j] + m[j * n + i].conj()).scale(S::Real::lit(0.5));
            m[i * n + j] = h;
            m[j * n + i] = h.conj();
        }
    }
    let mut v: Vec<S> = Tensor::<S>::eye(n).into_data();
    let eps = S::Real::epsilon();
    let fro: S::Real = m.iter().map(|x| x.abs_sq()).sum::<S::Real>().sqrt();

    let mut sweeps = 0;
    loop {
        let off: S::Real = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * n + j].abs_sq())
            .sum::<S::Real>()
            .sqrt();
        if off <= eps * fro || off == S::Real::zero() {
            break;
        }
        if sweeps == MAX_SWEEPS {
            return Err(Error::Numerical { what: "jacobi eigensolver did not converge".into(), iterations: sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                let g = apq.abs();
                if g <= eps * eps * fro {
                    continue;
                }
                let app = m[p * n + p].re();
                let aqq = m[q * n + q].re();
                let (c, s) = jacobi_cs((aqq - app) / (S::Real::lit(2.0) * g));
                let ph = apq.phase();
                let phc = ph.conj();
                // J = [[c, s], [-s·conj(ph), c·conj(ph)]]; A ← Jᴴ A J, V ← V J
                let jqp = -(phc.scale(s));
                let jqq = phc.scale(c);
                let sc = S::from_real(s);
                for r in 0..n {
                    let (xp, xq) = (m[r * n + p], m[r * n + q]);
                    m[r * n + p] = xp.scale(c) + xq * jqp;
                    m[r * n + q] = xp * sc + xq * jqq;
                    let (yp, yq) = (v[r * n + p], v[r * n + q]);
                    v[r * n + p] = yp.scale(c) + yq * jqp;
                    v[r * n + q] = yp * sc + yq * jqq;
                }
                for r in 0..n {
                    let (yp, yq) = (m[p * n + r], m[q * n + r]);
                    m[p * n + r] = yp.scale(c) + yq * jqp.conj();
                    m[q * n + r] = yp * sc + yq * jqq.conj();
                }
                m[p * n + q] = S::zero();
                m[q * n + p] = S::zero();
                m[p * n + p] = S::from_real(m[p * n + p].re());
                m[q * n + q] = S::from_real(m[q * n + q].re());
            }
        }
    }

    let mut order: Vec<(usize, S::Real)> = (0..n).map(|i| (i, m[i * n + i].re())).collect();
    order.sort_by(|x, y| x.1.partial_cmp(&y.1).unwrap_or(std::cmp::Ordering::Equal).then(x.0.cmp(&y.0)));
    let vals = order.iter().map(|x| x.1).collect();
    let vecs = Tensor::from_fn(&[n, n], |ix| v[ix[0] * n + order[ix[1]].0]);
    Ok((vals, vecs))
}

/// Inverse of a square matrix by Gauss-Jordan elimination with partial pivoting.
///
/// Fails with a numerical error when a pivot falls below `pivot_tol` relative
/// to the largest entry.
pub fn inverse<S: Scalar>(a: &Tensor<S>, pivot_tol: S::Real) -> Result<Tensor<S>> {
    if a.rank() != 2 || a.shape()[0] != a.shape()[1] {
        return Err(Error::Dimension(format!("inverse of non-square {:?}", a.shape())));
    }
    let n = a.shape()[0];
    let scale = a.max_abs().max(S::Real::min_positive_value());
    let mut m: Vec<S> = a.data().to_vec();
    let mut inv: Vec<S> = Tensor::<S>::eye(n).into_data();
    for col in 0..n {
        let (piv, pmag) = (col..n)
            .map(|r| (r, m[r * n + col].abs()))
            .fold((col, -S::Real::one()), |best, x| if x.1 > best.1 { x } else { best });
        if pmag <= pivot_tol * scale {
            return Err(Error::Numerical { what: format!("singular pivot {pmag:?} in column {col}"), iterations: col });
        }
        if piv != col {
            for j in 0..n {
                m.swap(piv * n + j, col * n + j);
                inv.swap(piv * n + j, col * n + j);
            }
        }
        let d = S::one() / m[col * n + col];
        for j in 0..n {
            m[col * n + j] *= d;
            inv[col * n + j] *= d;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[r * n + col];
            if f == S::zero() {
                continue;
            }
            for j in 0..n {
                let (mv, iv) = (m[col * n + j], inv[col * n + j]);
                m[r * n + j] -= f * mv;
                inv[r * n + j] -= f * iv;
            }
        }
    }
    Tensor::new(vec![n, n], inv)
}

#[derive(Clone, Debug)]
pub struct LanczosResult<S: Scalar> {
    pub value: S::Real,
    pub vector: Vec<S>,
    /// `‖H x − value·x‖` recomputed with an explicit matvec.
    pub residual: S::Real,
    pub iterations: usize,
}

/// Lowest eigenpair of a Hermitian operator given as a matvec closure.
///
/// Runs at most `max_iter` Lanczos steps with full reorthogonalization,
/// stopping early once the Ritz residual estimate drops below `tol`.
pub fn lanczos_lowest<S: Scalar>(
    mut matvec: impl FnMut(&[S]) -> Vec<S>,
    start: &[S],
    max_iter: usize,
    tol: S::Real,
) -> Result<LanczosResult<S>> {
    let dim = start.len();
    let n0 = norm_sq(start).sqrt();
    if dim == 0 || n0 == S::Real::zero() {
        return Err(Error::Argument("lanczos start vector must be nonzero".into()));
    }
    let max_iter = max_iter.max(1).min(dim);
    let mut basis: Vec<Vec<S>> = vec![start.iter().map(|x| x.scale(n0.recip())).collect()];
    let mut alphas: Vec<S::Real> = Vec::new();
    let mut betas: Vec<S::Real> = Vec::new();
    let mut ritz: (S::Real, Vec<S::Real>) = (S::Real::zero(), vec![S::Real::one()]);

    for j in 0..max_iter {
        let mut w = matvec(&basis[j]);
        let alpha = dot(&basis[j], &w).re();
        alphas.push(alpha);
        for _ in 0..2 {
            for q in &basis {
                let proj = dot(q, &w);
                for (wi, &qi) in w.iter_mut().zip(q) {
                    *wi -= qi * proj;
                }
            }
        }
        let beta = norm_sq(&w).sqrt();
        ritz = tridiag_lowest::<S>(&alphas, &betas)?;
        let estimate = beta * ritz.1.last().copied().unwrap_or_else(S::Real::zero).abs();
        let done = estimate <= tol * S::Real::lit(0.1) || beta <= S::Real::epsilon() * (S::Real::one() + alpha.abs());
        if done || j + 1 == max_iter {
            break;
        }
        betas.push(beta);
        basis.push(w.into_iter().map(|x| x.scale(beta.recip())).collect());
    }

    let k = ritz.1.len();
    let mut x = vec![S::zero(); dim];
    for (q, &c) in basis.iter().take(k).zip(&ritz.1) {
        for (xi, &qi) in x.iter_mut().zip(q) {
            *xi += qi.scale(c);
        }
    }
    let nx = norm_sq(&x).sqrt();
    for xi in &mut x {
        *xi = xi.scale(nx.recip());
    }
    let hx = matvec(&x);
    let value = dot(&x, &hx).re();
    let residual = hx.iter().zip(&x).map(|(&h, &xi)| (h - xi.scale(value)).abs_sq()).sum::<S::Real>().sqrt();
    Ok(LanczosResult { value, vector: x, residual, iterations: k })
}

fn tridiag_lowest<S: Scalar>(alphas: &[S::Real], betas: &[S::Real]) -> Result<(S::Real, Vec<S::Real>)> {
    let k = alphas.len();
    let t = Tensor::<S>::from_fn(&[k, k], |ix| {
        let (i, j) = (ix[0], ix[1]);
        if i == j {
            S::from_real(alphas[i])
        } else if i + 1 == j {
            S::from_real(betas[i])
        } else if j + 1 == i {
            S::from_real(betas[j])
        } else {
            S::zero()
        }
    });
    let (vals, vecs) = eigh(&t)?;
    // eigenvectors of a real symmetric matrix are real up to a global phase
    let col: Vec<S> = (0..k).map(|i| vecs.get(&[i, 0])).collect();
    let ph = col.iter().copied().fold(S::zero(), |best, x| if x.abs() > best.abs() { x } else { best }).phase();
    let y = col.iter().map(|&x| (x * ph.conj()).re()).collect();
    Ok((vals[0], y))
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn is_isometry(q: &Tensor<Complex64>, tol: f64) -> bool {
        let g = q.adjoint().unwrap().matmul(q).unwrap();
        g.max_abs_diff(&Tensor::eye(g.shape()[0])).unwrap() <= tol
    }

    #[test]
    fn identity_and_diagonal() {
        let r = svd(&Tensor::<f64>::eye(3)).unwrap();
        assert_eq!(r.s, vec![1.0, 1.0, 1.0]);
        let d = Tensor::from_fn(&[3, 3], |ix| if ix[0] == ix[1] { [1.0, 3.0, 2.0][ix[0]] } else { 0.0 });
        let r = svd(&d).unwrap();
        assert_eq!(r.s, vec![3.0, 2.0, 1.0]);
    }

    #[test]
    fn random_complex_reconstruction() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(m, n) in &[(4, 6), (6, 4), (5, 5), (1, 7), (16, 9)] {
            let a = Tensor::<Complex64>::random(&[m, n], &mut rng);
            let r = svd(&a).unwrap();
            assert_eq!(r.rank(), m.min(n));
            let err = r.recompose(None).sub(&a).unwrap().norm_fro() / a.norm_fro();
            assert!(err <= 1e-10, "{m}x{n}: {err}");
            assert!(is_isometry(&r.u, 1e-10));
            assert!(is_isometry(&r.v.adjoint().unwrap(), 1e-10));
            assert!(r.s.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_still_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Tensor::<Complex64>::random(&[6, 1], &mut rng);
        let y = Tensor::<Complex64>::random(&[1, 4], &mut rng);
        let a = x.matmul(&y).unwrap();
        let r = svd(&a).unwrap();
        assert!(r.s[1] < 1e-12);
        assert!(is_isometry(&r.u, 1e-10));
        assert!(r.recompose(None).sub(&a).unwrap().norm_fro() <= 1e-12 * a.norm_fro());
        let z = svd(&Tensor::<Complex64>::zeros(&[3, 2])).unwrap();
        assert!(is_isometry(&z.u, 1e-12));
    }

    #[test]
    fn svd_rejects_non_matrix() {
        assert!(matches!(svd(&Tensor::<f64>::zeros(&[2, 2, 2])), Err(Error::Rank { .. })));
    }

    #[test]
    fn eigh_hermitian_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 2, 5, 12] {
            let b = Tensor::<Complex64>::random(&[n, n], &mut rng);
            let h = b.add(&b.adjoint().unwrap()).unwrap();
            let (vals, vecs) = eigh(&h).unwrap();
            assert!(is_isometry(&vecs, 1e-10));
            let hv = h.matmul(&vecs).unwrap();
            for k in 0..n {
                for i in 0..n {
                    let d = hv.get(&[i, k]) - vecs.get(&[i, k]) * vals[k];
                    assert!(d.norm() < 1e-10);
                }
            }
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn inverse_roundtrip_and_singular() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = Tensor::<Complex64>::random(&[5, 5], &mut rng);
        let ai = inverse(&a, 1e-12).unwrap();
        assert!(a.matmul(&ai).unwrap().max_abs_diff(&Tensor::eye(5)).unwrap() < 1e-12);
        let s = Tensor::new(vec![2, 2], vec![1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!(matches!(inverse(&s, 1e-12), Err(Error::Numerical { .. })));
    }

    #[test]
    fn lanczos_matches_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 40;
        let b = Tensor::<Complex64>::random(&[n, n], &mut rng);
        let h = b.add(&b.adjoint().unwrap()).unwrap();
        let (vals, _) = eigh(&h).unwrap();
        let start: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0, 0.1 * i as f64)).collect();
        let mv = |x: &[Complex64]| {
            let xv = Tensor::new(vec![n, 1], x.to_vec()).unwrap();
            h.matmul(&xv).unwrap().into_data()
        };
        let r = lanczos_lowest(mv, &start, n, 1e-12).unwrap();
        assert!((r.value - vals[0]).abs() < 1e-10, "{} vs {}", r.value, vals[0]);
        assert!(r.residual < 1e-8);
    }
}
