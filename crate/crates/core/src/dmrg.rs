//! One-site DMRG for matrix-product operators, with the transverse-field
//! Ising chain as testbed and a Lanczos exact-diagonalization oracle.

use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::compress::{push_left, push_right, MpsChain};
use crate::error::{Error, Result};
use crate::scalar::{one, zero, Real, Scalar};
use crate::tensor::{contract, eigh, lanczos_lowest, Tensor};

/// Largest Hilbert-space dimension handled by [`exact_diag`] (12 qubits).
pub const MAX_EXACT_DIM: usize = 1 << 12;
/// Local problems up to this size are solved densely.
const DENSE_LOCAL_DIM: usize = 64;
const LOCAL_LANCZOS_ITERS: usize = 50;
const LOCAL_TOL: f64 = 1e-10;
const INIT_SEED: u64 = 0x5eed;

/// Matrix-product operator with sites `(left bond, out, in, right bond)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Mpo<S> {
    sites: Vec<Tensor<S>>,
}

impl<S: Scalar> Mpo<S> {
    pub fn new(sites: Vec<Tensor<S>>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Argument("operator needs at least one site".into()));
        }
        for (k, s) in sites.iter().enumerate() {
            if s.rank() != 4 {
                return Err(Error::Rank { expected: 4, actual: s.rank() });
            }
            if k > 0 && sites[k - 1].shape()[3] != s.shape()[0] {
                return Err(Error::Dimension(format!("operator bond {k} mismatch")));
            }
        }
        if sites[0].shape()[0] != 1 || sites[sites.len() - 1].shape()[3] != 1 {
            return Err(Error::Dimension("operator boundary bonds must have dimension 1".into()));
        }
        Ok(Mpo { sites })
    }

    pub fn sites(&self) -> &[Tensor<S>] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    /// Input physical dimensions.
    pub fn phys_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.shape()[2]).collect()
    }

    /// Hilbert-space dimension, or `None` on overflow.
    pub fn dim(&self) -> Option<usize> {
        self.phys_dims().iter().try_fold(1usize, |a, &d| a.checked_mul(d))
    }

    /// Dense matrix of the operator; refuses dimensions above [`MAX_EXACT_DIM`].
    pub fn materialize(&self) -> Result<Tensor<S>> {
        self.check_dim()?;
        let first = &self.sites[0];
        let (o, i, r) = (first.shape()[1], first.shape()[2], first.shape()[3]);
        let mut acc = first.reshape(&[o, i, r])?;
        let (mut rows, mut cols) = (o, i);
        for w in &self.sites[1..] {
            let (o, i, r) = (w.shape()[1], w.shape()[2], w.shape()[3]);
            acc = contract(&acc, w, &[(2, 0)])?.permute(&[0, 2, 1, 3, 4])?.into_reshape(&[rows * o, cols * i, r])?;
            rows *= o;
            cols *= i;
        }
        acc.into_reshape(&[rows, cols])
    }

    /// `H · v` for a state vector in the row-major product basis.
    pub fn apply(&self, v: &[S]) -> Result<Vec<S>> {
        let dim = self.check_dim()?;
        if v.len() != dim {
            return Err(Error::Dimension(format!("state of length {} for dimension {dim}", v.len())));
        }
        // x[bond, produced outputs, remaining inputs]
        let mut x = Tensor::new(vec![1, 1, dim], v.to_vec())?;
        let mut done = 1;
        let mut rest = dim;
        for w in &self.sites {
            let (b, o, i, r) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
            rest /= i;
            let xr = x.into_reshape(&[b, done, i, rest])?;
            x = contract(&xr, w, &[(0, 0), (2, 2)])?.permute(&[3, 0, 2, 1])?.into_reshape(&[r, done * o, rest])?;
            done *= o;
        }
        Ok(x.into_data())
    }

    fn check_dim(&self) -> Result<usize> {
        match self.dim() {
            Some(d) if d <= MAX_EXACT_DIM => Ok(d),
            _ => Err(Error::Capability(format!(
                "dense treatment of {} sites exceeds dimension {MAX_EXACT_DIM}",
                self.len()
            ))),
        }
    }
}

/// `H = −J Σ Z_i Z_{i+1} − h Σ X_i` on an open chain, bond dimension 3.
pub fn build_tfim_mpo<S: Scalar>(n: usize, j: f64, h: f64) -> Result<Mpo<S>> {
    if n < 2 {
        return Err(Error::Argument(format!("transverse-field Ising chain needs at least 2 sites, got {n}")));
    }
    let lit = |x: f64| S::from_real(S::Real::lit(x));
    let id = [[1.0, 0.0], [0.0, 1.0]];
    let z = [[1.0, 0.0], [0.0, -1.0]];
    let x = [[0.0, 1.0], [1.0, 0.0]];
    // bulk W[l][r]: rows (done, Z pending, start), columns likewise
    let mut bulk: [[[[f64; 2]; 2]; 3]; 3] = [[[[0.0; 2]; 2]; 3]; 3];
    bulk[0][0] = id;
    bulk[1][0] = z;
    bulk[2][0] = x.map(|r| r.map(|e| -h * e));
    bulk[2][1] = z.map(|r| r.map(|e| -j * e));
    bulk[2][2] = id;
    let site = |rows: std::ops::Range<usize>, cols: std::ops::Range<usize>| {
        let (l, r) = (rows.len(), cols.len());
        Tensor::from_fn(&[l, 2, 2, r], |ix| lit(bulk[rows.start + ix[0]][cols.start + ix[3]][ix[1]][ix[2]]))
    };
    let mut sites = vec![site(2..3, 0..3)];
    for _ in 1..n - 1 {
        sites.push(site(0..3, 0..3));
    }
    sites.push(site(0..3, 0..1));
    Mpo::new(sites)
}

#[derive(Clone, Debug)]
pub struct GroundState<S> {
    pub energy: f64,
    pub vector: Vec<S>,
    /// `‖Hv − Ev‖`.
    pub residual: f64,
}

/// Lowest eigenpair of `mpo` by restarted Lanczos on the dense state space.
pub fn exact_diag<S: Scalar>(mpo: &Mpo<S>) -> Result<GroundState<S>> {
    let dim = mpo.check_dim()?;
    if dim <= DENSE_LOCAL_DIM {
        let (vals, vecs) = eigh(&mpo.materialize()?)?;
        let v: Vec<S> = (0..dim).map(|i| vecs.get(&[i, 0])).collect();
        let hv = mpo.apply(&v)?;
        let e = vals[0];
        let residual = hv.iter().zip(&v).map(|(&a, &b)| (a - b.scale(e)).abs_sq()).sum::<S::Real>().sqrt();
        return Ok(GroundState { energy: e.to_f64_lossy(), vector: v, residual: residual.to_f64_lossy() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(INIT_SEED);
    let mut start = Tensor::<S>::random(&[dim], &mut rng).into_data();
    let mut last = None;
    for _ in 0..50 {
        let res = lanczos_lowest(|v| mpo.apply(v).expect("dimension checked"), &start, 80, S::Real::lit(1e-11))?;
        let done = res.residual.to_f64_lossy() <= 1e-9;
        start = res.vector.clone();
        last = Some(res);
        if done {
            break;
        }
    }
    let res = last.expect("at least one restart");
    let residual = res.residual.to_f64_lossy();
    if residual > 1e-8 {
        return Err(Error::Numerical { what: format!("exact diagonalization residual {residual:e}"), iterations: 50 });
    }
    Ok(GroundState { energy: res.value.to_f64_lossy(), vector: res.vector, residual })
}

/// Result of a DMRG run.
#[derive(Clone, Debug)]
pub struct DmrgState<S> {
    /// Normalized state; every site but the first is a right isometry.
    pub mps: MpsChain<S>,
    /// `left[k]` contracts sites `< k` with the operator, axes `(ket, op, bra)`.
    pub left: Vec<Tensor<S>>,
    /// `right[k]` contracts sites `> k`.
    pub right: Vec<Tensor<S>>,
    pub energy: f64,
    /// Energy at the end of every full sweep.
    pub sweep_energies: Vec<f64>,
    /// Residual of the last local eigenproblem.
    pub residual: f64,
    pub converged: bool,
}

fn ones3<S: Scalar>() -> Tensor<S> {
    Tensor::filled(&[1, 1, 1], one())
}

fn extend_left<S: Scalar>(l: &Tensor<S>, a: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
    let x = contract(l, a, &[(0, 0)])?; // [w, b, s, r]
    let y = contract(&x, w, &[(0, 0), (2, 2)])?; // [b, r, t, v]
    contract(&y, &a.conj(), &[(0, 0), (2, 1)]) // [r, v, rb]
}

fn extend_right<S: Scalar>(r: &Tensor<S>, a: &Tensor<S>, w: &Tensor<S>) -> Result<Tensor<S>> {
    let x = contract(a, r, &[(2, 0)])?; // [a, s, v, d]
    let y = contract(&x, w, &[(1, 2), (2, 3)])?; // [a, d, w, t]
    contract(&y, &a.conj(), &[(1, 2), (3, 1)]) // [a, w, b]
}

/// Effective Hamiltonian of one site applied to `x`, axes `(left, phys, right)`.
fn apply_effective<S: Scalar>(l: &Tensor<S>, w: &Tensor<S>, r: &Tensor<S>, x: &Tensor<S>) -> Result<Tensor<S>> {
    let a = contract(l, x, &[(0, 0)])?; // [w, b, s, g]
    let b = contract(&a, w, &[(0, 0), (2, 2)])?; // [b, g, t, v]
    contract(&b, r, &[(1, 0), (3, 1)]) // [b, t, d]
}

/// Lowest eigenpair of the effective Hamiltonian, warm-started from `x`.
fn solve_local<S: Scalar>(l: &Tensor<S>, w: &Tensor<S>, r: &Tensor<S>, x: &Tensor<S>) -> Result<(f64, Tensor<S>, f64)> {
    let shape = x.shape().to_vec();
    let dim = x.len();
    let matvec = |v: &[S]| -> Vec<S> {
        let t = Tensor::new(shape.clone(), v.to_vec()).expect("local shape");
        apply_effective(l, w, r, &t).expect("environment shapes").into_data()
    };
    if dim <= DENSE_LOCAL_DIM {
        let mut h = Tensor::<S>::zeros(&[dim, dim]);
        let mut e = vec![zero::<S>(); dim];
        for k in 0..dim {
            e[k] = one();
            for (i, val) in matvec(&e).into_iter().enumerate() {
                h.set(&[i, k], val);
            }
            e[k] = zero();
        }
        let (vals, vecs) = eigh(&h)?;
        let v: Vec<S> = (0..dim).map(|i| vecs.get(&[i, 0])).collect();
        let hv = matvec(&v);
        let res = hv.iter().zip(&v).map(|(&a, &b)| (a - b.scale(vals[0])).abs_sq()).sum::<S::Real>().sqrt();
        return Ok((vals[0].to_f64_lossy(), Tensor::new(shape, v)?, res.to_f64_lossy()));
    }
    let out = lanczos_lowest(matvec, x.data(), LOCAL_LANCZOS_ITERS, S::Real::lit(LOCAL_TOL))?;
    Ok((out.value.to_f64_lossy(), Tensor::new(shape, out.vector)?, out.residual.to_f64_lossy()))
}

/// Bond dimensions of a maximally entangled-capable chain capped at `chi`.
fn initial_bonds(phys: &[usize], chi: usize) -> Vec<usize> {
    let n = phys.len();
    (0..n - 1)
        .map(|k| {
            let left = phys[..=k].iter().try_fold(1usize, |a, &d| a.checked_mul(d)).unwrap_or(usize::MAX);
            let right = phys[k + 1..].iter().try_fold(1usize, |a, &d| a.checked_mul(d)).unwrap_or(usize::MAX);
            chi.min(left).min(right)
        })
        .collect()
}

/// One-site DMRG with fixed bond dimension `chi` and `sweeps` full
/// (right then left) sweeps.
pub fn dmrg_ground_state<S: Scalar>(mpo: &Mpo<S>, chi: usize, sweeps: usize) -> Result<DmrgState<S>> {
    if chi < 2 {
        return Err(Error::Argument(format!("bond dimension must be at least 2, got {chi}")));
    }
    if sweeps < 1 {
        return Err(Error::Argument("at least one sweep is required".into()));
    }
    let n = mpo.len();
    let phys = mpo.phys_dims();
    let bonds = initial_bonds(&phys, chi);
    let mut rng = ChaCha8Rng::seed_from_u64(INIT_SEED);
    let sites = (0..n)
        .map(|k| {
            let l = if k == 0 { 1 } else { bonds[k - 1] };
            let r = if k + 1 == n { 1 } else { bonds[k] };
            Tensor::<S>::random(&[l, phys[k], r], &mut rng)
        })
        .collect();
    let mut sites = crate::compress::canonicalize(&MpsChain::new(sites)?, 0)?.sites;
    let nrm = sites[0].norm_fro();
    sites[0] = sites[0].scale(S::from_real(nrm.recip()));

    let w = mpo.sites();
    let mut left: Vec<Tensor<S>> = vec![ones3(); n];
    let mut right: Vec<Tensor<S>> = vec![ones3(); n];
    for k in (0..n - 1).rev() {
        right[k] = extend_right(&right[k + 1], &sites[k + 1], &w[k + 1])?;
    }

    let mut energy = f64::INFINITY;
    let mut residual = f64::NAN;
    let mut sweep_energies = Vec::with_capacity(sweeps);
    for _ in 0..sweeps {
        for k in 0..n - 1 {
            let (e, x, res) = solve_local(&left[k], &w[k], &right[k], &sites[k])?;
            (energy, residual, sites[k]) = (e, res, x);
            push_right(&mut sites, k)?;
            left[k + 1] = extend_left(&left[k], &sites[k], &w[k])?;
        }
        for k in (1..n).rev() {
            let (e, x, res) = solve_local(&left[k], &w[k], &right[k], &sites[k])?;
            (energy, residual, sites[k]) = (e, res, x);
            push_left(&mut sites, k, |s| s.len())?;
            right[k - 1] = extend_right(&right[k], &sites[k], &w[k])?;
        }
        sweep_energies.push(energy);
    }
    let converged = match sweep_energies.as_slice() {
        [.., a, b] => (a - b).abs() <= 1e-10 && residual <= 1e-6,
        _ => false,
    };
    if !converged {
        log::warn!("dmrg not converged after {sweeps} sweeps: residual {residual:e}");
    }
    Ok(DmrgState { mps: MpsChain::new(sites)?, left, right, energy, sweep_energies, residual, converged })
}

/// `⟨ψ|ψ⟩` of a chain.
pub fn overlap<S: Scalar>(mps: &MpsChain<S>) -> Result<f64> {
    let mut env = Tensor::<S>::filled(&[1, 1], one());
    for a in mps.sites() {
        let x = contract(&env, a, &[(0, 0)])?; // [b, s, r]
        env = contract(&x, &a.conj(), &[(0, 0), (1, 1)])?; // [r, rb]
    }
    Ok(env.item().re().to_f64_lossy())
}

/// `⟨ψ|H|ψ⟩ / ⟨ψ|ψ⟩`.
pub fn expectation<S: Scalar>(mps: &MpsChain<S>, mpo: &Mpo<S>) -> Result<f64> {
    if mps.len() != mpo.len() {
        return Err(Error::Dimension(format!("{} state sites vs {} operator sites", mps.len(), mpo.len())));
    }
    let mut env = ones3::<S>();
    for (a, w) in mps.sites().iter().zip(mpo.sites()) {
        env = extend_left(&env, a, w)?;
    }
    Ok(env.item().re().to_f64_lossy() / overlap(mps)?)
}

impl<S: Scalar> DmrgState<S> {
    pub fn norm_defect(&self) -> Result<f64> {
        Ok((overlap(&self.mps)? - 1.0).abs())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;

    /// `Σ` of Kronecker products built directly from Pauli matrices.
    fn dense_tfim(n: usize, j: f64, h: f64) -> Tensor<f64> {
        let dim = 1 << n;
        let bit = |s: usize, k: usize| (s >> (n - 1 - k)) & 1;
        Tensor::from_fn(&[dim, dim], |ix| {
            let (a, b) = (ix[0], ix[1]);
            let mut v = 0.0;
            if a == b {
                for k in 0..n - 1 {
                    let zz = if bit(a, k) == bit(a, k + 1) { 1.0 } else { -1.0 };
                    v -= j * zz;
                }
            }
            for k in 0..n {
                if a ^ b == 1 << (n - 1 - k) {
                    v -= h;
                }
            }
            v
        })
    }

    #[test]
    fn two_site_ising_is_minus_zz() {
        let m = build_tfim_mpo::<f64>(2, 1.0, 0.0).unwrap().materialize().unwrap();
        let expect = Tensor::from_fn(&[4, 4], |ix| if ix[0] != ix[1] { 0.0 } else if ix[0] == 0 || ix[0] == 3 { -1.0 } else { 1.0 });
        assert_eq!(m, expect);
        assert!(build_tfim_mpo::<f64>(1, 1.0, 1.0).is_err());
    }

    #[test]
    fn mpo_matches_kronecker_sum() {
        for n in [3, 5, 8] {
            let m = build_tfim_mpo::<f64>(n, 0.7, 1.3).unwrap().materialize().unwrap();
            assert!(m.max_abs_diff(&dense_tfim(n, 0.7, 1.3)).unwrap() <= 1e-12);
            assert!(m.max_abs_diff(&m.transpose().unwrap()).unwrap() <= 1e-12);
        }
        let c = build_tfim_mpo::<Complex64>(4, 1.0, 0.5).unwrap().materialize().unwrap();
        assert!(c.max_abs_diff(&c.adjoint().unwrap()).unwrap() <= 1e-12);
    }

    #[test]
    fn apply_matches_dense_matvec() {
        let mpo = build_tfim_mpo::<f64>(6, 1.0, 0.4).unwrap();
        let dense = mpo.materialize().unwrap();
        let v: Vec<f64> = (0..64).map(|i| (i as f64 * 0.37).sin()).collect();
        let hv = mpo.apply(&v).unwrap();
        let expect = dense.matmul(&Tensor::new(vec![64, 1], v).unwrap()).unwrap();
        for (a, b) in hv.iter().zip(expect.data()) {
            assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn exact_energies_match_limits() {
        let e = exact_diag(&build_tfim_mpo::<f64>(8, 1.0, 0.0).unwrap()).unwrap();
        assert!((e.energy + 7.0).abs() <= 1e-9 && e.residual <= 1e-8);
        let e = exact_diag(&build_tfim_mpo::<f64>(8, 0.0, 1.0).unwrap()).unwrap();
        assert!((e.energy + 8.0).abs() <= 1e-9);
        // small case cross-checked against the dense eigensolver
        let mpo = build_tfim_mpo::<f64>(5, 1.0, 1.0).unwrap();
        let (vals, _) = eigh(&dense_tfim(5, 1.0, 1.0)).unwrap();
        assert!((exact_diag(&mpo).unwrap().energy - vals[0]).abs() <= 1e-9);
        let too_big = build_tfim_mpo::<f64>(13, 1.0, 1.0).unwrap();
        assert!(matches!(exact_diag(&too_big), Err(Error::Capability(_))));
    }

    #[test]
    fn dmrg_classical_limit() {
        let mpo = build_tfim_mpo::<f64>(8, 1.0, 0.0).unwrap();
        let st = dmrg_ground_state(&mpo, 2, 2).unwrap();
        assert!((st.energy + 7.0).abs() <= 1e-9, "{}", st.energy);
        assert!(st.norm_defect().unwrap() <= 1e-10);
    }

    #[test]
    fn dmrg_matches_exact_and_is_monotone() {
        let mpo = build_tfim_mpo::<f64>(8, 1.0, 1.0).unwrap();
        let exact = exact_diag(&mpo).unwrap().energy;
        let st = dmrg_ground_state(&mpo, 16, 6).unwrap();
        assert!((st.energy - exact).abs() <= 1e-6, "{} vs {exact}", st.energy);
        assert!(st.energy >= exact - 1e-9);
        for w in st.sweep_energies.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        assert!(st.norm_defect().unwrap() <= 1e-10);
        assert!((expectation(&st.mps, &mpo).unwrap() - st.energy).abs() <= 1e-8);
    }

    #[test]
    fn dmrg_rejects_bad_arguments() {
        let mpo = build_tfim_mpo::<f64>(4, 1.0, 1.0).unwrap();
        assert!(dmrg_ground_state(&mpo, 1, 2).is_err());
        assert!(dmrg_ground_state(&mpo, 4, 0).is_err());
    }
}
