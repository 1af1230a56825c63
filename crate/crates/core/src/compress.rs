//! Matrix-product chains: canonical forms, SVD truncation and export of the
//! per-node renormalization chains of a traced model.

use num_complex::Complex64;
use num_traits::{Float, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ops::{renormalize, ChainFactor};
use crate::model::{KernelMode, LayerTrace};
use crate::scalar::{Real, Scalar};
use crate::tensor::{svd, Tensor};
use crate::CTensor;

/// Chain of order-3 site tensors `(left bond, physical, right bond)` with
/// unit boundary bonds.
#[derive(Clone, Debug, PartialEq)]
pub struct MpsChain<S> {
    pub(crate) sites: Vec<Tensor<S>>,
}

/// How [`truncate`] chooses the kept singular values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Truncation {
    MaxBond(usize),
    /// Drop singular values strictly below the threshold.
    Threshold(f64),
}

impl<S: Scalar> MpsChain<S> {
    pub fn new(sites: Vec<Tensor<S>>) -> Result<Self> {
        if sites.is_empty() {
            return Err(Error::Argument("chain needs at least one site".into()));
        }
        for (k, s) in sites.iter().enumerate() {
            if s.rank() != 3 {
                return Err(Error::Rank { expected: 3, actual: s.rank() });
            }
            if k > 0 && sites[k - 1].shape()[2] != s.shape()[0] {
                return Err(Error::Dimension(format!(
                    "bond {k}: right dim {} != left dim {}",
                    sites[k - 1].shape()[2],
                    s.shape()[0]
                )));
            }
        }
        if sites[0].shape()[0] != 1 || sites[sites.len() - 1].shape()[2] != 1 {
            return Err(Error::Dimension("boundary bonds must have dimension 1".into()));
        }
        Ok(MpsChain { sites })
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

    /// Internal bond dimensions, `len() - 1` entries.
    pub fn bond_dims(&self) -> Vec<usize> {
        self.sites[..self.sites.len() - 1].iter().map(|s| s.shape()[2]).collect()
    }

    pub fn phys_dims(&self) -> Vec<usize> {
        self.sites.iter().map(|s| s.shape()[1]).collect()
    }

    /// Dense tensor with one axis per physical index.
    pub fn contract(&self) -> Result<Tensor<S>> {
        let first = &self.sites[0];
        let mut rows = first.shape()[1];
        let mut acc = first.clone();
        for s in &self.sites[1..] {
            let (l, p, r) = (s.shape()[0], s.shape()[1], s.shape()[2]);
            acc = acc.into_reshape(&[rows, l])?.matmul(&s.reshape(&[l, p * r])?)?;
            rows *= p;
        }
        acc.into_reshape(&self.phys_dims())
    }

    /// Largest deviation of `A†A` from the identity, `A` the site reshaped to `(l·p, r)`.
    pub fn left_isometry_defect(&self, k: usize) -> Result<S::Real> {
        let s = &self.sites[k];
        let (l, p, r) = (s.shape()[0], s.shape()[1], s.shape()[2]);
        let a = s.reshape(&[l * p, r])?;
        a.adjoint()?.matmul(&a)?.max_abs_diff(&Tensor::eye(r))
    }

    /// Largest deviation of `BB†` from the identity, `B` the site reshaped to `(l, p·r)`.
    pub fn right_isometry_defect(&self, k: usize) -> Result<S::Real> {
        let s = &self.sites[k];
        let (l, p, r) = (s.shape()[0], s.shape()[1], s.shape()[2]);
        let b = s.reshape(&[l, p * r])?;
        b.matmul(&b.adjoint()?)?.max_abs_diff(&Tensor::eye(l))
    }
}

fn scale_rows<S: Scalar>(m: &Tensor<S>, s: &[S::Real]) -> Tensor<S> {
    let n = m.shape()[1];
    Tensor::from_fn(m.shape(), |ix| m.data()[ix[0] * n + ix[1]].scale(s[ix[0]]))
}

fn scale_cols<S: Scalar>(m: &Tensor<S>, s: &[S::Real]) -> Tensor<S> {
    let n = m.shape()[1];
    Tensor::from_fn(m.shape(), |ix| m.data()[ix[0] * n + ix[1]].scale(s[ix[1]]))
}

fn first_cols<S: Scalar>(m: &Tensor<S>, k: usize) -> Result<Tensor<S>> {
    let n = m.shape()[1];
    Ok(Tensor::from_fn(&[m.shape()[0], k], |ix| m.data()[ix[0] * n + ix[1]]))
}

fn first_rows<S: Scalar>(m: &Tensor<S>, k: usize) -> Result<Tensor<S>> {
    let n = m.shape()[1];
    Tensor::new(vec![k, n], m.data()[..k * n].to_vec())
}

/// Move `site k`'s non-isometric part into `site k+1`.
pub(crate) fn push_right<S: Scalar>(sites: &mut [Tensor<S>], k: usize) -> Result<()> {
    let (l, p, r) = (sites[k].shape()[0], sites[k].shape()[1], sites[k].shape()[2]);
    let f = svd(&sites[k].reshape(&[l * p, r])?)?;
    let rank = f.rank();
    sites[k] = f.u.into_reshape(&[l, p, rank])?;
    let carry = scale_rows(&f.v, &f.s);
    let next = &sites[k + 1];
    let (_, p2, r2) = (next.shape()[0], next.shape()[1], next.shape()[2]);
    sites[k + 1] = carry.matmul(&next.reshape(&[r, p2 * r2])?)?.into_reshape(&[rank, p2, r2])?;
    Ok(())
}

/// Move `site k`'s non-isometric part into `site k-1`, keeping at most `keep`
/// singular values. Returns the squared weight of the dropped ones.
pub(crate) fn push_left<S: Scalar>(sites: &mut [Tensor<S>], k: usize, keep: impl Fn(&[S::Real]) -> usize) -> Result<S::Real> {
    let (l, p, r) = (sites[k].shape()[0], sites[k].shape()[1], sites[k].shape()[2]);
    let f = svd(&sites[k].reshape(&[l, p * r])?)?;
    let kept = keep(&f.s).clamp(1, f.rank());
    let dropped = f.s[kept..].iter().map(|&x| x * x).fold(S::Real::zero(), |a, b| a + b);
    sites[k] = first_rows(&f.v, kept)?.into_reshape(&[kept, p, r])?;
    let carry = scale_cols(&first_cols(&f.u, kept)?, &f.s[..kept]);
    let prev = &sites[k - 1];
    let (l0, p0) = (prev.shape()[0], prev.shape()[1]);
    sites[k - 1] = prev.reshape(&[l0 * p0, l])?.matmul(&carry)?.into_reshape(&[l0, p0, kept])?;
    Ok(dropped)
}

/// Central-orthogonal form around `center`: sites to its left become left
/// isometries, sites to its right right isometries.
pub fn canonicalize<S: Scalar>(chain: &MpsChain<S>, center: usize) -> Result<MpsChain<S>> {
    if center >= chain.len() {
        return Err(Error::Argument(format!("center {center} outside a chain of {} sites", chain.len())));
    }
    let mut sites = chain.sites.clone();
    for k in 0..center {
        push_right(&mut sites, k)?;
    }
    for k in (center + 1..sites.len()).rev() {
        push_left(&mut sites, k, |s| s.len())?;
    }
    MpsChain::new(sites)
}

/// SVD truncation of every bond by a right-to-left sweep over the
/// left-canonical form.
///
/// Returns the truncated chain and `sqrt(Σ discarded s²)`, which bounds the
/// Frobenius distance between the two dense contractions. A rule that
/// cannot discard anything returns the input chain unchanged.
pub fn truncate<S: Scalar>(chain: &MpsChain<S>, rule: Truncation) -> Result<(MpsChain<S>, f64)> {
    match rule {
        Truncation::MaxBond(0) => return Err(Error::Argument("max bond must be at least 1".into())),
        Truncation::Threshold(t) if !(t >= 0.0) => {
            return Err(Error::Argument(format!("threshold must be a non-negative number, got {t}")))
        }
        Truncation::MaxBond(m) if chain.bond_dims().iter().all(|&b| b <= m) => return Ok((chain.clone(), 0.0)),
        _ => {}
    }
    let n = chain.len();
    let mut sites = canonicalize(chain, n - 1)?.sites;
    let mut discarded = S::Real::zero();
    for k in (1..n).rev() {
        discarded += push_left(&mut sites, k, |s| match rule {
            Truncation::MaxBond(m) => m.min(s.len()),
            Truncation::Threshold(t) => s.iter().take_while(|x| x.to_f64_lossy() >= t).count(),
        })?;
    }
    if discarded == S::Real::zero() && matches!(rule, Truncation::Threshold(_)) {
        return Ok((chain.clone(), 0.0));
    }
    Ok((MpsChain::new(sites)?, discarded.sqrt().to_f64_lossy()))
}

/// Chain whose contraction is the renormalized matrix `R` built from
/// `factors` in order.
///
/// The first site carries the row index of `R` as its physical leg, the last
/// site the column index, and the sites between have physical dimension 1.
/// A single factor becomes one site with the flattened `χ²` matrix; no
/// factors give the identity.
pub fn kernel_chain_export(factors: &[ChainFactor], unitary: Option<&CTensor>, chi: usize) -> Result<MpsChain<Complex64>> {
    let mats: Vec<CTensor> = if factors.is_empty() {
        vec![CTensor::eye(chi)]
    } else {
        factors.iter().map(|f| f.matrix(unitary)).collect::<Result<_>>()?
    };
    for m in &mats {
        if m.shape() != [chi, chi] {
            return Err(Error::Dimension(format!("chain factor {:?} for χ={chi}", m.shape())));
        }
    }
    let k = mats.len();
    let sites = mats
        .into_iter()
        .enumerate()
        .map(|(j, m)| match (j == 0, j + 1 == k) {
            (true, true) => m.into_reshape(&[1, chi * chi, 1]),
            (true, false) => m.into_reshape(&[1, chi, chi]),
            (false, true) => m.into_reshape(&[chi, chi, 1]),
            (false, false) => m.into_reshape(&[chi, 1, chi]),
        })
        .collect::<Result<_>>()?;
    MpsChain::new(sites)
}

/// Dense `χ × χ` matrix of an exported kernel chain.
pub fn chain_matrix_of(chain: &MpsChain<Complex64>, chi: usize) -> Result<CTensor> {
    chain.contract()?.into_reshape(&[chi, chi])
}

/// Chain factors of `node` as recorded in a layer trace.
pub fn traced_factors(layer: &LayerTrace, node: usize, chi: usize) -> Result<Vec<ChainFactor>> {
    let order = layer
        .order
        .get(node)
        .ok_or_else(|| Error::Argument(format!("node {node} not in trace of {} nodes", layer.order.len())))?;
    let mode = if layer.unitary.is_some() { KernelMode::Commuting } else { KernelMode::General };
    order
        .iter()
        .map(|&e| {
            Ok(match mode {
                KernelMode::Commuting => {
                    ChainFactor::Diagonal(CTensor::new(vec![chi], layer.chain.data()[e * chi..(e + 1) * chi].to_vec())?)
                }
                KernelMode::General => ChainFactor::Full(CTensor::new(
                    vec![chi, chi],
                    layer.chain.data()[e * chi * chi..(e + 1) * chi * chi].to_vec(),
                )?),
            })
        })
        .collect()
}

/// Renormalized matrix of `node` and its exported chain.
pub fn export_node(layer: &LayerTrace, node: usize, chi: usize) -> Result<(CTensor, MpsChain<Complex64>)> {
    let factors = traced_factors(layer, node, chi)?;
    let r = renormalize(&factors, layer.unitary.as_ref(), chi)?;
    Ok((r, kernel_chain_export(&factors, layer.unitary.as_ref(), chi)?))
}

#[derive(Serialize, Deserialize)]
struct SiteRecord {
    shape: Vec<usize>,
    re: Vec<f64>,
    im: Vec<f64>,
}

/// JSON form of a list of chains, stored under the `"chain"` key of a
/// checkpoint's extra section.
pub fn chains_to_json(chains: &[MpsChain<Complex64>]) -> serde_json::Value {
    let list: Vec<Vec<SiteRecord>> = chains
        .iter()
        .map(|c| {
            c.sites
                .iter()
                .map(|s| SiteRecord {
                    shape: s.shape().to_vec(),
                    re: s.data().iter().map(|z| z.re).collect(),
                    im: s.data().iter().map(|z| z.im).collect(),
                })
                .collect()
        })
        .collect();
    serde_json::json!({ "chain": list })
}

pub fn chains_from_json(v: &serde_json::Value) -> Result<Vec<MpsChain<Complex64>>> {
    let section = v.get("chain").ok_or_else(|| Error::Checkpoint("missing \"chain\" section".into()))?;
    let list: Vec<Vec<SiteRecord>> =
        serde_json::from_value(section.clone()).map_err(|e| Error::Checkpoint(format!("chain section: {e}")))?;
    list.into_iter()
        .map(|sites| {
            let sites = sites
                .into_iter()
                .map(|r| {
                    if r.re.len() != r.im.len() {
                        return Err(Error::Checkpoint("chain site re/im lengths differ".into()));
                    }
                    Tensor::from_re_im(&Tensor::new(r.shape.clone(), r.re)?, &Tensor::new(r.shape, r.im)?)
                        .map_err(|e| Error::Checkpoint(e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            MpsChain::new(sites).map_err(|e| Error::Checkpoint(e.to_string()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_chain(rng: &mut ChaCha8Rng, n: usize, d: usize, chi: usize) -> MpsChain<Complex64> {
        let sites = (0..n)
            .map(|k| {
                let l = if k == 0 { 1 } else { chi };
                let r = if k + 1 == n { 1 } else { chi };
                CTensor::random(&[l, d, r], rng)
            })
            .collect();
        MpsChain::new(sites).unwrap()
    }

    fn rel_diff(a: &CTensor, b: &CTensor) -> f64 {
        a.sub(b).unwrap().norm_fro() / b.norm_fro().max(1e-300)
    }

    #[test]
    fn rejects_inconsistent_bonds() {
        let a = CTensor::zeros(&[1, 2, 3]);
        let b = CTensor::zeros(&[2, 2, 1]);
        assert!(matches!(MpsChain::new(vec![a.clone(), b]), Err(Error::Dimension(_))));
        assert!(MpsChain::new(vec![CTensor::zeros(&[2, 2, 1])]).is_err());
        assert!(MpsChain::<Complex64>::new(vec![]).is_err());
        assert!(MpsChain::new(vec![a, CTensor::zeros(&[3, 2, 1])]).is_ok());
    }

    #[test]
    fn identity_chain_is_fixed_point() {
        let id = CTensor::eye(2);
        let sites = vec![
            id.reshape(&[1, 2, 2]).unwrap(),
            CTensor::from_fn(&[2, 2, 2], |ix| if ix[0] == ix[1] && ix[1] == ix[2] { Complex64::new(1.0, 0.0) } else { Complex64::zero() }),
            id.reshape(&[2, 2, 1]).unwrap(),
        ];
        let c = MpsChain::new(sites).unwrap();
        let before = c.contract().unwrap();
        let after = canonicalize(&c, 1).unwrap();
        assert!(after.contract().unwrap().max_abs_diff(&before).unwrap() <= 1e-14);
        assert!(after.left_isometry_defect(0).unwrap() <= 1e-12);
    }

    #[test]
    fn canonical_form_preserves_contraction() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..100 {
            let n = rng.gen_range(1..=6);
            let d = rng.gen_range(1..=3);
            let chi = rng.gen_range(1..=4);
            let c = random_chain(&mut rng, n, d, chi);
            let center = rng.gen_range(0..n);
            let dense = c.contract().unwrap();
            let can = canonicalize(&c, center).unwrap();
            assert!(rel_diff(&can.contract().unwrap(), &dense) <= 1e-10);
            for k in 0..center {
                assert!(can.left_isometry_defect(k).unwrap() <= 1e-10);
            }
            for k in center + 1..n {
                assert!(can.right_isometry_defect(k).unwrap() <= 1e-10);
            }
        }
    }

    #[test]
    fn canonicalize_real_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let sites = vec![Tensor::<f64>::random(&[1, 2, 3], &mut rng), Tensor::random(&[3, 2, 1], &mut rng)];
        let c = MpsChain::new(sites).unwrap();
        let can = canonicalize(&c, 1).unwrap();
        assert!(can.contract().unwrap().max_abs_diff(&c.contract().unwrap()).unwrap() <= 1e-12);
        assert!(canonicalize(&c, 2).is_err());
    }

    #[test]
    fn wide_truncation_is_noop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = random_chain(&mut rng, 4, 2, 3);
        let (t, bound) = truncate(&c, Truncation::MaxBond(3)).unwrap();
        assert_eq!(bound, 0.0);
        assert_eq!(t, c);
        let (t, bound) = truncate(&c, Truncation::Threshold(0.0)).unwrap();
        assert_eq!((t, bound), (c.clone(), 0.0));
        assert!(matches!(truncate(&c, Truncation::MaxBond(0)), Err(Error::Argument(_))));
        assert!(truncate(&c, Truncation::Threshold(f64::NAN)).is_err());
    }

    #[test]
    fn product_state_truncates_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let vecs: Vec<CTensor> = (0..4).map(|_| CTensor::random(&[1, 3, 1], &mut rng)).collect();
        // embed each rank-1 site in bond dimension 2 with a zero second channel
        let sites = vecs
            .iter()
            .enumerate()
            .map(|(k, v)| {
                let l = if k == 0 { 1 } else { 2 };
                let r = if k == 3 { 1 } else { 2 };
                CTensor::from_fn(&[l, 3, r], |ix| if ix[0] == 0 && ix[2] == 0 { v.data()[ix[1]] } else { Complex64::zero() })
            })
            .collect();
        let c = MpsChain::new(sites).unwrap();
        let (t, bound) = truncate(&c, Truncation::MaxBond(1)).unwrap();
        assert!(bound <= 1e-12);
        assert!(t.bond_dims().iter().all(|&b| b == 1));
        assert!(t.contract().unwrap().max_abs_diff(&c.contract().unwrap()).unwrap() <= 1e-12);
    }

    #[test]
    fn truncation_error_within_bound_and_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let n = rng.gen_range(2..=5);
            let c = random_chain(&mut rng, n, 2, 4);
            let dense = c.contract().unwrap();
            let mut last = f64::INFINITY;
            for m in 1..=4 {
                let (t, bound) = truncate(&c, Truncation::MaxBond(m)).unwrap();
                assert!(t.bond_dims().iter().all(|&b| b <= m));
                let err = t.contract().unwrap().sub(&dense).unwrap().norm_fro();
                assert!(err <= bound * (1.0 + 1e-10) + 1e-12, "χ'={m}: {err} > {bound}");
                assert!(err <= last + 1e-12);
                last = err;
            }
        }
    }

    #[test]
    fn threshold_drops_small_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = random_chain(&mut rng, 3, 2, 3);
        let (t, bound) = truncate(&c, Truncation::Threshold(1e9)).unwrap();
        assert!(t.bond_dims().iter().all(|&b| b == 1));
        assert!(bound > 0.0);
    }

    #[test]
    fn export_reproduces_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let chi = 3;
        for k in 0..5 {
            let factors: Vec<ChainFactor> = (0..k).map(|_| ChainFactor::Full(CTensor::random(&[chi, chi], &mut rng))).collect();
            let chain = kernel_chain_export(&factors, None, chi).unwrap();
            assert_eq!(chain.len(), k.max(1));
            let r = renormalize(&factors, None, chi).unwrap();
            assert!(chain_matrix_of(&chain, chi).unwrap().max_abs_diff(&r).unwrap() <= 1e-12);
        }
        let f = ChainFactor::Full(CTensor::random(&[chi, chi], &mut rng));
        let single = kernel_chain_export(std::slice::from_ref(&f), None, chi).unwrap();
        assert_eq!(single.sites()[0].shape(), &[1, chi * chi, 1]);
    }

    #[test]
    fn json_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let chains = vec![random_chain(&mut rng, 3, 2, 2), random_chain(&mut rng, 1, 4, 1)];
        let v = chains_to_json(&chains);
        assert_eq!(chains_from_json(&v).unwrap(), chains);
        assert!(chains_from_json(&serde_json::json!({})).is_err());
    }
}
