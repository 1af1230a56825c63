//! Single-node forms of the model's building blocks on plain tensors.
//!
//! The forward pass evaluates the same maps batched on a tape; these
//! versions serve inspection, compression and cross-checking.

use num_complex::Complex64;

use super::config::{KernelMode, ModelConfig, ScalarMode};
use super::forward::Net;
use super::params::Params;
use crate::autodiff::{CVar, Tape};
use crate::error::{Error, Result};
use crate::geometry::{vectorize, Frame, Vec3};
use crate::{CTensor, RTensor};

const CHAIN_FLOOR: f64 = 1e-8;

/// One neighbour's factor in the renormalization chain.
#[derive(Clone, Debug, PartialEq)]
pub enum ChainFactor {
    /// Eigenvalues `t` of `U diag(t) U†`.
    Diagonal(CTensor),
    Full(CTensor),
}

impl ChainFactor {
    /// The factor as a `χ × χ` matrix.
    pub fn matrix(&self, unitary: Option<&CTensor>) -> Result<CTensor> {
        match self {
            ChainFactor::Full(m) => Ok(m.clone()),
            ChainFactor::Diagonal(t) => {
                let u = unitary.ok_or_else(|| Error::Argument("diagonal chain factor needs the shared unitary".into()))?;
                Ok(diag_sandwich(u, t.data()))
            }
        }
    }
}

/// `U diag(p) U†`.
pub fn diag_sandwich(u: &CTensor, p: &[Complex64]) -> CTensor {
    let n = u.shape()[0];
    let ud = u.data();
    CTensor::from_fn(&[n, n], |ix| (0..n).map(|k| ud[ix[0] * n + k] * p[k] * ud[ix[1] * n + k].conj()).sum())
}

/// Lift one scalar onto the unit circle after `tanh` squashing.
pub fn lift(s: f64) -> (f64, f64) {
    let a = std::f64::consts::FRAC_PI_2 * s.tanh();
    (a.cos(), a.sin())
}

/// Map invariant node scalars to `2d` reals through the lift and `embed`
/// (`[2 · inputs, 2d]`).
pub fn feature_map(inputs: &[f64], embed: &RTensor) -> Result<Vec<f64>> {
    if embed.rank() != 2 || 2 * inputs.len() != embed.shape()[0] {
        return Err(Error::Config(format!(
            "feature map expects {} inputs, got {}",
            embed.shape()[0] / 2,
            inputs.len()
        )));
    }
    let lifted: Vec<f64> = inputs.iter().map(|&s| lift(s).0).chain(inputs.iter().map(|&s| lift(s).1)).collect();
    let row = RTensor::new(vec![1, lifted.len()], lifted)?;
    Ok(row.matmul(embed)?.into_data())
}

/// Evaluate the three-layer tanh MLP stored under `prefix`.
pub fn mlp(params: &Params, prefix: &str, x: &[f64]) -> Result<Vec<f64>> {
    let mut h = RTensor::new(vec![1, x.len()], x.to_vec())?;
    for k in 0..3 {
        let w = params.get(&format!("{prefix}.{k}.w")).ok_or_else(|| Error::Argument(format!("no {prefix}.{k}.w")))?;
        let b = params.get(&format!("{prefix}.{k}.b")).ok_or_else(|| Error::Argument(format!("no {prefix}.{k}.b")))?;
        h = h.matmul(w)?.add(&b.reshape(&[1, b.len()])?)?;
        if k < 2 {
            h = h.map(f64::tanh);
        }
    }
    Ok(h.into_data())
}

/// Edge message from `(s_ij, h_i, h_j, e_ij)`.
pub fn edge_message(s: &[f64], hi: &[f64], hj: &[f64], e: &[f64], params: &Params, layer: usize) -> Result<Vec<f64>> {
    let x: Vec<f64> = s.iter().chain(hi).chain(hj).chain(e).copied().collect();
    mlp(params, &format!("layer{layer}.msg"), &x)
}

/// Complex view of a `2d`-real node state.
pub fn embedding(h: &[f64]) -> CTensor {
    let d = h.len() / 2;
    CTensor::new(vec![d], (0..d).map(|a| Complex64::new(h[a], h[d + a])).collect()).expect("non-empty state")
}

/// `c^σ = Σ_ab φ^a G^σ_ab φ̄^b`.
pub fn kernel_coefficients(phi: &CTensor, g: &CTensor, mode: ScalarMode) -> Vec<Complex64> {
    let (sig, d) = (g.shape()[0], g.shape()[1]);
    let p = phi.data();
    let bar = |b: usize| if mode == ScalarMode::Complex { p[b].conj() } else { p[b] };
    (0..sig)
        .map(|s| {
            let mut acc = Complex64::new(0.0, 0.0);
            for a in 0..d {
                for b in 0..d {
                    acc += p[a] * g.data()[(s * d + a) * d + b] * bar(b);
                }
            }
            acc
        })
        .collect()
}

/// Chain factor of neighbour `j` from its embedding and the hypernet output
/// for edge `(i, j)`.
pub fn chain_matrix(phi_j: &CTensor, hyper: &[f64], g: &CTensor, cfg: &ModelConfig) -> Result<ChainFactor> {
    let c = kernel_coefficients(phi_j, g, cfg.scalar_mode);
    let inner = match cfg.kernel_mode {
        KernelMode::Commuting => cfg.chi,
        KernelMode::General => cfg.chi * cfg.chi,
    };
    let half = cfg.sigma * inner;
    if hyper.len() != 2 * half {
        return Err(Error::Dimension(format!("hypernet output has {} entries, expected {}", hyper.len(), 2 * half)));
    }
    let mut t = vec![Complex64::new(0.0, 0.0); inner];
    for (s, cs) in c.iter().enumerate() {
        for (k, tk) in t.iter_mut().enumerate() {
            *tk += cs * Complex64::new(hyper[s * inner + k], hyper[half + s * inner + k]);
        }
    }
    let nrm = t.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt().max(CHAIN_FLOOR);
    t.iter_mut().for_each(|z| *z /= nrm);
    Ok(match cfg.kernel_mode {
        KernelMode::Commuting => ChainFactor::Diagonal(CTensor::new(vec![cfg.chi], t)?),
        KernelMode::General => ChainFactor::Full(CTensor::new(vec![cfg.chi, cfg.chi], t)?),
    })
}

/// Product of the chain factors in the given order; identity when empty.
pub fn renormalize(factors: &[ChainFactor], unitary: Option<&CTensor>, chi: usize) -> Result<CTensor> {
    if factors.iter().all(|f| matches!(f, ChainFactor::Diagonal(_))) {
        let mut p = vec![Complex64::new(1.0, 0.0); chi];
        for f in factors {
            if let ChainFactor::Diagonal(t) = f {
                p.iter_mut().zip(t.data()).for_each(|(a, b)| *a *= b);
            }
        }
        return match unitary {
            Some(u) => Ok(diag_sandwich(u, &p)),
            None if factors.is_empty() => Ok(CTensor::eye(chi)),
            None => Err(Error::Argument("diagonal chain factors need the shared unitary".into())),
        };
    }
    let mut r = CTensor::eye(chi);
    for f in factors {
        r = r.matmul(&f.matrix(unitary)?)?;
    }
    Ok(r)
}

/// `x_a = Σ_b Ĥ_ab φ^b` with `Ĥ_ab = Σ_mn R_mn S^{nm}_ab`; `s` is stored
/// with axes `(m, n, a, b)`.
pub fn spatial_update(phi_i: &CTensor, r: &CTensor, s: &CTensor) -> Result<CTensor> {
    let chi = r.shape()[0];
    let d = phi_i.len();
    if s.shape() != [chi, chi, d, d] {
        return Err(Error::Dimension(format!("node kernel shape {:?} for χ={chi}, d={d}", s.shape())));
    }
    let h = r.reshape(&[1, chi * chi])?.matmul(&s.reshape(&[chi * chi, d * d])?)?.into_reshape(&[d, d])?;
    h.matmul(&phi_i.reshape(&[d, 1])?)?.into_reshape(&[d])
}

/// `LayerNorm(h_new) · γ + β + h_prev W`.
pub fn node_update(h_new: &[f64], h_prev: &[f64], gamma: &[f64], beta: &[f64], w: &RTensor) -> Result<Vec<f64>> {
    let n = h_new.len() as f64;
    let mean = h_new.iter().sum::<f64>() / n;
    let var = h_new.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let is = 1.0 / (var + 1e-5).sqrt();
    let res = RTensor::new(vec![1, h_prev.len()], h_prev.to_vec())?.matmul(w)?;
    Ok((0..h_new.len()).map(|k| (h_new[k] - mean) * is * gamma[k] + beta[k] + res.data()[k]).collect())
}

/// Residual recurrence `v ← v + tanh(v · M(x)/Z + b)` over the history.
/// `phis[l]` is `[χ_t, 2d, χ_t]`.
pub fn temporal_aggregate(v0: &[f64], xs: &[Vec<f64>], phis: &[RTensor], biases: &[RTensor]) -> Result<Vec<f64>> {
    let mut v = v0.to_vec();
    let ct = v.len();
    for ((x, phi), b) in xs.iter().zip(phis).zip(biases) {
        let w = x.len();
        if phi.shape() != [ct, w, ct] {
            return Err(Error::Dimension(format!("temporal kernel {:?} for χ_t={ct}, width {w}", phi.shape())));
        }
        let mut m = vec![0.0; ct * ct];
        for a in 0..ct {
            for s in 0..w {
                for a2 in 0..ct {
                    m[a * ct + a2] += x[s] * phi.data()[(a * w + s) * ct + a2];
                }
            }
        }
        let z = m.iter().map(|q| q * q).sum::<f64>().sqrt().max(CHAIN_FLOOR);
        let next: Vec<f64> = (0..ct)
            .map(|a2| {
                let pre: f64 = (0..ct).map(|a| v[a] * m[a * ct + a2]).sum::<f64>() / z + b.data()[a2];
                v[a2] + pre.tanh()
            })
            .collect();
        v = next;
    }
    Ok(v)
}

/// `x + mean_j vectorize(head(m_ij), F_ij)`; edges without a frame are skipped.
pub fn position_update(x: &Vec3<f64>, messages: &[Vec<f64>], frames: &[Option<Frame<f64>>], head: &RTensor) -> Result<Vec3<f64>> {
    let mut shift = [0.0; 3];
    let mut count = 0;
    for (m, f) in messages.iter().zip(frames) {
        let Some(f) = f else { continue };
        let c = RTensor::new(vec![1, m.len()], m.clone())?.matmul(head)?;
        let v = vectorize(&[c.data()[0], c.data()[1], c.data()[2]], f);
        for k in 0..3 {
            shift[k] += v[k];
        }
        count += 1;
    }
    if count == 0 {
        return Ok(*x);
    }
    Ok([0, 1, 2].map(|k| x[k] + shift[k] / count as f64))
}

/// Batched spatial aggregation of one layer, evaluated exactly as in the
/// forward pass. `phi` is `[N, d]`, `hyper` the hypernet output `[E, ·]`
/// for edges `e` with sender `send[e]`, and `order[i]` the edge ids of node
/// `i` in aggregation order.
pub fn spatial_aggregate(
    cfg: &ModelConfig,
    params: &Params,
    layer: usize,
    phi: &CTensor,
    hyper: &RTensor,
    send: &[usize],
    order: &[Vec<usize>],
) -> Result<CTensor> {
    let n = phi.shape()[0];
    let tape = Tape::new();
    let bound = params.bind(&tape, false);
    let net = Net { t: &tape, p: &bound, cfg };
    let phi_v = CVar { re: tape.constant(phi.re()), im: tape.constant(phi.im()) };
    let hyper_v = tape.constant(hyper.clone());
    let send: Vec<Option<usize>> = send.iter().map(|&j| Some(j)).collect();
    let max_deg = order.iter().map(|o| o.len()).max().unwrap_or(0);
    let slots: Vec<Vec<Option<usize>>> = (0..max_deg).map(|k| order.iter().map(|o| o.get(k).copied()).collect()).collect();
    let (out, _, _) = net.spatial(layer, phi_v, hyper_v, &send, &slots, n);
    let (re, im) = (tape.value(out.re).clone(), tape.value(out.im).clone());
    CTensor::from_re_im(&re, &im)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn crand(shape: &[usize], rng: &mut ChaCha8Rng) -> CTensor {
        CTensor::random(shape, rng)
    }

    #[test]
    fn lift_is_on_unit_circle() {
        for s in [-3.0, -0.2, 0.0, 0.7, 40.0] {
            let (c, si) = lift(s);
            assert!((c * c + si * si - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn feature_map_shape_and_arity() {
        let embed = RTensor::random(&[10, 8], &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(feature_map(&[0.1, 0.2, 0.3, 0.4, 0.5], &embed).unwrap().len(), 8);
        assert!(matches!(feature_map(&[0.1; 4], &embed), Err(Error::Config(_))));
    }

    #[test]
    fn edge_message_zero_in_zero_out() {
        let cfg = ModelConfig { d: 2, chi: 2, sigma: 1, layers: 1, hidden: 6, msg_width: 5, ..Default::default() };
        let mut p = Params::init(&cfg, 3);
        for (name, t) in p.iter_mut() {
            if name.ends_with(".b") {
                *t = RTensor::zeros(t.shape());
            }
        }
        let m = edge_message(&[0.0; 7], &[0.0; 4], &[0.0; 4], &[0.0; 10], &p, 0).unwrap();
        assert_eq!(m, vec![0.0; 5]);
    }

    #[test]
    fn identity_kernel_gives_normalized_ones() {
        let cfg = ModelConfig { d: 3, chi: 4, sigma: 1, scalar_mode: ScalarMode::Complex, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let phi = crand(&[3], &mut rng);
        let g = CTensor::eye(3).reshape(&[1, 3, 3]).unwrap();
        let mut hyper = vec![1.0; 4];
        hyper.extend([0.0; 4]);
        let ChainFactor::Diagonal(t) = chain_matrix(&phi, &hyper, &g, &cfg).unwrap() else { panic!() };
        for z in t.data() {
            assert!((z - Complex64::new(0.5, 0.0)).norm() < 1e-14);
        }
    }

    #[test]
    fn commuting_factors_commute() {
        let cfg = ModelConfig { d: 2, chi: 3, sigma: 2, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let u = crate::tensor::materialize_unitary(&crate::tensor::UnitaryParam::new(RTensor::random(&[2, 3, 3], &mut rng)).unwrap()).unwrap();
        let g = crand(&[2, 2, 2], &mut rng);
        let make = |rng: &mut ChaCha8Rng| {
            let hyper: Vec<f64> = RTensor::random(&[12], rng).into_data();
            chain_matrix(&crand(&[2], rng), &hyper, &g, &cfg).unwrap().matrix(Some(&u)).unwrap()
        };
        let (x, y) = (make(&mut rng), make(&mut rng));
        let comm = x.matmul(&y).unwrap().sub(&y.matmul(&x).unwrap()).unwrap();
        assert!(comm.max_abs() < 1e-10);
    }

    #[test]
    fn renormalize_conventions() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert_eq!(renormalize(&[], None, 3).unwrap(), CTensor::eye(3));
        let m = crand(&[3, 3], &mut rng);
        assert_eq!(renormalize(&[ChainFactor::Full(m.clone())], None, 3).unwrap(), m);
        assert!(renormalize(&[ChainFactor::Diagonal(crand(&[3], &mut rng))], None, 3).is_err());
    }

    #[test]
    fn identity_node_kernel_scales_by_trace() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (chi, d) = (3, 2);
        let s = CTensor::from_fn(&[chi, chi, d, d], |ix| {
            if ix[0] == ix[1] && ix[2] == ix[3] {
                Complex64::new(1.0, 0.0)
            } else {
                Complex64::new(0.0, 0.0)
            }
        });
        let r = crand(&[chi, chi], &mut rng);
        let phi = crand(&[d], &mut rng);
        let x = spatial_update(&phi, &r, &s).unwrap();
        let tr = r.trace().unwrap();
        for a in 0..d {
            assert!((x.data()[a] - tr * phi.data()[a]).norm() < 1e-14);
        }
    }

    #[test]
    fn node_update_cases() {
        let w0 = RTensor::zeros(&[4, 4]);
        let (g, b) = ([1.0; 4], [0.0; 4]);
        let out = node_update(&[1.0, 2.0, 3.0, 4.0], &[9.0; 4], &g, &b, &w0).unwrap();
        assert!(out.iter().sum::<f64>().abs() < 1e-12);
        let beta = [0.5, -0.5, 1.0, 2.0];
        let out = node_update(&[3.0; 4], &[1.0; 4], &g, &beta, &w0).unwrap();
        assert_eq!(out, beta.to_vec());
        let big: Vec<f64> = RTensor::random(&[4], &mut ChaCha8Rng::seed_from_u64(6)).scale(1e3).into_data();
        let w = RTensor::random(&[4, 4], &mut ChaCha8Rng::seed_from_u64(7));
        assert!(node_update(&big, &big, &g, &b, &w).unwrap().iter().all(|x| x.is_finite()));
    }

    #[test]
    fn temporal_zero_kernel_and_scale_invariance() {
        let v0 = vec![0.3, -0.2];
        let x = vec![vec![1.0, 2.0, -1.0, 0.5]];
        let zero = vec![RTensor::zeros(&[2, 4, 2])];
        let b0 = vec![RTensor::zeros(&[2])];
        assert_eq!(temporal_aggregate(&v0, &x, &zero, &b0).unwrap(), v0);
        let phi = vec![RTensor::random(&[2, 4, 2], &mut ChaCha8Rng::seed_from_u64(8))];
        let a = temporal_aggregate(&v0, &x, &phi, &b0).unwrap();
        let xs: Vec<Vec<f64>> = x.iter().map(|r| r.iter().map(|v| v * 7.5).collect()).collect();
        let b = temporal_aggregate(&v0, &xs, &phi, &b0).unwrap();
        for (p, q) in a.iter().zip(&b) {
            assert!((p - q).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_messages_leave_positions() {
        let x = [0.1, 0.2, 0.3];
        let head = RTensor::random(&[4, 3], &mut ChaCha8Rng::seed_from_u64(9));
        let frame = Some(Frame::identity());
        let out = position_update(&x, &[vec![0.0; 4], vec![0.0; 4]], &[frame, None], &head).unwrap();
        assert_eq!(out, x);
    }
}
