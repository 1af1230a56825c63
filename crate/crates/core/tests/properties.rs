use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spatea_core::compress::{canonicalize, truncate, MpsChain, Truncation};
use spatea_core::geometry::{apply, edge_frame, random_rotation, scalarize};
use spatea_core::model::ops::{renormalize, ChainFactor};
use spatea_core::nbody::{integrate, split_indices, Field, ParticleSystem};
use spatea_core::tensor::{eigh, materialize_unitary, svd, UnitaryParam};
use spatea_core::{CTensor, RTensor, Tensor};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn chain(seed: u64, sites: usize, phys: usize, bond: usize) -> MpsChain<num_complex::Complex64> {
    let mut r = rng(seed);
    let tensors = (0..sites)
        .map(|k| {
            let l = if k == 0 { 1 } else { bond };
            let rr = if k + 1 == sites { 1 } else { bond };
            CTensor::random(&[l, phys, rr], &mut r)
        })
        .collect();
    MpsChain::new(tensors).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn svd_reconstructs_and_orders(seed in any::<u64>(), m in 1usize..7, n in 1usize..7) {
        let a = CTensor::random(&[m, n], &mut rng(seed));
        let f = svd(&a).unwrap();
        prop_assert!(f.recompose(None).max_abs_diff(&a).unwrap() < 1e-11);
        prop_assert!(f.s.windows(2).all(|w| w[0] >= w[1]));
        let utu = f.u.adjoint().unwrap().matmul(&f.u).unwrap();
        prop_assert!(utu.max_abs_diff(&CTensor::eye(f.rank())).unwrap() < 1e-11);
    }

    #[test]
    fn eigh_diagonalizes_hermitian(seed in any::<u64>(), n in 1usize..7) {
        let b = CTensor::random(&[n, n], &mut rng(seed));
        let h = b.add(&b.adjoint().unwrap()).unwrap();
        let (vals, vecs) = eigh(&h).unwrap();
        prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
        let d = vecs.adjoint().unwrap().matmul(&h).unwrap().matmul(&vecs).unwrap();
        for i in 0..n {
            for j in 0..n {
                let target = if i == j { vals[i] } else { 0.0 };
                prop_assert!((d.get(&[i, j]) - num_complex::Complex64::new(target, 0.0)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn materialized_unitaries_are_unitary(seed in any::<u64>(), n in 1usize..6, scale in 0.01f64..5.0) {
        let raw = RTensor::random(&[2, n, n], &mut rng(seed)).scale(scale);
        let u = materialize_unitary(&UnitaryParam::new(raw).unwrap()).unwrap();
        prop_assert!(u.adjoint().unwrap().matmul(&u).unwrap().max_abs_diff(&CTensor::eye(n)).unwrap() < 1e-10);
    }

    #[test]
    fn truncation_error_within_bound(seed in any::<u64>(), sites in 2usize..6, phys in 1usize..4, bond in 1usize..5, keep in 1usize..5) {
        let c = chain(seed, sites, phys, bond);
        let dense = c.contract().unwrap();
        let (cut, bound) = truncate(&c, Truncation::MaxBond(keep)).unwrap();
        let err = cut.contract().unwrap().sub(&dense).unwrap().norm_fro();
        prop_assert!(err <= bound * (1.0 + 1e-9) + 1e-12, "err {err} bound {bound}");
        prop_assert!(cut.bond_dims().iter().all(|&b| b <= keep.max(1)));
    }

    #[test]
    fn canonical_form_preserves_state(seed in any::<u64>(), sites in 2usize..6, center_frac in 0.0f64..1.0) {
        let c = chain(seed, sites, 2, 3);
        let center = ((sites as f64 - 1.0) * center_frac).round() as usize;
        let can = canonicalize(&c, center).unwrap();
        prop_assert!(can.contract().unwrap().max_abs_diff(&c.contract().unwrap()).unwrap() < 1e-11);
        for k in 0..center {
            prop_assert!(can.left_isometry_defect(k).unwrap() < 1e-11);
        }
        for k in center + 1..sites {
            prop_assert!(can.right_isometry_defect(k).unwrap() < 1e-11);
        }
    }

    #[test]
    fn commuting_chain_ignores_neighbour_order(seed in any::<u64>(), chi in 1usize..5, k in 0usize..7, shuffle in any::<u64>()) {
        let mut r = rng(seed);
        let u = materialize_unitary(&UnitaryParam::new(RTensor::random(&[2, chi, chi], &mut r)).unwrap()).unwrap();
        let factors: Vec<ChainFactor> = (0..k).map(|_| ChainFactor::Diagonal(CTensor::random(&[chi], &mut r))).collect();
        let mut shuffled = factors.clone();
        use rand::seq::SliceRandom;
        shuffled.shuffle(&mut rng(shuffle));
        let a = renormalize(&factors, Some(&u), chi).unwrap();
        let b = renormalize(&shuffled, Some(&u), chi).unwrap();
        prop_assert!(a.max_abs_diff(&b).unwrap() <= 1e-12);
    }

    #[test]
    fn scalarization_is_rotation_invariant(seed in any::<u64>()) {
        let mut r = rng(seed);
        let p = |r: &mut ChaCha8Rng| RTensor::random(&[3], r).into_data();
        let (xi, xj, v) = (p(&mut r), p(&mut r), p(&mut r));
        let (xi, xj, v) = ([xi[0], xi[1], xi[2]], [xj[0], xj[1], xj[2]], [v[0], v[1], v[2]]);
        let rot = random_rotation(&mut r);
        let f = edge_frame(&xi, &xj).unwrap();
        let g = edge_frame(&apply(&rot, &xi), &apply(&rot, &xj)).unwrap();
        prop_assert!(f.defect() < 1e-12);
        let (a, b) = (scalarize(&v, &f), scalarize(&apply(&rot, &v), &g));
        for k in 0..3 {
            prop_assert!((a[k] - b[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn split_partitions_indices(n in 0usize..400, seed in any::<u64>()) {
        let s = split_indices(n, seed);
        let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(s.train.len(), n * 5 / 7);
        prop_assert_eq!(s.val.len(), n / 7);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn electrostatic_motion_conserves_momentum(seed in any::<u64>(), n in 2usize..6) {
        let sys = ParticleSystem::random(n, &mut rng(seed)).unwrap();
        let p0 = sys.momentum();
        let end = integrate(&sys, Field::Es, 1e-3, 200).unwrap();
        let p1 = end.momentum();
        for k in 0..3 {
            prop_assert!((p0[k] - p1[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn rotation_commutes_with_simulation(seed in any::<u64>()) {
        let mut r = rng(seed);
        let sys = ParticleSystem::random(4, &mut r).unwrap();
        let rot = random_rotation(&mut r);
        let turned = ParticleSystem::new(
            sys.positions.iter().map(|x| apply(&rot, x)).collect(),
            sys.velocities.iter().map(|v| apply(&rot, v)).collect(),
            sys.charges.clone(),
        ).unwrap();
        // External fields pick a direction, so only the pairwise force is checked.
        let a = integrate(&sys, Field::Es, 1e-3, 100).unwrap();
        let b = integrate(&turned, Field::Es, 1e-3, 100).unwrap();
        for (x, y) in a.positions.iter().zip(&b.positions) {
            let rx = apply(&rot, x);
            for k in 0..3 {
                prop_assert!((rx[k] - y[k]).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn real_svd_matches_generic_path() {
    let a: Tensor<f64> = Tensor::random(&[5, 3], &mut rng(9));
    let f = svd(&a).unwrap();
    assert!(f.recompose(None).max_abs_diff(&a).unwrap() < 1e-12);
}
