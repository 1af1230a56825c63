use super::{matmul_into, numel, Tensor};
use crate::error::{Error, Result};
use crate::scalar::{zero, Scalar};

/// Contract `a` with `b` over the given `(axis of a, axis of b)` pairs.
///
/// The result carries the free axes of `a` (in order) followed by the free
/// axes of `b`. Contracting every axis gives a rank-0 tensor.
pub fn contract<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, axes: &[(usize, usize)]) -> Result<Tensor<S>> {
    let mut used_a = vec![false; a.rank()];
    let mut used_b = vec![false; b.rank()];
    for &(ia, ib) in axes {
        if ia >= a.rank() || ib >= b.rank() {
            return Err(Error::Dimension(format!(
                "axis pair ({ia}, {ib}) out of range for ranks {} and {}",
                a.rank(),
                b.rank()
            )));
        }
        if used_a[ia] || used_b[ib] {
            return Err(Error::Dimension(format!("axis pair ({ia}, {ib}) repeats an axis")));
        }
        used_a[ia] = true;
        used_b[ib] = true;
        if a.shape()[ia] != b.shape()[ib] {
            return Err(Error::Dimension(format!(
                "axis pair ({ia}, {ib}): length {} != {}",
                a.shape()[ia],
                b.shape()[ib]
            )));
        }
    }
    let free_a: Vec<usize> = (0..a.rank()).filter(|&i| !used_a[i]).collect();
    let free_b: Vec<usize> = (0..b.rank()).filter(|&i| !used_b[i]).collect();

    let mut perm_a = free_a.clone();
    perm_a.extend(axes.iter().map(|p| p.0));
    let mut perm_b: Vec<usize> = axes.iter().map(|p| p.1).collect();
    perm_b.extend(free_b.iter().copied());

    let out_shape: Vec<usize> =
        free_a.iter().map(|&i| a.shape()[i]).chain(free_b.iter().map(|&i| b.shape()[i])).collect();
    let m = numel(&free_a.iter().map(|&i| a.shape()[i]).collect::<Vec<_>>());
    let n = numel(&free_b.iter().map(|&i| b.shape()[i]).collect::<Vec<_>>());
    let k = numel(&axes.iter().map(|p| a.shape()[p.0]).collect::<Vec<_>>());

    let ap = a.permute(&perm_a)?;
    let bp = b.permute(&perm_b)?;
    let mut out = vec![zero::<S>(); m * n];
    matmul_into(ap.data(), bp.data(), &mut out, m, k, n);
    Tensor::new(out_shape, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matrix_product_case() {
        // 2x3 identity-padded times 3x2
        let a = Tensor::new(vec![2, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let b = Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let c = contract(&a, &b, &[(1, 0)]).unwrap();
        assert_eq!(c, a.matmul(&b).unwrap());
        assert_eq!(c.data(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn rank3_with_matrix_matches_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a = Tensor::<Complex64>::random(&[2, 2, 2], &mut rng);
        let b = Tensor::<Complex64>::random(&[2, 2], &mut rng);
        let c = contract(&a, &b, &[(2, 0)]).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for l in 0..2 {
                    let mut s = Complex64::new(0.0, 0.0);
                    for k in 0..2 {
                        s += a.get(&[i, j, k]) * b.get(&[k, l]);
                    }
                    assert!((c.get(&[i, j, l]) - s).norm() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn full_contraction_is_rank0() {
        let a = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let c = contract(&a, &a, &[(0, 0), (1, 1)]).unwrap();
        assert_eq!(c.rank(), 0);
        assert_eq!(c.item(), 30.0);
    }

    #[test]
    fn mismatch_names_axis_pair() {
        let a = Tensor::<f64>::zeros(&[2, 3]);
        let b = Tensor::<f64>::zeros(&[4, 2]);
        let err = contract(&a, &b, &[(1, 0)]).unwrap_err();
        assert!(err.to_string().contains("(1, 0)"), "{err}");
    }
}
