use super::tape::{Tape, Var};
use crate::RTensor;

/// Gradient magnitudes below this are compared on an absolute scale.
const GRAD_FLOOR: f64 = 1e-5;

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    pub max_rel_err: f64,
    /// `(parameter index, flat coordinate)` of the worst mismatch.
    pub worst: Option<(usize, usize)>,
    pub checked: usize,
    pub passed: bool,
}

/// Compare tape gradients with central differences.
///
/// `loss` builds a scalar from the parameter leaves. With `max_coords` set,
/// only that many coordinates per parameter are probed, evenly strided.
/// The error per coordinate is `|a − f| / max(|a|, |f|, 1e-5)`.
pub fn finite_diff_check<F>(loss: F, params: &[RTensor], eps: f64, tol: f64, max_coords: Option<usize>) -> FdReport
where
    F: Fn(&Tape, &[Var]) -> Var,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let out = loss(&tape, &vars);
    let grads = match tape.backward(out) {
        Ok(g) => g,
        Err(_) => return FdReport { max_rel_err: f64::INFINITY, worst: None, checked: 0, passed: false },
    };

    let eval = |ps: &[RTensor]| -> f64 {
        let tp = Tape::new();
        let vs: Vec<Var> = ps.iter().map(|p| tp.constant(p.clone())).collect();
        let o = loss(&tp, &vs);
        let v = tp.value(o).item();
        v
    };

    let mut work: Vec<RTensor> = params.to_vec();
    let mut max_rel_err: f64 = 0.0;
    let mut worst = None;
    let mut checked = 0;
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[pi], p.shape());
        let n = p.len();
        let stride = max_coords.map_or(1, |m| n.div_ceil(m.max(1)));
        for k in (0..n).step_by(stride) {
            let orig = p.data()[k];
            work[pi].data_mut()[k] = orig + eps;
            let fp = eval(&work);
            work[pi].data_mut()[k] = orig - eps;
            let fm = eval(&work);
            work[pi].data_mut()[k] = orig;
            let fd = (fp - fm) / (2.0 * eps);
            let a = analytic.data()[k];
            let err = (a - fd).abs() / a.abs().max(fd.abs()).max(GRAD_FLOOR);
            checked += 1;
            if !(err <= max_rel_err) {
                max_rel_err = err;
                worst = Some((pi, k));
            }
        }
    }
    FdReport { max_rel_err, worst, checked, passed: max_rel_err <= tol }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::forward_eval;
    use crate::error::Error;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_gradient_is_twice_input() {
        let x = RTensor::random(&[7], &mut ChaCha8Rng::seed_from_u64(1));
        let tape = Tape::new();
        let v = tape.param(x.clone());
        let l = tape.sum_all(tape.mul(v, v));
        let g = tape.backward(l).unwrap();
        assert_eq!(*g.get(v).unwrap(), x.scale(2.0));
        let rep = finite_diff_check(|t, p| t.sum_all(t.mul(p[0], p[0])), &[x], 1e-5, 1e-7, None);
        assert!(rep.passed, "{rep:?}");
        assert_eq!(rep.checked, 7);
    }

    #[test]
    fn non_scalar_output_is_rejected() {
        let tape = Tape::new();
        let v = tape.param(RTensor::zeros(&[3]));
        assert!(matches!(tape.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn identity_and_contraction_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let w = RTensor::random(&[3, 3], &mut rng);
        let x = RTensor::random(&[3], &mut rng);
        let (tape, out) = forward_eval(|t| Ok(t.constant(x.clone()))).unwrap();
        assert_eq!(*tape.value(out), x);
        let (tape, out) = forward_eval(|t| t.contract(t.constant(w.clone()), t.constant(x.clone()), &[(1, 0)])).unwrap();
        assert_eq!(*tape.value(out), crate::tensor::contract(&w, &x, &[(1, 0)]).unwrap());
    }

    #[test]
    fn composite_matches_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = RTensor::random(&[4, 3], &mut rng);
        let x = RTensor::random(&[3, 1], &mut rng);
        let b = RTensor::random(&[4, 1], &mut rng);
        let (tape, out) = forward_eval(|t| {
            let wx = t.matmul(t.constant(w.clone()), t.constant(x.clone()));
            Ok(t.tanh(t.add(wx, t.constant(b.clone()))))
        })
        .unwrap();
        let direct = w.matmul(&x).unwrap().add(&b).unwrap().map(f64::tanh);
        assert_eq!(*tape.value(out), direct);
    }

    #[test]
    fn sum_of_contraction_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let w = RTensor::random(&[2, 3], &mut rng);
        let x = RTensor::random(&[3], &mut rng);
        let tape = Tape::new();
        let wv = tape.param(w);
        let l = tape.sum_all(tape.contract(wv, tape.constant(x.clone()), &[(1, 0)]).unwrap());
        let g = tape.backward(l).unwrap();
        let expected = RTensor::from_fn(&[2, 3], |ix| x.data()[ix[1]]);
        assert_eq!(*g.get(wv).unwrap(), expected);
    }

    #[test]
    fn backward_is_bitwise_repeatable() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = RTensor::random(&[5, 4], &mut rng);
        let tape = Tape::new();
        let v = tape.param(a);
        let h = tape.layer_norm(tape.tanh(tape.matmul(v, tape.permute(v, &[1, 0]))), 1e-5);
        let l = tape.sum_all(tape.mul(h, h));
        let g1 = tape.backward(l).unwrap();
        let g2 = tape.backward(l).unwrap();
        let (a, b) = (g1.get(v).unwrap(), g2.get(v).unwrap());
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn floored_norm_has_finite_gradient() {
        let tape = Tape::new();
        let v = tape.param(RTensor::new(vec![1, 3], vec![3e-9, 0.0, 0.0]).unwrap());
        let n = tape.norm_last(v, 1e-8);
        let l = tape.sum_all(tape.div(tape.sum_all(v), n));
        let g = tape.backward(l).unwrap();
        assert!(g.get(v).unwrap().is_finite());
        let v2 = tape.param(RTensor::new(vec![1, 3], vec![2e-8, 1e-8, 0.0]).unwrap());
        let l2 = tape.sum_all(tape.div(tape.sum_all(v2), tape.norm_last(v2, 1e-8)));
        assert!(tape.backward(l2).unwrap().get(v2).unwrap().is_finite());
    }
}
