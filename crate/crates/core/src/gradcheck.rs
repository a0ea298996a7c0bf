//! Central finite-difference gradient verification. Checks run in f64; the
//! step and tolerance below are the pinned values used across the test suite.

use crate::tensor::Tensor;

/// Perturbation for central differences.
pub const FD_EPS: f64 = 1e-5;
/// Max admissible relative error between analytic and numeric gradients.
pub const FD_TOL: f64 = 1e-4;
/// Floor in the relative-error denominator; below this magnitude the
/// comparison degrades gracefully into an absolute one.
pub const FD_FLOOR: f64 = 1e-4;

/// Central-difference gradient of a scalar-valued function at `x`.
pub fn finite_diff(f: &mut dyn FnMut(&Tensor<f64>) -> f64, x: &Tensor<f64>, eps: f64) -> Tensor<f64> {
    let mut grad = Tensor::zeros(x.shape());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + eps;
        let hi = f(&xp);
        xp.data_mut()[i] = orig - eps;
        let lo = f(&xp);
        xp.data_mut()[i] = orig;
        grad.data_mut()[i] = (hi - lo) / (2.0 * eps);
    }
    grad
}

#[inline]
pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

#[derive(Debug, Clone, Copy)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Element-wise comparison of an analytic gradient against `finite_diff`.
pub fn compare_grads(analytic: &Tensor<f64>, numeric: &Tensor<f64>) -> GradReport {
    assert_eq!(analytic.shape(), numeric.shape());
    let mut worst = 0.0;
    let mut at = 0;
    for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
        let e = rel_err(a, n);
        if e > worst {
            worst = e;
            at = i;
        }
    }
    GradReport {
        max_rel_err: worst,
        worst_index: at,
        checked: analytic.len(),
    }
}

/// One-call convenience: numeric gradient of `f` at `x` vs `analytic`.
pub fn check(
    f: &mut dyn FnMut(&Tensor<f64>) -> f64,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
) -> GradReport {
    let numeric = finite_diff(f, x, FD_EPS);
    compare_grads(analytic, &numeric)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient_checks_out() {
        // f(x) = sum(x^2), grad = 2x
        let x = Tensor::from_vec(&[3], vec![1.0, -2.0, 0.5]);
        let analytic = x.map(|v| 2.0 * v);
        let rep = check(
            &mut |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum(),
            &x,
            &analytic,
        );
        assert!(rep.max_rel_err < FD_TOL, "{rep:?}");
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let x = Tensor::from_vec(&[2], vec![1.0, 2.0]);
        let wrong = x.map(|v| 3.0 * v);
        let rep = check(
            &mut |t: &Tensor<f64>| t.data().iter().map(|v| v * v).sum(),
            &x,
            &wrong,
        );
        assert!(rep.max_rel_err > 0.1);
    }
}
