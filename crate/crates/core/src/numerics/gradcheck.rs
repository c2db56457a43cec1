//! Central-difference gradient oracle.
//!
//! Deliberately shares nothing with the tape: it only calls the function
//! under test on perturbed inputs.

use super::tensor::Tensor;

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every element `i`.
pub fn finite_diff_grad(mut f: impl FnMut(&Tensor) -> f64, x: &Tensor, h: f64) -> Tensor {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.shape());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(&probe);
        probe.data_mut()[i] = orig - h;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * h);
    }
    grad
}

/// Magnitudes below this are compared absolutely rather than relatively.
pub const REL_ERR_FLOOR: f64 = 1e-6;

/// `|a − b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

/// Worst element-wise [`relative_error`] and the index where it occurs.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> (f64, usize) {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .enumerate()
        .fold(
            (0.0, 0),
            |(best, bi), (i, e)| if e > best { (e, i) } else { (best, bi) },
        )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_has_unit_gradient() {
        let x = Tensor::from_fn(&[2, 3], |i| i as f64 * 0.7 - 1.0);
        let g = finite_diff_grad(|t| t.sum(), &x, 1e-5);
        for &v in g.data() {
            assert!((v - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn square_at_three() {
        let x = Tensor::scalar(3.0);
        let g = finite_diff_grad(|t| t.data()[0].powi(2), &x, 1e-5);
        assert!((g.data()[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!(relative_error(1e-12, 0.0) < 1e-5);
    }
}
