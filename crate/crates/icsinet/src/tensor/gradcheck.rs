//! Finite-difference gradient verification. Runs in f64 in practice; the
//! implementation under check is exercised through the same generic code
//! path as training.

use crate::scalar::{sc, Scalar};

use super::{Graph, Tensor};

/// Central-difference gradient of a scalar-valued function of a flat vector.
pub fn finite_diff_grad<T: Scalar>(f: &dyn Fn(&[T]) -> T, x: &[T], h: T) -> Vec<T> {
    let mut buf = x.to_vec();
    let two_h = sc::<T>(2.0) * h;
    (0..x.len())
        .map(|i| {
            let orig = buf[i];
            buf[i] = orig + h;
            let fp = f(&buf);
            buf[i] = orig - h;
            let fm = f(&buf);
            buf[i] = orig;
            (fp - fm) / two_h
        })
        .collect()
}

/// Max over entries of |a − n| / max(|a|, |n|, 1e-8).
pub fn max_rel_err<T: Scalar>(analytic: &[T], numeric: &[T]) -> T {
    assert_eq!(analytic.len(), numeric.len());
    let floor = sc::<T>(1e-8);
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(T::zero(), |m, e| m.max(e))
}

/// Verify the analytic gradient of `f` (a scalar-valued tensor function) at
/// `x` against central finite differences; returns the max relative error.
///
/// Panics if `f` does not produce a scalar.
pub fn grad_check<T, F>(f: F, x_data: &[T], shape: &[usize], h: T) -> T
where
    T: Scalar,
    F: Fn(&Tensor<T>) -> Tensor<T>,
{
    // Analytic pass.
    let graph = Graph::new();
    let x = graph.tensor(shape, x_data.to_vec(), true);
    let y = f(&x);
    assert_eq!(y.numel(), 1, "grad_check: function output must be scalar");
    y.backward().expect("grad_check backward");
    let analytic = x.grad().expect("grad_check: no gradient reached input");

    let eval = |data: &[T]| -> T {
        let g = Graph::new();
        let xt = g.tensor(shape, data.to_vec(), false);
        f(&xt).item()
    };
    let numeric = finite_diff_grad(&eval, x_data, h);
    max_rel_err(&analytic, &numeric)
}
