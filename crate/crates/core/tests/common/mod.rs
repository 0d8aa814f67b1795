//! Shared oracles for the integration tests: central finite differences and
//! a guarded relative error.
//!
//! Each test target links this module separately and uses its own subset.
#![allow(dead_code)]

use graddrop::rng::Stream;
use graddrop::Tensor;

pub const FD_STEP: f64 = 1e-5;

/// Relative error with an absolute guard at 1, so near-zero gradients are
/// compared absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Central finite differences of `f` w.r.t. every entry of `t`, rebuilding
/// the forward pass per probe.
pub fn finite_diff(f: &mut dyn FnMut() -> f64, t: &Tensor, h: f64) -> Vec<f64> {
    (0..t.len())
        .map(|i| {
            let x = t.get(i);
            t.set(i, x + h);
            let fp = f();
            t.set(i, x - h);
            let fm = f();
            t.set(i, x);
            (fp - fm) / (2.0 * h)
        })
        .collect()
}

/// Uniform random tensor in `[-1, 1)`, keyed so every test is repeatable.
pub fn rand_tensor(shape: &[usize], seed: u64, label: &str) -> Tensor {
    let mut s = Stream::keyed(seed, 0, 0, label);
    let len: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..len).map(|_| s.uniform(-1.0, 1.0)).collect()).unwrap()
}

/// Assert the analytic gradient of `loss` w.r.t. `t` matches central finite
/// differences within `tol` relative error.
pub fn assert_grad_close(
    loss: &mut dyn FnMut() -> Tensor,
    t: &Tensor,
    tol: f64,
    context: &str,
) {
    t.zero_grad();
    loss().backward().unwrap();
    let analytic = t.grad_or_zeros();
    let numeric = finite_diff(&mut || loss().item(), t, FD_STEP);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = rel_err(*a, *n);
        assert!(
            e <= tol,
            "{context}: entry {i} analytic {a} vs numeric {n} (rel err {e:.3e} > {tol:.0e})"
        );
    }
    t.zero_grad();
}
