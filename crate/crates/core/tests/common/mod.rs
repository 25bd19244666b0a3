//! Shared test oracles: central finite differences for gradients and small
//! numeric helpers. These recompute everything from first principles and
//! never call into the backward pass they are checking.

#![allow(dead_code)]

use pjfit_core::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-6;

/// Relative error with an absolute floor: near-zero components are compared
/// on an absolute scale so finite-difference roundoff does not dominate.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Check the analytic gradient of `build(leaves)` (a scalar) against central
/// finite differences on every element of every leaf.
///
/// `build` must construct the loss afresh from the leaves' current values on
/// each call. Panics with a description of the first offending element.
pub fn grad_check(leaves: &[Tensor], build: &dyn Fn(&[Tensor]) -> Tensor, label: &str) {
    let loss = build(leaves);
    assert_eq!(loss.numel(), 1, "{label}: loss must be scalar");
    loss.backward().unwrap_or_else(|e| panic!("{label}: backward failed: {e}"));
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|l| l.grad().unwrap_or_else(|| panic!("{label}: leaf missing grad")))
        .collect();
    for l in leaves {
        l.zero_grad();
    }

    for (li, leaf) in leaves.iter().enumerate() {
        let base = leaf.to_vec();
        for i in 0..base.len() {
            let mut plus = base.clone();
            plus[i] += FD_STEP;
            leaf.set_values(plus).unwrap();
            let lp = build(leaves).item();

            let mut minus = base.clone();
            minus[i] -= FD_STEP;
            leaf.set_values(minus).unwrap();
            let lm = build(leaves).item();

            leaf.set_values(base.clone()).unwrap();

            let fd = (lp - lm) / (2.0 * FD_STEP);
            let an = analytic[li][i];
            let err = rel_err(an, fd);
            assert!(
                err <= FD_TOL,
                "{label}: leaf {li} element {i}: analytic {an:.12e} vs fd {fd:.12e} (rel err {err:.3e})"
            );
        }
    }
}

/// Uniform values in [-1, 1] from a splitmix-style generator; enough for
/// test inputs and fully deterministic.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        TestRng(seed.wrapping_add(0x9e3779b97f4a7c15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    pub fn unit(&mut self) -> f64 {
        // [-1, 1]
        (self.next_u64() >> 11) as f64 / (1u64 << 52) as f64 * 2.0 - 1.0
    }

    pub fn vec(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.unit()).collect()
    }

    pub fn index(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }
}

pub fn leaf(rng: &mut TestRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::leaf(rng.vec(n), shape.to_vec()).unwrap()
}

pub fn constant(rng: &mut TestRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::constant(rng.vec(n), shape.to_vec()).unwrap()
}
