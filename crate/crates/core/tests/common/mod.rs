#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seg_core::{Component, FiniteSumOperator};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> DVector<f64> {
    DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0) * 3.0)
}

/// `M = s I + skew + small symmetric noise`, strongly monotone when `s` dominates.
pub fn monotone_matrix(rng: &mut ChaCha8Rng, d: usize, s: f64) -> DMatrix<f64> {
    let g = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    let skew = &g - g.transpose();
    let h = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.1..0.1));
    DMatrix::identity(d, d) * s + skew * 0.5 + (&h + h.transpose()) * 0.5
}

/// Random finite sum of monotone affine components with a non-trivial root.
pub fn random_operator(seed: u64, n: usize, d: usize) -> FiniteSumOperator {
    let mut r = rng(seed);
    let comps = (0..n)
        .map(|_| {
            let s = r.random_range(0.3..1.5);
            let m = monotone_matrix(&mut r, d, s);
            let b = gaussian_vec(&mut r, d);
            Component::affine(m, b).unwrap()
        })
        .collect();
    FiniteSumOperator::new(comps).unwrap()
}

/// Components `F_i(x) = M_i (x - x*)` sharing the root `x*`.
pub fn interpolation_operator(seed: u64, n: usize, d: usize) -> (FiniteSumOperator, DVector<f64>) {
    let mut r = rng(seed);
    let x_star = gaussian_vec(&mut r, d);
    let comps = (0..n)
        .map(|_| {
            let s = r.random_range(0.3..1.5);
            let m = monotone_matrix(&mut r, d, s);
            let b = -(&m * &x_star);
            Component::affine(m, b).unwrap()
        })
        .collect();
    (FiniteSumOperator::new(comps).unwrap(), x_star)
}
