#![allow(dead_code)]

use gpfl_core::gp::Dataset;
use gpfl_core::kernels::{Kernel, SeHyperparams};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    rand::SeedableRng::seed_from_u64(seed)
}

pub fn random_point(rng: &mut ChaCha8Rng, dim: usize, half_width: f64) -> Vec<f64> {
    (0..dim)
        .map(|_| rng.random_range(-half_width..half_width))
        .collect()
}

pub fn random_se(rng: &mut ChaCha8Rng, dim: usize) -> Kernel<f64> {
    let ls = (0..dim).map(|_| rng.random_range(0.5..2.0)).collect();
    Kernel::se(SeHyperparams::new(ls, rng.random_range(0.5..3.0)).unwrap())
}

/// Plain SE-ARD value, written out independently of the library.
pub fn se_oracle(ls: &[f64], var: f64, a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a
        .iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum();
    var * (-0.5 * d2).exp()
}

pub fn se_params(k: &Kernel<f64>) -> (&[f64], f64) {
    match k {
        Kernel::SeArd(h) => (&h.lengthscales, h.signal_variance),
        _ => panic!("expected an SE kernel"),
    }
}

/// Dense-inverse posterior of a zero-mean GP: `(mean, variance)` at `x`.
pub fn dense_posterior(
    cov: impl Fn(&[f64], f64, &[f64], f64) -> f64,
    data: &Dataset<f64>,
    residual: &[f64],
    x: &[f64],
    w: f64,
) -> (f64, f64) {
    let n = data.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        cov(
            &data.inputs[i],
            data.controls[i],
            &data.inputs[j],
            data.controls[j],
        ) + if i == j { data.noise_variance } else { 0.0 }
    });
    let inv = k.try_inverse().expect("invertible gram matrix");
    let ks = DVector::from_fn(n, |i, _| cov(x, w, &data.inputs[i], data.controls[i]));
    let r = DVector::from_column_slice(residual);
    let mean = ks.dot(&(&inv * r));
    let var = cov(x, w, x, w) - ks.dot(&(&inv * &ks));
    (mean, var)
}
