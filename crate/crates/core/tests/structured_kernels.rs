mod common;

use std::sync::Arc;

use common::*;
use gpfl_core::affine::{decompose_sum, AffineModel, OpenLoopBatch, StateFn};
use gpfl_core::gp::{Dataset, Posterior, PriorMean};
use gpfl_core::kernels::{Kernel, SeHyperparams};
use rand::Rng;

fn se(ls: Vec<f64>, var: f64) -> Kernel<f64> {
    Kernel::se(SeHyperparams::new(ls, var).unwrap())
}

fn m_g() -> StateFn<f64> {
    Arc::new(|x: &[f64]| 2.0 + 0.1 * x[0])
}

fn plant_f(x: &[f64]) -> f64 {
    1.0 - x[0].sin() + 0.5 / (1.0 + (-x[1] / 10.0).exp())
}

fn plant_g(x: &[f64]) -> f64 {
    1.0 + 0.5 * (x[1] / 2.0).sin()
}

#[test]
fn sum_decomposition_is_additive() {
    let mut rng = rng(3);
    for seed in 0..10 {
        let data = {
            let inputs: Vec<Vec<f64>> = (0..12).map(|_| random_point(&mut rng, 2, 3.0)).collect();
            let targets = inputs
                .iter()
                .map(|x| x[0].sin() + 0.2 * x[1] * x[1])
                .collect();
            Dataset::unweighted(inputs, targets, 1e-3).unwrap()
        };
        let kernel = Kernel::sum(se(vec![0.7, 2.0], 1.0), se(vec![3.0, 0.9], 0.5));
        let post = Posterior::fit(data, kernel, PriorMean::constant(0.4)).unwrap();
        for _ in 0..20 {
            let x = random_point(&mut rng, 2, 3.0);
            let d = decompose_sum(&post, &x, None).unwrap();
            let (m, _) = post.predict(&x, None).unwrap();
            assert!((d.mean_a + d.mean_b - m).abs() <= 1e-12, "seed {seed}");
            assert!(d.var_a >= 0.0 && d.var_b >= 0.0);
        }
    }
}

#[test]
fn sum_component_matches_dense_oracle() {
    let mut rng = rng(4);
    let inputs: Vec<Vec<f64>> = (0..10).map(|_| random_point(&mut rng, 2, 3.0)).collect();
    let targets: Vec<f64> = inputs.iter().map(|x| x[0] * x[1]).collect();
    let data = Dataset::unweighted(inputs, targets.clone(), 1e-2).unwrap();
    let (la, va, lb, vb) = ([0.7, 2.0], 1.0, [3.0, 0.9], 0.5);
    let kernel = Kernel::sum(se(la.to_vec(), va), se(lb.to_vec(), vb));
    let post = Posterior::fit(data.clone(), kernel, PriorMean::zero()).unwrap();
    let x = [0.3, -0.8];
    let d = decompose_sum(&post, &x, None).unwrap();
    // component a: k_a(x,X) K⁻¹ y, with K the full sum kernel
    let full =
        |a: &[f64], _: f64, b: &[f64], _: f64| se_oracle(&la, va, a, b) + se_oracle(&lb, vb, a, b);
    let n = data.len();
    let k = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        full(&data.inputs[i], 0.0, &data.inputs[j], 0.0) + if i == j { 1e-2 } else { 0.0 }
    });
    let alpha = k.try_inverse().unwrap() * nalgebra::DVector::from_column_slice(&targets);
    let ka = nalgebra::DVector::from_fn(n, |i, _| se_oracle(&la, va, &x, &data.inputs[i]));
    assert!((d.mean_a - ka.dot(&alpha)).abs() <= 1e-10);
}

/// `(x, y, u)` triples.
type Samples = Vec<(Vec<f64>, f64, f64)>;

fn noiseless_compound(n: usize, seed: u64) -> (AffineModel<f64>, Samples) {
    let mut rng = rng(seed);
    let mut model = AffineModel::unknown_g(
        se(vec![1.0, 1.0], 1.0),
        se(vec![1.5, 1.5], 0.5),
        m_g(),
        1e-3,
        0.0,
    )
    .unwrap();
    let mut samples = Vec::new();
    for _ in 0..n {
        let x = random_point(&mut rng, 2, 3.0);
        let u = rng.random_range(-3.0..3.0);
        let y = plant_f(&x) + plant_g(&x) * u;
        model = model.add_measurement(x.clone(), y, u).unwrap();
        samples.push((x, y, u));
    }
    (model, samples)
}

#[test]
fn compound_model_reproduces_noiseless_data() {
    for seed in 0..5 {
        let (model, samples) = noiseless_compound(15, seed);
        let mut checked = 0;
        for (x, y, u) in &samples {
            let est = model.predict_fg(x).unwrap();
            if est.floored {
                continue;
            }
            checked += 1;
            let fit = est.f_hat + est.g_hat * u;
            assert!((fit - y).abs() <= 1e-6, "seed {seed}: {fit} vs {y}");
        }
        assert!(
            checked > samples.len() / 2,
            "seed {seed}: only {checked} unfloored points"
        );
    }
}

#[test]
fn query_variance_matches_joint_posterior() {
    let (model, _) = noiseless_compound(10, 9);
    let mut rng = rng(10);
    for _ in 0..20 {
        let x = random_point(&mut rng, 2, 3.0);
        let u = rng.random_range(-3.0..3.0);
        let q = model.query(&x).unwrap();
        let via_query = model.variance_at(&q, Some(u)).unwrap();
        let (_, joint) = model.posterior().predict(&x, Some(u)).unwrap();
        assert!((via_query - joint).abs() <= 1e-12 * joint.max(1.0));
        let f_only = model.variance_at(&q, None).unwrap();
        assert!(f_only <= model.variance_at(&q, Some(0.0)).unwrap() + 1e-15);
    }
}

#[test]
fn open_loop_fusion_matches_block_oracle() {
    let (lf, vf, lg, vg) = ([1.0, 1.0], 1.0, [1.5, 1.5], 0.5);
    let noise = 1e-4;
    let mut rng = rng(21);
    let mut model =
        AffineModel::unknown_g(se(lf.to_vec(), vf), se(lg.to_vec(), vg), m_g(), 1e-3, noise)
            .unwrap();
    let mut xs = Vec::new();
    let mut us = Vec::new();
    let mut ys = Vec::new();
    for _ in 0..8 {
        let x = random_point(&mut rng, 2, 3.0);
        let u = rng.random_range(0.5..3.0);
        let y = plant_f(&x) + plant_g(&x) * u;
        model = model.add_measurement(x.clone(), y, u).unwrap();
        xs.push(x);
        us.push(u);
        ys.push(y);
    }
    let batch = OpenLoopBatch {
        inputs: (0..6).map(|_| random_point(&mut rng, 2, 3.0)).collect(),
        targets: Vec::new(),
    };
    let batch = OpenLoopBatch {
        targets: batch.inputs.iter().map(|x| plant_f(x)).collect(),
        ..batch
    };
    let fused = model.augment_open_loop(&batch).unwrap();

    // block matrix [[K_oo^f, K_oc^f], [K_co^f, K_cc^f + U K_cc^g U]]
    let no = batch.inputs.len();
    let nc = xs.len();
    let n = no + nc;
    let point = |i: usize| {
        if i < no {
            &batch.inputs[i]
        } else {
            &xs[i - no]
        }
    };
    let ctrl = |i: usize| if i < no { 0.0 } else { us[i - no] };
    let k = nalgebra::DMatrix::from_fn(n, n, |i, j| {
        let (a, b) = (point(i), point(j));
        let mut v = se_oracle(&lf, vf, a, b);
        if i >= no && j >= no {
            v += ctrl(i) * ctrl(j) * se_oracle(&lg, vg, a, b);
        }
        v + if i == j { noise } else { 0.0 }
    });
    let resid = nalgebra::DVector::from_fn(n, |i, _| {
        if i < no {
            batch.targets[i]
        } else {
            ys[i - no] - us[i - no] * m_g()(&xs[i - no])
        }
    });
    let alpha = k.try_inverse().unwrap() * resid;
    for _ in 0..20 {
        let x = random_point(&mut rng, 2, 3.0);
        let kf = nalgebra::DVector::from_fn(n, |i, _| se_oracle(&lf, vf, &x, point(i)));
        let kg = nalgebra::DVector::from_fn(n, |i, _| ctrl(i) * se_oracle(&lg, vg, &x, point(i)));
        let est = fused.predict_fg(&x).unwrap();
        assert!((est.f_hat - kf.dot(&alpha)).abs() <= 1e-10);
        let g = m_g()(&x) + kg.dot(&alpha);
        if !est.floored {
            assert!((est.g_hat - g).abs() <= 1e-10);
        }
    }
}

#[test]
fn known_g_model_stores_residuals() {
    let g: StateFn<f64> = Arc::new(plant_g);
    let model = AffineModel::known_g(se(vec![1.0, 1.0], 1.0), g, 0.0);
    let x = vec![0.4, -1.2];
    let u = 1.7;
    let y = plant_f(&x) + plant_g(&x) * u;
    let model = model.add_measurement(x.clone(), y, u).unwrap();
    let est = model.estimates(&x).unwrap();
    assert!((est.f_hat - plant_f(&x)).abs() <= 1e-9);
    assert_eq!(est.g_hat, plant_g(&x));
    assert!(model.predict_fg(&x).is_err());
}
