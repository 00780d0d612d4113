mod common;

use cfrobust_core::counterfactual::{closest_cf, closest_cf_linear, CfConfig};
use cfrobust_core::models::{LinearBinaryModel, Model};
use cfrobust_core::perturbation::{PerturbationKind, PerturbationSpec};
use cfrobust_core::rng::stream_rng;
use cfrobust_core::robustness::{
    bound_general, bound_linear, estimate_instability, fairness_check,
    instability_gaussian_linear, instability_uniform_linear, summarize, tail_bound_gaussian,
};
use cfrobust_core::{distance, LabeledSample, Metric, Regularization, Vector};
use common::*;
use proptest::prelude::*;
use rand::Rng;

/// Mean and standard error of the squared distance between the closest
/// counterfactuals of `x` and of `x + noise`, both aimed at the class `x`
/// does not have.
fn linear_mc(
    m: &LinearBinaryModel,
    x: &Vector,
    draws: usize,
    seed: u64,
    noise: &dyn Fn(&mut rand_chacha::ChaCha8Rng) -> Vector,
) -> (f64, f64) {
    let cf = closest_cf_linear(x, m).unwrap().point;
    let vals: Vec<f64> = (0..draws)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let xp = x + noise(&mut rng);
            let cfp = &xp - &m.weights * m.decision(&xp);
            (&cf - cfp).norm_squared()
        })
        .collect();
    let s = summarize(&vals).unwrap();
    (s.mean, s.std_err)
}

#[test]
fn gaussian_noise_matches_trace_formula() {
    for d in [2usize, 5, 10, 50] {
        let mut rng = stream_rng(d as u64, 0);
        let m = LinearBinaryModel::new(unit(&mut rng, d), 0.0).unwrap();
        let x = normal(&mut rng, d, 1.0);
        let var = Vector::from_fn(d, |_, _| rng.random_range(0.1..4.0));
        let sd = var.map(f64::sqrt);
        let expected = instability_gaussian_linear(&var, &m.weights).unwrap();
        let (mean, se) = linear_mc(&m, &x, 10_000, 100 + d as u64, &|r| {
            normal(r, d, 1.0).component_mul(&sd)
        });
        assert!((mean - expected).abs() <= 3.0 * se, "d={d}: {mean} vs {expected} (se {se})");
    }
}

#[test]
fn uniform_noise_matches_closed_form() {
    for d in [2usize, 10] {
        for eps in [0.1, 0.5, 1.0] {
            let mut rng = stream_rng(d as u64, 1);
            let m = LinearBinaryModel::new(unit(&mut rng, d), 0.3).unwrap();
            let x = normal(&mut rng, d, 1.0);
            let expected = instability_uniform_linear(eps, d);
            let (mean, se) = linear_mc(&m, &x, 10_000, 200 + d as u64, &|r| {
                uniform_box(r, d, eps)
            });
            assert!((mean - expected).abs() <= 3.0 * se, "d={d} eps={eps}: {mean} vs {expected}");
        }
    }
}

#[test]
fn monte_carlo_driver_agrees_with_closed_form() {
    let d = 5;
    let mut rng = stream_rng(7, 2);
    let lin = LinearBinaryModel::new(unit(&mut rng, d), 0.0).unwrap();
    let x = normal(&mut rng, d, 1.0);
    let model = Model::LinearBinary(lin.clone());
    let label = lin.predict(&x);
    let spec = PerturbationSpec {
        kind: PerturbationKind::IsotropicGaussian { variance: 1.0 },
        seed: 5,
    };
    let cfg = CfConfig::default();
    let report = estimate_instability(
        &model,
        |p, t| closest_cf(p, &model, t, &Regularization::SquaredL2, &cfg),
        &LabeledSample::new(x, label).unwrap(),
        1 - label,
        &spec,
        4_000,
        &Metric::SquaredL2,
    )
    .unwrap();
    let s = report.summary.unwrap();
    assert_eq!(report.skipped, 0);
    assert!((s.mean - (d - 1) as f64).abs() <= 3.0 * s.std_err, "{s:?}");
    let mut again = report.clone();
    again.recompute();
    assert_eq!(again, report);
    assert!(report.records.iter().all(|r| r.distance.unwrap() >= 0.0));
}

#[test]
fn general_and_linear_bounds_hold() {
    let cfg = CfConfig::default();
    let mut rng = stream_rng(41, 0);
    let mut checked = 0;
    for trial in 0..10_000 {
        let d = rng.random_range(2..=4);
        let eps = rng.random_range(0.01..1.0);
        // perturbation on the l2 sphere of radius ≤ ε
        let delta = unit(&mut rng, d) * (eps * rng.random::<f64>());
        let x = uniform_box(&mut rng, d, 3.0);
        let model = match trial % 3 {
            0 => Model::LinearBinary(
                LinearBinaryModel::new(normal(&mut rng, d, 1.0), rng.random_range(-1.0..1.0))
                    .unwrap(),
            ),
            1 => Model::Softmax(random_softmax(&mut rng, 3, d)),
            _ => Model::Glvq(random_glvq(&mut rng, 2, 2, d)),
        };
        let y = model.predict(&x).unwrap();
        let target = (y + 1) % model.n_classes();
        let a = closest_cf(&x, &model, target, &Regularization::SquaredL2, &cfg).unwrap();
        let b = closest_cf(&(&x + &delta), &model, target, &Regularization::SquaredL2, &cfg).unwrap();
        if !(a.feasible && b.feasible) {
            continue;
        }
        checked += 1;
        let gap = distance(&a.point, &b.point, &Metric::Lp { p: 2.0 }).unwrap();
        let bound = bound_general(eps, &x, &a.point, 2.0).unwrap();
        assert!(gap <= bound + 1e-7, "trial {trial}: {gap} > {bound}");
        if let Model::LinearBinary(m) = &model {
            assert!(gap <= bound_linear(eps, m, &x).unwrap() + 1e-7);
        }
    }
    assert!(checked > 9_000);
}

#[test]
fn gaussian_tail_bound_holds_empirically() {
    for d in [2usize, 5, 10] {
        let mut rng = stream_rng(d as u64, 3);
        let m = LinearBinaryModel::new(unit(&mut rng, d), 0.0).unwrap();
        let x = normal(&mut rng, d, 1.0);
        let cf = closest_cf_linear(&x, &m).unwrap().point;
        let n = 20_000;
        let dists: Vec<f64> = (0..n)
            .map(|i| {
                let mut r = stream_rng(300 + d as u64, i);
                let xp = &x + normal(&mut r, d, 1.0);
                (&cf - (&xp - &m.weights * m.decision(&xp))).norm_squared()
            })
            .collect();
        for k in [1.0, 2.0, 5.0] {
            let delta = k * d as f64;
            let tail = dists.iter().filter(|v| **v >= delta).count() as f64 / n as f64;
            assert!(tail <= tail_bound_gaussian(delta, d), "d={d} delta={delta}: {tail}");
        }
    }
}

#[test]
fn identity_covariance_instability_grows_with_dimension() {
    let mut prev = f64::NEG_INFINITY;
    let mut rng = stream_rng(4, 4);
    for d in 1..=64 {
        let w = unit(&mut rng, d);
        let v = instability_gaussian_linear(&Vector::from_element(d, 1.0), &w).unwrap();
        assert!((v - (d - 1) as f64).abs() < 1e-9);
        assert!(v > prev);
        prev = v;
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 300, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn fairness_is_symmetric(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let d = rng.random_range(1..=4);
        let model = Model::Softmax(random_softmax(&mut rng, 3, d));
        let a = normal(&mut rng, d, 1.0);
        let b = &a + normal(&mut rng, d, 0.5);
        let eps1 = rng.random_range(0.1..2.0);
        let eps2 = rng.random_range(0.0..2.0);
        let delta = |i: usize, j: usize| (i as f64 - j as f64).abs();
        for metric in [Metric::L1, Metric::SquaredL2] {
            prop_assert_eq!(
                fairness_check(&a, &b, &model, eps1, eps2, &metric, delta).unwrap(),
                fairness_check(&b, &a, &model, eps1, eps2, &metric, delta).unwrap()
            );
        }
    }
}
