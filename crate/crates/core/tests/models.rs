mod common;

use cfrobust_core::models::{DecisionRegion, Model, PcaPipelineModel};
use cfrobust_core::rng::stream_rng;
use cfrobust_core::{AffineMap, LinearIneq, Matrix, Vector};
use common::*;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

fn in_any(regions: &[DecisionRegion], x: &Vector, tol: f64) -> bool {
    regions.iter().any(|r| r.constraints.contains(x, tol))
}

fn random_map(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> AffineMap {
    AffineMap::new(
        Matrix::from_fn(d_out, d_in, |_, _| rng.random_range(-1.0..1.0)),
        normal(rng, d_out, 1.0),
    )
    .unwrap()
}

fn families(rng: &mut ChaCha8Rng, d: usize) -> Vec<(&'static str, Model)> {
    let w = unit(rng, d);
    vec![
        (
            "linear",
            Model::LinearBinary(
                cfrobust_core::models::LinearBinaryModel::new(w, rng.random_range(-1.0..1.0))
                    .unwrap(),
            ),
        ),
        ("softmax", Model::Softmax(random_softmax(rng, 3, d))),
        ("glvq", Model::Glvq(random_glvq(rng, 3, 2, d))),
        ("tree", Model::Tree(random_tree(rng, 3, d, 4))),
        (
            "pipeline",
            Model::Pipeline(PcaPipelineModel {
                map: random_map(rng, d, 2),
                inner: Box::new(Model::Glvq(random_glvq(rng, 2, 2, 2))),
            }),
        ),
    ]
}

#[test]
fn regions_match_predictions() {
    let mut rng = stream_rng(11, 0);
    for d in [2, 3, 5] {
        for (name, model) in families(&mut rng, d) {
            let regions: Vec<_> = (0..model.n_classes())
                .map(|t| model.decision_regions(t).unwrap())
                .collect();
            for _ in 0..10_000 {
                let x = uniform_box(&mut rng, d, 4.0);
                let pred = model.predict(&x).unwrap();
                for (t, r) in regions.iter().enumerate() {
                    assert_eq!(
                        pred == t,
                        in_any(r, &x, 1e-9),
                        "{name} d={d} target {t} at {x:?}"
                    );
                }
            }
        }
    }
}

#[test]
fn prototype_and_tree_regions_partition_the_space() {
    let mut rng = stream_rng(12, 0);
    for _ in 0..20 {
        let d = rng.random_range(2..=4);
        let models = [
            Model::Glvq(random_glvq(&mut rng, 3, 3, d)),
            Model::Tree(random_tree(&mut rng, 3, d, 5)),
        ];
        for (i, model) in models.iter().enumerate() {
            let regions: Vec<_> = (0..3).map(|t| model.decision_regions(t).unwrap()).collect();
            for _ in 0..2_000 {
                let x = uniform_box(&mut rng, d, 4.0);
                let owners = regions.iter().filter(|r| in_any(r, &x, 0.0)).count();
                assert_eq!(owners, 1);
                let pieces: usize = regions
                    .iter()
                    .flatten()
                    .filter(|r| r.constraints.contains(&x, 0.0))
                    .count();
                // Same-class prototype pieces may overlap; leaves never do.
                if i == 1 {
                    assert_eq!(pieces, 1);
                }
            }
        }
    }
}

#[test]
fn fitted_trees_respect_depth_and_have_nonempty_leaves() {
    let mut rng = stream_rng(13, 0);
    for depth in 1..=6 {
        let tree = random_tree(&mut rng, 2, 3, depth);
        assert!(tree.depth() <= depth);
        for t in 0..2 {
            for r in Model::Tree(tree.clone()).decision_regions(t).unwrap() {
                let (lo, hi) = r.constraints.as_box().expect("leaf boxes are axis aligned");
                assert!(lo.iter().zip(hi.iter()).all(|(l, h)| l < h));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn pipeline_regions_are_pullbacks(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 0);
        let d = rng.random_range(2..=6);
        let k = rng.random_range(1..=d);
        let map = random_map(&mut rng, d, k);
        let inner = Model::Softmax(random_softmax(&mut rng, 3, k));
        let pipe = Model::Pipeline(PcaPipelineModel { map: map.clone(), inner: Box::new(inner.clone()) });
        for t in 0..3 {
            let outer = pipe.decision_regions(t).unwrap();
            let inner_r = inner.decision_regions(t).unwrap();
            for _ in 0..50 {
                let x = uniform_box(&mut rng, d, 3.0);
                let z = map.apply(&x).unwrap();
                for (a, b) in outer.iter().zip(&inner_r) {
                    let va = a.constraints.max_violation(&x);
                    let vb = b.constraints.max_violation(&z);
                    prop_assert!((va - vb).abs() <= 1e-9 * (1.0 + vb.abs()));
                }
            }
        }
    }

    #[test]
    fn compose_affine_preserves_membership(seed in any::<u64>()) {
        let mut rng = stream_rng(seed, 1);
        let d = rng.random_range(1..=5);
        let k = rng.random_range(1..=d);
        let map = random_map(&mut rng, d, k);
        let rows = (0..3).map(|_| LinearIneq::new(normal(&mut rng, k, 1.0), rng.random_range(-1.0..1.0))).collect();
        let cs = cfrobust_core::ConstraintSet::with_linear(k, rows).unwrap();
        let pulled = cfrobust_core::compose_affine(&cs, &map).unwrap();
        let x = uniform_box(&mut rng, d, 2.0);
        let z = map.apply(&x).unwrap();
        prop_assert!((pulled.max_violation(&x) - cs.max_violation(&z)).abs() <= 1e-9);
    }

    #[test]
    fn distance_is_zero_only_on_the_diagonal(seed in any::<u64>()) {
        use cfrobust_core::{distance, Metric};
        let mut rng = stream_rng(seed, 2);
        let d = rng.random_range(1..=8);
        let a = normal(&mut rng, d, 1.0);
        let b = normal(&mut rng, d, 1.0);
        let metrics = [
            Metric::L1,
            Metric::SquaredL2,
            Metric::WeightedL1 { weights: Vector::from_fn(d, |_, _| rng.random_range(0.1..2.0)) },
            Metric::Lp { p: rng.random_range(1.0..5.0) },
            Metric::Lp { p: f64::INFINITY },
        ];
        for m in &metrics {
            prop_assert_eq!(distance(&a, &a, m).unwrap(), 0.0);
            prop_assert!(distance(&a, &b, m).unwrap() > 0.0);
            prop_assert_eq!(distance(&a, &b, m).unwrap(), distance(&b, &a, m).unwrap());
        }
    }
}

#[test]
fn independent_predictors_agree_with_models() {
    let mut rng = stream_rng(14, 0);
    let s = random_softmax(&mut rng, 3, 2);
    let g = random_glvq(&mut rng, 2, 2, 2);
    let t = random_tree(&mut rng, 3, 2, 3);
    for _ in 0..5_000 {
        let x = uniform_box(&mut rng, 2, 4.0);
        assert_eq!(s.predict(&x), softmax_argmax(&s, x.as_slice()));
        assert_eq!(g.predict(&x), nearest_prototype(&g, x.as_slice()));
        assert_eq!(t.predict(&x), tree_walk(&t, x.as_slice()));
    }
}

#[test]
fn model_json_round_trips() {
    let mut rng = stream_rng(15, 0);
    for (_, model) in families(&mut rng, 3) {
        let json = serde_json::to_string(&model).unwrap();
        let back: Model = serde_json::from_str(&json).unwrap();
        for _ in 0..100 {
            let x = uniform_box(&mut rng, 3, 3.0);
            assert_eq!(model.predict(&x).unwrap(), back.predict(&x).unwrap());
        }
    }
}
