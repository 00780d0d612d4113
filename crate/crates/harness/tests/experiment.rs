use cfrobust::config::{CfMode, DatasetRef, ExperimentConfig, MetricName};
use cfrobust::data::{load_csv, make_blobs, train_indices, write_csv, BlobsSpec};
use cfrobust::dimstudy::{run_dimensionality_study, DimStudySpec};
use cfrobust::experiment::{fold_indices, prepare_fold, run_on, SampleRecord};
use cfrobust::output::write_experiment;
use cfrobust::run_experiment;
use cfrobust_core::models::{ModelKind, ModelSpec};
use cfrobust_core::perturbation::PerturbationKind;
use cfrobust_core::Dataset;

fn blobs(d: usize, n: usize, seed: u64) -> BlobsSpec {
    BlobsSpec {
        d,
        n_per_class: n,
        separation: 4.0,
        seed,
    }
}

fn small_config(kind: ModelKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(DatasetRef::Blobs(blobs(3, 40, 7)));
    cfg.model = ModelSpec {
        kind,
        ..ModelSpec::default()
    };
    cfg.masking_sweep = true;
    cfg.seed = 11;
    cfg
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

#[test]
fn runs_are_byte_identical() {
    for kind in [ModelKind::Linear, ModelKind::Glvq, ModelKind::Tree] {
        let cfg = small_config(kind);
        let a = serde_json::to_string(&run_experiment(&cfg).unwrap()).unwrap();
        let b = serde_json::to_string(&run_experiment(&cfg).unwrap()).unwrap();
        assert_eq!(a, b, "{kind:?}");

        let other = ExperimentConfig {
            seed: 12,
            ..cfg.clone()
        };
        let c = serde_json::to_string(&run_experiment(&other).unwrap()).unwrap();
        assert_ne!(a, c, "{kind:?}: seed had no effect");
    }
}

#[test]
fn written_outputs_are_byte_identical() {
    let cfg = small_config(ModelKind::Softmax);
    let res = run_experiment(&cfg).unwrap();
    let (d1, d2) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    write_experiment(&res, d1.path()).unwrap();
    write_experiment(&run_experiment(&cfg).unwrap(), d2.path()).unwrap();
    for name in ["result.json", "records.csv", "aggregates.csv"] {
        let a = std::fs::read(d1.path().join(name)).unwrap();
        let b = std::fs::read(d2.path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert_eq!(a, b, "{name}");
    }
    let text = std::fs::read_to_string(d1.path().join("records.csv")).unwrap();
    assert_eq!(text.lines().count(), res.records.len() + 1);
}

#[test]
fn aggregates_are_recomputable_from_records() {
    let cfg = small_config(ModelKind::Glvq);
    let res = run_experiment(&cfg).unwrap();
    assert!(!res.aggregates.is_empty());
    for agg in &res.aggregates {
        let rows: Vec<&SampleRecord> = res
            .records
            .iter()
            .filter(|r| r.mode == agg.mode && r.masked == agg.masked)
            .collect();
        let dists: Vec<f64> = rows.iter().filter_map(|r| r.distance).collect();
        assert_eq!(agg.count, dists.len());
        assert_eq!(agg.skipped, rows.len() - dists.len());
        assert_eq!(agg.flagged, rows.iter().filter(|r| r.flagged).count());
        assert_eq!(agg.median, median(dists.clone()));
        if let Some(mean) = agg.mean {
            let m = dists.iter().sum::<f64>() / dists.len() as f64;
            assert!((mean - m).abs() <= 1e-12 * (1.0 + m.abs()));
        }
    }
    // One aggregate per mode and perturbation.
    let d = res.dim;
    assert_eq!(res.aggregates.len(), cfg.modes.len() * (1 + d / 2));
}

#[test]
fn records_follow_the_protocol() {
    let mut cfg = small_config(ModelKind::Softmax);
    cfg.dataset = DatasetRef::Blobs(blobs(4, 40, 3));
    let data = match &cfg.dataset {
        DatasetRef::Blobs(b) => make_blobs(b).unwrap(),
        _ => unreachable!(),
    };
    let res = run_on(&data, &cfg).unwrap();
    let evaluated: usize = res.folds.iter().map(|f| f.n_evaluated).sum();
    let per_sample = cfg.modes.len() * (1 + data.dim() / 2);
    assert_eq!(res.records.len(), evaluated * per_sample);
    for r in &res.records {
        assert_eq!(data.samples[r.index].label, r.label);
        assert_ne!(r.target, r.label);
        if r.distance.is_some() {
            assert!(r.skip_reason.is_none());
            assert!(r.cf_cost.is_some());
        } else {
            assert!(r.skip_reason.is_some());
        }
    }
    assert_eq!(res.folds.len(), cfg.folds);
    for f in &res.folds {
        assert!(f.n_evaluated <= f.n_correct && f.n_correct <= f.n_test);
        assert_eq!(f.n_train + f.n_test, data.len());
    }
}

#[test]
fn fold_artifacts_depend_only_on_training_rows() {
    let cfg = small_config(ModelKind::Glvq);
    let data = make_blobs(&blobs(3, 60, 5)).unwrap();
    let folds = fold_indices(&data, &cfg).unwrap();

    let subset = |idx: &[usize]| {
        Dataset::new(
            idx.iter().map(|&i| data.samples[i].clone()).collect(),
            data.feature_names.clone(),
            data.n_classes,
        )
        .unwrap()
    };
    let train0 = subset(&train_indices(data.len(), &folds[0]));
    let train1 = subset(&train_indices(data.len(), &folds[1]));
    let a0 = prepare_fold(&train0, &cfg, 0).unwrap();
    let b0 = prepare_fold(&train0, &cfg, 0).unwrap();
    let a1 = prepare_fold(&train1, &cfg, 0).unwrap();
    assert_eq!(a0.model, b0.model);
    assert_eq!(a0.gmm, b0.gmm);
    assert_ne!(a0.model, a1.model, "different training rows, same model");
    assert_ne!(a0.gmm, a1.gmm, "different training rows, same densities");
    assert_ne!(a0.log_thresholds, a1.log_thresholds);

    // Scrambling fold 0's test rows leaves fold 0's fitted state alone.
    let mut scrambled = data.clone();
    for &i in &folds[0] {
        for v in scrambled.samples[i].features.iter_mut() {
            *v = -*v * 3.0 + 1.0;
        }
    }
    let cfg_run = ExperimentConfig {
        max_test_per_fold: Some(3),
        masking_sweep: false,
        ..cfg.clone()
    };
    let clean = run_on(&data, &cfg_run).unwrap();
    let dirty = run_on(&scrambled, &cfg_run).unwrap();
    assert_eq!(clean.folds[0].log_thresholds, dirty.folds[0].log_thresholds);
    assert_eq!(clean.folds[0].components_per_class, dirty.folds[0].components_per_class);
    assert_ne!(clean.folds[1].log_thresholds, dirty.folds[1].log_thresholds);
}

#[test]
fn linear_model_separates_two_dimensional_blobs() {
    let mut cfg = ExperimentConfig::new(DatasetRef::Blobs(blobs(2, 200, 1)));
    cfg.model = ModelSpec {
        kind: ModelKind::Linear,
        ..ModelSpec::default()
    };
    cfg.modes = vec![CfMode::Closest];
    cfg.objective = MetricName::L2sq;
    cfg.metric = MetricName::L2sq;
    cfg.max_test_per_fold = Some(20);
    let res = run_experiment(&cfg).unwrap();
    for f in &res.folds {
        assert!(f.accuracy >= 0.9, "fold {} accuracy {}", f.fold, f.accuracy);
    }
    // Unit Gaussian noise on a unit-normal linear model: mean d − 1 = 1.
    let agg = res.find(CfMode::Closest, None).unwrap();
    assert!(agg.count >= 60);
    assert!(agg.mean.unwrap() < 3.0, "{:?}", agg.mean);
}

#[test]
fn plausible_beats_closest_on_well_separated_blobs() {
    let mut cfg = ExperimentConfig::new(DatasetRef::Blobs(blobs(8, 80, 2)));
    cfg.model = ModelSpec {
        kind: ModelKind::Softmax,
        ..ModelSpec::default()
    };
    cfg.threshold_quantile = 0.9;
    cfg.max_test_per_fold = Some(15);
    cfg.perturbation = PerturbationKind::IsotropicGaussian { variance: 1.0 };
    let res = run_experiment(&cfg).unwrap();
    let c = res.median(CfMode::Closest, None).unwrap();
    let p = res.median(CfMode::Plausible, None).unwrap();
    assert!(p < c, "plausible {p} closest {c}");
}

#[test]
fn csv_round_trip_preserves_the_dataset() {
    let data = make_blobs(&blobs(3, 10, 4)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("blobs.csv");
    write_csv(&data, &path).unwrap();
    let loaded = load_csv(&path).unwrap();
    assert_eq!(loaded.dropped_rows, 0);
    assert_eq!(loaded.dataset.len(), data.len());
    assert_eq!(loaded.dataset.n_classes, 2);
    for (a, b) in loaded.dataset.samples.iter().zip(&data.samples) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.features, b.features);
    }
}

#[test]
fn config_paths_resolve_against_the_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let data = make_blobs(&blobs(2, 10, 4)).unwrap();
    std::fs::create_dir(dir.path().join("data")).unwrap();
    write_csv(&data, &dir.path().join("data/b.csv")).unwrap();
    let cfg_dir = dir.path().join("configs");
    std::fs::create_dir(&cfg_dir).unwrap();
    let path = cfg_dir.join("c.json");
    std::fs::write(
        &path,
        r#"{"schema": 1, "dataset": {"source": "csv", "path": "../data/b.csv"},
            "model": {"kind": "tree"}, "output": "../out/x"}"#,
    )
    .unwrap();
    let cfg = ExperimentConfig::load(&path).unwrap();
    let DatasetRef::Csv { path: p } = &cfg.dataset else {
        panic!("expected csv dataset")
    };
    assert!(p.exists());
    assert!(cfg.output.unwrap().starts_with(&cfg_dir));

    std::fs::write(&path, r#"{"schema": 1, "dataset": {"source": "csv", "path": "b.csv"}, "bogus": 1}"#)
        .unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
}

#[test]
fn dimensionality_study_is_deterministic_and_increasing() {
    let spec = DimStudySpec {
        dims: vec![2, 4, 8, 16],
        n_per_class: 40,
        max_test_per_fold: Some(10),
        seed: 3,
        ..DimStudySpec::default()
    };
    let a = run_dimensionality_study(&spec).unwrap();
    let b = run_dimensionality_study(&spec).unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
    assert_eq!(a.points.len(), spec.dims.len() * spec.kinds.len() * spec.modes.len());
    for t in &a.trends {
        assert!(t.spearman.unwrap() > 0.5, "{t:?}");
    }
}
