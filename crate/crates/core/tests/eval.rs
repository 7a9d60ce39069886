mod common;

use common::*;
use lml::eval::{
    knn_classify, knn_error, run_sequence_experiment, stratified_split, sweep_dimension, sweep_sparsity,
    ExperimentConfig, Splits,
};
use lml::io::{load_csv, save_csv};
use lml::synth::{generate_synthetic, SyntheticSpec};
use lml::{Config, Dataset, Metric, MetricKind};

fn small_tasks(seed: u64) -> Vec<Dataset> {
    let spec = SyntheticSpec { num_tasks: 3, samples_per_class: 40, seed, ..SyntheticSpec::default() };
    generate_synthetic(&spec).unwrap().0
}

fn quick() -> Config {
    Config { base: lml::BaseConfig { iterations: 2000, ..Default::default() }, ..Config::default() }
}

#[test]
fn training_point_query_returns_its_label() {
    let data = blobs(1, 20, 3, 4, 1.0);
    let m = Metric::identity(4, MetricKind::Distance);
    for i in 0..data.len() {
        assert_eq!(knn_classify(&m, &data, data.row(i), 1).unwrap(), data.labels()[i]);
    }
}

#[test]
fn euclidean_knn_matches_oracle_on_blobs() {
    let data = blobs(2, 30, 4, 6, 2.5);
    let train = to_mat(data.features());
    let m = Metric::identity(6, MetricKind::Distance);
    let mut r = rng(9);
    for q in gaussian(&mut r, 100, 6) {
        for k in [1, 2, 4, 7] {
            let got = knn_classify(&m, &data, ndarray::ArrayView1::from(q.as_slice()), k).unwrap();
            assert_eq!(got, euclidean_knn(&train, data.labels(), &q, k));
        }
    }
}

#[test]
fn error_is_invariant_to_metric_scale() {
    let data = blobs(3, 25, 3, 5, 3.0);
    let split = stratified_split(&data, &Splits::default(), 1).unwrap();
    let mut r = rng(4);
    let a = to_array(&symmetric_gaussian(&mut r, 5));
    for kind in [MetricKind::Distance, MetricKind::Similarity] {
        let m = Metric::new(a.clone(), kind).unwrap();
        let scaled = Metric::new(&a * 7.5, kind).unwrap();
        assert_eq!(
            knn_error(&m, &split.train, &split.test, 3).unwrap(),
            knn_error(&scaled, &split.train, &split.test, 3).unwrap()
        );
    }
}

#[test]
fn noiseless_separated_classes_are_perfect_under_the_true_metric() {
    let spec = SyntheticSpec { noise_sigma: 0.0, class_separation: 5.0, num_tasks: 2, ..SyntheticSpec::default() };
    let (tasks, truth) = generate_synthetic::<f64>(&spec).unwrap();
    for (t, data) in tasks.iter().enumerate() {
        let m = Metric::new(truth.metric(t), MetricKind::Distance).unwrap();
        let split = stratified_split(data, &Splits::default(), 0).unwrap();
        assert_eq!(knn_error(&m, &split.train, &split.test, 1).unwrap(), 0.0);
    }
}

#[test]
fn sequence_experiment_is_reproducible_and_triangular() {
    let tasks = small_tasks(1);
    let exp = ExperimentConfig { reps: 2, seeds: vec![5, 6], ..ExperimentConfig::default() };
    let a = run_sequence_experiment(&tasks, &quick(), &exp).unwrap();
    let b = run_sequence_experiment(&tasks, &quick(), &exp).unwrap();
    assert_eq!(a.records, b.records);
    assert_eq!(a.lml, b.lml);
    for (t, row) in a.stage_errors.iter().enumerate() {
        for (s, v) in row.iter().enumerate() {
            assert_eq!(v.is_some(), s >= t);
        }
    }
    let mean: f64 = a.lml.per_task_error.iter().map(|e| e.mean).sum::<f64>() / 3.0;
    assert!((a.lml.avg_error - mean).abs() < 1e-12);
    assert!(a.records.iter().all(|r| (0.0..=1.0).contains(&r.error)));
    assert!(a.validation_error.is_some());
}

#[test]
fn sequence_experiment_rejects_bad_inputs() {
    let tasks = small_tasks(2);
    let err = run_sequence_experiment(&tasks[..1], &quick(), &ExperimentConfig::default()).unwrap_err();
    assert!(err.is_config());
    let bad =
        ExperimentConfig { splits: Splits { train: 0.0, validation: 0.5, test: 0.5 }, ..ExperimentConfig::default() };
    assert!(run_sequence_experiment(&tasks, &quick(), &bad).unwrap_err().is_config());
}

#[test]
fn sweeps_record_point_errors_and_continue() {
    let tasks = small_tasks(3);
    let exp = ExperimentConfig::default();
    assert!(sweep_dimension(&tasks, &[], &quick(), &exp).is_empty());
    let points = sweep_dimension(&tasks, &[3, 50], &quick(), &exp);
    assert_eq!(points.len(), 2);
    assert!(points[0].outcome.is_ok());
    assert!(points[1].outcome.as_ref().unwrap_err().contains("exceeds"));

    let single = run_sequence_experiment(&tasks, &Config { d: 3, ..quick() }, &exp).unwrap();
    assert_eq!(points[0].avg_error(), Some(single.lml.avg_error));

    let lambdas = sweep_sparsity(&tasks, &[0.5], &quick(), &exp);
    assert_eq!(lambdas.len(), 1);
}

#[test]
fn csv_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = blobs(5, 7, 3, 4, 1.0);
    let path = dir.path().join("blobs.csv");
    save_csv(&data, &path).unwrap();
    let back: Dataset = load_csv(&path).unwrap();
    assert_eq!(back.features(), data.features());
    assert_eq!(back.labels(), data.labels());
    assert_eq!(back.task_id(), "blobs");
}

#[test]
fn missing_csv_names_the_path() {
    let err = load_csv::<f64>("/definitely/not/here.csv").unwrap_err();
    assert!(err.is_config());
    assert!(err.to_string().contains("/definitely/not/here.csv"));
}
