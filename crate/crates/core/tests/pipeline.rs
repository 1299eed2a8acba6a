use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use woundaug::dataset::{self, ClassLabel};
use woundaug::eval::Condition;
use woundaug::pipeline::{self, ExperimentConfig, RunRecord};

fn small(out: &Path) -> ExperimentConfig {
    let text = format!(
        r#"
name = "small"
shape = "8x8x3"
balance_per_class = 10
output_dir = "{}"
global_seed = 3

[synthetic]
per_class = 12

[degan]
inflate = 5
epochs = 3
batch_size = 8
base_channels = 4
latent_dim = 4

[grid]
epochs_list = [2, 4]
lr_list = [0.1, 0.05]

[[grid.backbones]]
name = "tiny-cnn"
feature_dim = 8
"#,
        out.display()
    );
    ExperimentConfig::from_toml_str(&text, &[]).unwrap()
}

fn count_label(out: &Path, rec: &RunRecord, label: ClassLabel) -> usize {
    let recs = dataset::read_records(&out.join(&rec.artifacts["train_manifest"])).unwrap();
    recs.iter().filter(|r| r.label == label).count()
}

#[test]
fn all_conditions_share_the_test_set_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("exp");
    let cfg = small(&out);
    let first = pipeline::run_experiment(&cfg).unwrap();
    assert!(first.all_ok(), "{:?}", first.records.iter().map(|r| &r.error).collect::<Vec<_>>());
    assert_eq!(first.records.len(), 3);
    assert!(first.comparison.is_some());
    assert!(out.join("comparison.txt").is_file());

    let ids: BTreeSet<&str> = first.records.iter().map(|r| r.run_id.as_str()).collect();
    assert_eq!(ids.len(), 3);
    let hashes: BTreeSet<&str> = first
        .records
        .iter()
        .map(|r| r.metrics.as_ref().unwrap().test_set_hash.as_str())
        .collect();
    assert_eq!(hashes.len(), 1);
    let supports: Vec<_> = first.reports.iter().map(|r| r.support.clone()).collect();
    assert!(supports.windows(2).all(|w| w[0] == w[1]));

    let base = first.records.iter().find(|r| r.condition == Condition::XferOnly).unwrap();
    let gan = first.records.iter().find(|r| r.condition == Condition::DeganAug).unwrap();
    assert_eq!(count_label(&out, gan, ClassLabel::D), count_label(&out, base, ClassLabel::D) + 5);
    assert_eq!(count_label(&out, gan, ClassLabel::N), count_label(&out, base, ClassLabel::N));

    let metrics = fs::read_to_string(out.join(pipeline::METRICS_FILE)).unwrap();
    let second = pipeline::run_experiment(&cfg).unwrap();
    assert_eq!(second.skipped.len(), 3);
    assert_eq!(pipeline::read_index(&out).unwrap().len(), 3);
    assert_eq!(fs::read_to_string(out.join(pipeline::METRICS_FILE)).unwrap(), metrics);

    // drop one finished run and resume
    let geo = first.records.iter().find(|r| r.condition == Condition::GeometricAug).unwrap();
    fs::remove_file(out.join(&geo.artifacts["report"])).unwrap();
    let third = pipeline::run_experiment(&cfg).unwrap();
    assert_eq!(third.skipped.len(), 2);
    assert_eq!(pipeline::read_index(&out).unwrap().len(), 4);
    assert_eq!(fs::read_to_string(out.join(pipeline::METRICS_FILE)).unwrap(), metrics);
}

#[test]
fn identical_configs_in_other_directories_match() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(&tmp.path().join("a"));
    cfg.conditions = vec!["xfer-only".into(), "geometric-aug".into()];
    let a = pipeline::run_experiment(&cfg).unwrap();
    assert_eq!(a.records.len(), 2);
    assert!(a.comparison.is_some());

    // the snapshot alone re-executes the run
    let snap = &a.records[1].snapshot;
    let mut again = snap.experiment.clone();
    again.output_dir = tmp.path().join("b");
    let b = pipeline::run_experiment(&again).unwrap();
    assert_eq!(b.records[1].run_id, a.records[1].run_id);
    assert_eq!(b.records[1].metrics, a.records[1].metrics);
    assert_eq!(
        fs::read_to_string(tmp.path().join("a").join(pipeline::METRICS_FILE)).unwrap(),
        fs::read_to_string(tmp.path().join("b").join(pipeline::METRICS_FILE)).unwrap()
    );
}

#[test]
fn failed_condition_does_not_stop_the_others() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(&tmp.path().join("exp"));
    // a non-finite generator loss aborts DE-GAN training
    cfg.degan.learning_rate = 1e300;
    let outcome = pipeline::run_experiment(&cfg).unwrap();
    assert!(!outcome.all_ok());
    let failed: Vec<_> = outcome.records.iter().filter(|r| !r.is_ok()).collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].condition, Condition::DeganAug);
    assert!(failed[0].error.as_deref().unwrap().contains("GAN"), "{:?}", failed[0].error);
    assert!(outcome.comparison.is_some());
    let lines = fs::read_to_string(tmp.path().join("exp").join(pipeline::METRICS_FILE)).unwrap();
    assert_eq!(lines.lines().count(), 3);
}

#[test]
fn grid_plot_has_one_series_per_epoch_setting() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(&tmp.path().join("exp"));
    cfg.conditions = vec!["xfer-only".into()];
    cfg.grid.epochs_list = vec![1, 2, 3];
    cfg.grid.lr_list = vec![0.01, 0.001, 0.0001, 0.05, 0.0005];
    let outcome = pipeline::run_experiment(&cfg).unwrap();
    assert_eq!(outcome.grid.len(), 15);
    assert!(outcome.comparison.is_none());
    let svg = fs::read_to_string(tmp.path().join("exp/plots/grid_accuracy_tiny-cnn.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert_eq!(svg.matches("<circle").count(), 15);

    let before: Vec<Vec<u8>> = outcome.plots.iter().map(|p| fs::read(p).unwrap()).collect();
    let again = pipeline::render_plots(&tmp.path().join("exp"), &outcome.records).unwrap();
    assert_eq!(again, outcome.plots);
    let after: Vec<Vec<u8>> = again.iter().map(|p| fs::read(p).unwrap()).collect();
    assert_eq!(before, after);
}

#[test]
fn single_point_grid_still_plots() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(&tmp.path().join("exp"));
    cfg.conditions = vec!["xfer-only".into()];
    cfg.grid.epochs_list = vec![2];
    cfg.grid.lr_list = vec![0.1];
    let outcome = pipeline::run_experiment(&cfg).unwrap();
    assert_eq!(outcome.records.len(), 1);
    let svg = fs::read_to_string(tmp.path().join("exp/plots/grid_accuracy_tiny-cnn.svg")).unwrap();
    assert!(svg.contains("<circle"));
}

#[test]
fn invalid_config_is_rejected_before_any_work() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("exp");
    let mut cfg = small(&out);
    cfg.grid.lr_list = vec![0.0];
    assert!(pipeline::run_experiment(&cfg).is_err());
    assert!(!out.exists());
}
