use inflate_transfer::datapipe::{write_manifest, TrainingFraction};
use inflate_transfer::experiment::{
    emit_report, median, prepare_data, read_report_csv, run_full_experiment, CellResult, ComparisonReport,
    ExperimentConfig, Layout, Mode,
};
use inflate_transfer::training::{EpochMetrics, StopRule};

fn history(val_acc1: f64, epochs: usize) -> Vec<EpochMetrics> {
    (1..=epochs)
        .map(|e| EpochMetrics {
            epoch: e,
            train_loss: 1.0 / e as f64,
            train_accuracy: 0.5,
            val_loss: Some(2.0 / e as f64),
            val_accuracy: Some(if e == 1 { val_acc1 } else { 0.5 }),
            wall_seconds: 0.0,
        })
        .collect()
}

fn cell(size: &str, mode: Mode, seed: u64, acc: f64, loss: f64, stop: usize, val1: f64) -> CellResult {
    CellResult {
        size: size.into(),
        mode,
        seed,
        stop_epoch: stop,
        test_loss: loss,
        test_accuracy: acc,
        history: history(val1, 3),
        train_manifest: format!("train-{size}"),
        val_manifest: "val".into(),
        test_manifest: "test".into(),
        train_config: "tc".into(),
    }
}

/// Two sizes, three seeds, hand-picked numbers.
fn fixture() -> Vec<CellResult> {
    use Mode::*;
    vec![
        cell("large", Baseline, 1, 0.50, 1.20, 9, 0.20),
        cell("large", Finetune, 1, 0.60, 0.80, 5, 0.40),
        cell("small", Baseline, 1, 0.30, 2.00, 12, 0.10),
        cell("small", Finetune, 1, 0.55, 1.00, 4, 0.30),
        cell("large", Baseline, 2, 0.40, 1.50, 7, 0.25),
        cell("large", Finetune, 2, 0.70, 0.60, 3, 0.35),
        cell("small", Baseline, 2, 0.20, 2.50, 10, 0.15),
        cell("small", Finetune, 2, 0.45, 1.25, 6, 0.20),
        cell("large", Baseline, 3, 0.45, 1.00, 8, 0.30),
        cell("large", Finetune, 3, 0.50, 0.90, 8, 0.30),
        cell("small", Baseline, 3, 0.35, 3.00, 11, 0.05),
        cell("small", Finetune, 3, 0.40, 2.00, 9, 0.25),
    ]
}

fn fixture_report() -> ComparisonReport {
    ComparisonReport::from_cells("fp".into(), vec![1, 2, 3], vec!["large".into(), "small".into()], fixture()).unwrap()
}

#[test]
fn median_of_odd_and_even() {
    assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    assert_eq!(median(&[7.0]), 7.0);
}

#[test]
fn summary_matches_hand_arithmetic() {
    let s = fixture_report().summary().unwrap();
    assert_eq!(s.sizes.len(), 2);
    let small = &s.sizes[1];
    assert_eq!(small.size, "small");
    let deltas: Vec<f64> = small.per_seed.iter().map(|p| p.accuracy_delta).collect();
    for (d, want) in deltas.iter().zip([0.25, 0.25, 0.05]) {
        assert!((d - want).abs() < 1e-12, "{d} vs {want}");
    }
    // Loss ratio (old - new) / new per seed: 1.0, 1.0, 0.5.
    let ratios: Vec<f64> = small.per_seed.iter().map(|p| p.loss_improvement_ratio).collect();
    for (r, want) in ratios.iter().zip([1.0, 1.0, 0.5]) {
        assert!((r - want).abs() < 1e-12);
    }
    assert!((small.median_baseline_accuracy - 0.30).abs() < 1e-12);
    assert!((small.median_finetune_accuracy - 0.45).abs() < 1e-12);
    assert!((small.median_accuracy_delta - 0.15).abs() < 1e-12);
    assert!((small.median_baseline_loss - 2.5).abs() < 1e-12);
    assert!((small.median_finetune_loss - 1.25).abs() < 1e-12);
    assert!((small.median_loss_improvement_ratio - 1.0).abs() < 1e-12);
    assert_eq!(small.median_baseline_stop_epoch, 11.0);
    assert_eq!(small.median_finetune_stop_epoch, 6.0);
    assert!((small.median_baseline_epoch1_val_accuracy - 0.10).abs() < 1e-12);
    assert!((small.median_finetune_epoch1_val_accuracy - 0.25).abs() < 1e-12);

    let large = &s.sizes[0];
    assert!((large.median_accuracy_delta - (0.60 - 0.45)).abs() < 1e-12);
}

#[test]
fn loss_ratio_divides_by_finetuned_loss() {
    // (old - new) / new: 2.9990 -> 1.8959 gives about 0.58.
    let mut cells = fixture();
    cells[2].test_loss = 2.9990;
    cells[3].test_loss = 1.8959;
    let r = ComparisonReport::from_cells("fp".into(), vec![1, 2, 3], vec!["large".into(), "small".into()], cells).unwrap();
    let s = r.summary().unwrap();
    let ratio = s.sizes[1].per_seed[0].loss_improvement_ratio;
    assert!((ratio - (2.9990 - 1.8959) / 1.8959).abs() < 1e-12);
}

#[test]
fn cells_are_ordered_by_seed_size_mode() {
    let r = fixture_report();
    assert_eq!(r.cells.len(), 3 * 2 * 2);
    let keys: Vec<(u64, &str, Mode)> = r.cells.iter().map(|c| (c.seed, c.size.as_str(), c.mode)).collect();
    assert_eq!(keys[0], (1, "large", Mode::Baseline));
    assert_eq!(keys[1], (1, "large", Mode::Finetune));
    assert_eq!(keys[2], (1, "small", Mode::Baseline));
    assert_eq!(keys[11], (3, "small", Mode::Finetune));
}

#[test]
fn incomplete_grid_fails_loudly() {
    let mut cells = fixture();
    cells.remove(5);
    let err = ComparisonReport::from_cells("fp".into(), vec![1, 2, 3], vec!["large".into(), "small".into()], cells)
        .unwrap_err();
    assert!(err.to_string().contains("incomplete grid"), "{err}");
}

#[test]
fn unfair_pairing_rejected() {
    let mut cells = fixture();
    cells[1].train_manifest = "other".into();
    let err = ComparisonReport::from_cells("fp".into(), vec![1, 2, 3], vec!["large".into(), "small".into()], cells)
        .unwrap_err();
    assert!(err.to_string().contains("unfair"), "{err}");
    let mut cells = fixture();
    cells[3].train_config = "other".into();
    assert!(ComparisonReport::from_cells("fp".into(), vec![1, 2, 3], vec!["large".into(), "small".into()], cells).is_err());
}

#[test]
fn duplicate_cell_rejected() {
    let mut cells = fixture();
    cells.push(cells[0].clone());
    assert!(ComparisonReport::from_cells("fp".into(), vec![1, 2, 3], vec!["large".into(), "small".into()], cells).is_err());
}

#[test]
fn csv_round_trip_and_row_count() {
    let dir = tempfile::tempdir().unwrap();
    let report = fixture_report();
    emit_report(&report, dir.path()).unwrap();
    let rows = read_report_csv(&dir.path().join("report.csv")).unwrap();
    assert_eq!(rows.len(), 2 * 2 * 3);
    assert_eq!(rows, report.rows());
    let header = std::fs::read_to_string(dir.path().join("report.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap(), "size,mode,seed,stop_epoch,test_loss,test_accuracy");
    let curves = std::fs::read_dir(dir.path().join("curves")).unwrap().count();
    assert_eq!(curves, 12);
    let curve = std::fs::read_to_string(dir.path().join("curves/seed1_small_finetune.csv")).unwrap();
    assert_eq!(curve.lines().next().unwrap(), "epoch,train_loss,train_acc,val_loss,val_acc");
    assert_eq!(curve.lines().count(), 4);
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config_fingerprint"], "fp");
}

/// A configuration small enough to run the whole pipeline in a test.
pub fn tiny_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.seeds = vec![5];
    c.render.frames = 8;
    c.render.height = 32;
    c.render.width = 36;
    c.render.amplitude = 0.4;
    c.geometry.image_size = 16;
    c.source.classes = 3;
    c.source.signers = 2;
    c.source.clips_per_signer_class = 1;
    c.target.classes = 2;
    c.target.signers = 4;
    c.target.clips_per_signer_class = 1;
    c.split.train = 2;
    c.split.val = 1;
    c.split.test = 1;
    c.bootstrap.max_epochs = 1;
    c.pretrain.max_epochs = 2;
    c.finetune.max_epochs = 3;
    c.bootstrap.batch_size = 4;
    c.pretrain.batch_size = 4;
    c.finetune.batch_size = 4;
    c
}

#[test]
fn tiny_pipeline_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let config = tiny_config();
    config.validate().unwrap();
    let report = run_full_experiment(&config, &layout, &|_| {}).unwrap();
    assert_eq!(report.cells.len(), 3 * 2);
    assert_eq!(report.config_fingerprint, config.fingerprint());
    for c in &report.cells {
        assert_eq!(c.history.len(), 3, "early stopping records every epoch");
        assert!((1..=3).contains(&c.stop_epoch));
        assert!((0.0..=1.0).contains(&c.test_accuracy));
    }
    let rows = read_report_csv(&layout.report_dir().join("report.csv")).unwrap();
    assert_eq!(rows, report.rows());
    assert!(layout.effective_config().exists());
    let back = ExperimentConfig::load(layout.effective_config()).unwrap();
    assert_eq!(back, config);
    assert!(layout.bootstrap_checkpoint(5).exists());
    assert!(layout.pretrain_checkpoint(5).exists());
    assert!(layout.cell_dir(5, TrainingFraction::Quarter, Mode::Finetune).join("model.ckpt").exists());
    let metrics = std::fs::read_to_string(layout.cell_dir(5, TrainingFraction::Full, Mode::Baseline).join("metrics.jsonl")).unwrap();
    assert_eq!(metrics.lines().count(), 3);
}

#[test]
fn prepare_data_reuses_and_refuses_foreign_dirs() {
    let dir = tempfile::tempdir().unwrap();
    let layout = Layout::new(dir.path());
    let config = tiny_config();
    let a = prepare_data(&config, &layout, &|_| {}).unwrap();
    let frame = a.source_root.join(&a.source[0].path).join("00000.frm");
    let stamp = std::fs::metadata(&frame).unwrap().modified().unwrap();
    let mut messages = Vec::new();
    let log = std::sync::Mutex::new(&mut messages);
    let b = prepare_data(&config, &layout, &|m| log.lock().unwrap().push(m.to_string())).unwrap();
    assert_eq!(a.source, b.source);
    assert_eq!(std::fs::metadata(&frame).unwrap().modified().unwrap(), stamp);

    let foreign = tempfile::tempdir().unwrap();
    let flayout = Layout::new(foreign.path());
    write_manifest(flayout.data("source").join("notes.jsonl"), &[]).unwrap();
    assert!(prepare_data(&config, &flayout, &|_| {}).is_err());
}

#[test]
fn finetune_requires_early_stopping() {
    let mut c = ExperimentConfig::default();
    c.finetune.stop_rule = StopRule::TrainAccuracyThreshold { theta: 0.9 };
    assert!(c.validate().is_err());
}
