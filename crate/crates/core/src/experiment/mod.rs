//! End-to-end transfer experiment: bootstrap a 2D net, inflate it,
//! pretrain on the source clips, then train baseline and fine-tuned
//! models on every target size and compare them on the shared test split.

mod config;
mod report;

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::datapipe::{
    derive_seed, generate_synthetic_dataset, read_manifest, split_manifest, ClipDataset, ClipStore, FrameDataset,
    ManifestEntry, Sampling, SplitManifests, SplitSpec, TrainingFraction, MANIFEST_FILE,
};
use crate::error::{Error, Result};
use crate::inflation::{inflate_params, InflationPlan};
use crate::netdef::{
    build_inflated, build_mini_inception_2d, forward_on_tape, init_params, replace_head, Checkpoint, CheckpointMeta,
    Dimensionality, GraphSpec, LayerKind, LayerSpec, ParamSet, INPUT,
};
use crate::autograd::Tape;
use crate::datapipe::{Dataset, TensorDataset};
use crate::tensor::{Scalar, Tensor};
use crate::training::{evaluate, train_with_observer, write_curve_csv, write_metrics_jsonl, EpochMetrics, TrainConfig, TrainOutcome};

pub use config::{
    hex_digest, ExperimentConfig, GeometryConfig, RenderConfig, SplitCounts, SynthDatasetConfig,
};
pub use report::{
    emit_report, median, read_report_csv, ComparisonReport, ReportRow, SeedComparison, SizeSummary, Summary,
};

/// Progress sink for long-running stages.
pub type Log<'a> = &'a (dyn Fn(&str) + Sync);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Finetune,
}

impl Mode {
    pub const ALL: [Mode; 2] = [Mode::Baseline, Mode::Finetune];

    pub fn name(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Finetune => "finetune",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.name() == name)
    }
}

/// Output locations under an experiment directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn data(&self, dataset: &str) -> PathBuf {
        self.root.join("data").join(dataset)
    }

    pub fn seed_dir(&self, seed: u64) -> PathBuf {
        self.root.join(format!("seed_{seed}"))
    }

    pub fn bootstrap_checkpoint(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("bootstrap_2d.ckpt")
    }

    pub fn pretrain_checkpoint(&self, seed: u64) -> PathBuf {
        self.seed_dir(seed).join("pretrain_3d.ckpt")
    }

    pub fn cell_dir(&self, seed: u64, fraction: TrainingFraction, mode: Mode) -> PathBuf {
        self.seed_dir(seed).join(format!("{}_{}", fraction.size_name(), mode.name()))
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn effective_config(&self) -> PathBuf {
        self.root.join("effective_config.toml")
    }
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    Ok(serde_json::from_slice(&text)?)
}

/// Both synthetic datasets on disk.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub source_root: PathBuf,
    pub source: Vec<ManifestEntry>,
    pub target_root: PathBuf,
    pub target: Vec<ManifestEntry>,
}

const SYNTH_PARAMS_FILE: &str = "synth_params.json";

fn prepare_one(ds: &SynthDatasetConfig, config: &ExperimentConfig, dir: &Path, log: Log) -> Result<Vec<ManifestEntry>> {
    let params = ds.synth_params(&config.render);
    let recorded = dir.join(SYNTH_PARAMS_FILE);
    let wanted = serde_json::to_string_pretty(&params)?;
    if std::fs::read_to_string(&recorded).is_ok_and(|t| t == wanted) && dir.join(MANIFEST_FILE).exists() {
        log(&format!("reusing synthetic clips in {}", dir.display()));
        return read_manifest(dir.join(MANIFEST_FILE));
    }
    if dir.exists() {
        let empty = std::fs::read_dir(dir).map(|mut d| d.next().is_none()).unwrap_or(false);
        if !recorded.exists() && !empty {
            return Err(Error::invalid(format!(
                "{} exists but was not written by the generator; refusing to overwrite",
                dir.display()
            )));
        }
        std::fs::remove_dir_all(dir).map_err(|e| Error::io(format!("clearing {}", dir.display()), e))?;
    }
    create_dir(dir)?;
    log(&format!("rendering {} clips into {}", params.num_classes * params.num_signers as usize * params.clips_per_signer_class, dir.display()));
    let entries = generate_synthetic_dataset(&params, dir)?;
    std::fs::write(&recorded, wanted).map_err(|e| Error::io(format!("writing {}", recorded.display()), e))?;
    Ok(entries)
}

/// Generate (or reuse, when parameters match) the source and target clips.
pub fn prepare_data(config: &ExperimentConfig, layout: &Layout, log: Log) -> Result<PreparedData> {
    let source_root = layout.data("source");
    let target_root = layout.data("target");
    let source = prepare_one(&config.source, config, &source_root, log).map_err(|e| e.in_stage("gen-synth"))?;
    let target = prepare_one(&config.target, config, &target_root, log).map_err(|e| e.in_stage("gen-synth"))?;
    Ok(PreparedData { source_root, source, target_root, target })
}

/// Preprocessed frames of both datasets.
#[derive(Debug, Clone)]
pub struct Stores {
    pub source: Arc<ClipStore>,
    pub target: Arc<ClipStore>,
}

impl Stores {
    pub fn load(config: &ExperimentConfig, data: &PreparedData) -> Result<Self> {
        let size = config.geometry.image_size;
        Ok(Stores {
            source: Arc::new(ClipStore::load(&data.source_root, &data.source, size)?),
            target: Arc::new(ClipStore::load(&data.target_root, &data.target, size)?),
        })
    }
}

pub fn split_spec(config: &ExperimentConfig, fraction: TrainingFraction) -> SplitSpec {
    let s = config.split;
    SplitSpec::consecutive(s.train, s.val, s.test, fraction)
}

pub fn target_split(config: &ExperimentConfig, target: &[ManifestEntry], fraction: TrainingFraction) -> Result<SplitManifests> {
    split_manifest(target, &split_spec(config, fraction))
}

fn fraction_index(fraction: TrainingFraction) -> u64 {
    fraction.denominator() as u64
}

fn stage_config(base: &TrainConfig, seed: u64, stage: &str, parts: &[u64]) -> TrainConfig {
    let mut all = vec![base.seed];
    all.extend_from_slice(parts);
    TrainConfig { seed: derive_seed(seed, stage, &all), ..base.clone() }
}

fn epoch_logger<'a>(log: Log<'a>, label: String) -> impl FnMut(&EpochMetrics) + 'a {
    move |m: &EpochMetrics| {
        let val = match (m.val_loss, m.val_accuracy) {
            (Some(l), Some(a)) => format!(" val_loss {l:.4} val_acc {a:.3}"),
            _ => String::new(),
        };
        log(&format!(
            "{label} epoch {:>2}: train_loss {:.4} train_acc {:.3}{val} ({:.1}s)",
            m.epoch, m.train_loss, m.train_accuracy, m.wall_seconds
        ));
    }
}

pub fn mini_2d_spec(config: &ExperimentConfig) -> Result<GraphSpec> {
    build_mini_inception_2d(config.source.classes, config.geometry.image_size, &config.geometry.channels)
}

/// Train the 2D net on single frames of the source clips.
pub fn run_bootstrap_stage(
    config: &ExperimentConfig,
    seed: u64,
    data: &PreparedData,
    stores: &Stores,
    log: Log,
) -> Result<(Checkpoint<f32>, TrainOutcome<f32>)> {
    let run = || -> Result<_> {
        let spec = mini_2d_spec(config)?;
        let params = init_params::<f32>(&spec, derive_seed(seed, "init-2d", &[]));
        let frames = FrameDataset::new(
            data.source.clone(),
            stores.source.clone(),
            Sampling::PerEpoch,
            derive_seed(seed, "bootstrap-frames", &[]),
        )?
        .with_frames_per_clip(config.bootstrap_frames_per_clip)?;
        let tc = stage_config(&config.bootstrap, seed, "bootstrap", &[]);
        let outcome = train_with_observer(&spec, params, &frames, None, &tc, epoch_logger(log, format!("[seed {seed}] bootstrap")))?;
        let fixed = FrameDataset::new(data.source.clone(), stores.source.clone(), Sampling::Fixed, config.eval_seed)?;
        let (loss, acc) = evaluate(&spec, &outcome.params, &fixed, tc.batch_size)?;
        let mut meta = CheckpointMeta {
            epoch: Some(outcome.selected_epoch),
            dataset: "source-frames".into(),
            ..Default::default()
        };
        meta.metrics.insert("frame_loss".into(), loss);
        meta.metrics.insert("frame_accuracy".into(), acc);
        meta.extra.insert("seed".into(), seed.to_string());
        Ok((Checkpoint::new(spec, outcome.params.clone(), meta)?, outcome))
    };
    run().map_err(|e| e.in_stage("bootstrap"))
}

/// Inflate a 2D checkpoint with the configured schedule and input depth.
pub fn inflate_checkpoint(config: &ExperimentConfig, ckpt2d: &Checkpoint<f32>) -> Result<(GraphSpec, ParamSet<f32>)> {
    inflate_network(config, &ckpt2d.spec, &ckpt2d.params)
}

/// Inflate a 2D network at the precision of `params2d`.
pub fn inflate_network<T: Scalar>(
    config: &ExperimentConfig,
    spec2d: &GraphSpec,
    params2d: &ParamSet<T>,
) -> Result<(GraphSpec, ParamSet<T>)> {
    if spec2d.dimensionality() != Dimensionality::D2 {
        return Err(Error::invalid("inflation needs a 2D checkpoint"));
    }
    let spec3d = build_inflated(spec2d, &config.geometry.schedule, config.geometry.temporal_depth)?;
    let plan = InflationPlan::from_specs(spec2d, &spec3d)?;
    let params = inflate_params(params2d, spec2d, &spec3d, &plan)?;
    Ok((spec3d, params))
}

/// Inflate the bootstrap net and train it on the source clips until the
/// training-accuracy threshold.
pub fn run_pretrain_stage(
    config: &ExperimentConfig,
    seed: u64,
    ckpt2d: &Checkpoint<f32>,
    data: &PreparedData,
    stores: &Stores,
    log: Log,
) -> Result<(Checkpoint<f32>, TrainOutcome<f32>)> {
    let run = || -> Result<_> {
        let (spec, params) = inflate_checkpoint(config, ckpt2d)?;
        let (params, spec) = if spec.num_classes() == config.source.classes {
            (params, spec)
        } else {
            replace_head(&params, &spec, config.source.classes, derive_seed(seed, "source-head", &[]))?
        };
        let clips = ClipDataset::new(
            data.source.clone(),
            stores.source.clone(),
            config.geometry.temporal_depth,
            Sampling::PerEpoch,
            derive_seed(seed, "pretrain-frames", &[]),
        )?;
        let tc = stage_config(&config.pretrain, seed, "pretrain", &[]);
        let outcome = train_with_observer(&spec, params, &clips, None, &tc, epoch_logger(log, format!("[seed {seed}] pretrain")))?;
        let last = outcome.history.last().expect("at least one epoch");
        let mut meta = CheckpointMeta {
            epoch: Some(outcome.selected_epoch),
            dataset: "source".into(),
            ..Default::default()
        };
        meta.metrics.insert("train_accuracy".into(), last.train_accuracy);
        meta.metrics.insert("train_loss".into(), last.train_loss);
        meta.extra.insert("threshold_reached".into(), outcome.threshold_reached.to_string());
        meta.extra.insert("seed".into(), seed.to_string());
        Ok((Checkpoint::new(spec, outcome.params.clone(), meta)?, outcome))
    };
    run().map_err(|e| e.in_stage("pretrain"))
}

/// Fingerprint of a manifest's clip ids, in order.
pub fn manifest_fingerprint(entries: &[ManifestEntry]) -> String {
    hex_digest(&serde_json::to_vec(entries).expect("manifest serializes"))
}

/// Result of one (size, mode, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub size: String,
    pub mode: Mode,
    pub seed: u64,
    /// Epoch whose parameters were kept (lowest validation loss).
    pub stop_epoch: usize,
    pub test_loss: f64,
    pub test_accuracy: f64,
    pub history: Vec<EpochMetrics>,
    pub train_manifest: String,
    pub val_manifest: String,
    pub test_manifest: String,
    pub train_config: String,
}

/// Train one target cell. Baselines start from the inflated bootstrap
/// net, fine-tuned models from the pretrained net; both get a fresh head
/// drawn from the same seed.
#[allow(clippy::too_many_arguments)]
pub fn run_target_stage(
    config: &ExperimentConfig,
    seed: u64,
    fraction: TrainingFraction,
    mode: Mode,
    bootstrap: &Checkpoint<f32>,
    pretrained: Option<&Checkpoint<f32>>,
    data: &PreparedData,
    stores: &Stores,
    log: Log,
) -> Result<(Checkpoint<f32>, CellResult)> {
    let run = || -> Result<_> {
        let (spec, params) = match mode {
            Mode::Baseline => inflate_checkpoint(config, bootstrap)?,
            Mode::Finetune => {
                let p = pretrained.ok_or_else(|| Error::invalid("fine-tuning needs the pretrained checkpoint"))?;
                if p.spec.dimensionality() != Dimensionality::D3 {
                    return Err(Error::invalid("the pretrained checkpoint must hold a 3D graph"));
                }
                (p.spec.clone(), p.params.clone())
            }
        };
        let fi = fraction_index(fraction);
        let (params, spec) = replace_head(&params, &spec, config.target.classes, derive_seed(seed, "target-head", &[fi]))?;
        let split = target_split(config, &data.target, fraction)?;
        let depth = config.geometry.temporal_depth;
        let train_ds = ClipDataset::new(
            split.train.clone(),
            stores.target.clone(),
            depth,
            Sampling::PerEpoch,
            derive_seed(seed, "target-frames", &[fi]),
        )?;
        let val_ds = ClipDataset::new(split.val.clone(), stores.target.clone(), depth, Sampling::Fixed, config.eval_seed)?;
        let test_ds = ClipDataset::new(split.test.clone(), stores.target.clone(), depth, Sampling::Fixed, config.eval_seed)?;
        let tc = stage_config(&config.finetune, seed, "target", &[fi]);
        let label = format!("[seed {seed}] {} {}", fraction.size_name(), mode.name());
        let outcome = train_with_observer(&spec, params, &train_ds, Some(&val_ds), &tc, epoch_logger(log, label))?;
        let (test_loss, test_accuracy) = evaluate(&spec, &outcome.params, &test_ds, tc.batch_size)?;
        let cell = CellResult {
            size: fraction.size_name().to_string(),
            mode,
            seed,
            stop_epoch: outcome.selected_epoch,
            test_loss,
            test_accuracy,
            history: outcome.history.clone(),
            train_manifest: manifest_fingerprint(&split.train),
            val_manifest: manifest_fingerprint(&split.val),
            test_manifest: manifest_fingerprint(&split.test),
            train_config: hex_digest(&serde_json::to_vec(&config.finetune)?),
        };
        let mut meta = CheckpointMeta {
            epoch: Some(outcome.selected_epoch),
            dataset: format!("target-{}", fraction.size_name()),
            ..Default::default()
        };
        meta.metrics.insert("test_loss".into(), test_loss);
        meta.metrics.insert("test_accuracy".into(), test_accuracy);
        meta.extra.insert("mode".into(), mode.name().into());
        meta.extra.insert("seed".into(), seed.to_string());
        Ok((Checkpoint::new(spec, outcome.params, meta)?, cell))
    };
    run().map_err(|e| e.in_stage(&format!("train-target {} {}", fraction.size_name(), mode.name())))
}

/// Write a cell's checkpoint, result record and curves into `dir`.
pub fn save_cell(dir: &Path, checkpoint: &Checkpoint<f32>, cell: &CellResult) -> Result<()> {
    create_dir(dir)?;
    checkpoint.save(dir.join("model.ckpt"))?;
    write_json(&dir.join("cell.json"), cell)?;
    write_metrics_jsonl(dir.join("metrics.jsonl"), &cell.history)?;
    write_curve_csv(dir.join("curve.csv"), &cell.history)
}

pub fn load_cell(dir: &Path) -> Result<CellResult> {
    read_json(&dir.join("cell.json"))
}

/// Every cell result found under the layout, for the configured grid.
pub fn collect_cells(config: &ExperimentConfig, layout: &Layout) -> Result<Vec<CellResult>> {
    let mut cells = Vec::new();
    for &seed in &config.seeds {
        for &fraction in &config.fractions {
            for mode in Mode::ALL {
                let dir = layout.cell_dir(seed, fraction, mode);
                cells.push(load_cell(&dir).map_err(|e| {
                    Error::invalid(format!("missing result for seed {seed} {} {}: {e}", fraction.size_name(), mode.name()))
                })?);
            }
        }
    }
    Ok(cells)
}

/// Full pipeline for every seed, then report assembly and emission.
pub fn run_full_experiment(config: &ExperimentConfig, layout: &Layout, log: Log) -> Result<ComparisonReport> {
    config.validate()?;
    create_dir(&layout.root)?;
    config.save(layout.effective_config())?;
    let data = prepare_data(config, layout, log)?;
    let stores = Stores::load(config, &data)?;
    let mut cells = Vec::new();
    for &seed in &config.seeds {
        create_dir(&layout.seed_dir(seed))?;
        let (boot, _) = run_bootstrap_stage(config, seed, &data, &stores, log)?;
        boot.save(layout.bootstrap_checkpoint(seed))?;
        let (pre, outcome) = run_pretrain_stage(config, seed, &boot, &data, &stores, log)?;
        if !outcome.threshold_reached {
            log(&format!("[seed {seed}] pretraining stopped at max_epochs below the accuracy threshold"));
        }
        pre.save(layout.pretrain_checkpoint(seed))?;
        for &fraction in &config.fractions {
            for mode in Mode::ALL {
                let (ckpt, cell) = run_target_stage(config, seed, fraction, mode, &boot, Some(&pre), &data, &stores, log)?;
                log(&format!(
                    "[seed {seed}] {} {}: stop epoch {}, test acc {:.3}, test loss {:.4}",
                    cell.size,
                    mode.name(),
                    cell.stop_epoch,
                    cell.test_accuracy,
                    cell.test_loss
                ));
                save_cell(&layout.cell_dir(seed, fraction, mode), &ckpt, &cell)?;
                cells.push(cell);
            }
        }
    }
    let report = ComparisonReport::assemble(config, cells)?;
    emit_report(&report, &layout.report_dir())?;
    Ok(report)
}

/// Test accuracy of a dense classifier trained on frozen pooled features
/// of `spec`/`params`, using the target train and test splits.
pub fn linear_probe(
    spec: &GraphSpec,
    params: &ParamSet<f32>,
    train: &dyn Dataset,
    test: &dyn Dataset,
    num_classes: usize,
    train_config: &TrainConfig,
) -> Result<f64> {
    let features = |ds: &dyn Dataset| -> Result<TensorDataset> {
        let mut xs = Vec::with_capacity(ds.len());
        let mut ys = Vec::with_capacity(ds.len());
        let all: Vec<usize> = (0..ds.len()).collect();
        for chunk in all.chunks(32) {
            let (x, labels) = ds.batch(chunk, 0)?;
            let mut tape = Tape::new();
            let vars = params.record(&mut tape, false);
            let input = tape.constant(x);
            let trace = forward_on_tape(spec, &mut tape, &vars, input)?;
            let f = tape.value(trace.features);
            let d = f.shape()[1];
            for (row, &y) in f.data().chunks(d).zip(&labels) {
                xs.push(Tensor::new(vec![d, 1, 1], row.to_vec())?);
                ys.push(y);
            }
        }
        TensorDataset::new(xs, ys)
    };
    let train_f = features(train)?;
    let test_f = features(test)?;
    let d = spec.feature_width();
    let probe = GraphSpec::new(
        Dimensionality::D2,
        vec![d, 1, 1],
        num_classes,
        vec![
            LayerSpec::new("gap", LayerKind::GlobalAvgPool, &[INPUT]),
            LayerSpec::new("head", LayerKind::Dense { classes: num_classes }, &["gap"]),
        ],
    )?;
    let init = init_params::<f32>(&probe, train_config.seed);
    let outcome = crate::training::train(&probe, init, &train_f, Some(&test_f), train_config)?;
    let last = outcome.history.last().expect("at least one epoch");
    Ok(last.val_accuracy.expect("probe evaluates every epoch"))
}
