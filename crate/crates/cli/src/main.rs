use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use inflate_transfer::datapipe::{
    write_manifest, ClipDataset, ClipStore, Sampling, TrainingFraction,
};
use inflate_transfer::experiment::{
    collect_cells, emit_report, inflate_checkpoint, inflate_network, mini_2d_spec, prepare_data, run_bootstrap_stage,
    run_full_experiment, run_pretrain_stage, run_target_stage, save_cell, target_split, ComparisonReport,
    ExperimentConfig, Layout, Mode, Stores,
};
use inflate_transfer::inflation::consistency_check;
use inflate_transfer::netdef::{init_params, Checkpoint, CheckpointMeta, Dimensionality};
use inflate_transfer::training::evaluate;
use inflate_transfer::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Parser)]
#[command(name = "inflate-transfer", version, about = "Inflated 3D CNN transfer-learning experiments on synthetic sign clips")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (TOML); built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Repetition seed (stage commands) or a single-seed override (run-all).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Size {
    Large,
    Medium,
    Small,
}

impl From<Size> for TrainingFraction {
    fn from(s: Size) -> Self {
        match s {
            Size::Large => TrainingFraction::Full,
            Size::Medium => TrainingFraction::Half,
            Size::Small => TrainingFraction::Quarter,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Finetune,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Baseline => Mode::Baseline,
            ModeArg::Finetune => Mode::Finetune,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalSplit {
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Precision {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic source and target datasets.
    GenSynth {
        #[command(flatten)]
        common: Common,
    },
    /// Write the target train/val/test manifests for every configured size.
    Split {
        #[command(flatten)]
        common: Common,
    },
    /// Train the 2D network on single source frames.
    Bootstrap {
        #[command(flatten)]
        common: Common,
    },
    /// Inflate the bootstrap network and pretrain it on the source clips.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Train one target cell.
    TrainTarget {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        size: Size,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Evaluate a 3D checkpoint on the target validation or test split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: EvalSplit,
    },
    /// Inflate a 2D checkpoint into a 3D one.
    Inflate {
        #[command(flatten)]
        common: Common,
        /// 2D checkpoint; defaults to the bootstrap checkpoint of the seed.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare a 2D network with its inflation on constant-in-time videos.
    CheckInflation {
        #[command(flatten)]
        common: Common,
        /// 2D checkpoint; a random initialization when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        images: usize,
        #[arg(long, value_enum, default_value = "f32")]
        precision: Precision,
        /// Maximum allowed absolute logit deviation.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Run the whole pipeline for every seed and write the report.
    RunAll {
        #[command(flatten)]
        common: Common,
    },
    /// Assemble the report from finished cells.
    Report {
        #[command(flatten)]
        common: Common,
    },
}

fn log(msg: &str) {
    eprintln!("{msg}");
}

struct Ctx {
    config: ExperimentConfig,
    layout: Layout,
    seed: u64,
}

fn setup(common: &Common, override_seeds: bool) -> Result<Ctx> {
    let mut config = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if override_seeds {
        if let Some(seed) = common.seed {
            config.seeds = vec![seed];
        }
    }
    config.validate()?;
    let seed = common.seed.unwrap_or(config.seeds[0]);
    let layout = Layout::new(&common.out);
    std::fs::create_dir_all(&layout.root).with_context(|| format!("creating {}", layout.root.display()))?;
    config.save(layout.effective_config())?;
    Ok(Ctx { config, layout, seed })
}

fn load_ckpt(path: &Path, dim: Dimensionality, what: &str) -> Result<Checkpoint<f32>> {
    if !path.exists() {
        bail!("{what} checkpoint {} is missing; run the earlier stage first", path.display());
    }
    Ok(Checkpoint::<f32>::load(path)?.expect_dimensionality(dim)?)
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenSynth { common } => {
            let ctx = setup(&common, false)?;
            let data = prepare_data(&ctx.config, &ctx.layout, &log)?;
            println!("source: {} clips in {}", data.source.len(), data.source_root.display());
            println!("target: {} clips in {}", data.target.len(), data.target_root.display());
        }
        Command::Split { common } => {
            let ctx = setup(&common, false)?;
            let data = prepare_data(&ctx.config, &ctx.layout, &log)?;
            for &fraction in &ctx.config.fractions {
                let split = target_split(&ctx.config, &data.target, fraction)?;
                let dir = ctx.layout.root.join("splits").join(fraction.size_name());
                write_manifest(dir.join("train.jsonl"), &split.train)?;
                write_manifest(dir.join("val.jsonl"), &split.val)?;
                write_manifest(dir.join("test.jsonl"), &split.test)?;
                println!(
                    "{}: train {} / val {} / test {}",
                    fraction.size_name(),
                    split.train.len(),
                    split.val.len(),
                    split.test.len()
                );
            }
        }
        Command::Bootstrap { common } => {
            let ctx = setup(&common, false)?;
            let data = prepare_data(&ctx.config, &ctx.layout, &log)?;
            let stores = Stores::load(&ctx.config, &data)?;
            let (ckpt, _) = run_bootstrap_stage(&ctx.config, ctx.seed, &data, &stores, &log)?;
            let path = ctx.layout.bootstrap_checkpoint(ctx.seed);
            std::fs::create_dir_all(ctx.layout.seed_dir(ctx.seed))?;
            ckpt.save(&path)?;
            println!("{}", path.display());
        }
        Command::Pretrain { common } => {
            let ctx = setup(&common, false)?;
            let boot = load_ckpt(&ctx.layout.bootstrap_checkpoint(ctx.seed), Dimensionality::D2, "bootstrap")?;
            let data = prepare_data(&ctx.config, &ctx.layout, &log)?;
            let stores = Stores::load(&ctx.config, &data)?;
            let (ckpt, outcome) = run_pretrain_stage(&ctx.config, ctx.seed, &boot, &data, &stores, &log)?;
            if !outcome.threshold_reached {
                log("pretraining stopped at max_epochs below the accuracy threshold");
            }
            let path = ctx.layout.pretrain_checkpoint(ctx.seed);
            ckpt.save(&path)?;
            println!("{}", path.display());
        }
        Command::TrainTarget { common, size, mode } => {
            let ctx = setup(&common, false)?;
            let (fraction, mode) = (TrainingFraction::from(size), Mode::from(mode));
            let boot = load_ckpt(&ctx.layout.bootstrap_checkpoint(ctx.seed), Dimensionality::D2, "bootstrap")?;
            let pre = match mode {
                Mode::Finetune => Some(load_ckpt(&ctx.layout.pretrain_checkpoint(ctx.seed), Dimensionality::D3, "pretrained")?),
                Mode::Baseline => None,
            };
            let data = prepare_data(&ctx.config, &ctx.layout, &log)?;
            let stores = Stores::load(&ctx.config, &data)?;
            let (ckpt, cell) =
                run_target_stage(&ctx.config, ctx.seed, fraction, mode, &boot, pre.as_ref(), &data, &stores, &log)?;
            let dir = ctx.layout.cell_dir(ctx.seed, fraction, mode);
            save_cell(&dir, &ckpt, &cell)?;
            println!(
                "{} {} seed {}: stop epoch {}, test accuracy {:.4}, test loss {:.4}",
                cell.size,
                mode.name(),
                cell.seed,
                cell.stop_epoch,
                cell.test_accuracy,
                cell.test_loss
            );
        }
        Command::Evaluate { common, checkpoint, split } => {
            let ctx = setup(&common, false)?;
            let ckpt = load_ckpt(&checkpoint, Dimensionality::D3, "evaluated")?;
            let data = prepare_data(&ctx.config, &ctx.layout, &log)?;
            let parts = target_split(&ctx.config, &data.target, TrainingFraction::Full)?;
            let entries = match split {
                EvalSplit::Val => parts.val,
                EvalSplit::Test => parts.test,
            };
            let store = Arc::new(ClipStore::load(&data.target_root, &entries, ctx.config.geometry.image_size)?);
            let ds = ClipDataset::new(entries, store, ctx.config.geometry.temporal_depth, Sampling::Fixed, ctx.config.eval_seed)?;
            let (loss, accuracy) = evaluate(&ckpt.spec, &ckpt.params, &ds, ctx.config.finetune.batch_size)?;
            print_json(&serde_json::json!({
                "checkpoint": checkpoint.display().to_string(),
                "split": match split { EvalSplit::Val => "val", EvalSplit::Test => "test" },
                "loss": loss,
                "accuracy": accuracy,
            }))?;
        }
        Command::Inflate { common, checkpoint } => {
            let ctx = setup(&common, false)?;
            let src = checkpoint.unwrap_or_else(|| ctx.layout.bootstrap_checkpoint(ctx.seed));
            let ckpt = load_ckpt(&src, Dimensionality::D2, "2D")?;
            let (spec, params) = inflate_checkpoint(&ctx.config, &ckpt)?;
            let mut meta = CheckpointMeta { dataset: ckpt.meta.dataset.clone(), ..Default::default() };
            meta.extra.insert("inflated_from".into(), src.display().to_string());
            let out = ctx.layout.seed_dir(ctx.seed).join("inflated_3d.ckpt");
            std::fs::create_dir_all(ctx.layout.seed_dir(ctx.seed))?;
            Checkpoint::new(spec, params, meta)?.save(&out)?;
            println!("{}", out.display());
        }
        Command::CheckInflation { common, checkpoint, images, precision, tolerance } => {
            let ctx = setup(&common, false)?;
            let report = match precision {
                Precision::F32 => check_inflation::<f32>(&ctx, checkpoint.as_deref(), images, tolerance.unwrap_or(1e-5))?,
                Precision::F64 => check_inflation::<f64>(&ctx, checkpoint.as_deref(), images, tolerance.unwrap_or(1e-10))?,
            };
            print_json(&serde_json::json!({
                "max_deviation": report.max_deviation,
                "tolerance": report.tolerance,
                "passed": report.passed,
            }))?;
            if !report.passed {
                bail!("inflation consistency deviation {} exceeds {}", report.max_deviation, report.tolerance);
            }
        }
        Command::RunAll { common } => {
            let ctx = setup(&common, true)?;
            let report = run_full_experiment(&ctx.config, &ctx.layout, &log)?;
            print_summary(&report)?;
        }
        Command::Report { common } => {
            let ctx = setup(&common, true)?;
            let cells = collect_cells(&ctx.config, &ctx.layout)?;
            let report = ComparisonReport::assemble(&ctx.config, cells)?;
            emit_report(&report, &ctx.layout.report_dir())?;
            print_summary(&report)?;
        }
    }
    Ok(())
}

fn check_inflation<T: inflate_transfer::Scalar>(
    ctx: &Ctx,
    checkpoint: Option<&Path>,
    images: usize,
    tolerance: f64,
) -> Result<inflate_transfer::inflation::ConsistencyReport> {
    let ckpt = match checkpoint {
        Some(path) => load_ckpt(path, Dimensionality::D2, "2D")?,
        None => {
            let spec = mini_2d_spec(&ctx.config)?;
            let params = init_params::<f32>(&spec, ctx.seed);
            Checkpoint::new(spec, params, CheckpointMeta::default())?
        }
    };
    let params2d = ckpt.params.cast::<T>();
    let (spec3d, params3d) = inflate_network(&ctx.config, &ckpt.spec, &params2d)?;
    let side = ctx.config.geometry.image_size;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let values: Vec<f64> = (0..images * 3 * side * side).map(|_| rng.random_range(-1.0..1.0)).collect();
    let batch = Tensor::<T>::from_f64(vec![images, 3, side, side], &values)?;
    Ok(consistency_check(&ckpt.spec, &params2d, &spec3d, &params3d, &batch, tolerance)?)
}

fn print_summary(report: &ComparisonReport) -> Result<()> {
    let summary = report.summary()?;
    println!("size    baseline_acc finetune_acc delta   baseline_loss finetune_loss loss_ratio");
    for s in &summary.sizes {
        println!(
            "{:<7} {:>12.4} {:>12.4} {:>+7.4} {:>13.4} {:>13.4} {:>10.4}",
            s.size,
            s.median_baseline_accuracy,
            s.median_finetune_accuracy,
            s.median_accuracy_delta,
            s.median_baseline_loss,
            s.median_finetune_loss,
            s.median_loss_improvement_ratio
        );
    }
    println!("(medians over seeds {:?}; config {})", summary.seeds, &summary.config_fingerprint[..12]);
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
