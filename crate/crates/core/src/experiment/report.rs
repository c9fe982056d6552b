use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{create_dir, write_json, CellResult, ExperimentConfig, Mode};
use crate::datapipe::TrainingFraction;
use crate::error::{Error, Result};
use crate::training::write_curve_csv;

/// One row of `report.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub size: String,
    pub mode: Mode,
    pub seed: u64,
    pub stop_epoch: usize,
    pub test_loss: f64,
    pub test_accuracy: f64,
}

impl From<&CellResult> for ReportRow {
    fn from(c: &CellResult) -> Self {
        ReportRow {
            size: c.size.clone(),
            mode: c.mode,
            seed: c.seed,
            stop_epoch: c.stop_epoch,
            test_loss: c.test_loss,
            test_accuracy: c.test_accuracy,
        }
    }
}

/// All cells of a finished experiment plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub config_fingerprint: String,
    pub seeds: Vec<u64>,
    pub sizes: Vec<String>,
    /// Ordered by seed, then size (as configured), then mode.
    pub cells: Vec<CellResult>,
}

/// Baseline against fine-tuned for one seed and size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedComparison {
    pub seed: u64,
    pub baseline_accuracy: f64,
    pub finetune_accuracy: f64,
    /// Fine-tuned minus baseline.
    pub accuracy_delta: f64,
    pub baseline_loss: f64,
    pub finetune_loss: f64,
    /// (baseline − fine-tuned) / fine-tuned.
    pub loss_improvement_ratio: f64,
    pub baseline_epoch1_val_accuracy: f64,
    pub finetune_epoch1_val_accuracy: f64,
    pub baseline_stop_epoch: usize,
    pub finetune_stop_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SizeSummary {
    pub size: String,
    pub per_seed: Vec<SeedComparison>,
    pub median_baseline_accuracy: f64,
    pub median_finetune_accuracy: f64,
    /// Difference of the two medians.
    pub median_accuracy_delta: f64,
    pub median_baseline_loss: f64,
    pub median_finetune_loss: f64,
    /// Ratio convention applied to the two median losses.
    pub median_loss_improvement_ratio: f64,
    pub median_baseline_epoch1_val_accuracy: f64,
    pub median_finetune_epoch1_val_accuracy: f64,
    pub median_baseline_stop_epoch: f64,
    pub median_finetune_stop_epoch: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub config_fingerprint: String,
    pub seeds: Vec<u64>,
    pub loss_ratio_convention: String,
    pub sizes: Vec<SizeSummary>,
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty slice");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

fn loss_ratio(baseline: f64, finetune: f64) -> f64 {
    (baseline - finetune) / finetune
}

fn epoch1_val_accuracy(cell: &CellResult) -> Result<f64> {
    cell.history
        .first()
        .and_then(|m| m.val_accuracy)
        .ok_or_else(|| Error::invalid(format!("{} {} seed {}: no epoch-1 validation accuracy", cell.size, cell.mode.name(), cell.seed)))
}

impl ComparisonReport {
    /// Check grid completeness and fairness, then order the cells.
    pub fn assemble(config: &ExperimentConfig, cells: Vec<CellResult>) -> Result<Self> {
        let sizes: Vec<String> = config.fractions.iter().map(|f| f.size_name().to_string()).collect();
        Self::from_cells(config.fingerprint(), config.seeds.clone(), sizes, cells)
    }

    pub fn from_cells(config_fingerprint: String, seeds: Vec<u64>, sizes: Vec<String>, cells: Vec<CellResult>) -> Result<Self> {
        let mut by_key: BTreeMap<(u64, String, Mode), CellResult> = BTreeMap::new();
        for cell in cells {
            let key = (cell.seed, cell.size.clone(), cell.mode);
            if !seeds.contains(&cell.seed) || !sizes.contains(&cell.size) {
                return Err(Error::invalid(format!("cell {} {} seed {} is outside the grid", cell.size, cell.mode.name(), cell.seed)));
            }
            if by_key.insert(key, cell).is_some() {
                return Err(Error::invalid("duplicate cell in the report"));
            }
        }
        let mut ordered = Vec::with_capacity(by_key.len());
        for &seed in &seeds {
            for size in &sizes {
                for mode in Mode::ALL {
                    let cell = by_key.remove(&(seed, size.clone(), mode)).ok_or_else(|| {
                        Error::invalid(format!("incomplete grid: no {size} {} cell for seed {seed}", mode.name()))
                    })?;
                    ordered.push(cell);
                }
                let [b, f] = [&ordered[ordered.len() - 2], &ordered[ordered.len() - 1]];
                let same = b.train_manifest == f.train_manifest
                    && b.val_manifest == f.val_manifest
                    && b.test_manifest == f.test_manifest
                    && b.train_config == f.train_config;
                if !same {
                    return Err(Error::invalid(format!(
                        "unfair comparison for {size} seed {seed}: manifests or training config differ between modes"
                    )));
                }
            }
        }
        Ok(ComparisonReport { config_fingerprint, seeds, sizes, cells: ordered })
    }

    pub fn cell(&self, seed: u64, size: &str, mode: Mode) -> Option<&CellResult> {
        self.cells.iter().find(|c| c.seed == seed && c.size == size && c.mode == mode)
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.cells.iter().map(ReportRow::from).collect()
    }

    pub fn summary(&self) -> Result<Summary> {
        let mut sizes = Vec::new();
        for size in &self.sizes {
            let mut per_seed = Vec::new();
            for &seed in &self.seeds {
                let missing = || Error::invalid(format!("no {size} cells for seed {seed}"));
                let b = self.cell(seed, size, Mode::Baseline).ok_or_else(missing)?;
                let f = self.cell(seed, size, Mode::Finetune).ok_or_else(missing)?;
                per_seed.push(SeedComparison {
                    seed,
                    baseline_accuracy: b.test_accuracy,
                    finetune_accuracy: f.test_accuracy,
                    accuracy_delta: f.test_accuracy - b.test_accuracy,
                    baseline_loss: b.test_loss,
                    finetune_loss: f.test_loss,
                    loss_improvement_ratio: loss_ratio(b.test_loss, f.test_loss),
                    baseline_epoch1_val_accuracy: epoch1_val_accuracy(b)?,
                    finetune_epoch1_val_accuracy: epoch1_val_accuracy(f)?,
                    baseline_stop_epoch: b.stop_epoch,
                    finetune_stop_epoch: f.stop_epoch,
                });
            }
            let med = |g: fn(&SeedComparison) -> f64| median(&per_seed.iter().map(g).collect::<Vec<_>>());
            let (mb, mf) = (med(|s| s.baseline_accuracy), med(|s| s.finetune_accuracy));
            let (lb, lf) = (med(|s| s.baseline_loss), med(|s| s.finetune_loss));
            sizes.push(SizeSummary {
                size: size.clone(),
                median_baseline_accuracy: mb,
                median_finetune_accuracy: mf,
                median_accuracy_delta: mf - mb,
                median_baseline_loss: lb,
                median_finetune_loss: lf,
                median_loss_improvement_ratio: loss_ratio(lb, lf),
                median_baseline_epoch1_val_accuracy: med(|s| s.baseline_epoch1_val_accuracy),
                median_finetune_epoch1_val_accuracy: med(|s| s.finetune_epoch1_val_accuracy),
                median_baseline_stop_epoch: med(|s| s.baseline_stop_epoch as f64),
                median_finetune_stop_epoch: med(|s| s.finetune_stop_epoch as f64),
                per_seed,
            });
        }
        Ok(Summary {
            config_fingerprint: self.config_fingerprint.clone(),
            seeds: self.seeds.clone(),
            loss_ratio_convention: "(baseline_loss - finetune_loss) / finetune_loss".into(),
            sizes,
        })
    }
}

pub const REPORT_CSV: &str = "report.csv";
pub const SUMMARY_JSON: &str = "summary.json";

/// Write `report.csv`, `summary.json`, `report.json` and one curve CSV per cell.
pub fn emit_report(report: &ComparisonReport, dir: &Path) -> Result<Summary> {
    create_dir(dir)?;
    let path = dir.join(REPORT_CSV);
    let mut w = csv::Writer::from_path(&path)?;
    for row in report.rows() {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))?;
    let summary = report.summary()?;
    write_json(&dir.join(SUMMARY_JSON), &summary)?;
    write_json(&dir.join("report.json"), report)?;
    let curves = dir.join("curves");
    create_dir(&curves)?;
    for c in &report.cells {
        write_curve_csv(curves.join(format!("seed{}_{}_{}.csv", c.seed, c.size, c.mode.name())), &c.history)?;
    }
    Ok(summary)
}

pub fn read_report_csv(path: &Path) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let rows = r.deserialize().collect::<Result<Vec<ReportRow>, _>>()?;
    let sizes: BTreeSet<&str> = TrainingFraction::ALL.iter().map(|f| f.size_name()).collect();
    if let Some(bad) = rows.iter().find(|r| !sizes.contains(r.size.as_str())) {
        return Err(Error::Format { path: path.to_path_buf(), detail: format!("unknown size `{}`", bad.size) });
    }
    Ok(rows)
}
