//! Minibatch SGD with momentum, epoch metrics and stop rules.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::datapipe::{derive_seed, Dataset};
use crate::error::{Error, Result};
use crate::netdef::{forward_on_tape, GraphSpec, ParamSet};
use crate::ops::{accuracy, softmax_cross_entropy};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum StopRule {
    /// Run every epoch, keep the parameters of the lowest validation loss.
    EarlyStopOnValLoss,
    /// Stop at the first epoch whose full-training-set accuracy reaches `theta`.
    TrainAccuracyThreshold { theta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub stop_rule: StopRule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.01,
            momentum: 0.9,
            batch_size: 32,
            max_epochs: 40,
            stop_rule: StopRule::EarlyStopOnValLoss,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::invalid(format!("momentum {} must lie in [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::invalid("batch size and epoch count must be positive"));
        }
        if let StopRule::TrainAccuracyThreshold { theta } = self.stop_rule {
            if !(theta > 0.0 && theta <= 1.0) {
                return Err(Error::invalid(format!("accuracy threshold {theta} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// Per-parameter velocities, zero-initialized.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumState<T: Scalar> {
    pub velocity: ParamSet<T>,
}

impl<T: Scalar> MomentumState<T> {
    pub fn zeros_like(params: &ParamSet<T>) -> Self {
        let mut velocity = ParamSet::new();
        for (k, t) in params.iter() {
            velocity.insert(k.clone(), Tensor::zeros(t.shape().to_vec()));
        }
        MomentumState { velocity }
    }
}

/// `v ← mu·v + g; w ← w − lr·v` for every key, in key order.
pub fn sgd_momentum_step<T: Scalar>(
    params: &mut ParamSet<T>,
    grads: &BTreeMap<String, Tensor<T>>,
    state: &mut MomentumState<T>,
    lr: f64,
    mu: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocity.len() {
        return Err(Error::invalid("parameters, gradients and velocities must share one key set"));
    }
    for (key, g) in grads {
        if !g.is_finite() {
            return Err(Error::NonFinite { key: key.clone() });
        }
        let shape_ok = |t: Option<&Tensor<T>>| t.is_some_and(|t| t.shape() == g.shape());
        if !shape_ok(params.get(key)) || !shape_ok(state.velocity.get(key)) {
            return Err(Error::invalid(format!("gradient `{key}` has no matching parameter or velocity")));
        }
    }
    let (lr, mu) = (T::from_f64(lr), T::from_f64(mu));
    for (key, g) in grads {
        let v = state.velocity.get_mut(key).expect("checked above");
        for (vi, &gi) in v.data_mut().iter_mut().zip(g.data()) {
            *vi = mu * *vi + gi;
        }
        let w = params.get_mut(key).expect("checked above");
        for (wi, &vi) in w.data_mut().iter_mut().zip(v.data()) {
            *wi = *wi - lr * vi;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
    pub wall_seconds: f64,
}

/// Batch sizes for `n` examples; the final partial batch is kept.
pub fn batch_partition(n: usize, batch_size: usize) -> Vec<usize> {
    (0..n).step_by(batch_size.max(1)).map(|start| batch_size.min(n - start)).collect()
}

/// Mean loss and gradients of one batch.
pub fn batch_gradients<T: Scalar>(
    spec: &GraphSpec,
    params: &ParamSet<T>,
    input: Tensor<T>,
    labels: &[usize],
) -> Result<(f64, f64, BTreeMap<String, Tensor<T>>)> {
    let mut tape = Tape::new();
    let vars = params.record(&mut tape, true);
    let x = tape.constant(input);
    let trace = forward_on_tape(spec, &mut tape, &vars, x)?;
    let acc = accuracy(tape.value(trace.logits), labels)?;
    let loss = tape.softmax_cross_entropy(trace.logits, labels)?;
    let loss_value = tape.value(loss).data()[0].to_f64();
    tape.backward(loss)?;
    let mut grads = BTreeMap::new();
    for (key, var) in vars {
        let g = tape.grad(var).expect("tracked parameter").to_vec();
        grads.insert(key, Tensor::new(tape.value(var).shape().to_vec(), g)?);
    }
    Ok((loss_value, acc, grads))
}

/// One pass over a shuffled `dataset`. Returns the batch-size-weighted
/// mean training loss and accuracy.
pub fn run_epoch<T: Scalar, R: Rng + ?Sized>(
    spec: &GraphSpec,
    params: &mut ParamSet<T>,
    state: &mut MomentumState<T>,
    dataset: &dyn Dataset,
    config: &TrainConfig,
    epoch: usize,
    rng: &mut R,
) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot train on an empty dataset"));
    }
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    order.shuffle(rng);
    let (mut loss_sum, mut correct) = (0.0, 0.0);
    for chunk in order.chunks(config.batch_size) {
        let (x, labels) = dataset.batch(chunk, epoch)?;
        let (loss, acc, grads) = batch_gradients(spec, params, x.cast(), &labels)?;
        sgd_momentum_step(params, &grads, state, config.learning_rate, config.momentum)?;
        loss_sum += loss * chunk.len() as f64;
        correct += acc * chunk.len() as f64;
    }
    let n = dataset.len() as f64;
    Ok((loss_sum / n, correct / n))
}

/// Batch-size-weighted mean loss and accuracy, without updates. `epoch`
/// selects the frame draw of per-epoch datasets.
pub fn evaluate_at<T: Scalar>(
    spec: &GraphSpec,
    params: &ParamSet<T>,
    dataset: &dyn Dataset,
    batch_size: usize,
    epoch: usize,
) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty dataset"));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let (mut loss_sum, mut correct) = (0.0, 0.0);
    for chunk in all.chunks(batch_size.max(1)) {
        let (x, labels) = dataset.batch(chunk, epoch)?;
        let logits = crate::netdef::forward(spec, params, &x.cast())?;
        loss_sum += softmax_cross_entropy(&logits, &labels)?.to_f64() * chunk.len() as f64;
        correct += accuracy(&logits, &labels)? * chunk.len() as f64;
    }
    let n = dataset.len() as f64;
    Ok((loss_sum / n, correct / n))
}

pub fn evaluate<T: Scalar>(
    spec: &GraphSpec,
    params: &ParamSet<T>,
    dataset: &dyn Dataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    evaluate_at(spec, params, dataset, batch_size, 0)
}

/// 1-based epoch of the smallest value; ties go to the earliest epoch.
pub fn select_best_epoch(val_losses: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in val_losses.iter().enumerate() {
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i + 1)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Scalar> {
    /// Parameters of the selected epoch.
    pub params: ParamSet<T>,
    /// 1-based epoch the parameters come from.
    pub selected_epoch: usize,
    pub history: Vec<EpochMetrics>,
    /// Whether the accuracy threshold was met (always true for early stopping).
    pub threshold_reached: bool,
}

pub fn train<T: Scalar>(
    spec: &GraphSpec,
    params: ParamSet<T>,
    train_ds: &dyn Dataset,
    val_ds: Option<&dyn Dataset>,
    config: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with_observer(spec, params, train_ds, val_ds, config, |_| {})
}

/// [`train`], calling `observe` after every epoch.
pub fn train_with_observer<T: Scalar>(
    spec: &GraphSpec,
    mut params: ParamSet<T>,
    train_ds: &dyn Dataset,
    val_ds: Option<&dyn Dataset>,
    config: &TrainConfig,
    mut observe: impl FnMut(&EpochMetrics),
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    params.validate(spec)?;
    match (config.stop_rule, val_ds.is_some()) {
        (StopRule::EarlyStopOnValLoss, false) => {
            return Err(Error::invalid("early stopping needs a validation dataset"))
        }
        (StopRule::TrainAccuracyThreshold { .. }, true) => {
            return Err(Error::invalid("the accuracy-threshold rule trains without a validation dataset"))
        }
        _ => {}
    }
    let mut state = MomentumState::zeros_like(&params);
    let mut history = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, usize, ParamSet<T>)> = None;
    for epoch in 1..=config.max_epochs {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, "shuffle", &[epoch as u64]));
        let (train_loss, mut train_accuracy) =
            run_epoch(spec, &mut params, &mut state, train_ds, config, epoch, &mut rng)?;
        let (mut val_loss, mut val_accuracy) = (None, None);
        match config.stop_rule {
            StopRule::EarlyStopOnValLoss => {
                let (l, a) = evaluate(spec, &params, val_ds.expect("checked above"), config.batch_size)?;
                val_loss = Some(l);
                val_accuracy = Some(a);
            }
            StopRule::TrainAccuracyThreshold { .. } => {
                train_accuracy = evaluate_at(spec, &params, train_ds, config.batch_size, epoch)?.1;
            }
        }
        let metrics = EpochMetrics {
            epoch,
            train_loss,
            train_accuracy,
            val_loss,
            val_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        observe(&metrics);
        history.push(metrics);
        match config.stop_rule {
            StopRule::EarlyStopOnValLoss => {
                let l = val_loss.expect("set above");
                if best.as_ref().is_none_or(|(b, _, _)| l < *b) {
                    best = Some((l, epoch, params.clone()));
                }
            }
            StopRule::TrainAccuracyThreshold { theta } => {
                if train_accuracy >= theta {
                    return Ok(TrainOutcome { params, selected_epoch: epoch, history, threshold_reached: true });
                }
            }
        }
    }
    match best {
        Some((_, epoch, best_params)) => {
            Ok(TrainOutcome { params: best_params, selected_epoch: epoch, history, threshold_reached: true })
        }
        None => Ok(TrainOutcome { params, selected_epoch: config.max_epochs, history, threshold_reached: false }),
    }
}

/// One JSON record per epoch.
pub fn write_metrics_jsonl(path: impl AsRef<Path>, history: &[EpochMetrics]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for m in history {
        serde_json::to_writer(&mut out, m)?;
        out.write_all(b"\n").expect("in-memory write");
    }
    std::fs::write(path, out).map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

/// Curve CSV: `epoch,train_loss,train_acc,val_loss,val_acc`; absent
/// validation values are left empty.
pub fn write_curve_csv(path: impl AsRef<Path>, history: &[EpochMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(["epoch", "train_loss", "train_acc", "val_loss", "val_acc"])?;
    let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for m in history {
        w.write_record([
            m.epoch.to_string(),
            m.train_loss.to_string(),
            m.train_accuracy.to_string(),
            opt(m.val_loss),
            opt(m.val_accuracy),
        ])?;
    }
    w.flush().map_err(|e| Error::io("flushing curve csv", e))
}
