//! Training loop (Adam on mean-squared error), forecast metrics, report
//! assembly, and the ablation harness.
//!
//! One model is trained per forecast length. Each epoch shuffles the training
//! windows, takes one Adam step per batch on the batch-mean gradient, then
//! records the epoch's training loss and the full-validation loss; the
//! parameters returned are those of the best-validation epoch. A non-finite
//! training loss aborts immediately with the offending optimizer step.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{naive_forecast, PreparedData, WindowSet};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig, Variant};
use crate::tensor::adam::{adam_step, AdamConfig};
use crate::tensor::tape::{GradBuffer, Tape};
use crate::tensor::{Element, Tensor};

// ---------------------------------------------------------------------------
// Configuration and history records.
// ---------------------------------------------------------------------------

/// Metric used to pick the epoch whose parameters are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EarlyMetric {
    ValMse,
}

impl Default for EarlyMetric {
    fn default() -> Self {
        EarlyMetric::ValMse
    }
}

/// Optimizer-loop hyperparameters.
///
/// `epochs = 0` is allowed and returns the freshly initialized parameters
/// unchanged; `batch_size` and `learning_rate` must be positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub shuffle_seed: u64,
    pub early_metric: EarlyMetric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            shuffle_seed: 0,
            early_metric: EarlyMetric::ValMse,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config(
                "train.learning_rate",
                format!("must be a positive finite real, got {}", self.learning_rate),
            ));
        }
        Ok(())
    }
}

/// Losses recorded after one epoch's parameter updates.
///
/// `val_loss` is NaN when the validation split yields no windows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// A trained model plus everything the reports need.
#[derive(Debug)]
pub struct TrainOutcome<E: Element> {
    pub model: Model<E>,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept; `None` when no epoch produced a
    /// finite validation loss (the final parameters are kept then).
    pub best_epoch: Option<usize>,
    /// Total optimizer steps taken: `epochs · ⌈n_samples / batch_size⌉`.
    pub steps: u64,
}

// ---------------------------------------------------------------------------
// Metrics.
// ---------------------------------------------------------------------------

/// Mean squared error over all elements (accumulated in f64, storage order).
pub fn mse<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<f64> {
    metric_inputs_check(pred, target)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let d = p.as_f64() - t.as_f64();
            d * d
        })
        .sum();
    Ok(sum / n)
}

/// Mean absolute error over all elements (accumulated in f64, storage order).
pub fn mae<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<f64> {
    metric_inputs_check(pred, target)?;
    let n = pred.len() as f64;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| (p.as_f64() - t.as_f64()).abs())
        .sum();
    Ok(sum / n)
}

fn metric_inputs_check<E: Element>(pred: &Tensor<E>, target: &Tensor<E>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::shape(
            "metric",
            crate::tensor::shape_string(target.shape()),
            crate::tensor::shape_string(pred.shape()),
        ));
    }
    if pred.len() == 0 {
        return Err(Error::contract("metric", "empty tensors have no mean error"));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training.
// ---------------------------------------------------------------------------

/// The window visit order for one epoch: a seeded permutation of
/// `0..n_samples`. Distinct epochs use distinct stream seeds.
pub fn shuffled_indices(n_samples: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(epoch));
    let mut indices: Vec<usize> = (0..n_samples).collect();
    indices.shuffle(&mut rng);
    indices
}

/// Trains a freshly initialized model on the prepared data.
///
/// Every epoch shuffles the training windows and takes one Adam step per
/// batch on the mean of the per-window gradients; after the epoch the mean
/// training loss (over windows, in visit order) and the mean validation loss
/// are recorded. The parameters kept are those of the epoch with the lowest
/// validation loss. A non-finite batch loss aborts with the optimizer step at
/// which it was observed, before any further update.
pub fn train<E: Element>(
    cfg: ModelConfig,
    tcfg: &TrainConfig,
    data: &PreparedData<E>,
    static_adjacency: Option<Tensor<E>>,
) -> Result<TrainOutcome<E>> {
    tcfg.validate()?;
    if data.train.count() == 0 {
        return Err(Error::contract(
            "train",
            "the training split yields no windows",
        ));
    }
    if !cfg.use_adaptive && static_adjacency.is_none() {
        return Err(Error::config(
            "model.use_adaptive",
            "a static adjacency is required when the learned adjacency is disabled",
        ));
    }

    let mut model = Model::init(cfg)?;
    if let Some(a) = static_adjacency {
        model = model.with_static_adjacency(a)?;
    }
    let adam_cfg = AdamConfig::with_learning_rate(tcfg.learning_rate);
    adam_cfg.validate()?;

    let n_samples = data.train.count();
    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut steps: u64 = 0;
    let mut best: Option<(usize, f64, Vec<Tensor<E>>)> = None;

    for epoch in 0..tcfg.epochs {
        let order = shuffled_indices(n_samples, tcfg.shuffle_seed, epoch as u64);
        let mut epoch_loss_sum = 0.0;

        for batch in order.chunks(tcfg.batch_size) {
            // Per-window losses and gradients in parallel; the merge below is
            // sequential in batch order so the reduction is deterministic.
            let contributions: Vec<(f64, GradBuffer<E>)> = batch
                .par_iter()
                .map(|&i| -> Result<(f64, GradBuffer<E>)> {
                    let sample = data.train.sample(i);
                    let mut tape = Tape::new();
                    let pred =
                        model.forward_on_tape(&mut tape, &sample.x, sample.hid_index, sample.diw_index)?;
                    let loss = tape.mse(pred, &sample.y)?;
                    let loss_value = tape.value(loss).data()[0].as_f64();
                    let mut buf = GradBuffer::for_store(&model.store);
                    tape.backward_into(loss, &mut buf)?;
                    Ok((loss_value, buf))
                })
                .collect::<Result<_>>()?;

            steps += 1;
            let mut grads = GradBuffer::for_store(&model.store);
            let mut batch_loss_sum = 0.0;
            for (loss, buf) in contributions {
                batch_loss_sum += loss;
                grads.merge(buf)?;
            }
            if !(batch_loss_sum / batch.len() as f64).is_finite() {
                return Err(Error::Diverged { step: steps });
            }
            grads.scale(E::of_f64(1.0 / batch.len() as f64));
            grads.apply_to(&mut model.store)?;
            adam_step(&mut model.store, &adam_cfg)?;
            epoch_loss_sum += batch_loss_sum;
        }

        let train_loss = epoch_loss_sum / n_samples as f64;
        let val_loss = if data.val.count() > 0 {
            evaluate_model(&model, &data.val)?.mse
        } else {
            f64::NAN
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });
        let improved = match &best {
            None => val_loss.is_finite(),
            Some((_, best_val, _)) => val_loss.is_finite() && val_loss < *best_val,
        };
        if improved {
            best = Some((epoch, val_loss, model.store.snapshot()));
        }
    }

    let best_epoch = match best {
        Some((epoch, _, snapshot)) => {
            model.store.restore(&snapshot)?;
            Some(epoch)
        }
        None => None,
    };
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
        steps,
    })
}

// ---------------------------------------------------------------------------
// Evaluation.
// ---------------------------------------------------------------------------

/// Metrics of one model (or baseline) at one forecast length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon: usize,
    pub mse: f64,
    pub mae: f64,
}

/// Evaluates a model over every window of the set (windows in parallel,
/// reduced in window order).
pub fn evaluate_model<E: Element>(
    model: &Model<E>,
    windows: &WindowSet<E>,
) -> Result<HorizonMetrics> {
    evaluate_windows(windows, |sample| {
        model.forward(&sample.x, sample.hid_index, sample.diw_index)
    })
}

/// Evaluates the periodic-repeat baseline over every window of the set.
/// Deterministic: no parameters, no randomness.
pub fn evaluate_naive<E: Element>(windows: &WindowSet<E>) -> Result<HorizonMetrics> {
    let s = windows.output_len();
    evaluate_windows(windows, |sample| naive_forecast(&sample.x, s))
}

fn evaluate_windows<E: Element>(
    windows: &WindowSet<E>,
    predict: impl Fn(&crate::data::WindowSample<E>) -> Result<Tensor<E>> + Sync,
) -> Result<HorizonMetrics> {
    let count = windows.count();
    if count == 0 {
        return Err(Error::contract(
            "evaluate",
            "the split yields no evaluation windows",
        ));
    }
    let per_window: Vec<(f64, f64)> = (0..count)
        .into_par_iter()
        .map(|i| -> Result<(f64, f64)> {
            let sample = windows.sample(i);
            let pred = predict(&sample)?;
            Ok((mse(&pred, &sample.y)?, mae(&pred, &sample.y)?))
        })
        .collect::<Result<_>>()?;
    let n = per_window.len() as f64;
    let (sum_mse, sum_mae) = per_window
        .iter()
        .fold((0.0, 0.0), |(a, b), &(m, e)| (a + m, b + e));
    Ok(HorizonMetrics {
        horizon: windows.output_len(),
        mse: sum_mse / n,
        mae: sum_mae / n,
    })
}

/// Writes per-window forecasts against the truth for one variate as CSV
/// (`window,step,prediction,truth`), for up to `max_windows` windows.
pub fn plot_data_csv<E: Element>(
    model: &Model<E>,
    windows: &WindowSet<E>,
    node: usize,
    max_windows: usize,
) -> Result<String> {
    let n = windows.slice().n_variates();
    if node >= n {
        return Err(Error::config(
            "plot.node",
            format!("variate index {node} out of range for {n} variates"),
        ));
    }
    let s = windows.output_len();
    let mut out = String::from("window,step,prediction,truth\n");
    for i in 0..windows.count().min(max_windows) {
        let sample = windows.sample(i);
        let pred = model.forward(&sample.x, sample.hid_index, sample.diw_index)?;
        for t in 0..s {
            let p = pred.data()[node * s + t].as_f64();
            let y = sample.y.data()[node * s + t].as_f64();
            let _ = writeln!(out, "{i},{t},{p},{y}");
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reports.
// ---------------------------------------------------------------------------

/// Metrics per forecast length plus their averages, the configuration
/// fingerprint, wall-clock time, and the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastReport {
    pub per_horizon: Vec<HorizonMetrics>,
    pub averaged_mse: f64,
    pub averaged_mae: f64,
    pub config_fingerprint: String,
    pub wall_seconds: f64,
    pub history: Vec<EpochRecord>,
}

impl ForecastReport {
    /// Builds a report, computing the averaged metrics as the arithmetic mean
    /// of the per-horizon entries.
    pub fn assemble(
        per_horizon: Vec<HorizonMetrics>,
        config_fingerprint: String,
        wall_seconds: f64,
        history: Vec<EpochRecord>,
    ) -> Result<Self> {
        if per_horizon.is_empty() {
            return Err(Error::contract(
                "report",
                "at least one horizon entry is required",
            ));
        }
        let n = per_horizon.len() as f64;
        let averaged_mse = per_horizon.iter().map(|m| m.mse).sum::<f64>() / n;
        let averaged_mae = per_horizon.iter().map(|m| m.mae).sum::<f64>() / n;
        Ok(ForecastReport {
            per_horizon,
            averaged_mse,
            averaged_mae,
            config_fingerprint,
            wall_seconds,
            history,
        })
    }

    /// Serializes as machine-parsable `key=value` lines. Floats use the
    /// shortest round-tripping decimal form, so [`ForecastReport::from_key_value`]
    /// reconstructs the exact report. Lines starting with `#` are comments.
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "fingerprint={}", self.config_fingerprint);
        let _ = writeln!(out, "wall_seconds={}", self.wall_seconds);
        let horizons: Vec<String> = self
            .per_horizon
            .iter()
            .map(|m| m.horizon.to_string())
            .collect();
        let _ = writeln!(out, "horizons={}", horizons.join(","));
        for m in &self.per_horizon {
            let _ = writeln!(out, "horizon.{}.mse={}", m.horizon, m.mse);
            let _ = writeln!(out, "horizon.{}.mae={}", m.horizon, m.mae);
        }
        let _ = writeln!(out, "averaged.mse={}", self.averaged_mse);
        let _ = writeln!(out, "averaged.mae={}", self.averaged_mae);
        let _ = writeln!(out, "epochs_recorded={}", self.history.len());
        for record in &self.history {
            let _ = writeln!(
                out,
                "epoch.{}.train_loss={}",
                record.epoch, record.train_loss
            );
            let _ = writeln!(out, "epoch.{}.val_loss={}", record.epoch, record.val_loss);
        }
        out
    }

    /// Parses the `key=value` form produced by [`ForecastReport::to_key_value`].
    pub fn from_key_value(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (line_no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::contract("report.parse", format!("line {} has no '='", line_no + 1))
            })?;
            map.insert(key.to_string(), value.to_string());
        }
        let get = |key: &str| -> Result<&String> {
            map.get(key)
                .ok_or_else(|| Error::contract("report.parse", format!("missing key '{key}'")))
        };
        let parse_f64 = |key: &str| -> Result<f64> {
            f64::from_str(get(key)?).map_err(|e| {
                Error::contract("report.parse", format!("key '{key}' is not a real: {e}"))
            })
        };
        let parse_usize = |key: &str| -> Result<usize> {
            get(key)?.parse().map_err(|e| {
                Error::contract("report.parse", format!("key '{key}' is not an integer: {e}"))
            })
        };

        let horizons_raw = get("horizons")?;
        let mut per_horizon = Vec::new();
        for part in horizons_raw.split(',').filter(|p| !p.is_empty()) {
            let horizon: usize = part.parse().map_err(|e| {
                Error::contract("report.parse", format!("bad horizon '{part}': {e}"))
            })?;
            per_horizon.push(HorizonMetrics {
                horizon,
                mse: parse_f64(&format!("horizon.{horizon}.mse"))?,
                mae: parse_f64(&format!("horizon.{horizon}.mae"))?,
            });
        }
        if per_horizon.is_empty() {
            return Err(Error::contract("report.parse", "no horizons listed"));
        }
        let epochs_recorded = parse_usize("epochs_recorded")?;
        let mut history = Vec::with_capacity(epochs_recorded);
        for epoch in 0..epochs_recorded {
            history.push(EpochRecord {
                epoch,
                train_loss: parse_f64(&format!("epoch.{epoch}.train_loss"))?,
                val_loss: parse_f64(&format!("epoch.{epoch}.val_loss"))?,
            });
        }
        Ok(ForecastReport {
            per_horizon,
            averaged_mse: parse_f64("averaged.mse")?,
            averaged_mae: parse_f64("averaged.mae")?,
            config_fingerprint: get("fingerprint")?.clone(),
            wall_seconds: parse_f64("wall_seconds")?,
            history,
        })
    }
}

/// 16-hex-digit FNV-1a fingerprint of the model and training configuration.
pub fn config_fingerprint(cfg: &ModelConfig, tcfg: &TrainConfig) -> String {
    let model = serde_json::to_string(cfg).expect("model config serializes");
    let tr = serde_json::to_string(tcfg).expect("train config serializes");
    fingerprint_parts(&[&model, &tr])
}

/// FNV-1a over the parts with a separator fold between them, rendered as 16
/// hex digits.
pub fn fingerprint_parts(parts: &[&str]) -> String {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut h = OFFSET;
    for part in parts {
        for &b in part.as_bytes() {
            h ^= u64::from(b);
            h = h.wrapping_mul(PRIME);
        }
        h ^= 0xff;
        h = h.wrapping_mul(PRIME);
    }
    format!("{h:016x}")
}

// ---------------------------------------------------------------------------
// Ablation harness.
// ---------------------------------------------------------------------------

/// One component removal or substitution applied on top of a base
/// configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AblationSwitch {
    /// Freeze out the learned per-variate embedding table.
    WoVariate,
    /// Drop the hour-in-day embedding table.
    WoHid,
    /// Drop the day-in-week embedding table.
    WoDiw,
    /// Replace the learned adjacency with a fixed one loaded from a file.
    WoAdp,
    /// Remove the grouped feature convolution (plain graph convolution).
    WoGfc,
    /// Replace the bypass aggregation with plain graph-convolution mixing
    /// while keeping the grouped feature convolution.
    Gcn,
    /// Plain graph convolution, no grouping at all.
    Plain,
}

impl AblationSwitch {
    pub const ALL: [AblationSwitch; 7] = [
        AblationSwitch::WoVariate,
        AblationSwitch::WoHid,
        AblationSwitch::WoDiw,
        AblationSwitch::WoAdp,
        AblationSwitch::WoGfc,
        AblationSwitch::Gcn,
        AblationSwitch::Plain,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationSwitch::WoVariate => "w/o-variate",
            AblationSwitch::WoHid => "w/o-hid",
            AblationSwitch::WoDiw => "w/o-diw",
            AblationSwitch::WoAdp => "w/o-adp",
            AblationSwitch::WoGfc => "w/o-gfc",
            AblationSwitch::Gcn => "gcn",
            AblationSwitch::Plain => "plain",
        }
    }
}

impl FromStr for AblationSwitch {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "w/o-variate" | "wo-variate" => Ok(AblationSwitch::WoVariate),
            "w/o-hid" | "wo-hid" => Ok(AblationSwitch::WoHid),
            "w/o-diw" | "wo-diw" => Ok(AblationSwitch::WoDiw),
            "w/o-adp" | "wo-adp" => Ok(AblationSwitch::WoAdp),
            "w/o-gfc" | "wo-gfc" => Ok(AblationSwitch::WoGfc),
            "gcn" => Ok(AblationSwitch::Gcn),
            "plain" => Ok(AblationSwitch::Plain),
            other => Err(Error::config(
                "ablation.switch",
                format!(
                    "unknown switch '{other}'; expected one of \
                     w/o-variate, w/o-hid, w/o-diw, w/o-adp, w/o-gfc, gcn, plain"
                ),
            )),
        }
    }
}

/// Applies a switch set to a base configuration.
///
/// The layer-substitution switches (`w/o-gfc`, `gcn`, `plain`) are mutually
/// contradictory; `w/o-adp` requires a static adjacency to be available.
pub fn apply_switches(
    base: &ModelConfig,
    switches: &[AblationSwitch],
    has_static_adjacency: bool,
) -> Result<ModelConfig> {
    let mut variant_switches: Vec<AblationSwitch> = Vec::new();
    for &s in switches {
        if matches!(
            s,
            AblationSwitch::WoGfc | AblationSwitch::Gcn | AblationSwitch::Plain
        ) && !variant_switches.contains(&s)
        {
            variant_switches.push(s);
        }
    }
    if variant_switches.len() > 1 {
        let names: Vec<&str> = variant_switches.iter().map(|s| s.as_str()).collect();
        return Err(Error::config(
            "ablation.switches",
            format!(
                "contradictory layer substitutions: {} each demand a different layer",
                names.join(" and ")
            ),
        ));
    }

    let mut cfg = base.clone();
    for &s in switches {
        match s {
            AblationSwitch::WoVariate => cfg.use_variate = false,
            AblationSwitch::WoHid => cfg.use_hid = false,
            AblationSwitch::WoDiw => cfg.use_diw = false,
            AblationSwitch::WoAdp => {
                if !has_static_adjacency {
                    return Err(Error::config(
                        "ablation.w/o-adp",
                        "requires a static adjacency file",
                    ));
                }
                cfg.use_adaptive = false;
            }
            AblationSwitch::WoGfc | AblationSwitch::Plain => cfg.variant = Variant::PlainGcn,
            AblationSwitch::Gcn => cfg.variant = Variant::GcnGfc,
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// One trained variant's test metrics and trainable-parameter count.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    pub mse: f64,
    pub mae: f64,
    pub trainable_scalars: usize,
    pub best_epoch: Option<usize>,
}

/// Side-by-side comparison of the base model and one switched variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub horizon: usize,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// Renders an aligned text table.
    pub fn to_table(&self) -> String {
        let label_width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain(std::iter::once("variant".len()))
            .max()
            .unwrap_or(7);
        let mut out = format!(
            "{:<label_width$}  {:>12}  {:>12}  {:>10}\n",
            "variant", "mse", "mae", "params"
        );
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<label_width$}  {:>12.6}  {:>12.6}  {:>10}",
                row.label, row.mse, row.mae, row.trainable_scalars
            );
        }
        out
    }
}

/// Trains and evaluates the base configuration and, when the switch set is
/// non-empty, the switched variant, under identical seeds and data.
pub fn ablation_run<E: Element>(
    base: &ModelConfig,
    switches: &[AblationSwitch],
    tcfg: &TrainConfig,
    data: &PreparedData<E>,
    static_adjacency: Option<&Tensor<E>>,
) -> Result<AblationReport> {
    // Validate the combination before spending time on training.
    let variant_cfg = apply_switches(base, switches, static_adjacency.is_some())?;

    let mut rows = Vec::new();
    let base_outcome = train(base.clone(), tcfg, data, static_adjacency.cloned())?;
    let base_metrics = evaluate_model(&base_outcome.model, &data.test)?;
    rows.push(AblationRow {
        label: "base".to_string(),
        mse: base_metrics.mse,
        mae: base_metrics.mae,
        trainable_scalars: base_outcome.model.store.scalar_count(),
        best_epoch: base_outcome.best_epoch,
    });

    if !switches.is_empty() {
        let outcome = train(variant_cfg, tcfg, data, static_adjacency.cloned())?;
        let metrics = evaluate_model(&outcome.model, &data.test)?;
        let label = switches
            .iter()
            .map(|s| s.as_str())
            .collect::<Vec<_>>()
            .join("+");
        rows.push(AblationRow {
            label,
            mse: metrics.mse,
            mae: metrics.mae,
            trainable_scalars: outcome.model.store.scalar_count(),
            best_epoch: outcome.best_epoch,
        });
    }

    Ok(AblationReport {
        horizon: data.test.output_len(),
        rows,
    })
}

// ---------------------------------------------------------------------------
