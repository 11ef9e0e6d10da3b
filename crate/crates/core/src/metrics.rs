//! Online continual learning metrics.
//!
//! * learning efficacy `P_LE(t)`: mean step-ahead accuracy of the models
//!   `θ_1..θ_t` on the batch that arrives next;
//! * information retention `P_IR(t)`: accuracy of `θ_t` on holdout data that
//!   arrived up to `t`;
//! * forward transfer `P_FT(t)`: accuracy of `θ_t` on holdout data from the
//!   window `t+k₁..t+k₂`.
//!
//! For regression models "accuracy" is replaced by the negative loss so the
//! same machinery applies; the `[0, 1]` range checks only apply to
//! classifiers.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datapool::{holdout_part, HoldoutPool};
use crate::model::{ModelSpec, ParamVector};
use crate::stream::{next_batch, Sample, StreamSpec};
use crate::{Error, Result};

/// Running mean folded one observation at a time:
/// `mean ← (n·mean + x)/(n+1)`, `n ← n+1`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct OnlineMean {
    pub mean: f64,
    pub n: u64,
}

impl OnlineMean {
    pub fn fold(&mut self, x: f64) {
        self.mean = (self.n as f64 * self.mean + x) / (self.n as f64 + 1.0);
        self.n += 1;
    }

    pub fn reset(&mut self) {
        *self = OnlineMean::default();
    }
}

/// Forward-transfer window `(k₁, k₂)` at 10% and 25% of the horizon.
pub fn default_window(horizon: u64) -> (u64, u64) {
    let k1 = ((horizon as f64 * 0.10).round() as u64).max(1);
    let k2 = ((horizon as f64 * 0.25).round() as u64).max(k1 + 1);
    (k1, k2)
}

/// One row of the metric trace. `None` fields are written as empty cells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub t: u64,
    pub k: u64,
    #[serde(rename = "P_LE")]
    pub p_le: Option<f64>,
    #[serde(rename = "P_IR")]
    pub p_ir: Option<f64>,
    #[serde(rename = "P_FT")]
    pub p_ft: Option<f64>,
    pub alpha: f64,
    pub sigma: Option<f64>,
    #[serde(rename = "gamma_MA1")]
    pub gamma_ma1: Option<f64>,
    #[serde(rename = "gamma_MA2")]
    pub gamma_ma2: Option<f64>,
    pub i_best: Option<u8>,
}

/// Append-only record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricLedger {
    /// Optimizer label, e.g. `"sgd+ama+malr"`.
    pub optimizer: String,
    pub classification: bool,
    pub k1: u64,
    pub k2: u64,
    /// `(j, acc)`: model `θ_j` scored on batch `j+1` before training on it.
    step_ahead: Vec<(u64, f64)>,
    rows: Vec<MetricRow>,
}

impl MetricLedger {
    pub fn new(optimizer: impl Into<String>, classification: bool, k1: u64, k2: u64) -> Result<Self> {
        if !(k2 > k1 && k1 >= 1) {
            return Err(Error::config(format!("forward-transfer window needs k2 > k1 >= 1, got ({k1}, {k2})")));
        }
        Ok(MetricLedger {
            optimizer: optimizer.into(),
            classification,
            k1,
            k2,
            step_ahead: Vec::new(),
            rows: Vec::new(),
        })
    }

    fn check_range(&self, value: f64) -> Result<()> {
        if !value.is_finite() || (self.classification && !(0.0..=1.0).contains(&value)) {
            return Err(Error::Format(format!("metric value {value} out of range")));
        }
        Ok(())
    }

    /// Records the accuracy of `θ_j` on batch `j+1`.
    pub fn record_step_ahead(&mut self, j: u64, accuracy: f64) -> Result<()> {
        self.check_range(accuracy)?;
        if let Some(&(last, _)) = self.step_ahead.last() {
            if j <= last {
                return Err(Error::StepOrder { last, got: j });
            }
        }
        self.step_ahead.push((j, accuracy));
        Ok(())
    }

    pub fn step_ahead(&self) -> &[(u64, f64)] {
        &self.step_ahead
    }

    /// Mean step-ahead score of models `θ_lo..=θ_hi` (whatever is recorded).
    pub fn mean_step_ahead(&self, lo: u64, hi: u64) -> Result<f64> {
        let xs: Vec<f64> = self
            .step_ahead
            .iter()
            .filter(|(j, _)| (lo..=hi).contains(j))
            .map(|r| r.1)
            .collect();
        if xs.is_empty() {
            return Err(Error::MissingRecord(format!("step-ahead accuracies in {lo}..={hi}")));
        }
        Ok(xs.iter().sum::<f64>() / xs.len() as f64)
    }

    pub fn push_row(&mut self, row: MetricRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.t < last.t || row.k < last.k {
                return Err(Error::StepOrder { last: last.t, got: row.t });
            }
        }
        for v in [row.p_le, row.p_ir, row.p_ft].into_iter().flatten() {
            self.check_range(v)?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricRow] {
        &self.rows
    }

    /// `P_LE(t) = (1/t)·Σ_{j=1..t} acc(batch_{j+1}, θ_j)`.
    pub fn learning_efficacy(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::MissingRecord("P_LE needs t >= 1".into()));
        }
        let start = self.step_ahead.partition_point(|r| r.0 < 1);
        let window = self.step_ahead.get(start..start + t as usize).ok_or_else(|| {
            Error::MissingRecord(format!("step-ahead accuracies for 1..={t}"))
        })?;
        for (i, (j, _)) in window.iter().enumerate() {
            if *j != i as u64 + 1 {
                return Err(Error::MissingRecord(format!("step-ahead accuracy for model {}", i + 1)));
            }
        }
        Ok(window.iter().map(|r| r.1).sum::<f64>() / t as f64)
    }
}

/// `P_IR`: performance of `θ_t` on every holdout item with arrival `≤ t`.
pub fn information_retention(
    model: &ModelSpec,
    theta: &ParamVector,
    holdout: &HoldoutPool,
    t: u64,
) -> Result<f64> {
    let samples = holdout.samples_up_to(t);
    if samples.is_empty() {
        return Err(Error::EmptyPool);
    }
    model.performance(theta, &samples)
}

/// Holdout items of future steps, generated from the stream spec on demand.
///
/// Only the metric code holds one of these, so training never sees the
/// future.
#[derive(Debug, Clone)]
pub struct FutureHoldout {
    spec: StreamSpec,
    fraction: f64,
    cache: HashMap<u64, Vec<Sample>>,
}

impl FutureHoldout {
    pub fn new(spec: StreamSpec, fraction: f64) -> Self {
        FutureHoldout {
            spec,
            fraction,
            cache: HashMap::new(),
        }
    }

    pub fn horizon(&self) -> u64 {
        self.spec.horizon
    }

    /// Holdout-routed items of step `j`.
    pub fn step(&mut self, j: u64) -> Result<&[Sample]> {
        if !self.cache.contains_key(&j) {
            let batch = next_batch(&self.spec, j)?;
            let held = holdout_part(&batch, self.fraction, self.spec.seed);
            self.cache.insert(j, held);
        }
        Ok(&self.cache[&j])
    }

    /// Drops cached steps before `t` to bound memory.
    pub fn forget_before(&mut self, t: u64) {
        self.cache.retain(|j, _| *j >= t);
    }
}

/// `P_FT`: performance of `θ_t` on the holdout items of steps
/// `t+k₁..=t+k₂`.
pub fn forward_transfer(
    model: &ModelSpec,
    theta: &ParamVector,
    future: &mut FutureHoldout,
    t: u64,
    k1: u64,
    k2: u64,
) -> Result<f64> {
    if !(k2 > k1 && k1 >= 1) {
        return Err(Error::config(format!("forward-transfer window needs k2 > k1 >= 1, got ({k1}, {k2})")));
    }
    if t + k2 > future.horizon() {
        return Err(Error::HorizonExceeded {
            t: t + k2,
            horizon: future.horizon(),
        });
    }
    let mut owned = Vec::new();
    for j in t + k1..=t + k2 {
        owned.extend(future.step(j)?.iter().cloned());
    }
    if owned.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let refs: Vec<&Sample> = owned.iter().collect();
    model.performance(theta, &refs)
}

/// Folds the performance of `theta` on one validation minibatch into `acc`.
pub fn online_validation(
    acc: &mut OnlineMean,
    model: &ModelSpec,
    theta: &ParamVector,
    minibatch: &[&Sample],
) -> Result<f64> {
    let perf = model.performance(theta, minibatch)?;
    acc.fold(perf);
    Ok(perf)
}

pub fn write_metric_csv<W: Write>(rows: &[MetricRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metric_csv<R: std::io::Read>(input: R) -> Result<Vec<MetricRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}
