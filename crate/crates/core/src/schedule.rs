//! Learning-rate controllers.
//!
//! Plateau-driven schedules ([`ScheduleKind::Rwp`], [`ScheduleKind::Malr`])
//! only look at the validation signal when [`ScheduleState::observe`] is
//! called, which the experiment loop does at every online-validation event.
//! Patience is still counted in iterations.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Absolute tolerance for "improves" and "increases".
pub const IMPROVEMENT_TOL: f64 = 1e-6;

pub const FIRED_C1: u8 = 1;
pub const FIRED_C2: u8 = 1 << 1;
pub const FIRED_C3: u8 = 1 << 2;
pub const FIRED_REDUCED: u8 = 1 << 3;

/// Which validation quantity drives a plateau schedule. Both are turned into
/// a higher-is-better performance before use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMetric {
    #[default]
    Accuracy,
    Loss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    /// Reduce when the validation performance plateaus (C1 only).
    Rwp,
    /// C1 ∧ C2 ∧ C3. Disabled conditions count as satisfied.
    Malr {
        #[serde(default = "yes")]
        use_c1: bool,
        #[serde(default = "yes")]
        use_c2: bool,
        #[serde(default = "yes")]
        use_c3: bool,
    },
    /// Cosine decay restarted at each task boundary. `task_length` is in
    /// iterations.
    Cyclic { task_length: Option<u64> },
    /// Piecewise-constant replay of a recorded `(k, α)` trace: the rate at
    /// iteration `k` is that of the last point with `point.k ≤ k`.
    Trace { points: Vec<(u64, f64)> },
}

fn yes() -> bool {
    true
}

impl ScheduleKind {
    pub fn malr() -> Self {
        ScheduleKind::Malr {
            use_c1: true,
            use_c2: true,
            use_c3: true,
        }
    }

    pub fn needs_sigma(&self) -> bool {
        matches!(self, ScheduleKind::Malr { .. })
    }
}

fn default_factor() -> f64 {
    0.5
}

fn default_patience() -> u64 {
    60_000
}

fn default_epsilon() -> f64 {
    0.03
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub kind: ScheduleKind,
    /// Initial learning rate `α₀`.
    pub lr: f64,
    /// Reduction factor `β_lr`.
    #[serde(default = "default_factor")]
    pub factor: f64,
    /// Patience `K_R` in iterations.
    #[serde(default = "default_patience")]
    pub patience: u64,
    /// Threshold `ε` on `σ_k`.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub metric: ValidationMetric,
}

impl ScheduleConfig {
    pub fn new(kind: ScheduleKind, lr: f64) -> Self {
        ScheduleConfig {
            kind,
            lr,
            factor: default_factor(),
            patience: default_patience(),
            epsilon: default_epsilon(),
            metric: ValidationMetric::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("initial learning rate must be positive, got {}", self.lr)));
        }
        if !(self.factor > 0.0 && self.factor < 1.0) {
            return Err(Error::config(format!("reduction factor must lie in (0, 1), got {}", self.factor)));
        }
        match &self.kind {
            ScheduleKind::Cyclic { task_length: Some(0) } => {
                Err(Error::config("cyclic task length must be >= 1"))
            }
            ScheduleKind::Trace { points } => {
                if points.is_empty() {
                    return Err(Error::config("trace schedule needs at least one point"));
                }
                if points.windows(2).any(|w| w[1].0 <= w[0].0) {
                    return Err(Error::config("trace points must have increasing k"));
                }
                if points.iter().any(|p| !(p.1 > 0.0 && p.1.is_finite())) {
                    return Err(Error::config("trace learning rates must be positive"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// `σ_k = perf_MA − perf_SGD` (higher-is-better orientation).
pub fn sigma(val_perf_ma: f64, val_perf_sgd: f64) -> f64 {
    val_perf_ma - val_perf_sgd
}

/// `½α₀(1 + cos(π·k/T))` for `0 ≤ k < T`.
pub fn cyclic_lr(alpha0: f64, k_within_task: u64, task_length: Option<u64>) -> Result<f64> {
    let len = task_length.ok_or_else(|| {
        Error::config("cyclic schedule needs task boundaries; the stream has none")
    })?;
    if k_within_task >= len {
        return Err(Error::config(format!(
            "position {k_within_task} is outside a task of length {len}"
        )));
    }
    let phase = std::f64::consts::PI * k_within_task as f64 / len as f64;
    Ok(0.5 * alpha0 * (1.0 + phase.cos()))
}

/// Best value seen since the last reset and when it was set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
struct Tracker {
    best: f64,
    since: u64,
}

impl Tracker {
    /// Records `value` at iteration `k`; returns iterations without
    /// improvement.
    fn observe(slot: &mut Option<Tracker>, value: f64, k: u64) -> u64 {
        match slot {
            Some(t) if value <= t.best + IMPROVEMENT_TOL => k.saturating_sub(t.since),
            _ => {
                *slot = Some(Tracker { best: value, since: k });
                0
            }
        }
    }
}

/// Outcome of one validation event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Decision {
    /// Bitmask of [`FIRED_C1`], [`FIRED_C2`], [`FIRED_C3`], [`FIRED_REDUCED`].
    pub fired: u8,
}

impl Decision {
    pub fn reduced(&self) -> bool {
        self.fired & FIRED_REDUCED != 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleState {
    pub config: ScheduleConfig,
    alpha: f64,
    perf: Option<Tracker>,
    sigma: Option<Tracker>,
    reductions: u32,
}

impl ScheduleState {
    pub fn new(config: ScheduleConfig) -> Result<Self> {
        config.validate()?;
        let alpha = match &config.kind {
            ScheduleKind::Trace { points } => points[0].1,
            _ => config.lr,
        };
        Ok(ScheduleState {
            alpha,
            perf: None,
            sigma: None,
            reductions: 0,
            config,
        })
    }

    /// Most recent learning rate.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn reductions(&self) -> u32 {
        self.reductions
    }

    /// Learning rate used by iteration `k ≥ 1`.
    pub fn lr(&mut self, k: u64) -> Result<f64> {
        match &self.config.kind {
            ScheduleKind::Cyclic { task_length } => {
                let len = task_length.ok_or_else(|| {
                    Error::config("cyclic schedule needs task boundaries; the stream has none")
                })?;
                self.alpha = cyclic_lr(self.config.lr, (k.max(1) - 1) % len, Some(len))?;
            }
            ScheduleKind::Trace { points } => {
                let i = points.partition_point(|p| p.0 <= k);
                self.alpha = points[i.saturating_sub(1)].1;
            }
            _ => {}
        }
        Ok(self.alpha)
    }

    /// Feeds one validation event at iteration `k`. `sigma` is required by
    /// MALR and ignored otherwise.
    pub fn observe(&mut self, k: u64, val_perf: f64, sigma: Option<f64>) -> Result<Decision> {
        match self.config.kind.clone() {
            ScheduleKind::Rwp => Ok(self.rwp_update(val_perf, k)),
            ScheduleKind::Malr { use_c1, use_c2, use_c3 } => {
                let s = sigma.ok_or_else(|| Error::config("MALR needs a moving-average model"))?;
                Ok(self.malr_update(val_perf, s, k, [use_c1, use_c2, use_c3]))
            }
            _ => Ok(Decision::default()),
        }
    }

    /// Reduce-when-plateau step.
    pub fn rwp_update(&mut self, val_perf: f64, k: u64) -> Decision {
        let stale = Tracker::observe(&mut self.perf, val_perf, k);
        let mut fired = 0;
        if stale >= self.config.patience {
            fired |= FIRED_C1 | FIRED_REDUCED;
            self.reduce(k, val_perf, None);
        }
        Decision { fired }
    }

    /// MALR step; `enabled` switches off individual conditions for
    /// ablations.
    pub fn malr_update(&mut self, val_perf: f64, sigma: f64, k: u64, enabled: [bool; 3]) -> Decision {
        let stale_perf = Tracker::observe(&mut self.perf, val_perf, k);
        let stale_sigma = Tracker::observe(&mut self.sigma, sigma, k);
        let c = [
            stale_perf >= self.config.patience,
            stale_sigma >= self.config.patience,
            sigma > self.config.epsilon,
        ];
        let mut fired = 0;
        for (i, hit) in c.iter().enumerate() {
            if *hit {
                fired |= 1 << i;
            }
        }
        if c.iter().zip(enabled).all(|(hit, on)| *hit || !on) {
            fired |= FIRED_REDUCED;
            self.reduce(k, val_perf, Some(sigma));
        }
        Decision { fired }
    }

    fn reduce(&mut self, k: u64, val_perf: f64, sigma: Option<f64>) {
        self.alpha *= self.config.factor;
        self.reductions += 1;
        self.perf = Some(Tracker { best: val_perf, since: k });
        self.sigma = sigma.map(|s| Tracker { best: s, since: k });
    }
}

/// One row of a schedule trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleRow {
    pub k: u64,
    pub alpha: f64,
    pub sigma: Option<f64>,
    pub val_perf: f64,
    pub fired: u8,
}

pub fn write_schedule_csv<W: Write>(rows: &[ScheduleRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_schedule_csv<R: std::io::Read>(input: R) -> Result<Vec<ScheduleRow>> {
    let mut r = csv::Reader::from_reader(input);
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plateau(kind: ScheduleKind, patience: u64) -> ScheduleState {
        let mut c = ScheduleConfig::new(kind, 0.1);
        c.patience = patience;
        ScheduleState::new(c).unwrap()
    }

    #[test]
    fn sigma_examples() {
        assert_eq!(sigma(0.3, 0.3), 0.0);
        let s = sigma(0.45, 0.41);
        assert!((s - 0.04).abs() < 1e-12 && s > 0.03);
    }

    #[test]
    fn improving_never_reduces() {
        let mut s = plateau(ScheduleKind::Rwp, 20);
        for i in 1..=200u64 {
            let d = s.observe(i * 10, i as f64 * 1e-3, None).unwrap();
            assert!(!d.reduced());
        }
        assert_eq!(s.alpha(), 0.1);
    }

    #[test]
    fn constant_trace_reduces_at_boundary() {
        let mut s = plateau(ScheduleKind::Rwp, 60);
        let mut cuts = Vec::new();
        for k in (20..=200).step_by(20) {
            if s.observe(k, 0.5, None).unwrap().reduced() {
                cuts.push(k);
            }
        }
        // best set at k = 20, first cut at 20 + 60, then every 60 after.
        assert_eq!(cuts, vec![80, 140, 200]);
        assert!((s.alpha() - 0.1 * 0.125).abs() < 1e-15);
    }

    #[test]
    fn c3_veto() {
        let mut s = plateau(ScheduleKind::malr(), 10);
        for k in 1..=500 {
            assert!(!s.observe(k, 0.2, Some(0.01)).unwrap().reduced());
        }
        assert_eq!(s.alpha(), 0.1);
    }

    #[test]
    fn c2_veto_while_sigma_rises() {
        let mut s = plateau(ScheduleKind::malr(), 10);
        for k in 1..=100 {
            let d = s.observe(k, 0.2, Some(0.05 + k as f64 * 1e-3)).unwrap();
            assert!(!d.reduced());
            if k > 11 {
                assert_eq!(d.fired & (FIRED_C1 | FIRED_C2 | FIRED_C3), FIRED_C1 | FIRED_C3);
            }
        }
    }

    #[test]
    fn all_conditions_fire() {
        let mut s = plateau(ScheduleKind::malr(), 10);
        let fired: Vec<_> = (1..=12).map(|k| s.observe(k, 0.2, Some(0.05)).unwrap()).collect();
        assert!(fired[..10].iter().all(|d| !d.reduced()));
        assert_eq!(fired[10].fired, FIRED_C1 | FIRED_C2 | FIRED_C3 | FIRED_REDUCED);
        assert_eq!(s.alpha(), 0.05);
        assert_eq!(fired[11].fired, FIRED_C3);
    }

    #[test]
    fn ablation_ignores_disabled_condition() {
        let kind = ScheduleKind::Malr {
            use_c1: true,
            use_c2: true,
            use_c3: false,
        };
        let mut s = plateau(kind, 5);
        let cut = (1..=6).any(|k| s.observe(k, 0.0, Some(0.0)).unwrap().reduced());
        assert!(cut);
    }

    #[test]
    fn malr_requires_sigma() {
        let mut s = plateau(ScheduleKind::malr(), 5);
        assert!(s.observe(1, 0.0, None).is_err());
    }

    #[test]
    fn cyclic_values() {
        assert_eq!(cyclic_lr(0.2, 0, Some(100)).unwrap(), 0.2);
        assert!((cyclic_lr(0.2, 50, Some(100)).unwrap() - 0.1).abs() < 1e-15);
        let near_end = cyclic_lr(0.2, 99, Some(100)).unwrap();
        assert!(near_end > 0.0 && near_end < 1e-4);
        assert!(cyclic_lr(0.2, 100, Some(100)).is_err());
        assert!(cyclic_lr(0.2, 0, None).is_err());
        let mut s = ScheduleState::new(ScheduleConfig::new(ScheduleKind::Cyclic { task_length: Some(4) }, 1.0)).unwrap();
        let lrs: Vec<f64> = (1..=5).map(|k| s.lr(k).unwrap()).collect();
        assert_eq!(lrs[0], 1.0);
        assert_eq!(lrs[4], 1.0);
        assert!((lrs[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn trace_replay() {
        let kind = ScheduleKind::Trace {
            points: vec![(1, 0.4), (10, 0.2), (30, 0.1)],
        };
        let mut s = ScheduleState::new(ScheduleConfig::new(kind, 0.4)).unwrap();
        assert_eq!(s.lr(1).unwrap(), 0.4);
        assert_eq!(s.lr(9).unwrap(), 0.4);
        assert_eq!(s.lr(10).unwrap(), 0.2);
        assert_eq!(s.lr(1000).unwrap(), 0.1);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![
            ScheduleRow { k: 20, alpha: 0.1, sigma: Some(0.01), val_perf: 0.4, fired: 0 },
            ScheduleRow { k: 40, alpha: 0.05, sigma: None, val_perf: 0.5, fired: FIRED_C1 | FIRED_REDUCED },
        ];
        let mut buf = Vec::new();
        write_schedule_csv(&rows, &mut buf).unwrap();
        assert_eq!(read_schedule_csv(buf.as_slice()).unwrap(), rows);
    }
}
