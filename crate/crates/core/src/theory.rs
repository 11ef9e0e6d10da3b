//! Empirical check of the non-stationary SGD bound
//!
//! `min_{0≤j≤k} E‖∇l_{j+1}(θ_j)‖² ≤ T1 + T2 + T3` with
//!
//! * `D  = Σ_{j=0..k} (2α_{j+1} − Lα²_{j+1})`
//! * `T1 = 2(l_1(θ_0) − E l_{k+2}(θ_{k+1})) / D`
//! * `T2 = Lρ² Σ α²_{j+1} / D`
//! * `T3 = 2 Σ χ_{j+1} / D`
//!
//! on drifting quadratics, where `L`, `ρ` and `χ` are known in closed form.
//! With `χ ≡ 0` the first two terms are the classical stationary bound
//! (`T4`, `T5`).

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{LossKind, ModelKind, ModelSpec, ParamVector};
use crate::optim::SgdState;
use crate::stats::mean_se;
use crate::stream::{next_batch, norm, DriftingQuadraticSpec, Sample, StreamKind, StreamSpec};
use crate::{Error, Result};

/// Constants and traces entering the bound. Index `j` of `alpha` and `chi`
/// holds `α_{j+1}` and `χ_{j+1}`; `final_loss[k]` holds `E l_{k+2}(θ_{k+1})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    pub lipschitz: f64,
    pub rho: f64,
    pub chi: Vec<f64>,
    pub alpha: Vec<f64>,
    pub initial_loss: f64,
    pub final_loss: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundTerms {
    pub t1: f64,
    pub t2: f64,
    pub t3: f64,
    pub denominator: f64,
}

impl BoundTerms {
    pub fn total(&self) -> f64 {
        self.t1 + self.t2 + self.t3
    }
}

/// Quantities that must vanish (or diverge) for the bound to shrink.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionRatios {
    /// `D`, which must grow without bound.
    pub denominator: f64,
    /// `Σα² / D → 0`.
    pub alpha_sq_ratio: f64,
    /// `Σχ / D → 0`.
    pub chi_ratio: f64,
}

fn precondition(assumption: &'static str, detail: String) -> Error {
    Error::Precondition { assumption, detail }
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if !(self.lipschitz > 0.0 && self.lipschitz.is_finite()) {
            return Err(precondition("A1 (L-smoothness)", format!("L = {}", self.lipschitz)));
        }
        if !(self.rho >= 0.0 && self.rho.is_finite()) {
            return Err(precondition("A3 (bounded gradient noise)", format!("rho = {}", self.rho)));
        }
        if let Some((j, c)) = self.chi.iter().enumerate().find(|(_, c)| !(**c >= 0.0 && c.is_finite())) {
            return Err(precondition("A4 (bounded drift)", format!("chi_{} = {c}", j + 1)));
        }
        let l = self.lipschitz;
        for (j, a) in self.alpha.iter().enumerate() {
            if !(*a > 0.0) {
                return Err(precondition("step size", format!("alpha_{} = {a} is not positive", j + 1)));
            }
            if *a >= l / 2.0 {
                return Err(precondition("alpha < L/2", format!("alpha_{} = {a}, L = {l}", j + 1)));
            }
            if *a >= 2.0 / l {
                return Err(precondition("alpha < 2/L", format!("alpha_{} = {a}, L = {l}", j + 1)));
            }
        }
        Ok(())
    }

    fn check_len(&self, k: usize) -> Result<()> {
        if self.alpha.len() <= k || self.chi.len() <= k {
            return Err(Error::MissingRecord(format!("alpha/chi up to index {}", k + 1)));
        }
        Ok(())
    }

    /// Sums over `j = 0..=k` of `2α − Lα²`, `α²` and `χ`.
    fn sums(&self, k: usize) -> (f64, f64, f64) {
        let l = self.lipschitz;
        let mut d = 0.0;
        let mut a2 = 0.0;
        let mut c = 0.0;
        for j in 0..=k {
            let a = self.alpha[j];
            d += 2.0 * a - l * a * a;
            a2 += a * a;
            c += self.chi[j];
        }
        (d, a2, c)
    }

    pub fn conditions(&self, k: usize) -> Result<ConditionRatios> {
        self.check_len(k)?;
        let (d, a2, c) = self.sums(k);
        Ok(ConditionRatios {
            denominator: d,
            alpha_sq_ratio: a2 / d,
            chi_ratio: c / d,
        })
    }
}

/// `(T1, T2, T3)` at horizon `k`.
pub fn bound_terms(inputs: &BoundInputs, k: usize) -> Result<BoundTerms> {
    inputs.validate()?;
    inputs.check_len(k)?;
    let final_loss = *inputs
        .final_loss
        .get(k)
        .ok_or_else(|| Error::MissingRecord(format!("E l_{}(theta_{})", k + 2, k + 1)))?;
    let (d, a2, c) = inputs.sums(k);
    if !(d > 0.0) {
        return Err(precondition("positive denominator", format!("D = {d}")));
    }
    let l = inputs.lipschitz;
    Ok(BoundTerms {
        t1: 2.0 * (inputs.initial_loss - final_loss) / d,
        t2: l * inputs.rho * inputs.rho * a2 / d,
        t3: 2.0 * c / d,
        denominator: d,
    })
}

/// Stationary bound `(T4, T5)`: the first two terms with drift ignored.
pub fn stationary_terms(inputs: &BoundInputs, k: usize) -> Result<(f64, f64)> {
    let t = bound_terms(inputs, k)?;
    Ok((t.t1, t.t2))
}

/// Learning-rate sequence used by the verifier; `lr(j)` is `α_{j+1}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum LrSequence {
    Constant { alpha: f64 },
    /// `α₀/√(j+1)`.
    InvSqrt { alpha0: f64 },
    /// `α₀·factor^⌊j/every⌋`: repeated plateau cuts.
    StepDecay { alpha0: f64, factor: f64, every: u64 },
    Explicit { values: Vec<f64> },
}

impl LrSequence {
    pub fn lr(&self, j: u64) -> Result<f64> {
        Ok(match self {
            LrSequence::Constant { alpha } => *alpha,
            LrSequence::InvSqrt { alpha0 } => alpha0 / ((j + 1) as f64).sqrt(),
            LrSequence::StepDecay { alpha0, factor, every } => {
                alpha0 * factor.powi((j / (*every).max(1)).min(i32::MAX as u64) as i32)
            }
            LrSequence::Explicit { values } => *values
                .get(j as usize)
                .ok_or_else(|| Error::MissingRecord(format!("learning rate {}", j + 1)))?,
        })
    }

    pub fn take(&self, n: u64) -> Result<Vec<f64>> {
        (0..n).map(|j| self.lr(j)).collect()
    }
}

fn default_seeds() -> usize {
    20
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryConfig {
    pub label: String,
    /// Must be a drifting quadratic; its seed is the base seed.
    pub stream: StreamSpec,
    pub schedule: LrSequence,
    /// Last checkpoint `k`.
    pub k_max: u64,
    #[serde(default = "default_seeds")]
    pub n_seeds: usize,
    /// Checkpoints to report; defaults to a geometric grid up to `k_max`.
    #[serde(default)]
    pub checkpoints: Vec<u64>,
    /// Starting point `θ₀`; defaults to the origin.
    #[serde(default)]
    pub init: Option<Vec<f64>>,
}

impl TheoryConfig {
    pub fn quadratic(&self) -> Result<&DriftingQuadraticSpec> {
        match &self.stream.kind {
            StreamKind::DriftingQuadratic(q) => Ok(q),
            _ => Err(Error::config("bound verification needs a drifting-quadratic stream")),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stream.validate()?;
        let q = self.quadratic()?;
        if self.n_seeds < 2 {
            return Err(Error::config("bound verification needs at least 2 seeds"));
        }
        if self.k_max + 2 > self.stream.horizon {
            return Err(Error::HorizonExceeded {
                t: self.k_max + 2,
                horizon: self.stream.horizon,
            });
        }
        if let Some(init) = &self.init {
            if init.len() != q.dim() {
                return Err(Error::DimensionMismatch {
                    expected: q.dim(),
                    found: init.len(),
                });
            }
        }
        if self.checkpoints.iter().any(|k| *k > self.k_max) {
            return Err(Error::config("checkpoint beyond k_max"));
        }
        Ok(())
    }

    pub fn checkpoint_list(&self) -> Vec<u64> {
        if !self.checkpoints.is_empty() {
            let mut c = self.checkpoints.clone();
            c.sort_unstable();
            c.dedup();
            return c;
        }
        let mut out = Vec::new();
        let mut k = 1u64;
        while k < self.k_max {
            out.push(k);
            k *= 2;
        }
        out.push(self.k_max);
        out
    }

    /// Bound inputs with analytic constants and the given final-loss trace.
    pub fn inputs(&self, initial_loss: f64, final_loss: Vec<f64>) -> Result<BoundInputs> {
        let q = self.quadratic()?;
        let n = self.k_max + 1;
        Ok(BoundInputs {
            lipschitz: q.lipschitz(),
            rho: q.noise_bound(),
            chi: (1..=n).map(|t| q.chi(t)).collect(),
            alpha: self.schedule.take(n)?,
            initial_loss,
            final_loss,
        })
    }
}

/// Per-seed SGD trajectory on the drifting quadratic.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    /// `‖∇l_{j+1}(θ_j)‖²` for `j = 0..=k_max`.
    pub grad_sq: Vec<f64>,
    /// `l_{j+2}(θ_{j+1})` for `j = 0..=k_max`.
    pub next_loss: Vec<f64>,
    pub initial_loss: f64,
    /// Largest `‖θ_j‖` seen.
    pub max_norm: f64,
}

/// Plain SGD (no momentum) on `l_1, l_2, …` using one stream batch per
/// iteration; the stochastic gradient comes from the probe model.
pub fn simulate(config: &TheoryConfig, seed: u64) -> Result<Trajectory> {
    let q = config.quadratic()?;
    let mut spec = config.stream.clone();
    spec.seed = seed;
    let model = ModelSpec {
        kind: ModelKind::QuadraticProbe {
            curvature: q.eigenvalues(),
            init: None,
        },
        loss: LossKind::Quadratic,
        weight_decay: 0.0,
    };
    let init = config.init.clone().unwrap_or_else(|| vec![0.0; q.dim()]);
    let mut sgd = SgdState::new(ParamVector::flat(init), 0.0, config.schedule.lr(0)?);
    let n = config.k_max + 1;
    let mut grad_sq = Vec::with_capacity(n as usize);
    let mut next_loss = Vec::with_capacity(n as usize);
    let initial_loss = q.loss(sgd.params.as_slice(), 1);
    let mut max_norm = norm(sgd.params.as_slice());
    for j in 0..n {
        let g = q.gradient(sgd.params.as_slice(), j + 1);
        grad_sq.push(g.iter().map(|x| x * x).sum());
        let batch = next_batch(&spec, j + 1)?;
        let refs: Vec<&Sample> = batch.samples.iter().collect();
        let (_, stoch) = model.loss_and_grad(&sgd.params, &refs)?;
        sgd.step(&stoch, config.schedule.lr(j)?)?;
        max_norm = max_norm.max(norm(sgd.params.as_slice()));
        next_loss.push(q.loss(sgd.params.as_slice(), j + 2));
    }
    Ok(Trajectory {
        grad_sq,
        next_loss,
        initial_loss,
        max_norm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRow {
    pub k: u64,
    /// `min_j` of the seed-mean squared gradient norm.
    pub lhs: f64,
    pub lhs_se: f64,
    /// Seed-mean of the per-seed minimum (a smaller quantity, for reference).
    pub lhs_mean_of_min: f64,
    pub t1: f64,
    pub t1_se: f64,
    pub t2: f64,
    pub t3: f64,
    pub rhs: f64,
    pub denominator: f64,
    pub alpha_sq_ratio: f64,
    pub chi_ratio: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub label: String,
    pub n_seeds: usize,
    pub rows: Vec<CheckpointRow>,
    /// Seeds whose trajectory left the ball on which `χ` is computed.
    pub excursions: usize,
    pub radius: f64,
}

impl VerificationReport {
    pub fn passed(&self) -> bool {
        self.excursions == 0 && self.rows.iter().all(|r| r.passed)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs `n_seeds` trajectories in parallel and checks the bound at each
/// checkpoint: a checkpoint passes when `LHS − RHS ≤ 2·se`, where `se`
/// combines the standard errors of the LHS estimate and of `T1`.
pub fn verify_bound(config: &TheoryConfig) -> Result<VerificationReport> {
    config.validate()?;
    let q = config.quadratic()?;
    // Fail on preconditions before spending time on simulation.
    config.inputs(0.0, vec![0.0; config.k_max as usize + 1])?.validate()?;

    let base = config.stream.seed;
    let runs: Vec<Trajectory> = (0..config.n_seeds as u64)
        .into_par_iter()
        .map(|s| simulate(config, base.wrapping_add(s)))
        .collect::<Result<_>>()?;

    let n = config.k_max as usize + 1;
    let column = |f: &dyn Fn(&Trajectory) -> f64| -> (f64, f64) {
        let xs: Vec<f64> = runs.iter().map(f).collect();
        mean_se(&xs)
    };
    let grad_stats: Vec<(f64, f64)> = (0..n).map(|j| column(&|r: &Trajectory| r.grad_sq[j])).collect();
    let final_stats: Vec<(f64, f64)> = (0..n).map(|j| column(&|r: &Trajectory| r.next_loss[j])).collect();
    let (initial_loss, _) = column(&|r: &Trajectory| r.initial_loss);
    let inputs = config.inputs(initial_loss, final_stats.iter().map(|s| s.0).collect())?;

    let radius = q.radius();
    let excursions = runs.iter().filter(|r| r.max_norm > radius).count();
    if excursions > 0 {
        log::warn!("{excursions} trajectories left the ball of radius {radius}");
    }

    let mut rows = Vec::new();
    for k in config.checkpoint_list() {
        let ku = k as usize;
        let terms = bound_terms(&inputs, ku)?;
        let cond = inputs.conditions(ku)?;
        let &(lhs, lhs_se) = grad_stats[..=ku]
            .iter()
            .min_by(|a, b| a.0.total_cmp(&b.0))
            .expect("non-empty");
        let (lhs_mean_of_min, _) = column(&|r: &Trajectory| {
            r.grad_sq[..=ku].iter().copied().fold(f64::INFINITY, f64::min)
        });
        let t1_se = 2.0 * final_stats[ku].1 / terms.denominator;
        let rhs = terms.total();
        let se = (lhs_se * lhs_se + t1_se * t1_se).sqrt();
        rows.push(CheckpointRow {
            k,
            lhs,
            lhs_se,
            lhs_mean_of_min,
            t1: terms.t1,
            t1_se,
            t2: terms.t2,
            t3: terms.t3,
            rhs,
            denominator: cond.denominator,
            alpha_sq_ratio: cond.alpha_sq_ratio,
            chi_ratio: cond.chi_ratio,
            passed: lhs - rhs <= 2.0 * se,
        });
    }
    Ok(VerificationReport {
        label: config.label.clone(),
        n_seeds: config.n_seeds,
        rows,
        excursions,
        radius,
    })
}
