//! Base optimizers and the moving-average family.
//!
//! [`AmaState`] runs two moving-average (MA) models with weights `γ₁` and
//! `γ₂ = γ₁/δ`, scores both on the same online-validation minibatch every
//! `K_V` iterations, and every `K_W` iterations copies the better one over
//! the other while moving both weights up or down by the factor `δ`.

use serde::{Deserialize, Serialize};

use crate::metrics::OnlineMean;
use crate::model::{Evaluation, ParamVector};
use crate::{Error, Result};

fn ensure_finite(grad: &ParamVector) -> Result<()> {
    if grad.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence("non-finite gradient".into()))
    }
}

fn ensure_lr(lr: f64) -> Result<()> {
    if lr > 0.0 && lr.is_finite() {
        Ok(())
    } else {
        Err(Error::config(format!("learning rate must be positive, got {lr}")))
    }
}

/// Heavy-ball SGD: `buf ← β·buf + g`, `θ ← θ − α·buf`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    pub params: ParamVector,
    buffer: ParamVector,
    pub momentum: f64,
    pub lr: f64,
}

impl SgdState {
    pub fn new(params: ParamVector, momentum: f64, lr: f64) -> Self {
        SgdState {
            buffer: ParamVector::zeros_like(&params),
            params,
            momentum,
            lr,
        }
    }

    pub fn buffer(&self) -> &ParamVector {
        &self.buffer
    }

    pub fn step(&mut self, grad: &ParamVector, lr: f64) -> Result<()> {
        self.params.same_shape(grad)?;
        ensure_finite(grad)?;
        ensure_lr(lr)?;
        self.lr = lr;
        let beta = self.momentum;
        for ((p, b), g) in self
            .params
            .as_mut_slice()
            .iter_mut()
            .zip(self.buffer.as_mut_slice())
            .zip(grad.as_slice())
        {
            *b = beta * *b + g;
            *p -= lr * *b;
        }
        Ok(())
    }
}

/// Bias-corrected ADAM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub params: ParamVector,
    first: ParamVector,
    second: ParamVector,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub steps: u64,
    pub lr: f64,
}

impl AdamState {
    pub fn new(params: ParamVector, beta1: f64, beta2: f64, eps: f64, lr: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
            return Err(Error::config("ADAM betas must lie in [0, 1)"));
        }
        Ok(AdamState {
            first: ParamVector::zeros_like(&params),
            second: ParamVector::zeros_like(&params),
            params,
            beta1,
            beta2,
            eps,
            steps: 0,
            lr,
        })
    }

    pub fn step(&mut self, grad: &ParamVector, lr: f64) -> Result<()> {
        self.params.same_shape(grad)?;
        ensure_finite(grad)?;
        ensure_lr(lr)?;
        self.lr = lr;
        self.steps += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.steps as i32);
        let c2 = 1.0 - b2.powi(self.steps as i32);
        let params = self.params.as_mut_slice();
        let m = self.first.as_mut_slice();
        let v = self.second.as_mut_slice();
        for i in 0..params.len() {
            let g = grad.as_slice()[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
        Ok(())
    }
}

/// Base optimizer plug-in point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum BaseOptimizer {
    Sgd(SgdState),
    Adam(AdamState),
}

impl BaseOptimizer {
    pub fn params(&self) -> &ParamVector {
        match self {
            BaseOptimizer::Sgd(s) => &s.params,
            BaseOptimizer::Adam(s) => &s.params,
        }
    }

    pub fn step(&mut self, grad: &ParamVector, lr: f64) -> Result<()> {
        match self {
            BaseOptimizer::Sgd(s) => s.step(grad, lr),
            BaseOptimizer::Adam(s) => s.step(grad, lr),
        }
    }
}

/// `θ^MA ← γ·θ^MA + (1−γ)·θ`.
pub fn ma_update(ma: &mut ParamVector, gamma: f64, theta: &ParamVector) -> Result<()> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::InvalidWeight(gamma));
    }
    ma.same_shape(theta)?;
    for (m, t) in ma.as_mut_slice().iter_mut().zip(theta.as_slice()) {
        *m = gamma * *m + (1.0 - gamma) * t;
    }
    Ok(())
}

/// Fixed-weight exponential moving average, updated every `interval`
/// iterations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmaState {
    pub params: ParamVector,
    pub gamma: f64,
    pub interval: u64,
}

impl EmaState {
    pub fn new(init: ParamVector, gamma: f64, interval: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(Error::InvalidWeight(gamma));
        }
        if interval == 0 {
            return Err(Error::config("EMA interval must be >= 1"));
        }
        Ok(EmaState {
            params: init,
            gamma,
            interval,
        })
    }

    /// Returns whether the average moved at iteration `k`.
    pub fn step(&mut self, k: u64, theta: &ParamVector) -> Result<bool> {
        if !k.is_multiple_of(self.interval) {
            return Ok(false);
        }
        ma_update(&mut self.params, self.gamma, theta)?;
        Ok(true)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmaConfig {
    /// Initial weight `γ₀` of the first MA model.
    pub gamma0: f64,
    /// Weight adjustment factor `δ > 0`.
    pub delta: f64,
    /// MA update interval `K_M`.
    pub k_m: u64,
    /// Online validation interval `K_V`.
    pub k_v: u64,
    /// Weight adaptation interval `K_W`; `None` disables adaptation.
    pub k_w: Option<u64>,
}

impl Default for AmaConfig {
    fn default() -> Self {
        AmaConfig {
            gamma0: 0.99,
            delta: 5.0,
            k_m: 10,
            k_v: 20,
            k_w: Some(10_000),
        }
    }
}

impl AmaConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma0) {
            return Err(Error::InvalidWeight(self.gamma0));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::config("AMA delta must be positive"));
        }
        if self.k_m == 0 || self.k_v == 0 || self.k_w == Some(0) {
            return Err(Error::config("AMA intervals must be >= 1"));
        }
        Ok(())
    }
}

/// Scores a parameter vector on one fixed validation minibatch.
pub trait Scorer {
    fn evaluate(&self, params: &ParamVector) -> Evaluation;
}

/// Supplies the validation minibatch of each `K_V` event.
pub trait ValidationSource {
    type Batch: Scorer;

    /// `None` when no validation data exists yet; the event is skipped.
    fn draw(&mut self, k: u64) -> Option<Self::Batch>;
}

/// Outcome of one weight-adaptation event.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Adaptation {
    /// Model that won the window (1 or 2).
    pub winner: u8,
    pub gamma: [f64; 2],
}

/// What happened during one [`AmaState::step`].
#[derive(Debug)]
pub struct AmaEvents<B> {
    pub ma_updated: bool,
    /// Validation batch and the two MA evaluations, when a `K_V` event ran.
    pub validation: Option<(B, [Evaluation; 2])>,
    pub skipped_validation: bool,
    pub adaptation: Option<Adaptation>,
}

/// Adaptive moving average with two-model population search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmaState {
    pub config: AmaConfig,
    ma: [ParamVector; 2],
    gamma: [f64; 2],
    /// Running validation performance (accuracy, or negative loss).
    acc: [OnlineMean; 2],
    /// Running validation loss, tracked alongside for loss-driven schedules.
    loss: [OnlineMean; 2],
    /// Zero-based index of the current best model.
    best: usize,
    skipped: u64,
}

impl AmaState {
    pub fn new(init: &ParamVector, config: AmaConfig) -> Result<Self> {
        config.validate()?;
        let gamma = [config.gamma0, config.gamma0 / config.delta];
        Ok(AmaState {
            ma: [init.clone(), init.clone()],
            gamma,
            acc: Default::default(),
            loss: Default::default(),
            best: 0,
            skipped: 0,
            config,
        })
    }

    pub fn gamma(&self) -> [f64; 2] {
        self.gamma
    }

    pub fn accuracies(&self) -> [f64; 2] {
        [self.acc[0].mean, self.acc[1].mean]
    }

    pub fn losses(&self) -> [f64; 2] {
        [self.loss[0].mean, self.loss[1].mean]
    }

    /// Validation folds since the last reset.
    pub fn validation_count(&self) -> u64 {
        self.acc[0].n
    }

    /// 1-based index of the best model.
    pub fn i_best(&self) -> u8 {
        self.best as u8 + 1
    }

    pub fn model(&self, i: u8) -> &ParamVector {
        &self.ma[(i - 1) as usize]
    }

    pub fn skipped_validations(&self) -> u64 {
        self.skipped
    }

    /// Parameters of the current best MA model.
    pub fn best_ma(&self) -> &ParamVector {
        &self.ma[self.best]
    }

    /// Running performance of the best model.
    pub fn best_accuracy(&self) -> f64 {
        self.acc[self.best].mean
    }

    pub fn best_loss(&self) -> f64 {
        self.loss[self.best].mean
    }

    /// MA update of both models when `k mod K_M = 0`.
    pub fn ma_phase(&mut self, k: u64, theta: &ParamVector) -> Result<bool> {
        if !k.is_multiple_of(self.config.k_m) {
            return Ok(false);
        }
        let [g1, g2] = self.gamma;
        let [m1, m2] = &mut self.ma;
        ma_update(m1, g1, theta)?;
        ma_update(m2, g2, theta)?;
        Ok(true)
    }

    /// Folds one validation evaluation of each model into the running
    /// means and re-selects the best model. Ties keep the previous choice.
    pub fn fold_validation(&mut self, evals: [Evaluation; 2]) {
        for i in 0..2 {
            self.acc[i].fold(evals[i].performance());
            self.loss[i].fold(evals[i].loss);
        }
        let (a1, a2) = (self.acc[0].mean, self.acc[1].mean);
        if a1 > a2 {
            self.best = 0;
        } else if a2 > a1 {
            self.best = 1;
        }
    }

    /// Online validation when `k mod K_V = 0`. Both models are scored on the
    /// same minibatch.
    pub fn validation_phase<S: ValidationSource>(
        &mut self,
        k: u64,
        source: &mut S,
    ) -> Option<std::result::Result<(S::Batch, [Evaluation; 2]), ()>> {
        if !k.is_multiple_of(self.config.k_v) {
            return None;
        }
        let Some(batch) = source.draw(k) else {
            self.skipped += 1;
            log::warn!("no validation data at iteration {k}; skipping online validation");
            return Some(Err(()));
        };
        let evals = [batch.evaluate(&self.ma[0]), batch.evaluate(&self.ma[1])];
        self.fold_validation(evals);
        Some(Ok((batch, evals)))
    }

    /// Weight adaptation when `k mod K_W = 0`.
    pub fn weight_phase(&mut self, k: u64) -> Option<Adaptation> {
        let k_w = self.config.k_w?;
        if !k.is_multiple_of(k_w) {
            return None;
        }
        let delta = self.config.delta;
        self.acc = Default::default();
        self.loss = Default::default();
        let winner = self.best as u8 + 1;
        if self.best == 0 {
            self.gamma[0] = (delta * self.gamma[0]).min(1.0);
            self.gamma[1] = self.gamma[0] / delta;
            self.ma[1] = self.ma[0].clone();
            self.best = 1;
        } else {
            self.gamma[0] /= delta;
            self.gamma[1] /= delta;
            self.ma[0] = self.ma[1].clone();
            self.best = 0;
        }
        // δ < 1 would push weights above one; keep them in [0, 1].
        self.gamma = self.gamma.map(|g| g.clamp(0.0, 1.0));
        Some(Adaptation {
            winner,
            gamma: self.gamma,
        })
    }

    /// One full iteration `k ≥ 1` after the base optimizer has produced
    /// `θ_k`: MA update, online validation, weight adaptation.
    pub fn step<S: ValidationSource>(
        &mut self,
        k: u64,
        theta: &ParamVector,
        source: &mut S,
    ) -> Result<AmaEvents<S::Batch>> {
        if k == 0 {
            return Err(Error::config("AMA iterations start at k = 1"));
        }
        let ma_updated = self.ma_phase(k, theta)?;
        let (validation, skipped_validation) = match self.validation_phase(k, source) {
            None => (None, false),
            Some(Ok(v)) => (Some(v), false),
            Some(Err(())) => (None, true),
        };
        let adaptation = self.weight_phase(k);
        Ok(AmaEvents {
            ma_updated,
            validation,
            skipped_validation,
            adaptation,
        })
    }
}
