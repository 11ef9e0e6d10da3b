//! Synthetic non-stationary streams and the OCL interaction protocol.
//!
//! Three stream families are provided:
//!
//! - `drifting-quadratic`: regression stream whose per-step loss is
//!   `½(θ−c_t)ᵀA(θ−c_t)` with a linearly moving center. Smoothness, noise and
//!   non-stationarity constants are available in closed form.
//! - `rotating-gaussian`: Gaussian classes on a circle that rotates by a fixed
//!   angle every step.
//! - `piecewise-task`: Gaussian classes whose active subset switches every
//!   `task_length` steps, cycling through class blocks.
//!
//! Batches are a pure function of `(spec, t)`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::datapool::{integrate, rollback, DataPool, HoldoutPool};
use crate::model::Prediction;
use crate::rng::{substream, Domain};
use crate::{Error, Result};

/// Label of a datum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Target {
    Class(usize),
    Vector(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    pub target: Target,
}

/// One time step's revealed data `{X_t, Y_t}`.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamBatch {
    pub t: u64,
    pub samples: Vec<Sample>,
}

impl StreamBatch {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn inputs(&self) -> impl Iterator<Item = &[f64]> {
        self.samples.iter().map(|s| s.features.as_slice())
    }

    pub fn labels(&self) -> impl Iterator<Item = &Target> {
        self.samples.iter().map(|s| &s.target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSpec {
    pub kind: StreamKind,
    pub batch_size: usize,
    pub horizon: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum StreamKind {
    DriftingQuadratic(DriftingQuadraticSpec),
    RotatingGaussian(RotatingGaussianSpec),
    PiecewiseTask(PiecewiseTaskSpec),
}

/// `l_t(θ) = ½(θ−c_t)ᵀA(θ−c_t)`, `c_t = c₀ + v·t`, `A` diagonal with
/// eigenvalues evenly spaced in `[mu, l_q]`.
///
/// Each datum carries a Rademacher vector `x ∈ {±noise}^d` as its input and
/// `c_t` as its target; the per-example loss `½(θ−y)ᵀA(θ−y) + xᵀ(θ−y)` has
/// expectation `l_t` and gradient noise of norm exactly `√d·noise`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftingQuadraticSpec {
    pub center0: Vec<f64>,
    pub velocity: Vec<f64>,
    pub mu: f64,
    pub l_q: f64,
    pub noise: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_radius: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RotatingGaussianSpec {
    pub d_in: usize,
    pub n_classes: usize,
    pub radius: f64,
    /// Radians per step.
    pub angular_velocity: f64,
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiecewiseTaskSpec {
    pub d_in: usize,
    pub n_classes: usize,
    pub classes_per_task: usize,
    /// Steps per task.
    pub task_length: u64,
    /// Norm scale of the class means.
    pub separation: f64,
    pub noise_std: f64,
}

impl DriftingQuadraticSpec {
    pub fn dim(&self) -> usize {
        self.center0.len()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        let d = self.dim();
        if d == 1 {
            return vec![self.l_q];
        }
        (0..d)
            .map(|i| self.mu + (self.l_q - self.mu) * i as f64 / (d - 1) as f64)
            .collect()
    }

    pub fn center(&self, t: u64) -> Vec<f64> {
        self.center0
            .iter()
            .zip(&self.velocity)
            .map(|(c, v)| c + v * t as f64)
            .collect()
    }

    /// Smoothness constant of every `l_t`.
    pub fn lipschitz(&self) -> f64 {
        self.l_q
    }

    /// Almost-sure bound on the minibatch gradient noise norm.
    pub fn noise_bound(&self) -> f64 {
        (self.dim() as f64).sqrt() * self.noise
    }

    pub fn radius(&self) -> f64 {
        self.domain_radius.unwrap_or_else(|| 10.0 * norm(&self.center0).max(1.0))
    }

    pub fn loss(&self, theta: &[f64], t: u64) -> f64 {
        let c = self.center(t);
        0.5 * self
            .eigenvalues()
            .iter()
            .zip(theta.iter().zip(&c))
            .map(|(a, (x, c))| a * (x - c) * (x - c))
            .sum::<f64>()
    }

    pub fn gradient(&self, theta: &[f64], t: u64) -> Vec<f64> {
        let c = self.center(t);
        self.eigenvalues()
            .iter()
            .zip(theta.iter().zip(&c))
            .map(|(a, (x, c))| a * (x - c))
            .collect()
    }

    /// `sup_{‖θ‖≤R} |l_{t+1}(θ) − l_t(θ)|`.
    ///
    /// The difference is affine in θ: `−(Av)ᵀθ + (Av)ᵀc_t + ½vᵀAv`.
    pub fn chi(&self, t: u64) -> f64 {
        let a = self.eigenvalues();
        let av: Vec<f64> = a.iter().zip(&self.velocity).map(|(a, v)| a * v).collect();
        let c = self.center(t);
        let offset = dot(&av, &c) + 0.5 * dot(&av, &self.velocity);
        self.radius() * norm(&av) + offset.abs()
    }

    fn validate(&self) -> Result<()> {
        if self.center0.is_empty() || self.velocity.len() != self.center0.len() {
            return Err(Error::config("center0 and velocity must be non-empty and equally long"));
        }
        if !(self.mu > 0.0 && self.mu <= self.l_q && self.l_q.is_finite()) {
            return Err(Error::config("drifting quadratic needs 0 < mu <= l_q"));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::config("noise must be finite and non-negative"));
        }
        if self.velocity.iter().chain(&self.center0).any(|x| !x.is_finite()) {
            return Err(Error::config("drift parameters must be finite"));
        }
        if let Some(r) = self.domain_radius {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::config("domain_radius must be positive"));
            }
        }
        Ok(())
    }
}

impl RotatingGaussianSpec {
    /// Mean of `class` at step `t`: the t=0 mean rotated by `t·ω` in the
    /// first two coordinates.
    pub fn class_mean(&self, class: usize, t: u64) -> Vec<f64> {
        let angle = std::f64::consts::TAU * class as f64 / self.n_classes as f64
            + self.angular_velocity * t as f64;
        let mut mean = vec![0.0; self.d_in];
        mean[0] = self.radius * angle.cos();
        mean[1] = self.radius * angle.sin();
        mean
    }
}

impl PiecewiseTaskSpec {
    pub fn n_tasks(&self) -> usize {
        self.n_classes / self.classes_per_task
    }

    /// Zero-based task index of step `t`; tasks cycle through class blocks.
    pub fn task_of(&self, t: u64) -> usize {
        (((t - 1) / self.task_length) % self.n_tasks() as u64) as usize
    }

    pub fn active_classes(&self, t: u64) -> std::ops::Range<usize> {
        let block = self.task_of(t);
        block * self.classes_per_task..(block + 1) * self.classes_per_task
    }

    /// Fixed class means drawn once from the stream seed.
    pub fn class_means(&self, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = substream(seed, Domain::StreamLayout, 0);
        let scale = self.separation / (self.d_in as f64).sqrt();
        (0..self.n_classes)
            .map(|_| {
                (0..self.d_in)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect()
    }
}

impl StreamSpec {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::config("stream batch_size must be >= 1"));
        }
        if self.horizon == 0 {
            return Err(Error::config("stream horizon must be >= 1"));
        }
        match &self.kind {
            StreamKind::DriftingQuadratic(q) => q.validate(),
            StreamKind::RotatingGaussian(g) => {
                if g.d_in < 2 || g.n_classes < 2 {
                    return Err(Error::config("rotating-gaussian needs d_in >= 2 and n_classes >= 2"));
                }
                if !(g.angular_velocity.is_finite() && g.angular_velocity >= 0.0) {
                    return Err(Error::config("angular_velocity must be finite and non-negative"));
                }
                if !(g.noise_std >= 0.0 && g.radius.is_finite()) {
                    return Err(Error::config("rotating-gaussian noise/radius invalid"));
                }
                Ok(())
            }
            StreamKind::PiecewiseTask(p) => {
                if p.d_in == 0 || p.classes_per_task == 0 || p.task_length == 0 {
                    return Err(Error::config("piecewise-task dimensions must be positive"));
                }
                if p.n_classes < p.classes_per_task || p.n_classes % p.classes_per_task != 0 {
                    return Err(Error::config("n_classes must be a multiple of classes_per_task"));
                }
                if !(p.noise_std >= 0.0 && p.separation.is_finite()) {
                    return Err(Error::config("piecewise-task noise/separation invalid"));
                }
                Ok(())
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        match &self.kind {
            StreamKind::DriftingQuadratic(q) => q.dim(),
            StreamKind::RotatingGaussian(g) => g.d_in,
            StreamKind::PiecewiseTask(p) => p.d_in,
        }
    }

    /// Number of classes, `None` for regression streams.
    pub fn n_classes(&self) -> Option<usize> {
        match &self.kind {
            StreamKind::DriftingQuadratic(_) => None,
            StreamKind::RotatingGaussian(g) => Some(g.n_classes),
            StreamKind::PiecewiseTask(p) => Some(p.n_classes),
        }
    }

    /// Steps per task for task-aware streams.
    pub fn task_length(&self) -> Option<u64> {
        match &self.kind {
            StreamKind::PiecewiseTask(p) => Some(p.task_length),
            _ => None,
        }
    }
}

/// The `t`-th batch of the stream (1-based).
pub fn next_batch(spec: &StreamSpec, t: u64) -> Result<StreamBatch> {
    if t == 0 || t > spec.horizon {
        return Err(Error::HorizonExceeded { t, horizon: spec.horizon });
    }
    spec.validate()?;
    let mut rng = substream(spec.seed, Domain::StreamBatch, t);
    let n = spec.batch_size;
    let samples = match &spec.kind {
        StreamKind::DriftingQuadratic(q) => {
            let c = q.center(t);
            (0..n)
                .map(|_| Sample {
                    features: (0..q.dim())
                        .map(|_| if rng.random::<bool>() { q.noise } else { -q.noise })
                        .collect(),
                    target: Target::Vector(c.clone()),
                })
                .collect()
        }
        StreamKind::RotatingGaussian(g) => {
            let means: Vec<Vec<f64>> = (0..g.n_classes).map(|c| g.class_mean(c, t)).collect();
            (0..n)
                .map(|_| {
                    let class = rng.random_range(0..g.n_classes);
                    Sample {
                        features: gaussian_around(&means[class], g.noise_std, &mut rng),
                        target: Target::Class(class),
                    }
                })
                .collect()
        }
        StreamKind::PiecewiseTask(p) => {
            let means = p.class_means(spec.seed);
            let active = p.active_classes(t);
            (0..n)
                .map(|_| {
                    let class = rng.random_range(active.clone());
                    Sample {
                        features: gaussian_around(&means[class], p.noise_std, &mut rng),
                        target: Target::Class(class),
                    }
                })
                .collect()
        }
    };
    Ok(StreamBatch { t, samples })
}

fn gaussian_around<R: Rng>(mean: &[f64], std: f64, rng: &mut R) -> Vec<f64> {
    mean.iter()
        .map(|m| m + std * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect::<Vec<f64>>()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// A learner taking part in the protocol.
pub trait Learner {
    /// Predictions of the current model `θ_{t−1}`; sees inputs only.
    fn predict(&self, inputs: &[&[f64]]) -> Vec<Prediction>;

    /// Training after the batch has been integrated into the pools.
    fn update(&mut self, pool: &DataPool, holdout: &HoldoutPool, batch: &StreamBatch) -> Result<()>;
}

/// Environment state owned by the protocol driver.
#[derive(Debug, Clone)]
pub struct Environment {
    pub spec: StreamSpec,
    pub pool: DataPool,
    pub holdout: HoldoutPool,
}

impl Environment {
    pub fn new(spec: StreamSpec, capacity: Option<usize>, holdout_fraction: f64) -> Self {
        let seed = spec.seed;
        Environment {
            spec,
            pool: DataPool::new(capacity, seed),
            holdout: HoldoutPool::new(holdout_fraction, seed),
        }
    }
}

/// One protocol step: sample, predict with `θ_{t−1}`, integrate, update.
///
/// If the learner's update fails the pools are restored to their state
/// before the step.
pub fn run_protocol_step<L: Learner>(
    env: &mut Environment,
    learner: &mut L,
    t: u64,
) -> Result<(Vec<Prediction>, StreamBatch)> {
    let batch = next_batch(&env.spec, t)?;
    let inputs: Vec<&[f64]> = batch.inputs().collect();
    let predictions = learner.predict(&inputs);
    let journal = integrate(&mut env.pool, &mut env.holdout, &batch)?;
    if let Err(e) = learner.update(&env.pool, &env.holdout, &batch) {
        rollback(&mut env.pool, &mut env.holdout, journal);
        return Err(e);
    }
    Ok((predictions, batch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rotating(omega: f64) -> StreamSpec {
        StreamSpec {
            kind: StreamKind::RotatingGaussian(RotatingGaussianSpec {
                d_in: 2,
                n_classes: 2,
                radius: 3.0,
                angular_velocity: omega,
                noise_std: 0.5,
            }),
            batch_size: 8,
            horizon: 100,
            seed: 42,
        }
    }

    fn quadratic(v: f64, noise: f64) -> StreamSpec {
        StreamSpec {
            kind: StreamKind::DriftingQuadratic(DriftingQuadraticSpec {
                center0: vec![1.0, -2.0, 0.5],
                velocity: vec![v, 0.0, -v],
                mu: 0.5,
                l_q: 2.0,
                noise,
                domain_radius: None,
            }),
            batch_size: 4,
            horizon: 50,
            seed: 3,
        }
    }

    #[test]
    fn same_seed_same_batch() {
        for spec in [rotating(0.1), quadratic(0.01, 0.3)] {
            assert_eq!(next_batch(&spec, 1).unwrap(), next_batch(&spec, 1).unwrap());
            assert_eq!(next_batch(&spec, 17).unwrap(), next_batch(&spec, 17).unwrap());
        }
        let mut other = rotating(0.1);
        other.seed = 43;
        assert_ne!(next_batch(&rotating(0.1), 1).unwrap(), next_batch(&other, 1).unwrap());
    }

    #[test]
    fn horizon_is_enforced() {
        let spec = rotating(0.1);
        assert!(matches!(next_batch(&spec, 0), Err(Error::HorizonExceeded { .. })));
        assert!(matches!(
            next_batch(&spec, 101),
            Err(Error::HorizonExceeded { t: 101, horizon: 100 })
        ));
        assert!(next_batch(&spec, 100).is_ok());
    }

    #[test]
    fn invalid_spec_is_an_error_not_a_panic() {
        let mut spec = rotating(0.1);
        if let StreamKind::RotatingGaussian(g) = &mut spec.kind {
            g.d_in = 1;
        }
        assert!(matches!(next_batch(&spec, 1), Err(Error::Config(_))));
    }

    #[test]
    fn zero_velocity_is_stationary() {
        let spec = quadratic(0.0, 0.0);
        let StreamKind::DriftingQuadratic(q) = &spec.kind else { unreachable!() };
        for t in 1..10 {
            assert_eq!(q.center(t), q.center0);
            assert_eq!(q.chi(t), 0.0);
            let theta = [0.3 * t as f64, -1.0, 2.0];
            assert_eq!(q.loss(&theta, t + 1), q.loss(&theta, t));
        }
    }

    #[test]
    fn rotation_matches_rotation_matrix() {
        let omega = 0.137;
        let StreamKind::RotatingGaussian(g) = rotating(omega).kind else { unreachable!() };
        let m0 = g.class_mean(1, 0);
        for k in [1u64, 5, 40] {
            let a = k as f64 * omega;
            let rotated = [a.cos() * m0[0] - a.sin() * m0[1], a.sin() * m0[0] + a.cos() * m0[1]];
            let mk = g.class_mean(1, k);
            assert!((mk[0] - rotated[0]).abs() < 1e-12 && (mk[1] - rotated[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn quadratic_noise_is_rademacher() {
        let spec = quadratic(0.01, 0.3);
        let b = next_batch(&spec, 5).unwrap();
        for s in &b.samples {
            assert!(s.features.iter().all(|x| x.abs() == 0.3));
            assert_eq!(s.target, Target::Vector(vec![1.05, -2.0, 0.45]));
        }
    }

    #[test]
    fn chi_bounds_loss_change_on_the_ball() {
        let spec = quadratic(0.02, 0.0);
        let StreamKind::DriftingQuadratic(q) = &spec.kind else { unreachable!() };
        let r = q.radius();
        let mut rng = substream(1, Domain::Test, 0);
        for t in [1u64, 10, 30] {
            let chi = q.chi(t);
            for _ in 0..500 {
                let mut th: Vec<f64> = (0..3).map(|_| rng.random::<f64>() - 0.5).collect();
                let s = r * rng.random::<f64>() / norm(&th);
                th.iter_mut().for_each(|x| *x *= s);
                assert!((q.loss(&th, t + 1) - q.loss(&th, t)).abs() <= chi + 1e-12);
            }
        }
    }

    #[test]
    fn piecewise_tasks_cycle_through_blocks() {
        let p = PiecewiseTaskSpec {
            d_in: 4,
            n_classes: 6,
            classes_per_task: 2,
            task_length: 5,
            separation: 3.0,
            noise_std: 1.0,
        };
        assert_eq!(p.active_classes(1), 0..2);
        assert_eq!(p.active_classes(5), 0..2);
        assert_eq!(p.active_classes(6), 2..4);
        assert_eq!(p.active_classes(11), 4..6);
        assert_eq!(p.active_classes(16), 0..2);
        let spec = StreamSpec {
            kind: StreamKind::PiecewiseTask(p),
            batch_size: 16,
            horizon: 30,
            seed: 1,
        };
        let b = next_batch(&spec, 7).unwrap();
        assert!(b.labels().all(|y| matches!(y, Target::Class(2) | Target::Class(3))));
    }
}
