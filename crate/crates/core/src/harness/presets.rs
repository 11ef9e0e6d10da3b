//! Desk-scale experiment recipes.
//!
//! Each preset is a [`Study`]: a list of labelled variants that share a
//! stream and seeds. Interval constants follow the reference defaults
//! (`γ₀ = 0.99`, `δ = 5`, `K_M = 10`, `K_V = 20`, `ε = 0.03`, `β_lr = 0.5`,
//! momentum 0.9, weight decay 1e-4) with `K_W` and `K_R` scaled to the
//! horizon: `K_R ≈ 5%` and `K_W ≈ 10%` of the total iteration count.

use std::collections::BTreeMap;
use std::path::PathBuf;

use rayon::prelude::*;

use super::config::*;
use super::runner::{run_seed, run_seed_to_disk, RunOutput};
use crate::model::{LossKind, ModelKind, ModelSpec};
use crate::schedule::{ScheduleConfig, ScheduleKind, ValidationMetric};
use crate::stream::{
    DriftingQuadraticSpec, PiecewiseTaskSpec, RotatingGaussianSpec, StreamKind, StreamSpec,
};
use crate::theory::{LrSequence, TheoryConfig};
use crate::{Error, Result};

pub const PRESET_NAMES: [&str; 9] = [
    "main-comparison",
    "malr-ablation",
    "ama-vs-ema",
    "batch-size",
    "buffer-size",
    "objective-comparison",
    "adam-base",
    "task-cyclic",
    "theory-verify",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub config: ExperimentConfig,
    /// Replays the learning-rate trace of this other variant (same seed).
    pub lr_from: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Study {
    pub name: String,
    pub variants: Vec<Variant>,
}

/// Outputs of a study keyed by variant label, in seed order.
pub type StudyResults = BTreeMap<String, Vec<RunOutput>>;

impl Study {
    pub fn variant(&self, label: &str) -> Option<&Variant> {
        self.variants.iter().find(|v| v.label == label)
    }

    pub fn variant_mut(&mut self, label: &str) -> Option<&mut Variant> {
        self.variants.iter_mut().find(|v| v.label == label)
    }

    /// Applies `f` to every variant's config.
    pub fn map_configs(&mut self, f: impl Fn(&mut ExperimentConfig)) {
        for v in &mut self.variants {
            f(&mut v.config);
        }
    }

    /// Applies a dotted-key override to every variant.
    pub fn with_override(&self, key: &str, value: &str) -> Result<Study> {
        let mut out = self.clone();
        for v in &mut out.variants {
            v.config = v.config.with_override(key, value)?;
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        for v in &self.variants {
            v.config.validate()?;
            if let Some(src) = &v.lr_from {
                if self.variant(src).is_none() {
                    return Err(Error::config(format!("variant `{}` replays unknown `{src}`", v.label)));
                }
            }
        }
        Ok(())
    }

    /// Runs every (variant, seed) pair in parallel. Variants that replay
    /// another variant's learning rate run after it.
    pub fn run(&self, write: bool) -> Result<StudyResults> {
        self.validate()?;
        let exec = |cfg: &ExperimentConfig, seed: u64| {
            if write {
                run_seed_to_disk(cfg, seed)
            } else {
                run_seed(cfg, seed)
            }
        };
        let independent: Vec<&Variant> = self.variants.iter().filter(|v| v.lr_from.is_none()).collect();
        let jobs: Vec<(&Variant, u64)> = independent
            .iter()
            .flat_map(|v| v.config.seeds.iter().map(move |s| (*v, *s)))
            .collect();
        let outs: Vec<RunOutput> = jobs.par_iter().map(|(v, s)| exec(&v.config, *s)).collect::<Result<_>>()?;
        let mut results = StudyResults::new();
        for ((v, _), out) in jobs.iter().zip(outs) {
            results.entry(v.label.clone()).or_default().push(out);
        }
        for v in self.variants.iter().filter(|v| v.lr_from.is_some()) {
            let src = &results[v.lr_from.as_ref().expect("filtered")];
            let outs: Vec<RunOutput> = src
                .par_iter()
                .map(|source| {
                    let mut cfg = v.config.clone();
                    cfg.schedule = trace_schedule(&cfg.schedule, source);
                    exec(&cfg, source.state.seed)
                })
                .collect::<Result<_>>()?;
            results.insert(v.label.clone(), outs);
        }
        Ok(results)
    }
}

/// Piecewise-constant schedule reproducing the learning rates of `source`.
pub fn trace_schedule(base: &ScheduleConfig, source: &RunOutput) -> ScheduleConfig {
    let lr0 = source.state.schedule.config.lr;
    let mut points = vec![(1u64, lr0)];
    let mut current = lr0;
    for row in &source.state.schedule_rows {
        if row.alpha != current {
            // the cut at a validation event applies from the next iteration
            points.push((row.k + 1, row.alpha));
            current = row.alpha;
        }
    }
    let mut s = base.clone();
    s.lr = lr0;
    s.kind = ScheduleKind::Trace { points };
    s
}

/// Knobs shared by the classification presets.
#[derive(Debug, Clone)]
struct Base {
    stream: StreamSpec,
    model: ModelSpec,
    lr: f64,
    patience: u64,
    k_w: u64,
    p: u64,
    m: usize,
    seeds: Vec<u64>,
}

impl Base {
    fn config(&self, name: &str, averaging: Averaging, kind: ScheduleKind) -> ExperimentConfig {
        let mut schedule = ScheduleConfig::new(kind, self.lr);
        schedule.patience = self.patience;
        schedule.metric = ValidationMetric::Accuracy;
        let horizon = self.stream.horizon;
        ExperimentConfig {
            name: name.to_string(),
            seeds: self.seeds.clone(),
            output_dir: PathBuf::from("runs"),
            iterations_per_step: self.p,
            minibatch: self.m,
            capacity: None,
            holdout_fraction: 0.05,
            stream: self.stream.clone(),
            model: self.model.clone(),
            optimizer: OptimizerConfig {
                base: BaseKind::Sgd,
                momentum: 0.9,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                averaging,
            },
            schedule,
            replay: ReplayConfig {
                mode: ReplayMode::Pure,
                window: None,
            },
            validation: ValidationConfig {
                interval: 20,
                batch_size: 32,
                reset_interval: self.k_w,
            },
            eval: EvalConfig {
                interval: (horizon / 50).max(1),
                k1: None,
                k2: None,
                skip_forward_transfer: false,
            },
            theory: Vec::new(),
        }
    }

    fn ama(&self) -> Averaging {
        Averaging::Ama {
            gamma0: 0.99,
            delta: 5.0,
            k_m: 10,
            k_w: Some(self.k_w),
        }
    }
}

fn default_seeds() -> Vec<u64> {
    (1..=20).collect()
}

fn linear(d_in: usize, n_classes: usize) -> ModelSpec {
    ModelSpec {
        kind: ModelKind::LinearSoftmax { d_in, n_classes },
        loss: LossKind::CrossEntropy,
        weight_decay: 1e-4,
    }
}

/// Slowly rotating class means: the classifier has to keep moving.
fn rotating_base() -> Base {
    let horizon = 4000;
    Base {
        stream: StreamSpec {
            kind: StreamKind::RotatingGaussian(RotatingGaussianSpec {
                d_in: 2,
                n_classes: 4,
                radius: 2.0,
                angular_velocity: std::f64::consts::FRAC_PI_2 / horizon as f64,
                noise_std: 1.0,
            }),
            batch_size: 16,
            horizon,
            seed: 0,
        },
        model: linear(2, 4),
        lr: 0.1,
        patience: 100,
        k_w: 400,
        p: 1,
        m: 16,
        seeds: default_seeds(),
    }
}

/// Tasks over disjoint class blocks, revisited cyclically.
fn piecewise_base() -> Base {
    let horizon = 2000;
    Base {
        stream: StreamSpec {
            kind: StreamKind::PiecewiseTask(PiecewiseTaskSpec {
                d_in: 8,
                n_classes: 8,
                classes_per_task: 2,
                task_length: 250,
                separation: 3.0,
                noise_std: 1.0,
            }),
            batch_size: 16,
            horizon,
            seed: 0,
        },
        model: linear(8, 8),
        lr: 0.05,
        patience: 100,
        k_w: 200,
        p: 1,
        m: 16,
        seeds: default_seeds(),
    }
}

fn variant(label: &str, study: &str, config: ExperimentConfig) -> Variant {
    let mut config = config;
    config.name = format!("{study}/{label}");
    Variant {
        label: label.to_string(),
        config,
        lr_from: None,
    }
}

fn main_comparison() -> Study {
    let b = rotating_base();
    let name = "main-comparison";
    Study {
        name: name.into(),
        variants: vec![
            variant("sgd+rwp", name, b.config(name, Averaging::None, ScheduleKind::Rwp)),
            variant("ama+rwp", name, b.config(name, b.ama(), ScheduleKind::Rwp)),
            variant("ama+malr", name, b.config(name, b.ama(), ScheduleKind::malr())),
        ],
    }
}

fn malr_ablation() -> Study {
    let b = rotating_base();
    let name = "malr-ablation";
    let malr = |c2, c3| ScheduleKind::Malr {
        use_c1: true,
        use_c2: c2,
        use_c3: c3,
    };
    Study {
        name: name.into(),
        variants: vec![
            variant("ama+malr", name, b.config(name, b.ama(), malr(true, true))),
            variant("ama+malr-no-c2", name, b.config(name, b.ama(), malr(false, true))),
            variant("ama+malr-no-c3", name, b.config(name, b.ama(), malr(true, false))),
            variant("ama+rwp", name, b.config(name, b.ama(), ScheduleKind::Rwp)),
        ],
    }
}

fn ama_vs_ema() -> Study {
    let b = rotating_base();
    let name = "ama-vs-ema";
    let ema = Averaging::Ema { gamma: 0.99, k_m: 10 };
    let mut replay = variant("ema+trace", name, b.config(name, ema, ScheduleKind::Constant));
    replay.config.schedule.kind = ScheduleKind::Trace {
        points: vec![(1, b.lr)],
    };
    replay.lr_from = Some("ama+malr".into());
    Study {
        name: name.into(),
        variants: vec![variant("ama+malr", name, b.config(name, b.ama(), ScheduleKind::malr())), replay],
    }
}

fn batch_size() -> Study {
    let b = rotating_base();
    let name = "batch-size";
    // Fixed compute m·p; fewer iterations with a proportionally larger rate.
    let variants = [(16usize, 8u64), (32, 4), (64, 2), (128, 1)]
        .iter()
        .map(|&(m, p)| {
            let mut c = b.config(name, Averaging::None, ScheduleKind::Constant);
            c.minibatch = m;
            c.iterations_per_step = p;
            c.schedule.lr = 0.05 * (m as f64 / 16.0);
            variant(&format!("m{m}"), name, c)
        })
        .collect();
    Study {
        name: name.into(),
        variants,
    }
}

fn buffer_size() -> Study {
    let b = rotating_base();
    let name = "buffer-size";
    let variants = [100usize, 1000, 10_000]
        .iter()
        .map(|&cap| {
            let mut c = b.config(name, Averaging::None, ScheduleKind::Constant);
            c.capacity = Some(cap);
            variant(&format!("cap{cap}"), name, c)
        })
        .collect();
    Study {
        name: name.into(),
        variants,
    }
}

fn objective_comparison() -> Study {
    let b = piecewise_base();
    let name = "objective-comparison";
    let mut b = b;
    // Compute-limited regime: the model is still improving at p = 1.
    b.lr = 0.003;
    let mut mixed = b.config(name, Averaging::None, ScheduleKind::Constant);
    mixed.replay = ReplayConfig {
        mode: ReplayMode::Mixed,
        window: Some(10),
    };
    let mut variants = vec![variant("mixed-p1", name, mixed)];
    for p in [1u64, 2, 4] {
        let mut c = b.config(name, Averaging::None, ScheduleKind::Constant);
        // Same number of gradient steps per stored item as mixed replay.
        c.minibatch = 2 * b.m;
        c.iterations_per_step = p;
        variants.push(variant(&format!("pure-p{p}"), name, c));
    }
    Study {
        name: name.into(),
        variants,
    }
}

fn adam_base() -> Study {
    let b = rotating_base();
    let name = "adam-base";
    let adam = |mut c: ExperimentConfig| {
        c.optimizer.base = BaseKind::Adam;
        c.schedule.lr = 0.01;
        c
    };
    Study {
        name: name.into(),
        variants: vec![
            variant("adam+rwp", name, adam(b.config(name, Averaging::None, ScheduleKind::Rwp))),
            variant("adam+ama+malr", name, adam(b.config(name, b.ama(), ScheduleKind::malr()))),
        ],
    }
}

fn task_cyclic() -> Study {
    let b = piecewise_base();
    let name = "task-cyclic";
    let cyclic = ScheduleKind::Cyclic { task_length: None };
    Study {
        name: name.into(),
        variants: vec![
            variant("sgd+cyclic", name, b.config(name, Averaging::None, cyclic.clone())),
            variant("ama+cyclic", name, b.config(name, b.ama(), cyclic)),
            variant("ama+malr", name, b.config(name, b.ama(), ScheduleKind::malr())),
        ],
    }
}

fn quadratic_stream(velocity: f64, horizon: u64) -> StreamSpec {
    StreamSpec {
        kind: StreamKind::DriftingQuadratic(DriftingQuadraticSpec {
            center0: vec![1.0, -1.0, 0.5, 0.0],
            velocity: vec![velocity, velocity, -velocity, 0.5 * velocity],
            mu: 0.5,
            l_q: 2.0,
            noise: 0.5,
            domain_radius: None,
        }),
        batch_size: 4,
        horizon,
        seed: 1000,
    }
}

/// Bound-verification grid: three step-size schedules on a stationary and a
/// drifting quadratic, with `L = 2` so that `α < L/2` and `α < 2/L` agree.
pub fn theory_configs() -> Vec<TheoryConfig> {
    let k_max = 2000;
    let schedules = [
        ("const", LrSequence::Constant { alpha: 0.1 }),
        ("invsqrt", LrSequence::InvSqrt { alpha0: 0.5 }),
        (
            "halving",
            LrSequence::StepDecay {
                alpha0: 0.5,
                factor: 0.5,
                every: 200,
            },
        ),
    ];
    let mut out = Vec::new();
    for (drift, v) in [("stationary", 0.0), ("drifting", 1e-3)] {
        for (name, sched) in &schedules {
            out.push(TheoryConfig {
                label: format!("{name}-{drift}"),
                stream: quadratic_stream(v, k_max + 2),
                schedule: sched.clone(),
                k_max,
                n_seeds: 20,
                checkpoints: Vec::new(),
                init: None,
            });
        }
    }
    out
}

fn theory_verify() -> Study {
    let name = "theory-verify";
    let theory = theory_configs();
    let stream = theory[0].stream.clone();
    let curvature = match &stream.kind {
        StreamKind::DriftingQuadratic(q) => q.eigenvalues(),
        _ => unreachable!(),
    };
    let b = Base {
        stream,
        model: ModelSpec {
            kind: ModelKind::QuadraticProbe { curvature, init: None },
            loss: LossKind::Quadratic,
            weight_decay: 0.0,
        },
        lr: 0.1,
        patience: 100,
        k_w: 200,
        p: 1,
        m: 4,
        seeds: default_seeds(),
    };
    let mut c = b.config(name, Averaging::None, ScheduleKind::Constant);
    c.optimizer.momentum = 0.0;
    c.holdout_fraction = 0.0;
    c.eval.skip_forward_transfer = true;
    c.theory = theory;
    Study {
        name: name.into(),
        variants: vec![variant("sgd+const", name, c)],
    }
}

/// Study for a preset name.
pub fn preset(name: &str) -> Result<Study> {
    Ok(match name {
        "main-comparison" => main_comparison(),
        "malr-ablation" => malr_ablation(),
        "ama-vs-ema" => ama_vs_ema(),
        "batch-size" => batch_size(),
        "buffer-size" => buffer_size(),
        "objective-comparison" => objective_comparison(),
        "adam-base" => adam_base(),
        "task-cyclic" => task_cyclic(),
        "theory-verify" => theory_verify(),
        other => return Err(Error::UnknownPreset(other.to_string())),
    })
}
