//! The experiment loop.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Averaging, BaseKind, ExperimentConfig, ReplayMode};
use crate::datapool::{integrate, training_part, DataPool, HoldoutPool};
use crate::metrics::{
    forward_transfer, information_retention, write_metric_csv, FutureHoldout, MetricLedger, MetricRow,
    OnlineMean,
};
use crate::model::{Evaluation, ModelSpec, ParamVector};
use crate::optim::{AdamState, AmaState, BaseOptimizer, EmaState, Scorer, SgdState, ValidationSource};
use crate::rng::{substream, Domain};
use crate::schedule::{sigma, write_schedule_csv, ScheduleKind, ScheduleRow, ScheduleState, ValidationMetric};
use crate::stream::{next_batch, Sample, StreamSpec};
use crate::{Error, Result};

/// Operation counts: forward passes, gradient computations, parameter
/// updates (optimizer steps and MA updates).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComputeCounts {
    pub forward: u64,
    pub grad: u64,
    pub update: u64,
}

impl std::ops::Sub for ComputeCounts {
    type Output = ComputeCounts;

    fn sub(self, rhs: Self) -> Self {
        ComputeCounts {
            forward: self.forward - rhs.forward,
            grad: self.grad - rhs.grad,
            update: self.update - rhs.update,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Averager {
    None,
    Ema(EmaState),
    Ama(AmaState),
}

/// Everything needed to resume a run except the two data pools, which are
/// stored in the binary pool format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunState {
    pub seed: u64,
    /// Last completed step.
    pub t: u64,
    /// Last completed iteration.
    pub k: u64,
    pub base: BaseOptimizer,
    pub averager: Averager,
    pub schedule: ScheduleState,
    /// Running validation performance of the base model (and of the EMA
    /// model), folded at each validation event.
    pub base_val: OnlineMean,
    pub ema_val: OnlineMean,
    pub last_sigma: Option<f64>,
    pub counts: ComputeCounts,
    pub ledger: MetricLedger,
    pub schedule_rows: Vec<ScheduleRow>,
    pub skipped_iterations: u64,
}

/// Validation minibatch drawn from the holdout.
pub struct ValBatch<'a> {
    model: &'a ModelSpec,
    samples: Vec<&'a Sample>,
}

impl Scorer for ValBatch<'_> {
    fn evaluate(&self, params: &ParamVector) -> Evaluation {
        self.model
            .evaluate(params, &self.samples)
            .expect("validation samples match the validated model")
    }
}

struct HoldoutSource<'a> {
    model: &'a ModelSpec,
    holdout: &'a HoldoutPool,
    seed: u64,
    size: usize,
}

impl<'a> ValidationSource for HoldoutSource<'a> {
    type Batch = ValBatch<'a>;

    fn draw(&mut self, k: u64) -> Option<ValBatch<'a>> {
        let mut rng = substream(self.seed, Domain::Validation, k);
        let samples = self.holdout.sample(self.size, &mut rng).ok()?;
        Some(ValBatch {
            model: self.model,
            samples,
        })
    }
}

fn score(metric: ValidationMetric, e: &Evaluation) -> f64 {
    match metric {
        ValidationMetric::Accuracy => e.performance(),
        ValidationMetric::Loss => -e.loss,
    }
}

/// One seed of one experiment.
pub struct Runner {
    pub config: ExperimentConfig,
    spec: StreamSpec,
    pool: DataPool,
    holdout: HoldoutPool,
    future: FutureHoldout,
    pub state: RunState,
}

impl Runner {
    pub fn new(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut spec = config.stream.clone();
        spec.seed = seed;
        let init = config.model.init_params(seed);
        let sched = config.resolved_schedule();
        let lr = sched.lr;
        let base = match config.optimizer.base {
            BaseKind::Sgd => BaseOptimizer::Sgd(SgdState::new(init.clone(), config.optimizer.momentum, lr)),
            BaseKind::Adam => BaseOptimizer::Adam(AdamState::new(
                init.clone(),
                config.optimizer.beta1,
                config.optimizer.beta2,
                config.optimizer.eps,
                lr,
            )?),
        };
        let averager = match &config.optimizer.averaging {
            Averaging::None => Averager::None,
            Averaging::Ema { gamma, k_m } => Averager::Ema(EmaState::new(init.clone(), *gamma, *k_m)?),
            Averaging::Ama { .. } => Averager::Ama(AmaState::new(&init, config.ama_config().expect("ama"))?),
        };
        let (k1, k2) = config.forward_window();
        let ledger = MetricLedger::new(config.label(), config.model.is_classifier(), k1, k2)?;
        Ok(Runner {
            pool: DataPool::new(config.capacity, seed),
            holdout: HoldoutPool::new(config.holdout_fraction, seed),
            future: FutureHoldout::new(spec.clone(), config.holdout_fraction),
            spec,
            state: RunState {
                seed,
                t: 0,
                k: 0,
                base,
                averager,
                schedule: ScheduleState::new(sched)?,
                base_val: OnlineMean::default(),
                ema_val: OnlineMean::default(),
                last_sigma: None,
                counts: ComputeCounts::default(),
                ledger,
                schedule_rows: Vec::new(),
                skipped_iterations: 0,
            },
            config: config.clone(),
        })
    }

    pub fn pool(&self) -> &DataPool {
        &self.pool
    }

    pub fn holdout(&self) -> &HoldoutPool {
        &self.holdout
    }

    pub fn done(&self) -> bool {
        self.state.t >= self.spec.horizon
    }

    /// Model used for prediction and evaluation: the best MA model under
    /// AMA, the EMA model under EMA, the base iterate otherwise.
    pub fn inference_params(&self) -> &ParamVector {
        match &self.state.averager {
            Averager::None => self.state.base.params(),
            Averager::Ema(e) => &e.params,
            Averager::Ama(a) => a.best_ma(),
        }
    }

    pub fn base_params(&self) -> &ParamVector {
        self.state.base.params()
    }

    /// Runs one protocol step: predict with the current model, reveal and
    /// integrate the batch, then `p` optimizer iterations.
    pub fn step(&mut self) -> Result<()> {
        let t = self.state.t + 1;
        let batch = next_batch(&self.spec, t)?;
        let params = self.inference_params();
        let model = &self.config.model;
        let predictions: Vec<_> = batch.samples.iter().map(|s| model.predict(params, &s.features)).collect();
        let refs: Vec<&Sample> = batch.samples.iter().collect();
        let step_ahead = model.score_predictions(&predictions, &refs)?;
        self.state.ledger.record_step_ahead(t - 1, step_ahead)?;

        integrate(&mut self.pool, &mut self.holdout, &batch)?;
        let current = training_part(&batch, self.config.holdout_fraction, self.spec.seed);
        for _ in 0..self.config.iterations_per_step {
            self.iterate(t, &current)?;
        }
        self.state.t = t;
        if t.is_multiple_of(self.config.eval.interval) || t == self.spec.horizon {
            self.record_metrics(t)?;
        }
        Ok(())
    }

    fn iterate(&mut self, t: u64, current: &[&Sample]) -> Result<()> {
        let Runner {
            config,
            pool,
            holdout,
            state,
            spec,
            ..
        } = self;
        let seed = spec.seed;
        let k = state.k + 1;
        state.k = k;
        let lr = state.schedule.lr(k)?;

        let mut rng = substream(seed, Domain::Replay, k);
        let minibatch = match config.replay.mode {
            ReplayMode::Pure => pool.sample_pure_replay(config.minibatch, &mut rng),
            ReplayMode::Mixed => {
                let window = config.replay.window.unwrap_or(t);
                pool.sample_mixed_replay(current, config.minibatch, t, window, &mut rng)
            }
        };
        let minibatch = match minibatch {
            Ok(mb) => mb,
            Err(Error::EmptyPool) => {
                state.skipped_iterations += 1;
                return Ok(());
            }
            Err(e) => return Err(e),
        };
        let (loss, grad) = config.model.loss_and_grad(state.base.params(), &minibatch)?;
        state.base.step(&grad, lr)?;
        state.counts.forward += 1;
        state.counts.grad += 1;
        state.counts.update += 1;
        if !state.base.params().is_finite() {
            return Err(Error::Divergence(format!("parameters became non-finite at iteration {k} (loss {loss})")));
        }
        let theta = state.base.params().clone();

        match &mut state.averager {
            Averager::None => {}
            Averager::Ema(e) => {
                if e.step(k, &theta)? {
                    state.counts.update += 1;
                }
            }
            Averager::Ama(a) => {
                if a.ma_phase(k, &theta)? {
                    state.counts.update += 2;
                }
            }
        }

        let plateau = matches!(state.schedule.config.kind, ScheduleKind::Rwp | ScheduleKind::Malr { .. });
        let is_ama = matches!(state.averager, Averager::Ama(_));
        if k % config.validation.interval == 0 && (plateau || is_ama) {
            let metric = state.schedule.config.metric;
            let mut source = HoldoutSource {
                model: &config.model,
                holdout,
                seed,
                size: config.validation.batch_size,
            };
            let observed: Option<(f64, Option<f64>)> = match &mut state.averager {
                Averager::Ama(a) => match a.validation_phase(k, &mut source) {
                    Some(Ok((batch, _))) => {
                        state.counts.forward += 2;
                        let e = batch.evaluate(&theta);
                        state.counts.forward += 1;
                        state.base_val.fold(score(metric, &e));
                        let ma_perf = match metric {
                            ValidationMetric::Accuracy => a.best_accuracy(),
                            ValidationMetric::Loss => -a.best_loss(),
                        };
                        Some((ma_perf, Some(sigma(ma_perf, state.base_val.mean))))
                    }
                    _ => None,
                },
                Averager::Ema(ema) => source.draw(k).map(|batch| {
                    let e_ema = batch.evaluate(&ema.params);
                    let e_base = batch.evaluate(&theta);
                    state.counts.forward += 2;
                    state.ema_val.fold(score(metric, &e_ema));
                    state.base_val.fold(score(metric, &e_base));
                    (state.ema_val.mean, Some(sigma(state.ema_val.mean, state.base_val.mean)))
                }),
                Averager::None => source.draw(k).map(|batch| {
                    let e = batch.evaluate(&theta);
                    state.counts.forward += 1;
                    state.base_val.fold(score(metric, &e));
                    (state.base_val.mean, None)
                }),
            };
            if let Some((val_perf, s)) = observed {
                state.last_sigma = s;
                let decision = state.schedule.observe(k, val_perf, s)?;
                if decision.reduced() {
                    log::debug!("seed {seed}: learning rate cut to {} at k = {k}", state.schedule.alpha());
                }
                state.schedule_rows.push(ScheduleRow {
                    k,
                    alpha: state.schedule.alpha(),
                    sigma: s,
                    val_perf,
                    fired: decision.fired,
                });
            }
        }

        let reset = match (&state.averager, config.ama_config().and_then(|c| c.k_w)) {
            (Averager::Ama(_), Some(k_w)) => k_w,
            _ => config.validation.reset_interval,
        };
        if k % reset == 0 {
            state.base_val.reset();
            state.ema_val.reset();
        }
        if let Averager::Ama(a) = &mut state.averager {
            if let Some(adapt) = a.weight_phase(k) {
                log::debug!("seed {seed}: k = {k}, MA{} won, gamma = {:?}", adapt.winner, adapt.gamma);
            }
        }
        Ok(())
    }

    fn record_metrics(&mut self, t: u64) -> Result<()> {
        let params = self.inference_params().clone();
        let model = &self.config.model;
        let p_le = if t >= 2 {
            Some(self.state.ledger.learning_efficacy(t - 1)?)
        } else {
            None
        };
        let p_ir = match information_retention(model, &params, &self.holdout, t) {
            Ok(v) => Some(v),
            Err(Error::EmptyPool) => None,
            Err(e) => return Err(e),
        };
        let (k1, k2) = (self.state.ledger.k1, self.state.ledger.k2);
        let p_ft = if !self.config.eval.skip_forward_transfer && t + k2 <= self.spec.horizon {
            match forward_transfer(model, &params, &mut self.future, t, k1, k2) {
                Ok(v) => Some(v),
                Err(Error::EmptyDataset) => None,
                Err(e) => return Err(e),
            }
        } else {
            None
        };
        self.future.forget_before(t + 1 + k1);
        let (g1, g2, best) = match &self.state.averager {
            Averager::None => (None, None, None),
            Averager::Ema(e) => (Some(e.gamma), None, None),
            Averager::Ama(a) => (Some(a.gamma()[0]), Some(a.gamma()[1]), Some(a.i_best())),
        };
        let row = MetricRow {
            t,
            k: self.state.k,
            p_le,
            p_ir,
            p_ft,
            alpha: self.state.schedule.alpha(),
            sigma: self.state.last_sigma,
            gamma_ma1: g1,
            gamma_ma2: g2,
            i_best: best,
        };
        self.state.ledger.push_row(row)
    }

    /// Steps until the horizon.
    pub fn run_to_end(&mut self) -> Result<()> {
        while !self.done() {
            self.step()?;
        }
        Ok(())
    }

    pub fn summary(&self) -> Summary {
        Summary::from_state(&self.state)
    }

    /// Writes `checkpoint.json`, `pool.bin` and `holdout.bin` into `dir`.
    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let f = BufWriter::new(File::create(dir.join(CHECKPOINT_FILE))?);
        serde_json::to_writer(f, &self.state).map_err(|e| Error::Format(e.to_string()))?;
        self.pool.write_to(BufWriter::new(File::create(dir.join(POOL_FILE))?))?;
        self.holdout.pool().write_to(BufWriter::new(File::create(dir.join(HOLDOUT_FILE))?))?;
        Ok(())
    }

    /// Continues a run from files written by [`Runner::save_checkpoint`].
    pub fn resume(config: &ExperimentConfig, dir: &Path) -> Result<Self> {
        let f = BufReader::new(File::open(dir.join(CHECKPOINT_FILE))?);
        let state: RunState = serde_json::from_reader(f).map_err(|e| Error::Format(e.to_string()))?;
        let mut runner = Runner::new(config, state.seed)?;
        let cls = config.model.is_classifier();
        runner.pool = DataPool::read_from(BufReader::new(File::open(dir.join(POOL_FILE))?), cls)?;
        let held = DataPool::read_from(BufReader::new(File::open(dir.join(HOLDOUT_FILE))?), cls)?;
        runner.holdout = HoldoutPool::from_pool(config.holdout_fraction, held);
        runner.state = state;
        Ok(runner)
    }
}

pub const METRICS_FILE: &str = "metrics.csv";
pub const SCHEDULE_FILE: &str = "schedule.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const POOL_FILE: &str = "pool.bin";
pub const HOLDOUT_FILE: &str = "holdout.bin";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_FILE: &str = "manifest.toml";

/// Horizon-end numbers of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub label: String,
    pub t: u64,
    pub k: u64,
    pub p_le: Option<f64>,
    pub p_ir: Option<f64>,
    /// Last defined forward-transfer value.
    pub p_ft: Option<f64>,
    pub alpha: f64,
    pub reductions: u32,
    pub counts: ComputeCounts,
}

impl Summary {
    pub fn from_state(state: &RunState) -> Self {
        let rows = state.ledger.rows();
        let last = rows.last();
        Summary {
            seed: state.seed,
            label: state.ledger.optimizer.clone(),
            t: state.t,
            k: state.k,
            p_le: last.and_then(|r| r.p_le),
            p_ir: last.and_then(|r| r.p_ir),
            p_ft: rows.iter().rev().find_map(|r| r.p_ft),
            alpha: state.schedule.alpha(),
            reductions: state.schedule.reductions(),
            counts: state.counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub label: String,
    pub seed: u64,
    pub version: String,
    pub status: String,
    pub t: u64,
    pub k: u64,
    pub counts: ComputeCounts,
    pub config: String,
}

/// Result of one seed.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: RunState,
    pub summary: Summary,
    pub final_params: ParamVector,
    pub dir: Option<PathBuf>,
    pub diverged: Option<String>,
}

/// Runs one seed entirely in memory.
pub fn run_seed(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let mut runner = Runner::new(config, seed)?;
    let diverged = match runner.run_to_end() {
        Ok(()) => None,
        Err(Error::Divergence(msg)) => Some(msg),
        Err(e) => return Err(e),
    };
    Ok(RunOutput {
        summary: runner.summary(),
        final_params: runner.inference_params().clone(),
        state: runner.state,
        dir: None,
        diverged,
    })
}

/// Directory of one seed's artifacts.
pub fn seed_dir(config: &ExperimentConfig, seed: u64) -> PathBuf {
    config.output_dir.join(&config.name).join(format!("seed-{seed}"))
}

fn write_artifacts(config: &ExperimentConfig, runner: &Runner, diverged: Option<&str>) -> Result<PathBuf> {
    let dir = seed_dir(config, runner.state.seed);
    std::fs::create_dir_all(&dir)?;
    write_metric_csv(runner.state.ledger.rows(), BufWriter::new(File::create(dir.join(METRICS_FILE))?))?;
    write_schedule_csv(&runner.state.schedule_rows, BufWriter::new(File::create(dir.join(SCHEDULE_FILE))?))?;
    runner.save_checkpoint(&dir)?;
    let mut echo = config.clone();
    echo.seeds = vec![runner.state.seed];
    std::fs::write(dir.join(CONFIG_FILE), echo.to_toml()?)?;
    let manifest = Manifest {
        name: config.name.clone(),
        label: config.label(),
        seed: runner.state.seed,
        version: env!("CARGO_PKG_VERSION").to_string(),
        status: match diverged {
            None => "complete".into(),
            Some(msg) => format!("diverged: {msg}"),
        },
        t: runner.state.t,
        k: runner.state.k,
        counts: runner.state.counts,
        config: CONFIG_FILE.into(),
    };
    let text = toml::to_string(&manifest).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(dir)
}

/// Runs one seed and writes its artifacts, including partial ones when the
/// run diverges.
pub fn run_seed_to_disk(config: &ExperimentConfig, seed: u64) -> Result<RunOutput> {
    let mut runner = Runner::new(config, seed)?;
    let diverged = match runner.run_to_end() {
        Ok(()) => None,
        Err(Error::Divergence(msg)) => Some(msg),
        Err(e) => return Err(e),
    };
    let dir = write_artifacts(config, &runner, diverged.as_deref())?;
    Ok(RunOutput {
        summary: runner.summary(),
        final_params: runner.inference_params().clone(),
        state: runner.state,
        dir: Some(dir),
        diverged,
    })
}

/// Runs every seed in parallel, writing artifacts. Returns the outputs in
/// seed order; a divergence in any seed is reported after all seeds finish.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    config.validate()?;
    let outputs: Vec<RunOutput> = config
        .seeds
        .par_iter()
        .map(|s| run_seed_to_disk(config, *s))
        .collect::<Result<_>>()?;
    Ok(outputs)
}

/// Runs every seed in parallel without touching the disk.
pub fn run_in_memory(config: &ExperimentConfig) -> Result<Vec<RunOutput>> {
    config.validate()?;
    config.seeds.par_iter().map(|s| run_seed(config, *s)).collect()
}
