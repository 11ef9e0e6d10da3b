use amalr::rng::{substream, Domain};
use amalr::schedule::{
    read_schedule_csv, write_schedule_csv, ScheduleConfig, ScheduleKind, ScheduleRow, ScheduleState,
    FIRED_C1, FIRED_C2, FIRED_C3, FIRED_REDUCED, IMPROVEMENT_TOL,
};
use proptest::prelude::*;
use rand::Rng;

fn malr(lr: f64, patience: u64, epsilon: f64, enabled: [bool; 3]) -> ScheduleConfig {
    let mut c = ScheduleConfig::new(
        ScheduleKind::Malr {
            use_c1: enabled[0],
            use_c2: enabled[1],
            use_c3: enabled[2],
        },
        lr,
    );
    c.patience = patience;
    c.epsilon = epsilon;
    c
}

/// Straight-line re-implementation of the MALR rule used as an oracle.
struct Oracle {
    alpha: f64,
    best_perf: Option<(f64, u64)>,
    best_sigma: Option<(f64, u64)>,
}

impl Oracle {
    fn stale(best: &mut Option<(f64, u64)>, v: f64, k: u64) -> u64 {
        if let Some((b, since)) = *best {
            if v <= b + IMPROVEMENT_TOL {
                return k - since;
            }
        }
        *best = Some((v, k));
        0
    }

    fn feed(&mut self, cfg: &ScheduleConfig, enabled: [bool; 3], k: u64, perf: f64, sigma: f64) -> u8 {
        let sp = Self::stale(&mut self.best_perf, perf, k);
        let ss = Self::stale(&mut self.best_sigma, sigma, k);
        let c1 = sp >= cfg.patience;
        let c2 = ss >= cfg.patience;
        let c3 = sigma > cfg.epsilon;
        let mut fired = 0;
        if c1 {
            fired |= FIRED_C1;
        }
        if c2 {
            fired |= FIRED_C2;
        }
        if c3 {
            fired |= FIRED_C3;
        }
        if (c1 || !enabled[0]) && (c2 || !enabled[1]) && (c3 || !enabled[2]) {
            fired |= FIRED_REDUCED;
            self.alpha *= cfg.factor;
            self.best_perf = Some((perf, k));
            self.best_sigma = Some((sigma, k));
        }
        fired
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn malr_matches_counter_walk(
        seed in 0u64..100_000,
        patience in 1u64..200,
        k_v in 1u64..30,
        enabled in proptest::array::uniform3(any::<bool>()),
        epsilon in 0.0f64..0.1,
    ) {
        let cfg = malr(0.1, patience, epsilon, enabled);
        let mut state = ScheduleState::new(cfg.clone()).unwrap();
        let mut oracle = Oracle { alpha: 0.1, best_perf: None, best_sigma: None };
        let mut rng = substream(seed, Domain::Test, 0);
        // Plateau-ish signals with occasional improvements.
        let (mut perf, mut sigma) = (0.5f64, 0.0f64);
        for e in 1..=300u64 {
            perf += rng.random_range(-0.02..0.021);
            sigma = (sigma + rng.random_range(-0.01..0.012)).clamp(-0.2, 0.2);
            let k = e * k_v;
            let d = state.observe(k, perf, Some(sigma)).unwrap();
            let expect = oracle.feed(&cfg, enabled, k, perf, sigma);
            prop_assert_eq!(d.fired, expect, "event {}", e);
            prop_assert_eq!(state.alpha(), oracle.alpha);
        }
    }

    #[test]
    fn plateau_schedules_only_shrink(
        seed in 0u64..100_000,
        rwp in any::<bool>(),
        factor in 0.05f64..0.95,
        patience in 1u64..100,
    ) {
        let mut cfg = if rwp {
            ScheduleConfig::new(ScheduleKind::Rwp, 0.2)
        } else {
            malr(0.2, patience, 0.0, [true; 3])
        };
        cfg.factor = factor;
        cfg.patience = patience;
        let mut state = ScheduleState::new(cfg).unwrap();
        let mut rng = substream(seed, Domain::Test, 0);
        let mut prev = state.alpha();
        for k in (10..=5000).step_by(10) {
            let perf = rng.random::<f64>();
            let sigma = rng.random_range(-0.1..0.1);
            let d = state.observe(k, perf, Some(sigma)).unwrap();
            let a = state.lr(k + 1).unwrap();
            prop_assert!(a > 0.0 && a <= prev);
            prop_assert_eq!(a < prev, d.reduced());
            prev = a;
        }
        let expected = 0.2 * factor.powi(state.reductions() as i32);
        prop_assert!((state.alpha() - expected).abs() <= 1e-12 * expected.max(1e-300));
    }

    #[test]
    fn steady_improvement_never_reduces(
        step in 2e-6f64..1e-2,
        patience in 1u64..50,
        rwp in any::<bool>(),
    ) {
        let cfg = if rwp {
            let mut c = ScheduleConfig::new(ScheduleKind::Rwp, 0.1);
            c.patience = patience;
            c
        } else {
            malr(0.1, patience, 0.0, [true; 3])
        };
        let mut state = ScheduleState::new(cfg).unwrap();
        for e in 1..=500u64 {
            let d = state.observe(e, e as f64 * step, Some(0.5)).unwrap();
            prop_assert!(!d.reduced());
        }
        prop_assert_eq!(state.alpha(), 0.1);
    }

    #[test]
    fn small_sigma_vetoes_malr(seed in 0u64..100_000, epsilon in 0.0f64..0.1) {
        // C3 is never met when σ stays at or below ε.
        let mut state = ScheduleState::new(malr(0.1, 1, epsilon, [true; 3])).unwrap();
        let mut rng = substream(seed, Domain::Test, 0);
        for k in 1..=1000u64 {
            let sigma = epsilon - rng.random::<f64>() * 0.1;
            let d = state.observe(k, 0.3, Some(sigma)).unwrap();
            prop_assert!(!d.reduced());
            prop_assert_eq!(d.fired & FIRED_C3, 0);
        }
    }

    #[test]
    fn cyclic_restarts_every_task(len in 1u64..500, alpha0 in 1e-4f64..1.0) {
        let mut state = ScheduleState::new(ScheduleConfig::new(
            ScheduleKind::Cyclic { task_length: Some(len) },
            alpha0,
        ))
        .unwrap();
        for k in 1..=3 * len {
            let a = state.lr(k).unwrap();
            prop_assert!(a > 0.0 && a <= alpha0);
            if (k - 1) % len == 0 {
                prop_assert_eq!(a, alpha0);
            } else {
                prop_assert!(a < state.clone().lr(k - 1).unwrap());
            }
        }
    }
}

#[test]
fn logged_rows_replay_to_the_same_decisions() {
    let cfg = malr(0.05, 40, 0.01, [true; 3]);
    let mut state = ScheduleState::new(cfg.clone()).unwrap();
    let mut rng = substream(9, Domain::Test, 0);
    let mut rows = Vec::new();
    for e in 1..=400u64 {
        let k = 20 * e;
        let perf = 0.6 + rng.random_range(-0.05..0.05);
        let sigma = 0.02 + rng.random_range(-0.02..0.02);
        let d = state.observe(k, perf, Some(sigma)).unwrap();
        rows.push(ScheduleRow {
            k,
            alpha: state.alpha(),
            sigma: Some(sigma),
            val_perf: perf,
            fired: d.fired,
        });
    }
    assert!(rows.iter().any(|r| r.fired & FIRED_REDUCED != 0));

    let mut bytes = Vec::new();
    write_schedule_csv(&rows, &mut bytes).unwrap();
    let back = read_schedule_csv(bytes.as_slice()).unwrap();
    assert_eq!(back, rows);

    let mut replay = ScheduleState::new(cfg).unwrap();
    for r in &back {
        let d = replay.observe(r.k, r.val_perf, r.sigma).unwrap();
        assert_eq!(d.fired, r.fired);
        assert_eq!(replay.alpha(), r.alpha);
    }
}

#[test]
fn trace_schedule_is_piecewise_constant() {
    let points = vec![(1, 0.1), (50, 0.05), (51, 0.025), (300, 0.0125)];
    let mut state = ScheduleState::new(ScheduleConfig::new(ScheduleKind::Trace { points: points.clone() }, 0.1)).unwrap();
    for k in 1..=400u64 {
        let expect = points.iter().rev().find(|p| p.0 <= k).unwrap().1;
        assert_eq!(state.lr(k).unwrap(), expect);
    }
}
