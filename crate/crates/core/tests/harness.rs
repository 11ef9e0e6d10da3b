use std::path::Path;

use amalr::harness::presets::trace_schedule;
use amalr::harness::report::build_report;
use amalr::harness::runner::{seed_dir, METRICS_FILE, SCHEDULE_FILE};
use amalr::harness::{preset, run_experiment, run_seed, ExperimentConfig, Runner, PRESET_NAMES};
use amalr::schedule::{ScheduleConfig, ScheduleKind};
use amalr::stats::mean_se;
use amalr::Error;

fn small(label: &str, horizon: u64, out: &Path) -> ExperimentConfig {
    preset("main-comparison")
        .unwrap()
        .variant(label)
        .unwrap()
        .config
        .with_override("stream.horizon", &horizon.to_string())
        .unwrap()
        .with_override("seeds", "[1, 2]")
        .unwrap()
        .with_override("output_dir", &format!("{:?}", out.display().to_string()))
        .unwrap()
}

#[test]
fn every_preset_validates_and_round_trips_through_toml() {
    for name in PRESET_NAMES {
        let study = preset(name).unwrap();
        study.validate().unwrap();
        assert!(!study.variants.is_empty());
        for v in &study.variants {
            let text = v.config.to_toml().unwrap();
            let back = ExperimentConfig::from_toml(&text).unwrap();
            assert_eq!(back, v.config, "{name}/{}", v.label);
            assert!(v.config.name.starts_with(name));
        }
    }
    assert!(matches!(preset("nope"), Err(Error::UnknownPreset(_))));
}

#[test]
fn overrides_reach_nested_keys_and_reject_bad_ones() {
    let base = preset("main-comparison").unwrap().variants[2].config.clone();
    let c = base.with_override("schedule.lr", "0.5").unwrap();
    assert_eq!(c.schedule.lr, 0.5);
    let c = base.with_override("stream.seed", "77").unwrap();
    assert_eq!(c.stream.seed, 77);
    let c = base.with_override("schedule.kind.use_c2", "false").unwrap();
    assert_eq!(c.schedule.kind, ScheduleKind::Malr { use_c1: true, use_c2: false, use_c3: true });
    assert!(base.with_override("nope.x", "1").is_err());
    assert!(base.with_override("minibatch", "0").is_err());
    assert!(base.with_override("schedule.lr", "\"fast\"").is_err());

    let theory = preset("theory-verify").unwrap().variants[0].config.clone();
    let t = theory.with_override("theory.2.k_max", "100").unwrap();
    assert_eq!(t.theory[2].k_max, 100);
    assert!(theory.with_override("theory.99.k_max", "100").is_err());
}

#[test]
fn reruns_reproduce_csvs_byte_for_byte() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ca = small("ama+malr", 300, a.path());
    let cb = small("ama+malr", 300, b.path());
    run_experiment(&ca).unwrap();
    run_experiment(&cb).unwrap();
    for seed in [1, 2] {
        for f in [METRICS_FILE, SCHEDULE_FILE] {
            let x = std::fs::read(seed_dir(&ca, seed).join(f)).unwrap();
            let y = std::fs::read(seed_dir(&cb, seed).join(f)).unwrap();
            assert!(!x.is_empty());
            assert_eq!(x, y, "seed {seed} {f}");
        }
    }
    let s1 = std::fs::read(seed_dir(&ca, 1).join(METRICS_FILE)).unwrap();
    let s2 = std::fs::read(seed_dir(&ca, 2).join(METRICS_FILE)).unwrap();
    assert_ne!(s1, s2);

    // The echoed config replays to the same bytes.
    let echo = ExperimentConfig::load(&seed_dir(&ca, 1).join("config.toml")).unwrap();
    assert_eq!(echo.seeds, vec![1]);
    let c = tempfile::tempdir().unwrap();
    let replay = echo.with_override("output_dir", &format!("{:?}", c.path().display().to_string())).unwrap();
    run_experiment(&replay).unwrap();
    assert_eq!(std::fs::read(seed_dir(&replay, 1).join(METRICS_FILE)).unwrap(), s1);
}

#[test]
fn resume_from_checkpoint_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    for label in ["sgd+rwp", "ama+malr"] {
        let cfg = small(label, 240, dir.path());
        let whole = run_seed(&cfg, 1).unwrap();

        let mut first = Runner::new(&cfg, 1).unwrap();
        for _ in 0..97 {
            first.step().unwrap();
        }
        let ck = dir.path().join(format!("ck-{label}"));
        first.save_checkpoint(&ck).unwrap();
        drop(first);
        let mut resumed = Runner::resume(&cfg, &ck).unwrap();
        resumed.run_to_end().unwrap();
        assert_eq!(resumed.state, whole.state, "{label}");
        assert_eq!(resumed.inference_params(), &whole.final_params);
    }
}

#[test]
fn no_training_predicts_at_chance() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("sgd+rwp", 1000, dir.path()).with_override("iterations_per_step", "0").unwrap();
    let out = run_seed(&cfg, 3).unwrap();
    assert_eq!(out.summary.counts.grad, 0);
    assert_eq!(out.state.k, 0);
    let p_le = out.summary.p_le.unwrap();
    // Untrained linear model always predicts class 0 of 4 balanced classes.
    assert!((p_le - 0.25).abs() < 0.03, "P_LE = {p_le}");
}

#[test]
fn step_ahead_records_use_pre_update_models() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("sgd+rwp", 200, dir.path()).with_override("schedule.kind.type", "\"constant\"").unwrap();
    let a = run_seed(&cfg, 4).unwrap();
    // Same run, except the learning rate changes from iteration 101 on
    // (the first iteration of step 101 with p = 1).
    let mut b_cfg = cfg.clone();
    b_cfg.schedule = ScheduleConfig::new(ScheduleKind::Trace { points: vec![(1, cfg.schedule.lr), (101, 0.5)] }, cfg.schedule.lr);
    let b = run_seed(&b_cfg, 4).unwrap();
    let (ra, rb) = (a.state.ledger.step_ahead(), b.state.ledger.step_ahead());
    // Record j scores θ_j, the model after step j.
    for (x, y) in ra.iter().zip(rb).filter(|(x, _)| x.0 <= 100) {
        assert_eq!(x, y);
    }
    assert!(ra.iter().zip(rb).any(|(x, y)| x.0 > 100 && x != y));
}

#[test]
fn replayed_trace_reproduces_the_source_learning_rates() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("ama+malr", 2000, dir.path())
        .with_override("schedule.patience", "40")
        .unwrap()
        .with_override("schedule.epsilon", "-1.0")
        .unwrap();
    let src = run_seed(&cfg, 1).unwrap();
    assert!(src.summary.reductions > 0, "source run should cut its learning rate");
    let sched = trace_schedule(&cfg.schedule, &src);
    let mut follower = cfg.clone();
    follower.schedule = sched;
    let mut runner = Runner::new(&follower, 1).unwrap();
    let mut lrs = Vec::new();
    for k in 1..=src.state.k {
        lrs.push(runner.state.schedule.lr(k).unwrap());
    }
    // α in force after each logged event equals the trace one iteration later.
    for row in &src.state.schedule_rows {
        if row.k < src.state.k {
            assert_eq!(lrs[row.k as usize], row.alpha, "k = {}", row.k);
        }
    }
}

#[test]
fn divergence_is_reported_not_raised() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("sgd+rwp", 100, dir.path()).with_override("schedule.lr", "1e12").unwrap();
    let out = run_seed(&cfg, 1).unwrap();
    assert!(out.diverged.is_some());
    assert!(out.state.t < 100);
}

#[test]
fn report_aggregates_seed_directories() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small("ama+rwp", 300, dir.path());
    let outs = run_experiment(&cfg).unwrap();
    let root = dir.path().join("main-comparison");
    let report = build_report(&root).unwrap();
    assert_eq!(report.groups.len(), 1);
    let g = &report.groups[0];
    assert_eq!(g.group, "ama+rwp");
    assert_eq!(g.seeds, 2);
    let (m, se) = mean_se(&outs.iter().map(|o| o.summary.p_ir.unwrap()).collect::<Vec<_>>());
    assert!((g.p_ir - m).abs() < 1e-12 && (g.p_ir_se - se).abs() < 1e-12);
    report.write(&root).unwrap();
    assert!(root.join("summary.csv").exists());
    let trace = std::fs::read_to_string(root.join("ama+rwp/mean_trace.csv")).unwrap();
    assert!(trace.starts_with("t,P_LE,P_IR,P_FT,alpha"));
    assert!(build_report(&dir.path().join("missing")).is_err());
}

/// Larger minibatches with proportionally fewer iterations do not degrade
/// the metrics at this scale; kept for reference.
#[test]
#[ignore]
fn larger_batches_degrade_all_metrics() {
    let results = preset("batch-size").unwrap().run(false).unwrap();
    let mean = |label: &str, f: &dyn Fn(&amalr::harness::Summary) -> Option<f64>| {
        let xs: Vec<f64> = results[label].iter().filter_map(|o| f(&o.summary)).collect();
        mean_se(&xs).0
    };
    let labels: Vec<String> = preset("batch-size").unwrap().variants.iter().map(|v| v.label.clone()).collect();
    for w in labels.windows(2) {
        assert!(mean(&w[0], &|s| s.p_le) > mean(&w[1], &|s| s.p_le));
        assert!(mean(&w[0], &|s| s.p_ir) > mean(&w[1], &|s| s.p_ir));
        assert!(mean(&w[0], &|s| s.p_ft) > mean(&w[1], &|s| s.p_ft));
    }
}
