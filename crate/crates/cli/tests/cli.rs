use std::path::Path;
use std::process::{Command, Output};

fn amalr(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amalr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn small(extra: &[&'static str]) -> Vec<&'static str> {
    let mut v = vec![
        "--override",
        "stream.horizon=200",
        "--override",
        "seeds=[1, 2]",
        "--override",
        "output_dir=\"out\"",
    ];
    v.extend_from_slice(extra);
    v
}

#[test]
fn preset_writes_runs_and_report() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["preset", "main-comparison"];
    args.extend(small(&[]));
    let out = amalr(tmp.path(), &args);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    for label in ["sgd+rwp", "ama+rwp", "ama+malr"] {
        assert!(stdout.contains(label), "{stdout}");
        let seed = tmp.path().join("out/main-comparison").join(label).join("seed-2");
        for f in ["metrics.csv", "schedule.csv", "manifest.toml", "config.toml", "checkpoint.json"] {
            assert!(seed.join(f).exists(), "missing {f}");
        }
    }
    assert!(tmp.path().join("out/main-comparison/summary.csv").exists());
    assert!(tmp.path().join("out/main-comparison/ama+malr/mean_trace.csv").exists());

    let report = amalr(tmp.path(), &["report", "out/main-comparison"]);
    assert_eq!(report.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&report.stdout).contains("P_FT"));
}

#[test]
fn dumped_configs_run_and_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["preset", "adam-base", "--dump", "cfgs"];
    args.extend(small(&[]));
    assert_eq!(amalr(tmp.path(), &args).status.code(), Some(0));

    let run = amalr(tmp.path(), &["run", "cfgs/adam+rwp.toml"]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    assert!(tmp.path().join("out/adam-base/adam+rwp/seed-1/metrics.csv").exists());

    let sweep = amalr(tmp.path(), &["sweep", "cfgs/*.toml"]);
    assert_eq!(sweep.status.code(), Some(0), "{}", String::from_utf8_lossy(&sweep.stderr));
    assert!(tmp.path().join("out/adam-base/adam+ama+malr/seed-2/metrics.csv").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(amalr(tmp.path(), &["preset", "no-such-preset"]).status.code(), Some(2));
    assert_eq!(amalr(tmp.path(), &["run", "missing.toml"]).status.code(), Some(2));
    let bad_key = amalr(tmp.path(), &["preset", "main-comparison", "--override", "nope.lr=1"]);
    assert_eq!(bad_key.status.code(), Some(2));
    let bad_form = amalr(tmp.path(), &["preset", "main-comparison", "--override", "schedule.lr"]);
    assert_eq!(bad_form.status.code(), Some(2));

    std::fs::write(tmp.path().join("broken.toml"), "name = 3\n").unwrap();
    assert_eq!(amalr(tmp.path(), &["run", "broken.toml"]).status.code(), Some(2));
    assert_eq!(amalr(tmp.path(), &["sweep", "nothing-*.toml"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3_and_keeps_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let mut args = vec!["preset", "main-comparison"];
    args.extend(small(&["--override", "schedule.lr=1e9"]));
    let out = amalr(tmp.path(), &args);
    assert_eq!(out.status.code(), Some(3));
    let manifest =
        std::fs::read_to_string(tmp.path().join("out/main-comparison/sgd+rwp/seed-1/manifest.toml")).unwrap();
    assert!(manifest.contains("diverged"), "{manifest}");
}

#[test]
fn verify_bounds_pass_and_fail() {
    let tmp = tempfile::tempdir().unwrap();
    let dump = amalr(
        tmp.path(),
        &[
            "preset",
            "theory-verify",
            "--dump",
            "cfgs",
            "--override",
            "output_dir=\"out\"",
            "--override",
            "theory.0.n_seeds=4",
            "--override",
            "theory.0.k_max=200",
        ],
    );
    assert_eq!(dump.status.code(), Some(0), "{}", String::from_utf8_lossy(&dump.stderr));
    let cfg = std::fs::read_dir(tmp.path().join("cfgs")).unwrap().next().unwrap().unwrap().path();

    let ok = amalr(tmp.path(), &["verify-bounds", cfg.to_str().unwrap()]);
    assert_eq!(ok.status.code(), Some(0), "{}", String::from_utf8_lossy(&ok.stderr));
    assert!(String::from_utf8_lossy(&ok.stdout).contains("PASS"));

    // A constant step above L/2 violates the theorem precondition.
    let text = std::fs::read_to_string(&cfg).unwrap().replacen("alpha = 0.1", "alpha = 1.5", 1);
    assert!(text.contains("alpha = 1.5"));
    std::fs::write(tmp.path().join("bad.toml"), text).unwrap();
    let bad = amalr(tmp.path(), &["verify-bounds", "bad.toml"]);
    assert_eq!(bad.status.code(), Some(4), "{}", String::from_utf8_lossy(&bad.stderr));

    let no_theory = amalr(tmp.path(), &["preset", "adam-base", "--dump", "plain"]);
    assert_eq!(no_theory.status.code(), Some(0));
    let plain = amalr(tmp.path(), &["verify-bounds", "plain/adam+rwp.toml"]);
    assert_eq!(plain.status.code(), Some(2));
}
