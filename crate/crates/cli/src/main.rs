use std::path::{Path, PathBuf};
use std::process::ExitCode;

use amalr::harness::report::build_report;
use amalr::harness::{preset, run_experiment, ExperimentConfig, RunOutput, Study, PRESET_NAMES};
use amalr::theory::verify_bound;
use amalr::Error;
use clap::{Parser, Subcommand};
use log::info;

const EXIT_CONFIG: u8 = 2;
const EXIT_DIVERGED: u8 = 3;
const EXIT_BOUND: u8 = 4;

#[derive(Parser)]
#[command(name = "amalr", version, about = "Online continual learning experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every seed of one experiment config.
    Run { config: PathBuf },
    /// Run a named study.
    Preset {
        name: String,
        /// Dotted-key override applied to every variant, e.g. `stream.horizon=500`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Write each variant's config into this directory instead of running.
        #[arg(long, value_name = "DIR")]
        dump: Option<PathBuf>,
    },
    /// Run every config matching a glob pattern.
    Sweep { pattern: String },
    /// Check the expected-gradient bound for the `[[theory]]` entries of a config.
    VerifyBounds { config: PathBuf },
    /// Summarize a directory of finished runs.
    Report { run_dir: PathBuf },
}

/// Failure carrying its exit code.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Divergence(_) => EXIT_DIVERGED,
            Error::Precondition { .. } => EXIT_BOUND,
            Error::Io(_) | Error::Csv(_) | Error::MissingRecord(_) => 1,
            _ => EXIT_CONFIG,
        };
        Fail(code, e.to_string())
    }
}

fn load(path: &Path) -> Result<ExperimentConfig, Fail> {
    let text = std::fs::read_to_string(path).map_err(|e| Fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    let cfg = ExperimentConfig::from_toml(&text).map_err(|e| Fail(EXIT_CONFIG, format!("{}: {e}", path.display())))?;
    cfg.validate()?;
    Ok(cfg)
}

fn check_divergence<'a>(outs: impl IntoIterator<Item = &'a RunOutput>) -> Result<(), Fail> {
    let diverged: Vec<String> = outs
        .into_iter()
        .filter_map(|o| o.diverged.as_ref().map(|m| format!("{} seed {}: {m}", o.summary.label, o.summary.seed)))
        .collect();
    if diverged.is_empty() {
        Ok(())
    } else {
        Err(Fail(EXIT_DIVERGED, diverged.join("\n")))
    }
}

fn print_report(dir: &Path) -> Result<(), Fail> {
    let report = build_report(dir)?;
    report.write(dir)?;
    print!("{}", report.table());
    Ok(())
}

fn run(path: &Path) -> Result<(), Fail> {
    let cfg = load(path)?;
    info!("running {} ({} seeds)", cfg.name, cfg.seeds.len());
    let outs = run_experiment(&cfg)?;
    print_report(&cfg.output_dir.join(&cfg.name))?;
    check_divergence(&outs)
}

fn apply_overrides(mut study: Study, overrides: &[String]) -> Result<Study, Fail> {
    for kv in overrides {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Fail(EXIT_CONFIG, format!("override `{kv}` is not KEY=VALUE")))?;
        study = study.with_override(k.trim(), v.trim())?;
    }
    Ok(study)
}

fn run_preset(name: &str, overrides: &[String], dump: Option<&Path>) -> Result<(), Fail> {
    let study = preset(name).map_err(|e| Fail(EXIT_CONFIG, format!("{e}; known presets: {}", PRESET_NAMES.join(", "))))?;
    let study = apply_overrides(study, overrides)?;
    study.validate()?;
    if let Some(dir) = dump {
        std::fs::create_dir_all(dir).map_err(Error::from)?;
        for v in &study.variants {
            let path = dir.join(format!("{}.toml", v.label));
            std::fs::write(&path, v.config.to_toml()?).map_err(Error::from)?;
            println!("{}", path.display());
        }
        return Ok(());
    }
    if study.variants.iter().all(|v| !v.config.theory.is_empty()) {
        for v in &study.variants {
            verify(&v.config)?;
        }
        return Ok(());
    }
    let results = study.run(true)?;
    let root = study.variants[0].config.output_dir.join(&study.name);
    print_report(&root)?;
    check_divergence(results.values().flatten())
}

fn sweep(pattern: &str) -> Result<(), Fail> {
    let paths: Vec<PathBuf> = glob::glob(pattern)
        .map_err(|e| Fail(EXIT_CONFIG, format!("bad pattern: {e}")))?
        .collect::<Result<_, _>>()
        .map_err(|e| Fail(1, e.to_string()))?;
    if paths.is_empty() {
        return Err(Fail(EXIT_CONFIG, format!("no config matches `{pattern}`")));
    }
    // Validate everything before running anything.
    let configs: Vec<ExperimentConfig> = paths.iter().map(|p| load(p)).collect::<Result<_, _>>()?;
    let mut outs = Vec::new();
    for cfg in &configs {
        info!("running {}", cfg.name);
        outs.extend(run_experiment(cfg)?);
    }
    let mut roots: Vec<PathBuf> = configs.iter().map(|c| c.output_dir.clone()).collect();
    roots.sort();
    roots.dedup();
    for root in roots {
        print_report(&root)?;
    }
    check_divergence(&outs)
}

fn verify(cfg: &ExperimentConfig) -> Result<(), Fail> {
    if cfg.theory.is_empty() {
        return Err(Fail(EXIT_CONFIG, "config has no [[theory]] entries".into()));
    }
    let dir = cfg.output_dir.join(&cfg.name);
    std::fs::create_dir_all(&dir).map_err(Error::from)?;
    let mut failed = Vec::new();
    for t in &cfg.theory {
        let report = verify_bound(t)?;
        let file = std::fs::File::create(dir.join(format!("bound-{}.csv", t.label))).map_err(Error::from)?;
        report.write_csv(std::io::BufWriter::new(file))?;
        let bad = report.rows.iter().filter(|r| !r.passed).count();
        println!(
            "{:<24} {} checkpoints={} failed={} excursions={}",
            t.label,
            if report.passed() { "PASS" } else { "FAIL" },
            report.rows.len(),
            bad,
            report.excursions
        );
        if !report.passed() {
            failed.push(t.label.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Fail(EXIT_BOUND, format!("bound not verified for: {}", failed.join(", "))))
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config } => run(config),
        Command::Preset { name, overrides, dump } => run_preset(name, overrides, dump.as_deref()),
        Command::Sweep { pattern } => sweep(pattern),
        Command::VerifyBounds { config } => load(config).and_then(|c| verify(&c)),
        Command::Report { run_dir } => print_report(run_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
