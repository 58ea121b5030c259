//! The `coded-fl` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use crate::config::{load_experiment, Experiment, Shift};
use crate::data::{gen_synth, write_csv};
use crate::error::{Error, Result};
use crate::fedsim::{run_fedavg_baseline, write_metrics, CodedWorld, MetricsHeader, RoundRecord};
use crate::oracle::CentralizedTrainer;
use crate::verify::{run_suite, Suite};

#[derive(Debug, Parser)]
#[command(name = "coded-fl", version, about = "Lagrange-coded federated training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train from a config file and write metrics.csv and summary.toml.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: Mode,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a property suite.
    Verify {
        #[arg(long, value_parser = ["field", "coding", "pinn", "protocol"])]
        suite: String,
    },
    /// Write a Gaussian-blob classification dataset as CSV.
    GenSynth {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        dx: usize,
        #[arg(long)]
        classes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    /// Coded protocol with dropouts.
    Dres,
    /// Plain-text federated averaging baseline.
    Fedavg,
    /// Exact integer training on the pooled data.
    Centralized,
}

impl Mode {
    fn name(self) -> &'static str {
        match self {
            Mode::Dres => "dres",
            Mode::Fedavg => "fedavg",
            Mode::Centralized => "centralized",
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) => 1,
        Error::Config(_) | Error::CapacityOverflow { .. } | Error::Format(_) => 2,
        Error::Io(_) => 3,
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match cli.command {
        Command::Run { config, mode, out } => cmd_run(&config, mode, &out),
        Command::Verify { suite } => cmd_verify(&suite),
        Command::GenSynth {
            n,
            dx,
            classes,
            seed,
            out,
        } => cmd_gen_synth(n, dx, classes, seed, &out).map(|()| 0),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub records: Vec<RoundRecord>,
    pub wall_seconds: f64,
}

pub fn run_experiment(exp: &Experiment, mode: Mode) -> Result<RunOutcome> {
    let start = Instant::now();
    let records = match mode {
        Mode::Dres => CodedWorld::new(exp.setup.clone())?.run()?,
        Mode::Centralized => CentralizedTrainer::new(exp.setup.clone())?.run()?,
        Mode::Fedavg => run_fedavg_baseline(
            &exp.setup.arch,
            &exp.setup.locals,
            &exp.setup.test,
            &exp.setup.dropout,
            exp.setup.train.seeds,
            &exp.fedavg,
        )?,
    };
    Ok(RunOutcome {
        records,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

fn cmd_run(config: &Path, mode: Mode, out: &Path) -> Result<i32> {
    let exp = load_experiment(config)?;
    let outcome = run_experiment(&exp, mode)?;
    fs::create_dir_all(out)?;
    let header = MetricsHeader {
        scale_bits: exp.setup.quant.scale_bits(),
        shift: exp.setup.quant.shift(),
        seeds: exp.setup.train.seeds,
    };
    let csv = fs::File::create(out.join("metrics.csv"))?;
    write_metrics(std::io::BufWriter::new(csv), &header, &outcome.records)?;
    fs::write(out.join("summary.toml"), summary_toml(&exp, config, mode, &outcome)?)?;

    let last = outcome.records.last();
    let skipped = outcome.records.iter().filter(|r| r.skipped).count();
    println!(
        "{} rounds ({skipped} skipped), final test accuracy {:.4}, {:.2}s -> {}",
        outcome.records.len(),
        last.map_or(f64::NAN, |r| r.test_acc),
        outcome.wall_seconds,
        out.display()
    );
    Ok(0)
}

/// The effective configuration, with resolved paths and shift, followed by
/// a `[summary]` table. The file is itself a valid config.
pub fn summary_toml(exp: &Experiment, config: &Path, mode: Mode, outcome: &RunOutcome) -> Result<String> {
    let mut spec = exp.spec.clone();
    spec.quant.shift = Shift::Value(exp.setup.quant.shift());
    if spec.data.source != "synthetic" {
        let base = config.parent().unwrap_or(Path::new("."));
        let resolved = fs::canonicalize(base.join(&spec.data.source))?;
        spec.data.source = resolved.display().to_string();
    }
    let mut summary = toml::Table::new();
    let last = outcome.records.last();
    summary.insert("mode".into(), mode.name().into());
    summary.insert("rounds".into(), (outcome.records.len() as i64).into());
    summary.insert(
        "skipped_rounds".into(),
        (outcome.records.iter().filter(|r| r.skipped).count() as i64).into(),
    );
    summary.insert("final_test_acc".into(), last.map_or(f64::NAN, |r| r.test_acc).into());
    summary.insert("final_train_loss".into(), last.map_or(f64::NAN, |r| r.train_loss).into());
    summary.insert("wall_time_s".into(), outcome.wall_seconds.into());
    spec.summary = Some(summary);
    spec.to_toml()
}

fn cmd_verify(name: &str) -> Result<i32> {
    let suite: Suite = name.parse()?;
    let checks = run_suite(suite);
    let mut stdout = std::io::stdout().lock();
    for c in &checks {
        writeln!(stdout, "{c}")?;
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    writeln!(stdout, "{}: {}/{} passed", suite.name(), checks.len() - failed, checks.len())?;
    Ok(if failed == 0 { 0 } else { 1 })
}

fn cmd_gen_synth(n: usize, dx: usize, classes: usize, seed: u64, out: &Path) -> Result<()> {
    let ds = gen_synth(n, dx, classes, seed)?;
    write_csv(out, &ds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::Domain("x".into())), 1);
        assert_eq!(exit_code(&Error::Config("x".into())), 2);
        assert_eq!(
            exit_code(&Error::CapacityOverflow {
                value: "1".into(),
                half: "0".into()
            }),
            2
        );
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 3);
    }

    #[test]
    fn usage_errors() {
        assert_eq!(run_cli(["coded-fl", "verify", "--suite", "nope"]), 2);
        assert_eq!(run_cli(["coded-fl", "bogus"]), 2);
        assert_eq!(run_cli(["coded-fl", "run", "--config", "x.toml", "--mode", "sgd", "--out", "o"]), 2);
    }

    #[test]
    fn missing_config_is_io() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("missing.toml");
        let code = run_cli([
            "coded-fl".as_ref(),
            "run".as_ref(),
            "--config".as_ref(),
            cfg.as_os_str(),
            "--mode".as_ref(),
            "dres".as_ref(),
            "--out".as_ref(),
            dir.path().as_os_str(),
        ]);
        assert_eq!(code, 3);
    }
}
