mod config;
mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ancilla::checks::{verify, VerifyOptions, DEFAULT_CLOSED_FORM_TOL};
use ancilla::exec::ExecMode;
use ancilla::protocols::{robustness_scan, run, ProtocolKind, ProtocolSpec};
use clap::{Args, Parser, Subcommand};

use config::{parse_config, ConfigError, RunConfig};

#[derive(Parser)]
#[command(name = "ancilla", version, about = "Transitionless control protocols in the ancillary picture")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Override the config's steps per T.
    #[arg(long)]
    steps: Option<usize>,
    /// Suppress the summary.
    #[arg(long)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run one protocol and write its time series as CSV.
    Run {
        config: PathBuf,
        /// CSV destination; defaults to the config's output_path, then stdout.
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Robustness scan of the cyclic transfer over an alpha grid.
    Scan {
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Run the invariant suite; exit 0 iff every check passes.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Zero Omega_a in every run (the residual monitor must catch it).
        #[arg(long)]
        fault_zero_omega_a: bool,
        #[arg(long, default_value_t = DEFAULT_CLOSED_FORM_TOL)]
        closed_form_tol: f64,
        /// Run only the named check; repeatable.
        #[arg(long)]
        only: Vec<String>,
        /// Write the table to a file as well.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// List protocol names.
    ListProtocols,
}

enum Failure {
    Core(ancilla::Error),
    Json(serde_json::Error),
    Io(PathBuf, io::Error),
    Csv(csv::Error),
    /// Completed, but checks failed.
    Unmet(&'static str, String),
}

impl Failure {
    fn code(&self) -> &'static str {
        match self {
            Failure::Core(e) => e.code(),
            Failure::Json(_) => "config",
            Failure::Io(..) | Failure::Csv(_) => "io",
            Failure::Unmet(code, _) => code,
        }
    }

    fn message(&self) -> String {
        match self {
            Failure::Core(e) => e.to_string(),
            Failure::Json(e) => format!("invalid configuration: {e}"),
            Failure::Io(p, e) => format!("{}: {e}", p.display()),
            Failure::Csv(e) => e.to_string(),
            Failure::Unmet(_, m) => m.clone(),
        }
    }

    fn exit(&self) -> u8 {
        if matches!(self, Failure::Unmet(..)) {
            1
        } else {
            2
        }
    }
}

impl From<ancilla::Error> for Failure {
    fn from(e: ancilla::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Csv(e)
    }
}

fn load(path: &Path, steps: Option<usize>) -> Result<(RunConfig, ProtocolSpec), Failure> {
    let text = std::fs::read(path).map_err(|e| Failure::Io(path.to_path_buf(), e))?;
    let mut cfg = parse_config(&text).map_err(|e| match e {
        ConfigError::Json(e) => Failure::Json(e),
        ConfigError::Invalid(e) => Failure::Core(e),
    })?;
    if let Some(n) = steps {
        cfg.steps = n;
    }
    let spec = cfg.to_spec()?;
    Ok((cfg, spec))
}

/// CSV sink; the summary goes to stderr when the CSV takes stdout.
fn sink(output: Option<PathBuf>, cfg: &RunConfig) -> Result<(Box<dyn Write>, bool), Failure> {
    match output.or_else(|| cfg.output_path.clone().map(PathBuf::from)) {
        Some(p) => {
            let f = File::create(&p).map_err(|e| Failure::Io(p.clone(), e))?;
            Ok((Box::new(BufWriter::new(f)), false))
        }
        None => Ok((Box::new(io::stdout().lock()), true)),
    }
}

fn say(text: &str, quiet: bool, to_stderr: bool) {
    if quiet {
        return;
    }
    if to_stderr {
        eprint!("{text}");
    } else {
        print!("{text}");
    }
}

fn execute(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run { config, output, common } => {
            let (cfg, spec) = load(&config, common.steps)?;
            let report = run(&spec)?;
            let (out, on_stdout) = sink(output, &cfg)?;
            output::write_csv(&report, out)?;
            say(&output::run_summary(&report), common.quiet, on_stdout);
            if report.failed() {
                return Err(Failure::Unmet("residual", "residual monitor tripped; run FAILED".into()));
            }
            let failed: Vec<&str> =
                report.checkpoints.iter().filter(|c| !c.passed).map(|c| c.checkpoint.label.as_str()).collect();
            if !failed.is_empty() {
                return Err(Failure::Unmet("checkpoint", format!("failed checkpoints: {}", failed.join(", "))));
            }
            Ok(())
        }
        Command::Scan { config, output, common } => {
            let (cfg, spec) = load(&config, common.steps)?;
            let (alphas, scope) = cfg.scan_plan()?;
            let points = robustness_scan(&spec, &alphas, scope, ExecMode::default())?;
            let (out, on_stdout) = sink(output, &cfg)?;
            output::write_scan_csv(&points, out)?;
            say(&output::scan_summary(&points), common.quiet, on_stdout);
            Ok(())
        }
        Command::Verify { common, fault_zero_omega_a, closed_form_tol, only, output } => {
            let mut opts = VerifyOptions { fault_zero_omega_a, closed_form_tol, only, ..VerifyOptions::default() };
            if let Some(n) = common.steps {
                opts.steps = n;
            }
            let outcomes = verify(&opts)?;
            let table = output::verify_table(&outcomes);
            if let Some(p) = output {
                std::fs::write(&p, &table).map_err(|e| Failure::Io(p.clone(), e))?;
            }
            say(&table, common.quiet, false);
            let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
            if failed.is_empty() {
                Ok(())
            } else {
                Err(Failure::Unmet("verify", format!("failed checks: {}", failed.join(", "))))
            }
        }
        Command::ListProtocols => {
            for k in ProtocolKind::ALL {
                println!("{:<11} {}-level  {}", k.name(), k.levels(), k.description());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let msg = f.message().replace('\n', " ");
            eprintln!("error[{}]: {msg}", f.code());
            ExitCode::from(f.exit())
        }
    }
}
