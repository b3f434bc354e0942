//! `brw`: command-line runner.

mod commands;
mod config;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use brwlab::BrwError;

#[derive(Parser, Debug)]
#[command(name = "brw", version, about = "Critical branching random walk laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    common: Common,
}

/// Flags shared by every subcommand; each overrides the config-file key of the same name.
#[derive(Args, Debug, Default)]
struct Common {
    /// Flat key-value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    dim: Option<String>,
    #[arg(long, global = true)]
    n: Option<String>,
    #[arg(long = "n-grid", global = true)]
    n_grid: Option<String>,
    #[arg(long, global = true)]
    offspring: Option<String>,
    #[arg(long, global = true)]
    reps: Option<String>,
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Condition forward runs on survival to generation n
    #[arg(long, global = true)]
    conditioned: bool,
    #[arg(long, global = true)]
    clamp: Option<String>,
    #[arg(long, global = true)]
    out: Option<String>,
    /// Sidecar JSON (timings, chi-square, pass/fail summary)
    #[arg(long, global = true)]
    summary: Option<String>,
    #[arg(long = "budget-secs", global = true)]
    budget_secs: Option<String>,
    #[arg(long = "max-attempts", global = true)]
    max_attempts: Option<String>,
    #[arg(long, global = true)]
    theta: Option<String>,
    #[arg(long, global = true)]
    ell: Option<String>,
    /// Target site, e.g. 1,0
    #[arg(long, global = true, allow_hyphen_values = true)]
    x: Option<String>,
    #[arg(long, global = true)]
    suite: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Forward runs, one JSONL record per replicate
    Simulate,
    /// Size-biased spine samples, one JSONL record per replicate
    Spine,
    /// Deterministic fields (CSV) and scalars (JSON)
    Exact {
        #[arg(value_enum)]
        quantity: commands::Quantity,
    },
    /// Samples of U_n(x) given U_n(x) >= 1, plus a chi-square check when n <= 12
    Conditioned,
    /// Runs verification suites and writes a report CSV; exit code 1 on failure
    Verify,
    /// Summarises a report CSV as JSON
    Report { input: PathBuf },
    /// Prints the config schema
    Schema,
}

impl Common {
    fn entries(&self) -> brwlab::Result<BTreeMap<String, String>> {
        let mut e = match &self.config {
            Some(p) => config::load_file(p)?,
            None => BTreeMap::new(),
        };
        let flags = [
            ("dim", &self.dim),
            ("n", &self.n),
            ("n_grid", &self.n_grid),
            ("offspring", &self.offspring),
            ("reps", &self.reps),
            ("seed", &self.seed),
            ("clamp", &self.clamp),
            ("out", &self.out),
            ("summary", &self.summary),
            ("budget_secs", &self.budget_secs),
            ("max_attempts", &self.max_attempts),
            ("theta", &self.theta),
            ("ell", &self.ell),
            ("x", &self.x),
            ("suite", &self.suite),
        ];
        for (k, v) in flags {
            if let Some(v) = v {
                e.insert(k.into(), v.clone());
            }
        }
        if self.conditioned {
            e.insert("conditioned".into(), "true".into());
        }
        Ok(e)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    brwlab::parallel::init_threads();
    let result = cli.common.entries().and_then(config::RunConfig::resolve).and_then(|cfg| match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Spine => commands::spine(&cfg),
        Command::Exact { quantity } => commands::exact(&cfg, quantity),
        Command::Conditioned => commands::conditioned(&cfg),
        Command::Verify => commands::verify(&cfg),
        Command::Report { input } => commands::report(&cfg, &input),
        Command::Schema => {
            print!("{}", config::schema_text());
            Ok(true)
        }
    });
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(BrwError::Config(msg)) => {
            eprintln!("usage error: {}", msg);
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(3)
        }
    }
}

