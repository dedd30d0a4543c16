//! Command line front end: experiment files, runs, ablations, sweeps and
//! class-count sensitivity, with CSV and JSON exports.

pub mod commands;
pub mod config;
pub mod output;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{cmd_ablation, cmd_class_sensitivity, cmd_run, cmd_sweep, Common, SweepParam};
pub use config::ExperimentSpec;

#[derive(Debug)]
pub enum CliError {
    /// Bad invocation or config; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Runtime(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Usage(m) => m.clone(),
            CliError::Runtime(e) => format!("{e:#}"),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message())
    }
}

impl From<pda_core::Error> for CliError {
    fn from(e: pda_core::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Parser, Debug)]
#[command(name = "pda-kit", version, about = "Partial domain adaptation experiments")]
struct Cli {
    /// Root directory for run outputs.
    #[arg(long, global = true, env = "PDA_KIT_OUT", default_value = "runs")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct CommonArgs {
    /// Experiment file (`key = value` lines, or a summary.json to replay).
    #[arg(long)]
    config: PathBuf,
    /// Override one config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Comma separated seeds, overriding the `seeds` key.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ParamArg {
    Beta,
    Gamma,
    Nu,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train once and write metrics.csv and summary.json.
    Run(CommonArgs),
    /// Every variant over the seed list; writes ablation.csv.
    Ablation(CommonArgs),
    /// One run per value and seed; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, value_enum)]
        param: ParamArg,
        /// Comma separated values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Vec<f64>,
    },
    /// Regenerate the synthetic task per target class count; writes class_sensitivity.csv.
    ClassSensitivity {
        #[command(flatten)]
        common: CommonArgs,
        /// Comma separated target class counts.
        #[arg(long, value_delimiter = ',')]
        counts: Vec<usize>,
    },
}

fn common(out: PathBuf, args: CommonArgs) -> Result<Common, CliError> {
    let overrides = args
        .set
        .iter()
        .map(|s| config::split_assignment(s).map(|(k, v)| (k.to_string(), v.to_string())))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Common {
        config: args.config,
        overrides,
        seeds: args.seeds,
        out,
    })
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let result = match cli.command {
        Command::Run(a) => common(cli.out, a).and_then(|c| cmd_run(&c).map(|_| ())),
        Command::Ablation(a) => common(cli.out, a).and_then(|c| cmd_ablation(&c).map(|_| ())),
        Command::Sweep { common: a, param, values } => {
            let param = match param {
                ParamArg::Beta => SweepParam::Beta,
                ParamArg::Gamma => SweepParam::Gamma,
                ParamArg::Nu => SweepParam::Nu,
            };
            common(cli.out, a).and_then(|c| cmd_sweep(&c, param, &values).map(|_| ()))
        }
        Command::ClassSensitivity { common: a, counts } => common(cli.out, a).and_then(|c| {
            let report = cmd_class_sensitivity(&c, &counts)?;
            if report.rejected.is_empty() {
                Ok(())
            } else {
                Err(CliError::Usage(format!(
                    "rejected target class counts {:?}: each must be in 1..{} (results for the rest are in {})",
                    report.rejected,
                    report.num_source_classes,
                    report.dir.display()
                )))
            }
        }),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
