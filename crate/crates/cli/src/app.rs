//! Argument parsing, flag overrides and output placement.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fairshare::analysis::SweepKind;
use fairshare::policy::TieRule;

use crate::commands::{run, CliError, Command, Outcome, RunOptions};
use crate::config::{ConfigError, DeltaSpec, GridSpec, PolicyChoice, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "fairshare", version, about = "Fair and efficient scheduling of a shared battery")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Sub,
}

#[derive(Debug, Subcommand)]
pub enum Sub {
    /// Minimum loss-of-load rate under the fairness constraint.
    SolveP(Common),
    /// Maxmin-fair contribution among efficient policies.
    SolveF(Common),
    /// Loss-of-load rate of efficient policies.
    LlrE(Common),
    /// Price of fairness at one battery size.
    Pof(Common),
    /// Exponential decay fit of the optimal fair rate over a battery grid.
    Decay(Common),
    /// Parallel sweep over battery sizes or fairness slacks.
    Sweep(Common),
    /// Monte Carlo run of a stationary policy.
    Simulate(Common),
    /// Check structural invariants of one instance.
    Validate(Common),
}

impl Sub {
    fn split(self) -> (Command, Common) {
        match self {
            Self::SolveP(c) => (Command::SolveP, c),
            Self::SolveF(c) => (Command::SolveF, c),
            Self::LlrE(c) => (Command::LlrE, c),
            Self::Pof(c) => (Command::Pof, c),
            Self::Decay(c) => (Command::Decay, c),
            Self::Sweep(c) => (Command::Sweep, c),
            Self::Simulate(c) => (Command::Simulate, c),
            Self::Validate(c) => (Command::Validate, c),
        }
    }
}

/// Flags shared by every subcommand; each overrides the matching config field.
#[derive(Debug, Clone, Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, short)]
    pub config: PathBuf,
    /// Battery capacity.
    #[arg(long = "bmax")]
    pub b_max: Option<usize>,
    /// Battery grid, `start:stop:step` or a comma list.
    #[arg(long)]
    pub b_grid: Option<GridSpec>,
    /// Fairness slack, a nonnegative number or `infinity`.
    #[arg(long)]
    pub delta: Option<DeltaSpec>,
    /// Slack grid for frontier sweeps.
    #[arg(long)]
    pub delta_grid: Option<GridSpec>,
    /// Sweep kind: pof_vs_b, fairness_vs_b or frontier.
    #[arg(long)]
    pub kind: Option<SweepKind>,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulation horizon.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Output stem; JSON goes to `<stem>.json`, CSV to `<stem>.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Write the constructed LP in text form to this file.
    #[arg(long)]
    pub dump_lp: Option<PathBuf>,
    /// Policy to simulate: greedy, fair or maxmin_efficient.
    #[arg(long)]
    pub policy: Option<PolicyChoice>,
    /// lowest_index_first or proportional.
    #[arg(long)]
    pub tie_rule: Option<TieRule>,
}

impl Common {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($f:ident),*) => {$(
                if let Some(v) = self.$f.clone() {
                    cfg.$f = Some(v);
                }
            )*};
        }
        set!(b_max, b_grid, delta, delta_grid, kind, seed, steps, policy, tie_rule);
        if let Some(out) = &self.out {
            cfg.output = Some(out.clone());
        }
    }
}

fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Places the artifacts: files under the output stem, otherwise stdout.
pub fn emit(cmd: Command, outcome: &Outcome, output: Option<&Path>) -> Result<(), CliError> {
    let json = serde_json::to_string_pretty(&outcome.json).expect("JSON values serialize") + "\n";
    let stdout_err = |source| CliError::Io {
        path: PathBuf::from("<stdout>"),
        source,
    };
    match output {
        Some(stem) => {
            write_file(&stem.with_extension("json"), &json)?;
            if let Some(csv) = &outcome.csv {
                write_file(&stem.with_extension("csv"), csv)?;
            }
            println!("{}", outcome.summary);
        }
        None => {
            let mut out = std::io::stdout().lock();
            let body = match (&outcome.csv, cmd) {
                (Some(csv), Command::Sweep) => csv.as_str(),
                _ => json.as_str(),
            };
            out.write_all(body.as_bytes()).map_err(stdout_err)?;
            out.flush().map_err(stdout_err)?;
            eprintln!("{}", outcome.summary);
        }
    }
    Ok(())
}

fn execute(cmd: Command, common: &Common) -> Result<usize, CliError> {
    let mut cfg = RunConfig::load(&common.config)?;
    common.apply(&mut cfg);
    if common.jobs == 0 {
        return Err(ConfigError::Invalid("--jobs must be at least 1".into()).into());
    }
    let opts = RunOptions {
        jobs: common.jobs,
        dump_lp: common.dump_lp.clone(),
    };
    log::info!("running {}", cmd.name());
    let outcome = run(cmd, &cfg, &opts)?;
    emit(cmd, &outcome, cfg.output.as_deref())?;
    Ok(outcome.failures)
}

/// Parses arguments and runs; exit code 0 on success, 1 on model, config, I/O
/// or invariant failures, 2 when the solver fails.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let (cmd, common) = cli.command.split();
    ExitCode::from(exit_status(execute(cmd, &common)))
}

/// Maps a run result to the process status, reporting any error on stderr.
pub fn exit_status(result: Result<usize, CliError>) -> u8 {
    let err = match result {
        Ok(0) => return 0,
        Ok(n) => CliError::InvariantsFailed(n),
        Err(e) => e,
    };
    eprintln!("error: {err}");
    err.exit_code()
}
