//! Command-line front end: workload generation, policy comparison runs,
//! parameter sweeps and phase analyses.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand};

use slackdown_core::rational::parse_decimal;
use slackdown_core::{BalancedParams, RandomParams, Rat, UnbalancedParams};

use commands::{Failure, GenerateKind, Outcome, SweepParam};
use config::{Entries, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "slackdown", version, about = "Simulate power-saving policies inside MPI communication slack")]
pub struct Cli {
    /// Run-config file (`key = value` lines); flags override its entries.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Generator seed.
    #[arg(long, global = true, value_name = "INT")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic workload to DIR/workload.json.
    Generate {
        #[command(subcommand)]
        kind: GenerateCmd,
    },
    /// Run baseline and candidate policies and compare them.
    Simulate(RunArgs),
    /// Repeat `simulate` over a list of parameter values.
    Sweep(SweepArgs),
    /// Quadrant and duration-split analyses of a segments CSV.
    Analyze(AnalyzeArgs),
}

fn decimal(s: &str) -> Result<Rat, String> {
    parse_decimal(s).map_err(|e| e.to_string())
}

#[derive(Debug, Subcommand)]
pub enum GenerateCmd {
    /// Every rank computes the same amount between collectives.
    Balanced {
        #[arg(long)]
        ranks: usize,
        #[arg(long)]
        iters: usize,
        #[arg(long, value_parser = decimal)]
        app_us: Rat,
        #[arg(long, value_parser = decimal, default_value = "0")]
        mpi_us: Rat,
        /// Share of --mpi-us spent computing inside the call.
        #[arg(long, value_parser = decimal, default_value = "0.2")]
        mpi_work_fraction: Rat,
        #[arg(long, value_parser = decimal, default_value = "0")]
        jitter_pct: Rat,
        #[arg(long, value_parser = decimal, default_value = "2.4")]
        ref_freq_ghz: Rat,
    },
    /// One rank computes longer than the others before each barrier.
    Unbalanced {
        #[arg(long)]
        ranks: usize,
        #[arg(long)]
        iters: usize,
        #[arg(long, default_value_t = 0)]
        diag_rank: usize,
        #[arg(long, value_parser = decimal)]
        diag_app_us: Rat,
        #[arg(long, value_parser = decimal)]
        other_app_us: Rat,
        #[arg(long, value_parser = decimal, default_value = "2.4")]
        ref_freq_ghz: Rat,
    },
    /// Irregular phases and collectives over random rank subsets.
    Random {
        #[arg(long)]
        ranks: usize,
        #[arg(long, default_value_t = 200)]
        max_phases: usize,
        #[arg(long, default_value_t = 2000)]
        max_phase_us: u64,
        #[arg(long, default_value_t = 500)]
        short_us: u64,
        #[arg(long, value_parser = decimal, default_value = "2.4")]
        ref_freq_ghz: Rat,
    },
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    #[arg(long, value_name = "PATH")]
    pub workload: Option<PathBuf>,
    /// Candidate policy name.
    #[arg(long)]
    pub policy: Option<String>,
    /// Baseline policy name (default busy_wait).
    #[arg(long)]
    pub baseline: Option<String>,
    /// Candidate policy parameter, e.g. `timeout_us=250`.
    #[arg(long = "param", value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    #[arg(long = "baseline-param", value_name = "KEY=VALUE")]
    pub baseline_params: Vec<String>,
    /// Hardware parameter, e.g. `sample_period_us=250`.
    #[arg(long = "hw", value_name = "KEY=VALUE")]
    pub hw: Vec<String>,
    /// Power-model parameter, e.g. `uncore_w=0`.
    #[arg(long = "power", value_name = "KEY=VALUE")]
    pub power: Vec<String>,
    /// active_time or duty_scaled.
    #[arg(long)]
    pub load_metric: Option<String>,
}

#[derive(Debug, Args)]
#[group(id = "values", required = true, multiple = false)]
pub struct SweepValues {
    #[arg(long, value_delimiter = ',', group = "values")]
    pub timeouts: Vec<String>,
    #[arg(long, value_delimiter = ',', group = "values")]
    pub spin_counts: Vec<String>,
    #[arg(long, value_delimiter = ',', group = "values")]
    pub sample_periods: Vec<String>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub values: SweepValues,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_name = "PATH")]
    pub segments: Option<PathBuf>,
    /// Phases strictly longer than this are long.
    #[arg(long)]
    pub threshold_us: Option<String>,
}

fn key_values(entries: &mut Entries, prefix: &str, items: &[String]) -> anyhow::Result<()> {
    for item in items {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| anyhow!("expected KEY=VALUE after --{prefix}, found `{item}`"))?;
        entries.set(&format!("{prefix}.{}", k.trim()), v.trim());
    }
    Ok(())
}

impl Cli {
    fn entries(&self) -> anyhow::Result<Entries> {
        let mut e = match &self.config {
            Some(path) => Entries::load(path)?,
            None => Entries::default(),
        };
        if let Some(out) = &self.out {
            e.set_path("out", out);
        }
        if let Some(seed) = self.seed {
            e.set("seed", seed.to_string());
        }
        Ok(e)
    }
}

fn apply_run_args(e: &mut Entries, a: &RunArgs) -> anyhow::Result<()> {
    if let Some(w) = &a.workload {
        e.set_path("workload", w);
    }
    if let Some(p) = &a.policy {
        e.set("policy", p);
    }
    if let Some(b) = &a.baseline {
        e.set("baseline", b);
    }
    if let Some(l) = &a.load_metric {
        e.set("load_metric", l);
    }
    key_values(e, "policy", &a.params)?;
    key_values(e, "baseline", &a.baseline_params)?;
    key_values(e, "hw", &a.hw)?;
    key_values(e, "power", &a.power)?;
    Ok(())
}

fn generate(cli: &Cli, kind: &GenerateCmd) -> Outcome {
    let cfg = cli.entries().map_err(Failure::Input)?;
    let out = RunConfig::from_entries(&cfg).map_err(Failure::Input)?;
    let seed = out.seed.unwrap_or(0);
    let dir = out.out.unwrap_or_else(|| PathBuf::from("."));
    let kind = match kind {
        GenerateCmd::Balanced { ranks, iters, app_us, mpi_us, mpi_work_fraction, jitter_pct, ref_freq_ghz } => {
            GenerateKind::Balanced(BalancedParams {
                n_ranks: *ranks,
                n_iters: *iters,
                app_us: *app_us,
                mpi_us: *mpi_us,
                mpi_work_fraction: *mpi_work_fraction,
                jitter_pct: *jitter_pct,
                seed,
                ref_freq_ghz: *ref_freq_ghz,
            })
        }
        GenerateCmd::Unbalanced { ranks, iters, diag_rank, diag_app_us, other_app_us, ref_freq_ghz } => {
            GenerateKind::Unbalanced(UnbalancedParams {
                n_ranks: *ranks,
                n_iters: *iters,
                diag_rank: *diag_rank,
                diag_app_us: *diag_app_us,
                other_app_us: *other_app_us,
                seed,
                ref_freq_ghz: *ref_freq_ghz,
            })
        }
        GenerateCmd::Random { ranks, max_phases, max_phase_us, short_us, ref_freq_ghz } => {
            GenerateKind::Random(RandomParams {
                n_ranks: *ranks,
                max_phases: *max_phases,
                max_phase_us: *max_phase_us,
                short_us: *short_us,
                seed,
                ref_freq_ghz: *ref_freq_ghz,
            })
        }
    };
    commands::generate(&kind, &dir)
}

/// Runs one parsed command line.
pub fn execute(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Generate { kind } => generate(cli, kind),
        Command::Simulate(args) => {
            let mut e = cli.entries().map_err(Failure::Input)?;
            apply_run_args(&mut e, args).map_err(Failure::Input)?;
            let cfg = RunConfig::from_entries(&e).map_err(Failure::Input)?;
            commands::simulate_cmd(&cfg)
        }
        Command::Sweep(args) => {
            let mut e = cli.entries().map_err(Failure::Input)?;
            apply_run_args(&mut e, &args.run).map_err(Failure::Input)?;
            let v = &args.values;
            let (param, values) = if !v.timeouts.is_empty() {
                (SweepParam::Timeout, &v.timeouts)
            } else if !v.spin_counts.is_empty() {
                (SweepParam::SpinCount, &v.spin_counts)
            } else {
                (SweepParam::SamplePeriod, &v.sample_periods)
            };
            commands::sweep_cmd(&e, param, values)
        }
        Command::Analyze(args) => {
            let mut e = cli.entries().map_err(Failure::Input)?;
            if let Some(s) = &args.segments {
                e.set_path("segments", s);
            }
            if let Some(t) = &args.threshold_us {
                e.set("threshold_us", t);
            }
            let cfg = RunConfig::from_entries(&e).map_err(Failure::Input)?;
            commands::analyze_cmd(&cfg)
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(failure) => {
            log::debug!("{:?}", failure.error());
            eprintln!("error: {:#}", failure.error());
            failure.exit_code()
        }
    }
}
