//! The four subcommands. Each writes its files under the output directory
//! and returns a short summary for stdout.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use rayon::prelude::*;

use slackdown_core::metrics::{
    compare, duration_csv, duration_split, quadrant_analysis, quadrant_csv, report_row, ComparisonReport,
    REPORT_HEADER,
};
use slackdown_core::rational::{fmt_compact, fmt_decimal, parse_decimal};
use slackdown_core::{
    gen_balanced, gen_random, gen_unbalanced, load_workload, save_workload, simulate, BalancedParams, HwConfig,
    PolicySpec, RandomParams, Rat, SimResult, UnbalancedParams, Workload,
};

use crate::config::{Entries, RunConfig};

/// A failed command and the exit status it maps to.
#[derive(Debug)]
pub enum Failure {
    /// Bad arguments, configuration or input files.
    Input(anyhow::Error),
    /// The simulation or an invariant check failed.
    Simulation(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Input(_) => 2,
            Failure::Simulation(_) => 1,
        }
    }

    pub fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Input(e) | Failure::Simulation(e) => e,
        }
    }
}

pub type Outcome = Result<String, Failure>;

fn input<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Input(e.into())
}

fn sim<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Simulation(e.into())
}

fn out_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display())).map_err(input)
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<PathBuf, Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).with_context(|| format!("cannot write {}", path.display())).map_err(input)?;
    Ok(path)
}

#[derive(Debug, Clone)]
pub enum GenerateKind {
    Balanced(BalancedParams),
    Unbalanced(UnbalancedParams),
    Random(RandomParams),
}

pub fn generate(kind: &GenerateKind, out: &Path) -> Outcome {
    let w = match kind {
        GenerateKind::Balanced(p) => gen_balanced(p),
        GenerateKind::Unbalanced(p) => gen_unbalanced(p),
        GenerateKind::Random(p) => gen_random(p),
    }
    .map_err(input)?;
    out_dir(out)?;
    let path = out.join("workload.json");
    save_workload(&w, &path).map_err(input)?;
    let mut s = format!(
        "wrote {} ({} ranks, {} phases, hash {})\n",
        path.display(),
        w.n_ranks(),
        w.n_phases(),
        w.content_hash()
    );
    for (k, v) in &w.meta {
        let _ = writeln!(s, "  {k} = {v}");
    }
    Ok(s)
}

fn workload(cfg: &RunConfig) -> Result<Workload, Failure> {
    let path = cfg
        .workload
        .as_ref()
        .ok_or_else(|| input(anyhow!("no workload given (use --workload or `workload =` in the config)")))?;
    load_workload(path).map_err(input)
}

fn output(cfg: &RunConfig) -> PathBuf {
    cfg.out.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn run(w: &Workload, spec: &PolicySpec, hw: &HwConfig) -> Result<SimResult, Failure> {
    simulate(w, spec, hw).with_context(|| format!("simulating {spec}")).map_err(sim)
}

fn timeout_of(spec: &PolicySpec) -> Option<&Rat> {
    spec.kind.is_countdown().then_some(&spec.params.timeout_us)
}

fn summary(w: &Workload, cfg: &RunConfig, base: &SimResult, cand: &SimResult, rep: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "workload   {} ranks, {} phases, hash {}", w.n_ranks(), w.n_phases(), w.content_hash());
    let _ = writeln!(s, "baseline   {}", cfg.baseline);
    let _ = writeln!(s, "candidate  {}", cfg.policy);
    let _ = writeln!(s);
    let _ = writeln!(s, "{:<22}{:>16}{:>16}", "", "baseline", "candidate");
    let rows: [(&str, &Rat, &Rat, u32); 4] = [
        ("tts_us", &rep.baseline.tts_us, &rep.candidate.tts_us, 3),
        ("energy_j", &rep.baseline.energy_j, &rep.candidate.energy_j, 9),
        ("avg_freq_ghz", &rep.baseline.avg_freq_ghz, &rep.candidate.avg_freq_ghz, 4),
        ("avg_load_pct", &rep.baseline.avg_load_pct, &rep.candidate.avg_load_pct, 2),
    ];
    for (name, b, c, d) in rows {
        let _ = writeln!(s, "{name:<22}{:>16}{:>16}", fmt_decimal(b, d), fmt_decimal(c, d));
    }
    let _ = writeln!(s, "{:<22}{:>16}{:>16}", "register_writes", base.writes.len(), cand.writes.len());
    let _ = writeln!(s);
    let _ = writeln!(s, "overhead_pct          {}", fmt_decimal(&rep.overhead_pct, 2));
    let _ = writeln!(s, "energy_saving_pct     {}", fmt_decimal(&rep.energy_saving_pct, 2));
    let _ = writeln!(s, "power_saving_pct      {}", fmt_decimal(&rep.power_saving_pct, 2));
    s
}

pub fn simulate_cmd(cfg: &RunConfig) -> Outcome {
    let w = workload(cfg)?;
    let out = output(cfg);
    out_dir(&out)?;
    let base = run(&w, &cfg.baseline, &cfg.hw)?;
    let cand = run(&w, &cfg.policy, &cfg.hw)?;
    let rep = compare(&base, &cand, &cfg.power, cfg.load_metric).map_err(sim)?;
    let row = report_row(cfg.policy.kind.as_str(), timeout_of(&cfg.policy), &rep);
    write(&out, "report.csv", &format!("{REPORT_HEADER}\n{row}\n"))?;
    write(&out, "segments.csv", &cand.segments_csv())?;
    write(&out, "baseline_segments.csv", &base.segments_csv())?;
    let text = summary(&w, cfg, &base, &cand, &rep);
    write(&out, "summary.txt", &text)?;
    Ok(format!(
        "{}: overhead {}%, energy saving {}% -> {}\n",
        cfg.policy.kind,
        fmt_decimal(&rep.overhead_pct, 2),
        fmt_decimal(&rep.energy_saving_pct, 2),
        out.display()
    ))
}

/// The parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    Timeout,
    SpinCount,
    SamplePeriod,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Timeout => "timeout_us",
            SweepParam::SpinCount => "spin_count",
            SweepParam::SamplePeriod => "sample_period_us",
        }
    }

    fn key(self) -> &'static str {
        match self {
            SweepParam::Timeout => "policy.timeout_us",
            SweepParam::SpinCount => "policy.spin_count",
            SweepParam::SamplePeriod => "hw.sample_period_us",
        }
    }
}

pub const SWEEP_HEADER_PREFIX: &str = "param,value,";

pub fn sweep_cmd(entries: &Entries, param: SweepParam, values: &[String]) -> Outcome {
    if values.is_empty() {
        return Err(input(anyhow!("sweep needs at least one value")));
    }
    let mut points: Vec<(Rat, RunConfig)> = Vec::with_capacity(values.len());
    for v in values {
        let value = parse_decimal(v.trim()).map_err(|_| input(anyhow!("invalid {} value `{v}`", param.name())))?;
        let mut e = entries.clone();
        e.set(param.key(), v.trim());
        let cfg = RunConfig::from_entries(&e)
            .with_context(|| format!("{} = {v}", param.name()))
            .map_err(input)?;
        points.push((value, cfg));
    }
    points.sort_by_key(|p| p.0);
    points.dedup_by(|a, b| a.0 == b.0);

    let first = &points[0].1;
    let w = workload(first)?;
    let out = output(first);
    out_dir(&out)?;
    // Only hardware sweeps change what the baseline sees.
    let shared = match param {
        SweepParam::SamplePeriod => None,
        _ => Some(run(&w, &first.baseline, &first.hw)?),
    };
    let rows: Vec<Result<String, Failure>> = points
        .par_iter()
        .map(|(value, cfg)| {
            let own;
            let base = match &shared {
                Some(b) => b,
                None => {
                    own = run(&w, &cfg.baseline, &cfg.hw)?;
                    &own
                }
            };
            let cand = run(&w, &cfg.policy, &cfg.hw)?;
            let rep = compare(base, &cand, &cfg.power, cfg.load_metric).map_err(sim)?;
            Ok(format!(
                "{},{},{}",
                param.name(),
                fmt_compact(value),
                report_row(cfg.policy.kind.as_str(), timeout_of(&cfg.policy), &rep)
            ))
        })
        .collect();
    let mut csv = format!("{SWEEP_HEADER_PREFIX}{REPORT_HEADER}\n");
    for row in rows {
        csv.push_str(&row?);
        csv.push('\n');
    }
    let path = write(&out, "sweep.csv", &csv)?;
    Ok(format!("{} points over {} -> {}\n", points.len(), param.name(), path.display()))
}

pub fn analyze_cmd(cfg: &RunConfig) -> Outcome {
    let path = cfg
        .segments
        .as_ref()
        .ok_or_else(|| input(anyhow!("no segments file given (use --segments)")))?;
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))
        .map_err(input)?;
    let result = SimResult::from_segments_csv(&text)
        .with_context(|| format!("in {}", path.display()))
        .map_err(input)?;
    if cfg.threshold_us <= Rat::default() {
        return Err(input(anyhow!("threshold_us must be > 0")));
    }
    let out = output(cfg);
    out_dir(&out)?;
    let quadrants = quadrant_analysis(&result, &cfg.threshold_us);
    write(&out, "quadrant.csv", &quadrant_csv(&quadrants))?;
    write(&out, "duration_split.csv", &duration_csv(&duration_split(&result, &cfg.threshold_us)))?;
    let [i, ii, iii, iv] = quadrants.all.counts();
    Ok(format!(
        "{} ranks; pairs I={i} II={ii} III={iii} IV={iv} (threshold {} us) -> {}\n",
        result.ranks.len(),
        fmt_compact(&cfg.threshold_us),
        out.display()
    ))
}
