//! Power model, energy integration, run comparison and phase-duration analyses.
//!
//! Everything is exact: energies are rationals in joules, times in
//! microseconds. Floats appear only for non-integer parametric exponents.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use num_rational::BigRational;
use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

use crate::hw::SleepKind;
use crate::rational::{big, fmt_compact, fmt_decimal, narrow, parse_decimal, rat, ratio, to_f64, Rat};
use crate::timeline::{Segment, SimResult};
use crate::trace::PhaseKind;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("frequency {0} GHz has no entry in the power table")]
    UnknownFreq(String),
    #[error("power model: {0}")]
    BadModel(String),
    #[error("invalid value `{value}` for power parameter `{key}`")]
    BadValue { key: String, value: String },
    #[error("unknown power parameter `{0}`")]
    UnknownParam(String),
    #[error("runs come from different workloads ({0} vs {1})")]
    WorkloadMismatch(String, String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PowerMode {
    Table,
    Parametric,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PowerModel {
    pub mode: PowerMode,
    /// Per-core active power at full duty, by frequency.
    pub table: BTreeMap<Rat, Rat>,
    pub p_sleep_w: Rat,
    pub p_static_w: Rat,
    pub k_dyn: Rat,
    pub alpha: Rat,
    /// Constant per-node power.
    pub uncore_w: Rat,
    pub cores_per_node: usize,
}

impl Default for PowerModel {
    fn default() -> Self {
        PowerModel {
            mode: PowerMode::Table,
            table: BTreeMap::from([
                (ratio(6, 5), rat(4)),
                (ratio(12, 5), rat(10)),
                (ratio(13, 5), ratio(23, 2)),
                (ratio(16, 5), rat(15)),
            ]),
            p_sleep_w: rat(1),
            p_static_w: rat(3),
            k_dyn: ratio(1, 2),
            alpha: rat(3),
            uncore_w: rat(20),
            cores_per_node: 16,
        }
    }
}

impl PowerModel {
    pub const KEYS: [&'static str; 8] = [
        "mode",
        "table",
        "sleep_w",
        "static_w",
        "k_dyn",
        "alpha",
        "uncore_w",
        "cores_per_node",
    ];

    pub fn validate(&self) -> Result<(), MetricsError> {
        let bad = |m: &str| Err(MetricsError::BadModel(m.to_string()));
        if self.mode == PowerMode::Table {
            if self.table.is_empty() {
                return bad("table mode needs at least one entry");
            }
            let watts: Vec<&Rat> = self.table.values().collect();
            if watts.windows(2).any(|w| w[0] >= w[1]) {
                return bad("active power must increase strictly with frequency");
            }
        } else if !self.k_dyn.is_positive() || !self.alpha.is_positive() {
            return bad("k_dyn and alpha must be > 0");
        }
        if self.p_sleep_w.is_negative() || self.p_sleep_w > self.p_static_w {
            return bad("need 0 <= sleep_w <= static_w");
        }
        if self.uncore_w.is_negative() {
            return bad("uncore_w must be >= 0");
        }
        if self.cores_per_node == 0 {
            return bad("cores_per_node must be > 0");
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), MetricsError> {
        let bad = || MetricsError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let dec = || parse_decimal(value.trim()).map_err(|_| bad());
        match key {
            "mode" => {
                self.mode = match value.trim() {
                    "table" => PowerMode::Table,
                    "parametric" => PowerMode::Parametric,
                    _ => return Err(bad()),
                }
            }
            "table" => {
                let mut table = BTreeMap::new();
                for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                    let (f, p) = item.split_once(':').ok_or_else(bad)?;
                    let f = parse_decimal(f.trim()).map_err(|_| bad())?;
                    let p = parse_decimal(p.trim()).map_err(|_| bad())?;
                    table.insert(f, p);
                }
                self.table = table;
            }
            "sleep_w" => self.p_sleep_w = dec()?,
            "static_w" => self.p_static_w = dec()?,
            "k_dyn" => self.k_dyn = dec()?,
            "alpha" => self.alpha = dec()?,
            "uncore_w" => self.uncore_w = dec()?,
            "cores_per_node" => self.cores_per_node = value.trim().parse().map_err(|_| bad())?,
            _ => return Err(MetricsError::UnknownParam(key.to_string())),
        }
        Ok(())
    }

    fn full_duty(&self, f: &Rat) -> Result<Rat, MetricsError> {
        match self.mode {
            PowerMode::Table => self
                .table
                .get(f)
                .copied()
                .ok_or_else(|| MetricsError::UnknownFreq(fmt_compact(f))),
            PowerMode::Parametric => Ok(self.p_static_w + self.k_dyn * pow(f, &self.alpha)),
        }
    }

    /// Per-core power at frequency `f` and duty `d` while awake.
    pub fn active_w(&self, f: &Rat, d: &Rat) -> Result<Rat, MetricsError> {
        Ok(self.p_static_w + d * (self.full_duty(f)? - self.p_static_w))
    }

    pub fn segment_w(&self, s: &Segment) -> Result<Rat, MetricsError> {
        match s.sleep {
            SleepKind::Sleeping => Ok(self.p_sleep_w),
            _ => self.active_w(&s.freq_ghz, &s.duty),
        }
    }

    pub fn nodes(&self, n_ranks: usize) -> usize {
        n_ranks.div_ceil(self.cores_per_node)
    }
}

fn pow(base: &Rat, exp: &Rat) -> Rat {
    if exp.is_integer() {
        if let Some(e) = exp.to_integer().to_i32() {
            return base.pow(e);
        }
    }
    Rat::approximate_float(to_f64(base).powf(to_f64(exp))).unwrap_or_default()
}

const US_PER_S: i128 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Energy {
    pub per_rank_j: Vec<Rat>,
    pub uncore_j: Rat,
    pub total_j: Rat,
}

/// Integrates the piecewise-constant power of every core plus uncore power
/// over the time to solution.
pub fn energy(result: &SimResult, pm: &PowerModel) -> Result<Energy, MetricsError> {
    let mut per_rank_j = Vec::with_capacity(result.ranks.len());
    for rank in &result.ranks {
        let mut e = Rat::zero();
        for s in &rank.segments {
            e += s.duration() * pm.segment_w(s)?;
        }
        per_rank_j.push(e / rat(US_PER_S));
    }
    let nodes = pm.nodes(result.ranks.len()) as i128;
    let uncore_j = pm.uncore_w * result.tts_us * rat(nodes) / rat(US_PER_S);
    let total_j = per_rank_j.iter().sum::<Rat>() + uncore_j;
    Ok(Energy {
        per_rank_j,
        uncore_j,
        total_j,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LoadMetric {
    /// Share of core lifetime spent awake.
    #[default]
    ActiveTime,
    /// As above, with gated cycles under duty modulation discounted.
    DutyScaled,
}

impl LoadMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            LoadMetric::ActiveTime => "active_time",
            LoadMetric::DutyScaled => "duty_scaled",
        }
    }
}

impl FromStr for LoadMetric {
    type Err = MetricsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "active_time" => Ok(LoadMetric::ActiveTime),
            "duty_scaled" => Ok(LoadMetric::DutyScaled),
            other => Err(MetricsError::BadValue {
                key: "load_metric".into(),
                value: other.into(),
            }),
        }
    }
}

impl fmt::Display for LoadMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunMetrics {
    pub tts_us: Rat,
    pub energy_j: Rat,
    pub avg_freq_ghz: Rat,
    pub avg_load_pct: Rat,
}

fn pct(num: Rat, den: Rat) -> Rat {
    if den.is_zero() {
        Rat::zero()
    } else {
        num / den * rat(100)
    }
}

pub fn run_metrics(result: &SimResult, pm: &PowerModel, load: LoadMetric) -> Result<RunMetrics, MetricsError> {
    let energy_j = energy(result, pm)?.total_j;
    let mut awake = Rat::zero();
    let mut freq_time = Rat::zero();
    let mut busy = Rat::zero();
    let mut lifetime = Rat::zero();
    for rank in &result.ranks {
        lifetime += rank.end_us;
        for s in rank.segments.iter().filter(|s| s.is_awake()) {
            let dt = s.duration();
            awake += dt;
            freq_time += dt * s.freq_ghz;
            busy += match load {
                LoadMetric::ActiveTime => dt,
                LoadMetric::DutyScaled => dt * s.duty,
            };
        }
    }
    Ok(RunMetrics {
        tts_us: result.tts_us,
        energy_j,
        avg_freq_ghz: if awake.is_zero() { Rat::zero() } else { freq_time / awake },
        avg_load_pct: pct(busy, lifetime),
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonReport {
    pub baseline: RunMetrics,
    pub candidate: RunMetrics,
    pub overhead_pct: Rat,
    pub energy_saving_pct: Rat,
    pub power_saving_pct: Rat,
}

/// `100 * (b - c) / b` without intermediate overflow.
fn change_pct(b: &BigRational, c: &BigRational) -> Rat {
    if b.is_zero() {
        Rat::zero()
    } else {
        narrow(&((b - c) / b * BigRational::from_integer(100.into())))
    }
}

fn mean_power(m: &RunMetrics) -> BigRational {
    if m.tts_us.is_zero() {
        BigRational::zero()
    } else {
        big(&m.energy_j) / big(&m.tts_us)
    }
}

/// Candidate relative to baseline; both must come from the same workload.
pub fn compare(
    baseline: &SimResult,
    candidate: &SimResult,
    pm: &PowerModel,
    load: LoadMetric,
) -> Result<ComparisonReport, MetricsError> {
    if baseline.workload_hash != candidate.workload_hash {
        return Err(MetricsError::WorkloadMismatch(
            baseline.workload_hash.clone(),
            candidate.workload_hash.clone(),
        ));
    }
    let b = run_metrics(baseline, pm, load)?;
    let c = run_metrics(candidate, pm, load)?;
    let (pb, pc) = (mean_power(&b), mean_power(&c));
    Ok(ComparisonReport {
        overhead_pct: -change_pct(&big(&b.tts_us), &big(&c.tts_us)),
        energy_saving_pct: change_pct(&big(&b.energy_j), &big(&c.energy_j)),
        power_saving_pct: change_pct(&pb, &pc),
        baseline: b,
        candidate: c,
    })
}

pub const REPORT_HEADER: &str =
    "policy,timeout_us,tts_us,overhead_pct,energy_j,energy_saving_pct,power_saving_pct,avg_freq_ghz,avg_load_pct";

/// One report CSV row (no trailing newline). `timeout_us` is left empty for
/// policies without a timer.
pub fn report_row(policy: &str, timeout_us: Option<&Rat>, r: &ComparisonReport) -> String {
    let c = &r.candidate;
    format!(
        "{policy},{},{},{},{},{},{},{},{}",
        timeout_us.map(fmt_compact).unwrap_or_default(),
        fmt_decimal(&c.tts_us, 3),
        fmt_decimal(&r.overhead_pct, 2),
        fmt_decimal(&c.energy_j, 9),
        fmt_decimal(&r.energy_saving_pct, 2),
        fmt_decimal(&r.power_saving_pct, 2),
        fmt_decimal(&c.avg_freq_ghz, 4),
        fmt_decimal(&c.avg_load_pct, 2),
    )
}

/// A phase rebuilt from a timeline: consecutive segments sharing a phase index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PhaseSpan {
    pub index: usize,
    pub kind: PhaseKind,
    pub duration_us: Rat,
    /// Integral of frequency over awake time, and that awake time.
    pub freq_time: Rat,
    pub awake_us: Rat,
}

pub fn phase_spans(segments: &[Segment]) -> Vec<PhaseSpan> {
    let mut spans: Vec<PhaseSpan> = Vec::new();
    for s in segments {
        let open_new = spans.last().is_none_or(|p| p.index != s.phase_index);
        if open_new {
            spans.push(PhaseSpan {
                index: s.phase_index,
                kind: s.phase_kind,
                duration_us: Rat::zero(),
                freq_time: Rat::zero(),
                awake_us: Rat::zero(),
            });
        }
        let p = spans.last_mut().expect("just pushed");
        let dt = s.duration();
        p.duration_us += dt;
        if s.is_awake() {
            p.freq_time += dt * s.freq_ghz;
            p.awake_us += dt;
        }
    }
    spans
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Region {
    /// Long application phase, long MPI phase.
    I,
    /// Long application phase, short MPI phase.
    II,
    /// Short application phase, long MPI phase.
    III,
    /// Both short.
    IV,
}

impl Region {
    pub const ALL: [Region; 4] = [Region::I, Region::II, Region::III, Region::IV];

    pub fn classify(app_us: &Rat, mpi_us: &Rat, threshold_us: &Rat) -> Region {
        match (app_us > threshold_us, mpi_us > threshold_us) {
            (true, true) => Region::I,
            (true, false) => Region::II,
            (false, true) => Region::III,
            (false, false) => Region::IV,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Region::I => "I",
            Region::II => "II",
            Region::III => "III",
            Region::IV => "IV",
        }
    }

    fn idx(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RegionStats {
    pub count: usize,
    pub time_us: Rat,
    pub app_freq_time: Rat,
    pub app_awake_us: Rat,
    pub mpi_freq_time: Rat,
    pub mpi_awake_us: Rat,
}

impl RegionStats {
    fn mean(ft: &Rat, t: &Rat) -> Option<Rat> {
        (!t.is_zero()).then(|| ft / t)
    }

    pub fn mean_app_freq(&self) -> Option<Rat> {
        Self::mean(&self.app_freq_time, &self.app_awake_us)
    }

    pub fn mean_mpi_freq(&self) -> Option<Rat> {
        Self::mean(&self.mpi_freq_time, &self.mpi_awake_us)
    }

    fn add(&mut self, other: &RegionStats) {
        self.count += other.count;
        self.time_us += other.time_us;
        self.app_freq_time += other.app_freq_time;
        self.app_awake_us += other.app_awake_us;
        self.mpi_freq_time += other.mpi_freq_time;
        self.mpi_awake_us += other.mpi_awake_us;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Quadrants {
    pub regions: [RegionStats; 4],
}

impl Quadrants {
    pub fn get(&self, r: Region) -> &RegionStats {
        &self.regions[r.idx()]
    }

    pub fn counts(&self) -> [usize; 4] {
        [0, 1, 2, 3].map(|i| self.regions[i].count)
    }

    pub fn time_share_pct(&self, r: Region) -> Rat {
        let total: Rat = self.regions.iter().map(|s| s.time_us).sum();
        pct(self.get(r).time_us, total)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuadrantReport {
    pub per_rank: Vec<Quadrants>,
    pub all: Quadrants,
}

/// Classifies every application phase immediately followed by an MPI phase.
pub fn quadrant_analysis(result: &SimResult, threshold_us: &Rat) -> QuadrantReport {
    let mut report = QuadrantReport::default();
    for rank in &result.ranks {
        let mut q = Quadrants::default();
        let spans = phase_spans(&rank.segments);
        for pair in spans.windows(2) {
            let (app, mpi) = (&pair[0], &pair[1]);
            if app.kind != PhaseKind::App || mpi.kind != PhaseKind::Mpi || mpi.index != app.index + 1 {
                continue;
            }
            let region = Region::classify(&app.duration_us, &mpi.duration_us, threshold_us);
            let stats = &mut q.regions[region.idx()];
            stats.count += 1;
            stats.time_us += app.duration_us + mpi.duration_us;
            stats.app_freq_time += app.freq_time;
            stats.app_awake_us += app.awake_us;
            stats.mpi_freq_time += mpi.freq_time;
            stats.mpi_awake_us += mpi.awake_us;
        }
        for (total, s) in report.all.regions.iter_mut().zip(&q.regions) {
            total.add(s);
        }
        report.per_rank.push(q);
    }
    report
}

pub const QUADRANT_HEADER: &str = "rank,region,count,time_share_pct,mean_app_freq_ghz,mean_mpi_freq_ghz";

pub fn quadrant_csv(report: &QuadrantReport) -> String {
    let mut out = String::from(QUADRANT_HEADER);
    out.push('\n');
    let labelled = report
        .per_rank
        .iter()
        .enumerate()
        .map(|(r, q)| (r.to_string(), q))
        .chain(std::iter::once(("all".to_string(), &report.all)));
    for (label, q) in labelled {
        for region in Region::ALL {
            let s = q.get(region);
            let freq = |f: Option<Rat>| fmt_decimal(&f.unwrap_or_default(), 4);
            let _ = writeln!(
                out,
                "{label},{},{},{},{},{}",
                region.as_str(),
                s.count,
                fmt_decimal(&q.time_share_pct(region), 2),
                freq(s.mean_app_freq()),
                freq(s.mean_mpi_freq()),
            );
        }
    }
    out
}

/// Percent of a rank's time in long/short application and MPI phases.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DurationSplit {
    pub app_long_pct: Rat,
    pub app_short_pct: Rat,
    pub mpi_long_pct: Rat,
    pub mpi_short_pct: Rat,
}

pub fn duration_split(result: &SimResult, threshold_us: &Rat) -> Vec<DurationSplit> {
    result
        .ranks
        .iter()
        .map(|rank| {
            let mut t = [Rat::zero(), Rat::zero(), Rat::zero(), Rat::zero()];
            for p in phase_spans(&rank.segments) {
                let long = p.duration_us > *threshold_us;
                let slot = match (p.kind, long) {
                    (PhaseKind::App, true) => 0,
                    (PhaseKind::App, false) => 1,
                    (PhaseKind::Mpi, true) => 2,
                    (PhaseKind::Mpi, false) => 3,
                };
                t[slot] += p.duration_us;
            }
            let total: Rat = t.iter().sum();
            DurationSplit {
                app_long_pct: pct(t[0], total),
                app_short_pct: pct(t[1], total),
                mpi_long_pct: pct(t[2], total),
                mpi_short_pct: pct(t[3], total),
            }
        })
        .collect()
}

pub const DURATION_HEADER: &str = "rank,app_long_pct,app_short_pct,mpi_long_pct,mpi_short_pct";

pub fn duration_csv(split: &[DurationSplit]) -> String {
    let mut out = String::from(DURATION_HEADER);
    out.push('\n');
    for (r, s) in split.iter().enumerate() {
        let _ = writeln!(
            out,
            "{r},{},{},{},{}",
            fmt_decimal(&s.app_long_pct, 2),
            fmt_decimal(&s.app_short_pct, 2),
            fmt_decimal(&s.mpi_long_pct, 2),
            fmt_decimal(&s.mpi_short_pct, 2),
        );
    }
    out
}

impl DurationSplit {
    pub fn total_pct(&self) -> Rat {
        self.app_long_pct + self.app_short_pct + self.mpi_long_pct + self.mpi_short_pct
    }
}
