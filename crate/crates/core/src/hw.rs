//! Per-core power-state machine.
//!
//! Frequency (P-state) and duty-cycle (T-state) requests are latched into
//! registers that the power controller reads only at sampling instants,
//! the multiples of `sample_period_us`. A request written at `t` becomes
//! effective at the first sampling instant strictly after `t`; a request
//! overwritten before that instant is never effective. Sleep (C-state)
//! entry and wake have fixed latencies, and cores requesting turbo get a
//! frequency that depends on how many cores are awake.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::rational::{fmt_compact, next_multiple_after, parse_decimal, rat, ratio, DecimalError, Rat};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HwError {
    #[error("unknown frequency level {ghz} GHz (valid: {valid})")]
    UnknownFreq { ghz: String, valid: String },
    #[error("unknown duty level {duty} (valid: {valid})")]
    UnknownDuty { duty: String, valid: String },
    #[error("invalid hardware configuration: {0}")]
    BadConfig(String),
    #[error("core {core}: cannot {op} while {state}")]
    InvalidTransition { core: usize, op: &'static str, state: &'static str },
}

/// Content of the frequency request register.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FreqRequest {
    Level(Rat),
    /// Highest available operating point; resolved by turbo arbitration.
    Turbo,
}

impl FreqRequest {
    pub fn parse(s: &str) -> Result<Self, DecimalError> {
        if s.trim().eq_ignore_ascii_case("turbo") {
            Ok(FreqRequest::Turbo)
        } else {
            parse_decimal(s).map(FreqRequest::Level)
        }
    }
}

impl fmt::Display for FreqRequest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreqRequest::Level(ghz) => f.write_str(&fmt_compact(ghz)),
            FreqRequest::Turbo => f.write_str("turbo"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HwConfig {
    pub sample_period_us: Rat,
    /// Non-turbo operating points, ascending.
    pub freq_levels_ghz: Vec<Rat>,
    /// Active-core count -> turbo frequency.
    pub turbo_table_ghz: BTreeMap<usize, Rat>,
    /// Allowed duty cycles in (0, 1]; must include 1.
    pub duty_levels: Vec<Rat>,
    pub cstate_entry_us: Rat,
    pub cstate_wake_us: Rat,
}

impl Default for HwConfig {
    fn default() -> Self {
        HwConfig {
            sample_period_us: rat(500),
            freq_levels_ghz: vec![ratio(6, 5), ratio(12, 5)],
            turbo_table_ghz: BTreeMap::from([(1, ratio(16, 5)), (2, ratio(13, 5))]),
            duty_levels: (1..=8).map(|k| ratio(k, 8)).collect(),
            cstate_entry_us: rat(10),
            cstate_wake_us: rat(10),
        }
    }
}

fn list(values: &[Rat]) -> String {
    values.iter().map(fmt_compact).collect::<Vec<_>>().join(", ")
}

impl HwConfig {
    pub fn validate(&self) -> Result<(), HwError> {
        let bad = |m: &str| Err(HwError::BadConfig(m.to_string()));
        if !self.sample_period_us.is_positive() {
            return bad("sample_period_us must be > 0");
        }
        if self.freq_levels_ghz.is_empty() || self.freq_levels_ghz.iter().any(|f| !f.is_positive()) {
            return bad("freq_levels_ghz must be non-empty and positive");
        }
        if self.freq_levels_ghz.windows(2).any(|w| w[0] >= w[1]) {
            return bad("freq_levels_ghz must be strictly ascending");
        }
        if self.turbo_table_ghz.is_empty() {
            return bad("turbo_table_ghz must not be empty");
        }
        let max_level = self.freq_levels_ghz.last().copied().unwrap_or_default();
        if self.turbo_table_ghz.values().any(|f| *f < max_level) {
            return bad("turbo frequencies must be >= the highest non-turbo level");
        }
        let turbo: Vec<&Rat> = self.turbo_table_ghz.values().collect();
        if turbo.windows(2).any(|w| w[0] < w[1]) {
            return bad("turbo frequency must not increase with the active-core count");
        }
        if self.duty_levels.iter().any(|d| !d.is_positive() || *d > Rat::one()) {
            return bad("duty levels must lie in (0, 1]");
        }
        if !self.duty_levels.contains(&Rat::one()) {
            return bad("duty levels must include 1.0");
        }
        if self.cstate_entry_us.is_negative() || self.cstate_wake_us.is_negative() {
            return bad("C-state latencies must be >= 0");
        }
        Ok(())
    }

    pub const KEYS: [&'static str; 6] = [
        "sample_period_us",
        "freq_levels_ghz",
        "turbo_table_ghz",
        "duty_levels",
        "cstate_entry_us",
        "cstate_wake_us",
    ];

    /// Sets one field from its text form. Lists are comma separated; the
    /// turbo table is `cores:ghz` pairs.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), HwError> {
        let bad = || HwError::BadConfig(format!("invalid value `{value}` for `{key}`"));
        let dec = |s: &str| parse_decimal(s.trim()).map_err(|_| bad());
        let items = || value.split(',').map(str::trim).filter(|s| !s.is_empty());
        match key {
            "sample_period_us" => self.sample_period_us = dec(value)?,
            "cstate_entry_us" => self.cstate_entry_us = dec(value)?,
            "cstate_wake_us" => self.cstate_wake_us = dec(value)?,
            "freq_levels_ghz" => self.freq_levels_ghz = items().map(dec).collect::<Result<_, _>>()?,
            "duty_levels" => self.duty_levels = items().map(dec).collect::<Result<_, _>>()?,
            "turbo_table_ghz" => {
                let mut table = BTreeMap::new();
                for item in items() {
                    let (n, f) = item.split_once(':').ok_or_else(bad)?;
                    table.insert(n.trim().parse().map_err(|_| bad())?, dec(f)?);
                }
                self.turbo_table_ghz = table;
            }
            _ => return Err(HwError::BadConfig(format!("unknown hardware parameter `{key}`"))),
        }
        Ok(())
    }

    /// Every frequency a core can run at: non-turbo levels plus turbo values.
    pub fn all_freq_levels(&self) -> Vec<Rat> {
        let mut v: Vec<Rat> = self.freq_levels_ghz.iter().chain(self.turbo_table_ghz.values()).copied().collect();
        v.sort();
        v.dedup();
        v
    }

    pub fn check_freq(&self, req: &FreqRequest) -> Result<(), HwError> {
        match req {
            FreqRequest::Turbo => Ok(()),
            FreqRequest::Level(ghz) => {
                let levels = self.all_freq_levels();
                if levels.contains(ghz) {
                    Ok(())
                } else {
                    Err(HwError::UnknownFreq {
                        ghz: fmt_compact(ghz),
                        valid: format!("{}, turbo", list(&levels)),
                    })
                }
            }
        }
    }

    pub fn check_duty(&self, duty: &Rat) -> Result<(), HwError> {
        if self.duty_levels.contains(duty) {
            Ok(())
        } else {
            Err(HwError::UnknownDuty {
                duty: fmt_compact(duty),
                valid: list(&self.duty_levels),
            })
        }
    }

    /// Turbo frequency for `active_cores` awake cores: the entry with the
    /// largest key not above the count, or the smallest key's entry.
    pub fn turbo_arbitrate(&self, active_cores: usize) -> Rat {
        let count = active_cores.max(1);
        self.turbo_table_ghz
            .range(..=count)
            .next_back()
            .or_else(|| self.turbo_table_ghz.iter().next())
            .map(|(_, f)| *f)
            .expect("validated turbo table is non-empty")
    }

    /// First sampling instant strictly after `t`.
    pub fn next_sample_after(&self, t: &Rat) -> Rat {
        next_multiple_after(t, &self.sample_period_us)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SleepState {
    Active,
    EnteringSleep { until: Rat },
    Sleeping,
    Waking { until: Rat },
    /// The rank on this core has finished its trace.
    Offline,
}

/// Sleep state without timing, as recorded in timelines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SleepKind {
    Active,
    Entering,
    Sleeping,
    Waking,
}

impl SleepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SleepKind::Active => "active",
            SleepKind::Entering => "entering",
            SleepKind::Sleeping => "sleeping",
            SleepKind::Waking => "waking",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "active" => Some(SleepKind::Active),
            "entering" => Some(SleepKind::Entering),
            "sleeping" => Some(SleepKind::Sleeping),
            "waking" => Some(SleepKind::Waking),
            _ => None,
        }
    }
}

impl SleepState {
    pub fn kind(&self) -> SleepKind {
        match self {
            SleepState::Active => SleepKind::Active,
            SleepState::EnteringSleep { .. } => SleepKind::Entering,
            SleepState::Sleeping | SleepState::Offline => SleepKind::Sleeping,
            SleepState::Waking { .. } => SleepKind::Waking,
        }
    }

    fn name(&self) -> &'static str {
        match self {
            SleepState::Active => "active",
            SleepState::EnteringSleep { .. } => "entering sleep",
            SleepState::Sleeping => "sleeping",
            SleepState::Waking { .. } => "waking",
            SleepState::Offline => "offline",
        }
    }

    /// Counts toward turbo arbitration.
    fn is_awake(&self) -> bool {
        !matches!(self, SleepState::Sleeping | SleepState::Offline)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Latch<T> {
    value: T,
    written_at: Rat,
    pending: bool,
}

impl<T: Copy> Latch<T> {
    fn new(value: T) -> Self {
        Latch {
            value,
            written_at: Rat::zero(),
            pending: false,
        }
    }

    fn write(&mut self, value: T, t: Rat) {
        self.value = value;
        self.written_at = t;
        self.pending = true;
    }

    /// Value to apply at sampling instant `t`, if any.
    fn take_due(&mut self, t: &Rat) -> Option<T> {
        if self.pending && self.written_at < *t {
            self.pending = false;
            Some(self.value)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoreState {
    freq_request: Latch<FreqRequest>,
    duty_request: Latch<Rat>,
    freq_setting: FreqRequest,
    freq_effective: Rat,
    duty_effective: Rat,
    sleep: SleepState,
}

impl CoreState {
    pub fn freq_effective(&self) -> Rat {
        self.freq_effective
    }

    pub fn duty_effective(&self) -> Rat {
        self.duty_effective
    }

    pub fn freq_setting(&self) -> FreqRequest {
        self.freq_setting
    }

    pub fn sleep(&self) -> SleepState {
        self.sleep
    }
}

/// The simulated node: one `CoreState` per core plus the shared controller.
#[derive(Debug, Clone)]
pub struct HwModel {
    cfg: HwConfig,
    cores: Vec<CoreState>,
}

impl HwModel {
    /// All cores awake at `t = 0`, running `initial` at full duty.
    pub fn new(cfg: HwConfig, n_cores: usize, initial: FreqRequest) -> Result<Self, HwError> {
        cfg.validate()?;
        cfg.check_freq(&initial)?;
        let core = CoreState {
            freq_request: Latch::new(initial),
            duty_request: Latch::new(Rat::one()),
            freq_setting: initial,
            freq_effective: match initial {
                FreqRequest::Level(ghz) => ghz,
                FreqRequest::Turbo => Rat::zero(),
            },
            duty_effective: Rat::one(),
            sleep: SleepState::Active,
        };
        let mut hw = HwModel {
            cfg,
            cores: vec![core; n_cores],
        };
        hw.rearbitrate();
        Ok(hw)
    }

    pub fn config(&self) -> &HwConfig {
        &self.cfg
    }

    pub fn core(&self, core: usize) -> &CoreState {
        &self.cores[core]
    }

    pub fn n_cores(&self) -> usize {
        self.cores.len()
    }

    pub fn write_freq_request(&mut self, core: usize, req: FreqRequest, t: Rat) -> Result<(), HwError> {
        self.cfg.check_freq(&req)?;
        self.cores[core].freq_request.write(req, t);
        Ok(())
    }

    pub fn write_duty_request(&mut self, core: usize, duty: Rat, t: Rat) -> Result<(), HwError> {
        self.cfg.check_duty(&duty)?;
        self.cores[core].duty_request.write(duty, t);
        Ok(())
    }

    /// A written request is waiting for a sampling instant.
    pub fn has_pending(&self) -> bool {
        self.cores.iter().any(|c| c.freq_request.pending || c.duty_request.pending)
    }

    /// Controller sampling instant at `t`: applies every request written
    /// strictly before `t`, then re-arbitrates turbo.
    pub fn sample(&mut self, t: &Rat) {
        for c in &mut self.cores {
            if let Some(req) = c.freq_request.take_due(t) {
                c.freq_setting = req;
                if let FreqRequest::Level(ghz) = req {
                    c.freq_effective = ghz;
                }
            }
            if let Some(duty) = c.duty_request.take_due(t) {
                c.duty_effective = duty;
            }
        }
        self.rearbitrate();
    }

    pub fn active_cores(&self) -> usize {
        self.cores.iter().filter(|c| c.sleep.is_awake()).count()
    }

    pub fn turbo_arbitrate(&self, active_cores: usize) -> Rat {
        self.cfg.turbo_arbitrate(active_cores)
    }

    /// Applies the current turbo grant to every core whose setting is turbo.
    pub fn rearbitrate(&mut self) {
        let grant = self.cfg.turbo_arbitrate(self.active_cores());
        for c in &mut self.cores {
            if c.freq_setting == FreqRequest::Turbo {
                c.freq_effective = grant;
            }
        }
    }

    /// Begins C-state entry; returns the instant the core is fully asleep.
    pub fn sleep(&mut self, core: usize, t: Rat) -> Result<Rat, HwError> {
        let c = &mut self.cores[core];
        if c.sleep != SleepState::Active {
            return Err(HwError::InvalidTransition {
                core,
                op: "sleep",
                state: c.sleep.name(),
            });
        }
        let until = t + self.cfg.cstate_entry_us;
        c.sleep = SleepState::EnteringSleep { until };
        self.rearbitrate();
        Ok(until)
    }

    pub fn sleep_entered(&mut self, core: usize) -> Result<(), HwError> {
        let c = &mut self.cores[core];
        match c.sleep {
            SleepState::EnteringSleep { .. } => {
                c.sleep = SleepState::Sleeping;
                self.rearbitrate();
                Ok(())
            }
            other => Err(HwError::InvalidTransition {
                core,
                op: "complete sleep entry",
                state: other.name(),
            }),
        }
    }

    /// Starts waking a sleeping (or still entering) core; returns the instant it executes again.
    pub fn wake(&mut self, core: usize, t: Rat) -> Result<Rat, HwError> {
        let c = &mut self.cores[core];
        match c.sleep {
            SleepState::Sleeping | SleepState::EnteringSleep { .. } => {
                let until = t + self.cfg.cstate_wake_us;
                c.sleep = SleepState::Waking { until };
                self.rearbitrate();
                Ok(until)
            }
            other => Err(HwError::InvalidTransition {
                core,
                op: "wake",
                state: other.name(),
            }),
        }
    }

    pub fn wake_done(&mut self, core: usize) -> Result<(), HwError> {
        let c = &mut self.cores[core];
        match c.sleep {
            SleepState::Waking { .. } => {
                c.sleep = SleepState::Active;
                self.rearbitrate();
                Ok(())
            }
            other => Err(HwError::InvalidTransition {
                core,
                op: "complete wake",
                state: other.name(),
            }),
        }
    }

    /// The core has no more work and leaves the pool of awake cores.
    pub fn retire(&mut self, core: usize) {
        self.cores[core].sleep = SleepState::Offline;
        self.rearbitrate();
    }

    /// Cycles executed per microsecond; zero unless the core is active.
    pub fn effective_speed(&self, core: usize) -> Rat {
        let c = &self.cores[core];
        if c.sleep == SleepState::Active {
            c.freq_effective * rat(1000) * c.duty_effective
        } else {
            Rat::zero()
        }
    }
}
