//! Power-management policies driven by MPI prologue, epilogue and timer events.
//!
//! A policy never touches the hardware directly. It records actions in a
//! [`PolicyContext`] and the engine applies them at the event's instant.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_traits::{One, Signed, Zero};
use thiserror::Error;

use crate::hw::{FreqRequest, HwConfig, HwError};
use crate::rational::{fmt_compact, parse_decimal, rat, ratio, Rat};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("unknown policy `{0}` (expected one of: busy_wait, wait_mode, spin_wait, naive_dvfs, naive_throttle, countdown_dvfs, countdown_throttle)")]
    UnknownPolicy(String),
    #[error("unknown policy parameter `{0}`")]
    UnknownParam(String),
    #[error("invalid value `{value}` for policy parameter `{key}`")]
    BadValue { key: String, value: String },
    #[error("policy parameter `{0}`")]
    Constraint(String),
    #[error(transparent)]
    Hw(#[from] HwError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PolicyKind {
    /// MPI default: spin at full speed while waiting.
    BusyWait,
    /// Release the core to the idle task as soon as the call blocks.
    WaitMode,
    /// Spin for a bounded count, then sleep.
    SpinWait,
    /// Low P-state on every MPI entry, high on exit.
    NaiveDvfs,
    /// Low T-state on every MPI entry, full duty on exit.
    NaiveThrottle,
    /// Low P-state once the call outlives a timeout.
    CountdownDvfs,
    /// Low T-state once the call outlives a timeout.
    CountdownThrottle,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 7] = [
        PolicyKind::BusyWait,
        PolicyKind::WaitMode,
        PolicyKind::SpinWait,
        PolicyKind::NaiveDvfs,
        PolicyKind::NaiveThrottle,
        PolicyKind::CountdownDvfs,
        PolicyKind::CountdownThrottle,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::BusyWait => "busy_wait",
            PolicyKind::WaitMode => "wait_mode",
            PolicyKind::SpinWait => "spin_wait",
            PolicyKind::NaiveDvfs => "naive_dvfs",
            PolicyKind::NaiveThrottle => "naive_throttle",
            PolicyKind::CountdownDvfs => "countdown_dvfs",
            PolicyKind::CountdownThrottle => "countdown_throttle",
        }
    }

    pub fn is_countdown(self) -> bool {
        matches!(self, PolicyKind::CountdownDvfs | PolicyKind::CountdownThrottle)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = PolicyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| PolicyError::UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicyParams {
    pub timeout_us: Rat,
    pub spin_count: u64,
    /// Wall-clock cost of one spin iteration.
    pub spin_iteration_us: Rat,
    pub low_freq_ghz: Rat,
    pub low_duty: Rat,
    /// Frequency requested at start-up and restored on exit.
    pub high_freq: FreqRequest,
    /// Stall charged at every MPI prologue (instrumentation cost).
    pub event_cost_us: Rat,
}

impl Default for PolicyParams {
    fn default() -> Self {
        PolicyParams {
            timeout_us: rat(500),
            spin_count: 10_000,
            spin_iteration_us: ratio(1, 20),
            low_freq_ghz: ratio(6, 5),
            low_duty: ratio(1, 8),
            high_freq: FreqRequest::Turbo,
            event_cost_us: Rat::zero(),
        }
    }
}

impl PolicyParams {
    pub const KEYS: [&'static str; 7] = [
        "timeout_us",
        "spin_count",
        "spin_iteration_us",
        "low_freq_ghz",
        "low_duty",
        "high_freq",
        "event_cost_us",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PolicyError> {
        let bad = || PolicyError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        let dec = || parse_decimal(value).map_err(|_| bad());
        match key {
            "timeout_us" => self.timeout_us = dec()?,
            "spin_count" => self.spin_count = value.trim().parse().map_err(|_| bad())?,
            "spin_iteration_us" => self.spin_iteration_us = dec()?,
            "low_freq_ghz" => self.low_freq_ghz = dec()?,
            "low_duty" => self.low_duty = dec()?,
            "high_freq" => self.high_freq = FreqRequest::parse(value).map_err(|_| bad())?,
            "event_cost_us" => self.event_cost_us = dec()?,
            _ => return Err(PolicyError::UnknownParam(key.to_string())),
        }
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "timeout_us" => fmt_compact(&self.timeout_us),
            "spin_count" => self.spin_count.to_string(),
            "spin_iteration_us" => fmt_compact(&self.spin_iteration_us),
            "low_freq_ghz" => fmt_compact(&self.low_freq_ghz),
            "low_duty" => fmt_compact(&self.low_duty),
            "high_freq" => self.high_freq.to_string(),
            "event_cost_us" => fmt_compact(&self.event_cost_us),
            _ => return None,
        })
    }

    /// Time a spin-waiting rank polls before it sleeps.
    pub fn spin_time_us(&self) -> Rat {
        self.spin_iteration_us * rat(self.spin_count as i128)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub params: PolicyParams,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind) -> Self {
        PolicySpec {
            kind,
            params: PolicyParams::default(),
        }
    }

    pub fn with(mut self, key: &str, value: &str) -> Result<Self, PolicyError> {
        self.params.set(key, value)?;
        Ok(self)
    }

    pub fn from_params(name: &str, params: &BTreeMap<String, String>) -> Result<Self, PolicyError> {
        let mut spec = PolicySpec::new(name.parse()?);
        for (k, v) in params {
            spec.params.set(k, v)?;
        }
        Ok(spec)
    }

    pub fn initial_freq(&self) -> FreqRequest {
        self.params.high_freq
    }

    /// Checks parameter constraints and that every level the policy may write exists.
    pub fn check(&self, hw: &HwConfig) -> Result<(), PolicyError> {
        let p = &self.params;
        if !p.timeout_us.is_positive() {
            return Err(PolicyError::Constraint("timeout_us must be > 0".into()));
        }
        if !p.spin_iteration_us.is_positive() {
            return Err(PolicyError::Constraint("spin_iteration_us must be > 0".into()));
        }
        if p.event_cost_us.is_negative() {
            return Err(PolicyError::Constraint("event_cost_us must be >= 0".into()));
        }
        hw.check_freq(&p.high_freq)?;
        match self.kind {
            PolicyKind::NaiveDvfs | PolicyKind::CountdownDvfs => hw.check_freq(&FreqRequest::Level(p.low_freq_ghz))?,
            PolicyKind::NaiveThrottle | PolicyKind::CountdownThrottle => hw.check_duty(&p.low_duty)?,
            _ => {}
        }
        Ok(())
    }

    pub fn build(&self) -> Box<dyn Policy> {
        let p = &self.params;
        let dvfs = LowState::Freq {
            low: FreqRequest::Level(p.low_freq_ghz),
            high: p.high_freq,
        };
        let throttle = LowState::Duty { low: p.low_duty };
        match self.kind {
            PolicyKind::BusyWait => Box::new(BusyWait),
            PolicyKind::WaitMode => Box::new(SleepOnWait { after: Rat::zero() }),
            PolicyKind::SpinWait => Box::new(SleepOnWait { after: p.spin_time_us() }),
            PolicyKind::NaiveDvfs => Box::new(Naive { state: dvfs }),
            PolicyKind::NaiveThrottle => Box::new(Naive { state: throttle }),
            PolicyKind::CountdownDvfs => Box::new(Countdown::new(dvfs, p.timeout_us)),
            PolicyKind::CountdownThrottle => Box::new(Countdown::new(throttle, p.timeout_us)),
        }
    }
}

impl fmt::Display for PolicySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.kind)?;
        let p = &self.params;
        match self.kind {
            PolicyKind::BusyWait | PolicyKind::WaitMode => Ok(()),
            PolicyKind::SpinWait => write!(f, "(spin_count={}, spin_iteration_us={})", p.spin_count, fmt_compact(&p.spin_iteration_us)),
            PolicyKind::NaiveDvfs => write!(f, "(low={}, high={})", fmt_compact(&p.low_freq_ghz), p.high_freq),
            PolicyKind::NaiveThrottle => write!(f, "(low_duty={})", fmt_compact(&p.low_duty)),
            PolicyKind::CountdownDvfs => write!(
                f,
                "(timeout_us={}, low={}, high={})",
                fmt_compact(&p.timeout_us),
                fmt_compact(&p.low_freq_ghz),
                p.high_freq
            ),
            PolicyKind::CountdownThrottle => write!(
                f,
                "(timeout_us={}, low_duty={})",
                fmt_compact(&p.timeout_us),
                fmt_compact(&p.low_duty)
            ),
        }
    }
}

/// What a policy asks the engine to do.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyAction {
    WriteFreq(FreqRequest),
    WriteDuty(Rat),
    /// Sleep once the blocking part of the current call has lasted `after`.
    SleepAtWait { after: Rat },
    /// Fire `on_timer` after `delay`; replaces any armed timer.
    ArmTimer { delay: Rat },
    DisarmTimer,
}

/// Capabilities handed to a policy at each event.
#[derive(Debug)]
pub struct PolicyContext {
    pub now_us: Rat,
    pub rank: usize,
    actions: Vec<PolicyAction>,
}

impl PolicyContext {
    pub fn new(rank: usize, now_us: Rat) -> Self {
        PolicyContext {
            now_us,
            rank,
            actions: Vec::new(),
        }
    }

    pub fn write_freq_request(&mut self, req: FreqRequest) {
        self.actions.push(PolicyAction::WriteFreq(req));
    }

    pub fn write_duty_request(&mut self, duty: Rat) {
        self.actions.push(PolicyAction::WriteDuty(duty));
    }

    pub fn request_sleep_at_wait(&mut self, after: Rat) {
        self.actions.push(PolicyAction::SleepAtWait { after });
    }

    pub fn arm_timer(&mut self, delay: Rat) {
        self.actions.push(PolicyAction::ArmTimer { delay });
    }

    pub fn disarm_timer(&mut self) {
        self.actions.push(PolicyAction::DisarmTimer);
    }

    pub fn into_actions(self) -> Vec<PolicyAction> {
        self.actions
    }
}

/// Per-core policy state machine. Must be a deterministic function of the
/// event sequence.
pub trait Policy {
    /// MPI prologue: the rank enters an MPI call.
    fn on_mpi_enter(&mut self, ctx: &mut PolicyContext);
    /// An armed timer expired while the rank is still inside the call.
    fn on_timer(&mut self, _ctx: &mut PolicyContext) {}
    /// MPI epilogue: the call has returned.
    fn on_mpi_exit(&mut self, ctx: &mut PolicyContext);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LowState {
    Freq { low: FreqRequest, high: FreqRequest },
    Duty { low: Rat },
}

impl LowState {
    fn lower(&self, ctx: &mut PolicyContext) {
        match *self {
            LowState::Freq { low, .. } => ctx.write_freq_request(low),
            LowState::Duty { low } => ctx.write_duty_request(low),
        }
    }

    fn restore(&self, ctx: &mut PolicyContext) {
        match *self {
            LowState::Freq { high, .. } => ctx.write_freq_request(high),
            LowState::Duty { .. } => ctx.write_duty_request(Rat::one()),
        }
    }
}

struct BusyWait;

impl Policy for BusyWait {
    fn on_mpi_enter(&mut self, _ctx: &mut PolicyContext) {}
    fn on_mpi_exit(&mut self, _ctx: &mut PolicyContext) {}
}

/// Wait mode (`after = 0`) and spin-then-sleep. Waking is handled by the engine.
struct SleepOnWait {
    after: Rat,
}

impl Policy for SleepOnWait {
    fn on_mpi_enter(&mut self, ctx: &mut PolicyContext) {
        ctx.request_sleep_at_wait(self.after);
    }

    fn on_mpi_exit(&mut self, _ctx: &mut PolicyContext) {}
}

struct Naive {
    state: LowState,
}

impl Policy for Naive {
    fn on_mpi_enter(&mut self, ctx: &mut PolicyContext) {
        self.state.lower(ctx);
    }

    fn on_mpi_exit(&mut self, ctx: &mut PolicyContext) {
        self.state.restore(ctx);
    }
}

struct Countdown {
    state: LowState,
    timeout: Rat,
    fired: bool,
}

impl Countdown {
    fn new(state: LowState, timeout: Rat) -> Self {
        Countdown {
            state,
            timeout,
            fired: false,
        }
    }
}

impl Policy for Countdown {
    fn on_mpi_enter(&mut self, ctx: &mut PolicyContext) {
        self.fired = false;
        ctx.arm_timer(self.timeout);
    }

    fn on_timer(&mut self, ctx: &mut PolicyContext) {
        self.fired = true;
        self.state.lower(ctx);
    }

    fn on_mpi_exit(&mut self, ctx: &mut PolicyContext) {
        ctx.disarm_timer();
        // Only undo what the callback did; a short call leaves the register alone.
        if std::mem::take(&mut self.fired) {
            self.state.restore(ctx);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(policy: &mut dyn Policy, f: impl FnOnce(&mut dyn Policy, &mut PolicyContext)) -> Vec<PolicyAction> {
        let mut ctx = PolicyContext::new(0, rat(0));
        f(policy, &mut ctx);
        ctx.into_actions()
    }

    #[test]
    fn names_round_trip() {
        for kind in PolicyKind::ALL {
            assert_eq!(kind.as_str().parse::<PolicyKind>().unwrap(), kind);
        }
        assert!("adagio".parse::<PolicyKind>().is_err());
    }

    #[test]
    fn naive_dvfs_writes_on_every_boundary() {
        let spec = PolicySpec::new(PolicyKind::NaiveDvfs).with("high_freq", "2.4").unwrap();
        let mut p = spec.build();
        let enter = run(p.as_mut(), |p, c| p.on_mpi_enter(c));
        assert_eq!(enter, vec![PolicyAction::WriteFreq(FreqRequest::Level(ratio(6, 5)))]);
        let exit = run(p.as_mut(), |p, c| p.on_mpi_exit(c));
        assert_eq!(exit, vec![PolicyAction::WriteFreq(FreqRequest::Level(ratio(12, 5)))]);
    }

    #[test]
    fn naive_throttle_restores_full_duty() {
        let mut p = PolicySpec::new(PolicyKind::NaiveThrottle).build();
        assert_eq!(run(p.as_mut(), |p, c| p.on_mpi_enter(c)), vec![PolicyAction::WriteDuty(ratio(1, 8))]);
        assert_eq!(run(p.as_mut(), |p, c| p.on_mpi_exit(c)), vec![PolicyAction::WriteDuty(rat(1))]);
    }

    #[test]
    fn countdown_restores_only_after_firing() {
        let mut p = PolicySpec::new(PolicyKind::CountdownDvfs).build();
        assert_eq!(
            run(p.as_mut(), |p, c| p.on_mpi_enter(c)),
            vec![PolicyAction::ArmTimer { delay: rat(500) }]
        );
        assert_eq!(run(p.as_mut(), |p, c| p.on_mpi_exit(c)), vec![PolicyAction::DisarmTimer]);

        run(p.as_mut(), |p, c| p.on_mpi_enter(c));
        assert_eq!(
            run(p.as_mut(), |p, c| p.on_timer(c)),
            vec![PolicyAction::WriteFreq(FreqRequest::Level(ratio(6, 5)))]
        );
        assert_eq!(
            run(p.as_mut(), |p, c| p.on_mpi_exit(c)),
            vec![PolicyAction::DisarmTimer, PolicyAction::WriteFreq(FreqRequest::Turbo)]
        );
        // Next call starts clean.
        run(p.as_mut(), |p, c| p.on_mpi_enter(c));
        assert_eq!(run(p.as_mut(), |p, c| p.on_mpi_exit(c)), vec![PolicyAction::DisarmTimer]);
    }

    #[test]
    fn countdown_throttle_lowers_duty() {
        let mut p = PolicySpec::new(PolicyKind::CountdownThrottle).build();
        run(p.as_mut(), |p, c| p.on_mpi_enter(c));
        assert_eq!(run(p.as_mut(), |p, c| p.on_timer(c)), vec![PolicyAction::WriteDuty(ratio(1, 8))]);
    }

    #[test]
    fn spin_wait_converts_count_to_time() {
        let spec = PolicySpec::new(PolicyKind::SpinWait).with("spin_count", "10000").unwrap();
        assert_eq!(spec.params.spin_time_us(), rat(500));
        let mut p = spec.build();
        assert_eq!(
            run(p.as_mut(), |p, c| p.on_mpi_enter(c)),
            vec![PolicyAction::SleepAtWait { after: rat(500) }]
        );
        let mut w = PolicySpec::new(PolicyKind::WaitMode).build();
        assert_eq!(
            run(w.as_mut(), |p, c| p.on_mpi_enter(c)),
            vec![PolicyAction::SleepAtWait { after: rat(0) }]
        );
    }

    #[test]
    fn parameter_checks() {
        let hw = HwConfig::default();
        let spec = PolicySpec::new(PolicyKind::CountdownDvfs).with("timeout_us", "0").unwrap();
        assert!(spec.check(&hw).is_err());
        let spec = PolicySpec::new(PolicyKind::NaiveDvfs).with("low_freq_ghz", "1.7").unwrap();
        assert!(matches!(spec.check(&hw), Err(PolicyError::Hw(_))));
        let spec = PolicySpec::new(PolicyKind::NaiveThrottle).with("low_duty", "0.3").unwrap();
        assert!(spec.check(&hw).is_err());
        assert!(PolicySpec::new(PolicyKind::BusyWait).with("bogus", "1").is_err());
        assert!(PolicySpec::new(PolicyKind::BusyWait).with("spin_count", "-3").is_err());
        let params = BTreeMap::from([("timeout_us".to_string(), "250".to_string())]);
        let spec = PolicySpec::from_params("countdown_throttle", &params).unwrap();
        assert_eq!(spec.params.timeout_us, rat(250));
        assert!(spec.check(&hw).is_ok());
    }
}
