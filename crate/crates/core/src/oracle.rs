//! Fixed-timestep reference simulator used to cross-check the engine.
//!
//! Time advances in steps of `dt`. Register requests are latched eagerly at
//! every sampling-grid tick a step starts on; inside a step, per-rank
//! deadlines are scanned directly (no event queue). Work is kept in whole
//! cycles and re-based whenever a core's speed changes. Policies and turbo arbitration are re-derived here from the
//! policy parameters rather than going through the engine's hardware model.

use std::collections::BTreeMap;

use num_traits::{Signed, Zero};

use crate::engine::{SegState, SimError};
use crate::hw::{FreqRequest, HwConfig, SleepKind};
use crate::policy::{PolicyKind, PolicySpec};
use crate::rational::{is_multiple_of, Rat};
use crate::timeline::{RankTimeline, RegWrite, RegisterWrite, Segment, SegmentRecorder, SimResult};
use crate::trace::{validate, Phase, Workload};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Power {
    Active,
    Entering(Rat),
    Sleeping,
    Waking(Rat),
    Off,
}

#[derive(Debug, Clone)]
struct Core {
    setting: FreqRequest,
    freq_pending: Option<(FreqRequest, Rat)>,
    duty: Rat,
    duty_pending: Option<(Rat, Rat)>,
    power: Power,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Stage {
    Overhead(Rat),
    Work(WorkRun),
    Wait { release: Option<Rat>, sleep_at: Option<Rat> },
    Waking,
    Done(Rat),
}

/// Cycles left as of `since`, running at `speed` from then on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct WorkRun {
    left: Rat,
    since: Rat,
    speed: Rat,
}

impl WorkRun {
    fn new(cycles: u64, t: Rat) -> Self {
        WorkRun {
            left: Rat::from_integer(cycles as i128),
            since: t,
            speed: Rat::zero(),
        }
    }
}

struct Rank {
    phase: usize,
    stage: Stage,
    executed: Rat,
    timer: Option<Rat>,
    fired: bool,
    sleep_after: Option<Rat>,
    recorder: SegmentRecorder<SegState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Due {
    Work,
    Release,
    Timer,
    SleepAt,
    Entered,
    Woken,
}

impl Due {
    /// Same-instant order; the countdown timer and the sleep timer share a slot.
    fn rank(self) -> u8 {
        match self {
            Due::Work => 1,
            Due::Release => 2,
            Due::Timer | Due::SleepAt => 3,
            Due::Entered => 4,
            Due::Woken => 5,
        }
    }
}

struct Oracle<'a> {
    w: &'a Workload,
    cfg: &'a HwConfig,
    spec: &'a PolicySpec,
    cores: Vec<Core>,
    ranks: Vec<Rank>,
    group_size: BTreeMap<String, usize>,
    arrived: BTreeMap<String, Vec<usize>>,
    writes: Vec<RegWrite>,
}

/// Brute-force replay of `simulate` with step `dt_us`, which must divide the
/// sample period.
pub fn replay_oracle(w: &Workload, spec: &PolicySpec, cfg: &HwConfig, dt_us: &Rat) -> Result<SimResult, SimError> {
    let report = validate(w);
    if !report.is_valid() {
        return Err(SimError::InvalidWorkload(report));
    }
    cfg.validate()?;
    spec.check(cfg)?;
    if !dt_us.is_positive() || !is_multiple_of(&cfg.sample_period_us, dt_us) {
        return Err(SimError::BadStep(dt_us.to_string()));
    }
    let n = w.n_ranks();
    let init = spec.initial_freq();
    let mut o = Oracle {
        w,
        cfg,
        spec,
        cores: vec![
            Core {
                setting: init,
                freq_pending: None,
                duty: Rat::from_integer(1),
                duty_pending: None,
                power: Power::Active,
            };
            n
        ],
        ranks: (0..n)
            .map(|_| Rank {
                phase: 0,
                stage: Stage::Work(WorkRun::new(0, Rat::zero())),
                executed: Rat::zero(),
                timer: None,
                fired: false,
                sleep_after: None,
                recorder: SegmentRecorder::new(SegState {
                    freq: Rat::zero(),
                    duty: Rat::zero(),
                    sleep: SleepKind::Active,
                    phase_index: 0,
                    phase_kind: crate::trace::PhaseKind::App,
                }),
            })
            .collect(),
        group_size: w.sync_groups().into_iter().map(|(id, m)| (id, m.len())).collect(),
        arrived: BTreeMap::new(),
        writes: Vec::new(),
    };

    let mut t = Rat::zero();
    for r in 0..n {
        o.enter(r, t);
    }
    o.rerate(&t);
    o.record(t);
    while o.ranks.iter().any(|r| !matches!(r.stage, Stage::Done(_))) {
        if is_multiple_of(&t, &cfg.sample_period_us) {
            o.latch(&t);
            o.rerate(&t);
            o.record(t);
        }
        let step_end = t + dt_us;
        while let Some((at, due, r)) = o.next_due(&step_end) {
            o.fire(r, due, at)?;
            o.rerate(&at);
            o.record(at);
        }
        t = step_end;
        let left: Vec<usize> = (0..n).filter(|&r| !matches!(o.ranks[r].stage, Stage::Done(_))).collect();
        if !left.is_empty() && o.stuck() {
            return Err(SimError::Deadlock(left));
        }
    }
    Ok(o.finish())
}

impl Oracle<'_> {
    fn awake(&self) -> usize {
        self.cores
            .iter()
            .filter(|c| !matches!(c.power, Power::Sleeping | Power::Off))
            .count()
    }

    fn freq(&self, r: usize) -> Rat {
        match self.cores[r].setting {
            FreqRequest::Level(f) => f,
            FreqRequest::Turbo => self.cfg.turbo_arbitrate(self.awake()),
        }
    }

    fn speed(&self, r: usize) -> Rat {
        let c = &self.cores[r];
        if c.power == Power::Active {
            self.freq(r) * Rat::from_integer(1000) * c.duty
        } else {
            Rat::zero()
        }
    }

    fn latch(&mut self, t: &Rat) {
        for c in &mut self.cores {
            if let Some((req, at)) = c.freq_pending {
                if at < *t {
                    c.setting = req;
                    c.freq_pending = None;
                }
            }
            if let Some((d, at)) = c.duty_pending {
                if at < *t {
                    c.duty = d;
                    c.duty_pending = None;
                }
            }
        }
    }

    fn record(&mut self, t: Rat) {
        for r in 0..self.ranks.len() {
            if matches!(self.ranks[r].stage, Stage::Done(_)) {
                continue;
            }
            let sleep = match self.cores[r].power {
                Power::Active | Power::Off => SleepKind::Active,
                Power::Entering(_) => SleepKind::Entering,
                Power::Sleeping => SleepKind::Sleeping,
                Power::Waking(_) => SleepKind::Waking,
            };
            let phase = self.ranks[r].phase;
            let state = SegState {
                freq: self.freq(r),
                duty: self.cores[r].duty,
                sleep,
                phase_index: phase,
                phase_kind: self.w.ranks[r].phases[phase].kind(),
            };
            self.ranks[r].recorder.set(t, state);
        }
    }

    /// Earliest pending deadline strictly before `until`.
    fn next_due(&self, until: &Rat) -> Option<(Rat, Due, usize)> {
        let mut best: Option<(Rat, u8, usize, Due)> = None;
        let mut offer = |at: Rat, due: Due, r: usize| {
            if at < *until {
                let key = (at, due.rank(), r, due);
                if best.as_ref().is_none_or(|b| (key.0, key.1, key.2) < (b.0, b.1, b.2)) {
                    best = Some(key);
                }
            }
        };
        for (r, rank) in self.ranks.iter().enumerate() {
            match rank.stage {
                Stage::Overhead(until) => offer(until, Due::Work, r),
                Stage::Work(run) => {
                    if run.speed.is_positive() {
                        offer(run.since + run.left / run.speed, Due::Work, r);
                    }
                }
                Stage::Wait { release, sleep_at } => {
                    if let Some(at) = release {
                        offer(at, Due::Release, r);
                    }
                    if let Some(at) = sleep_at {
                        offer(at, Due::SleepAt, r);
                    }
                }
                Stage::Waking | Stage::Done(_) => {}
            }
            if let Some(at) = rank.timer {
                offer(at, Due::Timer, r);
            }
            match self.cores[r].power {
                Power::Entering(at) => offer(at, Due::Entered, r),
                Power::Waking(at) => offer(at, Due::Woken, r),
                _ => {}
            }
        }
        best.map(|(at, _, r, due)| (at, due, r))
    }

    /// Re-bases work of every rank whose speed changed at `t`, dropping
    /// the partial cycle.
    fn rerate(&mut self, t: &Rat) {
        for r in 0..self.ranks.len() {
            let v = self.speed(r);
            if let Stage::Work(run) = &mut self.ranks[r].stage {
                if run.speed != v {
                    let done = (run.speed * (t - run.since)).floor();
                    run.left -= done;
                    run.since = *t;
                    run.speed = v;
                    self.ranks[r].executed += done;
                }
            }
        }
    }

    fn stuck(&self) -> bool {
        let pending = self.cores.iter().any(|c| c.freq_pending.is_some() || c.duty_pending.is_some());
        let moving = (0..self.ranks.len()).any(|r| match self.ranks[r].stage {
            Stage::Work(_) => self.speed(r).is_positive(),
            Stage::Overhead(_) | Stage::Waking => true,
            Stage::Wait { release, sleep_at } => release.is_some() || sleep_at.is_some(),
            Stage::Done(_) => false,
        });
        let timers = self.ranks.iter().any(|r| r.timer.is_some())
            || self
                .cores
                .iter()
                .any(|c| matches!(c.power, Power::Entering(_) | Power::Waking(_)));
        !(pending || moving || timers)
    }

    fn write_freq(&mut self, r: usize, req: FreqRequest, t: Rat) {
        self.cores[r].freq_pending = Some((req, t));
        self.writes.push(RegWrite { t_us: t, rank: r, value: RegisterWrite::Freq(req) });
    }

    fn write_duty(&mut self, r: usize, d: Rat, t: Rat) {
        self.cores[r].duty_pending = Some((d, t));
        self.writes.push(RegWrite { t_us: t, rank: r, value: RegisterWrite::Duty(d) });
    }

    fn lower(&mut self, r: usize, t: Rat) {
        let p = &self.spec.params;
        match self.spec.kind {
            PolicyKind::NaiveDvfs | PolicyKind::CountdownDvfs => self.write_freq(r, FreqRequest::Level(p.low_freq_ghz), t),
            PolicyKind::NaiveThrottle | PolicyKind::CountdownThrottle => self.write_duty(r, p.low_duty, t),
            _ => {}
        }
    }

    fn restore(&mut self, r: usize, t: Rat) {
        match self.spec.kind {
            PolicyKind::NaiveDvfs | PolicyKind::CountdownDvfs => self.write_freq(r, self.spec.params.high_freq, t),
            PolicyKind::NaiveThrottle | PolicyKind::CountdownThrottle => self.write_duty(r, Rat::from_integer(1), t),
            _ => {}
        }
    }

    fn enter(&mut self, r: usize, t: Rat) {
        let phases = &self.w.ranks[r].phases;
        let idx = self.ranks[r].phase;
        if idx == phases.len() {
            self.ranks[r].stage = Stage::Done(t);
            self.cores[r].power = Power::Off;
            return;
        }
        let cycles = phases[idx].cycles();
        if let Phase::Mpi(_) = phases[idx] {
            let p = &self.spec.params;
            match self.spec.kind {
                PolicyKind::BusyWait => {}
                PolicyKind::WaitMode => self.ranks[r].sleep_after = Some(Rat::zero()),
                PolicyKind::SpinWait => self.ranks[r].sleep_after = Some(Rat::from_integer(p.spin_count as i128) * p.spin_iteration_us),
                PolicyKind::NaiveDvfs | PolicyKind::NaiveThrottle => self.lower(r, t),
                PolicyKind::CountdownDvfs | PolicyKind::CountdownThrottle => {
                    self.ranks[r].fired = false;
                    self.ranks[r].timer = Some(t + p.timeout_us);
                }
            }
            let cost = self.spec.params.event_cost_us;
            if cost.is_positive() {
                self.ranks[r].stage = Stage::Overhead(t + cost);
                return;
            }
        }
        self.ranks[r].stage = Stage::Work(WorkRun::new(cycles, t));
    }

    fn fire(&mut self, r: usize, due: Due, t: Rat) -> Result<(), SimError> {
        let bug = |what: &str| Err(SimError::Internal(format!("oracle rank {r}: {what}")));
        match due {
            Due::Work => {
                let phase = &self.w.ranks[r].phases[self.ranks[r].phase];
                match (self.ranks[r].stage, phase) {
                    (Stage::Overhead(_), _) => {
                        self.ranks[r].stage = Stage::Work(WorkRun::new(phase.cycles(), t));
                    }
                    (Stage::Work(run), _) if run.speed * (t - run.since) != run.left => {
                        return bug("work completed early")
                    }
                    (Stage::Work(run), Phase::App { .. }) => {
                        self.ranks[r].executed += run.left;
                        self.ranks[r].phase += 1;
                        self.enter(r, t);
                    }
                    (Stage::Work(run), Phase::Mpi(call)) => {
                        self.ranks[r].executed += run.left;
                        let sleep_at = self.ranks[r].sleep_after.map(|a| t + a);
                        let release = match &call.sync {
                            None => Some(t + call.extra_wait.as_rat()),
                            Some(id) => {
                                let members = self.group_size[id];
                                let arrived = self.arrived.entry(id.clone()).or_default();
                                arrived.push(r);
                                if arrived.len() == members {
                                    for m in arrived.clone() {
                                        if let Stage::Wait { release, .. } = &mut self.ranks[m].stage {
                                            *release = Some(t);
                                        }
                                    }
                                    Some(t)
                                } else {
                                    None
                                }
                            }
                        };
                        self.ranks[r].stage = Stage::Wait { release, sleep_at };
                    }
                    _ => return bug("unexpected work deadline"),
                }
            }
            Due::Release => {
                match self.cores[r].power {
                    Power::Active => self.exit(r, t),
                    Power::Entering(_) | Power::Sleeping => {
                        self.cores[r].power = Power::Waking(t + self.cfg.cstate_wake_us);
                        self.ranks[r].stage = Stage::Waking;
                    }
                    _ => return bug("released in a bad power state"),
                }
            }
            Due::Timer => {
                self.ranks[r].timer = None;
                self.ranks[r].fired = true;
                self.lower(r, t);
            }
            Due::SleepAt => {
                if let Stage::Wait { sleep_at, .. } = &mut self.ranks[r].stage {
                    *sleep_at = None;
                }
                self.cores[r].power = Power::Entering(t + self.cfg.cstate_entry_us);
            }
            Due::Entered => self.cores[r].power = Power::Sleeping,
            Due::Woken => {
                self.cores[r].power = Power::Active;
                self.exit(r, t);
            }
        }
        Ok(())
    }

    fn exit(&mut self, r: usize, t: Rat) {
        self.ranks[r].timer = None;
        self.ranks[r].sleep_after = None;
        match self.spec.kind {
            PolicyKind::NaiveDvfs | PolicyKind::NaiveThrottle => self.restore(r, t),
            PolicyKind::CountdownDvfs | PolicyKind::CountdownThrottle if self.ranks[r].fired => {
                self.ranks[r].fired = false;
                self.restore(r, t);
            }
            _ => {}
        }
        self.ranks[r].phase += 1;
        self.enter(r, t);
    }

    fn finish(self) -> SimResult {
        let ranks: Vec<RankTimeline> = self
            .ranks
            .into_iter()
            .map(|rank| {
                let Stage::Done(end) = rank.stage else {
                    unreachable!("finish before every rank is done");
                };
                let segments = rank
                    .recorder
                    .finish(end)
                    .into_iter()
                    .map(|(t0, t1, s)| Segment {
                        t0_us: t0,
                        t1_us: t1,
                        freq_ghz: s.freq,
                        duty: s.duty,
                        sleep: s.sleep,
                        phase_index: s.phase_index,
                        phase_kind: s.phase_kind,
                    })
                    .collect();
                RankTimeline {
                    segments,
                    end_us: end,
                    executed_cycles: rank.executed,
                }
            })
            .collect();
        let mut writes = self.writes;
        writes.sort_by(|a, b| a.t_us.cmp(&b.t_us).then(a.rank.cmp(&b.rank)));
        SimResult {
            workload_hash: self.w.content_hash(),
            tts_us: ranks.iter().map(|r| r.end_us).max().unwrap_or_default(),
            ranks,
            writes,
        }
    }
}
