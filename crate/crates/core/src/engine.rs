//! Deterministic discrete-event engine: one simulated core per rank.
//!
//! An application phase executes its cycles at the core's effective speed.
//! Work is counted in whole cycles: when the speed changes mid-phase the
//! partly executed cycle is dropped and starts over at the new speed.
//! An MPI phase runs the policy prologue, executes its own cycles, then
//! blocks until its sync group is complete (or its fixed wait elapses);
//! a sleeping core pays the wake latency before the epilogue runs.
//!
//! Events at the same instant are processed in kind order: controller
//! samples, work completions, call releases, timers, sleep entry, wake-up.
//! Releases precede timers so a timer expiring exactly at the end of a
//! call never fires.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use num_traits::{Signed, Zero};
use thiserror::Error;

use crate::hw::{HwConfig, HwError, HwModel, SleepKind, SleepState};
use crate::policy::{Policy, PolicyAction, PolicyContext, PolicyError, PolicySpec};
use crate::rational::Rat;
use crate::timeline::{RankTimeline, RegWrite, RegisterWrite, Segment, SegmentRecorder, SimResult};
use crate::trace::{validate, Phase, PhaseKind, ValidationReport, Workload};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid workload:\n{0}")]
    InvalidWorkload(ValidationReport),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Hw(#[from] HwError),
    #[error("deadlock: ranks {0:?} never completed")]
    Deadlock(Vec<usize>),
    #[error("oracle step {0} must be positive and divide the sample period")]
    BadStep(String),
    #[error("engine invariant violated: {0}")]
    Internal(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum EventKind {
    Sample,
    WorkDone { rank: usize },
    Release { rank: usize },
    TimerFire { rank: usize },
    SleepTimer { rank: usize },
    SleepEntered { rank: usize },
    WakeDone { rank: usize },
}

impl EventKind {
    fn priority(&self) -> u8 {
        match self {
            EventKind::Sample => 0,
            EventKind::WorkDone { .. } => 1,
            EventKind::Release { .. } => 2,
            EventKind::TimerFire { .. } | EventKind::SleepTimer { .. } => 3,
            EventKind::SleepEntered { .. } => 4,
            EventKind::WakeDone { .. } => 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct Event {
    time: Rat,
    seq: u64,
    kind: EventKind,
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        self.time
            .cmp(&other.time)
            .then(self.kind.priority().cmp(&other.kind.priority()))
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    /// Prologue stall before the call's own work.
    Overhead,
    Work,
    Wait,
    Waking,
    Done,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct SegState {
    pub(crate) freq: Rat,
    pub(crate) duty: Rat,
    pub(crate) sleep: SleepKind,
    pub(crate) phase_index: usize,
    pub(crate) phase_kind: PhaseKind,
}

struct RankRun {
    phase: usize,
    stage: Stage,
    remaining: Rat,
    last: Rat,
    speed: Rat,
    executed: Rat,
    /// Sequence numbers of the live event of each kind; anything else is stale.
    work_event: Option<u64>,
    timer_event: Option<u64>,
    sleep_timer_event: Option<u64>,
    sleep_entered_event: Option<u64>,
    sleep_after: Option<Rat>,
    end: Option<Rat>,
    recorder: SegmentRecorder<SegState>,
}

struct Engine<'a> {
    workload: &'a Workload,
    hw: HwModel,
    policies: Vec<Box<dyn Policy>>,
    ranks: Vec<RankRun>,
    queue: BinaryHeap<Reverse<Event>>,
    seq: u64,
    next_sample: Option<Rat>,
    groups: BTreeMap<String, Vec<usize>>,
    arrivals: BTreeMap<String, usize>,
    writes: Vec<RegWrite>,
    event_cost: Rat,
}

/// Runs `workload` under `policy` on hardware `hw`.
pub fn simulate(workload: &Workload, policy: &PolicySpec, hw: &HwConfig) -> Result<SimResult, SimError> {
    let report = validate(workload);
    if !report.is_valid() {
        return Err(SimError::InvalidWorkload(report));
    }
    hw.validate()?;
    policy.check(hw)?;
    let mut engine = Engine::new(workload, policy, hw)?;
    engine.run()?;
    engine.finish()
}

impl<'a> Engine<'a> {
    fn new(workload: &'a Workload, policy: &PolicySpec, hw: &HwConfig) -> Result<Self, SimError> {
        let n = workload.n_ranks();
        let hw = HwModel::new(hw.clone(), n, policy.initial_freq())?;
        let ranks = (0..n)
            .map(|r| {
                let core = hw.core(r);
                let first_kind = workload.ranks[r].phases.first().map_or(PhaseKind::App, Phase::kind);
                RankRun {
                    phase: 0,
                    stage: Stage::Work,
                    remaining: Rat::zero(),
                    last: Rat::zero(),
                    speed: Rat::zero(),
                    executed: Rat::zero(),
                    work_event: None,
                    timer_event: None,
                    sleep_timer_event: None,
                    sleep_entered_event: None,
                    sleep_after: None,
                    end: None,
                    recorder: SegmentRecorder::new(SegState {
                        freq: core.freq_effective(),
                        duty: core.duty_effective(),
                        sleep: SleepKind::Active,
                        phase_index: 0,
                        phase_kind: first_kind,
                    }),
                }
            })
            .collect();
        Ok(Engine {
            workload,
            hw,
            policies: (0..n).map(|_| policy.build()).collect(),
            ranks,
            queue: BinaryHeap::new(),
            seq: 0,
            next_sample: None,
            groups: workload.sync_groups(),
            arrivals: BTreeMap::new(),
            writes: Vec::new(),
            event_cost: policy.params.event_cost_us,
        })
    }

    fn push(&mut self, time: Rat, kind: EventKind) -> u64 {
        let seq = self.seq;
        self.seq += 1;
        self.queue.push(Reverse(Event { time, seq, kind }));
        seq
    }

    fn run(&mut self) -> Result<(), SimError> {
        let t0 = Rat::zero();
        for r in 0..self.ranks.len() {
            self.start_phase(r, t0)?;
        }
        self.refresh(t0)?;
        while let Some(Reverse(ev)) = self.queue.pop() {
            let t = ev.time;
            self.handle(&ev)?;
            self.refresh(t)?;
        }
        let stuck: Vec<usize> = (0..self.ranks.len()).filter(|&r| self.ranks[r].stage != Stage::Done).collect();
        if !stuck.is_empty() {
            return Err(SimError::Deadlock(stuck));
        }
        Ok(())
    }

    fn handle(&mut self, ev: &Event) -> Result<(), SimError> {
        let t = ev.time;
        match ev.kind {
            EventKind::Sample => {
                self.next_sample = None;
                self.hw.sample(&t);
            }
            EventKind::WorkDone { rank } => {
                if self.ranks[rank].work_event != Some(ev.seq) {
                    return Ok(());
                }
                self.ranks[rank].work_event = None;
                match self.ranks[rank].stage {
                    Stage::Overhead => self.enter_work(rank, t),
                    Stage::Work => {
                        let run = &mut self.ranks[rank];
                        if run.speed * (t - run.last) != run.remaining {
                            return Err(SimError::Internal(format!(
                                "rank {rank} finished work with {} cycles left",
                                run.remaining - run.speed * (t - run.last)
                            )));
                        }
                        run.executed += run.remaining;
                        run.remaining = Rat::zero();
                        run.last = t;
                        match &self.workload.ranks[rank].phases[run.phase] {
                            Phase::App { .. } => {
                                self.ranks[rank].phase += 1;
                                self.start_phase(rank, t)?;
                            }
                            Phase::Mpi(_) => self.begin_wait(rank, t),
                        }
                    }
                    s => return Err(SimError::Internal(format!("rank {rank}: work completion in stage {s:?}"))),
                }
            }
            EventKind::Release { rank } => self.release(rank, t)?,
            EventKind::TimerFire { rank } => {
                if self.ranks[rank].timer_event != Some(ev.seq) {
                    return Ok(());
                }
                self.ranks[rank].timer_event = None;
                if matches!(self.ranks[rank].stage, Stage::Done)
                    || self.workload.ranks[rank].phases[self.ranks[rank].phase].kind() != PhaseKind::Mpi
                {
                    return Err(SimError::Internal(format!("rank {rank}: timer fired outside an MPI call")));
                }
                let mut ctx = PolicyContext::new(rank, t);
                self.policies[rank].on_timer(&mut ctx);
                self.apply(rank, t, ctx)?;
            }
            EventKind::SleepTimer { rank } => {
                if self.ranks[rank].sleep_timer_event != Some(ev.seq) {
                    return Ok(());
                }
                self.ranks[rank].sleep_timer_event = None;
                if self.ranks[rank].stage != Stage::Wait {
                    return Err(SimError::Internal(format!("rank {rank}: sleep requested outside a wait")));
                }
                let asleep_at = self.hw.sleep(rank, t)?;
                let seq = self.push(asleep_at, EventKind::SleepEntered { rank });
                self.ranks[rank].sleep_entered_event = Some(seq);
            }
            EventKind::SleepEntered { rank } => {
                if self.ranks[rank].sleep_entered_event != Some(ev.seq) {
                    return Ok(());
                }
                self.ranks[rank].sleep_entered_event = None;
                self.hw.sleep_entered(rank)?;
            }
            EventKind::WakeDone { rank } => {
                self.hw.wake_done(rank)?;
                self.exit_mpi(rank, t)?;
            }
        }
        Ok(())
    }

    /// Re-derives speeds and timeline state after an event and reschedules
    /// work completions whose speed changed.
    fn refresh(&mut self, t: Rat) -> Result<(), SimError> {
        for r in 0..self.ranks.len() {
            if self.ranks[r].stage == Stage::Done {
                continue;
            }
            let core = self.hw.core(r);
            let state = SegState {
                freq: core.freq_effective(),
                duty: core.duty_effective(),
                sleep: core.sleep().kind(),
                phase_index: self.ranks[r].phase,
                phase_kind: self.workload.ranks[r].phases[self.ranks[r].phase].kind(),
            };
            self.ranks[r].recorder.set(t, state);
            if self.ranks[r].stage == Stage::Work {
                let speed = self.hw.effective_speed(r);
                if !speed.is_positive() {
                    return Err(SimError::Internal(format!("rank {r}: working on a halted core")));
                }
                if speed != self.ranks[r].speed || self.ranks[r].work_event.is_none() {
                    let run = &mut self.ranks[r];
                    // A cycle cut short by a speed change is lost.
                    let done = (run.speed * (t - run.last)).floor();
                    run.executed += done;
                    run.remaining -= done;
                    run.last = t;
                    run.speed = speed;
                    let done_at = t + run.remaining / speed;
                    let seq = self.push(done_at, EventKind::WorkDone { rank: r });
                    self.ranks[r].work_event = Some(seq);
                }
            }
        }
        if self.next_sample.is_none() && self.hw.has_pending() {
            let at = self.hw.config().next_sample_after(&t);
            self.push(at, EventKind::Sample);
            self.next_sample = Some(at);
        }
        Ok(())
    }

    fn start_phase(&mut self, r: usize, t: Rat) -> Result<(), SimError> {
        let phases = &self.workload.ranks[r].phases;
        if self.ranks[r].phase == phases.len() {
            let run = &mut self.ranks[r];
            run.stage = Stage::Done;
            run.end = Some(t);
            self.hw.retire(r);
            return Ok(());
        }
        match &phases[self.ranks[r].phase] {
            Phase::App { .. } => self.enter_work(r, t),
            Phase::Mpi(_) => {
                let mut ctx = PolicyContext::new(r, t);
                self.policies[r].on_mpi_enter(&mut ctx);
                self.apply(r, t, ctx)?;
                if self.event_cost.is_positive() {
                    self.ranks[r].stage = Stage::Overhead;
                    let seq = self.push(t + self.event_cost, EventKind::WorkDone { rank: r });
                    self.ranks[r].work_event = Some(seq);
                } else {
                    self.enter_work(r, t);
                }
            }
        }
        Ok(())
    }

    fn enter_work(&mut self, r: usize, t: Rat) {
        let cycles = self.workload.ranks[r].phases[self.ranks[r].phase].cycles();
        let run = &mut self.ranks[r];
        run.stage = Stage::Work;
        run.remaining = Rat::from_integer(cycles as i128);
        run.last = t;
        run.speed = Rat::zero();
        run.work_event = None;
    }

    fn begin_wait(&mut self, r: usize, t: Rat) {
        self.ranks[r].stage = Stage::Wait;
        let Phase::Mpi(call) = &self.workload.ranks[r].phases[self.ranks[r].phase] else {
            unreachable!("begin_wait on an application phase");
        };
        match &call.sync {
            Some(id) => {
                let arrived = self.arrivals.entry(id.clone()).or_insert(0);
                *arrived += 1;
                let members = &self.groups[id];
                if *arrived == members.len() {
                    for m in members.clone() {
                        self.push(t, EventKind::Release { rank: m });
                    }
                }
            }
            None => {
                self.push(t + call.extra_wait.as_rat(), EventKind::Release { rank: r });
            }
        }
        if let Some(after) = self.ranks[r].sleep_after {
            let seq = self.push(t + after, EventKind::SleepTimer { rank: r });
            self.ranks[r].sleep_timer_event = Some(seq);
        }
    }

    fn release(&mut self, r: usize, t: Rat) -> Result<(), SimError> {
        if self.ranks[r].stage != Stage::Wait {
            return Err(SimError::Internal(format!("rank {r}: released while not waiting")));
        }
        self.ranks[r].sleep_timer_event = None;
        match self.hw.core(r).sleep() {
            SleepState::Active => self.exit_mpi(r, t),
            SleepState::EnteringSleep { .. } | SleepState::Sleeping => {
                self.ranks[r].sleep_entered_event = None;
                let resume = self.hw.wake(r, t)?;
                self.ranks[r].stage = Stage::Waking;
                self.push(resume, EventKind::WakeDone { rank: r });
                Ok(())
            }
            other => Err(SimError::Internal(format!("rank {r}: released in core state {other:?}"))),
        }
    }

    fn exit_mpi(&mut self, r: usize, t: Rat) -> Result<(), SimError> {
        let run = &mut self.ranks[r];
        run.timer_event = None;
        run.sleep_after = None;
        let mut ctx = PolicyContext::new(r, t);
        self.policies[r].on_mpi_exit(&mut ctx);
        self.apply(r, t, ctx)?;
        self.ranks[r].phase += 1;
        self.start_phase(r, t)
    }

    fn apply(&mut self, r: usize, t: Rat, ctx: PolicyContext) -> Result<(), SimError> {
        for action in ctx.into_actions() {
            match action {
                PolicyAction::WriteFreq(req) => {
                    self.hw.write_freq_request(r, req, t)?;
                    self.log_write(r, t, RegisterWrite::Freq(req));
                }
                PolicyAction::WriteDuty(duty) => {
                    self.hw.write_duty_request(r, duty, t)?;
                    self.log_write(r, t, RegisterWrite::Duty(duty));
                }
                PolicyAction::SleepAtWait { after } => self.ranks[r].sleep_after = Some(after),
                PolicyAction::ArmTimer { delay } => {
                    let seq = self.push(t + delay, EventKind::TimerFire { rank: r });
                    self.ranks[r].timer_event = Some(seq);
                }
                PolicyAction::DisarmTimer => self.ranks[r].timer_event = None,
            }
        }
        Ok(())
    }

    fn log_write(&mut self, rank: usize, t: Rat, value: RegisterWrite) {
        log::debug!("t={t} rank={rank} write {value:?}");
        self.writes.push(RegWrite { t_us: t, rank, value });
    }

    fn finish(self) -> Result<SimResult, SimError> {
        let mut ranks = Vec::with_capacity(self.ranks.len());
        for run in self.ranks {
            let end = run.end.ok_or_else(|| SimError::Internal("rank without end time".into()))?;
            let segments = run
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
            ranks.push(RankTimeline {
                segments,
                end_us: end,
                executed_cycles: run.executed,
            });
        }
        let tts_us = ranks.iter().map(|r| r.end_us).max().unwrap_or_default();
        let mut writes = self.writes;
        writes.sort_by(|a, b| a.t_us.cmp(&b.t_us).then(a.rank.cmp(&b.rank)));
        Ok(SimResult {
            workload_hash: self.workload.content_hash(),
            ranks,
            tts_us,
            writes,
        })
    }
}
