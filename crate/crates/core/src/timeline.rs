//! Simulation output: per-rank piecewise-constant timelines plus the log of
//! every register write, and their segments-CSV encoding.

use std::fmt::Write as _;

use num_traits::Zero;
use thiserror::Error;

use crate::hw::{FreqRequest, SleepKind};
use crate::rational::{fmt_decimal, parse_decimal, rat, Rat};
use crate::trace::PhaseKind;

/// Fractional digits used for times and levels in CSV output.
pub const CSV_DIGITS: u32 = 6;

pub const SEGMENTS_HEADER: &str = "rank,t0_us,t1_us,freq_ghz,duty,sleep,phase_index,phase_kind";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segment {
    pub t0_us: Rat,
    pub t1_us: Rat,
    pub freq_ghz: Rat,
    pub duty: Rat,
    pub sleep: SleepKind,
    pub phase_index: usize,
    pub phase_kind: PhaseKind,
}

impl Segment {
    pub fn duration(&self) -> Rat {
        self.t1_us - self.t0_us
    }

    pub fn is_awake(&self) -> bool {
        self.sleep != SleepKind::Sleeping
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RankTimeline {
    /// Contiguous, non-overlapping, covering `[0, end_us]`.
    pub segments: Vec<Segment>,
    pub end_us: Rat,
    /// Cycles of phase work actually executed.
    pub executed_cycles: Rat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegisterWrite {
    Freq(FreqRequest),
    Duty(Rat),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RegWrite {
    pub t_us: Rat,
    pub rank: usize,
    pub value: RegisterWrite,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SimResult {
    pub workload_hash: String,
    pub ranks: Vec<RankTimeline>,
    /// Time to solution: completion of the slowest rank.
    pub tts_us: Rat,
    /// Ordered by time, then rank; causal order within a rank.
    pub writes: Vec<RegWrite>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("segments CSV line {line}: {msg}")]
pub struct CsvError {
    pub line: usize,
    pub msg: String,
}

impl SimResult {
    pub fn segment_at(&self, rank: usize, t: &Rat) -> Option<&Segment> {
        // Right-continuous: a change instant belongs to the later segment.
        self.ranks
            .get(rank)?
            .segments
            .iter()
            .find(|s| s.t0_us <= *t && *t < s.t1_us)
    }

    /// Hardware speed in cycles per microsecond at `t`.
    pub fn effective_speed(&self, rank: usize, t: &Rat) -> Rat {
        match self.segment_at(rank, t) {
            Some(s) if s.sleep == SleepKind::Active => s.freq_ghz * rat(1000) * s.duty,
            _ => Rat::zero(),
        }
    }

    pub fn segments_csv(&self) -> String {
        let mut out = String::from(SEGMENTS_HEADER);
        out.push('\n');
        for (r, rank) in self.ranks.iter().enumerate() {
            for s in &rank.segments {
                let _ = writeln!(
                    out,
                    "{r},{},{},{},{},{},{},{}",
                    fmt_decimal(&s.t0_us, CSV_DIGITS),
                    fmt_decimal(&s.t1_us, CSV_DIGITS),
                    fmt_decimal(&s.freq_ghz, CSV_DIGITS),
                    fmt_decimal(&s.duty, CSV_DIGITS),
                    s.sleep.as_str(),
                    s.phase_index,
                    s.phase_kind
                );
            }
        }
        out
    }

    /// Rebuilds timelines from a segments CSV. Cycle totals and the write log
    /// are not part of the format and come back empty.
    pub fn from_segments_csv(text: &str) -> Result<SimResult, CsvError> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim() == SEGMENTS_HEADER => {}
            Some((_, h)) => {
                return Err(CsvError {
                    line: 1,
                    msg: format!("unexpected header `{h}`"),
                })
            }
            None => {
                return Err(CsvError {
                    line: 1,
                    msg: "missing header".into(),
                })
            }
        }
        let mut ranks: Vec<RankTimeline> = Vec::new();
        for (i, line) in lines {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let err = |msg: String| CsvError { line: line_no, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 8 {
                return Err(err(format!("expected 8 fields, found {}", fields.len())));
            }
            let rank: usize = fields[0].parse().map_err(|_| err(format!("bad rank `{}`", fields[0])))?;
            let dec = |idx: usize, name: &str| {
                parse_decimal(fields[idx]).map_err(|_| err(format!("bad {name} `{}`", fields[idx])))
            };
            let seg = Segment {
                t0_us: dec(1, "t0_us")?,
                t1_us: dec(2, "t1_us")?,
                freq_ghz: dec(3, "freq_ghz")?,
                duty: dec(4, "duty")?,
                sleep: SleepKind::parse(fields[5]).ok_or_else(|| err(format!("bad sleep `{}`", fields[5])))?,
                phase_index: fields[6].parse().map_err(|_| err(format!("bad phase_index `{}`", fields[6])))?,
                phase_kind: match fields[7] {
                    "app" => PhaseKind::App,
                    "mpi" => PhaseKind::Mpi,
                    other => return Err(err(format!("bad phase_kind `{other}`"))),
                },
            };
            if seg.t1_us < seg.t0_us {
                return Err(err("segment ends before it starts".into()));
            }
            if ranks.len() <= rank {
                ranks.resize_with(rank + 1, RankTimeline::default);
            }
            let timeline = &mut ranks[rank];
            if let Some(prev) = timeline.segments.last() {
                if prev.t1_us > seg.t0_us {
                    return Err(err("segment overlaps the previous one of its rank".into()));
                }
            }
            timeline.end_us = seg.t1_us;
            timeline.segments.push(seg);
        }
        let tts_us = ranks.iter().map(|r| r.end_us).max().unwrap_or_default();
        Ok(SimResult {
            workload_hash: String::new(),
            ranks,
            tts_us,
            writes: Vec::new(),
        })
    }
}

/// Accumulates segments for one rank, dropping zero-length intervals.
#[derive(Debug, Clone)]
pub(crate) struct SegmentRecorder<S> {
    start: Rat,
    state: S,
    segments: Vec<(Rat, Rat, S)>,
}

impl<S: Clone + PartialEq> SegmentRecorder<S> {
    pub(crate) fn new(state: S) -> Self {
        SegmentRecorder {
            start: Rat::zero(),
            state,
            segments: Vec::new(),
        }
    }

    pub(crate) fn set(&mut self, t: Rat, state: S) {
        if state == self.state {
            return;
        }
        if t > self.start {
            self.segments.push((self.start, t, self.state.clone()));
            self.start = t;
        } else if matches!(self.segments.last(), Some((_, end, s)) if *end == t && *s == state) {
            // A -> B -> A within one instant: reopen the earlier segment.
            let (t0, _, _) = self.segments.pop().expect("checked above");
            self.start = t0;
        }
        self.state = state;
    }

    pub(crate) fn finish(mut self, t: Rat) -> Vec<(Rat, Rat, S)> {
        if t > self.start {
            self.segments.push((self.start, t, self.state));
        }
        self.segments
    }
}
