//! Application model: per-rank sequences of application and MPI phases.
//!
//! Work is expressed in CPU cycles, not durations. How long a phase lasts
//! emerges at simulation time from the effective frequency and duty cycle.

mod generate;
mod io;
mod validate;

use std::collections::BTreeMap;
use std::fmt;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rational::{ratio, Rat};

pub use generate::{gen_balanced, gen_random, gen_unbalanced, BalancedParams, RandomParams, UnbalancedParams};
pub use io::{load_workload, save_workload};
pub use validate::{validate, ValidationReport, Violation, ViolationKind};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("cannot access workload file {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("workload parse error at line {line}, column {column}: {msg}")]
    Parse { line: usize, column: usize, msg: String },
    #[error("rank {rank} phase {phase}: {msg}")]
    Field { rank: usize, phase: usize, msg: String },
    #[error("workload has no ranks")]
    NoRanks,
    #[error("invalid generator parameters: {0}")]
    Generator(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PhaseKind {
    App,
    Mpi,
}

impl PhaseKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PhaseKind::App => "app",
            PhaseKind::Mpi => "mpi",
        }
    }
}

impl fmt::Display for PhaseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A wall-clock duration in microseconds with nanosecond resolution
/// (at most three fractional digits).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Micros {
    nanos: u64,
}

impl Micros {
    pub const ZERO: Micros = Micros { nanos: 0 };

    pub fn from_nanos(nanos: u64) -> Self {
        Micros { nanos }
    }

    pub fn from_micros(us: u64) -> Self {
        Micros { nanos: us * 1000 }
    }

    pub fn nanos(self) -> u64 {
        self.nanos
    }

    pub fn is_zero(self) -> bool {
        self.nanos == 0
    }

    pub fn as_rat(self) -> Rat {
        ratio(self.nanos as i128, 1000)
    }
}

/// The MPI primitive portion of a rank's trace.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MpiCall {
    /// CPU work performed inside the call before it blocks.
    pub cycles: u64,
    /// Collective synchronization group; every rank naming the same id joins it.
    pub sync: Option<String>,
    /// Fixed wall-clock wait for calls without a sync group.
    pub extra_wait: Micros,
    /// Informational only.
    pub call: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Phase {
    App { cycles: u64 },
    Mpi(MpiCall),
}

impl Phase {
    pub fn app(cycles: u64) -> Self {
        Phase::App { cycles }
    }

    pub fn sync(cycles: u64, sync: impl Into<String>) -> Self {
        Phase::Mpi(MpiCall {
            cycles,
            sync: Some(sync.into()),
            extra_wait: Micros::ZERO,
            call: None,
        })
    }

    pub fn wait(cycles: u64, extra_wait: Micros) -> Self {
        Phase::Mpi(MpiCall {
            cycles,
            sync: None,
            extra_wait,
            call: None,
        })
    }

    pub fn kind(&self) -> PhaseKind {
        match self {
            Phase::App { .. } => PhaseKind::App,
            Phase::Mpi(_) => PhaseKind::Mpi,
        }
    }

    pub fn cycles(&self) -> u64 {
        match self {
            Phase::App { cycles } => *cycles,
            Phase::Mpi(call) => call.cycles,
        }
    }

    pub fn sync_id(&self) -> Option<&str> {
        match self {
            Phase::Mpi(call) => call.sync.as_deref(),
            Phase::App { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RankTrace {
    pub rank_id: usize,
    pub phases: Vec<Phase>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Hash)]
pub struct Workload {
    pub ranks: Vec<RankTrace>,
    pub meta: BTreeMap<String, String>,
}

impl Workload {
    /// Builds a workload from per-rank phase lists, numbering ranks `0..N`.
    pub fn from_phases(ranks: Vec<Vec<Phase>>) -> Self {
        Workload {
            ranks: ranks
                .into_iter()
                .enumerate()
                .map(|(rank_id, phases)| RankTrace { rank_id, phases })
                .collect(),
            meta: BTreeMap::new(),
        }
    }

    pub fn n_ranks(&self) -> usize {
        self.ranks.len()
    }

    pub fn n_phases(&self) -> usize {
        self.ranks.iter().map(|r| r.phases.len()).sum()
    }

    /// Members of every sync group, in ascending rank order.
    pub fn sync_groups(&self) -> BTreeMap<String, Vec<usize>> {
        let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (r, rank) in self.ranks.iter().enumerate() {
            for phase in &rank.phases {
                if let Some(id) = phase.sync_id() {
                    let members = groups.entry(id.to_string()).or_default();
                    if members.last() != Some(&r) {
                        members.push(r);
                    }
                }
            }
        }
        groups
    }

    /// Canonical JSON encoding.
    pub fn to_json(&self) -> String {
        io::to_json(self)
    }

    pub fn from_json(text: &str) -> Result<Self, TraceError> {
        io::from_json(text)
    }

    /// Stable content digest used to tie simulation results to their input.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}
