use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use super::{Phase, Workload};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ViolationKind {
    NoRanks,
    RankIdMismatch,
    DuplicateSyncInRank,
    SyncGroupTooSmall,
    SyncWithExtraWait,
    CyclicSyncDependency,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: ViolationKind,
    pub rank: Option<usize>,
    pub phase: Option<usize>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.rank, self.phase) {
            (Some(r), Some(p)) => write!(f, "rank {r} phase {p}: {}", self.message),
            (Some(r), None) => write!(f, "rank {r}: {}", self.message),
            _ => f.write_str(&self.message),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, kind: ViolationKind) -> bool {
        self.violations.iter().any(|v| v.kind == kind)
    }

    fn push(&mut self, kind: ViolationKind, rank: Option<usize>, phase: Option<usize>, message: impl Into<String>) {
        self.violations.push(Violation {
            kind,
            rank,
            phase,
            message: message.into(),
        });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Checks every workload invariant. An empty report means the simulation
/// cannot deadlock.
pub fn validate(workload: &Workload) -> ValidationReport {
    let mut report = ValidationReport::default();
    if workload.ranks.is_empty() {
        report.push(ViolationKind::NoRanks, None, None, "workload has no ranks");
        return report;
    }

    let mut duplicates = false;
    for (r, rank) in workload.ranks.iter().enumerate() {
        if rank.rank_id != r {
            report.push(
                ViolationKind::RankIdMismatch,
                Some(r),
                None,
                format!("rank id {} at position {r}; ids must be contiguous from 0", rank.rank_id),
            );
        }
        let mut seen = BTreeSet::new();
        for (p, phase) in rank.phases.iter().enumerate() {
            if let Phase::Mpi(call) = phase {
                if let Some(id) = &call.sync {
                    if !seen.insert(id.as_str()) {
                        duplicates = true;
                        report.push(
                            ViolationKind::DuplicateSyncInRank,
                            Some(r),
                            Some(p),
                            format!("sync `{id}` used more than once in this rank"),
                        );
                    }
                    if !call.extra_wait.is_zero() {
                        report.push(
                            ViolationKind::SyncWithExtraWait,
                            Some(r),
                            Some(p),
                            format!("sync `{id}` must not also carry extra_wait_us"),
                        );
                    }
                }
            }
        }
    }

    let groups = workload.sync_groups();
    for (id, members) in &groups {
        if members.len() < 2 {
            let r = members[0];
            let p = workload.ranks[r].phases.iter().position(|ph| ph.sync_id() == Some(id.as_str()));
            report.push(
                ViolationKind::SyncGroupTooSmall,
                Some(r),
                p,
                format!("sync group size < 2 for `{id}`"),
            );
        }
    }

    if !duplicates {
        check_schedulable(workload, &groups, &mut report);
    }
    report
}

/// Replays the per-rank phase order, releasing a sync once all of its members
/// reach it. Ranks left behind are part of a cyclic dependency.
fn check_schedulable(workload: &Workload, groups: &BTreeMap<String, Vec<usize>>, report: &mut ValidationReport) {
    let n = workload.ranks.len();
    let mut pos = vec![0usize; n];
    loop {
        let mut progressed = false;
        for r in 0..n {
            let phases = &workload.ranks[r].phases;
            while pos[r] < phases.len() {
                match phases[pos[r]].sync_id() {
                    Some(id) if groups[id].len() >= 2 => break,
                    _ => pos[r] += 1,
                }
            }
        }
        for (id, members) in groups.iter().filter(|(_, m)| m.len() >= 2) {
            let ready = members.iter().all(|&m| {
                let phases = &workload.ranks[m].phases;
                pos[m] < phases.len() && phases[pos[m]].sync_id() == Some(id.as_str())
            });
            if ready {
                for &m in members {
                    pos[m] += 1;
                }
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    for r in 0..n {
        let phases = &workload.ranks[r].phases;
        if pos[r] < phases.len() {
            let id = phases[pos[r]].sync_id().unwrap_or_default();
            report.push(
                ViolationKind::CyclicSyncDependency,
                Some(r),
                Some(pos[r]),
                format!("cyclic sync dependency: blocked at `{id}`"),
            );
        }
    }
}
