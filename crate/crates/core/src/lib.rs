//! Trace-driven simulation of power-saving policies applied inside MPI calls.
//!
//! A [`Workload`] lists, per rank, alternating application and MPI phases.
//! [`simulate`] replays it on one simulated core per rank under a
//! [`PolicySpec`] and a [`HwConfig`], producing piecewise-constant timelines
//! ([`SimResult`]). The [`metrics`] module turns timelines into energy,
//! comparison reports and phase-duration analyses.

pub mod engine;
pub mod hw;
pub mod metrics;
pub mod oracle;
pub mod policy;
pub mod rational;
pub mod timeline;
pub mod trace;

pub use engine::{simulate, SimError};
pub use hw::{FreqRequest, HwConfig, HwError, HwModel, SleepKind, SleepState};
pub use metrics::{
    compare, duration_split, energy, quadrant_analysis, ComparisonReport, LoadMetric, MetricsError, PowerMode,
    PowerModel, Region, RunMetrics,
};
pub use oracle::replay_oracle;
pub use policy::{PolicyError, PolicyKind, PolicyParams, PolicySpec};
pub use rational::Rat;
pub use timeline::{RankTimeline, RegWrite, RegisterWrite, Segment, SimResult};
pub use trace::{
    gen_balanced, gen_random, gen_unbalanced, load_workload, save_workload, validate, BalancedParams, Micros, MpiCall, Phase,
    PhaseKind, RandomParams, RankTrace, TraceError, UnbalancedParams, ValidationReport, Workload,
};
