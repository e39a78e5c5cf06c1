//! Synthetic workloads shaped after a balanced (every rank shares the work)
//! and an unbalanced (one rank does a long serial kernel) application run.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{MpiCall, Micros, Phase, RankTrace, TraceError, Workload};
use crate::rational::{fmt_compact, rat, Rat};
use num_traits::{Signed, Zero};

#[derive(Debug, Clone, PartialEq)]
pub struct BalancedParams {
    pub n_ranks: usize,
    pub n_iters: usize,
    pub app_us: Rat,
    pub mpi_us: Rat,
    /// Share of `mpi_us` that is CPU work inside the call.
    pub mpi_work_fraction: Rat,
    /// Uniform perturbation of application durations, in percent.
    pub jitter_pct: Rat,
    pub seed: u64,
    pub ref_freq_ghz: Rat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnbalancedParams {
    pub n_ranks: usize,
    pub n_iters: usize,
    pub diag_rank: usize,
    pub diag_app_us: Rat,
    pub other_app_us: Rat,
    pub seed: u64,
    pub ref_freq_ghz: Rat,
}

/// Cycles needed to keep a core busy for `us` at `ghz`.
fn cycles_for(us: &Rat, ghz: &Rat) -> Result<u64, TraceError> {
    let c = (us * ghz * rat(1000)).round().to_integer();
    u64::try_from(c).map_err(|_| TraceError::Generator(format!("cycle count {c} out of range")))
}

fn collective(cycles: u64, iter: usize, call: &str) -> Phase {
    Phase::Mpi(MpiCall {
        cycles,
        sync: Some(format!("it{iter}")),
        extra_wait: Micros::ZERO,
        call: Some(call.to_string()),
    })
}

fn check(cond: bool, msg: &str) -> Result<(), TraceError> {
    if cond {
        Ok(())
    } else {
        Err(TraceError::Generator(msg.to_string()))
    }
}

pub fn gen_balanced(p: &BalancedParams) -> Result<Workload, TraceError> {
    check(p.n_ranks >= 2, "n_ranks must be at least 2 for synchronized phases")?;
    check(p.app_us.is_positive(), "app_us must be > 0")?;
    check(!p.mpi_us.is_negative(), "mpi_us must be >= 0")?;
    check(p.ref_freq_ghz.is_positive(), "ref_freq_ghz must be > 0")?;
    check(
        !p.mpi_work_fraction.is_negative() && p.mpi_work_fraction <= rat(1),
        "mpi_work_fraction must lie in [0, 1]",
    )?;
    check(
        !p.jitter_pct.is_negative() && p.jitter_pct < rat(100),
        "jitter_pct must lie in [0, 100)",
    )?;

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let mpi_cycles = cycles_for(&(p.mpi_us * p.mpi_work_fraction), &p.ref_freq_ghz)?;
    let mut ranks: Vec<Vec<Phase>> = vec![Vec::with_capacity(2 * p.n_iters); p.n_ranks];
    for iter in 0..p.n_iters {
        for phases in ranks.iter_mut() {
            let app_us = if p.jitter_pct.is_zero() {
                p.app_us
            } else {
                let u = Rat::new(rng.random_range(-1_000_000i128..=1_000_000), 1_000_000);
                p.app_us * (rat(1) + p.jitter_pct / rat(100) * u)
            };
            phases.push(Phase::App {
                cycles: cycles_for(&app_us, &p.ref_freq_ghz)?,
            });
            phases.push(collective(mpi_cycles, iter, "Allreduce"));
        }
    }

    let mut w = Workload::from_phases(ranks);
    let meta = &mut w.meta;
    meta.insert("generator".into(), "balanced".into());
    meta.insert("n_ranks".into(), p.n_ranks.to_string());
    meta.insert("n_iters".into(), p.n_iters.to_string());
    meta.insert("app_us".into(), fmt_compact(&p.app_us));
    meta.insert("mpi_us".into(), fmt_compact(&p.mpi_us));
    meta.insert("mpi_work_fraction".into(), fmt_compact(&p.mpi_work_fraction));
    meta.insert("jitter_pct".into(), fmt_compact(&p.jitter_pct));
    meta.insert("ref_freq_ghz".into(), fmt_compact(&p.ref_freq_ghz));
    // The seed has no influence without jitter.
    if !p.jitter_pct.is_zero() {
        meta.insert("seed".into(), p.seed.to_string());
    }
    Ok(w)
}

pub fn gen_unbalanced(p: &UnbalancedParams) -> Result<Workload, TraceError> {
    check(p.n_ranks >= 2, "n_ranks must be at least 2 for synchronized phases")?;
    check(p.diag_rank < p.n_ranks, "diag_rank out of range")?;
    check(p.other_app_us.is_positive(), "other_app_us must be > 0")?;
    check(p.diag_app_us >= p.other_app_us, "diag_app_us must be >= other_app_us")?;
    check(p.ref_freq_ghz.is_positive(), "ref_freq_ghz must be > 0")?;

    let diag_cycles = cycles_for(&p.diag_app_us, &p.ref_freq_ghz)?;
    let other_cycles = cycles_for(&p.other_app_us, &p.ref_freq_ghz)?;
    let ranks = (0..p.n_ranks)
        .map(|r| {
            let cycles = if r == p.diag_rank { diag_cycles } else { other_cycles };
            let phases = (0..p.n_iters)
                .flat_map(|iter| [Phase::App { cycles }, collective(0, iter, "Barrier")])
                .collect();
            RankTrace { rank_id: r, phases }
        })
        .collect();

    let mut w = Workload {
        ranks,
        ..Default::default()
    };
    let meta = &mut w.meta;
    meta.insert("generator".into(), "unbalanced".into());
    meta.insert("n_ranks".into(), p.n_ranks.to_string());
    meta.insert("n_iters".into(), p.n_iters.to_string());
    meta.insert("diag_rank".into(), p.diag_rank.to_string());
    meta.insert("diag_app_us".into(), fmt_compact(&p.diag_app_us));
    meta.insert("other_app_us".into(), fmt_compact(&p.other_app_us));
    meta.insert("ref_freq_ghz".into(), fmt_compact(&p.ref_freq_ghz));
    meta.insert("seed".into(), p.seed.to_string());
    Ok(w)
}

/// Irregular workloads for fuzzing: a mix of application phases, fixed
/// waits and collectives over random rank subsets. Collectives are emitted
/// in one global order, so the result never deadlocks.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomParams {
    pub n_ranks: usize,
    /// Upper bound on the total phase count over all ranks.
    pub max_phases: usize,
    /// Longest phase, in microseconds at `ref_freq_ghz`.
    pub max_phase_us: u64,
    /// Phases drawn below this duration are "short"; about half are.
    pub short_us: u64,
    pub seed: u64,
    pub ref_freq_ghz: Rat,
}

pub fn gen_random(p: &RandomParams) -> Result<Workload, TraceError> {
    check(p.n_ranks >= 1, "n_ranks must be at least 1")?;
    check(p.max_phases >= p.n_ranks, "max_phases must cover one phase per rank")?;
    check(p.short_us <= p.max_phase_us, "short_us must be <= max_phase_us")?;
    check(p.ref_freq_ghz.is_positive(), "ref_freq_ghz must be > 0")?;

    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let draw_us = |rng: &mut ChaCha8Rng| -> Rat {
        let (lo, hi) = if rng.random_bool(0.5) {
            (0, p.short_us)
        } else {
            (p.short_us, p.max_phase_us)
        };
        // Nanosecond resolution.
        Rat::new(rng.random_range(lo as i128 * 1000..=hi as i128 * 1000), 1000)
    };
    let mut ranks: Vec<Vec<Phase>> = vec![Vec::new(); p.n_ranks];
    let mut total = 0;
    let mut groups = 0;
    // Leave room so every rank can still get its one phase.
    let budget = p.max_phases - p.n_ranks;
    loop {
        let roll = rng.random_range(0..10);
        if roll < 4 && p.n_ranks >= 2 {
            let k = rng.random_range(2..=p.n_ranks);
            if total + 2 * k > budget {
                break;
            }
            let mut members: Vec<usize> = (0..p.n_ranks).collect();
            for i in 0..k {
                let j = rng.random_range(i..p.n_ranks);
                members.swap(i, j);
            }
            members.truncate(k);
            members.sort_unstable();
            let id = format!("g{groups}");
            groups += 1;
            for m in members {
                if rng.random_bool(0.7) {
                    let us = draw_us(&mut rng);
                    ranks[m].push(Phase::app(cycles_for(&us, &p.ref_freq_ghz)?));
                    total += 1;
                }
                let work = if rng.random_bool(0.5) { Rat::zero() } else { draw_us(&mut rng) / rat(8) };
                ranks[m].push(Phase::sync(cycles_for(&work, &p.ref_freq_ghz)?, id.clone()));
                total += 1;
            }
        } else {
            if total + 1 > budget {
                break;
            }
            let r = rng.random_range(0..p.n_ranks);
            let us = draw_us(&mut rng);
            let phase = if roll < 7 {
                Phase::app(cycles_for(&us, &p.ref_freq_ghz)?)
            } else {
                let wait_ns = (us * rat(1000)).to_integer() as u64;
                let work_ns = if rng.random_bool(0.5) { 0 } else { rng.random_range(0..=wait_ns) };
                let work = Rat::new(work_ns as i128, 1000);
                Phase::wait(cycles_for(&work, &p.ref_freq_ghz)?, Micros::from_nanos(wait_ns))
            };
            ranks[r].push(phase);
            total += 1;
        }
    }
    for phases in ranks.iter_mut().filter(|ph| ph.is_empty()) {
        let us = draw_us(&mut rng);
        phases.push(Phase::app(cycles_for(&us, &p.ref_freq_ghz)?));
    }

    let mut w = Workload::from_phases(ranks);
    let meta = &mut w.meta;
    meta.insert("generator".into(), "random".into());
    meta.insert("n_ranks".into(), p.n_ranks.to_string());
    meta.insert("max_phases".into(), p.max_phases.to_string());
    meta.insert("max_phase_us".into(), p.max_phase_us.to_string());
    meta.insert("short_us".into(), p.short_us.to_string());
    meta.insert("seed".into(), p.seed.to_string());
    meta.insert("ref_freq_ghz".into(), fmt_compact(&p.ref_freq_ghz));
    Ok(w)
}
