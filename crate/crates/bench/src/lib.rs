//! Workloads shared by the benchmarks.

use slackdown_core::rational::{rat, ratio};
use slackdown_core::{gen_balanced, gen_random, gen_unbalanced, BalancedParams, RandomParams, UnbalancedParams, Workload};

/// Named workloads of increasing irregularity.
pub fn workloads() -> Vec<(&'static str, Workload)> {
    let balanced = gen_balanced(&BalancedParams {
        n_ranks: 16,
        n_iters: 200,
        app_us: rat(200),
        mpi_us: rat(50),
        mpi_work_fraction: ratio(1, 5),
        jitter_pct: rat(10),
        seed: 1,
        ref_freq_ghz: ratio(12, 5),
    })
    .expect("valid balanced parameters");
    let unbalanced = gen_unbalanced(&UnbalancedParams {
        n_ranks: 16,
        n_iters: 100,
        diag_rank: 0,
        diag_app_us: rat(3000),
        other_app_us: rat(1000),
        seed: 1,
        ref_freq_ghz: ratio(12, 5),
    })
    .expect("valid unbalanced parameters");
    let random = gen_random(&RandomParams {
        n_ranks: 8,
        max_phases: 2000,
        max_phase_us: 2000,
        short_us: 500,
        seed: 1,
        ref_freq_ghz: ratio(12, 5),
    })
    .expect("valid random parameters");
    vec![("balanced", balanced), ("unbalanced", unbalanced), ("random", random)]
}
