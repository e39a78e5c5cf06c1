//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion, then asserts the outcome.
//!
//! Lines go straight to stdout so they show up without `--nocapture`.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

use slackdown_core::metrics::{phase_spans, quadrant_analysis, Region};
use slackdown_core::rational::{fmt_decimal, rat, ratio, to_f64};
use slackdown_core::{
    compare, gen_balanced, gen_random, gen_unbalanced, replay_oracle, simulate, BalancedParams, FreqRequest,
    HwConfig, HwModel, LoadMetric, Micros, Phase, PhaseKind, PolicyKind, PolicySpec, PowerModel, RandomParams, Rat,
    SimResult, UnbalancedParams, Workload,
};

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn report(n: u32, name: &str, v: Verdict) {
    let line = format!(
        "criterion {n} ({name}): {} - {}\n",
        if v.pass { "PASS" } else { "FAIL" },
        v.detail
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(v.pass, "criterion {n} failed: {}", v.detail);
}

fn abs(r: Rat) -> Rat {
    if r < rat(0) {
        -r
    } else {
        r
    }
}

fn pct(r: &Rat) -> String {
    fmt_decimal(r, 4)
}

fn hw_with_period(period: i128) -> HwConfig {
    let mut hw = HwConfig::default();
    hw.sample_period_us = rat(period);
    hw
}

fn spec(kind: PolicyKind, params: &[(&str, &str)]) -> PolicySpec {
    let mut s = PolicySpec::new(kind);
    for (k, v) in params {
        s = s.with(k, v).unwrap();
    }
    s
}

fn table_power(uncore: &str) -> PowerModel {
    let mut pm = PowerModel::default();
    pm.set("table", "1.2:4,2.4:10").unwrap();
    pm.set("uncore_w", uncore).unwrap();
    pm
}

// ---------------------------------------------------------------- 1

#[derive(Clone, Copy)]
enum Req {
    Freq(Option<usize>),
    Duty(usize),
}

/// (core, time in quarter microseconds, request)
type Write = (usize, i128, Req);

fn freq_req(cfg: &HwConfig, level: Option<usize>) -> FreqRequest {
    level.map_or(FreqRequest::Turbo, |i| FreqRequest::Level(cfg.freq_levels_ghz[i]))
}

/// Steps 1 us at a time; at every grid tick the register contents become effective.
fn replay_by_microsecond(cfg: &HwConfig, n: usize, writes: &[Write], horizon: i128) -> Vec<Vec<(Rat, Rat)>> {
    let period = cfg.sample_period_us.to_integer();
    let grant = cfg.turbo_arbitrate(n);
    let mut reg: Vec<(FreqRequest, Rat)> = vec![(FreqRequest::Turbo, rat(1)); n];
    let mut out = Vec::new();
    let mut next = 0;
    for t in 0..=horizon {
        if t % period == 0 {
            out.push(
                reg.iter()
                    .map(|(f, d)| {
                        let f = match f {
                            FreqRequest::Level(ghz) => *ghz,
                            FreqRequest::Turbo => grant,
                        };
                        (f, *d)
                    })
                    .collect(),
            );
        }
        while next < writes.len() && writes[next].1 < (t + 1) * 4 {
            let (c, _, r) = writes[next];
            match r {
                Req::Freq(level) => reg[c].0 = freq_req(cfg, level),
                Req::Duty(i) => reg[c].1 = cfg.duty_levels[i],
            }
            next += 1;
        }
    }
    out
}

fn replay_by_model(cfg: &HwConfig, n: usize, writes: &[Write], horizon: i128) -> Vec<Vec<(Rat, Rat)>> {
    let mut hw = HwModel::new(cfg.clone(), n, FreqRequest::Turbo).unwrap();
    let mut out = Vec::new();
    let mut next = 0;
    let mut g = rat(0);
    while g <= rat(horizon) {
        while next < writes.len() && ratio(writes[next].1, 4) < g {
            let (c, t, r) = writes[next];
            let t = ratio(t, 4);
            match r {
                Req::Freq(level) => hw.write_freq_request(c, freq_req(cfg, level), t).unwrap(),
                Req::Duty(i) => hw.write_duty_request(c, cfg.duty_levels[i], t).unwrap(),
            }
            next += 1;
        }
        if g > rat(0) {
            hw.sample(&g);
        }
        out.push((0..n).map(|c| (hw.core(c).freq_effective(), hw.core(c).duty_effective())).collect());
        g += cfg.sample_period_us;
    }
    out
}

#[test]
fn criterion_1_latching() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut mismatches = 0;
    let horizon = 4000;
    for _ in 0..1000 {
        let period = [100, 250, 500][rng.random_range(0..3)];
        let cfg = hw_with_period(period);
        let n = rng.random_range(1..=4);
        let mut writes: Vec<Write> = (0..rng.random_range(0..60))
            .map(|_| {
                let core = rng.random_range(0..n);
                // Bias some writes onto grid ticks and their neighbours.
                let t = if rng.random_bool(0.3) {
                    rng.random_range(0..=horizon / period) * period * 4 + rng.random_range(-1..=1)
                } else {
                    rng.random_range(0..horizon * 4)
                }
                .max(0);
                let req = if rng.random_bool(0.7) {
                    Req::Freq(if rng.random_bool(0.2) {
                        None
                    } else {
                        Some(rng.random_range(0..cfg.freq_levels_ghz.len()))
                    })
                } else {
                    Req::Duty(rng.random_range(0..cfg.duty_levels.len()))
                };
                (core, t, req)
            })
            .collect();
        writes.sort_by_key(|w| w.1);
        if replay_by_model(&cfg, n, &writes, horizon) != replay_by_microsecond(&cfg, n, &writes, horizon) {
            mismatches += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        1,
        "latching",
        verdict(
            mismatches == 0 && secs < 10.0,
            format!("{mismatches} mismatching sequences of 1000, {secs:.2} s (limit 10 s)"),
        ),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_engine_vs_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = Vec::new();
    let mut runs = 0;
    for case in 0..50 {
        let n = rng.random_range(2..=8);
        let w = gen_random(&RandomParams {
            n_ranks: n,
            max_phases: rng.random_range(n..=200),
            max_phase_us: 1000,
            short_us: 400,
            seed: rng.random(),
            ref_freq_ghz: ratio(12, 5),
        })
        .unwrap();
        let hw = hw_with_period([250, 500][rng.random_range(0..2)]);
        let timeout = ["1", "50", "200", "500", "1000"][rng.random_range(0..5)];
        let spin = ["0", "100", "5000"][rng.random_range(0..3)];
        for kind in PolicyKind::ALL {
            let s = spec(kind, &[("timeout_us", timeout), ("spin_count", spin)]);
            let a = simulate(&w, &s, &hw).unwrap();
            let b = replay_oracle(&w, &s, &hw, &rat(1)).unwrap();
            runs += 1;
            let tts_ok = abs(a.tts_us - b.tts_us) <= rat(1);
            let cycles_ok = a.ranks.iter().zip(&b.ranks).all(|(x, y)| x.executed_cycles == y.executed_cycles);
            let writes_ok = a.writes == b.writes;
            if !(tts_ok && cycles_ok && writes_ok) {
                failures.push(format!("case {case} {kind}"));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    report(
        2,
        "engine vs oracle",
        verdict(
            failures.is_empty() && secs < 120.0,
            format!("{runs} runs, {} disagreements {:?}, {secs:.1} s (limit 120 s)", failures.len(), failures),
        ),
    );
}

// ---------------------------------------------------------------- 3

#[test]
fn criterion_3_fine_grained() {
    let w = gen_balanced(&BalancedParams {
        n_ranks: 8,
        n_iters: 200,
        app_us: rat(200),
        mpi_us: rat(40),
        mpi_work_fraction: ratio(1, 5),
        jitter_pct: rat(10),
        seed: 3,
        ref_freq_ghz: ratio(12, 5),
    })
    .unwrap();
    let hw = HwConfig::default();
    let pm = PowerModel::default();
    let base = simulate(&w, &spec(PolicyKind::BusyWait, &[]), &hw).unwrap();
    let longest = phase_spans_max_mpi(&base);
    let cd = simulate(&w, &spec(PolicyKind::CountdownDvfs, &[("timeout_us", "500")]), &hw).unwrap();
    let naive = simulate(&w, &spec(PolicyKind::NaiveDvfs, &[]), &hw).unwrap();
    let cd_rep = compare(&base, &cd, &pm, LoadMetric::ActiveTime).unwrap();
    let naive_rep = compare(&base, &naive, &pm, LoadMetric::ActiveTime).unwrap();
    let pass = longest < rat(500)
        && cd_rep.overhead_pct == rat(0)
        && cd.writes.is_empty()
        && naive_rep.overhead_pct > rat(0);
    report(
        3,
        "fine-grained slack",
        verdict(
            pass,
            format!(
                "longest MPI phase {} us; countdown overhead {}% with {} writes; naive overhead {}%",
                fmt_decimal(&longest, 3),
                pct(&cd_rep.overhead_pct),
                cd.writes.len(),
                pct(&naive_rep.overhead_pct)
            ),
        ),
    );
}

fn phase_spans_max_mpi(r: &SimResult) -> Rat {
    r.ranks
        .iter()
        .flat_map(|t| phase_spans(&t.segments))
        .filter(|s| s.kind == PhaseKind::Mpi)
        .map(|s| s.duration_us)
        .max()
        .unwrap_or_default()
}

// ---------------------------------------------------------------- 4

/// Alternates fine-grained iterations (random application time, zero-work
/// barrier) with coarse ones where a rotating rank computes much longer.
fn mixed_workload(seed: u64) -> Workload {
    let n = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ranks: Vec<Vec<Phase>> = vec![Vec::new(); n];
    let cycles = |us: u64| us * 2400;
    let mut id = 0;
    for block in 0..24 {
        for _ in 0..7 {
            for r in ranks.iter_mut() {
                r.push(Phase::app(cycles(rng.random_range(100..=600))));
                r.push(Phase::sync(0, format!("b{id}")));
            }
            id += 1;
        }
        let diag = block % n;
        for (k, r) in ranks.iter_mut().enumerate() {
            r.push(Phase::app(cycles(if k == diag { 2000 } else { 300 })));
            r.push(Phase::sync(0, format!("b{id}")));
        }
        id += 1;
    }
    Workload::from_phases(ranks)
}

fn long_mpi_share(r: &SimResult, threshold: &Rat) -> Rat {
    let (mut long, mut all) = (rat(0), rat(0));
    for s in r.ranks.iter().flat_map(|t| phase_spans(&t.segments)) {
        if s.kind == PhaseKind::Mpi {
            all += s.duration_us;
            if s.duration_us > *threshold {
                long += s.duration_us;
            }
        }
    }
    long * rat(100) / all
}

/// Smallest swept timeout from which overhead stays within 0.5 points of
/// its value at the largest timeout.
fn knee(points: &[(i128, Rat, Rat)]) -> i128 {
    let last = points.last().unwrap().1;
    let mut knee = points.last().unwrap().0;
    for (t, ov, _) in points.iter().rev() {
        if abs(*ov - last) <= ratio(1, 2) {
            knee = *t;
        } else {
            break;
        }
    }
    knee
}

fn timeout_sweep(w: &Workload, period: i128, timeouts: &[i128]) -> Vec<(i128, Rat, Rat)> {
    let hw = hw_with_period(period);
    let pm = PowerModel::default();
    let base = simulate(w, &spec(PolicyKind::BusyWait, &[]), &hw).unwrap();
    timeouts
        .iter()
        .map(|t| {
            let s = spec(PolicyKind::CountdownDvfs, &[("timeout_us", &t.to_string())]);
            let c = simulate(w, &s, &hw).unwrap();
            let rep = compare(&base, &c, &pm, LoadMetric::ActiveTime).unwrap();
            (*t, rep.overhead_pct, rep.energy_saving_pct)
        })
        .collect()
}

#[test]
fn criterion_4_timeout_sweep() {
    let w = mixed_workload(4);
    let base = simulate(&w, &spec(PolicyKind::BusyWait, &[]), &HwConfig::default()).unwrap();
    let share = long_mpi_share(&base, &rat(500));
    let timeouts = [10, 50, 100, 250, 500, 1000, 5000];
    let at500 = timeout_sweep(&w, 500, &timeouts);
    let at250 = timeout_sweep(&w, 250, &timeouts);

    let overhead_ok = at500
        .iter()
        .enumerate()
        .all(|(i, a)| at500[i + 1..].iter().all(|b| b.1 <= a.1 + ratio(1, 2)));
    let tail: Vec<_> = at500.iter().filter(|p| p.0 >= 500).collect();
    let saving_ok = tail.windows(2).all(|p| p[1].2 <= p[0].2);
    let (k500, k250) = (knee(&at500), knee(&at250));
    let curve = |pts: &[(i128, Rat, Rat)]| {
        pts.iter()
            .map(|(t, o, e)| format!("{t}:{}/{}", fmt_decimal(o, 2), fmt_decimal(e, 2)))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let pass = overhead_ok && saving_ok && k500 == 500 && k250 == 250;
    report(
        4,
        "timeout sweep",
        verdict(
            pass,
            format!(
                "long-phase MPI share {}%; overhead non-increasing: {overhead_ok}; saving non-increasing from 500: {saving_ok}; \
                 knee {k500} us at P=500 (want 500), {k250} us at P=250 (want 250); \
                 timeout:overhead/saving P=500 [{}] P=250 [{}]",
                fmt_decimal(&share, 1),
                curve(&at500),
                curve(&at250)
            ),
        ),
    );
}

// ---------------------------------------------------------------- 5

#[test]
fn criterion_5_closed_form() {
    let (n, k) = (4i128, 10i128);
    let w = gen_unbalanced(&UnbalancedParams {
        n_ranks: n as usize,
        n_iters: k as usize,
        diag_rank: 0,
        diag_app_us: rat(3000),
        other_app_us: rat(1000),
        seed: 0,
        ref_freq_ghz: ratio(12, 5),
    })
    .unwrap();
    let hw = HwConfig::default();
    let pm = table_power("0");
    let high = [("high_freq", "2.4")];
    let base = simulate(&w, &spec(PolicyKind::BusyWait, &high), &hw).unwrap();
    let cand = simulate(
        &w,
        &spec(PolicyKind::CountdownDvfs, &[("high_freq", "2.4"), ("low_freq_ghz", "1.2"), ("timeout_us", "500")]),
        &hw,
    )
    .unwrap();
    let rep = compare(&base, &cand, &pm, LoadMetric::ActiveTime).unwrap();
    // First iteration: 1000 us at low. Later ones: 500 us of application
    // work plus the last 1000 us of the wait at low.
    let expected = rat(100) * rat(n - 1) * (rat(9000 * k) - rat(3000)) / rat(30000 * n * k);
    let rel = abs((rep.energy_saving_pct - expected) / expected);
    let pass = rep.energy_saving_pct > rat(0) && rep.overhead_pct <= ratio(1, 2) && rel <= ratio(1, 1_000_000_000);
    report(
        5,
        "closed-form saving",
        verdict(
            pass,
            format!(
                "saving {}% vs closed form {}% (relative error {:e}), overhead {}%",
                pct(&rep.energy_saving_pct),
                pct(&expected),
                to_f64(&rel),
                pct(&rep.overhead_pct)
            ),
        ),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_turbo() {
    let w = gen_unbalanced(&UnbalancedParams {
        n_ranks: 4,
        n_iters: 5,
        diag_rank: 0,
        diag_app_us: rat(3000),
        other_app_us: rat(1000),
        seed: 0,
        ref_freq_ghz: ratio(12, 5),
    })
    .unwrap();
    let hw = HwConfig::default();
    let busy = simulate(&w, &spec(PolicyKind::BusyWait, &[]), &hw).unwrap();
    let wait = simulate(&w, &spec(PolicyKind::WaitMode, &[]), &hw).unwrap();
    let lone = hw.turbo_arbitrate(1);
    // While every other rank sleeps, the diagonal rank must run at the lone-core grant.
    let others_asleep = |t: &Rat| (1..4).all(|r| wait.segment_at(r, t).is_some_and(|s| !s.is_awake()));
    let turbo_seen = wait.ranks[0]
        .segments
        .iter()
        .filter(|s| s.phase_kind == PhaseKind::App && others_asleep(&((s.t0_us + s.t1_us) / rat(2))))
        .all(|s| s.freq_ghz == lone);
    let turbo_time: Rat = wait.ranks[0]
        .segments
        .iter()
        .filter(|s| s.freq_ghz == lone)
        .map(|s| s.duration())
        .sum();
    let pass = wait.tts_us < busy.tts_us && turbo_seen && turbo_time > rat(0);
    report(
        6,
        "turbo under wait mode",
        verdict(
            pass,
            format!(
                "wait_mode TTS {} us < busy_wait {} us; diagonal rank at {} GHz for {} us while others sleep",
                fmt_decimal(&wait.tts_us, 3),
                fmt_decimal(&busy.tts_us, 3),
                fmt_decimal(&lone, 1),
                fmt_decimal(&turbo_time, 3)
            ),
        ),
    );
}

// ---------------------------------------------------------------- 7

fn wait_pair(app_us: u64, mpi_us: u64) -> [Phase; 2] {
    [Phase::app(app_us * 2400), Phase::wait(0, Micros::from_micros(mpi_us))]
}

fn pairs(list: &[(u64, u64)]) -> Vec<Phase> {
    list.iter().flat_map(|(a, m)| wait_pair(*a, *m)).collect()
}

#[test]
fn criterion_7_quadrants() {
    let hw = HwConfig::default();
    let busy = spec(PolicyKind::BusyWait, &[("high_freq", "2.4")]);
    let naive = spec(PolicyKind::NaiveDvfs, &[("high_freq", "2.4"), ("low_freq_ghz", "1.2")]);
    let theta = rat(500);
    let high = ratio(12, 5);
    let low = ratio(6, 5);

    // Rank 0: I, II, III, IV, III; rank 1: IV, IV, I.
    let counted = Workload::from_phases(vec![
        pairs(&[(1000, 1000), (1000, 100), (100, 1000), (100, 100), (200, 900)]),
        pairs(&[(50, 50), (400, 500), (600, 501)]),
    ]);
    let counts = quadrant_analysis(&simulate(&counted, &busy, &hw).unwrap(), &theta).all.counts();
    let counts_ok = counts == [2, 1, 2, 3];

    let region_i = Workload::from_phases(vec![pairs(&[(1500, 1500); 10])]);
    let qi = quadrant_analysis(&simulate(&region_i, &naive, &hw).unwrap(), &theta);
    let stats_i = qi.all.get(Region::I);
    let mpi_freq = stats_i.mean_mpi_freq().unwrap_or_default();

    let region_iii = Workload::from_phases(vec![pairs(&[(100, 1500); 10])]);
    let qiii = quadrant_analysis(&simulate(&region_iii, &naive, &hw).unwrap(), &theta);
    let stats_iii = qiii.all.get(Region::III);
    let app_freq = stats_iii.mean_app_freq().unwrap_or_default();

    let pass = counts_ok
        && stats_i.count > 0
        && mpi_freq == low
        && stats_iii.count > 0
        && app_freq < high;
    report(
        7,
        "quadrant analysis",
        verdict(
            pass,
            format!(
                "counts I..IV {counts:?} (want [2, 1, 2, 3]); naive_dvfs region I mean MPI freq {} GHz (want {}); \
                 region III mean app freq {} GHz (want < {})",
                fmt_decimal(&mpi_freq, 4),
                fmt_decimal(&low, 1),
                fmt_decimal(&app_freq, 4),
                fmt_decimal(&high, 1)
            ),
        ),
    );
}

// ---------------------------------------------------------------- 8

fn run_bin(dir: &Path, args: &[String]) -> (i32, Vec<u8>, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_slackdown"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs");
    (out.status.code().unwrap_or(-1), out.stdout, out.stderr)
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut files = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                files.insert(rel, fs::read(&p).unwrap());
            }
        }
    }
    files
}

fn random_session(rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    let seed = rng.random_range(0..1000u64).to_string();
    let ranks = rng.random_range(2..=6).to_string();
    let mut generate = s(&["--out", "w", "--seed", &seed, "generate"]);
    match rng.random_range(0..3) {
        0 => generate.extend(s(&[
            "balanced", "--ranks", &ranks, "--iters", "40", "--app-us", "300", "--mpi-us", "120", "--jitter-pct", "20",
        ])),
        1 => generate.extend(s(&[
            "unbalanced", "--ranks", &ranks, "--iters", "8", "--diag-app-us", "3000", "--other-app-us", "900",
        ])),
        _ => generate.extend(s(&["random", "--ranks", &ranks, "--max-phases", "120", "--max-phase-us", "1500"])),
    }
    let policy = PolicyKind::ALL[rng.random_range(0..7)].as_str();
    let timeout = rng.random_range(1..2000).to_string();
    let spin = rng.random_range(0..20000).to_string();
    let period = ["250", "500"][rng.random_range(0..2)];
    let run = |out: &str| {
        s(&[
            "--out", out, "--workload", "w/workload.json", "--policy", policy,
            "--param", &format!("timeout_us={timeout}"), "--param", &format!("spin_count={spin}"),
            "--hw", &format!("sample_period_us={period}"),
        ])
    };
    let mut simulate = s(&["simulate"]);
    simulate.extend(run("sim"));
    let mut sweep = s(&["sweep"]);
    sweep.extend(run("sweep"));
    sweep.extend(s(&["--timeouts", "10,250,500,1000,5000"]));
    let threshold = ["100", "500", "1000"][rng.random_range(0..3)];
    let analyze = s(&["--out", "an", "analyze", "--segments", "sim/segments.csv", "--threshold-us", threshold]);
    vec![generate, simulate, sweep, analyze]
}

#[test]
fn criterion_8_determinism() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut problems = Vec::new();
    let mut commands = 0;
    for config in 0..10 {
        let session = random_session(&mut rng);
        let dirs = [TempDir::new().unwrap(), TempDir::new().unwrap()];
        for args in &session {
            let a = run_bin(dirs[0].path(), args);
            let b = run_bin(dirs[1].path(), args);
            commands += 1;
            if a.0 != 0 {
                problems.push(format!("config {config}: {args:?} exited {}: {}", a.0, String::from_utf8_lossy(&a.2)));
            }
            if a != b {
                problems.push(format!("config {config}: console output differs for {args:?}"));
            }
        }
        if tree(dirs[0].path()) != tree(dirs[1].path()) {
            problems.push(format!("config {config}: output files differ"));
        }
    }
    report(
        8,
        "determinism",
        verdict(
            problems.is_empty(),
            format!("10 configs, {commands} commands run twice each; {} problems {problems:?}", problems.len()),
        ),
    );
}

// ---------------------------------------------------------------- 9

fn longest_mpi_us(w: &Workload, hw: &HwConfig) -> Rat {
    phase_spans_max_mpi(&simulate(w, &spec(PolicyKind::BusyWait, &[]), hw).unwrap())
}

#[test]
fn criterion_9_degenerations() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut workloads: Vec<Workload> = (0..6)
        .map(|_| {
            gen_random(&RandomParams {
                n_ranks: rng.random_range(2..=6),
                max_phases: 150,
                max_phase_us: 2000,
                short_us: 500,
                seed: rng.random(),
                ref_freq_ghz: ratio(12, 5),
            })
            .unwrap()
        })
        .collect();
    workloads.push(mixed_workload(9));
    let mut failures = Vec::new();
    for (i, w) in workloads.iter().enumerate() {
        for period in [250, 500] {
            let hw = hw_with_period(period);
            let wait = simulate(w, &spec(PolicyKind::WaitMode, &[]), &hw).unwrap();
            let spin0 = simulate(w, &spec(PolicyKind::SpinWait, &[("spin_count", "0")]), &hw).unwrap();
            if wait != spin0 {
                failures.push(format!("workload {i} P={period}: spin_wait(0) != wait_mode"));
            }
            let longest = longest_mpi_us(w, &hw).ceil().to_integer().max(1).to_string();
            let busy = simulate(w, &spec(PolicyKind::BusyWait, &[]), &hw).unwrap();
            for kind in [PolicyKind::CountdownDvfs, PolicyKind::CountdownThrottle] {
                let cd = simulate(w, &spec(kind, &[("timeout_us", &longest)]), &hw).unwrap();
                if cd != busy {
                    failures.push(format!("workload {i} P={period}: {kind} at timeout {longest} != busy_wait"));
                }
            }
        }
    }
    let checked = workloads.len() * 2;
    report(
        9,
        "degenerations",
        verdict(
            failures.is_empty(),
            format!("{checked} workload/period pairs; {} mismatches {failures:?}", failures.len()),
        ),
    );
}
