use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::{Micros, MpiCall, Phase, RankTrace, TraceError, Workload};

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWorkload {
    #[serde(default)]
    meta: BTreeMap<String, String>,
    ranks: Vec<Vec<RawPhase>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPhase {
    kind: String,
    cycles: u64,
    #[serde(default)]
    sync: Option<String>,
    #[serde(default)]
    extra_wait_us: Option<serde_json::Number>,
    #[serde(default)]
    call: Option<String>,
}

pub fn load_workload(path: impl AsRef<Path>) -> Result<Workload, TraceError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text)
}

pub fn save_workload(workload: &Workload, path: impl AsRef<Path>) -> Result<(), TraceError> {
    let path = path.as_ref();
    fs::write(path, to_json(workload)).map_err(|source| TraceError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub(super) fn from_json(text: &str) -> Result<Workload, TraceError> {
    let raw: RawWorkload = serde_json::from_str(text).map_err(|e| TraceError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    if raw.ranks.is_empty() {
        return Err(TraceError::NoRanks);
    }
    let mut ranks = Vec::with_capacity(raw.ranks.len());
    for (rank, raw_phases) in raw.ranks.into_iter().enumerate() {
        let mut phases = Vec::with_capacity(raw_phases.len());
        for (idx, p) in raw_phases.into_iter().enumerate() {
            phases.push(convert_phase(rank, idx, p)?);
        }
        ranks.push(RankTrace { rank_id: rank, phases });
    }
    Ok(Workload { ranks, meta: raw.meta })
}

fn convert_phase(rank: usize, phase: usize, p: RawPhase) -> Result<Phase, TraceError> {
    let field = |msg: String| TraceError::Field { rank, phase, msg };
    match p.kind.as_str() {
        "app" => {
            for (present, name) in [
                (p.sync.is_some(), "sync"),
                (p.extra_wait_us.is_some(), "extra_wait_us"),
                (p.call.is_some(), "call"),
            ] {
                if present {
                    return Err(field(format!("app phase must not carry `{name}`")));
                }
            }
            Ok(Phase::App { cycles: p.cycles })
        }
        "mpi" => {
            let extra_wait = match &p.extra_wait_us {
                None => Micros::ZERO,
                Some(n) => parse_micros(n).map_err(field)?,
            };
            Ok(Phase::Mpi(MpiCall {
                cycles: p.cycles,
                sync: p.sync,
                extra_wait,
                call: p.call,
            }))
        }
        other => Err(field(format!("unknown phase kind `{other}` (expected \"app\" or \"mpi\")"))),
    }
}

fn parse_micros(n: &serde_json::Number) -> Result<Micros, String> {
    if let Some(us) = n.as_u64() {
        return us
            .checked_mul(1000)
            .map(Micros::from_nanos)
            .ok_or_else(|| format!("extra_wait_us {n} out of range"));
    }
    let v = n.as_f64().ok_or_else(|| format!("extra_wait_us {n} is not a number"))?;
    if !v.is_finite() || v < 0.0 {
        return Err(format!("extra_wait_us must be non-negative, got {n}"));
    }
    let scaled = v * 1000.0;
    let rounded = scaled.round();
    if (scaled - rounded).abs() > 1e-6 * rounded.max(1.0) || rounded > u64::MAX as f64 / 2.0 {
        return Err(format!("extra_wait_us {n} has more than 3 fractional digits"));
    }
    Ok(Micros::from_nanos(rounded as u64))
}

fn fmt_micros(m: Micros) -> String {
    let (int, frac) = (m.nanos() / 1000, m.nanos() % 1000);
    if frac == 0 {
        int.to_string()
    } else {
        let f = format!("{frac:03}");
        format!("{int}.{}", f.trim_end_matches('0'))
    }
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("string encoding is infallible")
}

pub(super) fn to_json(w: &Workload) -> String {
    let mut out = String::from("{\n  \"meta\": {");
    for (i, (k, v)) in w.meta.iter().enumerate() {
        let sep = if i == 0 { "" } else { "," };
        let _ = write!(out, "{sep}\n    {}: {}", json_str(k), json_str(v));
    }
    if !w.meta.is_empty() {
        out.push_str("\n  ");
    }
    out.push_str("},\n  \"ranks\": [");
    for (r, rank) in w.ranks.iter().enumerate() {
        out.push_str(if r == 0 { "\n    [" } else { ",\n    [" });
        for (i, phase) in rank.phases.iter().enumerate() {
            out.push_str(if i == 0 { "\n      " } else { ",\n      " });
            match phase {
                Phase::App { cycles } => {
                    let _ = write!(out, "{{\"kind\": \"app\", \"cycles\": {cycles}}}");
                }
                Phase::Mpi(call) => {
                    let _ = write!(out, "{{\"kind\": \"mpi\", \"cycles\": {}", call.cycles);
                    if let Some(s) = &call.sync {
                        let _ = write!(out, ", \"sync\": {}", json_str(s));
                    }
                    if !call.extra_wait.is_zero() {
                        let _ = write!(out, ", \"extra_wait_us\": {}", fmt_micros(call.extra_wait));
                    }
                    if let Some(c) = &call.call {
                        let _ = write!(out, ", \"call\": {}", json_str(c));
                    }
                    out.push('}');
                }
            }
        }
        if !rank.phases.is_empty() {
            out.push_str("\n    ");
        }
        out.push(']');
    }
    if !w.ranks.is_empty() {
        out.push_str("\n  ");
    }
    out.push_str("]\n}\n");
    out
}
