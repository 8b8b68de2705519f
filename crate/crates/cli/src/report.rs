//! Machine-readable reports. One schema covers both verify and bench runs;
//! the published copy lives at `schemas/report.schema.json` in the repo root.

use serde::Serialize;

use pkv2_core::hkr::{EquivalenceReport, Tolerance};
use pkv2_core::pks::{BranchSpec, PksConfig};

#[derive(Debug, Clone, Serialize)]
pub struct ConfigDescriptor {
    pub kind: &'static str,
    pub channels: usize,
    pub k_s: usize,
    pub k_max: usize,
    pub branches: Vec<BranchSpec>,
}

impl ConfigDescriptor {
    pub fn from_pks(cfg: &PksConfig) -> Self {
        Self {
            kind: "pks",
            channels: cfg.channels,
            k_s: cfg.k_s,
            k_max: cfg.k_max(),
            branches: cfg.branches.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct ToleranceOut {
    pub abs: f32,
    pub rel: f32,
}

impl From<Tolerance> for ToleranceOut {
    fn from(t: Tolerance) -> Self {
        Self { abs: t.abs, rel: t.rel }
    }
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct EquivalenceOut {
    pub max_abs: f32,
    pub max_rel: f32,
    pub pass: bool,
}

impl From<EquivalenceReport> for EquivalenceOut {
    fn from(r: EquivalenceReport) -> Self {
        Self {
            max_abs: r.max_abs,
            max_rel: r.max_rel,
            pass: r.pass,
        }
    }
}

/// Conv launches inside the gate per forward, per path.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Invocations {
    pub train: usize,
    pub fused: usize,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct PathTiming {
    pub median_ns: u64,
    pub p10_ns: u64,
    pub p90_ns: u64,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct Timing {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathTiming>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fused: Option<PathTiming>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub mode: &'static str,
    pub config: ConfigDescriptor,
    pub seed: u64,
    pub shape: [usize; 4],
    pub trials: usize,
    pub tolerance: ToleranceOut,
    pub invocations: Invocations,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub equivalence: Option<EquivalenceOut>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub speedup: Option<f64>,
}

impl Report {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialization");
        s.push('\n');
        s
    }
}

/// Median and tail quantiles of raw per-iteration laps.
pub fn path_timing(laps_ns: &mut [u64]) -> PathTiming {
    laps_ns.sort_unstable();
    let q = |p: f64| laps_ns[((laps_ns.len() - 1) as f64 * p).round() as usize];
    PathTiming {
        median_ns: q(0.5),
        p10_ns: q(0.1),
        p90_ns: q(0.9),
    }
}
