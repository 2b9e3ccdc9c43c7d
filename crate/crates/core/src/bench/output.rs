//! CSV, JSON and SVG output of an experiment.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::bounds::TheoreticalBounds;
use super::run::{fit_regret_slope, Aggregate, ExperimentResults};
use crate::market_sim::{EpisodeResult, Estimate, MechanismComparison};
use crate::policies::{BenchmarkMode, PolicyKind};
use crate::shock_dist::ShockConstants;

pub const EPISODE_HEADER: [&str; 12] =
    ["t", "strategy", "p_f", "p_a", "p_b", "d_f", "d_a", "d_b", "exp_regret", "strategy_regret", "n_focal", "good_event"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSummary {
    pub name: String,
    pub benchmark_mode: BenchmarkMode,
    pub q_star: Option<Estimate>,
    pub mechanisms: MechanismComparison,
    pub constants: ShockConstants,
    pub policies: Vec<PolicySummary>,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySummary {
    pub policy: PolicyKind,
    /// Log-log slope of mean regret, when there are at least 3 horizons.
    pub slope: Option<f64>,
    pub good_event_frequency: f64,
    pub switch_time_histogram: Vec<HistogramBin>,
    pub bound_checks: Vec<BoundCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramBin {
    pub horizon: usize,
    pub lo: usize,
    pub hi: usize,
    pub count: usize,
}

/// Soft comparison of mean regret with the theoretical bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundCheck {
    pub horizon: usize,
    pub mean_regret: f64,
    pub bound: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Failure {
    pub policy: PolicyKind,
    pub horizon: usize,
    pub seed: u64,
    pub error: String,
}

/// Parses a summary and rejects unknown or missing fields.
pub fn validate_summary(json: &str) -> Result<RunSummary, serde_json::Error> {
    serde_json::from_str(json)
}

const HISTOGRAM_BINS: usize = 10;

pub fn summarize(results: &ExperimentResults) -> RunSummary {
    let mut policies: Vec<PolicyKind> = results.aggregates.iter().map(|a| a.policy).collect();
    policies.dedup();
    let policies = policies
        .into_iter()
        .map(|policy| {
            let aggs: Vec<&Aggregate> = results.aggregates.iter().filter(|a| a.policy == policy).collect();
            let series: Vec<(f64, f64)> = aggs.iter().map(|a| (a.horizon as f64, a.mean_regret)).collect();
            let runs: Vec<&EpisodeResult> = results.successes().filter(|r| r.policy == policy).collect();
            let good = runs.iter().filter(|r| r.summary.good_event_held).count() as f64 / runs.len().max(1) as f64;
            let mut histogram = Vec::new();
            for a in &aggs {
                let width = a.horizon.div_ceil(HISTOGRAM_BINS).max(1);
                let mut counts = [0usize; HISTOGRAM_BINS];
                for r in runs.iter().filter(|r| r.summary.horizon == a.horizon) {
                    if let Some(t) = r.summary.switch_time {
                        counts[((t - 1) / width).min(HISTOGRAM_BINS - 1)] += 1;
                    }
                }
                if counts.iter().any(|&c| c > 0) {
                    for (k, &count) in counts.iter().enumerate() {
                        histogram.push(HistogramBin { horizon: a.horizon, lo: k * width + 1, hi: ((k + 1) * width).min(a.horizon), count });
                    }
                }
            }
            let bound_checks = aggs
                .iter()
                .filter_map(|a| {
                    results.bounds.for_policy(policy, a.horizon).map(|bound| BoundCheck {
                        horizon: a.horizon,
                        mean_regret: a.mean_regret,
                        bound,
                        holds: a.mean_regret <= bound,
                    })
                })
                .collect();
            PolicySummary {
                policy,
                slope: fit_regret_slope(&series).ok(),
                good_event_frequency: good,
                switch_time_histogram: histogram,
                bound_checks,
            }
        })
        .collect();
    RunSummary {
        name: results.name.clone(),
        benchmark_mode: results.benchmark_mode,
        q_star: results.q_star,
        mechanisms: results.mechanisms,
        constants: results.bounds.constants,
        policies,
        failures: results
            .failures()
            .map(|(k, e)| Failure { policy: k.policy, horizon: k.horizon, seed: k.seed, error: e.clone() })
            .collect(),
    }
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn flag(v: Option<bool>) -> String {
    opt(v.map(u8::from))
}

pub fn write_episode_csv(path: &Path, result: &EpisodeResult) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(EPISODE_HEADER)?;
    for r in &result.records {
        w.write_record([
            r.t.to_string(),
            r.strategy.as_str().to_string(),
            opt(r.p_f),
            opt(r.p_a),
            opt(r.p_b),
            flag(r.d_f),
            flag(r.d_a),
            flag(r.d_b),
            r.exp_regret.to_string(),
            r.strategy_regret.to_string(),
            r.n_focal.to_string(),
            u8::from(r.good_event).to_string(),
        ])?;
    }
    w.flush()
}

/// The aggregate table as CSV bytes, exactly as written to disk.
pub fn aggregate_csv_bytes(aggregates: &[Aggregate]) -> io::Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for a in aggregates {
        w.serialize(a).map_err(io::Error::other)?;
    }
    w.into_inner().map_err(|e| io::Error::other(e.to_string()))
}

pub fn write_aggregate_csv(path: &Path, aggregates: &[Aggregate]) -> io::Result<()> {
    fs::write(path, aggregate_csv_bytes(aggregates)?)
}

/// Reads `(policy, horizon, mean_regret)` series back from an aggregate CSV.
pub fn read_aggregate_csv(path: &Path) -> io::Result<BTreeMap<PolicyKind, Vec<(f64, f64)>>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut out: BTreeMap<PolicyKind, Vec<(f64, f64)>> = BTreeMap::new();
    for row in r.deserialize::<Aggregate>() {
        let a = row.map_err(io::Error::other)?;
        out.entry(a.policy).or_default().push((a.horizon as f64, a.mean_regret));
    }
    Ok(out)
}

/// Writes all outputs under `out_dir` and returns the files written.
pub fn emit(results: &ExperimentResults, out_dir: &Path, plots: bool) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let mut manifest = Vec::new();
    let episodes_dir = out_dir.join("episodes");
    for r in results.successes().filter(|r| !r.records.is_empty()) {
        fs::create_dir_all(&episodes_dir)?;
        let p = episodes_dir.join(format!("{}_T{}_seed{}.csv", r.policy.as_str(), r.summary.horizon, r.summary.seed));
        write_episode_csv(&p, r)?;
        manifest.push(p);
    }
    let p = out_dir.join("aggregate.csv");
    write_aggregate_csv(&p, &results.aggregates)?;
    manifest.push(p);

    let summary = summarize(results);
    let p = out_dir.join("summary.json");
    fs::write(&p, serde_json::to_string_pretty(&summary).map_err(io::Error::other)?)?;
    manifest.push(p);

    if plots {
        let p = out_dir.join("regret.svg");
        fs::write(&p, regret_svg(results))?;
        manifest.push(p);
    }
    Ok(manifest)
}

const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Log-log plot of mean regret per policy, with bound curves dashed.
pub fn regret_svg(results: &ExperimentResults) -> String {
    let (w, h, m) = (720.0, 480.0, 60.0);
    let mut curves: Vec<(String, Vec<(f64, f64)>, bool)> = Vec::new();
    let mut policies: Vec<PolicyKind> = results.aggregates.iter().map(|a| a.policy).collect();
    policies.dedup();
    for &p in &policies {
        let pts: Vec<(f64, f64)> =
            results.series(p).into_iter().filter(|(_, r)| *r > 0.0).map(|(t, r)| (t as f64, r)).collect();
        let bound: Vec<(f64, f64)> = results
            .series(p)
            .iter()
            .filter_map(|(t, _)| bound_point(&results.bounds, p, *t))
            .collect();
        curves.push((p.as_str().to_string(), pts, false));
        if !bound.is_empty() {
            curves.push((format!("{} bound", p.as_str()), bound, true));
        }
    }
    let all: Vec<(f64, f64)> = curves.iter().flat_map(|c| c.1.iter().copied()).collect();
    let mut svg = format!(r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    svg.push_str(&format!(r#"<rect width="{w}" height="{h}" fill="white"/>"#));
    if all.is_empty() {
        svg.push_str(r#"<text x="20" y="30">no positive regret to plot</text></svg>"#);
        return svg;
    }
    let lx = |v: f64| v.log10();
    let (x0, x1) = bounds_of(all.iter().map(|p| lx(p.0)));
    let (y0, y1) = bounds_of(all.iter().map(|p| lx(p.1)));
    let sx = |v: f64| m + (lx(v) - x0) / (x1 - x0) * (w - 2.0 * m);
    let sy = |v: f64| h - m - (lx(v) - y0) / (y1 - y0) * (h - 2.0 * m);
    svg.push_str(&format!(
        r#"<line x1="{m}" y1="{b}" x2="{r}" y2="{b}" stroke="black"/><line x1="{m}" y1="{m}" x2="{m}" y2="{b}" stroke="black"/>"#,
        b = h - m,
        r = w - m
    ));
    svg.push_str(&format!(r#"<text x="{}" y="{}">horizon T (log)</text>"#, w / 2.0 - 40.0, h - 20.0));
    svg.push_str(&format!(r#"<text x="10" y="{}" transform="rotate(-90 10 {})">cumulative regret (log)</text>"#, h / 2.0, h / 2.0));
    for (k, (label, pts, dashed)) in curves.iter().enumerate() {
        let color = COLORS[(k / 2) % COLORS.len()];
        let path: Vec<String> = pts.iter().map(|&(t, r)| format!("{:.1},{:.1}", sx(t), sy(r))).collect();
        let dash = if *dashed { r#" stroke-dasharray="6 4""# } else { "" };
        svg.push_str(&format!(r#"<polyline fill="none" stroke="{color}" stroke-width="2"{dash} points="{}"/>"#, path.join(" ")));
        svg.push_str(&format!(r#"<text x="{}" y="{}" fill="{color}">{label}</text>"#, w - m - 120.0, m + 16.0 * k as f64));
    }
    svg.push_str("</svg>");
    svg
}

fn bound_point(bounds: &TheoreticalBounds, policy: PolicyKind, t: usize) -> Option<(f64, f64)> {
    bounds.for_policy(policy, t).map(|b| (t as f64, b))
}

fn bounds_of(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi - lo < 1e-9 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
