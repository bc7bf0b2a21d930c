//! Per-round metrics, convergence-slope estimation and result files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregator::PolicyKind;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::sim::{JobRecord, Mode};
use crate::vector::ModelVector;

pub const CSV_HEADER: &str = "t,clock,loss,grad_norm_sq,min_grad_norm_sq,delays";
pub const ROUNDS_FILE: &str = "rounds.csv";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub round: u64,
    pub clock: f64,
    pub loss: f64,
    /// `||grad F(x_t)||^2` of the clean gradient.
    pub grad_norm_sq: f64,
    pub min_grad_norm_sq: f64,
    pub delays: Vec<u64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobCounts {
    pub dispatched: u64,
    pub consumed: u64,
    pub in_flight: u64,
    pub queued: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundTrace {
    pub round: u64,
    pub x_prev: ModelVector,
    pub pseudo_grad: Vec<f64>,
    pub step: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunResult {
    pub mode: Mode,
    pub policy: PolicyKind,
    pub initial_loss: f64,
    pub initial_grad_norm_sq: f64,
    pub total_sim_time: f64,
    pub jobs: JobCounts,
    pub final_x: ModelVector,
    pub records: Vec<MetricsRecord>,
    pub trajectory: Option<Vec<ModelVector>>,
    pub steps: Option<Vec<RoundTrace>>,
    pub job_log: Option<Vec<JobRecord>>,
}

impl RunResult {
    pub fn final_loss(&self) -> f64 {
        self.records.last().map_or(self.initial_loss, |r| r.loss)
    }

    pub fn min_grad_norm_sq(&self) -> f64 {
        self.records
            .last()
            .map_or(f64::INFINITY, |r| r.min_grad_norm_sq)
    }

    pub fn delay_histogram(&self) -> BTreeMap<u64, u64> {
        delay_histogram(&self.records)
    }
}

/// Least-squares slope of `log(value)` against `log(T)`.
pub fn rate_slope(points: &[(u64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(Error::arg("rate_slope needs at least two horizons"));
    }
    if let Some((t, v)) = points.iter().find(|(t, v)| *t == 0 || !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::arg(format!(
            "rate_slope needs positive horizons and finite positive values, got ({t}, {v})"
        )));
    }
    let xs: Vec<f64> = points.iter().map(|(t, _)| (*t as f64).ln()).collect();
    let ys: Vec<f64> = points.iter().map(|(_, v)| v.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::arg("rate_slope needs at least two distinct horizons"));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    Ok(sxy / sxx)
}

pub fn delay_histogram(records: &[MetricsRecord]) -> BTreeMap<u64, u64> {
    let mut h = BTreeMap::new();
    for d in records.iter().flat_map(|r| &r.delays) {
        *h.entry(*d).or_insert(0) += 1;
    }
    h
}

/// Float formatting used in the CSV: shortest round-trip representation.
fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn rounds_csv(records: &[MetricsRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let delays: Vec<String> = r.delays.iter().map(u64::to_string).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.round,
            num(r.clock),
            num(r.loss),
            num(r.grad_norm_sq),
            num(r.min_grad_norm_sq),
            delays.join(";")
        );
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: RunConfig,
    pub mode: Mode,
    pub policy: PolicyKind,
    pub rounds: u64,
    #[serde(with = "crate::serde_ext")]
    pub initial_loss: f64,
    #[serde(with = "crate::serde_ext")]
    pub final_loss: f64,
    #[serde(with = "crate::serde_ext")]
    pub final_grad_norm_sq: f64,
    #[serde(with = "crate::serde_ext")]
    pub min_grad_norm_sq: f64,
    pub total_sim_time: f64,
    pub jobs: JobCounts,
    pub delay_histogram: BTreeMap<u64, u64>,
}

impl RunSummary {
    pub fn new(result: &RunResult, config: &RunConfig) -> Self {
        RunSummary {
            config: config.clone(),
            mode: result.mode,
            policy: result.policy,
            rounds: result.records.len() as u64,
            initial_loss: result.initial_loss,
            final_loss: result.final_loss(),
            final_grad_norm_sq: result
                .records
                .last()
                .map_or(result.initial_grad_norm_sq, |r| r.grad_norm_sq),
            min_grad_norm_sq: result.min_grad_norm_sq(),
            total_sim_time: result.total_sim_time,
            jobs: result.jobs,
            delay_histogram: result.delay_histogram(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Parse {
            what: "summary".into(),
            message: e.to_string(),
        })
    }
}

/// Writes `rounds.csv` and `summary.json` into `dir`, creating it.
pub fn write_run(result: &RunResult, config: &RunConfig, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let csv_path = dir.join(ROUNDS_FILE);
    fs::write(&csv_path, rounds_csv(&result.records)).map_err(|e| Error::io(&csv_path, e))?;
    let json_path = dir.join(SUMMARY_FILE);
    let mut json = RunSummary::new(result, config).to_json()?;
    json.push('\n');
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    Ok((csv_path, json_path))
}
