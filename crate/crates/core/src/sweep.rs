//! Grid sweeps over schedule constants, buffer size and seeds.
//!
//! Output layout under the sweep root:
//!
//! ```text
//! index.json
//! point_0000/seed_1/rounds.csv
//! point_0000/seed_1/summary.json
//! point_0001/...
//! ```
//!
//! A run that fails leaves `error.txt` in its seed directory instead.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregator::PolicyKind;
use crate::config::{RunConfig, ScheduleOverride};
use crate::error::{Error, Result};
use crate::metrics::write_run;
use crate::sim::run_simulation;

pub const INDEX_FILE: &str = "index.json";

/// Learning-rate axis used for both server and client rates.
pub const STANDARD_LR_GRID: [f64; 4] = [0.1, 0.01, 0.001, 0.0001];

/// `n` evenly spaced values from `start` to `stop` inclusive.
pub fn linspace(start: f64, stop: f64, n: usize) -> Vec<f64> {
    match n {
        0 => vec![],
        1 => vec![start],
        _ => {
            let step = (stop - start) / (n - 1) as f64;
            (0..n)
                .map(|i| if i == n - 1 { stop } else { start + step * i as f64 })
                .collect()
        }
    }
}

/// Threshold axis: four points from `1e-4` to `1.5`.
pub fn standard_clip_grid() -> Vec<f64> {
    linspace(1e-4, 1.5, 4)
}

/// Empty axes keep the base config's value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    #[serde(default, with = "crate::serde_ext::vec")]
    pub outer_lr: Vec<f64>,
    #[serde(default, with = "crate::serde_ext::vec")]
    pub local_lr: Vec<f64>,
    #[serde(default, with = "crate::serde_ext::vec")]
    pub outer_clip: Vec<f64>,
    #[serde(default, with = "crate::serde_ext::vec")]
    pub local_clip: Vec<f64>,
    #[serde(default)]
    pub buffer_size: Vec<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

/// The grid for `policy`; outer thresholds are swept only where the server clips.
pub fn standard_grid(policy: PolicyKind) -> SweepGrid {
    SweepGrid {
        outer_lr: STANDARD_LR_GRID.to_vec(),
        local_lr: STANDARD_LR_GRID.to_vec(),
        outer_clip: if policy.clips_outer() {
            standard_clip_grid()
        } else {
            vec![]
        },
        local_clip: standard_clip_grid(),
        buffer_size: vec![],
        seeds: vec![],
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub base: RunConfig,
    #[serde(default)]
    pub grid: SweepGrid,
}

/// Coordinates of one grid point; `None` keeps the base value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub index: usize,
    #[serde(with = "crate::serde_ext::option", skip_serializing_if = "Option::is_none", default)]
    pub outer_lr: Option<f64>,
    #[serde(with = "crate::serde_ext::option", skip_serializing_if = "Option::is_none", default)]
    pub local_lr: Option<f64>,
    #[serde(with = "crate::serde_ext::option", skip_serializing_if = "Option::is_none", default)]
    pub outer_clip: Option<f64>,
    #[serde(with = "crate::serde_ext::option", skip_serializing_if = "Option::is_none", default)]
    pub local_clip: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub buffer_size: Option<usize>,
}

fn axis<T: Copy>(v: &[T]) -> Vec<Option<T>> {
    if v.is_empty() {
        vec![None]
    } else {
        v.iter().copied().map(Some).collect()
    }
}

fn set_base(o: &mut ScheduleOverride, v: Option<f64>) {
    if let Some(v) = v {
        o.base = Some(v);
    }
}

impl SweepPoint {
    pub fn apply(&self, base: &RunConfig, seed: u64) -> RunConfig {
        let mut cfg = base.clone();
        set_base(&mut cfg.schedules.outer_lr, self.outer_lr);
        set_base(&mut cfg.schedules.local_lr, self.local_lr);
        set_base(&mut cfg.schedules.outer_clip, self.outer_clip);
        set_base(&mut cfg.schedules.local_clip, self.local_clip);
        if let Some(m) = self.buffer_size {
            cfg.buffer_size = m;
        }
        cfg.seed = seed;
        cfg.output = None;
        cfg
    }

    pub fn dir_name(&self) -> String {
        format!("point_{:04}", self.index)
    }
}

impl SweepSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse {
            what: "sweep spec".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Cartesian product of the non-seed axes, in a fixed order.
    pub fn points(&self) -> Vec<SweepPoint> {
        let g = &self.grid;
        let mut out = Vec::new();
        for outer_lr in axis(&g.outer_lr) {
            for local_lr in axis(&g.local_lr) {
                for outer_clip in axis(&g.outer_clip) {
                    for local_clip in axis(&g.local_clip) {
                        for buffer_size in axis(&g.buffer_size) {
                            out.push(SweepPoint {
                                index: out.len(),
                                outer_lr,
                                local_lr,
                                outer_clip,
                                local_clip,
                                buffer_size,
                            });
                        }
                    }
                }
            }
        }
        out
    }

    pub fn seeds(&self) -> Vec<u64> {
        if self.grid.seeds.is_empty() {
            vec![self.base.seed]
        } else {
            self.grid.seeds.clone()
        }
    }

    /// Number of simulations the sweep will execute.
    pub fn size(&self) -> usize {
        self.points().len() * self.seeds().len()
    }

    /// Every grid point must yield a valid config.
    pub fn validate(&self) -> Result<()> {
        let seeds = self.seeds();
        for p in self.points() {
            p.apply(&self.base, seeds[0]).validate().map_err(|e| {
                Error::config(format!("grid point {}: {e}", p.index))
            })?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    #[serde(with = "crate::serde_ext::option", skip_serializing_if = "Option::is_none", default)]
    pub min_grad_norm_sq: Option<f64>,
    #[serde(with = "crate::serde_ext::option", skip_serializing_if = "Option::is_none", default)]
    pub final_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

impl SeedOutcome {
    /// Failed or non-finite runs rank as infinitely bad.
    fn score(&self) -> f64 {
        match self.min_grad_norm_sq {
            Some(v) if !v.is_nan() => v,
            _ => f64::INFINITY,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PointReport {
    #[serde(flatten)]
    pub point: SweepPoint,
    pub dir: String,
    /// Median over seeds of `min_grad_norm_sq`; failed seeds count as infinite.
    #[serde(with = "crate::serde_ext")]
    pub median_min_grad_norm_sq: f64,
    pub failures: usize,
    pub seeds: Vec<SeedOutcome>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub total_points: usize,
    pub total_runs: usize,
    /// Point indices, best first.
    pub ranking: Vec<usize>,
    pub best: Option<usize>,
    pub points: Vec<PointReport>,
}

impl SweepIndex {
    pub fn best_point(&self) -> Option<&PointReport> {
        self.best.map(|i| &self.points[i])
    }
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::INFINITY;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        let (a, b) = (v[n / 2 - 1], v[n / 2]);
        if a.is_infinite() || b.is_infinite() {
            b
        } else {
            0.5 * (a + b)
        }
    }
}

fn run_one(base: &RunConfig, point: &SweepPoint, seed: u64, dir: &Path) -> SeedOutcome {
    let cfg = point.apply(base, seed);
    let outcome = run_simulation(&cfg).and_then(|r| {
        write_run(&r, &cfg, dir)?;
        Ok(r)
    });
    match outcome {
        Ok(r) => SeedOutcome {
            seed,
            min_grad_norm_sq: Some(r.min_grad_norm_sq()),
            final_loss: Some(r.final_loss()),
            error: None,
        },
        Err(e) => {
            let msg = e.to_string();
            let _ = fs::create_dir_all(dir).and_then(|_| fs::write(dir.join("error.txt"), &msg));
            SeedOutcome {
                seed,
                min_grad_norm_sq: None,
                final_loss: None,
                error: Some(msg),
            }
        }
    }
}

/// Runs every (point, seed) pair with at most `parallelism` worker threads
/// and writes the per-run files plus `index.json` under `out`.
pub fn run_sweep(spec: &SweepSpec, out: &Path, parallelism: usize) -> Result<SweepIndex> {
    let points = spec.points();
    let seeds = spec.seeds();
    let jobs: Vec<(usize, u64)> = (0..points.len())
        .flat_map(|p| seeds.iter().map(move |s| (p, *s)))
        .collect();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism.max(1))
        .build()
        .map_err(|e| Error::arg(format!("thread pool: {e}")))?;
    let outcomes: Vec<SeedOutcome> = pool.install(|| {
        jobs.par_iter()
            .map(|(p, seed)| {
                let point = &points[*p];
                let dir = run_dir(out, point, *seed);
                run_one(&spec.base, point, *seed, &dir)
            })
            .collect()
    });

    let mut reports: Vec<PointReport> = points
        .iter()
        .zip(outcomes.chunks(seeds.len()))
        .map(|(point, chunk)| {
            let mut scores: Vec<f64> = chunk.iter().map(SeedOutcome::score).collect();
            PointReport {
                point: *point,
                dir: point.dir_name(),
                median_min_grad_norm_sq: median(&mut scores),
                failures: chunk.iter().filter(|o| o.error.is_some()).count(),
                seeds: chunk.to_vec(),
            }
        })
        .collect();
    reports.sort_by_key(|r| r.point.index);

    let mut ranking: Vec<usize> = (0..reports.len()).collect();
    ranking.sort_by(|a, b| {
        reports[*a]
            .median_min_grad_norm_sq
            .total_cmp(&reports[*b].median_min_grad_norm_sq)
            .then(a.cmp(b))
    });
    let best = ranking
        .first()
        .copied()
        .filter(|i| reports[*i].median_min_grad_norm_sq.is_finite());
    let index = SweepIndex {
        total_points: reports.len(),
        total_runs: jobs.len(),
        ranking,
        best,
        points: reports,
    };
    let path = out.join(INDEX_FILE);
    let mut json = serde_json::to_string_pretty(&index).map_err(|e| Error::Parse {
        what: "sweep index".into(),
        message: e.to_string(),
    })?;
    json.push('\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(index)
}

/// Location of one run's output inside a sweep root.
pub fn run_dir(out: &Path, point: &SweepPoint, seed: u64) -> PathBuf {
    out.join(point.dir_name()).join(format!("seed_{seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linspace_matches_endpoints() {
        let v = standard_clip_grid();
        assert_eq!(v.len(), 4);
        assert_eq!(v[0], 1e-4);
        assert_eq!(v[3], 1.5);
        assert!((v[1] - (1e-4 + (1.5 - 1e-4) / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn median_treats_failures_as_worst() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0]), 2.5);
        assert_eq!(median(&mut [1.0, f64::INFINITY]), f64::INFINITY);
        assert_eq!(median(&mut [1.0, 2.0, f64::INFINITY]), 2.0);
    }
}
