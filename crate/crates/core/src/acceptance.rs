//! Acceptance suite A1..A10.
//!
//! Each criterion returns a [`Report`] instead of panicking: errors and
//! panics inside a criterion are caught and reported as failures.

use std::fmt;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::Rng;

use crate::aggregator::{AggregationPolicy, PolicyKind, ServerState};
use crate::clip::{clip, ClipMode, PowerSchedule, PresetName, SchedulePreset, ScheduleSet};
use crate::config::{ClientGroup, NoiseConfig, RunConfig, ScheduleConfig, ScheduleOverride};
use crate::error::{Error, Result};
use crate::metrics::{rate_slope, rounds_csv, RunResult};
use crate::noise::{empirical_alpha_moment, NoiseKind, NoiseSpec};
use crate::problems::ProblemSpec;
use crate::rng::rng_from_seed;
use crate::sim::{run_simulation_with, HessianOverride, Mode, RuntimeClass, RuntimeProfile, SimOptions};
use crate::sweep::STANDARD_LR_GRID;
use crate::vector::{norm, norm_inf, ModelVector};
use crate::worker::{run_local, ClientUpdate, LocalSetup};

pub const CRITERIA: [&str; 10] = ["A1", "A2", "A3", "A4", "A5", "A6", "A7", "A8", "A9", "A10"];

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub id: &'static str,
    pub title: &'static str,
    pub passed: bool,
    pub measured: String,
    pub seconds: f64,
    pub budget_seconds: f64,
}

impl fmt::Display for Report {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4}{} {} | {} | {:.2}s (budget {}s)",
            self.id,
            if self.passed { "PASS" } else { "FAIL" },
            self.title,
            self.measured,
            self.seconds,
            self.budget_seconds
        )
    }
}

/// Outcome of a criterion body before timing is attached.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub passed: bool,
    pub measured: String,
}

impl Check {
    fn new(passed: bool, measured: impl Into<String>) -> Self {
        Check {
            passed,
            measured: measured.into(),
        }
    }
}

type Body = fn(&Suite) -> Result<Check>;

/// Suite-wide knobs. The default runs every criterion at its standard settings.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Suite {
    /// Forces the server history capacity of every simulated run.
    pub history_capacity: Option<usize>,
}

impl Suite {
    pub fn run_all(&self) -> Vec<Report> {
        CRITERIA.iter().filter_map(|id| self.run(id)).collect()
    }

    /// Runs one criterion by id (`"A1"`..`"A10"`, case-insensitive).
    pub fn run(&self, id: &str) -> Option<Report> {
        let id = CRITERIA
            .iter()
            .copied()
            .find(|c| c.eq_ignore_ascii_case(id))?;
        let (title, budget, body): (&'static str, f64, Body) = match id {
            "A1" => ("sync equals async at zero asynchrony", 1.0, a1),
            "A2" => ("M=1 server-centric equals client-centric", 1.0, a2),
            "A3" => ("SD reduces to vanilla at unit delay", 1.0, a3),
            "A4" => ("DC reduces to Clip2 at zero staleness", 1.0, a4),
            "A5" => ("exact-Hessian DC oracle", 1.0, a5),
            "A6" => ("clipping rescues heavy tails", 30.0, a6),
            "A7" => ("SGDClip rate slope", 120.0, a7),
            "A8" => ("SD robustness under extreme delay", 60.0, a8),
            "A9" => ("buffer ablation runtime", 10.0, a9),
            "A10" => ("invariant suite", 60.0, a10),
            _ => unreachable!(),
        };
        let start = Instant::now();
        let check = match catch_unwind(AssertUnwindSafe(|| body(self))) {
            Ok(Ok(c)) => c,
            Ok(Err(e)) => Check::new(false, format!("error: {e}")),
            Err(p) => {
                let msg = p
                    .downcast_ref::<&str>()
                    .map(|s| s.to_string())
                    .or_else(|| p.downcast_ref::<String>().cloned())
                    .unwrap_or_else(|| "unknown panic".into());
                Check::new(false, format!("panic: {msg}"))
            }
        };
        let seconds = start.elapsed().as_secs_f64();
        let within = seconds <= budget;
        let measured = if within {
            check.measured
        } else {
            format!("{}; over time budget", check.measured)
        };
        Some(Report {
            id,
            title,
            passed: check.passed && within,
            measured,
            seconds,
            budget_seconds: budget,
        })
    }

    fn prepare(&self, mut cfg: RunConfig) -> RunConfig {
        if self.history_capacity.is_some() {
            cfg.history_capacity = self.history_capacity;
        }
        cfg
    }

    fn simulate(&self, cfg: RunConfig, opts: SimOptions) -> Result<RunResult> {
        run_simulation_with(&self.prepare(cfg), opts)
    }
}

fn group(count: usize, runtime: RuntimeProfile) -> ClientGroup {
    ClientGroup { count, runtime }
}

fn class(c: RuntimeClass) -> RuntimeProfile {
    RuntimeProfile::Class(c)
}

fn quadratic(dim: usize, optimum_scale: f64) -> ProblemSpec {
    ProblemSpec::QuadraticDiag {
        dim,
        curvature_min: 0.5,
        curvature_max: 2.0,
        optimum_scale,
    }
}

fn trajectory_bits(r: &RunResult) -> Vec<u64> {
    r.trajectory
        .iter()
        .flatten()
        .flat_map(|x| x.iter().map(|v| v.to_bits()))
        .collect()
}

fn max_abs_diff(a: &RunResult, b: &RunResult) -> f64 {
    let (Some(ta), Some(tb)) = (&a.trajectory, &b.trajectory) else {
        return f64::NAN;
    };
    if ta.len() != tb.len() {
        return f64::INFINITY;
    }
    ta.iter()
        .zip(tb)
        .flat_map(|(x, y)| x.iter().zip(y.iter()).map(|(p, q)| (p - q).abs()))
        .fold(0.0, f64::max)
}

fn trajectory_only() -> SimOptions {
    SimOptions {
        keep_trajectory: true,
        ..Default::default()
    }
}

/// The zero-asynchrony configuration shared by A1, A3 and A4.
pub fn lockstep_config(mode: Mode, policy: PolicyKind) -> RunConfig {
    RunConfig {
        mode,
        policy,
        clients: 8,
        buffer_size: 8,
        local_steps: 3,
        rounds: 100,
        seed: 2024,
        track_hessian: false,
        clip_mode: ClipMode::Coordinate,
        init: 1.0,
        history_capacity: None,
        problem: quadratic(20, 1.0),
        noise: NoiseConfig {
            kind: NoiseKind::Gaussian,
            tail_index: 1.5,
            scale: 1.0,
        },
        schedules: ScheduleConfig::constant(1.0, 0.05, 1.0, 0.5),
        client_groups: vec![group(8, RuntimeProfile::Fixed { fixed: 2.0 })],
        output: None,
    }
}

fn a1(suite: &Suite) -> Result<Check> {
    let sync = suite.simulate(lockstep_config(Mode::Synchronous, PolicyKind::Clip2), trajectory_only())?;
    let sc = suite.simulate(lockstep_config(Mode::ServerCentric, PolicyKind::Clip2), trajectory_only())?;
    let identical = trajectory_bits(&sync) == trajectory_bits(&sc);
    Ok(Check::new(
        identical,
        format!(
            "bit-identical={identical} max|dx|={:e} T={}",
            max_abs_diff(&sync, &sc),
            sc.records.len()
        ),
    ))
}

/// Ten clients in 17/12/11 Small/Medium/LargeSevere proportions.
fn mixed_ten() -> Vec<ClientGroup> {
    vec![
        group(4, class(RuntimeClass::Small)),
        group(3, class(RuntimeClass::Medium)),
        group(3, class(RuntimeClass::LargeSevere)),
    ]
}

fn a2(suite: &Suite) -> Result<Check> {
    let mut failed = Vec::new();
    let mut max_p = 0;
    for policy in PolicyKind::ALL {
        let mut cfg = lockstep_config(Mode::ServerCentric, policy);
        cfg.clients = 10;
        cfg.buffer_size = 1;
        cfg.rounds = 200;
        cfg.track_hessian = policy.compensates_delay();
        cfg.client_groups = mixed_ten();
        let sc = suite.simulate(cfg.clone(), trajectory_only())?;
        cfg.mode = Mode::ClientCentric;
        let cc = suite.simulate(cfg, trajectory_only())?;
        if trajectory_bits(&sc) != trajectory_bits(&cc) || sc.records != cc.records {
            failed.push(policy.as_str());
        }
        max_p = max_p.max(sc.delay_histogram().keys().last().copied().unwrap_or(0));
    }
    Ok(Check::new(
        failed.is_empty(),
        format!("5 policies, max delay {max_p}, mismatched: {failed:?}"),
    ))
}

fn a3(suite: &Suite) -> Result<Check> {
    let mut notes = Vec::new();
    let mut ok = true;
    for mode in [Mode::Synchronous, Mode::ServerCentric] {
        for (plain, sd) in [
            (PolicyKind::SgdClip, PolicyKind::SgdClipSD),
            (PolicyKind::Clip2, PolicyKind::Clip2SD),
        ] {
            let a = suite.simulate(lockstep_config(mode, plain), trajectory_only())?;
            let b = suite.simulate(lockstep_config(mode, sd), trajectory_only())?;
            let unit = b.records.iter().flat_map(|r| &r.delays).all(|p| *p == 1);
            let same = trajectory_bits(&a) == trajectory_bits(&b);
            ok &= unit && same;
            notes.push(format!("{mode}/{sd}: identical={same} all-p=1={unit}"));
        }
    }
    Ok(Check::new(ok, notes.join(", ")))
}

fn a4(suite: &Suite) -> Result<Check> {
    let mut notes = Vec::new();
    let mut ok = true;
    for mode in [Mode::Synchronous, Mode::ServerCentric] {
        let mut plain = lockstep_config(mode, PolicyKind::Clip2);
        plain.track_hessian = true;
        let mut dc = lockstep_config(mode, PolicyKind::Clip2DC);
        dc.track_hessian = true;
        let a = suite.simulate(plain, trajectory_only())?;
        let b = suite.simulate(dc, trajectory_only())?;
        let same = trajectory_bits(&a) == trajectory_bits(&b);
        ok &= same;
        notes.push(format!("{mode}: identical={same}"));
    }
    Ok(Check::new(ok, notes.join(", ")))
}

/// Two clients with runtimes 1 and 2.5 under client-centric M=1: the slow
/// client's first update lands in round 3 with delay 3.
pub fn oracle_trace_config() -> RunConfig {
    RunConfig {
        mode: Mode::ClientCentric,
        policy: PolicyKind::Clip2DC,
        clients: 2,
        buffer_size: 1,
        local_steps: 1,
        rounds: 30,
        seed: 7,
        track_hessian: true,
        clip_mode: ClipMode::Coordinate,
        init: 1.0,
        history_capacity: None,
        problem: ProblemSpec::QuadraticDiag {
            dim: 5,
            curvature_min: 0.5,
            curvature_max: 3.0,
            optimum_scale: 1.0,
        },
        noise: NoiseConfig {
            kind: NoiseKind::Zero,
            tail_index: 1.5,
            scale: 1.0,
        },
        schedules: ScheduleConfig {
            outer_lr: ScheduleOverride::base(1.0),
            local_lr: ScheduleOverride {
                base: Some(0.2),
                exponent: Some(-0.5),
                floor: None,
            },
            local_clip: ScheduleOverride::base(f64::INFINITY),
            outer_clip: ScheduleOverride::base(f64::INFINITY),
            ..Default::default()
        },
        client_groups: vec![
            group(1, RuntimeProfile::Fixed { fixed: 1.0 }),
            group(1, RuntimeProfile::Fixed { fixed: 2.5 }),
        ],
        output: None,
    }
}

fn a5(suite: &Suite) -> Result<Check> {
    let cfg = oracle_trace_config();
    let opts = SimOptions {
        keep_steps: true,
        keep_jobs: true,
        hessian_override: Some(HessianOverride::ExactDiagonal),
        ..Default::default()
    };
    let r = suite.simulate(cfg.clone(), opts)?;
    let problem = cfg
        .problem
        .build(&mut crate::sim::make_client_rngs(cfg.seed).problem_rng())?;
    let schedules = cfg.schedule_set()?;
    let steps = r.steps.as_ref().ok_or_else(|| Error::arg("steps not recorded"))?;
    let jobs = r.job_log.as_ref().ok_or_else(|| Error::arg("jobs not recorded"))?;

    let mut worst = 0.0f64;
    for trace in steps {
        // the consumed update's base round fixes the local rate
        let job = jobs
            .iter()
            .find(|j| j.consumed_in == Some(trace.round))
            .ok_or_else(|| Error::arg(format!("no job for round {}", trace.round)))?;
        let eta = crate::worker::local_rates(&schedules, job.base_round).lr;
        let g = problem.clean_grad(&trace.x_prev)?;
        for (ghat, gi) in trace.pseudo_grad.iter().zip(&g) {
            let want = -eta * gi;
            worst = worst.max((ghat - want).abs() / want.abs().max(1.0));
        }
    }
    let hist = r.delay_histogram();
    let has_p3 = hist.contains_key(&3);
    Ok(Check::new(
        worst <= 1e-12 && has_p3,
        format!("max err {worst:e} over {} rounds, delays {hist:?}", steps.len()),
    ))
}

/// Knobs of the heavy-tail rescue experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct HeavyTailParams {
    pub seeds: Vec<u64>,
    pub rounds: u64,
    pub fast_clients: usize,
    pub stragglers: usize,
    pub buffer_size: usize,
    pub local_steps: usize,
    pub outer_lr: f64,
    pub local_lr: f64,
    pub local_clip: f64,
    pub outer_clip: f64,
    pub noise_scale: f64,
}

impl Default for HeavyTailParams {
    fn default() -> Self {
        HeavyTailParams {
            seeds: (1..=20).collect(),
            rounds: 500,
            fast_clients: 7,
            stragglers: 3,
            buffer_size: 4,
            local_steps: 5,
            outer_lr: 1.0,
            local_lr: 0.5,
            local_clip: 1.0,
            outer_clip: 1.0,
            noise_scale: 10.0,
        }
    }
}

/// Per-seed outcome of the heavy-tail experiment; diverged runs carry
/// infinite values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HeavyTailTrial {
    pub seed: u64,
    pub clip2_final_loss: f64,
    pub sgd_final_loss: f64,
    /// `max_t ||x_t - x*|| / ||x_0 - x*||` of plain async SGD.
    pub sgd_excursion: f64,
}

/// `Clip2` with the `Clip2Vanilla` preset and the same run as `SgdClip`
/// with unbounded local thresholds.
pub fn heavy_tail_configs(p: &HeavyTailParams, seed: u64) -> (RunConfig, RunConfig) {
    let schedules = ScheduleConfig {
        outer_lr: ScheduleOverride::base(p.outer_lr),
        local_lr: ScheduleOverride::base(p.local_lr),
        local_clip: ScheduleOverride::base(p.local_clip),
        outer_clip: ScheduleOverride::base(p.outer_clip),
        ..ScheduleConfig::preset(PresetName::Clip2Vanilla, 1.5)
    };
    let clip2 = RunConfig {
        mode: Mode::ClientCentric,
        policy: PolicyKind::Clip2,
        clients: p.fast_clients + p.stragglers,
        buffer_size: p.buffer_size,
        local_steps: p.local_steps,
        rounds: p.rounds,
        seed,
        track_hessian: false,
        clip_mode: ClipMode::Coordinate,
        init: 1.0,
        history_capacity: None,
        problem: quadratic(10, 0.0),
        noise: NoiseConfig {
            kind: NoiseKind::ParetoSymmetric,
            tail_index: 1.5,
            scale: p.noise_scale,
        },
        schedules,
        client_groups: vec![
            group(p.fast_clients, class(RuntimeClass::Small)),
            group(p.stragglers, class(RuntimeClass::LargeSevere)),
        ],
        output: None,
    };
    let mut sgd = clip2.clone();
    sgd.policy = PolicyKind::SgdClip;
    sgd.schedules.local_clip = ScheduleOverride::base(f64::INFINITY);
    (clip2, sgd)
}

fn final_loss_or_inf(r: Result<RunResult>) -> Result<(f64, Option<RunResult>)> {
    match r {
        Ok(r) => {
            let l = r.final_loss();
            Ok((if l.is_finite() { l } else { f64::INFINITY }, Some(r)))
        }
        Err(e) if e.is_divergence() => Ok((f64::INFINITY, None)),
        Err(e) => Err(e),
    }
}

pub fn heavy_tail_trial(suite: &Suite, p: &HeavyTailParams, seed: u64) -> Result<HeavyTailTrial> {
    let (clip2, sgd) = heavy_tail_configs(p, seed);
    let (clip2_final_loss, _) = final_loss_or_inf(suite.simulate(clip2, SimOptions::default()))?;
    let (sgd_final_loss, run) = final_loss_or_inf(suite.simulate(sgd, trajectory_only()))?;
    let sgd_excursion = match run.and_then(|r| r.trajectory) {
        Some(traj) => {
            let d0 = norm(&traj[0]);
            traj.iter().map(|x| norm(x) / d0).fold(0.0, f64::max)
        }
        None => f64::INFINITY,
    };
    Ok(HeavyTailTrial {
        seed,
        clip2_final_loss,
        sgd_final_loss,
        sgd_excursion,
    })
}

fn a6(suite: &Suite) -> Result<Check> {
    let p = HeavyTailParams::default();
    let trials = p
        .seeds
        .iter()
        .map(|s| heavy_tail_trial(suite, &p, *s))
        .collect::<Result<Vec<_>>>()?;
    let wins = trials
        .iter()
        .filter(|t| t.clip2_final_loss < t.sgd_final_loss)
        .count();
    let worst = trials.iter().map(|t| t.sgd_excursion).fold(0.0, f64::max);
    let excursions = trials.iter().filter(|t| t.sgd_excursion > 10.0).count();
    let need = (p.seeds.len() * 4).div_ceil(5);
    Ok(Check::new(
        wins >= need && excursions >= 1,
        format!(
            "Clip2 wins {wins}/{} (need {need}); SGD seeds with excursion >10x: {excursions}, max {worst:.1}x",
            p.seeds.len()
        ),
    ))
}

/// Knobs of the rate-slope experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct RateParams {
    pub horizons: Vec<u64>,
    pub seeds: Vec<u64>,
    pub clients: usize,
    pub buffer_size: usize,
    pub local_steps: usize,
    pub base: f64,
    /// Freeze the schedules at the horizon instead of decaying them per round.
    pub freeze_at_horizon: bool,
}

impl Default for RateParams {
    fn default() -> Self {
        RateParams {
            horizons: vec![256, 512, 1024, 2048, 4096],
            seeds: (1..=10).collect(),
            clients: 4,
            buffer_size: 2,
            local_steps: 5,
            base: 1.0,
            freeze_at_horizon: true,
        }
    }
}

pub fn rate_config(p: &RateParams, horizon: u64, seed: u64) -> RunConfig {
    let mut schedules = ScheduleConfig::preset(PresetName::SGDClipVanilla, 1.5);
    schedules.horizon = p.freeze_at_horizon.then_some(horizon);
    schedules.outer_lr = ScheduleOverride::base(p.base);
    schedules.local_lr = ScheduleOverride::base(p.base);
    schedules.local_clip = ScheduleOverride::base(p.base);
    RunConfig {
        mode: Mode::ServerCentric,
        policy: PolicyKind::SgdClip,
        clients: p.clients,
        buffer_size: p.buffer_size,
        local_steps: p.local_steps,
        rounds: horizon,
        seed,
        track_hessian: false,
        clip_mode: ClipMode::Coordinate,
        init: 1.0,
        history_capacity: None,
        problem: quadratic(10, 1.0),
        noise: NoiseConfig {
            kind: NoiseKind::ParetoSymmetric,
            tail_index: 1.5,
            scale: 1.0,
        },
        schedules,
        client_groups: vec![group(p.clients, class(RuntimeClass::Small))],
        output: None,
    }
}

/// `(T, median over seeds of min grad-norm²)` per horizon and the fitted slope.
pub fn rate_points(suite: &Suite, p: &RateParams) -> Result<(Vec<(u64, f64)>, f64)> {
    let mut points = Vec::new();
    for &t in &p.horizons {
        let mut vals = p
            .seeds
            .iter()
            .map(|s| {
                suite
                    .simulate(rate_config(p, t, *s), SimOptions::default())
                    .map(|r| r.min_grad_norm_sq())
            })
            .collect::<Result<Vec<_>>>()?;
        vals.sort_by(f64::total_cmp);
        let n = vals.len();
        let med = if n % 2 == 1 {
            vals[n / 2]
        } else {
            0.5 * (vals[n / 2 - 1] + vals[n / 2])
        };
        points.push((t, med));
    }
    let slope = rate_slope(&points)?;
    Ok((points, slope))
}

fn a7(suite: &Suite) -> Result<Check> {
    let p = RateParams::default();
    let (points, slope) = rate_points(suite, &p)?;
    let theory = SchedulePreset::new(PresetName::SGDClipVanilla, 1.5, 1)
        .theoretical_rates()?
        .map(|r| -r.convergence)
        .unwrap_or(f64::NAN);
    let pts: Vec<String> = points.iter().map(|(t, v)| format!("{t}:{v:.3e}")).collect();
    Ok(Check::new(
        slope <= -0.05,
        format!("slope {slope:.4} (theory {theory:.4}); {}", pts.join(" ")),
    ))
}

/// Knobs of the extreme-delay robustness experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct DelayParams {
    pub mode: Mode,
    pub buffer_size: usize,
    pub rounds: u64,
    pub fast_clients: usize,
    pub slow_clients: usize,
    pub local_steps: usize,
    pub local_clip: f64,
    /// Growth exponent of the local threshold, `u_t = local_clip * t^e`.
    pub local_clip_exponent: f64,
    pub curvature_max: f64,
    pub seed: u64,
    pub outer_lrs: Vec<f64>,
    pub local_lrs: Vec<f64>,
}

impl Default for DelayParams {
    fn default() -> Self {
        DelayParams {
            mode: Mode::ClientCentric,
            buffer_size: 1,
            rounds: 1000,
            fast_clients: 1,
            slow_clients: 9,
            local_steps: 5,
            local_clip: 1.5,
            local_clip_exponent: 0.0,
            curvature_max: 2.0,
            seed: 3,
            outer_lrs: STANDARD_LR_GRID.to_vec(),
            local_lrs: STANDARD_LR_GRID.to_vec(),
        }
    }
}

pub fn delay_config(p: &DelayParams, policy: PolicyKind, outer_lr: f64, local_lr: f64) -> RunConfig {
    RunConfig {
        mode: p.mode,
        policy,
        clients: p.fast_clients + p.slow_clients,
        buffer_size: p.buffer_size,
        local_steps: p.local_steps,
        rounds: p.rounds,
        seed: p.seed,
        track_hessian: false,
        clip_mode: ClipMode::Coordinate,
        init: 1.0,
        history_capacity: None,
        problem: ProblemSpec::QuadraticDiag {
            dim: 10,
            curvature_min: 0.5,
            curvature_max: p.curvature_max,
            optimum_scale: 1.0,
        },
        noise: NoiseConfig {
            kind: NoiseKind::ParetoSymmetric,
            tail_index: 1.5,
            scale: 1.0,
        },
        schedules: ScheduleConfig {
            local_clip: ScheduleOverride {
                base: Some(p.local_clip),
                exponent: Some(p.local_clip_exponent),
                floor: None,
            },
            ..ScheduleConfig::constant(outer_lr, local_lr, p.local_clip, f64::INFINITY)
        },
        client_groups: vec![
            group(p.fast_clients, class(RuntimeClass::Small)),
            group(p.slow_clients, class(RuntimeClass::LargeSevere)),
        ],
        output: None,
    }
}

/// Final loss relative to the initial loss; infinite when the run diverged.
pub fn delay_loss_ratio(suite: &Suite, p: &DelayParams, policy: PolicyKind, outer_lr: f64, local_lr: f64) -> Result<f64> {
    let r = suite.simulate(delay_config(p, policy, outer_lr, local_lr), SimOptions::default());
    let initial = match &r {
        Ok(r) => r.initial_loss,
        Err(_) => 1.0,
    };
    let (final_loss, _) = final_loss_or_inf(r)?;
    Ok(final_loss / initial)
}

fn a8(suite: &Suite) -> Result<Check> {
    let p = DelayParams::default();
    let mut sd_bad = Vec::new();
    let mut vanilla_blowups = Vec::new();
    let mut worst_sd = 0.0f64;
    let mut worst_vanilla = 0.0f64;
    for &olr in &p.outer_lrs {
        for &llr in &p.local_lrs {
            let sd = delay_loss_ratio(suite, &p, PolicyKind::SgdClipSD, olr, llr)?;
            worst_sd = worst_sd.max(sd);
            if !sd.is_finite() {
                sd_bad.push((olr, llr));
            }
            let v = delay_loss_ratio(suite, &p, PolicyKind::SgdClip, olr, llr)?;
            worst_vanilla = worst_vanilla.max(v);
            if !v.is_finite() || v > 1e3 {
                vanilla_blowups.push((olr, llr));
            }
        }
    }
    Ok(Check::new(
        sd_bad.is_empty() && !vanilla_blowups.is_empty(),
        format!(
            "final/initial loss over 16 lr pairs: SD worst {worst_sd:.3e}, non-finite at {sd_bad:?}; vanilla worst {worst_vanilla:.3e}, >1e3 at {vanilla_blowups:?}"
        ),
    ))
}

fn a9(suite: &Suite) -> Result<Check> {
    let base = |mode, m| RunConfig {
        mode,
        policy: PolicyKind::SgdClip,
        clients: 40,
        buffer_size: m,
        local_steps: 5,
        rounds: 140,
        seed: 9,
        track_hessian: false,
        clip_mode: ClipMode::Coordinate,
        init: 1.0,
        history_capacity: None,
        problem: quadratic(4, 1.0),
        noise: NoiseConfig {
            kind: NoiseKind::Gaussian,
            tail_index: 1.5,
            scale: 1.0,
        },
        schedules: ScheduleConfig::constant(1.0, 0.01, 1.0, f64::INFINITY),
        client_groups: vec![
            group(17, class(RuntimeClass::Small)),
            group(12, class(RuntimeClass::Medium)),
            group(11, class(RuntimeClass::LargeSevere)),
        ],
        output: None,
    };
    let sync = suite.simulate(base(Mode::Synchronous, 40), SimOptions::default())?.total_sim_time;
    let mut ok = true;
    let mut notes = vec![format!("sync {sync:.1}")];
    for mode in [Mode::ServerCentric, Mode::ClientCentric] {
        let mut clocks = Vec::new();
        for m in [1, 10, 20, 30] {
            clocks.push(suite.simulate(base(mode, m), SimOptions::default())?.total_sim_time);
        }
        ok &= clocks.windows(2).all(|w| w[0] < w[1]) && clocks.iter().all(|c| *c < sync);
        let c: Vec<String> = clocks.iter().map(|c| format!("{c:.1}")).collect();
        notes.push(format!("{mode} M=1,10,20,30: {}", c.join(" < ")));
    }
    Ok(Check::new(ok, notes.join("; ")))
}

/// Seeded random-case checks of the module invariants, plus the noise
/// statistics and the golden CSV.
fn a10(suite: &Suite) -> Result<Check> {
    let mut failures: Vec<String> = Vec::new();
    let mut rng = rng_from_seed(0xA10);
    const CASES: usize = 10_000;

    // clip algebra
    for _ in 0..CASES {
        let d = rng.random_range(1..16);
        let g: Vec<f64> = (0..d).map(|_| rng.random_range(-1e3..1e3)).collect();
        let u1 = rng.random_range(0.0..100.0);
        let u2 = u1 + rng.random_range(0.0..100.0);
        let c1 = clip(u1, &g)?;
        let c2 = clip(u2, &g)?;
        if norm(&c1) > norm(&g) || norm_inf(&c1) > u1 {
            failures.push("clip non-expansive".into());
            break;
        }
        if clip(u1, &c1)? != c1 {
            failures.push("clip idempotent".into());
            break;
        }
        if c1.iter().zip(&c2).any(|(a, b)| a.abs() > b.abs()) {
            failures.push("clip monotone".into());
            break;
        }
        if clip(f64::INFINITY, &g)? != g {
            failures.push("clip identity at inf".into());
            break;
        }
    }

    // local step bounds and determinism
    let spec = quadratic(5, 1.0);
    let problem = spec.build(&mut rng_from_seed(1))?;
    let noise = NoiseSpec::pareto(1.5, 1.0, 5).sampler()?;
    for case in 0..CASES / 10 {
        let k = rng.random_range(1..6);
        let lr = rng.random_range(1e-3..1.0);
        let u = rng.random_range(1e-3..5.0);
        let schedules = ScheduleSet::constant(1.0, lr, u, f64::INFINITY);
        let setup = LocalSetup {
            problem: &problem,
            noise: &noise,
            schedules: &schedules,
            local_steps: k,
            track_hessian: true,
            clip_mode: ClipMode::Coordinate,
        };
        let x0 = ModelVector::filled(5, rng.random_range(-5.0..5.0));
        let a = run_local(&setup, 0, &x0, 0, &mut rng_from_seed(case as u64))?;
        let b = run_local(&setup, 0, &x0, 0, &mut rng_from_seed(case as u64))?;
        let bound = k as f64 * lr * u * (1.0 + 1e-12);
        let cap = k as f64 * lr * lr * u * u * (1.0 + 1e-12);
        let h = a.hessian_approx.as_deref().unwrap_or(&[]);
        if a != b || norm_inf(&a.delta) > bound || h.iter().any(|v| *v < 0.0 || *v > cap) {
            failures.push("local step bounds".into());
            break;
        }
    }

    // aggregation: unit-delay reductions and movement bound
    for _ in 0..CASES / 10 {
        let lr = rng.random_range(0.01..2.0);
        let u = rng.random_range(0.01..3.0);
        let mk = |kind| {
            let policy = AggregationPolicy::new(kind, PowerSchedule::constant(lr), PowerSchedule::constant(u));
            ServerState::new(ModelVector::filled(3, 1.0), policy, 4)
        };
        let mut states: Vec<ServerState> = PolicyKind::ALL.iter().map(|k| mk(*k)).collect();
        for _ in 0..5 {
            let delta: Vec<f64> = (0..3).map(|_| rng.random_range(-5.0..5.0)).collect();
            let hess: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..1.0)).collect();
            let round = states[0].round();
            for s in states.iter_mut() {
                let prev = s.x().clone();
                let upd = ClientUpdate::new(0, round, delta.clone(), Some(hess.clone()), 0.0)?;
                s.aggregate(&[upd])?;
                if s.policy().kind.clips_outer() {
                    let moved: Vec<f64> = s.x().iter().zip(prev.iter()).map(|(a, b)| a - b).collect();
                    if norm_inf(&moved) > lr * u * (1.0 + 1e-12) {
                        failures.push("outer movement bound".into());
                    }
                }
            }
        }
        let bits = |s: &ServerState| s.x().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        // ALL = [SgdClip, Clip2, SgdClipSD, Clip2SD, Clip2DC]
        if bits(&states[0]) != bits(&states[2])
            || bits(&states[1]) != bits(&states[3])
            || bits(&states[1]) != bits(&states[4])
        {
            failures.push("unit-delay reductions".into());
            break;
        }
    }

    // simulator: determinism, conservation, staleness floor, clock order
    for case in 0..40u64 {
        let policy = PolicyKind::ALL[case as usize % 5];
        let mode = [Mode::Synchronous, Mode::ServerCentric, Mode::ClientCentric][case as usize % 3];
        let n = 1 + (case as usize % 6);
        let m = if mode == Mode::Synchronous { n } else { 1 + case as usize % n };
        let mut cfg = lockstep_config(mode, policy);
        cfg.clients = n;
        cfg.buffer_size = m;
        cfg.rounds = 30;
        cfg.seed = case;
        cfg.track_hessian = policy.compensates_delay();
        cfg.problem = quadratic(4, 1.0);
        cfg.client_groups = vec![group(n, class(RuntimeClass::Medium))];
        let a = suite.simulate(cfg.clone(), SimOptions::full())?;
        let b = suite.simulate(cfg, SimOptions::full())?;
        let j = a.jobs;
        let mut running = f64::INFINITY;
        let mins_ok = a.records.iter().all(|r| {
            running = running.min(r.grad_norm_sq);
            r.min_grad_norm_sq == running
        });
        if trajectory_bits(&a) != trajectory_bits(&b)
            || a.records != b.records
            || j.dispatched != j.consumed + j.in_flight + j.queued
            || a.records.iter().flat_map(|r| &r.delays).any(|p| *p < 1)
            || !a.records.windows(2).all(|w| w[0].clock < w[1].clock)
            || !mins_ok
        {
            failures.push(format!("simulator invariants (case {case})"));
            break;
        }
    }

    // golden CSV
    let golden = golden_csv_config();
    let csv = rounds_csv(&suite.simulate(golden, SimOptions::default())?.records);
    if csv != GOLDEN_CSV {
        failures.push("golden CSV".into());
    }

    // noise statistics
    let noise_notes = noise_statistics(&mut failures)?;

    Ok(Check::new(
        failures.is_empty(),
        format!("{noise_notes}; failed: {failures:?}"),
    ))
}

const GOLDEN_CSV: &str = include_str!("../tests/golden/client_centric_rounds.csv");

/// Configuration behind the golden CSV.
pub fn golden_csv_config() -> RunConfig {
    let mut cfg = lockstep_config(Mode::ClientCentric, PolicyKind::Clip2SD);
    cfg.clients = 4;
    cfg.buffer_size = 2;
    cfg.local_steps = 3;
    cfg.rounds = 12;
    cfg.seed = 5;
    cfg.problem = quadratic(6, 1.0);
    cfg.noise.scale = 0.5;
    cfg.schedules = ScheduleConfig::constant(1.0, 0.05, 1.0, 0.5);
    cfg.client_groups = vec![
        group(2, class(RuntimeClass::Small)),
        group(1, class(RuntimeClass::Medium)),
        group(1, class(RuntimeClass::LargeSevere)),
    ];
    cfg
}

fn relative_spread(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::MIN, f64::max);
    let min = v.iter().copied().fold(f64::MAX, f64::min);
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    (max - min) / mean
}

fn noise_statistics(failures: &mut Vec<String>) -> Result<String> {
    let alpha = 1.5;
    let scalar = NoiseSpec::pareto(alpha, 1.0, 1).sampler()?;
    let mut rng = rng_from_seed(21);
    let positive = (0..100_000).filter(|_| scalar.sample(&mut rng)[0] > 0.0).count();
    let frac = positive as f64 / 100_000.0;
    if (frac - 0.5).abs() > 0.01 {
        failures.push("noise symmetry".into());
    }

    let mut low = Vec::new();
    let mut high = Vec::new();
    for seed in 1..=5u64 {
        let mut rng = rng_from_seed(seed);
        let samples: Vec<Vec<f64>> = (0..10_000).map(|_| scalar.sample(&mut rng)).collect();
        low.push(empirical_alpha_moment(&samples, alpha - 0.1)?);
        high.push(empirical_alpha_moment(&samples, 2.0)?);
    }
    let (lo, hi) = (relative_spread(&low), relative_spread(&high));
    if lo >= 0.25 {
        failures.push(format!("noise low-moment stability (spread {lo:.3})"));
    }
    if hi <= 0.5 {
        failures.push(format!("noise second-moment instability (spread {hi:.3})"));
    }
    Ok(format!(
        "{CASES} clip cases, positive fraction {frac:.4}, moment spread a-0.1: {lo:.3}, 2: {hi:.3}",
        CASES = 10_000
    ))
}
