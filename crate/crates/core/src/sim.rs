//! Discrete-event simulation of a parameter server with heterogeneous clients.
//!
//! Each dispatched job runs its local optimization immediately (it is a pure
//! function of the model it received and its private noise stream) and is
//! delivered at `dispatch_time + runtime`. Deliveries are ordered by
//! `(time, client_id, dispatch sequence)`, which makes every run a function
//! of its configuration alone.

use std::cmp::{Ordering, Reverse};
use std::collections::{BinaryHeap, VecDeque};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::aggregator::{AggregationOutcome, ServerState};
use crate::clip::ScheduleSet;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::metrics::{JobCounts, MetricsRecord, RunResult, RoundTrace};
use crate::noise::NoiseSampler;
use crate::problems::Problem;
use crate::rng::{SeedTree, SimRng};
use crate::vector::{norm_sq, ModelVector};
use crate::worker::{local_rates, run_local, ClientUpdate, LocalSetup};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    Synchronous,
    ServerCentric,
    ClientCentric,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Straggler classes; runtimes are drawn uniformly from the class range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RuntimeClass {
    Small,
    Medium,
    LargeMild,
    LargeSevere,
}

impl RuntimeClass {
    pub fn range(self) -> (f64, f64) {
        match self {
            RuntimeClass::Small => (1.0, 2.0),
            RuntimeClass::Medium => (3.0, 5.0),
            RuntimeClass::LargeMild => (5.0, 8.0),
            RuntimeClass::LargeSevere => (20.0, 40.0),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum RuntimeProfile {
    Class(RuntimeClass),
    /// Deterministic runtime, used for scripted traces.
    Fixed { fixed: f64 },
}

impl RuntimeProfile {
    pub fn range(&self) -> (f64, f64) {
        match *self {
            RuntimeProfile::Class(c) => c.range(),
            RuntimeProfile::Fixed { fixed } => (fixed, fixed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            RuntimeProfile::Fixed { fixed } if !(fixed > 0.0 && fixed.is_finite()) => Err(
                Error::config(format!("fixed runtime must be positive and finite, got {fixed}")),
            ),
            _ => Ok(()),
        }
    }

    /// Fixed profiles consume no randomness.
    pub fn sample(&self, rng: &mut SimRng) -> f64 {
        match *self {
            RuntimeProfile::Class(c) => {
                let (lo, hi) = c.range();
                rng.random_range(lo..=hi)
            }
            RuntimeProfile::Fixed { fixed } => fixed,
        }
    }
}

impl From<RuntimeClass> for RuntimeProfile {
    fn from(c: RuntimeClass) -> Self {
        RuntimeProfile::Class(c)
    }
}

/// Replaces the clients' accumulated Hessian approximation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HessianOverride {
    /// `A = eta_l(s) * h` for a diagonal quadratic with curvature `h`; with
    /// one unclipped noiseless step this makes delay compensation exact.
    ExactDiagonal,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SimOptions {
    /// Keep `x_0, ..., x_T`.
    pub keep_trajectory: bool,
    /// Keep the per-round pseudo-gradient and applied step.
    pub keep_steps: bool,
    /// Keep one record per dispatched job.
    pub keep_jobs: bool,
    pub hessian_override: Option<HessianOverride>,
}

impl SimOptions {
    pub fn full() -> Self {
        SimOptions {
            keep_trajectory: true,
            keep_steps: true,
            keep_jobs: true,
            hessian_override: None,
        }
    }
}

/// One dispatched job.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct JobRecord {
    pub client_id: usize,
    pub dispatch_seq: u64,
    pub base_round: u64,
    pub dispatch_time: f64,
    pub finish_time: f64,
    /// Round that consumed the update, if any.
    pub consumed_in: Option<u64>,
}

/// Default history capacity: four times a bound on how many rounds can pass
/// while one job is outstanding.
pub fn default_history_capacity(cfg: &RunConfig) -> usize {
    let profiles = cfg.client_profiles();
    let slowest = profiles.iter().map(|p| p.range().1).fold(0.0, f64::max);
    let fastest = profiles
        .iter()
        .map(|p| p.range().0)
        .fold(f64::INFINITY, f64::min);
    let ratio = (slowest / fastest).ceil().max(1.0) as usize;
    let n = cfg.clients.max(1);
    let m = cfg.buffer_size.max(1);
    let per_job = (n - 1) * (ratio + 1) / m + 1;
    let cap = 4 * per_job + 1;
    cap.min(cfg.rounds as usize + 1)
}

/// Per-client seed streams of one run.
pub fn make_client_rngs(master_seed: u64) -> SeedTree {
    SeedTree::new(master_seed)
}

#[derive(Debug)]
struct PendingJob {
    finish: f64,
    client_id: usize,
    seq: u64,
    job_index: usize,
    update: ClientUpdate,
}

impl PendingJob {
    fn key(&self) -> (f64, usize, u64) {
        (self.finish, self.client_id, self.seq)
    }
}

impl PartialEq for PendingJob {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for PendingJob {}
impl PartialOrd for PendingJob {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for PendingJob {
    fn cmp(&self, other: &Self) -> Ordering {
        let (a, b) = (self.key(), other.key());
        a.0.total_cmp(&b.0)
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    }
}

struct Client {
    profile: RuntimeProfile,
    runtime_rng: SimRng,
    dispatches: u64,
    busy: bool,
}

struct Engine<'a> {
    cfg: &'a RunConfig,
    opts: SimOptions,
    problem: &'a Problem,
    noise: NoiseSampler,
    schedules: ScheduleSet,
    seeds: SeedTree,
    clients: Vec<Client>,
    server: ServerState,
    counts: JobCounts,
    records: Vec<MetricsRecord>,
    trajectory: Vec<ModelVector>,
    steps: Vec<RoundTrace>,
    jobs: Vec<JobRecord>,
    min_gns: f64,
    clock: f64,
}

impl<'a> Engine<'a> {
    fn new(cfg: &'a RunConfig, problem: &'a Problem, opts: SimOptions) -> Result<Self> {
        let seeds = make_client_rngs(cfg.seed);
        let schedules = cfg.schedule_set()?;
        let x0 = problem.initial_point(cfg.init);
        let capacity = cfg
            .history_capacity
            .unwrap_or_else(|| default_history_capacity(cfg));
        let server = ServerState::new(x0.clone(), cfg.aggregation_policy()?, capacity);
        let clients = cfg
            .client_profiles()
            .into_iter()
            .enumerate()
            .map(|(i, profile)| Client {
                profile,
                runtime_rng: seeds.runtime_rng(i),
                dispatches: 0,
                busy: false,
            })
            .collect();
        let mut trajectory = Vec::new();
        if opts.keep_trajectory {
            trajectory.push(x0);
        }
        Ok(Engine {
            cfg,
            opts,
            problem,
            noise: cfg.noise_spec().sampler()?,
            schedules,
            seeds,
            clients,
            server,
            counts: JobCounts::default(),
            records: Vec::with_capacity(cfg.rounds as usize),
            trajectory,
            steps: Vec::new(),
            jobs: Vec::new(),
            min_gns: f64::INFINITY,
            clock: 0.0,
        })
    }

    /// Starts a job for `client` from the current global model.
    fn dispatch(&mut self, client: usize, now: f64) -> Result<PendingJob> {
        let base_round = self.server.round();
        let seq = self.clients[client].dispatches;
        debug_assert!(!self.clients[client].busy, "client {client} already busy");
        let setup = LocalSetup {
            problem: self.problem,
            noise: &self.noise,
            schedules: &self.schedules,
            local_steps: self.cfg.local_steps,
            track_hessian: self.cfg.track_hessian,
            clip_mode: self.cfg.clip_mode,
        };
        let mut rng = self.seeds.noise_rng(client, seq);
        let mut update = run_local(&setup, client, self.server.x(), base_round, &mut rng)?;
        if let Some(HessianOverride::ExactDiagonal) = self.opts.hessian_override {
            let Problem::Quadratic(q) = self.problem else {
                return Err(Error::arg("exact Hessian override needs a QuadraticDiag problem"));
            };
            let lr = local_rates(&self.schedules, base_round).lr;
            update.hessian_approx = Some(q.curvature.iter().map(|h| lr * h).collect());
        }
        let c = &mut self.clients[client];
        let finish = now + c.profile.sample(&mut c.runtime_rng);
        update.sim_finish_time = finish;
        c.dispatches += 1;
        c.busy = true;
        self.counts.dispatched += 1;
        let job_index = self.jobs.len();
        if self.opts.keep_jobs {
            self.jobs.push(JobRecord {
                client_id: client,
                dispatch_seq: seq,
                base_round,
                dispatch_time: now,
                finish_time: finish,
                consumed_in: None,
            });
        }
        Ok(PendingJob {
            finish,
            client_id: client,
            seq,
            job_index,
            update,
        })
    }

    fn aggregate(&mut self, batch: &[(usize, ClientUpdate)], now: f64) -> Result<()> {
        let updates: Vec<ClientUpdate> = batch.iter().map(|(_, u)| u.clone()).collect();
        let x_prev = self.opts.keep_steps.then(|| self.server.x().clone());
        let AggregationOutcome {
            round,
            pseudo_grad,
            step,
            delays,
        } = self.server.aggregate(&updates)?;
        self.counts.consumed += updates.len() as u64;
        if self.opts.keep_jobs {
            for (job, _) in batch {
                self.jobs[*job].consumed_in = Some(round);
            }
        }
        let x = self.server.x();
        let loss = self.problem.eval_loss(x)?;
        let gns = norm_sq(&self.problem.clean_grad(x)?);
        // NaN never lowers the running minimum
        if gns < self.min_gns {
            self.min_gns = gns;
        }
        self.clock = now;
        self.records.push(MetricsRecord {
            round,
            clock: now,
            loss,
            grad_norm_sq: gns,
            min_grad_norm_sq: self.min_gns,
            delays,
        });
        if self.opts.keep_trajectory {
            self.trajectory.push(x.clone());
        }
        if let Some(x_prev) = x_prev {
            self.steps.push(RoundTrace {
                round,
                x_prev,
                pseudo_grad,
                step,
            });
        }
        Ok(())
    }

    fn run_synchronous(&mut self) -> Result<()> {
        let n = self.clients.len();
        for _ in 0..self.cfg.rounds {
            let start = self.clock;
            let mut batch = Vec::with_capacity(n);
            let mut round_end = start;
            for c in 0..n {
                let job = self.dispatch(c, start)?;
                round_end = round_end.max(job.finish);
                batch.push((job.job_index, job.update));
            }
            for c in &mut self.clients {
                c.busy = false;
            }
            self.aggregate(&batch, round_end)?;
        }
        Ok(())
    }

    fn run_async(&mut self, client_centric: bool) -> Result<(u64, u64)> {
        let m = self.cfg.buffer_size;
        let mut events: BinaryHeap<Reverse<PendingJob>> = BinaryHeap::new();
        let mut queue: VecDeque<(usize, ClientUpdate)> = VecDeque::new();
        for c in 0..self.clients.len() {
            events.push(Reverse(self.dispatch(c, 0.0)?));
        }
        while self.server.round() < self.cfg.rounds {
            let Reverse(job) = events
                .pop()
                .ok_or_else(|| Error::arg("event queue drained before the last round"))?;
            let now = job.finish;
            let client = job.client_id;
            self.clients[client].busy = false;
            queue.push_back((job.job_index, job.update));

            let mut aggregated = false;
            while queue.len() >= m && self.server.round() < self.cfg.rounds {
                let batch: Vec<_> = queue.drain(..m).collect();
                self.aggregate(&batch, now)?;
                aggregated = true;
            }
            if self.server.round() >= self.cfg.rounds {
                break;
            }
            if client_centric {
                events.push(Reverse(self.dispatch(client, now)?));
            } else if aggregated {
                for c in 0..self.clients.len() {
                    if !self.clients[c].busy {
                        events.push(Reverse(self.dispatch(c, now)?));
                    }
                }
            }
        }
        Ok((events.len() as u64, queue.len() as u64))
    }
}

/// Runs one experiment.
pub fn run_simulation(cfg: &RunConfig) -> Result<RunResult> {
    run_simulation_with(cfg, SimOptions::default())
}

pub fn run_simulation_with(cfg: &RunConfig, opts: SimOptions) -> Result<RunResult> {
    cfg.validate()?;
    let problem = cfg.problem.build(&mut make_client_rngs(cfg.seed).problem_rng())?;
    run_on_problem(cfg, &problem, opts)
}

/// Like [`run_simulation_with`] but on an explicitly constructed problem.
pub fn run_on_problem(cfg: &RunConfig, problem: &Problem, opts: SimOptions) -> Result<RunResult> {
    cfg.validate()?;
    crate::vector::check_dim(cfg.dim(), problem.dim())?;
    let mut engine = Engine::new(cfg, problem, opts)?;
    let x0 = engine.server.x().clone();
    let initial_loss = problem.eval_loss(&x0)?;
    let initial_grad_norm_sq = norm_sq(&problem.clean_grad(&x0)?);

    let (in_flight, queued) = match cfg.mode {
        Mode::Synchronous => {
            engine.run_synchronous()?;
            (0, 0)
        }
        Mode::ServerCentric => engine.run_async(false)?,
        Mode::ClientCentric => engine.run_async(true)?,
    };
    engine.counts.in_flight = in_flight;
    engine.counts.queued = queued;

    Ok(RunResult {
        mode: cfg.mode,
        policy: cfg.policy,
        initial_loss,
        initial_grad_norm_sq,
        total_sim_time: engine.clock,
        jobs: engine.counts,
        final_x: engine.server.x().clone(),
        records: engine.records,
        trajectory: opts.keep_trajectory.then_some(engine.trajectory),
        steps: opts.keep_steps.then_some(engine.steps),
        job_log: opts.keep_jobs.then_some(engine.jobs),
    })
}
