//! One client's local clipped optimization.

use serde::{Deserialize, Serialize};

use crate::clip::{ClipMode, ScheduleSet};
use crate::error::{Error, Result};
use crate::noise::NoiseSampler;
use crate::problems::Problem;
use crate::rng::SimRng;
use crate::vector::ModelVector;

/// Payload a client returns to the server.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// Global round of the model the client started from.
    pub base_round: u64,
    /// `x_K - x_0`.
    pub delta: Vec<f64>,
    /// `sum_k eta_l^2 clip(g_k)^2`, present when the client tracks it.
    pub hessian_approx: Option<Vec<f64>>,
    pub sim_finish_time: f64,
}

impl ClientUpdate {
    pub fn new(
        client_id: usize,
        base_round: u64,
        delta: Vec<f64>,
        hessian_approx: Option<Vec<f64>>,
        sim_finish_time: f64,
    ) -> Result<Self> {
        if delta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteUpdate { client_id });
        }
        if let Some(a) = &hessian_approx {
            if a.len() != delta.len() {
                return Err(Error::DimensionMismatch {
                    expected: delta.len(),
                    got: a.len(),
                });
            }
            if a.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::arg(format!(
                    "hessian approximation from client {client_id} must be non-negative"
                )));
            }
        }
        Ok(ClientUpdate {
            client_id,
            base_round,
            delta,
            hessian_approx,
            sim_finish_time,
        })
    }
}

/// Static inputs of a local run that do not change between dispatches.
#[derive(Clone, Copy, Debug)]
pub struct LocalSetup<'a> {
    pub problem: &'a Problem,
    pub noise: &'a NoiseSampler,
    pub schedules: &'a ScheduleSet,
    pub local_steps: usize,
    pub track_hessian: bool,
    pub clip_mode: ClipMode,
}

/// Rates the client freezes for all of its local steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalRates {
    pub lr: f64,
    pub clip: f64,
}

/// Schedule index used by a client whose model comes from `base_round`.
/// Round 0 (the initial model) maps to index 1, round `s` to `s + 1`.
pub fn local_schedule_index(base_round: u64) -> u64 {
    base_round + 1
}

pub fn local_rates(schedules: &ScheduleSet, base_round: u64) -> LocalRates {
    let t = local_schedule_index(base_round);
    LocalRates {
        lr: schedules.local_lr.value_unchecked(t),
        clip: schedules.local_clip.value_unchecked(t),
    }
}

/// Runs `K` steps `x_k = x_{k-1} - eta_l * clip(u, g_k)` starting from `x0`,
/// with rates frozen at `base_round`.
pub fn run_local(
    setup: &LocalSetup<'_>,
    client_id: usize,
    x0: &ModelVector,
    base_round: u64,
    rng: &mut SimRng,
) -> Result<ClientUpdate> {
    if setup.local_steps == 0 {
        return Err(Error::arg("local_steps (K) must be at least 1"));
    }
    let d = setup.problem.dim();
    crate::vector::check_dim(d, x0.dim())?;
    let rates = local_rates(setup.schedules, base_round);

    let mut x = x0.clone();
    let mut grad = vec![0.0; d];
    let mut noise = vec![0.0; d];
    let mut hessian = setup.track_hessian.then(|| vec![0.0; d]);
    let lr_sq = rates.lr * rates.lr;

    for step in 0..setup.local_steps {
        setup.problem.clean_grad_into(&x, &mut grad)?;
        setup.noise.sample_into(rng, &mut noise);
        for (g, n) in grad.iter_mut().zip(&noise) {
            *g += n;
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { client_id, step });
        }
        let clipped = setup.clip_mode.apply(rates.clip, &grad)?;
        for (xi, c) in x.iter_mut().zip(&clipped) {
            *xi -= rates.lr * c;
        }
        if let Some(a) = hessian.as_mut() {
            for (ai, c) in a.iter_mut().zip(&clipped) {
                *ai += lr_sq * (c * c);
            }
        }
    }

    let delta = x.iter().zip(x0.iter()).map(|(a, b)| a - b).collect();
    ClientUpdate::new(client_id, base_round, delta, hessian, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clip::PowerSchedule;
    use crate::noise::NoiseSpec;
    use crate::rng::rng_from_seed;
    use crate::vector::norm_inf;

    fn sched(lr: f64, u: f64) -> ScheduleSet {
        ScheduleSet::constant(1.0, lr, u, f64::INFINITY)
    }

    fn run(
        problem: &Problem,
        noise: &NoiseSpec,
        schedules: &ScheduleSet,
        x0: &[f64],
        k: usize,
        track: bool,
        seed: u64,
    ) -> Result<ClientUpdate> {
        let sampler = noise.sampler().unwrap();
        let setup = LocalSetup {
            problem,
            noise: &sampler,
            schedules,
            local_steps: k,
            track_hessian: track,
            clip_mode: ClipMode::Coordinate,
        };
        run_local(&setup, 0, &x0.to_vec().into(), 0, &mut rng_from_seed(seed))
    }

    #[test]
    fn single_plain_step() {
        let p = Problem::quadratic(vec![1.0], vec![0.0]).unwrap();
        let u = run(&p, &NoiseSpec::zero(1), &sched(0.1, f64::INFINITY), &[1.0], 1, false, 0).unwrap();
        assert!((u.delta[0] + 0.1).abs() < 1e-15);
        assert!(u.hessian_approx.is_none());
    }

    #[test]
    fn zero_threshold_kills_the_step() {
        let p = Problem::quadratic(vec![1.0], vec![0.0]).unwrap();
        let u = run(&p, &NoiseSpec::zero(1), &sched(0.1, 0.0), &[1.0], 1, true, 0).unwrap();
        assert_eq!(u.delta, vec![0.0]);
        assert_eq!(u.hessian_approx, Some(vec![0.0]));
    }

    #[test]
    fn two_step_trace_with_hessian() {
        let p = Problem::quadratic(vec![2.0], vec![0.0]).unwrap();
        let u = run(&p, &NoiseSpec::zero(1), &sched(0.1, f64::INFINITY), &[1.0], 2, true, 0).unwrap();
        assert!((u.delta[0] + 0.36).abs() < 1e-12, "{:?}", u.delta);
        let a = u.hessian_approx.unwrap()[0];
        assert!((a - 0.0656).abs() < 1e-12, "{a}");
    }

    #[test]
    fn zero_local_steps_rejected() {
        let p = Problem::quadratic(vec![1.0], vec![0.0]).unwrap();
        assert!(matches!(
            run(&p, &NoiseSpec::zero(1), &sched(0.1, 1.0), &[1.0], 0, false, 0),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn non_finite_gradient_names_client_and_step() {
        let p = Problem::quadratic(vec![1.0], vec![0.0]).unwrap();
        let err = run(&p, &NoiseSpec::zero(1), &sched(0.1, 1.0), &[f64::INFINITY], 3, false, 0)
            .unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { client_id: 0, step: 0 }));
    }

    #[test]
    fn closed_form_without_noise() {
        // x_k = (1 - eta h)^k x_0 on a scalar quadratic centred at 0
        let (h, eta) = (0.7, 0.05);
        for k in 1..20 {
            for x0 in [-3.0, 0.4, 2.5] {
                let p = Problem::quadratic(vec![h], vec![0.0]).unwrap();
                let u = run(&p, &NoiseSpec::zero(1), &sched(eta, f64::INFINITY), &[x0], k, false, 0)
                    .unwrap();
                let expected = x0 * ((1.0 - eta * h).powi(k as i32) - 1.0);
                assert!((u.delta[0] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bounds_and_determinism_under_heavy_noise() {
        let p = Problem::quadratic(vec![1.0, 2.0, 0.5], vec![0.0; 3]).unwrap();
        let noise = NoiseSpec::pareto(1.3, 2.0, 3);
        let s = ScheduleSet {
            outer_lr: PowerSchedule::constant(1.0),
            local_lr: PowerSchedule::constant(0.05),
            local_clip: PowerSchedule::constant(0.7),
            outer_clip: PowerSchedule::infinite(),
        };
        for seed in 0..200 {
            let a = run(&p, &noise, &s, &[1.0, -1.0, 2.0], 7, true, seed).unwrap();
            let b = run(&p, &noise, &s, &[1.0, -1.0, 2.0], 7, true, seed).unwrap();
            assert_eq!(a, b);
            assert!(norm_inf(&a.delta) <= 7.0 * 0.05 * 0.7 + 1e-15);
            for v in a.hessian_approx.unwrap() {
                assert!((0.0..=7.0 * 0.05f64.powi(2) * 0.49 + 1e-15).contains(&v));
            }
        }
    }

    #[test]
    fn update_construction_rejects_non_finite_delta() {
        assert!(matches!(
            ClientUpdate::new(4, 0, vec![f64::NAN], None, 0.0),
            Err(Error::NonFiniteUpdate { client_id: 4 })
        ));
        assert!(ClientUpdate::new(4, 0, vec![1.0], Some(vec![-1.0]), 0.0).is_err());
    }
}
