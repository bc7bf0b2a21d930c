mod common;

use asyncclip::aggregator::PolicyKind;
use asyncclip::sim::{run_simulation_with, SimOptions};
use asyncclip::{run_simulation, Error, Mode, RunResult, RuntimeClass};
use common::*;

fn full(cfg: &asyncclip::RunConfig) -> RunResult {
    run_simulation_with(cfg, SimOptions::full()).unwrap()
}

fn bits(r: &RunResult) -> Vec<u64> {
    r.trajectory
        .as_ref()
        .unwrap()
        .iter()
        .flat_map(|x| x.iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn equal_runtimes_server_centric_matches_synchronous() {
    for policy in PolicyKind::ALL {
        let mut cfg = base_config(Mode::Synchronous, policy, 3, 3);
        cfg.client_groups = groups(&[(3, fixed(2.5))]);
        cfg.rounds = 40;
        let sync = full(&cfg);
        cfg.mode = Mode::ServerCentric;
        let sc = full(&cfg);
        assert_eq!(bits(&sync), bits(&sc), "{policy}");
        assert_eq!(sync.records, sc.records, "{policy}");
        assert_eq!(sync.total_sim_time, 100.0);
    }
}

#[test]
fn single_buffer_server_and_client_centric_coincide() {
    for policy in PolicyKind::ALL {
        let mut cfg = base_config(Mode::ServerCentric, policy, 8, 1);
        cfg.client_groups = mixed_groups(8);
        cfg.rounds = 150;
        let sc = full(&cfg);
        cfg.mode = Mode::ClientCentric;
        let cc = full(&cfg);
        assert_eq!(bits(&sc), bits(&cc), "{policy}");
        assert_eq!(sc.records, cc.records);
        assert!(sc.records.iter().any(|r| r.delays[0] > 1), "expected staleness");
    }
}

#[test]
fn two_client_trace_short_horizon() {
    let mut cfg = base_config(Mode::ClientCentric, PolicyKind::SgdClip, 2, 1);
    cfg.client_groups = groups(&[(1, fixed(1.0)), (1, fixed(10.0))]);
    cfg.rounds = 5;
    let r = full(&cfg);
    let delays: Vec<Vec<u64>> = r.records.iter().map(|r| r.delays.clone()).collect();
    assert_eq!(delays, vec![vec![1]; 5]);
    let clocks: Vec<f64> = r.records.iter().map(|r| r.clock).collect();
    assert_eq!(clocks, vec![1.0, 2.0, 3.0, 4.0, 5.0]);
    // the slow client is still computing on the initial model
    assert_eq!(r.jobs.in_flight, 1);
    let log = r.job_log.unwrap();
    assert!(log.iter().all(|j| j.client_id == 0 || j.consumed_in.is_none()));
}

#[test]
fn two_client_trace_long_horizon() {
    // client 0 (runtime 1) produces rounds 1..=10; at clock 10 it ties with
    // client 1 (runtime 10) and wins on client id. Client 1's update, based
    // on round 0, is then consumed as round 11 with p = 11.
    let mut cfg = base_config(Mode::ClientCentric, PolicyKind::SgdClipSD, 2, 1);
    cfg.client_groups = groups(&[(1, fixed(1.0)), (1, fixed(10.0))]);
    cfg.rounds = 23;
    let r = full(&cfg);
    let mut expected = vec![1u64; 23];
    expected[10] = 11; // round 11
    // client 0 was re-dispatched on round 10, so round 12 sees p = 2
    expected[11] = 2;
    // client 1 restarts from round 11 and returns at clock 20, right after
    // client 0 produced round 21: p = 22 - 11 at round 22, then 2 again
    expected[21] = 11;
    expected[22] = 2;
    let delays: Vec<u64> = r.records.iter().map(|r| r.delays[0]).collect();
    assert_eq!(delays, expected);
    assert_eq!(r.records[10].clock, 10.0);
    assert_eq!(r.records[21].clock, 20.0);
    let h = r.delay_histogram();
    assert_eq!(h.get(&11), Some(&2));
    assert_eq!(h.get(&2), Some(&2));
    assert_eq!(h.get(&1), Some(&19));
}

#[test]
fn synchronous_delays_are_all_one() {
    let mut cfg = base_config(Mode::Synchronous, PolicyKind::Clip2, 4, 4);
    cfg.rounds = 10;
    cfg.client_groups = mixed_groups(4);
    let r = run_simulation(&cfg).unwrap();
    assert_eq!(r.delay_histogram().into_iter().collect::<Vec<_>>(), vec![(1, 40)]);
}

#[test]
fn same_seed_same_run_different_seed_different_run() {
    let mut cfg = base_config(Mode::ClientCentric, PolicyKind::Clip2SD, 6, 2);
    cfg.client_groups = mixed_groups(6);
    for s in 0..10u64 {
        cfg.seed = 2 * s;
        let a = full(&cfg);
        let b = full(&cfg);
        assert_eq!(bits(&a), bits(&b));
        cfg.seed = 2 * s + 1;
        let c = full(&cfg);
        assert_ne!(
            a.trajectory.as_ref().unwrap()[1],
            c.trajectory.as_ref().unwrap()[1],
            "seed pair {s}"
        );
    }
}

#[test]
fn single_client_is_deterministic() {
    for mode in [Mode::Synchronous, Mode::ServerCentric, Mode::ClientCentric] {
        let cfg = base_config(mode, PolicyKind::Clip2, 1, 1);
        assert_eq!(bits(&full(&cfg)), bits(&full(&cfg)));
    }
}

#[test]
fn async_invariants_hold() {
    for mode in [Mode::ServerCentric, Mode::ClientCentric] {
        for m in [1, 2, 5] {
            let mut cfg = base_config(mode, PolicyKind::Clip2DC, 7, m);
            cfg.client_groups = mixed_groups(7);
            cfg.rounds = 120;
            let r = full(&cfg);
            assert_eq!(r.records.len(), 120);

            // staleness floor
            assert!(r.records.iter().flat_map(|r| &r.delays).all(|p| *p >= 1));
            // strictly increasing aggregation clock (continuous runtimes)
            assert!(r.records.windows(2).all(|w| w[0].clock < w[1].clock), "{mode} M={m}");
            // conservation of work
            let j = r.jobs;
            assert_eq!(j.dispatched, j.consumed + j.in_flight + j.queued);
            assert_eq!(j.consumed, 120 * m as u64);

            let log = r.job_log.unwrap();
            // one job in flight per client
            for c in 0..7 {
                let mine: Vec<_> = log.iter().filter(|j| j.client_id == c).collect();
                for w in mine.windows(2) {
                    assert!(w[1].dispatch_time >= w[0].finish_time);
                }
            }
            // FIFO: consumption order follows arrival order
            let mut consumed: Vec<_> = log.iter().filter(|j| j.consumed_in.is_some()).collect();
            consumed.sort_by(|a, b| {
                a.finish_time
                    .total_cmp(&b.finish_time)
                    .then(a.client_id.cmp(&b.client_id))
            });
            assert!(consumed
                .windows(2)
                .all(|w| w[0].consumed_in <= w[1].consumed_in));
            // recorded delays agree with the job log
            for job in log.iter().filter(|j| j.consumed_in.is_some()) {
                let round = job.consumed_in.unwrap();
                let rec = &r.records[round as usize - 1];
                assert!(rec.delays.contains(&(round - job.base_round)));
            }
        }
    }
}

#[test]
fn server_centric_clients_start_only_at_broadcasts() {
    let mut cfg = base_config(Mode::ServerCentric, PolicyKind::Clip2, 6, 3);
    cfg.client_groups = mixed_groups(6);
    let r = full(&cfg);
    let clocks: Vec<f64> = r.records.iter().map(|r| r.clock).collect();
    for job in r.job_log.unwrap() {
        if job.dispatch_time > 0.0 {
            let round = job.base_round as usize;
            assert_eq!(clocks[round - 1], job.dispatch_time);
        } else {
            assert_eq!(job.base_round, 0);
        }
    }
}

#[test]
fn delay_compensation_needs_tracked_hessians() {
    let mut cfg = base_config(Mode::ClientCentric, PolicyKind::Clip2DC, 3, 1);
    cfg.track_hessian = false;
    let err = run_simulation(&cfg).unwrap_err();
    assert!(matches!(err, Error::PolicyViolation(_)), "{err}");
}

#[test]
fn tiny_history_overflows_under_staleness() {
    let mut cfg = base_config(Mode::ClientCentric, PolicyKind::SgdClip, 4, 1);
    cfg.client_groups = groups(&[(3, class(RuntimeClass::Small)), (1, class(RuntimeClass::LargeSevere))]);
    cfg.history_capacity = Some(2);
    let err = run_simulation(&cfg).unwrap_err();
    assert!(matches!(err, Error::StalenessOverflow { .. }), "{err}");
}

#[test]
fn default_history_never_overflows_in_extreme_mix() {
    let mut cfg = base_config(Mode::ClientCentric, PolicyKind::Clip2DC, 10, 1);
    cfg.client_groups = groups(&[(9, class(RuntimeClass::Small)), (1, class(RuntimeClass::LargeSevere))]);
    cfg.rounds = 2000;
    cfg.local_steps = 1;
    let r = run_simulation(&cfg).unwrap();
    let max_p = *r.delay_histogram().keys().last().unwrap();
    assert!(max_p > 100, "{max_p}");
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = base_config(Mode::ClientCentric, PolicyKind::SgdClip, 3, 4);
    assert!(matches!(run_simulation(&cfg), Err(Error::Config(_))));
    cfg.buffer_size = 1;
    cfg.rounds = 0;
    assert!(matches!(run_simulation(&cfg), Err(Error::Config(_))));
}
