#![allow(dead_code)]

use asyncclip::config::{ClientGroup, NoiseConfig, ScheduleConfig};
use asyncclip::noise::NoiseKind;
use asyncclip::sim::RuntimeProfile;
use asyncclip::{Mode, ProblemSpec, RunConfig, RuntimeClass};
use asyncclip::aggregator::PolicyKind;

pub fn quadratic(dim: usize) -> ProblemSpec {
    ProblemSpec::QuadraticDiag {
        dim,
        curvature_min: 0.5,
        curvature_max: 2.0,
        optimum_scale: 1.0,
    }
}

pub fn base_config(mode: Mode, policy: PolicyKind, n: usize, m: usize) -> RunConfig {
    RunConfig {
        mode,
        policy,
        clients: n,
        buffer_size: m,
        local_steps: 3,
        rounds: 50,
        seed: 11,
        track_hessian: policy == PolicyKind::Clip2DC,
        clip_mode: Default::default(),
        init: 1.0,
        history_capacity: None,
        problem: quadratic(6),
        noise: NoiseConfig {
            kind: NoiseKind::Gaussian,
            tail_index: 1.5,
            scale: 0.5,
        },
        schedules: ScheduleConfig::constant(1.0, 0.05, 1.0, 0.5),
        client_groups: vec![ClientGroup {
            count: n,
            runtime: RuntimeProfile::Class(RuntimeClass::Small),
        }],
        output: None,
    }
}

pub fn groups(spec: &[(usize, RuntimeProfile)]) -> Vec<ClientGroup> {
    spec.iter()
        .map(|(count, runtime)| ClientGroup {
            count: *count,
            runtime: *runtime,
        })
        .collect()
}

pub fn fixed(v: f64) -> RuntimeProfile {
    RuntimeProfile::Fixed { fixed: v }
}

pub fn class(c: RuntimeClass) -> RuntimeProfile {
    RuntimeProfile::Class(c)
}

pub fn mixed_groups(n: usize) -> Vec<ClientGroup> {
    let small = n / 2;
    let medium = n / 4;
    groups(&[
        (small, class(RuntimeClass::Small)),
        (medium, class(RuntimeClass::Medium)),
        (n - small - medium, class(RuntimeClass::LargeSevere)),
    ])
}
