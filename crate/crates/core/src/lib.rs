//! Asynchronous clipped optimization under heavy-tailed gradient noise.
//!
//! The crate bundles a deterministic discrete-event simulator of a
//! parameter server with `N` heterogeneous clients, the client-side clipped
//! local optimizer, and five server aggregation policies:
//!
//! * `SgdClip`: clipped local steps, plain averaged outer step.
//! * `Clip2`: clipped local steps, coordinate-wise clipped outer step.
//! * `SgdClipSD` / `Clip2SD`: the above with staleness-aware downplaying,
//!   every consumed delta divided by its delay `p`.
//! * `Clip2DC`: `Clip2` with delay compensation through a diagonal
//!   Hessian approximation accumulated by the clients.
//!
//! Everything is reproducible from a single master seed.

pub mod acceptance;
pub mod aggregator;
pub mod clip;
pub mod config;
pub mod error;
pub mod metrics;
pub mod noise;
pub mod problems;
pub mod rng;
pub mod sim;
pub mod sweep;
pub mod vector;
pub mod worker;

mod serde_ext;

pub use aggregator::{AggregationPolicy, PolicyKind, ServerState};
pub use clip::{clip, PowerSchedule, PresetName, SchedulePreset, ScheduleSet};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use metrics::{MetricsRecord, RunResult};
pub use noise::{NoiseKind, NoiseSpec};
pub use problems::{Problem, ProblemSpec};
pub use sim::{run_simulation, Mode, RuntimeClass, SimOptions};
pub use vector::ModelVector;
pub use worker::ClientUpdate;
