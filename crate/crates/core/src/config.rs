//! Experiment description and its TOML representation.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregator::{AggregationPolicy, PolicyKind};
use crate::clip::{ClipMode, PowerSchedule, PresetName, SchedulePreset, ScheduleSet};
use crate::error::{Error, Result};
use crate::noise::{NoiseKind, NoiseSpec};
use crate::problems::ProblemSpec;
use crate::sim::{Mode, RuntimeProfile};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub policy: PolicyKind,
    /// `N`.
    pub clients: usize,
    /// `M`, updates consumed per aggregation.
    pub buffer_size: usize,
    /// `K`.
    pub local_steps: usize,
    /// `T`, number of aggregations.
    pub rounds: u64,
    pub seed: u64,
    /// Clients accumulate the diagonal Hessian approximation (needed by `Clip2DC`).
    #[serde(default)]
    pub track_hessian: bool,
    #[serde(default)]
    pub clip_mode: ClipMode,
    /// Starting point: the optimum shifted by `init` in every coordinate.
    #[serde(default = "default_init")]
    pub init: f64,
    /// Rounds of global models kept for delay bookkeeping; derived from the
    /// runtime profiles when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub history_capacity: Option<usize>,
    pub problem: ProblemSpec,
    pub noise: NoiseConfig,
    #[serde(default)]
    pub schedules: ScheduleConfig,
    pub client_groups: Vec<ClientGroup>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

fn default_init() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseConfig {
    pub kind: NoiseKind,
    #[serde(default = "default_alpha")]
    pub tail_index: f64,
    #[serde(default = "default_one")]
    pub scale: f64,
}

fn default_alpha() -> f64 {
    1.5
}
fn default_one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClientGroup {
    pub count: usize,
    pub runtime: RuntimeProfile,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

/// Partial override of one preset schedule.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleOverride {
    #[serde(
        default,
        with = "crate::serde_ext::option",
        skip_serializing_if = "Option::is_none"
    )]
    pub base: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exponent: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub floor: Option<f64>,
}

impl ScheduleOverride {
    pub fn base(base: f64) -> Self {
        ScheduleOverride {
            base: Some(base),
            ..Default::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        *self == ScheduleOverride::default()
    }

    fn apply(&self, s: PowerSchedule) -> PowerSchedule {
        // An explicit base on an infinite (disabled) schedule turns it into a
        // constant threshold unless an exponent is given too.
        let exponent = match (self.exponent, s.is_infinite() && self.base.is_some()) {
            (Some(e), _) => e,
            (None, true) => 0.0,
            (None, false) => s.exponent,
        };
        PowerSchedule {
            base: self.base.unwrap_or(s.base),
            exponent,
            floor: self.floor.unwrap_or(s.floor),
        }
    }
}

/// Preset exponents plus per-schedule overrides of the constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    #[serde(default = "default_preset")]
    pub preset: PresetName,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Freeze every schedule at `c * horizon^e` instead of `c * t^e`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(default, skip_serializing_if = "ScheduleOverride::is_empty")]
    pub outer_lr: ScheduleOverride,
    #[serde(default, skip_serializing_if = "ScheduleOverride::is_empty")]
    pub local_lr: ScheduleOverride,
    #[serde(default, skip_serializing_if = "ScheduleOverride::is_empty")]
    pub local_clip: ScheduleOverride,
    #[serde(default, skip_serializing_if = "ScheduleOverride::is_empty")]
    pub outer_clip: ScheduleOverride,
}

fn default_preset() -> PresetName {
    PresetName::Constant
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            preset: default_preset(),
            alpha: default_alpha(),
            horizon: None,
            outer_lr: Default::default(),
            local_lr: Default::default(),
            local_clip: Default::default(),
            outer_clip: Default::default(),
        }
    }
}

impl ScheduleConfig {
    pub fn preset(name: PresetName, alpha: f64) -> Self {
        ScheduleConfig {
            preset: name,
            alpha,
            ..Default::default()
        }
    }

    /// All four schedules constant.
    pub fn constant(outer_lr: f64, local_lr: f64, local_clip: f64, outer_clip: f64) -> Self {
        ScheduleConfig {
            outer_lr: ScheduleOverride::base(outer_lr),
            local_lr: ScheduleOverride::base(local_lr),
            local_clip: ScheduleOverride::base(local_clip),
            outer_clip: ScheduleOverride::base(outer_clip),
            ..Default::default()
        }
    }

    pub fn resolve(&self) -> Result<ScheduleSet> {
        let preset = SchedulePreset::new(self.preset, self.alpha, self.horizon.unwrap_or(1));
        let s = preset.resolve()?;
        let mut set = ScheduleSet {
            outer_lr: self.outer_lr.apply(s.outer_lr),
            local_lr: self.local_lr.apply(s.local_lr),
            local_clip: self.local_clip.apply(s.local_clip),
            outer_clip: self.outer_clip.apply(s.outer_clip),
        };
        if let Some(h) = self.horizon {
            if h == 0 {
                return Err(Error::config("schedules.horizon must be >= 1"));
            }
            set = ScheduleSet {
                outer_lr: set.outer_lr.frozen_at(h)?,
                local_lr: set.local_lr.frozen_at(h)?,
                local_clip: set.local_clip.frozen_at(h)?,
                outer_clip: set.outer_clip.frozen_at(h)?,
            };
        }
        set.validate()?;
        Ok(set)
    }
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse {
            what: "run config".into(),
            message: e.to_string(),
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse {
            what: "run config".into(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                what: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// Applies `key=value` overrides (dotted keys address nested tables,
    /// values are TOML literals, falling back to plain strings).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut value = toml::Value::try_from(self).map_err(|e| Error::Parse {
            what: "run config".into(),
            message: e.to_string(),
        })?;
        for o in overrides {
            apply_override(&mut value, o.as_ref())?;
        }
        value.try_into().map_err(|e: toml::de::Error| Error::Parse {
            what: "run config after overrides".into(),
            message: e.to_string(),
        })
    }

    pub fn dim(&self) -> usize {
        self.problem.dim()
    }

    pub fn noise_spec(&self) -> NoiseSpec {
        NoiseSpec::new(
            self.noise.kind,
            self.noise.tail_index,
            self.noise.scale,
            self.dim(),
        )
    }

    pub fn schedule_set(&self) -> Result<ScheduleSet> {
        self.schedules.resolve()
    }

    pub fn aggregation_policy(&self) -> Result<AggregationPolicy> {
        let s = self.schedule_set()?;
        Ok(AggregationPolicy {
            kind: self.policy,
            outer_lr: s.outer_lr,
            outer_clip: s.outer_clip,
            clip_mode: self.clip_mode,
        })
    }

    /// Runtime profile of every client, in client-id order.
    pub fn client_profiles(&self) -> Vec<RuntimeProfile> {
        self.client_groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.runtime, g.count))
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients == 0 {
            return Err(Error::config("clients (N) must be at least 1"));
        }
        if self.buffer_size == 0 || self.buffer_size > self.clients {
            return Err(Error::config(format!(
                "buffer_size must satisfy 1 ≤ M ≤ N, got M={} N={}",
                self.buffer_size, self.clients
            )));
        }
        if self.rounds == 0 {
            return Err(Error::config("rounds (T) must be at least 1"));
        }
        if self.local_steps == 0 {
            return Err(Error::config("local_steps (K) must be at least 1"));
        }
        if !self.init.is_finite() {
            return Err(Error::config("init must be finite"));
        }
        if self.history_capacity == Some(0) {
            return Err(Error::config("history_capacity must be at least 1"));
        }
        let total: usize = self.client_groups.iter().map(|g| g.count).sum();
        if total != self.clients {
            return Err(Error::config(format!(
                "client_groups counts sum to {total}, expected clients = {}",
                self.clients
            )));
        }
        for g in &self.client_groups {
            g.runtime.validate()?;
        }
        self.problem.validate()?;
        self.noise_spec().validate()?;
        self.schedule_set()?;
        Ok(())
    }
}

fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::arg(format!("override {spec:?} is not key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let parsed = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::arg(format!("bad override key {key:?}")));
    }
    let mut node = root;
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::arg(format!("override key {key:?} crosses a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::arg(format!("override key {key:?} crosses a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
