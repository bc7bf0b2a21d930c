//! Clipping operators and power-law schedules.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vector::norm;

/// Coordinate-wise clipping: `out_i = sign(g_i) * min(|g_i|, u)`.
///
/// `u = inf` is the identity.
pub fn clip(u: f64, g: &[f64]) -> Result<Vec<f64>> {
    let mut out = g.to_vec();
    clip_in_place(u, &mut out)?;
    Ok(out)
}

pub fn clip_in_place(u: f64, g: &mut [f64]) -> Result<()> {
    check_threshold(u)?;
    for v in g.iter_mut() {
        // clamp returns `v` untouched when it already lies in [-u, u]
        *v = v.clamp(-u, u);
    }
    Ok(())
}

/// Rescales `g` onto the L2 ball of radius `u` when it lies outside.
pub fn clip_l2(u: f64, g: &[f64]) -> Result<Vec<f64>> {
    check_threshold(u)?;
    let n = norm(g);
    if n <= u {
        return Ok(g.to_vec());
    }
    let s = u / n;
    Ok(g.iter().map(|v| v * s).collect())
}

fn check_threshold(u: f64) -> Result<()> {
    if u >= 0.0 {
        Ok(())
    } else {
        Err(Error::arg(format!("clipping threshold must be >= 0, got {u}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClipMode {
    #[default]
    Coordinate,
    L2,
}

impl ClipMode {
    pub fn apply(self, u: f64, g: &[f64]) -> Result<Vec<f64>> {
        match self {
            ClipMode::Coordinate => clip(u, g),
            ClipMode::L2 => clip_l2(u, g),
        }
    }
}

/// `value(t) = max(base * t^exponent, floor)` for 1-indexed rounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerSchedule {
    #[serde(with = "crate::serde_ext")]
    pub base: f64,
    #[serde(default)]
    pub exponent: f64,
    #[serde(default)]
    pub floor: f64,
}

impl PowerSchedule {
    pub fn new(base: f64, exponent: f64, floor: f64) -> Self {
        PowerSchedule {
            base,
            exponent,
            floor,
        }
    }

    pub fn constant(value: f64) -> Self {
        PowerSchedule::new(value, 0.0, 0.0)
    }

    pub fn power(base: f64, exponent: f64) -> Self {
        PowerSchedule::new(base, exponent, 0.0)
    }

    pub fn infinite() -> Self {
        PowerSchedule::constant(f64::INFINITY)
    }

    pub fn is_infinite(&self) -> bool {
        self.base == f64::INFINITY
    }

    pub fn validate(&self, what: &str) -> Result<()> {
        if !(self.base >= 0.0) || !self.exponent.is_finite() {
            return Err(Error::config(format!(
                "{what}: schedule needs base >= 0 and a finite exponent, got {self:?}"
            )));
        }
        if !(self.floor >= 0.0) {
            return Err(Error::config(format!("{what}: floor must be >= 0")));
        }
        Ok(())
    }

    pub fn value(&self, t: u64) -> Result<f64> {
        if t == 0 {
            return Err(Error::arg("schedules are 1-indexed; round 0 has no value"));
        }
        Ok(self.value_unchecked(t))
    }

    pub(crate) fn value_unchecked(&self, t: u64) -> f64 {
        let v = if self.exponent == 0.0 {
            self.base
        } else {
            self.base * (t as f64).powf(self.exponent)
        };
        v.max(self.floor)
    }

    /// The same law frozen at the horizon: a constant `base * T^exponent`.
    pub fn frozen_at(&self, horizon: u64) -> Result<PowerSchedule> {
        Ok(PowerSchedule::new(self.value(horizon)?, 0.0, 0.0))
    }
}

pub fn schedule_value(s: &PowerSchedule, t: u64) -> Result<f64> {
    s.value(t)
}

/// The four schedules of one run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSet {
    /// Server learning rate `eta_t`.
    pub outer_lr: PowerSchedule,
    /// Client learning rate `eta_l`.
    pub local_lr: PowerSchedule,
    /// Client clipping threshold `u`.
    pub local_clip: PowerSchedule,
    /// Server clipping threshold `u~`.
    pub outer_clip: PowerSchedule,
}

impl ScheduleSet {
    pub fn constant(outer_lr: f64, local_lr: f64, local_clip: f64, outer_clip: f64) -> Self {
        ScheduleSet {
            outer_lr: PowerSchedule::constant(outer_lr),
            local_lr: PowerSchedule::constant(local_lr),
            local_clip: PowerSchedule::constant(local_clip),
            outer_clip: PowerSchedule::constant(outer_clip),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.outer_lr.validate("outer_lr")?;
        self.local_lr.validate("local_lr")?;
        self.local_clip.validate("local_clip")?;
        self.outer_clip.validate("outer_clip")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PresetName {
    SGDClipVanilla,
    Clip2Vanilla,
    Clip2VanillaAlt,
    SDSGDClip,
    SDClip2,
    DCClip2,
    Constant,
}

/// Exponents `(omega, nu, zeta, zeta_tilde)` of the outer rate, local rate,
/// local threshold and outer threshold. `zeta_tilde = None` means no server
/// clipping.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Exponents {
    pub outer_lr: f64,
    pub local_lr: f64,
    pub local_clip: f64,
    pub outer_clip: Option<f64>,
}

/// Convergence exponent `r` (rate `T^-r`) and delay tolerance exponent
/// (`tau <= O(T^e)`) claimed for a preset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoreticalRates {
    pub convergence: f64,
    pub delay_tolerance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulePreset {
    pub name: PresetName,
    pub alpha: f64,
    pub horizon: u64,
}

impl SchedulePreset {
    pub fn new(name: PresetName, alpha: f64, horizon: u64) -> Self {
        SchedulePreset {
            name,
            alpha,
            horizon,
        }
    }

    fn check_alpha(&self) -> Result<()> {
        if self.alpha > 1.0 && self.alpha < 2.0 {
            Ok(())
        } else {
            Err(Error::config(format!(
                "preset alpha must lie in (1, 2), got {}",
                self.alpha
            )))
        }
    }

    pub fn exponents(&self) -> Result<Exponents> {
        self.check_alpha()?;
        let a = self.alpha;
        Ok(match self.name {
            // beta = (a+1)/(2a): omega = -beta/(a+1), nu = -beta a/(a+1), zeta = beta/(a+1)
            PresetName::SGDClipVanilla | PresetName::SDSGDClip => Exponents {
                outer_lr: -1.0 / (2.0 * a),
                local_lr: -0.5,
                local_clip: 1.0 / (2.0 * a),
                outer_clip: None,
            },
            PresetName::Clip2Vanilla | PresetName::DCClip2 | PresetName::SDClip2 => Exponents {
                outer_lr: -0.5,
                local_lr: -a / (4.0 * a - 2.0),
                local_clip: 1.0 / (4.0 * a - 2.0),
                outer_clip: Some(0.0),
            },
            PresetName::Clip2VanillaAlt => Exponents {
                outer_lr: -0.75 + 1.0 / (4.0 * a),
                local_lr: -1.0 / (2.0 * a),
                local_clip: 1.0 / (4.0 * a),
                outer_clip: Some(0.0),
            },
            PresetName::Constant => Exponents {
                outer_lr: 0.0,
                local_lr: 0.0,
                local_clip: 0.0,
                outer_clip: Some(0.0),
            },
        })
    }

    /// Round-indexed schedules with unit bases.
    pub fn resolve(&self) -> Result<ScheduleSet> {
        let e = self.exponents()?;
        Ok(ScheduleSet {
            outer_lr: PowerSchedule::power(1.0, e.outer_lr),
            local_lr: PowerSchedule::power(1.0, e.local_lr),
            local_clip: PowerSchedule::power(1.0, e.local_clip),
            outer_clip: match e.outer_clip {
                Some(z) => PowerSchedule::power(1.0, z),
                None => PowerSchedule::infinite(),
            },
        })
    }

    /// Constant schedules `T^exponent` at the preset horizon.
    pub fn resolve_at_horizon(&self) -> Result<ScheduleSet> {
        if self.horizon == 0 {
            return Err(Error::config("preset horizon must be >= 1"));
        }
        let s = self.resolve()?;
        Ok(ScheduleSet {
            outer_lr: s.outer_lr.frozen_at(self.horizon)?,
            local_lr: s.local_lr.frozen_at(self.horizon)?,
            local_clip: s.local_clip.frozen_at(self.horizon)?,
            outer_clip: s.outer_clip.frozen_at(self.horizon)?,
        })
    }

    pub fn theoretical_rates(&self) -> Result<Option<TheoreticalRates>> {
        self.check_alpha()?;
        let a = self.alpha;
        Ok(match self.name {
            PresetName::SGDClipVanilla | PresetName::SDSGDClip => Some(TheoreticalRates {
                convergence: (a - 1.0) / (2.0 * a),
                delay_tolerance: 1.0 / (2.0 * a),
            }),
            PresetName::Clip2Vanilla | PresetName::DCClip2 => Some(TheoreticalRates {
                convergence: (a - 1.0) / (4.0 * a - 2.0),
                delay_tolerance: a / (4.0 * a - 2.0),
            }),
            PresetName::Clip2VanillaAlt => Some(TheoreticalRates {
                convergence: (a - 1.0) / (4.0 * a),
                delay_tolerance: 0.5,
            }),
            PresetName::SDClip2 => Some(TheoreticalRates {
                convergence: (3.0 * (a - 1.0) / 8.0).min((a - 1.0) / (4.0 * a)),
                delay_tolerance: 0.25 + 1.0 / (4.0 * a),
            }),
            PresetName::Constant => None,
        })
    }
}

pub fn resolve_preset(p: &SchedulePreset) -> Result<ScheduleSet> {
    p.resolve()
}
