//! Server-side aggregation of buffered client updates.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clip::{ClipMode, PowerSchedule};
use crate::error::{Error, Result};
use crate::vector::{check_dim, ModelVector};
use crate::worker::ClientUpdate;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    SgdClip,
    Clip2,
    SgdClipSD,
    Clip2SD,
    Clip2DC,
}

impl PolicyKind {
    pub const ALL: [PolicyKind; 5] = [
        PolicyKind::SgdClip,
        PolicyKind::Clip2,
        PolicyKind::SgdClipSD,
        PolicyKind::Clip2SD,
        PolicyKind::Clip2DC,
    ];

    /// Deltas are divided by their delay before averaging.
    pub fn downplays_staleness(self) -> bool {
        matches!(self, PolicyKind::SgdClipSD | PolicyKind::Clip2SD)
    }

    /// The server step is clipped.
    pub fn clips_outer(self) -> bool {
        matches!(
            self,
            PolicyKind::Clip2 | PolicyKind::Clip2SD | PolicyKind::Clip2DC
        )
    }

    pub fn compensates_delay(self) -> bool {
        self == PolicyKind::Clip2DC
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PolicyKind::SgdClip => "SgdClip",
            PolicyKind::Clip2 => "Clip2",
            PolicyKind::SgdClipSD => "SgdClipSD",
            PolicyKind::Clip2SD => "Clip2SD",
            PolicyKind::Clip2DC => "Clip2DC",
        }
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyKind::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unknown policy {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AggregationPolicy {
    pub kind: PolicyKind,
    pub outer_lr: PowerSchedule,
    /// Ignored by the `SgdClip` kinds.
    pub outer_clip: PowerSchedule,
    pub clip_mode: ClipMode,
}

impl AggregationPolicy {
    pub fn new(kind: PolicyKind, outer_lr: PowerSchedule, outer_clip: PowerSchedule) -> Self {
        AggregationPolicy {
            kind,
            outer_lr,
            outer_clip,
            clip_mode: ClipMode::Coordinate,
        }
    }
}

/// Bounded window of past global models keyed by round.
#[derive(Clone, Debug)]
pub struct ModelHistory {
    models: VecDeque<ModelVector>,
    oldest_round: u64,
    capacity: usize,
}

impl ModelHistory {
    pub fn new(x0: ModelVector, capacity: usize) -> Self {
        let capacity = capacity.max(1);
        let mut models = VecDeque::with_capacity(capacity.min(4096));
        models.push_back(x0);
        ModelHistory {
            models,
            oldest_round: 0,
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn oldest_round(&self) -> u64 {
        self.oldest_round
    }

    pub fn latest_round(&self) -> u64 {
        self.oldest_round + self.models.len() as u64 - 1
    }

    fn push(&mut self, x: ModelVector) {
        if self.models.len() == self.capacity {
            self.models.pop_front();
            self.oldest_round += 1;
        }
        self.models.push_back(x);
    }

    pub fn get(&self, round: u64) -> Option<&ModelVector> {
        if round < self.oldest_round || round > self.latest_round() {
            return None;
        }
        self.models.get((round - self.oldest_round) as usize)
    }

    fn lookup(&self, update: &ClientUpdate) -> Result<&ModelVector> {
        if update.base_round > self.latest_round() {
            return Err(Error::arg(format!(
                "update from client {} is based on future round {}",
                update.client_id, update.base_round
            )));
        }
        self.get(update.base_round)
            .ok_or(Error::StalenessOverflow {
                client_id: update.client_id,
                round: update.base_round,
                oldest: self.oldest_round,
                capacity: self.capacity,
            })
    }
}

/// What one aggregation did.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregationOutcome {
    /// The produced round `t`.
    pub round: u64,
    /// `Delta_t`, or the corrected `g^_t` for `Clip2DC`, before clipping.
    pub pseudo_grad: Vec<f64>,
    /// Applied step before the learning rate (clipped where the policy clips).
    pub step: Vec<f64>,
    /// `p_{t,i}` of every consumed update, in consumption order.
    pub delays: Vec<u64>,
}

#[derive(Clone, Debug)]
pub struct ServerState {
    x: ModelVector,
    t: u64,
    history: ModelHistory,
    policy: AggregationPolicy,
}

impl ServerState {
    pub fn new(x0: ModelVector, policy: AggregationPolicy, history_capacity: usize) -> Self {
        ServerState {
            history: ModelHistory::new(x0.clone(), history_capacity),
            x: x0,
            t: 0,
            policy,
        }
    }

    pub fn x(&self) -> &ModelVector {
        &self.x
    }

    pub fn round(&self) -> u64 {
        self.t
    }

    pub fn policy(&self) -> &AggregationPolicy {
        &self.policy
    }

    pub fn history(&self) -> &ModelHistory {
        &self.history
    }

    /// Delay `p = t' - base_round` against the round about to be produced.
    pub fn delay_of(&self, update: &ClientUpdate) -> u64 {
        (self.t + 1).saturating_sub(update.base_round)
    }

    fn check_updates(&self, updates: &[ClientUpdate]) -> Result<()> {
        if updates.is_empty() {
            return Err(Error::arg("aggregation needs at least one update"));
        }
        for u in updates {
            check_dim(self.x.dim(), u.delta.len())?;
            self.history.lookup(u)?;
        }
        Ok(())
    }

    /// `(1/M) sum_i delta_i`, or `(1/M) sum_i delta_i / p_i` for SD kinds.
    pub fn compute_delta(&self, updates: &[ClientUpdate]) -> Result<Vec<f64>> {
        self.check_updates(updates)?;
        let mut sum = vec![0.0; self.x.dim()];
        let sd = self.policy.kind.downplays_staleness();
        for u in updates {
            if sd {
                let p = self.delay_of(u) as f64;
                for (s, d) in sum.iter_mut().zip(&u.delta) {
                    *s += d / p;
                }
            } else {
                for (s, d) in sum.iter_mut().zip(&u.delta) {
                    *s += d;
                }
            }
        }
        let m = updates.len() as f64;
        sum.iter_mut().for_each(|s| *s /= m);
        Ok(sum)
    }

    /// `Delta - (1/M) sum_i A_i (x_{t-1} - x_{base_i})`.
    pub fn dc_correct(&self, updates: &[ClientUpdate], delta: &[f64]) -> Result<Vec<f64>> {
        self.check_updates(updates)?;
        check_dim(self.x.dim(), delta.len())?;
        let mut correction = vec![0.0; self.x.dim()];
        for u in updates {
            let a = u.hessian_approx.as_ref().ok_or_else(|| {
                Error::PolicyViolation(format!(
                    "{} needs a hessian approximation but client {} sent none \
                     (enable track_hessian)",
                    self.policy.kind, u.client_id
                ))
            })?;
            check_dim(self.x.dim(), a.len())?;
            let base = self.history.lookup(u)?;
            for j in 0..correction.len() {
                correction[j] += a[j] * (self.x[j] - base[j]);
            }
        }
        let m = updates.len() as f64;
        Ok(delta
            .iter()
            .zip(&correction)
            .map(|(d, c)| d - c / m)
            .collect())
    }

    /// Consumes one buffer of updates and produces round `t + 1`.
    pub fn aggregate(&mut self, updates: &[ClientUpdate]) -> Result<AggregationOutcome> {
        let next = self.t + 1;
        let delta = self.compute_delta(updates)?;
        let pseudo_grad = if self.policy.kind.compensates_delay() {
            self.dc_correct(updates, &delta)?
        } else {
            delta
        };
        let step = if self.policy.kind.clips_outer() {
            let u = self.policy.outer_clip.value(next)?;
            self.policy.clip_mode.apply(u, &pseudo_grad)?
        } else {
            pseudo_grad.clone()
        };
        let eta = self.policy.outer_lr.value(next)?;
        for (x, s) in self.x.iter_mut().zip(&step) {
            *x += eta * s;
        }
        let delays = updates.iter().map(|u| self.delay_of(u)).collect();
        self.t = next;
        self.history.push(self.x.clone());
        Ok(AggregationOutcome {
            round: next,
            pseudo_grad,
            step,
            delays,
        })
    }
}
