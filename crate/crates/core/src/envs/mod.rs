//! Native desk-scale environments.
//!
//! * `twinpeaks1d`: a one-step contextual bandit. The state is uniform on
//!   `[-1, 1]` and carries no information; the reward has two equal peaks at
//!   `a = ±0.7` and a valley at `a = 0`, so the mean of a bimodal expert is the
//!   worst action in its support.
//! * `pointmass2d`: a damped point mass driven towards the goal `(1, 1)`.

mod policy;
mod rollout;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use policy::{Actor, FnActor, PolicyTier, ScriptedPolicy};
pub use rollout::{
    collect_dataset, evaluate_policy, load_references, measure_reference_returns, rollout_episode,
    save_references, EpisodeResult, EvalResult, ReferenceReturns, REFERENCE_EPISODES, REFERENCE_SEED,
};

use crate::error::{ensure_len, Error, Result};
use crate::numkit::Rng;

pub const TWINPEAKS_MODE: f64 = 0.7;
/// Variance of each reward peak.
pub const TWINPEAKS_PEAK_VAR: f64 = 0.01;
pub const POINTMASS_GOAL: [f64; 2] = [1.0, 1.0];
pub const POINTMASS_START: [f64; 2] = [-1.0, -1.0];
pub const POINTMASS_GOAL_RADIUS: f64 = 0.05;
pub const POINTMASS_GOAL_BONUS: f64 = 10.0;
pub const POINTMASS_DT: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "twinpeaks1d")]
    TwinPeaks1d,
    #[serde(rename = "pointmass2d")]
    PointMass2d,
}

impl EnvKind {
    pub const ALL: [EnvKind; 2] = [EnvKind::TwinPeaks1d, EnvKind::PointMass2d];

    pub fn name(self) -> &'static str {
        match self {
            EnvKind::TwinPeaks1d => "twinpeaks1d",
            EnvKind::PointMass2d => "pointmass2d",
        }
    }

    pub fn obs_dim(self) -> usize {
        match self {
            EnvKind::TwinPeaks1d => 1,
            EnvKind::PointMass2d => 4,
        }
    }

    pub fn act_dim(self) -> usize {
        match self {
            EnvKind::TwinPeaks1d => 1,
            EnvKind::PointMass2d => 2,
        }
    }

    pub fn horizon(self) -> usize {
        match self {
            EnvKind::TwinPeaks1d => 1,
            EnvKind::PointMass2d => 100,
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EnvKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown env '{s}' (expected twinpeaks1d or pointmass2d)")))
    }
}

/// Static description of an environment plus its scoring anchors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub horizon: usize,
    pub action_bound: f64,
    pub reference: ReferenceReturns,
}

impl EnvSpec {
    /// Spec with reference returns measured by the seeded procedure in
    /// [`measure_reference_returns`] (computed once per process).
    pub fn new(kind: EnvKind) -> Self {
        Self::with_reference(kind, rollout::cached_reference(kind))
    }

    pub fn with_reference(kind: EnvKind, reference: ReferenceReturns) -> Self {
        Self {
            kind,
            obs_dim: kind.obs_dim(),
            act_dim: kind.act_dim(),
            horizon: kind.horizon(),
            action_bound: 1.0,
            reference,
        }
    }

    /// `100 · (J − J_rand) / (J_exp − J_rand)`.
    pub fn normalized_score(&self, ret: f64) -> f64 {
        100.0 * (ret - self.reference.random) / (self.reference.expert - self.reference.random)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub terminal: bool,
}

pub fn twinpeaks_reward(a: f64) -> f64 {
    let peak = |c: f64| (-(a - c).powi(2) / (2.0 * TWINPEAKS_PEAK_VAR)).exp();
    peak(TWINPEAKS_MODE) + peak(-TWINPEAKS_MODE)
}

pub fn twinpeaks_step(s: &[f64], a: &[f64]) -> Result<StepOutcome> {
    ensure_len("twinpeaks state", 1, s.len())?;
    ensure_len("twinpeaks action", 1, a.len())?;
    Ok(StepOutcome {
        next_state: s.to_vec(),
        reward: twinpeaks_reward(a[0]),
        terminal: true,
    })
}

/// State is `(px, py, vx, vy)`.
pub fn pointmass_step(s: &[f64], a: &[f64]) -> Result<StepOutcome> {
    ensure_len("pointmass state", 4, s.len())?;
    ensure_len("pointmass action", 2, a.len())?;
    let mut next = vec![0.0; 4];
    for d in 0..2 {
        let v = (s[2 + d] + POINTMASS_DT * a[d]).clamp(-1.0, 1.0);
        next[2 + d] = v;
        next[d] = (s[d] + POINTMASS_DT * v).clamp(-2.0, 2.0);
    }
    let dist = ((next[0] - POINTMASS_GOAL[0]).powi(2) + (next[1] - POINTMASS_GOAL[1]).powi(2)).sqrt();
    let terminal = dist < POINTMASS_GOAL_RADIUS;
    let reward = if terminal { -dist + POINTMASS_GOAL_BONUS } else { -dist };
    Ok(StepOutcome {
        next_state: next,
        reward,
        terminal,
    })
}

/// A running episode. Actions are clipped to the bounds before stepping.
#[derive(Debug, Clone)]
pub struct Env {
    kind: EnvKind,
    state: Vec<f64>,
    t: usize,
}

impl Env {
    pub fn reset(kind: EnvKind, rng: &mut Rng) -> Self {
        let state = match kind {
            EnvKind::TwinPeaks1d => vec![rng.uniform_range(-1.0, 1.0)],
            EnvKind::PointMass2d => vec![POINTMASS_START[0], POINTMASS_START[1], 0.0, 0.0],
        };
        Self { kind, state, t: 0 }
    }

    pub fn kind(&self) -> EnvKind {
        self.kind
    }

    pub fn state(&self) -> &[f64] {
        &self.state
    }

    pub fn elapsed(&self) -> usize {
        self.t
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::NonFinite("env action".into()));
        }
        let a: Vec<f64> = action.iter().map(|a| a.clamp(-1.0, 1.0)).collect();
        let out = match self.kind {
            EnvKind::TwinPeaks1d => twinpeaks_step(&self.state, &a)?,
            EnvKind::PointMass2d => pointmass_step(&self.state, &a)?,
        };
        self.state.clone_from(&out.next_state);
        self.t += 1;
        Ok(out)
    }

    /// Horizon reached or terminal state entered.
    pub fn truncated(&self) -> bool {
        self.t >= self.kind.horizon()
    }
}
