use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{EnvKind, POINTMASS_GOAL, TWINPEAKS_MODE};
use crate::error::{Error, Result};
use crate::numkit::Rng;

/// Anything that maps an observation to an action. Deterministic actors
/// simply ignore `rng`.
pub trait Actor {
    fn act(&mut self, obs: &[f64], rng: &mut Rng) -> Result<Vec<f64>>;
}

/// Adapts a closure into an [`Actor`].
pub struct FnActor<F>(pub F);

impl<F> Actor for FnActor<F>
where
    F: FnMut(&[f64], &mut Rng) -> Result<Vec<f64>>,
{
    fn act(&mut self, obs: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        (self.0)(obs, rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyTier {
    Random,
    Medium,
    Expert,
}

impl PolicyTier {
    pub const ALL: [PolicyTier; 3] = [PolicyTier::Random, PolicyTier::Medium, PolicyTier::Expert];

    pub fn name(self) -> &'static str {
        match self {
            PolicyTier::Random => "random",
            PolicyTier::Medium => "medium",
            PolicyTier::Expert => "expert",
        }
    }
}

impl fmt::Display for PolicyTier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyTier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PolicyTier::ALL
            .into_iter()
            .find(|t| t.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown policy '{s}' (expected random, medium or expert)")))
    }
}

/// Hand-written behavior policies used to generate datasets and the scoring
/// anchors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScriptedPolicy {
    pub env: EnvKind,
    pub tier: PolicyTier,
}

impl ScriptedPolicy {
    pub fn new(env: EnvKind, tier: PolicyTier) -> Self {
        Self { env, tier }
    }

    /// Noise-free PD controller `clip(2(g − p) − v, ±1)`.
    pub fn pointmass_controller(obs: &[f64]) -> Vec<f64> {
        (0..2)
            .map(|d| (2.0 * (POINTMASS_GOAL[d] - obs[d]) - obs[2 + d]).clamp(-1.0, 1.0))
            .collect()
    }
}

impl Actor for ScriptedPolicy {
    fn act(&mut self, obs: &[f64], rng: &mut Rng) -> Result<Vec<f64>> {
        let act_dim = self.env.act_dim();
        if self.tier == PolicyTier::Random {
            return Ok((0..act_dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect());
        }
        Ok(match self.env {
            EnvKind::TwinPeaks1d => {
                let sd = if self.tier == PolicyTier::Expert { 0.05 } else { 0.25 };
                let mode = if rng.bernoulli(0.5) { TWINPEAKS_MODE } else { -TWINPEAKS_MODE };
                vec![(mode + sd * rng.normal()).clamp(-1.0, 1.0)]
            }
            EnvKind::PointMass2d => {
                let sd = if self.tier == PolicyTier::Expert { 0.1 } else { 0.5 };
                Self::pointmass_controller(obs)
                    .into_iter()
                    .map(|a| (a + sd * rng.normal()).clamp(-1.0, 1.0))
                    .collect()
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_tier_is_uniform() {
        let mut p = ScriptedPolicy::new(EnvKind::TwinPeaks1d, PolicyTier::Random);
        let mut rng = Rng::new(0);
        let n = 100_000;
        let mut bins = [0usize; 10];
        for _ in 0..n {
            let a = p.act(&[0.0], &mut rng).unwrap()[0];
            assert!((-1.0..=1.0).contains(&a));
            bins[(((a + 1.0) / 0.2) as usize).min(9)] += 1;
        }
        let sigma = (n as f64 * 0.1 * 0.9).sqrt();
        for b in bins {
            assert!((b as f64 - n as f64 * 0.1).abs() < 3.0 * sigma, "{bins:?}");
        }
    }

    #[test]
    fn twinpeaks_expert_is_bimodal_and_rewarding() {
        let mut p = ScriptedPolicy::new(EnvKind::TwinPeaks1d, PolicyTier::Expert);
        let mut rng = Rng::new(1);
        let n = 10_000;
        let (mut reward, mut positive) = (0.0, 0);
        for _ in 0..n {
            let a = p.act(&[0.0], &mut rng).unwrap()[0];
            reward += super::super::twinpeaks_reward(a);
            positive += (a > 0.0) as usize;
        }
        // Analytic expectation: 1/√(1 + 0.05²/0.01) ≈ 0.894.
        assert!(reward / n as f64 > 0.85);
        assert!((positive as f64 / n as f64 - 0.5).abs() < 0.03);
    }

    #[test]
    fn tier_names_parse() {
        assert_eq!("expert".parse::<PolicyTier>().unwrap(), PolicyTier::Expert);
        assert!("optimal".parse::<PolicyTier>().is_err());
    }

    #[test]
    fn controller_saturates_far_from_goal() {
        assert_eq!(ScriptedPolicy::pointmass_controller(&[-1.0, -1.0, 0.0, 0.0]), vec![1.0, 1.0]);
        assert_eq!(ScriptedPolicy::pointmass_controller(&[1.0, 1.0, 0.0, 0.0]), vec![0.0, 0.0]);
    }
}
