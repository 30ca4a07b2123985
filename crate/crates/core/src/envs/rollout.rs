use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::{Actor, Env, EnvKind, EnvSpec, PolicyTier, ScriptedPolicy};
use crate::data::{Manifest, OfflineDataset, Transition};
use crate::error::{Error, Result};
use crate::numkit::Rng;

pub const REFERENCE_SEED: u64 = 0x5EED;
pub const REFERENCE_EPISODES: usize = 100;

/// Mean undiscounted returns of the scripted tiers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceReturns {
    pub random: f64,
    pub medium: f64,
    pub expert: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub ret: f64,
    pub length: usize,
    /// Ended in a terminal state before the horizon.
    pub terminated_early: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub mean_return: f64,
    pub std_return: f64,
    pub normalized_score: f64,
    pub episodes: usize,
}

/// Runs one episode, passing every transition to `record`.
pub fn rollout_episode<A: Actor + ?Sized>(
    kind: EnvKind,
    actor: &mut A,
    rng: &mut Rng,
    mut record: impl FnMut(Transition),
) -> Result<EpisodeResult> {
    let mut env = Env::reset(kind, rng);
    let mut ret = 0.0;
    loop {
        let state = env.state().to_vec();
        let action: Vec<f64> = actor
            .act(&state, rng)?
            .into_iter()
            .map(|a| a.clamp(-1.0, 1.0))
            .collect();
        let out = env.step(&action)?;
        ret += out.reward;
        let terminal = out.terminal;
        record(Transition {
            state,
            action,
            reward: out.reward,
            next_state: out.next_state,
            terminal,
        });
        if terminal || env.truncated() {
            return Ok(EpisodeResult {
                ret,
                length: env.elapsed(),
                terminated_early: terminal && env.elapsed() < kind.horizon(),
            });
        }
    }
}

/// Exactly `n` transitions from consecutive episodes of one scripted tier.
/// The last episode is cut short if needed.
pub fn collect_dataset(kind: EnvKind, tier: PolicyTier, n: usize, seed: u64) -> Result<OfflineDataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("collect at least one transition".into()));
    }
    let mut rng = Rng::new(seed);
    let mut policy = ScriptedPolicy::new(kind, tier);
    let mut transitions = Vec::with_capacity(n);
    while transitions.len() < n {
        let mut episode = Vec::new();
        rollout_episode(kind, &mut policy, &mut rng, |t| episode.push(t))?;
        let take = episode.len().min(n - transitions.len());
        transitions.extend(episode.into_iter().take(take));
    }
    let manifest = Manifest::single(kind.name(), tier.name(), n as u64, seed);
    OfflineDataset::new(kind.obs_dim(), kind.act_dim(), transitions, manifest)
}

/// Mean/std of undiscounted returns over `episodes` episodes; episode `i`
/// uses stream `i` of `seed`.
pub fn evaluate_policy<A: Actor + ?Sized>(spec: &EnvSpec, actor: &mut A, episodes: usize, seed: u64) -> Result<EvalResult> {
    if episodes == 0 {
        return Err(Error::InvalidArgument("evaluate at least one episode".into()));
    }
    let returns = (0..episodes)
        .map(|i| {
            let mut rng = Rng::with_stream(seed, i as u64);
            rollout_episode(spec.kind, actor, &mut rng, |_| {}).map(|r| r.ret)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = returns.iter().sum::<f64>() / episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / episodes as f64;
    Ok(EvalResult {
        mean_return: mean,
        std_return: var.sqrt(),
        normalized_score: spec.normalized_score(mean),
        episodes,
    })
}

/// Mean return of each scripted tier over `episodes` seeded episodes.
pub fn measure_reference_returns(kind: EnvKind, episodes: usize, seed: u64) -> Result<ReferenceReturns> {
    let placeholder = EnvSpec::with_reference(
        kind,
        ReferenceReturns {
            random: 0.0,
            medium: 0.5,
            expert: 1.0,
        },
    );
    let measure = |tier| {
        let mut p = ScriptedPolicy::new(kind, tier);
        evaluate_policy(&placeholder, &mut p, episodes, seed).map(|r| r.mean_return)
    };
    Ok(ReferenceReturns {
        random: measure(PolicyTier::Random)?,
        medium: measure(PolicyTier::Medium)?,
        expert: measure(PolicyTier::Expert)?,
    })
}

pub(super) fn cached_reference(kind: EnvKind) -> ReferenceReturns {
    static TWINPEAKS: OnceLock<ReferenceReturns> = OnceLock::new();
    static POINTMASS: OnceLock<ReferenceReturns> = OnceLock::new();
    let cell = match kind {
        EnvKind::TwinPeaks1d => &TWINPEAKS,
        EnvKind::PointMass2d => &POINTMASS,
    };
    *cell.get_or_init(|| {
        measure_reference_returns(kind, REFERENCE_EPISODES, REFERENCE_SEED)
            .expect("scripted policies produce finite rollouts")
    })
}

/// Writes `{ env name: reference returns }` as JSON.
pub fn save_references(path: impl AsRef<Path>, specs: &[EnvSpec]) -> Result<()> {
    let path = path.as_ref();
    let map: BTreeMap<&str, ReferenceReturns> = specs.iter().map(|s| (s.kind.name(), s.reference)).collect();
    let json = serde_json::to_string_pretty(&map).map_err(|e| Error::json(path, e))?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

pub fn load_references(path: impl AsRef<Path>) -> Result<Vec<EnvSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, ReferenceReturns> = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
    map.into_iter()
        .map(|(name, r)| Ok(EnvSpec::with_reference(name.parse()?, r)))
        .collect()
}
