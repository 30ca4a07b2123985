use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{DeterministicActor, Mean, TrainLog, TrainRecord};
use crate::behavior::GaussianBehaviorModel;
use crate::data::{sample_minibatch, Negatives, NormStats, OfflineDataset};
use crate::envs::EvalResult;
use crate::error::{ensure_len, Error, Result};
use crate::numkit::{checkpoint, AdamConfig, MlpNet, OutputActivation, Rng, Trainable};
use crate::regularizers::{contrastive_batch, RegularizerKind, RegularizerSpec, StochasticPolicy};

/// Supervised training settings. One epoch is `ceil(n / batch_size)`
/// minibatches drawn with replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: Vec<usize>,
    /// Evaluate every this many epochs (and after the last one).
    pub eval_every: usize,
    pub eval_episodes: usize,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 256,
            lr: 1e-3,
            hidden: vec![256, 256],
            eval_every: 5,
            eval_episodes: 10,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.epochs == 0 {
            problems.push("epochs must be ≥ 1".to_string());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be ≥ 1".to_string());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            problems.push(format!("lr must be positive, got {}", self.lr));
        }
        if self.hidden.contains(&0) {
            problems.push("hidden sizes must be ≥ 1".to_string());
        }
        if self.eval_every == 0 {
            problems.push("eval_every must be ≥ 1".to_string());
        }
        if self.eval_episodes == 0 {
            problems.push("eval_episodes must be ≥ 1".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }
}

/// Policy trained by [`train_bc_only`].
#[derive(Debug, Clone, PartialEq)]
pub enum BcPolicy {
    /// Tanh-bounded deterministic actor, used by mse-bc and rkl-contrastive.
    Deterministic(MlpNet),
    /// Diagonal Gaussian, used by forward-kl and reverse-kl-stochastic.
    Stochastic(StochasticPolicy),
}

impl BcPolicy {
    /// Fresh policy of the kind `spec` requires.
    pub fn for_spec(spec: &RegularizerSpec, obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        if spec.kind.is_stochastic() {
            return Ok(BcPolicy::Stochastic(StochasticPolicy::new(obs_dim, act_dim, hidden, rng)?));
        }
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(act_dim);
        Ok(BcPolicy::Deterministic(MlpNet::new(
            &sizes,
            OutputActivation::ScaledTanh { bound: 1.0 },
            rng,
        )?))
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, BcPolicy::Stochastic(_))
    }

    /// Network producing the action used at evaluation time: the actor, or
    /// the Gaussian mean.
    pub fn action_net(&self) -> &MlpNet {
        match self {
            BcPolicy::Deterministic(net) => net,
            BcPolicy::Stochastic(p) => &p.mean,
        }
    }

    pub fn to_actor(&self, stats: &NormStats) -> DeterministicActor {
        DeterministicActor {
            net: self.action_net().clone(),
            stats: stats.clone(),
        }
    }

    /// Writes `actor.orlw` (plus `log_std.orlw` when stochastic) and
    /// `agent.json`, readable by [`super::load_actor`].
    pub fn save(&self, spec: &RegularizerSpec, stats: &NormStats, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        checkpoint::save_mlp(self.action_net(), dir.join("actor.orlw"))?;
        if let BcPolicy::Stochastic(p) = self {
            checkpoint::save_mlp(&p.log_std, dir.join("log_std.orlw"))?;
        }
        let side = BcSidecar {
            kind: "bc".into(),
            regularizer: *spec,
            stats: stats.clone(),
        };
        let path = dir.join("agent.json");
        let json = serde_json::to_string_pretty(&side).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Serialize)]
struct BcSidecar {
    kind: String,
    regularizer: RegularizerSpec,
    stats: NormStats,
}

struct Optimizers {
    first: Trainable,
    second: Option<Trainable>,
}

/// Trains `policy` on the chosen regularizer alone. `behavior` is required
/// by reverse-kl-stochastic and ignored otherwise. `eval` is called with the
/// cumulative gradient step count every `eval_every` epochs.
pub fn train_bc_only<F>(
    policy: &mut BcPolicy,
    dataset: &OfflineDataset,
    spec: &RegularizerSpec,
    behavior: Option<&GaussianBehaviorModel>,
    config: &BcConfig,
    rng: &mut Rng,
    mut eval: F,
) -> Result<TrainLog>
where
    F: FnMut(u64, &DeterministicActor) -> Result<Option<EvalResult>>,
{
    spec.validate()?;
    config.validate()?;
    if spec.kind.is_stochastic() != policy.is_stochastic() {
        return Err(Error::Incompatible(format!(
            "regularizer {:?} needs a {} policy",
            spec.kind,
            if spec.kind.is_stochastic() { "stochastic" } else { "deterministic" }
        )));
    }
    ensure_len("policy obs_dim", dataset.obs_dim(), policy.action_net().input_dim())?;
    ensure_len("policy act_dim", dataset.act_dim(), policy.action_net().output_dim())?;
    let behavior = match (spec.kind, behavior) {
        (RegularizerKind::ReverseKlStochastic, None) => {
            return Err(Error::InvalidArgument("reverse-kl-stochastic needs a behavior model".into()))
        }
        (RegularizerKind::ReverseKlStochastic, Some(b)) => {
            ensure_len("behavior obs_dim", dataset.obs_dim(), b.obs_dim())?;
            ensure_len("behavior act_dim", dataset.act_dim(), b.act_dim())?;
            Some(b)
        }
        _ => None,
    };
    let stats = dataset.stats()?.clone();
    let adam = AdamConfig::with_lr(config.lr);
    let mut opt = match policy {
        BcPolicy::Deterministic(net) => Optimizers {
            first: Trainable::new(net.clone(), adam)?,
            second: None,
        },
        BcPolicy::Stochastic(p) => Optimizers {
            first: Trainable::new(p.mean.clone(), adam)?,
            second: Some(Trainable::new(p.log_std.clone(), adam)?),
        },
    };
    let negatives = if spec.needs_negatives() { Negatives::Sample } else { Negatives::Skip };
    let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
    let mut log = TrainLog::default();
    let mut loss_mean = Mean::default();
    let mut step = 0u64;
    for epoch in 1..=config.epochs {
        for _ in 0..steps_per_epoch {
            step += 1;
            let wrap = |e: Error| Error::Divergence {
                step,
                what: e.to_string(),
            };
            let mut batch = sample_minibatch(dataset, config.batch_size, negatives, rng)?;
            batch.normalize_states(&stats)?;
            let n = batch.len() as f64;
            match spec.kind {
                RegularizerKind::MseBc | RegularizerKind::RklContrastive => {
                    let net = &mut opt.first;
                    let tape = net.net.forward_tape(batch.states.view())?;
                    let mid = batch.negatives.as_ref().map(|p| p.midpoints());
                    let alpha = if spec.kind == RegularizerKind::MseBc { 0.0 } else { spec.alpha };
                    let (per_row, grad): (_, Array2<f64>) =
                        contrastive_batch(tape.output().view(), batch.actions.view(), mid.as_ref().map(|m| m.view()), alpha)
                            .map_err(wrap)?;
                    let loss = per_row.sum() / n;
                    if !loss.is_finite() {
                        return Err(wrap(Error::NonFinite("bc loss".into())));
                    }
                    let upstream = grad / n;
                    let g = net.net.backward(&tape, upstream.view())?.params;
                    net.apply(&g).map_err(wrap)?;
                    loss_mean.add(loss);
                }
                RegularizerKind::ForwardKl | RegularizerKind::ReverseKlStochastic => {
                    let BcPolicy::Stochastic(current) = &*policy else { unreachable!() };
                    let mut current = current.clone();
                    current.mean = opt.first.net.clone();
                    current.log_std = opt.second.as_ref().expect("stochastic").net.clone();
                    let grads = match behavior {
                        None => current.forward_kl_grads(batch.states.view(), batch.actions.view()),
                        Some(b) => current.reverse_kl_grads(b, batch.states.view(), spec.samples, rng),
                    }
                    .map_err(wrap)?;
                    opt.first.apply(&grads.mean).map_err(wrap)?;
                    opt.second.as_mut().expect("stochastic").apply(&grads.log_std).map_err(wrap)?;
                    loss_mean.add(grads.loss);
                }
            }
        }
        sync(policy, &opt);
        if epoch % config.eval_every == 0 || epoch == config.epochs {
            let result = eval(step, &policy.to_actor(&stats))?;
            log.push(TrainRecord {
                step,
                critic_loss: None,
                actor_loss: loss_mean.take(),
                mean_lambda: None,
                mean_abs_q: None,
                eval: result,
            });
        }
    }
    Ok(log)
}

fn sync(policy: &mut BcPolicy, opt: &Optimizers) {
    match policy {
        BcPolicy::Deterministic(net) => net.params_mut().copy_from_slice(opt.first.net.params()),
        BcPolicy::Stochastic(p) => {
            p.mean.params_mut().copy_from_slice(opt.first.net.params());
            if let Some(s) = &opt.second {
                p.log_std.params_mut().copy_from_slice(s.net.params());
            }
        }
    }
}
