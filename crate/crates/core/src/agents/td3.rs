use std::path::Path;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{Mean, Td3Hyperparams, TrainLog, TrainRecord};
use crate::behavior::{GaussianBehaviorModel, WeightConfig};
use crate::data::{sample_minibatch, Minibatch, Negatives, NormStats, OfflineDataset};
use crate::envs::{Actor, EvalResult};
use crate::error::{ensure_len, Error, Result};
use crate::numkit::{checkpoint, polyak_update, AdamConfig, MlpNet, OutputActivation, Rng, Trainable};
use crate::regularizers::contrastive_batch;

const ACTION_BOUND: f64 = 1.0;

/// `r + γ·min(q1′, q2′)`, or `r` on terminal transitions.
pub fn critic_target(reward: f64, terminal: bool, gamma: f64, q1_next: f64, q2_next: f64) -> f64 {
    if terminal {
        reward
    } else {
        reward + gamma * q1_next.min(q2_next)
    }
}

/// `clip(μ̄(s′) + clip(ε, −c, c), ±bound)` with `ε ~ N(0, σ²)` per dimension.
pub fn smoothed_target_action(target_mu: &[f64], sigma: f64, clip: f64, bound: f64, rng: &mut Rng) -> Vec<f64> {
    target_mu
        .iter()
        .map(|&m| {
            let eps = (sigma * rng.normal()).clamp(-clip, clip);
            (m + eps).clamp(-bound, bound)
        })
        .collect()
}

/// What the actor is trained to maximize besides the critic.
#[derive(Debug, Clone, PartialEq)]
pub enum ActorObjective {
    /// `λ_Q·Q − ‖μ − a‖²`.
    Td3Bc,
    /// `λ_Q·Q − λ(s)·[‖μ − a‖² − α‖μ − (a1 + a2)/2‖²]`.
    Td3Rkl {
        behavior: GaussianBehaviorModel,
        weights: WeightConfig,
        alpha: f64,
    },
}

impl ActorObjective {
    fn negatives(&self) -> Negatives {
        match self {
            ActorObjective::Td3Rkl { alpha, .. } if *alpha != 0.0 => Negatives::Sample,
            _ => Negatives::Skip,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActorObjective::Td3Bc => "td3bc",
            ActorObjective::Td3Rkl { .. } => "td3rkl",
        }
    }
}

/// Result of evaluating the actor objective on one batch.
#[derive(Debug, Clone)]
pub struct ActorStep {
    /// Mean of `−λ_Q·Q + w(s)·regularizer`, the quantity being minimized.
    pub loss: f64,
    pub mean_lambda: f64,
    pub mean_abs_q: f64,
    pub lambda_q: f64,
    /// Actor parameter gradient.
    pub grads: Vec<f64>,
    /// `∂loss/∂μ` contributed by the critic term.
    pub q_upstream: Array2<f64>,
    /// `∂loss/∂μ` contributed by the weighted regularizer.
    pub reg_upstream: Array2<f64>,
}

/// Actor network plus the state normalization it expects.
#[derive(Debug, Clone, PartialEq)]
pub struct DeterministicActor {
    pub net: MlpNet,
    pub stats: NormStats,
}

impl DeterministicActor {
    pub fn action(&self, obs: &[f64]) -> Result<Vec<f64>> {
        self.net.forward(&self.stats.normalize(obs)?)
    }
}

impl Actor for DeterministicActor {
    fn act(&mut self, obs: &[f64], _rng: &mut Rng) -> Result<Vec<f64>> {
        self.action(obs)
    }
}

#[derive(Debug, Clone)]
pub struct StepStats {
    pub critic_loss: f64,
    pub actor: Option<ActorStep>,
}

/// Actor, twin critics, their targets and optimizer state.
#[derive(Debug, Clone)]
pub struct Td3Agent {
    actor: Trainable,
    critic1: Trainable,
    critic2: Trainable,
    actor_target: MlpNet,
    critic1_target: MlpNet,
    critic2_target: MlpNet,
    objective: ActorObjective,
    hp: Td3Hyperparams,
    stats: NormStats,
    step: u64,
    actor_updates: u64,
    rng: Rng,
}

fn concat_cols(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    concatenate![Axis(1), a, b]
}

impl Td3Agent {
    /// Networks are initialized from stream 1 of `seed`; minibatches and
    /// smoothing noise come from stream 2.
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        stats: NormStats,
        hp: Td3Hyperparams,
        objective: ActorObjective,
        seed: u64,
    ) -> Result<Self> {
        hp.validate()?;
        ensure_len("normalization stats", obs_dim, stats.dim())?;
        if let ActorObjective::Td3Rkl { behavior, weights, alpha } = &objective {
            ensure_len("behavior obs_dim", obs_dim, behavior.obs_dim())?;
            ensure_len("behavior act_dim", act_dim, behavior.act_dim())?;
            weights.validate()?;
            if !(*alpha >= 0.0 && alpha.is_finite()) {
                return Err(Error::InvalidArgument(format!("alpha must be ≥ 0, got {alpha}")));
            }
        }
        let mut init = Rng::with_stream(seed, 1);
        let sizes = |input: usize, output: usize| {
            let mut v = vec![input];
            v.extend_from_slice(&hp.hidden);
            v.push(output);
            v
        };
        let actor_sizes = sizes(obs_dim, act_dim);
        let critic_sizes = sizes(obs_dim + act_dim, 1);
        let actor = MlpNet::new(&actor_sizes, OutputActivation::ScaledTanh { bound: ACTION_BOUND }, &mut init)?;
        let critic1 = MlpNet::new(&critic_sizes, OutputActivation::Identity, &mut init)?;
        let critic2 = MlpNet::new(&critic_sizes, OutputActivation::Identity, &mut init)?;
        Ok(Self {
            actor_target: actor.clone(),
            critic1_target: critic1.clone(),
            critic2_target: critic2.clone(),
            actor: Trainable::new(actor, AdamConfig::with_lr(hp.actor_lr))?,
            critic1: Trainable::new(critic1, AdamConfig::with_lr(hp.critic_lr))?,
            critic2: Trainable::new(critic2, AdamConfig::with_lr(hp.critic_lr))?,
            objective,
            hp,
            stats,
            step: 0,
            actor_updates: 0,
            rng: Rng::with_stream(seed, 2),
        })
    }

    pub fn hyperparams(&self) -> &Td3Hyperparams {
        &self.hp
    }

    pub fn objective(&self) -> &ActorObjective {
        &self.objective
    }

    pub fn stats(&self) -> &NormStats {
        &self.stats
    }

    /// Number of critic updates performed.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn actor_updates(&self) -> u64 {
        self.actor_updates
    }

    pub fn actor(&self) -> &MlpNet {
        &self.actor.net
    }

    pub fn critics(&self) -> (&MlpNet, &MlpNet) {
        (&self.critic1.net, &self.critic2.net)
    }

    pub fn targets(&self) -> (&MlpNet, &MlpNet, &MlpNet) {
        (&self.actor_target, &self.critic1_target, &self.critic2_target)
    }

    pub fn critics_mut(&mut self) -> (&mut MlpNet, &mut MlpNet) {
        (&mut self.critic1.net, &mut self.critic2.net)
    }

    pub fn deterministic_actor(&self) -> DeterministicActor {
        DeterministicActor {
            net: self.actor.net.clone(),
            stats: self.stats.clone(),
        }
    }

    /// Minibatch with normalized states, negatives included when the
    /// objective uses them.
    pub fn sample_batch(&mut self, dataset: &OfflineDataset) -> Result<Minibatch> {
        let mut batch = sample_minibatch(dataset, self.hp.batch_size, self.objective.negatives(), &mut self.rng)?;
        batch.normalize_states(&self.stats)?;
        Ok(batch)
    }

    /// Shared regression targets computed with the target networks only.
    pub fn critic_targets(&mut self, batch: &Minibatch) -> Result<Array1<f64>> {
        let mu_next = self.actor_target.forward_batch(batch.next_states.view())?;
        let mut a_next = mu_next;
        for mut row in a_next.rows_mut() {
            let smoothed = smoothed_target_action(
                row.as_slice().expect("standard layout"),
                self.hp.smoothing_std,
                self.hp.noise_clip,
                ACTION_BOUND,
                &mut self.rng,
            );
            row.iter_mut().zip(smoothed).for_each(|(d, s)| *d = s);
        }
        let x_next = concat_cols(batch.next_states.view(), a_next.view());
        let q1 = self.critic1_target.forward_batch(x_next.view())?;
        let q2 = self.critic2_target.forward_batch(x_next.view())?;
        Ok((0..batch.len())
            .map(|i| critic_target(batch.rewards[i], batch.terminals[i], self.hp.gamma, q1[(i, 0)], q2[(i, 0)]))
            .collect())
    }

    /// Loss (sum of both critics' mean squared errors) and parameter
    /// gradients for regression targets `y`.
    pub fn critic_grads(&self, batch: &Minibatch, y: &Array1<f64>) -> Result<(f64, [Vec<f64>; 2])> {
        ensure_len("critic targets", batch.len(), y.len())?;
        let x = concat_cols(batch.states.view(), batch.actions.view());
        let n = batch.len() as f64;
        let mut total = 0.0;
        let mut out: [Vec<f64>; 2] = Default::default();
        for (critic, slot) in [&self.critic1, &self.critic2].into_iter().zip(out.iter_mut()) {
            let tape = critic.net.forward_tape(x.view())?;
            let diff = &tape.output().column(0) - y;
            total += diff.mapv(|d| d * d).sum() / n;
            let upstream = diff.mapv(|d| 2.0 * d / n).insert_axis(Axis(1));
            *slot = critic.net.backward(&tape, upstream.view())?.params;
        }
        if !total.is_finite() {
            return Err(Error::NonFinite("critic loss".into()));
        }
        Ok((total, out))
    }

    /// One Adam step on each critic towards the shared targets. Returns the
    /// sum of both critics' mean squared errors.
    pub fn critic_update(&mut self, batch: &Minibatch) -> Result<f64> {
        let y = self.critic_targets(batch)?;
        let (loss, [g1, g2]) = self.critic_grads(batch, &y)?;
        self.critic1.apply(&g1)?;
        self.critic2.apply(&g2)?;
        Ok(loss)
    }

    /// Actor loss and gradients on `batch` without touching any parameters.
    pub fn actor_objective(&self, batch: &Minibatch) -> Result<ActorStep> {
        let n = batch.len() as f64;
        let actor_tape = self.actor.net.forward_tape(batch.states.view())?;
        let mu = actor_tape.output();
        let x = concat_cols(batch.states.view(), mu.view());
        let q_tape = self.critic1.net.forward_tape(x.view())?;
        let q = q_tape.output().column(0).to_owned();
        let mean_abs_q = q.mapv(f64::abs).sum() / n;
        // Treated as a constant: no gradient flows through the normalizer.
        let lambda_q = self.hp.q_norm / mean_abs_q;

        let up_q = Array2::from_elem((batch.len(), 1), -lambda_q / n);
        let q_input = self.critic1.net.input_grad(&q_tape, up_q.view())?;
        let obs = batch.states.ncols();
        let q_upstream = q_input.slice(s![.., obs..]).to_owned();

        let (reg_loss, reg_grad, weights) = match &self.objective {
            ActorObjective::Td3Bc => {
                let (l, g) = contrastive_batch(mu.view(), batch.actions.view(), None, 0.0)?;
                (l, g, None)
            }
            ActorObjective::Td3Rkl {
                behavior,
                weights,
                alpha,
            } => {
                let mid = batch.negatives.as_ref().map(|p| p.midpoints());
                let (l, g) = contrastive_batch(mu.view(), batch.actions.view(), mid.as_ref().map(|m| m.view()), *alpha)?;
                (l, g, Some(behavior.lambda_batch(weights, batch.states.view())?))
            }
        };
        let mut reg_upstream = reg_grad;
        let mut weighted_reg = 0.0;
        for (i, (mut row, l)) in reg_upstream.rows_mut().into_iter().zip(&reg_loss).enumerate() {
            let w = weights.as_ref().map_or(1.0, |w| w[i]);
            row.mapv_inplace(|g| w * g / n);
            weighted_reg += w * l;
        }
        let loss = (-lambda_q * q.sum() + weighted_reg) / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("actor loss".into()));
        }
        let upstream = &q_upstream + &reg_upstream;
        let grads = self.actor.net.backward(&actor_tape, upstream.view())?.params;
        let mean_lambda = weights.as_ref().map_or(1.0, |w| w.mean().unwrap_or(1.0));
        Ok(ActorStep {
            loss,
            mean_lambda,
            mean_abs_q,
            lambda_q,
            grads,
            q_upstream,
            reg_upstream,
        })
    }

    pub fn actor_update(&mut self, batch: &Minibatch) -> Result<ActorStep> {
        let step = self.actor_objective(batch)?;
        self.actor.apply(&step.grads)?;
        self.actor_updates += 1;
        Ok(step)
    }

    /// Polyak-averages all three target networks.
    pub fn update_targets(&mut self) -> Result<()> {
        let tau = self.hp.tau;
        polyak_update(self.actor_target.params_mut(), self.actor.net.params(), tau)?;
        polyak_update(self.critic1_target.params_mut(), self.critic1.net.params(), tau)?;
        polyak_update(self.critic2_target.params_mut(), self.critic2.net.params(), tau)
    }

    /// Critic update, then on every `d`-th step the actor update followed by
    /// the target updates.
    pub fn train_step(&mut self, dataset: &OfflineDataset) -> Result<StepStats> {
        let t = self.step + 1;
        let wrap = |e: Error| Error::Divergence {
            step: t,
            what: e.to_string(),
        };
        let batch = self.sample_batch(dataset)?;
        let critic_loss = self.critic_update(&batch).map_err(wrap)?;
        self.step = t;
        let actor = if t.is_multiple_of(self.hp.policy_delay) {
            let a = self.actor_update(&batch).map_err(wrap)?;
            self.update_targets()?;
            Some(a)
        } else {
            None
        };
        Ok(StepStats { critic_loss, actor })
    }

    /// Runs until `total_steps` critic updates have been made. `eval` is
    /// called every `eval_every` steps and at the final step.
    pub fn train<F>(&mut self, dataset: &OfflineDataset, mut eval: F) -> Result<TrainLog>
    where
        F: FnMut(u64, &DeterministicActor) -> Result<Option<EvalResult>>,
    {
        if dataset.obs_dim() != self.stats.dim() || dataset.act_dim() != self.actor.net.output_dim() {
            return Err(Error::Incompatible("dataset dims do not match the agent".into()));
        }
        let mut log = TrainLog::default();
        let (mut critic, mut actor, mut lambda, mut abs_q) = (Mean::default(), Mean::default(), Mean::default(), Mean::default());
        while self.step < self.hp.total_steps {
            let stats = self.train_step(dataset)?;
            critic.add(stats.critic_loss);
            if let Some(a) = &stats.actor {
                actor.add(a.loss);
                lambda.add(a.mean_lambda);
                abs_q.add(a.mean_abs_q);
            }
            if self.step.is_multiple_of(self.hp.eval_every) || self.step == self.hp.total_steps {
                let result = eval(self.step, &self.deterministic_actor())?;
                log.push(TrainRecord {
                    step: self.step,
                    critic_loss: critic.take(),
                    actor_loss: actor.take(),
                    mean_lambda: lambda.take(),
                    mean_abs_q: abs_q.take(),
                    eval: result,
                });
            }
        }
        Ok(log)
    }

    /// Writes every network as `ORLW` plus `agent.json`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, net) in [
            ("actor", &self.actor.net),
            ("critic1", &self.critic1.net),
            ("critic2", &self.critic2.net),
            ("actor_target", &self.actor_target),
            ("critic1_target", &self.critic1_target),
            ("critic2_target", &self.critic2_target),
        ] {
            checkpoint::save_mlp(net, dir.join(format!("{name}.orlw")))?;
        }
        let (alpha, weights) = match &self.objective {
            ActorObjective::Td3Bc => (None, None),
            ActorObjective::Td3Rkl { alpha, weights, .. } => (Some(*alpha), Some(*weights)),
        };
        let side = AgentSidecar {
            kind: self.objective.name().to_string(),
            step: self.step,
            actor_updates: self.actor_updates,
            hyperparams: self.hp.clone(),
            stats: self.stats.clone(),
            alpha,
            weights,
        };
        let path = dir.join("agent.json");
        let json = serde_json::to_string_pretty(&side).map_err(|e| Error::json(&path, e))?;
        std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AgentSidecar {
    kind: String,
    step: u64,
    actor_updates: u64,
    hyperparams: Td3Hyperparams,
    stats: NormStats,
    #[serde(skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<WeightConfig>,
}

/// Loads the actor and its normalization from a checkpoint directory written
/// by [`Td3Agent::save`] or the BC-only trainer.
pub fn load_actor(dir: impl AsRef<Path>) -> Result<DeterministicActor> {
    let dir = dir.as_ref();
    let path = dir.join("agent.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let side: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let stats: NormStats = serde_json::from_value(side["stats"].clone()).map_err(|e| Error::json(&path, e))?;
    let net = checkpoint::load_mlp(dir.join("actor.orlw"))?;
    ensure_len("checkpoint stats", net.input_dim(), stats.dim())?;
    Ok(DeterministicActor { net, stats })
}
