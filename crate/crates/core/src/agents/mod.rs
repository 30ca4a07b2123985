//! TD3 machinery and the trainable agents.
//!
//! * [`Td3Agent`] with [`ActorObjective::Td3Bc`] is TD3+BC: the actor
//!   maximizes `λ_Q·Q(s, μ(s)) − ‖μ(s) − a‖²`.
//! * [`ActorObjective::Td3Rkl`] replaces the MSE pull with the contrastive
//!   reverse-KL regularizer and weights it per state by `λ(s)` from a frozen
//!   behavior model.
//! * [`train_bc_only`] trains a policy on one regularizer alone.

mod bc;
mod td3;

use serde::{Deserialize, Serialize};

pub use bc::{train_bc_only, BcConfig, BcPolicy};
pub use td3::{
    critic_target, load_actor, smoothed_target_action, ActorObjective, ActorStep, Td3Agent, DeterministicActor,
};

use crate::envs::EvalResult;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Td3Hyperparams {
    pub gamma: f64,
    pub tau: f64,
    pub policy_delay: u64,
    pub smoothing_std: f64,
    pub noise_clip: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    /// `α_norm` in `λ_Q = α_norm / mean|Q|`.
    pub q_norm: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub hidden: Vec<usize>,
    pub eval_every: u64,
    pub eval_episodes: usize,
}

impl Default for Td3Hyperparams {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            smoothing_std: 0.2,
            noise_clip: 0.5,
            batch_size: 256,
            total_steps: 50_000,
            q_norm: 2.5,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            hidden: vec![256, 256],
            eval_every: 1000,
            eval_episodes: 10,
        }
    }
}

impl Td3Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if !(0.0..=1.0).contains(&self.gamma) {
            problems.push(format!("gamma {} outside [0, 1]", self.gamma));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            problems.push(format!("tau {} outside (0, 1]", self.tau));
        }
        if self.policy_delay == 0 {
            problems.push("policy_delay must be ≥ 1".into());
        }
        if !(self.smoothing_std >= 0.0) {
            problems.push("smoothing_std must be ≥ 0".into());
        }
        if !(self.noise_clip >= 0.0) {
            problems.push("noise_clip must be ≥ 0".into());
        }
        if self.batch_size == 0 {
            problems.push("batch_size must be ≥ 1".into());
        }
        if !(self.q_norm > 0.0) {
            problems.push("q_norm must be > 0".into());
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0) {
            problems.push("learning rates must be > 0".into());
        }
        if self.hidden.contains(&0) {
            problems.push("hidden sizes must be positive".into());
        }
        if self.eval_every == 0 {
            problems.push("eval_every must be ≥ 1".into());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(problems.join("; ")))
        }
    }
}

/// One logged interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub critic_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub actor_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mean_abs_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalResult>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

impl TrainLog {
    pub(crate) fn push(&mut self, record: TrainRecord) {
        debug_assert!(self.records.last().is_none_or(|r| r.step < record.step));
        self.records.push(record);
    }

    pub fn last_eval(&self) -> Option<&EvalResult> {
        self.records.iter().rev().find_map(|r| r.eval.as_ref())
    }
}

/// Running mean over a logging interval.
#[derive(Debug, Default, Clone, Copy)]
pub(crate) struct Mean {
    sum: f64,
    n: u64,
}

impl Mean {
    pub(crate) fn add(&mut self, x: f64) {
        self.sum += x;
        self.n += 1;
    }

    pub(crate) fn take(&mut self) -> Option<f64> {
        let out = (self.n > 0).then(|| self.sum / self.n as f64);
        *self = Mean::default();
        out
    }
}
