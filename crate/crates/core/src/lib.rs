//! Desk-scale offline reinforcement learning.
//!
//! The crate implements TD3 with an adaptively weighted, sample-based
//! reverse-KL behavior-cloning regularizer (TD3+RKL), the TD3+BC baseline,
//! behavior-cloning-only agents, and everything they need to run end to end:
//!
//! - [`numkit`]: dense MLPs with analytic gradients, Adam, Polyak averaging,
//!   seeded RNG streams and finite-difference checking.
//! - [`data`]: offline datasets, state normalization, mixing, minibatch
//!   sampling and the on-disk formats.
//! - [`behavior`]: the cloned Gaussian behavior model and the per-state
//!   weight `λ(s)` derived from its log-variance.
//! - [`regularizers`]: the behavior-cloning loss terms.
//! - [`agents`]: TD3 machinery, the TD3+BC / TD3+RKL agents and BC-only training.
//! - [`envs`]: native environments, scripted behavior policies, rollouts and
//!   normalized scoring.
//!
//! All arithmetic is `f64`.

pub mod agents;
pub mod behavior;
pub mod data;
pub mod envs;
mod error;
pub mod numkit;
pub mod regularizers;

pub use error::{Error, FormatError, Result};
