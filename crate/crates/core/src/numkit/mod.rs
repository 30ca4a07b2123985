//! Minimal dense neural-network engine.

mod adam;
pub mod checkpoint;
mod gradcheck;
mod mlp;
mod rng;

pub use adam::{polyak_update, AdamConfig, AdamState};
pub use gradcheck::{grad_check, relative_error, GradCheckReport, FULL_CHECK_LIMIT, REL_FLOOR};
pub use mlp::{Gradients, MlpNet, OutputActivation, Tape};
pub use rng::Rng;

/// Network and optimizer bundled together, the unit trained by every agent.
#[derive(Debug, Clone)]
pub struct Trainable {
    pub net: MlpNet,
    pub opt: AdamState,
}

impl Trainable {
    pub fn new(net: MlpNet, config: AdamConfig) -> crate::Result<Self> {
        let opt = AdamState::new(net.num_params(), config)?;
        Ok(Self { net, opt })
    }

    pub fn apply(&mut self, grads: &[f64]) -> crate::Result<()> {
        self.opt.step(self.net.params_mut(), grads)
    }
}
