//! Cloned Gaussian behavior policy and the per-state behavior-cloning weight.
//!
//! The behavior model `π_ψ(·|s) = N(μ_ψ(s), exp(β_ψ(s)))` is fitted by maximum
//! likelihood before any RL happens and is then frozen. Its only consumer in
//! TD3+RKL is the weight
//!
//! ```text
//! λ(s) = 1 / (1 + exp(ζ1·β̂(s) − ζ2)),    β̂(s) = mean_j β_ψ,j(s)
//! ```
//!
//! which relaxes behavior cloning on states where the data show a wide spread
//! of actions. The reverse-KL baseline also uses the model as its target density.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{sample_minibatch, NormStats, Negatives, OfflineDataset};
use crate::error::{ensure_len, Error, Result};
use crate::numkit::{checkpoint, AdamConfig, MlpNet, OutputActivation, Rng, Trainable};

pub const DEFAULT_BETA_MIN: f64 = -10.0;
pub const DEFAULT_BETA_MAX: f64 = 4.0;

/// Diagonal-Gaussian negative log-likelihood with log-variances `beta`,
/// summed over dimensions: `Σ_j ½[ln 2π + β_j + (a_j − μ_j)² e^{−β_j}]`.
pub fn gaussian_nll(mu: &[f64], beta: &[f64], a: &[f64]) -> Result<f64> {
    ensure_len("nll log-variance", mu.len(), beta.len())?;
    ensure_len("nll action", mu.len(), a.len())?;
    let nll: f64 = mu
        .iter()
        .zip(beta)
        .zip(a)
        .map(|((m, b), x)| 0.5 * ((2.0 * PI).ln() + b + (x - m).powi(2) * (-b).exp()))
        .sum();
    if nll.is_finite() {
        Ok(nll)
    } else {
        Err(Error::NonFinite("gaussian nll".into()))
    }
}

/// `(∂/∂μ, ∂/∂β)` of [`gaussian_nll`] for one dimension.
pub fn gaussian_nll_grad(mu: f64, beta: f64, a: f64) -> (f64, f64) {
    let inv_var = (-beta).exp();
    let diff = mu - a;
    (diff * inv_var, 0.5 * (1.0 - diff * diff * inv_var))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeightConfig {
    pub zeta1: f64,
    pub zeta2: f64,
}

impl Default for WeightConfig {
    fn default() -> Self {
        Self { zeta1: 10.0, zeta2: 5.0 }
    }
}

impl WeightConfig {
    pub fn validate(&self) -> Result<()> {
        if self.zeta1 >= 0.0 && self.zeta1.is_finite() && self.zeta2.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("weight config needs finite ζ1 ≥ 0, ζ2; got {self:?}")))
        }
    }

    /// Keeps `ζ1` and places the sigmoid midpoint (`λ = 0.5`) at the median of
    /// the supplied log-variances, i.e. `ζ2 = ζ1 · median(β̂)`.
    pub fn calibrated(zeta1: f64, beta_hats: &[f64]) -> Result<Self> {
        if beta_hats.is_empty() || beta_hats.iter().any(|b| !b.is_finite()) {
            return Err(Error::InvalidArgument("calibration needs finite log-variances".into()));
        }
        let mut sorted = beta_hats.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        let cfg = Self {
            zeta1,
            zeta2: zeta1 * median,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// `λ = 1 / (1 + exp(ζ1·β̂ − ζ2))`.
pub fn compute_lambda(cfg: &WeightConfig, beta_hat: f64) -> f64 {
    1.0 / (1.0 + (cfg.zeta1 * beta_hat - cfg.zeta2).exp())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BehaviorConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for BehaviorConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256],
            epochs: 50,
            batch_size: 256,
            lr: 3e-4,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

impl BehaviorConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidArgument("behavior epochs, batch size and hidden sizes must be positive".into()));
        }
        if !(self.beta_min < self.beta_max) || !self.beta_min.is_finite() || !self.beta_max.is_finite() {
            return Err(Error::InvalidArgument("behavior log-variance clamp must satisfy β_min < β_max".into()));
        }
        AdamConfig::with_lr(self.lr).validate()
    }
}

/// Gaussian behavior model over normalized states. Mean and log-variance are
/// two separate networks.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBehaviorModel {
    mean: MlpNet,
    log_var: MlpNet,
    beta_min: f64,
    beta_max: f64,
}

impl GaussianBehaviorModel {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], beta_min: f64, beta_max: f64, rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(act_dim);
        let mean = MlpNet::new(&sizes, OutputActivation::Identity, rng)?;
        let log_var = MlpNet::new(&sizes, OutputActivation::Identity, rng)?;
        Self::from_parts(mean, log_var, beta_min, beta_max)
    }

    pub fn from_parts(mean: MlpNet, log_var: MlpNet, beta_min: f64, beta_max: f64) -> Result<Self> {
        if mean.sizes()[0] != log_var.sizes()[0] || mean.output_dim() != log_var.output_dim() {
            return Err(Error::InvalidArgument("mean and log-variance networks disagree on dims".into()));
        }
        if !(beta_min < beta_max) {
            return Err(Error::InvalidArgument(format!("bad clamp [{beta_min}, {beta_max}]")));
        }
        Ok(Self {
            mean,
            log_var,
            beta_min,
            beta_max,
        })
    }

    pub fn mean_net(&self) -> &MlpNet {
        &self.mean
    }

    pub fn log_var_net(&self) -> &MlpNet {
        &self.log_var
    }

    pub fn clamp_bounds(&self) -> (f64, f64) {
        (self.beta_min, self.beta_max)
    }

    pub fn obs_dim(&self) -> usize {
        self.mean.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.mean.output_dim()
    }

    /// Mean and clamped log-variance at one state.
    pub fn predict(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mu = self.mean.forward(s)?;
        let beta = self
            .log_var
            .forward(s)?
            .into_iter()
            .map(|b| b.clamp(self.beta_min, self.beta_max))
            .collect();
        Ok((mu, beta))
    }

    pub fn predict_batch(&self, states: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let mu = self.mean.forward_batch(states)?;
        let beta = self.clamped_log_var(states)?;
        Ok((mu, beta))
    }

    fn clamped_log_var(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (lo, hi) = (self.beta_min, self.beta_max);
        Ok(self.log_var.forward_batch(states)?.mapv_into(|b| b.clamp(lo, hi)))
    }

    pub fn nll(&self, s: &[f64], a: &[f64]) -> Result<f64> {
        let (mu, beta) = self.predict(s)?;
        gaussian_nll(&mu, &beta, a)
    }

    /// Mean over action dimensions of the clamped log-variance.
    pub fn beta_hat(&self, s: &[f64]) -> Result<f64> {
        let (_, beta) = self.predict(s)?;
        Ok(beta.iter().sum::<f64>() / beta.len() as f64)
    }

    pub fn beta_hat_batch(&self, states: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        let beta = self.clamped_log_var(states)?;
        let act = beta.ncols() as f64;
        Ok(beta.rows().into_iter().map(|r| r.sum() / act).collect())
    }

    pub fn lambda_batch(&self, cfg: &WeightConfig, states: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(self.beta_hat_batch(states)?.mapv_into(|b| compute_lambda(cfg, b)))
    }

    /// Mean NLL over a batch and its gradients with respect to both networks.
    pub fn nll_and_grads(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        ensure_len("behavior actions", self.act_dim(), actions.ncols())?;
        let n = states.nrows() as f64;
        let mean_tape = self.mean.forward_tape(states)?;
        let lv_tape = self.log_var.forward_tape(states)?;
        let mu = mean_tape.output();
        let raw_beta = lv_tape.output();
        let mut d_mu = Array2::zeros(mu.raw_dim());
        let mut d_beta = Array2::zeros(mu.raw_dim());
        let mut total = 0.0;
        let log2pi = (2.0 * PI).ln();
        let (lo, hi) = (self.beta_min, self.beta_max);
        Zip::from(&mut d_mu)
            .and(&mut d_beta)
            .and(mu)
            .and(raw_beta)
            .and(actions)
            .for_each(|dm, db, &m, &rb, &a| {
                let b = rb.clamp(lo, hi);
                total += 0.5 * (log2pi + b + (a - m).powi(2) * (-b).exp());
                let (gm, gb) = gaussian_nll_grad(m, b, a);
                *dm = gm / n;
                *db = if rb > lo && rb < hi { gb / n } else { 0.0 };
            });
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("behavior nll".into()));
        }
        let g_mean = self.mean.backward(&mean_tape, d_mu.view())?.params;
        let g_lv = self.log_var.backward(&lv_tape, d_beta.view())?.params;
        Ok((loss, g_mean, g_lv))
    }

    pub(crate) fn params_mut(&mut self) -> (&mut MlpNet, &mut MlpNet) {
        (&mut self.mean, &mut self.log_var)
    }
}

/// Outcome of [`fit_behavior`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    /// Mean NLL over the whole dataset before training.
    pub initial_nll: f64,
    /// Mean NLL over the whole dataset after training.
    pub final_nll: f64,
    /// Average minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

fn normalized_columns(dataset: &OfflineDataset, stats: &NormStats) -> Result<(Array2<f64>, Array2<f64>)> {
    let mut states = Array2::zeros((dataset.len(), dataset.obs_dim()));
    let mut actions = Array2::zeros((dataset.len(), dataset.act_dim()));
    for (i, t) in dataset.transitions().iter().enumerate() {
        states.row_mut(i).iter_mut().zip(&t.state).for_each(|(d, s)| *d = *s);
        actions.row_mut(i).iter_mut().zip(&t.action).for_each(|(d, s)| *d = *s);
    }
    stats.normalize_rows(&mut states)?;
    Ok((states, actions))
}

/// Full-dataset mean NLL in chunks, on states normalized with `stats`.
pub fn dataset_nll(model: &GaussianBehaviorModel, dataset: &OfflineDataset, stats: &NormStats) -> Result<f64> {
    let (states, actions) = normalized_columns(dataset, stats)?;
    let (mu, beta) = model.predict_batch(states.view())?;
    let mut total = 0.0;
    Zip::from(&mu).and(&beta).and(&actions).for_each(|&m, &b, &a| {
        total += 0.5 * ((2.0 * PI).ln() + b + (a - m).powi(2) * (-b).exp());
    });
    Ok(total / dataset.len() as f64)
}

/// Maximum-likelihood fit with Adam. Each epoch is `⌈n / batch⌉` minibatches
/// drawn with replacement; states are normalized with the dataset statistics.
pub fn fit_behavior(dataset: &OfflineDataset, config: &BehaviorConfig, rng: &mut Rng) -> Result<(GaussianBehaviorModel, FitReport)> {
    config.validate()?;
    let stats = dataset.stats()?.clone();
    let mut model = GaussianBehaviorModel::new(
        dataset.obs_dim(),
        dataset.act_dim(),
        &config.hidden,
        config.beta_min,
        config.beta_max,
        rng,
    )?;
    let adam = AdamConfig::with_lr(config.lr);
    let mut mean_opt = Trainable::new(model.mean.clone(), adam)?.opt;
    let mut lv_opt = Trainable::new(model.log_var.clone(), adam)?.opt;
    let initial_nll = dataset_nll(&model, dataset, &stats)?;
    let steps_per_epoch = dataset.len().div_ceil(config.batch_size);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut step = 0u64;
    for _ in 0..config.epochs {
        let mut sum = 0.0;
        for _ in 0..steps_per_epoch {
            step += 1;
            let mut batch = sample_minibatch(dataset, config.batch_size, Negatives::Skip, rng)?;
            batch.normalize_states(&stats)?;
            let (loss, g_mean, g_lv) = model
                .nll_and_grads(batch.states.view(), batch.actions.view())
                .map_err(|e| Error::Divergence {
                    step,
                    what: e.to_string(),
                })?;
            let (mean, log_var) = model.params_mut();
            mean_opt
                .step(mean.params_mut(), &g_mean)
                .and_then(|_| lv_opt.step(log_var.params_mut(), &g_lv))
                .map_err(|e| Error::Divergence {
                    step,
                    what: e.to_string(),
                })?;
            sum += loss;
        }
        epoch_losses.push(sum / steps_per_epoch as f64);
    }
    let final_nll = dataset_nll(&model, dataset, &stats)?;
    if !final_nll.is_finite() {
        return Err(Error::Divergence {
            step,
            what: "non-finite final nll".into(),
        });
    }
    Ok((
        model,
        FitReport {
            initial_nll,
            final_nll,
            epoch_losses,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BehaviorSidecar {
    beta_min: f64,
    beta_max: f64,
    stats: Option<NormStats>,
}

/// Writes `mean.orlw`, `log_var.orlw` and `behavior.json` into `dir`.
pub fn save_behavior(model: &GaussianBehaviorModel, stats: Option<&NormStats>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    checkpoint::save_mlp(&model.mean, dir.join("mean.orlw"))?;
    checkpoint::save_mlp(&model.log_var, dir.join("log_var.orlw"))?;
    let side = BehaviorSidecar {
        beta_min: model.beta_min,
        beta_max: model.beta_max,
        stats: stats.cloned(),
    };
    let path = dir.join("behavior.json");
    let json = serde_json::to_string_pretty(&side).map_err(|e| Error::json(&path, e))?;
    std::fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))
}

pub fn load_behavior(dir: impl AsRef<Path>) -> Result<(GaussianBehaviorModel, Option<NormStats>)> {
    let dir = dir.as_ref();
    let path = dir.join("behavior.json");
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let side: BehaviorSidecar = serde_json::from_str(&text).map_err(|e| Error::json(&path, e))?;
    let mean = checkpoint::load_mlp(dir.join("mean.orlw"))?;
    let log_var = checkpoint::load_mlp(dir.join("log_var.orlw"))?;
    Ok((
        GaussianBehaviorModel::from_parts(mean, log_var, side.beta_min, side.beta_max)?,
        side.stats,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Manifest, Transition};
    use crate::numkit::{grad_check, Rng};
    use proptest::prelude::*;

    const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

    fn dataset_from(samples: Vec<(Vec<f64>, Vec<f64>)>) -> OfflineDataset {
        let n = samples.len();
        let (obs, act) = (samples[0].0.len(), samples[0].1.len());
        let transitions = samples
            .into_iter()
            .map(|(s, a)| Transition {
                next_state: s.clone(),
                state: s,
                action: a,
                reward: 0.0,
                terminal: true,
            })
            .collect();
        OfflineDataset::new(obs, act, transitions, Manifest::single("t", "p", n as u64, 0)).unwrap()
    }

    fn small_config(epochs: usize) -> BehaviorConfig {
        BehaviorConfig {
            hidden: vec![32, 32],
            epochs,
            batch_size: 128,
            lr: 1e-3,
            ..BehaviorConfig::default()
        }
    }

    #[test]
    fn nll_closed_forms() {
        assert!((gaussian_nll(&[0.0], &[0.0], &[0.0]).unwrap() - HALF_LN_2PI).abs() < 1e-12);
        assert!((gaussian_nll(&[0.0], &[0.0], &[1.0]).unwrap() - (HALF_LN_2PI + 0.5)).abs() < 1e-12);
        assert!((HALF_LN_2PI - 0.9189385).abs() < 1e-7);
        assert!(gaussian_nll(&[0.0], &[0.0], &[f64::NAN]).is_err());
    }

    #[test]
    fn nll_minimized_at_mean() {
        let at = |a: f64| gaussian_nll(&[0.4], &[-1.0], &[a]).unwrap();
        for d in [1e-3, 0.1, 1.0] {
            assert!(at(0.4) < at(0.4 + d));
            assert!(at(0.4) < at(0.4 - d));
        }
    }

    #[test]
    fn lambda_reference_values() {
        let cfg = WeightConfig::default();
        assert_eq!(compute_lambda(&cfg, 0.5), 0.5);
        // 1/(1+e^{-5}) and 1/(1+e^{5}) evaluated independently.
        let hi = 1.0 / (1.0 + (-5.0f64).exp());
        assert!((compute_lambda(&cfg, 0.0) - hi).abs() < 1e-15);
        assert!((compute_lambda(&cfg, 0.0) - 0.993_307_149_075_715_2).abs() < 1e-12);
        assert!((compute_lambda(&cfg, 1.0) - 0.006_692_850_924_284_855).abs() < 1e-12);
    }

    #[test]
    fn calibration_puts_midpoint_at_median() {
        let cfg = WeightConfig::calibrated(10.0, &[-3.0, -1.0, -2.0]).unwrap();
        assert_eq!(cfg.zeta2, -20.0);
        assert_eq!(compute_lambda(&cfg, -2.0), 0.5);
        assert!(WeightConfig::calibrated(10.0, &[]).is_err());
        assert!(WeightConfig { zeta1: -1.0, zeta2: 0.0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn lambda_decreasing_bounded_symmetric(b in -3.0f64..3.0, d in 1e-3f64..1.0, z1 in 0.1f64..10.0, z2 in -10.0f64..10.0) {
            let cfg = WeightConfig { zeta1: z1, zeta2: z2 };
            let l = compute_lambda(&cfg, b);
            prop_assert!((0.0..=1.0).contains(&l));
            prop_assert!(compute_lambda(&cfg, b + d) <= l);
            // past |logit| ~ 36 the sigmoid rounds to exactly 0 or 1
            prop_assume!((z1 * b - z2).abs() < 30.0);
            prop_assert!(l > 0.0 && l < 1.0);
            prop_assert!(compute_lambda(&cfg, b + d) < l);
            let mirror = compute_lambda(&cfg, 2.0 * z2 / z1 - b);
            prop_assert!((l + mirror - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nll_is_permutation_invariant(v in prop::collection::vec(-2.0f64..2.0, 9)) {
            let (mu, beta, a) = (&v[0..3], &v[3..6], &v[6..9]);
            let perm = |x: &[f64]| vec![x[2], x[0], x[1]];
            let base = gaussian_nll(mu, beta, a).unwrap();
            let permuted = gaussian_nll(&perm(mu), &perm(beta), &perm(a)).unwrap();
            prop_assert!((base - permuted).abs() < 1e-12);
        }
    }

    #[test]
    fn beta_hat_averages_and_clamps() {
        // Log-variance net with zero weights emits its biases directly.
        let mean = MlpNet::zeros(&[1, 2], OutputActivation::Identity).unwrap();
        let lv = MlpNet::from_params(&[1, 2], OutputActivation::Identity, vec![0.0, 0.0, 0.0, 2.0]).unwrap();
        let m = GaussianBehaviorModel::from_parts(mean.clone(), lv, -10.0, 4.0).unwrap();
        assert_eq!(m.beta_hat(&[0.3]).unwrap(), 1.0);

        let lv = MlpNet::from_params(&[1, 1], OutputActivation::Identity, vec![0.0, -50.0]).unwrap();
        let mean1 = MlpNet::zeros(&[1, 1], OutputActivation::Identity).unwrap();
        let m = GaussianBehaviorModel::from_parts(mean1.clone(), lv, -10.0, 4.0).unwrap();
        assert_eq!(m.beta_hat(&[0.0]).unwrap(), -10.0);

        let lv = MlpNet::from_params(&[1, 1], OutputActivation::Identity, vec![0.0, 0.7]).unwrap();
        let m = GaussianBehaviorModel::from_parts(mean1, lv, -10.0, 4.0).unwrap();
        assert_eq!(m.beta_hat(&[5.0]).unwrap(), 0.7);
    }

    #[test]
    fn permuting_output_rows_permutes_beta() {
        let mut rng = Rng::new(4);
        let m = GaussianBehaviorModel::new(2, 2, &[8], -10.0, 4.0, &mut rng).unwrap();
        // Swap the two output units of the final layer in both nets.
        let swap = |net: &MlpNet| {
            let mut p = net.params().to_vec();
            let off = 2 * 8 + 8;
            for c in 0..8 {
                p.swap(off + c, off + 8 + c);
            }
            p.swap(off + 16, off + 17);
            MlpNet::from_params(net.sizes(), net.output_activation(), p).unwrap()
        };
        let swapped = GaussianBehaviorModel::from_parts(swap(m.mean_net()), swap(m.log_var_net()), -10.0, 4.0).unwrap();
        let s = [0.3, -0.8];
        let (mu, beta) = m.predict(&s).unwrap();
        let (mu2, beta2) = swapped.predict(&s).unwrap();
        assert_eq!((mu[0], mu[1], beta[0], beta[1]), (mu2[1], mu2[0], beta2[1], beta2[0]));
        let a = [0.1, -0.5];
        let nll = m.nll(&s, &a).unwrap();
        let nll2 = swapped.nll(&s, &[a[1], a[0]]).unwrap();
        assert!((nll - nll2).abs() < 1e-12);
    }

    #[test]
    fn batch_nll_gradient_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = Rng::new(seed);
            let m = GaussianBehaviorModel::new(3, 2, &[8, 8], -10.0, 4.0, &mut rng).unwrap();
            let states = Array2::from_shape_fn((6, 3), |_| rng.normal());
            let actions = Array2::from_shape_fn((6, 2), |_| rng.uniform_range(-1.0, 1.0));
            let (_, g_mean, g_lv) = m.nll_and_grads(states.view(), actions.view()).unwrap();
            let loss_mean = |p: &[f64]| {
                let net = MlpNet::from_params(m.mean_net().sizes(), OutputActivation::Identity, p.to_vec()).unwrap();
                let mm = GaussianBehaviorModel::from_parts(net, m.log_var_net().clone(), -10.0, 4.0).unwrap();
                mm.nll_and_grads(states.view(), actions.view()).unwrap().0
            };
            let r = grad_check(loss_mean, m.mean_net().params(), &g_mean, 1e-6, &mut rng);
            assert!(r.max_rel_error < 1e-5, "{r:?}");
            let loss_lv = |p: &[f64]| {
                let net = MlpNet::from_params(m.log_var_net().sizes(), OutputActivation::Identity, p.to_vec()).unwrap();
                let mm = GaussianBehaviorModel::from_parts(m.mean_net().clone(), net, -10.0, 4.0).unwrap();
                mm.nll_and_grads(states.view(), actions.view()).unwrap().0
            };
            let r = grad_check(loss_lv, m.log_var_net().params(), &g_lv, 1e-6, &mut rng);
            assert!(r.max_rel_error < 1e-5, "{r:?}");
        }
    }

    #[test]
    fn recovers_state_independent_gaussian() {
        let mut rng = Rng::new(21);
        let samples = (0..4000)
            .map(|_| (vec![rng.uniform_range(-1.0, 1.0)], vec![0.3 + 0.2 * rng.normal()]))
            .collect();
        let d = dataset_from(samples);
        let (m, report) = fit_behavior(&d, &small_config(30), &mut Rng::new(1)).unwrap();
        assert!(report.final_nll <= report.initial_nll);
        assert!(*report.epoch_losses.last().unwrap() <= report.epoch_losses[0]);
        for s in [-0.8, 0.0, 0.8] {
            let z = d.stats().unwrap().normalize(&[s]).unwrap();
            let (mu, beta) = m.predict(&z).unwrap();
            let sigma = (0.5 * beta[0]).exp();
            assert!((mu[0] - 0.3).abs() < 0.05, "mu {mu:?}");
            assert!((sigma - 0.2).abs() < 0.04, "sigma {sigma}");
        }
    }

    #[test]
    fn separates_noisy_and_precise_regions() {
        let mut rng = Rng::new(5);
        let samples = (0..4000)
            .map(|i| {
                let s = if i % 2 == 0 { rng.uniform_range(-1.0, -0.2) } else { rng.uniform_range(0.2, 1.0) };
                let sd = if s < 0.0 { 0.5 } else { 0.05 };
                (vec![s], vec![(0.1 + sd * rng.normal()).clamp(-1.0, 1.0)])
            })
            .collect();
        let d = dataset_from(samples);
        let (m, _) = fit_behavior(&d, &small_config(20), &mut Rng::new(2)).unwrap();
        let stats = d.stats().unwrap();
        let region_mean = |lo: f64, hi: f64| {
            let pts: Vec<f64> = (0..20).map(|k| lo + (hi - lo) * k as f64 / 19.0).collect();
            pts.iter()
                .map(|&s| m.beta_hat(&stats.normalize(&[s]).unwrap()).unwrap())
                .sum::<f64>()
                / pts.len() as f64
        };
        let noisy = region_mean(-1.0, -0.2);
        let precise = region_mean(0.2, 1.0);
        assert!(noisy > precise, "noisy {noisy} precise {precise}");
    }

    #[test]
    fn repeated_pair_drives_variance_to_floor() {
        let d = dataset_from(vec![(vec![0.5], vec![0.25])]);
        let cfg = BehaviorConfig {
            hidden: vec![8],
            epochs: 3000,
            batch_size: 1,
            lr: 1e-2,
            ..BehaviorConfig::default()
        };
        let (m, _) = fit_behavior(&d, &cfg, &mut Rng::new(3)).unwrap();
        let z = d.stats().unwrap().normalize(&[0.5]).unwrap();
        assert_eq!(m.beta_hat(&z).unwrap(), DEFAULT_BETA_MIN);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = Rng::new(8);
        let m = GaussianBehaviorModel::new(3, 2, &[4], -10.0, 4.0, &mut rng).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stats = NormStats::identity(3);
        save_behavior(&m, Some(&stats), dir.path()).unwrap();
        let (back, s) = load_behavior(dir.path()).unwrap();
        assert_eq!(back, m);
        assert_eq!(s, Some(stats));
    }
}
