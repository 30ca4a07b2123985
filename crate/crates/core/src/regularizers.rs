//! Behavior-cloning loss terms.
//!
//! Every loss sums over action dimensions. Deterministic losses act on the
//! actor output `μ`; the stochastic ones act on a [`StochasticPolicy`].

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::behavior::GaussianBehaviorModel;
use crate::error::{ensure_len, Error, Result};
use crate::numkit::{MlpNet, OutputActivation, Rng};

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegularizerKind {
    MseBc,
    RklContrastive,
    ForwardKl,
    ReverseKlStochastic,
}

impl RegularizerKind {
    pub fn is_stochastic(self) -> bool {
        matches!(self, RegularizerKind::ForwardKl | RegularizerKind::ReverseKlStochastic)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegularizerSpec {
    pub kind: RegularizerKind,
    /// Weight of the negative term (`rkl-contrastive` only).
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Monte-Carlo samples per state (`reverse-kl-stochastic` only).
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_alpha() -> f64 {
    1.0
}

fn default_samples() -> usize {
    10
}

impl RegularizerSpec {
    pub fn new(kind: RegularizerKind) -> Self {
        Self {
            kind,
            alpha: default_alpha(),
            samples: default_samples(),
        }
    }

    pub fn rkl(alpha: f64) -> Self {
        Self {
            alpha,
            ..Self::new(RegularizerKind::RklContrastive)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("alpha must be finite and ≥ 0, got {}", self.alpha)));
        }
        if self.samples == 0 {
            return Err(Error::InvalidArgument("monte-carlo sample count must be ≥ 1".into()));
        }
        Ok(())
    }

    /// Whether minibatches for this regularizer need negative action pairs.
    pub fn needs_negatives(&self) -> bool {
        self.kind == RegularizerKind::RklContrastive && self.alpha != 0.0
    }
}

/// `Σ_j (μ_j − a_j)²`.
pub fn mse_bc_loss(mu: &[f64], a: &[f64]) -> Result<f64> {
    ensure_len("mse-bc action", mu.len(), a.len())?;
    Ok(mu.iter().zip(a).map(|(m, x)| (m - x).powi(2)).sum())
}

/// `Σ_j [(μ_j − a_j)² − α(μ_j − n_j)²]` with `n = (a1 + a2) / 2`.
pub fn rkl_contrastive_loss(mu: &[f64], a: &[f64], a1: &[f64], a2: &[f64], alpha: f64) -> Result<f64> {
    ensure_len("rkl action", mu.len(), a.len())?;
    ensure_len("rkl negative a1", mu.len(), a1.len())?;
    ensure_len("rkl negative a2", mu.len(), a2.len())?;
    let pull = mse_bc_loss(mu, a)?;
    if alpha == 0.0 {
        return Ok(pull);
    }
    let push: f64 = mu
        .iter()
        .zip(a1.iter().zip(a2))
        .map(|(m, (x1, x2))| (m - 0.5 * (x1 + x2)).powi(2))
        .sum();
    Ok(pull - alpha * push)
}

/// Per-row loss and `∂/∂μ` of the deterministic regularizers over a batch.
///
/// `midpoints` holds `(a1 + a2) / 2` per row and is ignored when `alpha == 0`,
/// in which case the result is exactly that of the MSE loss.
pub fn contrastive_batch(
    mu: ArrayView2<'_, f64>,
    actions: ArrayView2<'_, f64>,
    midpoints: Option<ArrayView2<'_, f64>>,
    alpha: f64,
) -> Result<(Array1<f64>, Array2<f64>)> {
    ensure_len("bc batch rows", mu.nrows(), actions.nrows())?;
    ensure_len("bc batch cols", mu.ncols(), actions.ncols())?;
    let mut grad = Array2::zeros(mu.raw_dim());
    let mut loss = Array1::zeros(mu.nrows());
    Zip::from(&mut grad).and(mu).and(actions).for_each(|g, &m, &a| *g = 2.0 * (m - a));
    for ((l, m), a) in loss.iter_mut().zip(mu.rows()).zip(actions.rows()) {
        *l = m.iter().zip(a).map(|(m, a)| (m - a).powi(2)).sum();
    }
    if alpha != 0.0 {
        let mid = midpoints.ok_or_else(|| Error::InvalidArgument("rkl-contrastive with α > 0 needs negative pairs".into()))?;
        ensure_len("negative rows", mu.nrows(), mid.nrows())?;
        ensure_len("negative cols", mu.ncols(), mid.ncols())?;
        Zip::from(&mut grad).and(mu).and(mid).for_each(|g, &m, &n| *g -= alpha * 2.0 * (m - n));
        for ((l, m), n) in loss.iter_mut().zip(mu.rows()).zip(mid.rows()) {
            *l -= alpha * m.iter().zip(n).map(|(m, n)| (m - n).powi(2)).sum::<f64>();
        }
    }
    Ok((loss, grad))
}

/// Diagonal Gaussian policy with separate mean and log-std networks.
/// The log-std is clamped to `[LOG_STD_MIN, LOG_STD_MAX]`; densities are
/// unsquashed.
#[derive(Debug, Clone, PartialEq)]
pub struct StochasticPolicy {
    pub mean: MlpNet,
    pub log_std: MlpNet,
}

/// Loss plus parameter gradients of both policy networks.
#[derive(Debug, Clone)]
pub struct PolicyGrads {
    pub loss: f64,
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl StochasticPolicy {
    pub fn new(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut Rng) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(act_dim);
        Ok(Self {
            mean: MlpNet::new(&sizes, OutputActivation::Identity, rng)?,
            log_std: MlpNet::new(&sizes, OutputActivation::Identity, rng)?,
        })
    }

    pub fn act_dim(&self) -> usize {
        self.mean.output_dim()
    }

    /// Mean and clamped log-std at one state.
    pub fn predict(&self, s: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mu = self.mean.forward(s)?;
        let ls = self
            .log_std
            .forward(s)?
            .into_iter()
            .map(|l| l.clamp(LOG_STD_MIN, LOG_STD_MAX))
            .collect();
        Ok((mu, ls))
    }

    /// Batch forward-KL (negative log-likelihood) loss, averaged over rows.
    pub fn forward_kl_grads(&self, states: ArrayView2<'_, f64>, actions: ArrayView2<'_, f64>) -> Result<PolicyGrads> {
        ensure_len("policy actions", self.act_dim(), actions.ncols())?;
        let n = states.nrows() as f64;
        let mt = self.mean.forward_tape(states)?;
        let lt = self.log_std.forward_tape(states)?;
        let mut d_mu = Array2::zeros(mt.output().raw_dim());
        let mut d_ls = Array2::zeros(mt.output().raw_dim());
        let mut total = 0.0;
        let half_log2pi = 0.5 * (2.0 * PI).ln();
        Zip::from(&mut d_mu)
            .and(&mut d_ls)
            .and(mt.output())
            .and(lt.output())
            .and(actions)
            .for_each(|dm, dl, &m, &raw, &a| {
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let inv_var = (-2.0 * ls).exp();
                let diff = m - a;
                total += half_log2pi + ls + 0.5 * diff * diff * inv_var;
                *dm = diff * inv_var / n;
                *dl = if raw > LOG_STD_MIN && raw < LOG_STD_MAX {
                    (1.0 - diff * diff * inv_var) / n
                } else {
                    0.0
                };
            });
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::NonFinite("forward-kl loss".into()));
        }
        Ok(PolicyGrads {
            loss,
            mean: self.mean.backward(&mt, d_mu.view())?.params,
            log_std: self.log_std.backward(&lt, d_ls.view())?.params,
        })
    }

    /// Batch reparameterized Monte-Carlo estimate of
    /// `KL(π_φ(·|s) ‖ π̂_b(·|s))`, averaged over rows, `samples` draws per row.
    pub fn reverse_kl_grads(
        &self,
        behavior: &GaussianBehaviorModel,
        states: ArrayView2<'_, f64>,
        samples: usize,
        rng: &mut Rng,
    ) -> Result<PolicyGrads> {
        if samples == 0 {
            return Err(Error::InvalidArgument("reverse-kl needs at least one sample".into()));
        }
        ensure_len("behavior act_dim", self.act_dim(), behavior.act_dim())?;
        let n = states.nrows() as f64;
        let k = samples as f64;
        let mt = self.mean.forward_tape(states)?;
        let lt = self.log_std.forward_tape(states)?;
        let (b_mu, b_beta) = behavior.predict_batch(states)?;
        let mut d_mu = Array2::zeros(mt.output().raw_dim());
        let mut d_ls = Array2::zeros(mt.output().raw_dim());
        let mut total = 0.0;
        let half_log2pi = 0.5 * (2.0 * PI).ln();
        for i in 0..states.nrows() {
            for j in 0..self.act_dim() {
                let m = mt.output()[(i, j)];
                let raw = lt.output()[(i, j)];
                let ls = raw.clamp(LOG_STD_MIN, LOG_STD_MAX);
                let sd = ls.exp();
                let (bm, bb) = (b_mu[(i, j)], b_beta[(i, j)]);
                let b_inv_var = (-bb).exp();
                let (mut gm, mut gl) = (0.0, 0.0);
                for _ in 0..samples {
                    let eps = rng.normal();
                    let a = m + sd * eps;
                    let log_p = -half_log2pi - ls - 0.5 * eps * eps;
                    let log_b = -half_log2pi - 0.5 * bb - 0.5 * (a - bm).powi(2) * b_inv_var;
                    total += log_p - log_b;
                    let da = (a - bm) * b_inv_var;
                    gm += da;
                    gl += -1.0 + da * sd * eps;
                }
                d_mu[(i, j)] = gm / (k * n);
                d_ls[(i, j)] = if raw > LOG_STD_MIN && raw < LOG_STD_MAX { gl / (k * n) } else { 0.0 };
            }
        }
        let loss = total / (k * n);
        if !loss.is_finite() {
            return Err(Error::NonFinite("reverse-kl loss".into()));
        }
        Ok(PolicyGrads {
            loss,
            mean: self.mean.backward(&mt, d_mu.view())?.params,
            log_std: self.log_std.backward(&lt, d_ls.view())?.params,
        })
    }
}

/// `−log π_φ(a|s)` under the diagonal Gaussian policy.
pub fn forward_kl_bc_loss(policy: &StochasticPolicy, s: &[f64], a: &[f64]) -> Result<f64> {
    ensure_len("forward-kl action", policy.act_dim(), a.len())?;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("forward-kl action".into()));
    }
    let (mu, ls) = policy.predict(s)?;
    let beta: Vec<f64> = ls.iter().map(|l| 2.0 * l).collect();
    crate::behavior::gaussian_nll(&mu, &beta, a)
}

/// Single-state Monte-Carlo reverse-KL estimate with `samples` draws.
pub fn reverse_kl_stochastic_loss(
    policy: &StochasticPolicy,
    behavior: &GaussianBehaviorModel,
    s: &[f64],
    samples: usize,
    rng: &mut Rng,
) -> Result<f64> {
    let x = ArrayView2::from_shape((1, s.len()), s).expect("row vector");
    ensure_len("reverse-kl state", policy.mean.input_dim(), s.len())?;
    Ok(policy.reverse_kl_grads(behavior, x, samples, rng)?.loss)
}

/// Closed-form `KL(N(μ1, σ1²) ‖ N(μ2, σ2²))` summed over dimensions.
pub fn gaussian_kl(mu1: &[f64], sd1: &[f64], mu2: &[f64], sd2: &[f64]) -> f64 {
    mu1.iter()
        .zip(sd1)
        .zip(mu2.iter().zip(sd2))
        .map(|((m1, s1), (m2, s2))| (s2 / s1).ln() + (s1 * s1 + (m1 - m2).powi(2)) / (2.0 * s2 * s2) - 0.5)
        .sum()
}
