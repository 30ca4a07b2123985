//! Shared fixtures for the integration tests and the acceptance harness.
#![allow(dead_code)]

use ndarray::Array2;
use orl_core::agents::{ActorObjective, Td3Agent, Td3Hyperparams};
use orl_core::behavior::GaussianBehaviorModel;
use orl_core::data::{sample_minibatch, Minibatch, Negatives, OfflineDataset};
use orl_core::envs::{collect_dataset, EnvKind, PolicyTier};
use orl_core::numkit::{grad_check, MlpNet, OutputActivation, Rng};
use orl_core::regularizers::{contrastive_batch, mse_bc_loss, rkl_contrastive_loss, StochasticPolicy};

pub const GRAD_TOL: f64 = 1e-5;
pub const GRAD_INSTANCES: u64 = 20;
const H: f64 = 1e-6;
const HIDDEN: [usize; 2] = [8, 8];
const BATCH: usize = 16;

/// Every loss covered by the gradient suite.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    Critic,
    MseBc,
    Rkl(f64),
    GaussianNll,
    ForwardKl,
    ReverseKl,
}

pub const ALL_LOSSES: [Loss; 8] = [
    Loss::Critic,
    Loss::MseBc,
    Loss::Rkl(0.0),
    Loss::Rkl(0.5),
    Loss::Rkl(1.0),
    Loss::GaussianNll,
    Loss::ForwardKl,
    Loss::ReverseKl,
];

fn fixture(seed: u64) -> (OfflineDataset, Minibatch) {
    let data = collect_dataset(EnvKind::PointMass2d, PolicyTier::Medium, 200, seed).unwrap();
    let mut rng = Rng::new(seed ^ 0xBA7C);
    let mut batch = sample_minibatch(&data, BATCH, Negatives::Sample, &mut rng).unwrap();
    batch.normalize_states(data.stats().unwrap()).unwrap();
    (data, batch)
}

// Zero-initialized biases put a hidden unit exactly on the ReLU kink whenever
// every unit feeding it is dead, so instances get random biases too.
fn jitter(net: &mut MlpNet, rng: &mut Rng) {
    net.params_mut().iter_mut().for_each(|p| *p += rng.uniform_range(-0.1, 0.1));
}

fn net(sizes: &[usize], out: OutputActivation, rng: &mut Rng) -> MlpNet {
    let mut n = MlpNet::new(sizes, out, rng).unwrap();
    jitter(&mut n, rng);
    n
}

fn with_params(net: &MlpNet, p: &[f64]) -> MlpNet {
    let mut n = net.clone();
    n.params_mut().copy_from_slice(p);
    n
}

fn row(a: &Array2<f64>, i: usize) -> Vec<f64> {
    a.row(i).to_vec()
}

fn behavior(obs: usize, act: usize, rng: &mut Rng) -> GaussianBehaviorModel {
    let sizes = [obs, HIDDEN[0], HIDDEN[1], act];
    let mean = net(&sizes, OutputActivation::Identity, rng);
    let log_var = net(&sizes, OutputActivation::Identity, rng);
    GaussianBehaviorModel::from_parts(mean, log_var, -10.0, 4.0).unwrap()
}

/// Worst relative error between analytic and central-difference gradients
/// for one seeded instance of `loss`.
pub fn max_rel_error(loss: Loss, seed: u64) -> f64 {
    let (data, batch) = fixture(seed);
    let n = batch.len() as f64;
    let mut rng = Rng::new(seed);
    let mut check_rng = Rng::with_stream(seed, 7);
    let (obs, act) = (data.obs_dim(), data.act_dim());
    let sizes = [obs, HIDDEN[0], HIDDEN[1], act];
    match loss {
        Loss::Critic => {
            let hp = Td3Hyperparams {
                hidden: HIDDEN.to_vec(),
                batch_size: BATCH,
                ..Td3Hyperparams::default()
            };
            let mut agent = Td3Agent::new(obs, act, data.stats().unwrap().clone(), hp, ActorObjective::Td3Bc, seed).unwrap();
            let (c1, c2) = agent.critics_mut();
            jitter(c1, &mut rng);
            jitter(c2, &mut rng);
            let y = agent.critic_targets(&batch).unwrap();
            let (_, grads) = agent.critic_grads(&batch, &y).unwrap();
            let x = ndarray::concatenate![ndarray::Axis(1), batch.states, batch.actions];
            let (c1, c2) = agent.critics();
            [c1.clone(), c2.clone()]
                .iter()
                .zip(&grads)
                .map(|(c, g)| {
                    let f = |p: &[f64]| {
                        let q = with_params(c, p).forward_batch(x.view()).unwrap();
                        (&q.column(0) - &y).mapv(|d| d * d).sum() / n
                    };
                    grad_check(f, c.params(), g, H, &mut check_rng).max_rel_error
                })
                .fold(0.0, f64::max)
        }
        Loss::MseBc | Loss::Rkl(_) => {
            let actor = net(&sizes, OutputActivation::ScaledTanh { bound: 1.0 }, &mut rng);
            let alpha = if let Loss::Rkl(a) = loss { a } else { 0.0 };
            let pairs = batch.negatives.as_ref().unwrap();
            let mid = pairs.midpoints();
            let tape = actor.forward_tape(batch.states.view()).unwrap();
            let mid_arg = (loss != Loss::MseBc).then(|| mid.view());
            let (_, g) = contrastive_batch(tape.output().view(), batch.actions.view(), mid_arg, alpha).unwrap();
            let analytic = actor.backward(&tape, (g / n).view()).unwrap().params;
            let f = |p: &[f64]| {
                let mu = with_params(&actor, p).forward_batch(batch.states.view()).unwrap();
                (0..batch.len())
                    .map(|i| match loss {
                        Loss::MseBc => mse_bc_loss(&row(&mu, i), &row(&batch.actions, i)).unwrap(),
                        _ => rkl_contrastive_loss(
                            &row(&mu, i),
                            &row(&batch.actions, i),
                            &row(&pairs.first, i),
                            &row(&pairs.second, i),
                            alpha,
                        )
                        .unwrap(),
                    })
                    .sum::<f64>()
                    / n
            };
            grad_check(f, actor.params(), &analytic, H, &mut check_rng).max_rel_error
        }
        Loss::GaussianNll => {
            let model = behavior(obs, act, &mut rng);
            let (_, g_mean, g_lv) = model.nll_and_grads(batch.states.view(), batch.actions.view()).unwrap();
            let (bmin, bmax) = model.clamp_bounds();
            let mean_loss = |m: &GaussianBehaviorModel| {
                (0..batch.len())
                    .map(|i| m.nll(&row(&batch.states, i), &row(&batch.actions, i)).unwrap())
                    .sum::<f64>()
                    / n
            };
            let r1 = grad_check(
                |p| {
                    let m = GaussianBehaviorModel::from_parts(with_params(model.mean_net(), p), model.log_var_net().clone(), bmin, bmax).unwrap();
                    mean_loss(&m)
                },
                model.mean_net().params(),
                &g_mean,
                H,
                &mut check_rng,
            );
            let r2 = grad_check(
                |p| {
                    let m = GaussianBehaviorModel::from_parts(model.mean_net().clone(), with_params(model.log_var_net(), p), bmin, bmax).unwrap();
                    mean_loss(&m)
                },
                model.log_var_net().params(),
                &g_lv,
                H,
                &mut check_rng,
            );
            r1.max_rel_error.max(r2.max_rel_error)
        }
        Loss::ForwardKl | Loss::ReverseKl => {
            let mut policy = StochasticPolicy::new(obs, act, &HIDDEN, &mut rng).unwrap();
            jitter(&mut policy.mean, &mut rng);
            jitter(&mut policy.log_std, &mut rng);
            let behavior = behavior(obs, act, &mut rng);
            let mc_seed = seed.wrapping_mul(31) + 1;
            let eval = |p: &StochasticPolicy| match loss {
                Loss::ForwardKl => p.forward_kl_grads(batch.states.view(), batch.actions.view()).unwrap(),
                _ => p
                    .reverse_kl_grads(&behavior, batch.states.view(), 10, &mut Rng::new(mc_seed))
                    .unwrap(),
            };
            let grads = eval(&policy);
            // Forward-KL loss is recomputed per state as an independent oracle;
            // the Monte-Carlo estimate reuses the same noise draws.
            let loss_of = |p: &StochasticPolicy| match loss {
                Loss::ForwardKl => {
                    (0..batch.len())
                        .map(|i| {
                            orl_core::regularizers::forward_kl_bc_loss(p, &row(&batch.states, i), &row(&batch.actions, i)).unwrap()
                        })
                        .sum::<f64>()
                        / n
                }
                _ => eval(p).loss,
            };
            let r1 = grad_check(
                |q| {
                    let mut p = policy.clone();
                    p.mean = with_params(&policy.mean, q);
                    loss_of(&p)
                },
                policy.mean.params(),
                &grads.mean,
                H,
                &mut check_rng,
            );
            let r2 = grad_check(
                |q| {
                    let mut p = policy.clone();
                    p.log_std = with_params(&policy.log_std, q);
                    loss_of(&p)
                },
                policy.log_std.params(),
                &grads.log_std,
                H,
                &mut check_rng,
            );
            r1.max_rel_error.max(r2.max_rel_error)
        }
    }
}

/// Worst error over the standard seeded instances of `loss`.
pub fn suite_worst(loss: Loss) -> f64 {
    (0..GRAD_INSTANCES).map(|s| max_rel_error(loss, 1000 + s)).fold(0.0, f64::max)
}
