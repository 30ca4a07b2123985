use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use orl_core::agents::{train_bc_only, ActorObjective, BcPolicy, DeterministicActor, Td3Agent, TrainLog, TrainRecord};
use orl_core::behavior::load_behavior;
use orl_core::data::{load_dataset, mix_datasets, OfflineDataset};
use orl_core::envs::{evaluate_policy, EnvSpec, EvalResult};
use orl_core::numkit::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub step: u64,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalResult>,
}

impl From<&TrainRecord> for MetricsRecord {
    fn from(r: &TrainRecord) -> Self {
        let metrics = [
            ("critic_loss", r.critic_loss),
            ("actor_loss", r.actor_loss),
            ("mean_lambda", r.mean_lambda),
            ("mean_abs_q", r.mean_abs_q),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
        .collect();
        Self {
            step: r.step,
            metrics,
            eval: r.eval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub agent: String,
    pub env: String,
    pub seed: u64,
    pub datasets: Vec<PathBuf>,
    pub final_step: u64,
    pub final_mean_return: f64,
    pub final_std_return: f64,
    pub final_normalized_score: f64,
    pub config: RunConfig,
}

pub fn load_mixture(paths: &[PathBuf]) -> CliResult<OfflineDataset> {
    let mut iter = paths.iter();
    let first = iter.next().ok_or_else(|| CliError::Config("no datasets given".into()))?;
    let mut data = load_dataset(first)?;
    for p in iter {
        data = mix_datasets(&data, &load_dataset(p)?)?;
    }
    Ok(data)
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn write_metrics(path: &Path, log: &TrainLog) -> anyhow::Result<()> {
    let mut out = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    for r in &log.records {
        serde_json::to_writer(&mut out, &MetricsRecord::from(r))?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Trains one configuration and writes its run directory.
pub fn train(cfg: &RunConfig) -> CliResult<RunSummary> {
    cfg.validate()?;
    let kind = cfg.env_kind()?;
    let data = load_mixture(&cfg.datasets)?;
    if data.env() != kind.name() {
        return Err(CliError::Config(format!(
            "datasets were collected on '{}' but the config names '{}'",
            data.env(),
            kind.name()
        )));
    }
    let stats = data.stats()?.clone();
    let behavior = match (&cfg.behavior, cfg.agent.needs_behavior()) {
        (Some(dir), true) => {
            let (model, fitted) = load_behavior(dir)?;
            if fitted.as_ref().is_some_and(|s| s != &stats) {
                return Err(CliError::Config(format!(
                    "behavior checkpoint {} was fitted with different state normalization than these datasets",
                    dir.display()
                )));
            }
            Some(model)
        }
        _ => None,
    };

    std::fs::create_dir_all(&cfg.out_dir)
        .with_context(|| format!("creating {}", cfg.out_dir.display()))
        .map_err(CliError::from)?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.to_toml())
        .context("echoing config")
        .map_err(CliError::from)?;

    let spec = EnvSpec::new(kind);
    let eval = |episodes: usize| {
        let spec = spec.clone();
        let seed = cfg.eval_seed;
        move |_: u64, actor: &DeterministicActor| -> orl_core::Result<Option<EvalResult>> {
            Ok(Some(evaluate_policy(&spec, &mut actor.clone(), episodes, seed)?))
        }
    };
    let checkpoint = cfg.out_dir.join("checkpoint");
    let log = if cfg.agent.is_td3() {
        let objective = match behavior {
            Some(behavior) => ActorObjective::Td3Rkl {
                behavior,
                weights: cfg.weights,
                alpha: cfg.regularizer.alpha,
            },
            None => ActorObjective::Td3Bc,
        };
        let mut agent = Td3Agent::new(data.obs_dim(), data.act_dim(), stats, cfg.td3.clone(), objective, cfg.seed)?;
        let log = agent.train(&data, eval(cfg.td3.eval_episodes))?;
        agent.save(&checkpoint)?;
        log
    } else {
        let reg = cfg.regularizer_spec();
        let mut rng = Rng::new(cfg.seed);
        let mut policy = BcPolicy::for_spec(&reg, data.obs_dim(), data.act_dim(), &cfg.bc.hidden, &mut rng)?;
        let log = train_bc_only(&mut policy, &data, &reg, behavior.as_ref(), &cfg.bc, &mut rng, eval(cfg.bc.eval_episodes))?;
        policy.save(&reg, &stats, &checkpoint)?;
        log
    };
    write_metrics(&cfg.out_dir.join("metrics.jsonl"), &log)?;

    let (last, final_step) = log
        .records
        .iter()
        .rev()
        .find_map(|r| r.eval.as_ref().map(|e| (*e, r.step)))
        .ok_or_else(|| CliError::Runtime("training produced no evaluation".into()))?;
    let summary = RunSummary {
        agent: cfg.agent.name().into(),
        env: kind.name().into(),
        seed: cfg.seed,
        datasets: cfg.datasets.clone(),
        final_step,
        final_mean_return: last.mean_return,
        final_std_return: last.std_return,
        final_normalized_score: last.normalized_score,
        config: cfg.clone(),
    };
    write_json(&cfg.out_dir.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFailure {
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub agent: String,
    pub env: String,
    pub seeds: Vec<u64>,
    pub scores: Vec<f64>,
    pub failed: Vec<SeedFailure>,
    /// Set when some seeds failed and the aggregate covers the rest only.
    pub partial: bool,
    pub mean: f64,
    /// Population standard deviation; 0 for a single seed.
    pub std: f64,
}

/// Mean and population standard deviation.
pub fn aggregate(scores: &[f64]) -> (f64, f64) {
    if scores.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = scores.len() as f64;
    let mean = scores.iter().sum::<f64>() / n;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Runs `template` once per seed, each in `<out_dir>/seed-<k>`, and writes
/// `sweep.json` plus a one-row `sweep.tsv` table.
pub fn sweep(template: &RunConfig, seeds: &[u64], jobs: Option<usize>) -> CliResult<SweepSummary> {
    if seeds.is_empty() {
        return Err(CliError::Config("sweep needs at least one seed".into()));
    }
    template.validate()?;
    let configs: Vec<RunConfig> = seeds
        .iter()
        .map(|&seed| RunConfig {
            seed,
            out_dir: template.out_dir.join(format!("seed-{seed}")),
            ..template.clone()
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let results: Vec<CliResult<RunSummary>> = pool.install(|| configs.par_iter().map(train).collect());

    let mut scored = Vec::new();
    let mut failed = Vec::new();
    for (seed, r) in seeds.iter().zip(results) {
        match r {
            Ok(s) => scored.push((*seed, s.final_normalized_score)),
            Err(e) => failed.push(SeedFailure {
                seed: *seed,
                error: e.to_string(),
            }),
        }
    }
    let scores: Vec<f64> = scored.iter().map(|(_, s)| *s).collect();
    let (mean, std) = aggregate(&scores);
    let summary = SweepSummary {
        agent: template.agent.name().into(),
        env: template.env.clone(),
        seeds: scored.iter().map(|(s, _)| *s).collect(),
        scores,
        partial: !failed.is_empty(),
        failed,
        mean,
        std,
    };
    std::fs::create_dir_all(&template.out_dir)
        .context("creating sweep directory")
        .map_err(CliError::from)?;
    write_json(&template.out_dir.join("sweep.json"), &summary)?;
    let table = format!(
        "agent\tenv\tseeds\tscore\tpartial\n{}\t{}\t{}\t{}\t{}\n",
        summary.agent,
        summary.env,
        summary.seeds.len(),
        format_mean_std(mean, std),
        summary.partial
    );
    std::fs::write(template.out_dir.join("sweep.tsv"), table)
        .context("writing sweep table")
        .map_err(CliError::from)?;
    Ok(summary)
}

pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2}±{std:.2}")
}
