use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::Context;
use ndarray::Array2;
use orl_core::behavior::{fit_behavior, save_behavior, BehaviorConfig, FitReport, GaussianBehaviorModel, WeightConfig};
use orl_core::data::OfflineDataset;
use orl_core::numkit::Rng;
use serde::{Deserialize, Serialize};

use crate::error::CliResult;

/// How `ζ` is chosen for the report.
#[derive(Debug, Clone, Copy)]
pub enum Weighting {
    Fixed(WeightConfig),
    /// `ζ2 = ζ1 · median β̂` over the dataset.
    Calibrated { zeta1: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SourceHistogram {
    pub policy: String,
    pub seed: u64,
    pub count: u64,
    pub mean_lambda: f64,
    pub mean_beta_hat: f64,
    pub counts: Vec<u64>,
}

/// Per-source histogram of `λ(s)` over all dataset states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaHistogram {
    pub weights: WeightConfig,
    pub edges: Vec<f64>,
    pub total: u64,
    pub sources: Vec<SourceHistogram>,
}

#[derive(Serialize)]
struct StateRecord<'a> {
    index: usize,
    source: &'a str,
    state: &'a [f64],
    beta_hat: f64,
    lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitSummary {
    pub seed: u64,
    pub config: BehaviorConfig,
    pub report: FitReport,
    pub weights: WeightConfig,
}

fn bin_of(lambda: f64, bins: usize) -> usize {
    ((lambda * bins as f64) as usize).min(bins - 1)
}

pub fn histogram(
    data: &OfflineDataset,
    beta: &[f64],
    lambda: &[f64],
    weights: WeightConfig,
    bins: usize,
) -> LambdaHistogram {
    let mut sources: Vec<SourceHistogram> = data
        .manifest()
        .sources
        .iter()
        .map(|s| SourceHistogram {
            policy: s.policy.clone(),
            seed: s.seed,
            count: 0,
            mean_lambda: 0.0,
            mean_beta_hat: 0.0,
            counts: vec![0; bins],
        })
        .collect();
    for i in 0..data.len() {
        let src = &mut sources[data.source_of(i).expect("manifest covers every transition")];
        src.count += 1;
        src.mean_lambda += lambda[i];
        src.mean_beta_hat += beta[i];
        src.counts[bin_of(lambda[i], bins)] += 1;
    }
    for s in &mut sources {
        if s.count > 0 {
            s.mean_lambda /= s.count as f64;
            s.mean_beta_hat /= s.count as f64;
        }
    }
    LambdaHistogram {
        weights,
        edges: (0..=bins).map(|k| k as f64 / bins as f64).collect(),
        total: data.len() as u64,
        sources,
    }
}

fn normalized_states(data: &OfflineDataset) -> CliResult<Array2<f64>> {
    let stats = data.stats()?;
    let mut states = Array2::zeros((data.len(), data.obs_dim()));
    for (mut row, t) in states.rows_mut().into_iter().zip(data.transitions()) {
        for (d, v) in row.iter_mut().zip(stats.normalize(&t.state)?) {
            *d = v;
        }
    }
    Ok(states)
}

/// Fits the behavior model, saves it to `out`, and writes
/// `fit_report.json`, `lambda_histogram.json` and `uncertainty.jsonl`.
pub fn fit_and_report(
    data: &OfflineDataset,
    config: &BehaviorConfig,
    weighting: Weighting,
    bins: usize,
    seed: u64,
    out: &Path,
) -> CliResult<(GaussianBehaviorModel, LambdaHistogram)> {
    let (model, report) = fit_behavior(data, config, &mut Rng::new(seed))?;
    save_behavior(&model, Some(data.stats()?), out)?;
    let states = normalized_states(data)?;
    let beta = model.beta_hat_batch(states.view())?.to_vec();
    let weights = match weighting {
        Weighting::Fixed(w) => w,
        Weighting::Calibrated { zeta1 } => WeightConfig::calibrated(zeta1, &beta)?,
    };
    let lambda = model.lambda_batch(&weights, states.view())?.to_vec();
    let hist = histogram(data, &beta, &lambda, weights, bins);

    let write = || -> anyhow::Result<()> {
        let summary = FitSummary {
            seed,
            config: config.clone(),
            report,
            weights,
        };
        std::fs::write(out.join("fit_report.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
        std::fs::write(out.join("lambda_histogram.json"), serde_json::to_string_pretty(&hist)? + "\n")?;
        let path = out.join("uncertainty.jsonl");
        let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
        let sources = &data.manifest().sources;
        for (i, t) in data.transitions().iter().enumerate() {
            let rec = StateRecord {
                index: i,
                source: &sources[data.source_of(i).expect("covered")].policy,
                state: &t.state,
                beta_hat: beta[i],
                lambda: lambda[i],
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    };
    write()?;
    Ok((model, hist))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_cover_the_unit_interval() {
        assert_eq!(bin_of(0.0, 20), 0);
        assert_eq!(bin_of(0.049, 20), 0);
        assert_eq!(bin_of(0.05, 20), 1);
        assert_eq!(bin_of(1.0, 20), 19);
    }
}
