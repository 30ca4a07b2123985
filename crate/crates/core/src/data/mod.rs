//! Offline datasets: container, normalization, mixing, sampling and file formats.

mod io;
mod sample;

use serde::{Deserialize, Serialize};

pub use io::{
    decode_dataset, encode_dataset, export_csv, import_csv, load_dataset, manifest_path, save_dataset,
    DATASET_MAGIC, DATASET_VERSION,
};
pub use sample::{sample_minibatch, Minibatch, NegativePairs, Negatives};

use crate::error::{ensure_len, Error, Result};

/// Floor applied to every per-dimension state standard deviation.
pub const NORM_EPS: f64 = 1e-3;

/// Actions are stored in `[-ACTION_BOUND, ACTION_BOUND]`.
pub const ACTION_BOUND: f64 = 1.0;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceEntry {
    /// Generating-policy label, e.g. `expert`.
    pub policy: String,
    pub count: u64,
    pub seed: u64,
}

/// Provenance of a dataset. Transitions are stored source by source, in
/// manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub env: String,
    pub sources: Vec<SourceEntry>,
    /// Seed of the first collection run.
    pub seed: u64,
}

impl Manifest {
    pub fn single(env: impl Into<String>, policy: impl Into<String>, count: u64, seed: u64) -> Self {
        Self {
            env: env.into(),
            sources: vec![SourceEntry {
                policy: policy.into(),
                count,
                seed,
            }],
            seed,
        }
    }

    pub fn total(&self) -> u64 {
        self.sources.iter().map(|s| s.count).sum()
    }
}

/// Per-dimension population mean and floored standard deviation of states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Identity normalization.
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, s: &[f64]) -> Result<Vec<f64>> {
        ensure_len("normalize state", self.dim(), s.len())?;
        Ok(s.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, sd))| (x - m) / sd)
            .collect())
    }

    pub fn denormalize(&self, z: &[f64]) -> Result<Vec<f64>> {
        ensure_len("denormalize state", self.dim(), z.len())?;
        Ok(z.iter()
            .zip(self.mean.iter().zip(&self.std))
            .map(|(x, (m, sd))| x * sd + m)
            .collect())
    }

    /// Normalizes every row in place.
    pub fn normalize_rows(&self, rows: &mut ndarray::Array2<f64>) -> Result<()> {
        ensure_len("normalize rows", self.dim(), rows.ncols())?;
        for mut row in rows.rows_mut() {
            for ((x, m), sd) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *x = (*x - m) / sd;
            }
        }
        Ok(())
    }
}

/// Population statistics over all states and next states, std floored at [`NORM_EPS`].
pub fn compute_norm_stats(transitions: &[Transition]) -> Result<NormStats> {
    let first = transitions
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot compute statistics of an empty dataset".into()))?;
    let dim = first.state.len();
    let count = 2.0 * transitions.len() as f64;
    let mut mean = vec![0.0; dim];
    for t in transitions {
        for s in [&t.state, &t.next_state] {
            for (m, x) in mean.iter_mut().zip(s) {
                *m += x;
            }
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    let mut var = vec![0.0; dim];
    for t in transitions {
        for s in [&t.state, &t.next_state] {
            for ((v, x), m) in var.iter_mut().zip(s).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
    }
    let std = var.into_iter().map(|v| (v / count).sqrt().max(NORM_EPS)).collect();
    Ok(NormStats { mean, std })
}

/// Immutable collection of offline experience.
#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    transitions: Vec<Transition>,
    obs_dim: usize,
    act_dim: usize,
    manifest: Manifest,
    stats: Option<NormStats>,
}

impl OfflineDataset {
    /// Validates every transition against the declared dims and the manifest
    /// counts, then computes normalization statistics.
    pub fn new(obs_dim: usize, act_dim: usize, transitions: Vec<Transition>, manifest: Manifest) -> Result<Self> {
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::InvalidArgument("obs_dim and act_dim must be positive".into()));
        }
        for (i, t) in transitions.iter().enumerate() {
            ensure_len("transition state", obs_dim, t.state.len())?;
            ensure_len("transition next_state", obs_dim, t.next_state.len())?;
            ensure_len("transition action", act_dim, t.action.len())?;
            let finite = t
                .state
                .iter()
                .chain(&t.action)
                .chain(&t.next_state)
                .chain(std::iter::once(&t.reward))
                .all(|v| v.is_finite());
            if !finite {
                return Err(Error::NonFinite(format!("transition {i}")));
            }
            if t.action.iter().any(|a| a.abs() > ACTION_BOUND) {
                return Err(Error::InvalidArgument(format!("transition {i}: action outside [-1, 1]")));
            }
        }
        if manifest.total() != transitions.len() as u64 {
            return Err(Error::InvalidArgument(format!(
                "manifest counts sum to {} but dataset holds {} transitions",
                manifest.total(),
                transitions.len()
            )));
        }
        let stats = if transitions.is_empty() {
            None
        } else {
            Some(compute_norm_stats(&transitions)?)
        };
        Ok(Self {
            transitions,
            obs_dim,
            act_dim,
            manifest,
            stats,
        })
    }

    pub fn empty(obs_dim: usize, act_dim: usize, env: impl Into<String>) -> Result<Self> {
        let manifest = Manifest {
            env: env.into(),
            sources: Vec::new(),
            seed: 0,
        };
        Self::new(obs_dim, act_dim, Vec::new(), manifest)
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.transitions.get(i)
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn env(&self) -> &str {
        &self.manifest.env
    }

    /// Normalization statistics; an error for an empty dataset.
    pub fn stats(&self) -> Result<&NormStats> {
        self.stats
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("empty dataset has no normalization statistics".into()))
    }

    /// Index into `manifest().sources` of the source that produced transition `i`.
    pub fn source_of(&self, i: usize) -> Option<usize> {
        let mut end = 0u64;
        for (k, s) in self.manifest.sources.iter().enumerate() {
            end += s.count;
            if (i as u64) < end {
                return Some(k);
            }
        }
        None
    }
}

/// Concatenates `b` after `a`, merging manifests and recomputing statistics.
pub fn mix_datasets(a: &OfflineDataset, b: &OfflineDataset) -> Result<OfflineDataset> {
    if a.env() != b.env() {
        return Err(Error::Incompatible(format!("env '{}' vs '{}'", a.env(), b.env())));
    }
    if a.obs_dim != b.obs_dim || a.act_dim != b.act_dim {
        return Err(Error::Incompatible(format!(
            "dims ({}, {}) vs ({}, {})",
            a.obs_dim, a.act_dim, b.obs_dim, b.act_dim
        )));
    }
    let mut transitions = Vec::with_capacity(a.len() + b.len());
    transitions.extend_from_slice(&a.transitions);
    transitions.extend_from_slice(&b.transitions);
    let seed = if a.manifest.sources.is_empty() {
        b.manifest.seed
    } else {
        a.manifest.seed
    };
    let manifest = Manifest {
        env: a.manifest.env.clone(),
        sources: a.manifest.sources.iter().chain(&b.manifest.sources).cloned().collect(),
        seed,
    };
    OfflineDataset::new(a.obs_dim, a.act_dim, transitions, manifest)
}
