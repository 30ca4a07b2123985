use ndarray::{Array1, Array2};

use super::{NormStats, OfflineDataset};
use crate::error::{Error, Result};
use crate::numkit::Rng;

/// Whether a minibatch carries negative action pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Negatives {
    Sample,
    /// Draw nothing, leaving the RNG stream exactly as the plain sampler would.
    Skip,
}

/// Action rows drawn uniformly over the whole dataset, independent of state.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativePairs {
    pub first_indices: Vec<usize>,
    pub second_indices: Vec<usize>,
    pub first: Array2<f64>,
    pub second: Array2<f64>,
}

impl NegativePairs {
    /// Row-wise midpoint `(a1 + a2) / 2`.
    pub fn midpoints(&self) -> Array2<f64> {
        (&self.first + &self.second) * 0.5
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub indices: Vec<usize>,
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    pub terminals: Vec<bool>,
    pub negatives: Option<NegativePairs>,
}

impl Minibatch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Normalizes `states` and `next_states` in place.
    pub fn normalize_states(&mut self, stats: &NormStats) -> Result<()> {
        stats.normalize_rows(&mut self.states)?;
        stats.normalize_rows(&mut self.next_states)
    }
}

fn gather_actions(dataset: &OfflineDataset, idx: &[usize]) -> Array2<f64> {
    let act = dataset.act_dim();
    let mut out = Array2::zeros((idx.len(), act));
    for (mut row, &i) in out.rows_mut().into_iter().zip(idx) {
        row.iter_mut()
            .zip(&dataset.transitions()[i].action)
            .for_each(|(d, s)| *d = *s);
    }
    out
}

/// Draws `n` transitions uniformly with replacement, then (unless skipped)
/// `2n` further action rows forming the negative pairs.
pub fn sample_minibatch(dataset: &OfflineDataset, n: usize, negatives: Negatives, rng: &mut Rng) -> Result<Minibatch> {
    if n == 0 {
        return Err(Error::InvalidArgument("minibatch size must be positive".into()));
    }
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("cannot sample from an empty dataset".into()));
    }
    let size = dataset.len();
    let indices: Vec<usize> = (0..n).map(|_| rng.index(size)).collect();
    let (obs, act) = (dataset.obs_dim(), dataset.act_dim());
    let mut states = Array2::zeros((n, obs));
    let mut next_states = Array2::zeros((n, obs));
    let mut actions = Array2::zeros((n, act));
    let mut rewards = Array1::zeros(n);
    let mut terminals = Vec::with_capacity(n);
    for (row, &i) in indices.iter().enumerate() {
        let t = &dataset.transitions()[i];
        for (d, s) in states.row_mut(row).iter_mut().zip(&t.state) {
            *d = *s;
        }
        for (d, s) in next_states.row_mut(row).iter_mut().zip(&t.next_state) {
            *d = *s;
        }
        for (d, s) in actions.row_mut(row).iter_mut().zip(&t.action) {
            *d = *s;
        }
        rewards[row] = t.reward;
        terminals.push(t.terminal);
    }
    let negatives = match negatives {
        Negatives::Skip => None,
        Negatives::Sample => {
            let first_indices: Vec<usize> = (0..n).map(|_| rng.index(size)).collect();
            let second_indices: Vec<usize> = (0..n).map(|_| rng.index(size)).collect();
            Some(NegativePairs {
                first: gather_actions(dataset, &first_indices),
                second: gather_actions(dataset, &second_indices),
                first_indices,
                second_indices,
            })
        }
    };
    Ok(Minibatch {
        indices,
        states,
        actions,
        rewards,
        next_states,
        terminals,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::tests::random_dataset;

    #[test]
    fn degenerate_single_row() {
        let d = random_dataset(1, 2, 2, "x", 0);
        let mut rng = Rng::new(0);
        let b = sample_minibatch(&d, 3, Negatives::Sample, &mut rng).unwrap();
        assert_eq!(b.indices, vec![0, 0, 0]);
        let a = &d.transitions()[0].action;
        let neg = b.negatives.unwrap();
        for row in neg.first.rows().into_iter().chain(neg.second.rows()) {
            assert_eq!(row.to_vec(), *a);
        }
    }

    #[test]
    fn same_seed_same_batch() {
        let d = random_dataset(50, 3, 2, "x", 1);
        let a = sample_minibatch(&d, 16, Negatives::Sample, &mut Rng::new(4)).unwrap();
        let b = sample_minibatch(&d, 16, Negatives::Sample, &mut Rng::new(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn skipping_negatives_leaves_stream_aligned() {
        let d = random_dataset(50, 3, 2, "x", 1);
        let mut r1 = Rng::new(4);
        let mut r2 = Rng::new(4);
        let a = sample_minibatch(&d, 8, Negatives::Skip, &mut r1).unwrap();
        let b = sample_minibatch(&d, 8, Negatives::Sample, &mut r2).unwrap();
        assert_eq!(a.indices, b.indices);
        assert!(a.negatives.is_none());
    }

    #[test]
    fn rows_match_dataset() {
        let d = random_dataset(20, 3, 2, "x", 2);
        let b = sample_minibatch(&d, 10, Negatives::Sample, &mut Rng::new(1)).unwrap();
        for (row, &i) in b.indices.iter().enumerate() {
            let t = &d.transitions()[i];
            assert_eq!(b.states.row(row).to_vec(), t.state);
            assert_eq!(b.next_states.row(row).to_vec(), t.next_state);
            assert_eq!(b.actions.row(row).to_vec(), t.action);
            assert_eq!(b.rewards[row], t.reward);
            assert_eq!(b.terminals[row], t.terminal);
        }
        let neg = b.negatives.as_ref().unwrap();
        for (row, &i) in neg.second_indices.iter().enumerate() {
            assert_eq!(neg.second.row(row).to_vec(), d.transitions()[i].action);
        }
    }

    #[test]
    fn invalid_requests() {
        let d = random_dataset(5, 1, 1, "x", 0);
        assert!(sample_minibatch(&d, 0, Negatives::Skip, &mut Rng::new(0)).is_err());
        let e = OfflineDataset::empty(1, 1, "x").unwrap();
        assert!(sample_minibatch(&e, 4, Negatives::Skip, &mut Rng::new(0)).is_err());
    }

    #[test]
    fn index_frequencies_are_uniform() {
        // Binomial oracle: each of 10 rows appears Bin(1e5, 0.1) times.
        let d = random_dataset(10, 1, 1, "x", 0);
        let mut rng = Rng::new(99);
        let draws = 100_000usize;
        let mut counts = [0usize; 10];
        let mut neg_counts = [0usize; 10];
        let mut remaining = draws;
        while remaining > 0 {
            let n = remaining.min(1000);
            let b = sample_minibatch(&d, n, Negatives::Sample, &mut rng).unwrap();
            b.indices.iter().for_each(|&i| counts[i] += 1);
            b.negatives.unwrap().first_indices.iter().for_each(|&i| neg_counts[i] += 1);
            remaining -= n;
        }
        let expected = draws as f64 * 0.1;
        let sigma = (draws as f64 * 0.1 * 0.9).sqrt();
        for (&c, &nc) in counts.iter().zip(&neg_counts) {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "{counts:?}");
            assert!((nc as f64 - expected).abs() < 3.0 * sigma, "{neg_counts:?}");
        }
    }
}
