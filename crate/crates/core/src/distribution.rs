//! Enumerable ground-truth distributions over joint symbol states.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::DiscreteBatch;

/// Largest joint state space accepted.
pub const MAX_STATES: usize = 1 << 20;

/// Probability vector over `vocab_size^positions` joint states. State index
/// is `sum_p v_p * K^p`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteDistribution {
    vocab_size: usize,
    positions: usize,
    probs: Vec<f64>,
    cdf: Vec<f64>,
}

impl DiscreteDistribution {
    pub fn new(vocab_size: usize, positions: usize, probs: Vec<f64>) -> Result<Self> {
        if vocab_size == 0 || positions == 0 {
            return Err(Error::config("distribution needs vocab_size and positions >= 1"));
        }
        let states = vocab_size
            .checked_pow(positions as u32)
            .filter(|&s| s <= MAX_STATES)
            .ok_or_else(|| Error::config(format!("more than {MAX_STATES} joint states")))?;
        if probs.len() != states {
            return Err(Error::config(format!(
                "{} probabilities for {states} joint states",
                probs.len()
            )));
        }
        if probs.iter().any(|&p| !(p >= 0.0 && p.is_finite())) {
            return Err(Error::config("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("probabilities sum to {total}, not 1")));
        }
        let mut acc = 0.0;
        let cdf = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        Ok(Self {
            vocab_size,
            positions,
            probs,
            cdf,
        })
    }

    /// Rescale non-negative weights to sum to one.
    pub fn from_weights(vocab_size: usize, positions: usize, weights: &[f64]) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::config("weights must have positive sum"));
        }
        Self::new(
            vocab_size,
            positions,
            weights.iter().map(|w| w / total).collect(),
        )
    }

    pub fn uniform(vocab_size: usize, positions: usize) -> Result<Self> {
        let states = vocab_size.pow(positions as u32);
        Self::new(vocab_size, positions, vec![1.0 / states as f64; states])
    }

    /// Empirical distribution of a batch.
    pub fn empirical(batch: &DiscreteBatch, vocab_size: usize) -> Result<Self> {
        if batch.batch() == 0 {
            return Err(Error::config("empirical distribution of an empty batch"));
        }
        let counts = state_counts(batch, vocab_size)?;
        let n = batch.batch() as f64;
        let probs: Vec<f64> = counts.iter().map(|&c| c as f64 / n).collect();
        let dist = Self::from_weights(vocab_size, batch.positions(), &probs)?;
        Ok(dist)
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn positions(&self) -> usize {
        self.positions
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_states(&self) -> usize {
        self.probs.len()
    }

    pub fn state_index(&self, symbols: &[u32]) -> Result<usize> {
        state_index(symbols, self.vocab_size)
    }

    pub fn state_symbols(&self, mut index: usize) -> Vec<u32> {
        (0..self.positions)
            .map(|_| {
                let v = index % self.vocab_size;
                index /= self.vocab_size;
                v as u32
            })
            .collect()
    }

    pub fn sample_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let i = self.cdf.partition_point(|&c| c <= u);
        // guard against cdf[last] < 1 by rounding
        let i = i.min(self.probs.len() - 1);
        // never land on a zero-probability state
        if self.probs[i] > 0.0 {
            i
        } else {
            (0..i).rev().find(|&j| self.probs[j] > 0.0).unwrap_or(i)
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DiscreteBatch {
        let rows: Vec<Vec<u32>> = (0..n)
            .map(|_| self.state_symbols(self.sample_state(rng)))
            .collect();
        if rows.is_empty() {
            return DiscreteBatch::new(ndarray::Array2::zeros((0, self.positions)));
        }
        DiscreteBatch::from_rows(&rows).expect("rows have uniform length")
    }
}

pub fn state_index(symbols: &[u32], vocab_size: usize) -> Result<usize> {
    let mut idx = 0usize;
    for &v in symbols.iter().rev() {
        if v as usize >= vocab_size {
            return Err(Error::Range(format!("symbol {v} not in [0, {vocab_size})")));
        }
        idx = idx * vocab_size + v as usize;
    }
    Ok(idx)
}

/// Counts per joint state.
pub fn state_counts(batch: &DiscreteBatch, vocab_size: usize) -> Result<Vec<u64>> {
    let states = vocab_size
        .checked_pow(batch.positions() as u32)
        .filter(|&s| s <= MAX_STATES)
        .ok_or_else(|| Error::config(format!("more than {MAX_STATES} joint states")))?;
    let mut counts = vec![0u64; states];
    for row in batch.values().rows() {
        let symbols: Vec<u32> = row.to_vec();
        counts[state_index(&symbols, vocab_size)?] += 1;
    }
    Ok(counts)
}
