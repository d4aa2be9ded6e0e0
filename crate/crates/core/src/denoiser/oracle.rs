use std::collections::HashSet;

use ndarray::Array2;

use crate::codec::CodecSpec;
use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::tensor::AnalogTensor;

use super::Denoiser;

pub const MAX_SUPPORT: usize = 1 << 16;

/// Exact posterior mean `E[x0 | x_t]` over a finite support of codewords.
#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    codewords: Array2<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    schedule: Schedule,
}

impl OracleDenoiser {
    pub fn new(support: Vec<(Vec<f64>, f64)>, schedule: Schedule) -> Result<Self> {
        if support.is_empty() {
            return Err(Error::config("oracle support is empty"));
        }
        if support.len() > MAX_SUPPORT {
            return Err(Error::config(format!(
                "oracle support of {} exceeds {MAX_SUPPORT} points",
                support.len()
            )));
        }
        let width = support[0].0.len();
        let mut seen = HashSet::with_capacity(support.len());
        let mut total = 0.0;
        for (c, p) in &support {
            if c.len() != width {
                return Err(Error::shape("oracle codewords differ in length"));
            }
            if !(*p >= 0.0 && p.is_finite()) {
                return Err(Error::config(format!("invalid support probability {p}")));
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(Error::config("oracle codeword is not finite"));
            }
            let key: Vec<u64> = c.iter().map(|v| v.to_bits()).collect();
            if !seen.insert(key) {
                return Err(Error::config("oracle codewords must be distinct"));
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::config(format!("support probabilities sum to {total}")));
        }
        // zero-mass points never receive posterior weight
        let kept: Vec<_> = support.into_iter().filter(|(_, p)| *p > 0.0).collect();
        let flat: Vec<f64> = kept.iter().flat_map(|(c, _)| c.iter().copied()).collect();
        let codewords = Array2::from_shape_vec((kept.len(), width), flat)
            .map_err(|e| Error::shape(e.to_string()))?;
        let probs: Vec<f64> = kept.iter().map(|(_, p)| *p).collect();
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        Ok(Self {
            codewords,
            probs,
            log_probs,
            schedule,
        })
    }

    /// Support built from a joint distribution over `positions` symbols.
    pub fn from_distribution(
        codec: &CodecSpec,
        dist: &DiscreteDistribution,
        schedule: Schedule,
    ) -> Result<Self> {
        if dist.vocab_size() != codec.vocab_size() {
            return Err(Error::config(format!(
                "distribution vocab {} does not match codec vocab {}",
                dist.vocab_size(),
                codec.vocab_size()
            )));
        }
        let support = (0..dist.n_states())
            .filter(|&s| dist.probs()[s] > 0.0)
            .map(|s| {
                let word: Vec<f64> = dist
                    .state_symbols(s)
                    .into_iter()
                    .flat_map(|v| codec.codeword(v))
                    .collect();
                (word, dist.probs()[s])
            })
            .collect();
        Self::new(support, schedule)
    }

    pub fn schedule(&self) -> &Schedule {
        &self.schedule
    }

    pub fn support_len(&self) -> usize {
        self.probs.len()
    }

    pub fn codewords(&self) -> &Array2<f64> {
        &self.codewords
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Posterior weights of every support point for one row of `x_t`.
    pub fn posterior_weights(&self, x: &[f64], gamma: f64) -> Vec<f64> {
        let n = self.probs.len();
        let noise_var = 1.0 - gamma;
        if noise_var <= 0.0 {
            // degenerate likelihood: all mass on the nearest codeword
            let mut best = (f64::INFINITY, 0);
            for (i, c) in self.codewords.rows().into_iter().enumerate() {
                let d: f64 = c.iter().zip(x).map(|(c, x)| (x - c) * (x - c)).sum();
                if d < best.0 {
                    best = (d, i);
                }
            }
            let mut w = vec![0.0; n];
            w[best.1] = 1.0;
            return w;
        }
        let a = gamma.sqrt();
        let mut logw: Vec<f64> = self
            .codewords
            .rows()
            .into_iter()
            .zip(&self.log_probs)
            .map(|(c, lp)| {
                let d: f64 = c.iter().zip(x).map(|(c, x)| (x - a * c).powi(2)).sum();
                lp - d / (2.0 * noise_var)
            })
            .collect();
        softmax_in_place(&mut logw);
        logw
    }

    /// Posterior mean at a given `gamma`, bypassing the schedule.
    pub fn predict_with_gamma(&self, x_t: &AnalogTensor, gamma: f64) -> Result<AnalogTensor> {
        if x_t.features() != self.codewords.ncols() {
            return Err(Error::shape(format!(
                "oracle expects {} features, got {}",
                self.codewords.ncols(),
                x_t.features()
            )));
        }
        let mut out = Array2::zeros(x_t.shape());
        for (row, mut dst) in x_t.data().rows().into_iter().zip(out.rows_mut()) {
            let x = row.to_vec();
            let w = self.posterior_weights(&x, gamma);
            for (wi, c) in w.iter().zip(self.codewords.rows()) {
                if *wi != 0.0 {
                    dst.scaled_add(*wi, &c);
                }
            }
        }
        Ok(AnalogTensor::new(out))
    }
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

impl Denoiser for OracleDenoiser {
    fn features(&self) -> usize {
        self.codewords.ncols()
    }

    /// The condition input is ignored: the posterior mean already uses all
    /// the information in `x_t`.
    fn predict(&self, x_t: &AnalogTensor, x_cond: &AnalogTensor, t: f64) -> Result<AnalogTensor> {
        x_t.ensure_same_shape(x_cond, "oracle condition")?;
        let g = self.schedule.gamma(t)?;
        self.predict_with_gamma(x_t, g)
    }
}
