//! Evaluation at enumerable scale: total variation against the ground
//! truth, analog-bit histograms, and the self-conditioning / time-difference
//! ablation harnesses.

use std::fmt::Write as _;

use serde::Serialize;

use crate::codec::CodecSpec;
use crate::denoiser::{Denoiser, ModelSpec};
use crate::distribution::{state_counts, DiscreteDistribution};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::sampler::{generate, SamplerConfig};
use crate::schedule::Schedule;
use crate::tensor::{AnalogTensor, DiscreteBatch};
use crate::trainer::{MetricRecord, TrainConfig, Trainer};

/// `1/2 sum_s |p_hat(s) - p(s)|` of a sample batch against the truth.
pub fn total_variation(samples: &DiscreteBatch, truth: &DiscreteDistribution) -> Result<f64> {
    if samples.positions() != truth.positions() {
        return Err(Error::shape(format!(
            "samples have {} positions, distribution {}",
            samples.positions(),
            truth.positions()
        )));
    }
    if samples.batch() == 0 {
        return Err(Error::config("total variation of an empty sample"));
    }
    let counts = state_counts(samples, truth.vocab_size())?;
    let n = samples.batch() as f64;
    Ok(0.5
        * counts
            .iter()
            .zip(truth.probs())
            .map(|(&c, &p)| (c as f64 / n - p).abs())
            .sum::<f64>())
}

pub fn total_variation_between(p: &DiscreteDistribution, q: &DiscreteDistribution) -> Result<f64> {
    if p.n_states() != q.n_states() || p.vocab_size() != q.vocab_size() {
        return Err(Error::shape("distributions over different state spaces"));
    }
    Ok(0.5 * p.probs().iter().zip(q.probs()).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    /// Fraction of values with `|v| > theta * b`.
    pub concentration: f64,
    pub theta: f64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn bin_edges(&self, i: usize) -> (f64, f64) {
        let w = (self.hi - self.lo) / self.counts.len() as f64;
        (self.lo + w * i as f64, self.lo + w * (i + 1) as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin,lo,hi,count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let (lo, hi) = self.bin_edges(i);
            let _ = writeln!(s, "{i},{lo},{hi},{c}");
        }
        s
    }
}

pub const DEFAULT_BINS: usize = 50;

/// Histogram of every analog-bit value over `[-b, b]`; values outside the
/// range land in the edge bins.
pub fn bit_histogram(analog: &AnalogTensor, bins: usize, scale: f64, theta: f64) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let (lo, hi) = (-scale, scale);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    let mut concentrated = 0u64;
    let values = analog.as_slice();
    for &v in values {
        let i = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[i] += 1;
        if v.abs() > theta * scale {
            concentrated += 1;
        }
    }
    let concentration = if values.is_empty() {
        0.0
    } else {
        concentrated as f64 / values.len() as f64
    };
    Ok(Histogram {
        lo,
        hi,
        counts,
        concentration,
        theta,
    })
}

/// Ground truth for toy experiments.
#[derive(Debug, Clone)]
pub struct ToyTask {
    pub codec: CodecSpec,
    pub dist: DiscreteDistribution,
    pub sched: Schedule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub self_cond: bool,
    pub final_tv: f64,
    pub final_loss: f64,
    pub curve: Vec<MetricRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_table(&self) -> String {
        let mut s = String::from("self_cond  final_tv  final_loss\n");
        for r in &self.rows {
            let _ = writeln!(s, "{:<9}  {:<8.5}  {:.6}", r.self_cond, r.final_tv, r.final_loss);
        }
        s
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut s = String::new();
        for r in &self.rows {
            s.push_str(&serde_json::to_string(r).map_err(|e| Error::Format(e.to_string()))?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// Sample `n_samples` from `denoiser` and measure TV against `truth`.
pub fn sample_tv<D: Denoiser + ?Sized>(
    denoiser: &D,
    codec: &CodecSpec,
    sched: &Schedule,
    cfg: &SamplerConfig,
    truth: &DiscreteDistribution,
    n_samples: usize,
) -> Result<f64> {
    let g = generate(denoiser, codec, sched, cfg, n_samples, false)?;
    total_variation(&g.samples, truth)
}

/// Train matched networks without and with self-conditioning (same init,
/// data, noise streams) and report final TV and loss curves side by side.
pub fn self_cond_ablation(
    task: &ToyTask,
    model: &ModelSpec,
    train: &TrainConfig,
    sample: &SamplerConfig,
    n_samples: usize,
) -> Result<AblationReport> {
    let mut rows = Vec::with_capacity(2);
    for self_cond in [false, true] {
        let cfg = TrainConfig {
            self_cond,
            ..train.clone()
        };
        let seed = cfg.rng_seed;
        let net = model.build(&task.codec, task.dist.positions(), &mut stream_rng(seed, Stream::Init, 0))?;
        let mut trainer = Trainer::new(net, cfg)?;
        let mut curve = Vec::new();
        trainer.fit(
            &task.dist,
            &task.codec,
            &task.sched,
            &mut stream_rng(seed, Stream::Train, 0),
            &mut stream_rng(seed, Stream::Data, 0),
            |r| {
                curve.push(r.clone());
                Ok(())
            },
        )?;
        let strategy = if self_cond {
            sample.strategy
        } else {
            crate::sampler::Strategy::NoSelfCond
        };
        let scfg = SamplerConfig {
            strategy,
            ..sample.clone()
        };
        let ema = trainer.ema_model()?;
        let final_tv = sample_tv(&ema, &task.codec, &task.sched, &scfg, &task.dist, n_samples)?;
        rows.push(AblationRow {
            self_cond,
            final_tv,
            final_loss: curve.last().map_or(f64::NAN, |r| r.loss),
            curve,
        });
    }
    Ok(AblationReport { rows })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCell {
    pub td: f64,
    pub steps: usize,
    pub tv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepTable {
    pub td_values: Vec<f64>,
    pub steps_values: Vec<usize>,
    /// Row-major over `td_values` x `steps_values`.
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    pub fn cell(&self, td_index: usize, steps_index: usize) -> &SweepCell {
        &self.cells[td_index * self.steps_values.len() + steps_index]
    }

    /// Rows are time differences, columns are step counts.
    pub fn to_table(&self) -> String {
        let mut s = String::from("td \\ steps");
        for st in &self.steps_values {
            let _ = write!(s, "  {st:>8}");
        }
        s.push('\n');
        for (i, td) in self.td_values.iter().enumerate() {
            let _ = write!(s, "{td:<10}");
            for j in 0..self.steps_values.len() {
                let _ = write!(s, "  {:>8.5}", self.cell(i, j).tv);
            }
            s.push('\n');
        }
        s
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut s = String::new();
        for c in &self.cells {
            s.push_str(&serde_json::to_string(c).map_err(|e| Error::Format(e.to_string()))?);
            s.push('\n');
        }
        Ok(s)
    }
}

/// TV of generated samples over a `td x steps` grid.
pub fn td_sweep<D: Denoiser + ?Sized>(
    denoiser: &D,
    task: &ToyTask,
    base: &SamplerConfig,
    td_values: &[f64],
    steps_values: &[usize],
    n_samples: usize,
) -> Result<SweepTable> {
    let mut cells = Vec::with_capacity(td_values.len() * steps_values.len());
    for &td in td_values {
        for &steps in steps_values {
            let cfg = SamplerConfig {
                td,
                steps,
                ..base.clone()
            };
            let tv = sample_tv(denoiser, &task.codec, &task.sched, &cfg, &task.dist, n_samples)?;
            cells.push(SweepCell { td, steps, tv });
        }
    }
    Ok(SweepTable {
        td_values: td_values.to_vec(),
        steps_values: steps_values.to_vec(),
        cells,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::OracleDenoiser;
    use proptest::prelude::*;

    #[test]
    fn tv_examples() {
        let truth = DiscreteDistribution::uniform(4, 1).unwrap();
        let exact = DiscreteBatch::from_column(&[0, 1, 2, 3]);
        assert_eq!(total_variation(&exact, &truth).unwrap(), 0.0);
        let point = DiscreteBatch::from_column(&[2, 2, 2]);
        assert!((total_variation(&point, &truth).unwrap() - 0.75).abs() < 1e-15);
        let outside = DiscreteBatch::from_column(&[4]);
        assert!(total_variation(&outside, &truth).is_err());
    }

    proptest! {
        #[test]
        fn tv_metric_properties(a in prop::collection::vec(0.01f64..1.0, 6), b in prop::collection::vec(0.01f64..1.0, 6)) {
            let p = DiscreteDistribution::from_weights(6, 1, &a).unwrap();
            let q = DiscreteDistribution::from_weights(6, 1, &b).unwrap();
            let pq = total_variation_between(&p, &q).unwrap();
            let qp = total_variation_between(&q, &p).unwrap();
            prop_assert!((pq - qp).abs() < 1e-15);
            prop_assert!((0.0..=1.0).contains(&pq));
            prop_assert_eq!(total_variation_between(&p, &p).unwrap(), 0.0);
        }

        #[test]
        fn histogram_counts_everything(v in prop::collection::vec(-3.0f64..3.0, 1..200), bins in 1usize..60) {
            let n = v.len();
            let t = AnalogTensor::from_vec(1, n, v).unwrap();
            let h = bit_histogram(&t, bins, 1.0, 0.5).unwrap();
            prop_assert_eq!(h.total(), n as u64);
        }
    }

    #[test]
    fn histogram_shapes() {
        let ones = AnalogTensor::from_vec(2, 2, vec![1.0; 4]).unwrap();
        let h = bit_histogram(&ones, DEFAULT_BINS, 1.0, 0.5).unwrap();
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.concentration, 1.0);
        let sym = AnalogTensor::from_vec(1, 4, vec![1.0, -1.0, 0.3, -0.3]).unwrap();
        let h = bit_histogram(&sym, 10, 1.0, 0.5).unwrap();
        let mut rev = h.counts.clone();
        rev.reverse();
        assert_eq!(h.counts, rev);
        assert_eq!(h.concentration, 0.5);
        assert!(h.to_csv().starts_with("bin,lo,hi,count\n"));
    }

    #[test]
    fn sweep_dimensions_and_baseline() {
        let codec = CodecSpec::base2(4).unwrap();
        let dist = DiscreteDistribution::new(4, 1, vec![0.4, 0.3, 0.2, 0.1]).unwrap();
        let sched = Schedule::default();
        let oracle = OracleDenoiser::from_distribution(&codec, &dist, sched).unwrap();
        let task = ToyTask { codec: codec.clone(), dist: dist.clone(), sched };
        let base = SamplerConfig { rng_seed: 4, ..SamplerConfig::default() };
        let table = td_sweep(&oracle, &task, &base, &[0.0, 1.0, 2.0], &[5, 10], 500).unwrap();
        assert_eq!(table.cells.len(), 6);
        let plain = SamplerConfig { steps: 10, ..base.clone() };
        let tv = sample_tv(&oracle, &codec, &sched, &plain, &dist, 500).unwrap();
        assert_eq!(table.cell(0, 1).tv, tv);
        assert_eq!(table.to_table().lines().count(), 4);
    }
}
