//! Reverse-process generation with DDIM/DDPM updates, asymmetric time
//! intervals and the self-conditioning sampling strategies.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::codec::CodecSpec;
use crate::denoiser::Denoiser;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};
use crate::schedule::Schedule;
use crate::tensor::{AnalogTensor, DiscreteBatch};

/// Rows per independently seeded shard. Output does not depend on the
/// number of worker threads.
pub const SHARD_ROWS: usize = 1024;

/// `gamma` floor used to keep the DDPM ratio defined.
const GAMMA_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    Ddim,
    Ddpm,
}

impl fmt::Display for StepRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StepRule::Ddim => "ddim",
            StepRule::Ddpm => "ddpm",
        })
    }
}

impl FromStr for StepRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ddim" => Ok(StepRule::Ddim),
            "ddpm" => Ok(StepRule::Ddpm),
            other => Err(Error::config(format!("unknown step rule `{other}`"))),
        }
    }
}

/// What the denoiser receives as its condition input at each step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Strategy {
    /// Zeros every step.
    NoSelfCond,
    /// Previous step's estimate.
    Default,
    /// Running average `m * accu + (1 - m) * previous estimate`.
    Momentum(f64),
    /// `w * f(x, f(x, 0)) + (1 - w) * f(x, 0)` within each step.
    SelfGuidance(f64),
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::NoSelfCond => f.write_str("none"),
            Strategy::Default => f.write_str("default"),
            Strategy::Momentum(m) => write!(f, "momentum:{m}"),
            Strategy::SelfGuidance(w) => write!(f, "self-guidance:{w}"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        let num = |default: f64| -> Result<f64> {
            arg.map_or(Ok(default), |a| {
                a.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("bad strategy parameter in `{s}`")))
            })
        };
        match name.trim() {
            "none" => Ok(Strategy::NoSelfCond),
            "default" => Ok(Strategy::Default),
            "momentum" => Ok(Strategy::Momentum(num(0.0)?)),
            "self-guidance" => Ok(Strategy::SelfGuidance(num(3.0)?)),
            other => Err(Error::config(format!("unknown strategy `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerConfig {
    pub steps: usize,
    /// Time difference in step-index units.
    pub td: f64,
    pub step_rule: StepRule,
    pub strategy: Strategy,
    pub rng_seed: u64,
    /// Analog-bit scale `b` of the codec.
    pub scale: f64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            steps: 100,
            td: 0.0,
            step_rule: StepRule::Ddim,
            strategy: Strategy::Default,
            rng_seed: 0,
            scale: 1.0,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::config("sampler needs at least one step"));
        }
        if !(self.td >= 0.0 && self.td.is_finite()) {
            return Err(Error::config(format!("td must be non-negative, got {}", self.td)));
        }
        if self.scale.is_nan() || self.scale <= 0.0 {
            return Err(Error::config("sampler scale must be positive"));
        }
        match self.strategy {
            Strategy::Momentum(m) if !(0.0..=1.0).contains(&m) => {
                Err(Error::config(format!("momentum {m} outside [0, 1]")))
            }
            Strategy::SelfGuidance(w) if !w.is_finite() => Err(Error::config("guidance weight must be finite")),
            _ => Ok(()),
        }
    }
}

/// `(t_now, t_next)` of step `step` on a grid of `steps` intervals from
/// `t_start` toward `t_end`; `t_next` is pushed `td` extra steps ahead and
/// floored at 0.
pub fn step_times(step: usize, steps: usize, td: f64, t_start: f64, t_end: f64) -> (f64, f64) {
    let span = t_start - t_end;
    let n = steps as f64;
    let t_now = t_start - span * step as f64 / n;
    let t_next = (t_start - span * (step as f64 + 1.0 + td) / n).max(0.0);
    (t_now, t_next)
}

fn check_times(t_now: f64, t_next: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t_now) || !(0.0..=1.0).contains(&t_next) {
        return Err(Error::Range(format!("times ({t_now}, {t_next}) outside [0, 1]")));
    }
    if t_next > t_now {
        return Err(Error::Range(format!("t_next {t_next} after t_now {t_now}")));
    }
    Ok(())
}

/// Deterministic update: rebuild the noise from `(x_t, x_pred)` and
/// recombine at `t_next`.
pub fn ddim_step(
    x_t: &AnalogTensor,
    x_pred: &AnalogTensor,
    t_now: f64,
    t_next: f64,
    sched: &Schedule,
    scale: f64,
) -> Result<AnalogTensor> {
    x_t.ensure_same_shape(x_pred, "ddim_step")?;
    check_times(t_now, t_next)?;
    if t_next == t_now {
        return Ok(x_t.clone());
    }
    let pred = x_pred.clipped(scale);
    let g_now = sched.gamma_unchecked(t_now);
    let g_next = sched.gamma_unchecked(t_next);
    if g_now >= 1.0 {
        return Ok(pred);
    }
    let (a_now, s_now) = (g_now.sqrt(), (1.0 - g_now).sqrt());
    let (a_next, s_next) = (g_next.sqrt(), (1.0 - g_next).sqrt());
    let mut out = pred.clone();
    out.data_mut().zip_mut_with(x_t.data(), |p, &x| {
        let eps = (x - a_now * *p) / s_now;
        *p = a_next * *p + s_next * eps;
    });
    Ok(out)
}

/// Stochastic ancestral update with explicit noise.
pub fn ddpm_step(
    x_t: &AnalogTensor,
    x_pred: &AnalogTensor,
    t_now: f64,
    t_next: f64,
    sched: &Schedule,
    scale: f64,
    noise: &AnalogTensor,
) -> Result<AnalogTensor> {
    x_t.ensure_same_shape(x_pred, "ddpm_step")?;
    x_t.ensure_same_shape(noise, "ddpm_step noise")?;
    check_times(t_now, t_next)?;
    if t_next == t_now {
        return Ok(x_t.clone());
    }
    let pred = x_pred.clipped(scale);
    let g_now = sched.gamma_unchecked(t_now);
    if g_now >= 1.0 {
        return Ok(pred);
    }
    let g_next = sched.gamma_unchecked(t_next).max(GAMMA_FLOOR);
    let alpha = g_now.max(GAMMA_FLOOR) / g_next;
    let sigma = (1.0 - alpha).max(0.0).sqrt();
    let (a_now, s_now) = (g_now.sqrt(), (1.0 - g_now).sqrt());
    let inv_sqrt_alpha = 1.0 / alpha.sqrt();
    let coef = (1.0 - alpha) / s_now;
    let mut out = pred.clone();
    ndarray::Zip::from(out.data_mut())
        .and(x_t.data())
        .and(noise.data())
        .for_each(|p, &x, &z| {
            let eps = (x - a_now * *p) / s_now;
            *p = inv_sqrt_alpha * (x - coef * eps) + sigma * z;
        });
    Ok(out)
}

/// Per-step snapshot of the data estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEntry {
    pub t: f64,
    pub x_pred: AnalogTensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub samples: DiscreteBatch,
    /// Last raw (unclipped) data estimate.
    pub final_pred: AnalogTensor,
    pub trace: Option<Vec<TraceEntry>>,
}

fn standard_normal<R: Rng + ?Sized>(rng: &mut R, batch: usize, features: usize) -> AnalogTensor {
    let v = (0..batch * features).map(|_| StandardNormal.sample(rng)).collect();
    AnalogTensor::from_vec(batch, features, v).expect("sized above")
}

/// Reverse chain from `x_start` over `steps` intervals of `[t_end, t_start]`.
/// Returns the last raw estimate and optional trace. DDPM noise is drawn
/// from `rng`, one tensor per step.
#[allow(clippy::too_many_arguments)]
pub fn reverse_chain<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    sched: &Schedule,
    cfg: &SamplerConfig,
    x_start: AnalogTensor,
    t_start: f64,
    t_end: f64,
    rng: &mut R,
    trace: bool,
) -> Result<(AnalogTensor, Option<Vec<TraceEntry>>)> {
    cfg.validate()?;
    let mut x_t = x_start;
    let zeros = AnalogTensor::zeros_like(&x_t);
    let mut x_pred = zeros.clone();
    let mut x_accu = zeros.clone();
    let mut entries = trace.then(Vec::new);
    for step in 0..cfg.steps {
        let (t_now, t_next) = step_times(step, cfg.steps, cfg.td, t_start, t_end);
        x_pred = match cfg.strategy {
            Strategy::NoSelfCond => denoiser.predict(&x_t, &zeros, t_now)?,
            Strategy::Default => denoiser.predict(&x_t, &x_pred, t_now)?,
            Strategy::Momentum(m) => {
                let mut accu = x_accu.into_inner();
                accu.zip_mut_with(x_pred.data(), |a, &p| *a = m * *a + (1.0 - m) * p);
                x_accu = AnalogTensor::new(accu);
                denoiser.predict(&x_t, &x_accu, t_now)?
            }
            Strategy::SelfGuidance(w) => {
                let uncond = denoiser.predict(&x_t, &zeros, t_now)?;
                let mut cond = denoiser.predict(&x_t, &uncond, t_now)?;
                cond.data_mut()
                    .zip_mut_with(uncond.data(), |c, &u| *c = w * *c + (1.0 - w) * u);
                cond
            }
        };
        if !x_pred.is_finite() {
            return Err(Error::Invariant(format!("non-finite estimate at step {step}")));
        }
        if let Some(e) = entries.as_mut() {
            e.push(TraceEntry {
                t: t_now,
                x_pred: x_pred.clone(),
            });
        }
        x_t = match cfg.step_rule {
            StepRule::Ddim => ddim_step(&x_t, &x_pred, t_now, t_next, sched, cfg.scale)?,
            StepRule::Ddpm => {
                let z = standard_normal(rng, x_t.batch(), x_t.features());
                ddpm_step(&x_t, &x_pred, t_now, t_next, sched, cfg.scale, &z)?
            }
        };
    }
    Ok((x_pred, entries))
}

/// Generate one shard from its own generator: `x_T` is drawn first.
pub fn generate_with_rng<D: Denoiser + ?Sized, R: Rng + ?Sized>(
    denoiser: &D,
    codec: &CodecSpec,
    sched: &Schedule,
    cfg: &SamplerConfig,
    batch: usize,
    rng: &mut R,
    trace: bool,
) -> Result<Generation> {
    let features = denoiser.features();
    if !features.is_multiple_of(codec.n_bits()) {
        return Err(Error::shape(format!(
            "denoiser width {features} is not a multiple of {} bits",
            codec.n_bits()
        )));
    }
    let x_start = standard_normal(rng, batch, features);
    let (final_pred, trace) = reverse_chain(denoiser, sched, cfg, x_start, 1.0, 0.0, rng, trace)?;
    let samples = codec.decode(&final_pred.clipped(cfg.scale))?;
    Ok(Generation {
        samples,
        final_pred,
        trace,
    })
}

/// Generate `batch` samples, sharded over [`SHARD_ROWS`]-row blocks with
/// generators derived from `(rng_seed, shard index)`.
pub fn generate<D: Denoiser + ?Sized>(
    denoiser: &D,
    codec: &CodecSpec,
    sched: &Schedule,
    cfg: &SamplerConfig,
    batch: usize,
    trace: bool,
) -> Result<Generation> {
    cfg.validate()?;
    let shards: Vec<(usize, usize)> = (0..batch.div_ceil(SHARD_ROWS))
        .map(|i| (i, SHARD_ROWS.min(batch - i * SHARD_ROWS)))
        .collect();
    let parts = shards
        .par_iter()
        .map(|&(i, rows)| {
            let mut rng = stream_rng(cfg.rng_seed, Stream::Sample, i as u32);
            generate_with_rng(denoiser, codec, sched, cfg, rows, &mut rng, trace)
        })
        .collect::<Result<Vec<_>>>()?;
    merge(parts, denoiser.features(), codec, trace)
}

fn merge(parts: Vec<Generation>, features: usize, codec: &CodecSpec, trace: bool) -> Result<Generation> {
    if parts.is_empty() {
        let positions = features / codec.n_bits();
        return Ok(Generation {
            samples: DiscreteBatch::new(ndarray::Array2::zeros((0, positions))),
            final_pred: AnalogTensor::zeros(0, features),
            trace: trace.then(Vec::new),
        });
    }
    let samples = DiscreteBatch::concat(&parts.iter().map(|g| g.samples.clone()).collect::<Vec<_>>())?;
    let final_pred = AnalogTensor::concat(&parts.iter().map(|g| g.final_pred.clone()).collect::<Vec<_>>())?;
    let trace = if trace {
        let steps = parts[0].trace.as_ref().map_or(0, Vec::len);
        let mut merged = Vec::with_capacity(steps);
        for s in 0..steps {
            let tensors: Vec<AnalogTensor> = parts
                .iter()
                .map(|g| g.trace.as_ref().expect("trace requested")[s].x_pred.clone())
                .collect();
            merged.push(TraceEntry {
                t: parts[0].trace.as_ref().expect("trace requested")[s].t,
                x_pred: AnalogTensor::concat(&tensors)?,
            });
        }
        Some(merged)
    } else {
        None
    };
    Ok(Generation {
        samples,
        final_pred,
        trace,
    })
}

/// Bit-error rate after denoising from `t_from` toward `t_to` for each
/// time difference.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeRow {
    pub td: f64,
    pub bit_error: f64,
}

/// Corrupt `x0` to `t_from`, run `cfg.steps` reverse steps toward `t_to`
/// for every `td`, and report the fraction of decoded bits that differ from
/// `x0`. The same corruption noise is used for every `td`; a `td = 0` row is
/// always included first.
#[allow(clippy::too_many_arguments)]
pub fn asymmetric_denoise_probe<D: Denoiser + ?Sized>(
    denoiser: &D,
    codec: &CodecSpec,
    sched: &Schedule,
    cfg: &SamplerConfig,
    x0: &DiscreteBatch,
    t_from: f64,
    t_to: f64,
    td_list: &[f64],
) -> Result<Vec<ProbeRow>> {
    if !(0.0..=1.0).contains(&t_from) || !(0.0..=t_from).contains(&t_to) {
        return Err(Error::Range(format!("probe interval [{t_to}, {t_from}] invalid")));
    }
    let x_bits = codec.encode(x0)?;
    let mut rng = stream_rng(cfg.rng_seed, Stream::Probe, 0);
    let noise = standard_normal(&mut rng, x_bits.batch(), x_bits.features());
    let x_start = sched.forward_diffuse(&x_bits, t_from, &noise)?;
    let mut tds: Vec<f64> = vec![0.0];
    tds.extend(td_list.iter().copied().filter(|&td| td != 0.0));
    tds.into_iter()
        .map(|td| {
            let run_cfg = SamplerConfig { td, ..cfg.clone() };
            let mut chain_rng = stream_rng(cfg.rng_seed, Stream::Probe, 1);
            let (pred, _) =
                reverse_chain(denoiser, sched, &run_cfg, x_start.clone(), t_from, t_to, &mut chain_rng, false)?;
            let total = x_bits.as_slice().len().max(1) as f64;
            let wrong = pred
                .as_slice()
                .iter()
                .zip(x_bits.as_slice())
                .filter(|(p, x)| (**p > 0.0) != (**x > 0.0))
                .count() as f64;
            Ok(ProbeRow {
                td,
                bit_error: wrong / total,
            })
        })
        .collect()
}
