//! Training: corruption, self-conditioning with stop-gradient, losses,
//! Adam, and EMA of the weights.

mod loss;
mod optim;

pub use loss::{loss_l2, loss_sigmoid_ce, loss_softmax_ce, one_hot_targets, sigmoid_prediction};
pub use optim::{adam_step, Adam, AdamHyper, EmaState};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::codec::CodecSpec;
use crate::denoiser::{HeadKind, MlpDenoiser, MlpParams};
use crate::distribution::DiscreteDistribution;
use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::tensor::{AnalogTensor, DiscreteBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossKind {
    L2,
    SigmoidCe,
    SoftmaxCe,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::L2 => "l2",
            LossKind::SigmoidCe => "sigmoid-ce",
            LossKind::SoftmaxCe => "softmax-ce",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l2" => Ok(LossKind::L2),
            "sigmoid-ce" => Ok(LossKind::SigmoidCe),
            "softmax-ce" => Ok(LossKind::SoftmaxCe),
            other => Err(Error::config(format!("unknown loss kind `{other}`"))),
        }
    }
}

impl LossKind {
    /// Output head the loss is defined on, if it constrains one.
    pub fn required_head(self) -> Option<HeadKind> {
        match self {
            LossKind::L2 => None,
            LossKind::SigmoidCe => Some(HeadKind::Sigmoid),
            LossKind::SoftmaxCe => Some(HeadKind::SoftmaxFactorization),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub self_cond: bool,
    pub self_cond_prob: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub total_steps: u64,
    pub ema_decay: f64,
    pub rng_seed: u64,
    pub log_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            loss_kind: LossKind::L2,
            self_cond: true,
            self_cond_prob: 0.5,
            learning_rate: 1e-3,
            batch_size: 128,
            total_steps: 10_000,
            ema_decay: 0.9999,
            rng_seed: 0,
            log_every: 100,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.self_cond_prob) {
            return Err(Error::config(format!(
                "self_cond_prob {} outside [0, 1]",
                self.self_cond_prob
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::config(format!("ema_decay {} outside [0, 1)", self.ema_decay)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::config("log_every must be positive"));
        }
        Ok(())
    }

    pub fn check_head(&self, head: HeadKind) -> Result<()> {
        match self.loss_kind.required_head() {
            Some(h) if h != head => Err(Error::config(format!(
                "{} loss needs a {} head, model has {}",
                self.loss_kind,
                h.name(),
                head.name()
            ))),
            _ => Ok(()),
        }
    }
}

/// Random inputs of one loss evaluation: one time per row, Gaussian noise,
/// and which rows receive the self-conditioning estimate.
#[derive(Debug, Clone)]
pub struct TrainingDraws {
    pub t: Vec<f64>,
    pub noise: AnalogTensor,
    pub use_cond: Vec<bool>,
}

impl TrainingDraws {
    /// Draw order: all times, then noise row-major, then one coin per row.
    pub fn sample<R: Rng + ?Sized>(batch: usize, features: usize, cfg: &TrainConfig, rng: &mut R) -> Self {
        let t: Vec<f64> = (0..batch).map(|_| rng.random::<f64>()).collect();
        let noise: Vec<f64> = (0..batch * features).map(|_| StandardNormal.sample(rng)).collect();
        let noise = AnalogTensor::from_vec(batch, features, noise).expect("sized above");
        let use_cond = (0..batch)
            .map(|_| {
                let u: f64 = rng.random();
                cfg.self_cond && u < cfg.self_cond_prob
            })
            .collect();
        Self { t, noise, use_cond }
    }
}

#[derive(Debug, Clone)]
pub struct LossAndGrad {
    pub loss: f64,
    pub grads: MlpParams,
}

/// Self-conditioning estimate `f(x_t, 0, t)` on the selected rows, zeros on
/// the rest. The result is a constant for differentiation purposes.
pub fn self_condition_estimate(
    model: &MlpDenoiser,
    x_crpt: &AnalogTensor,
    t: &[f64],
    use_cond: &[bool],
) -> Result<AnalogTensor> {
    let mut cond = AnalogTensor::zeros_like(x_crpt);
    if !use_cond.iter().any(|&u| u) {
        return Ok(cond);
    }
    let est = model.forward(x_crpt, &cond, t)?.prediction;
    for ((mut dst, src), &u) in cond.data_mut().rows_mut().into_iter().zip(est.rows()).zip(use_cond) {
        if u {
            dst.assign(&src);
        }
    }
    Ok(cond)
}

/// Loss and gradients of `f(x_crpt, cond, t)` against the clean data, with
/// `cond` held fixed.
pub fn conditioned_loss(
    model: &MlpDenoiser,
    x0: &DiscreteBatch,
    x_bits: &AnalogTensor,
    x_crpt: &AnalogTensor,
    cond: &AnalogTensor,
    t: &[f64],
    loss_kind: LossKind,
) -> Result<LossAndGrad> {
    let pass = model.forward(x_crpt, cond, t)?;
    let (loss, grads) = match loss_kind {
        LossKind::L2 => {
            let (l, g) = loss_l2(&pass.prediction, x_bits.data())?;
            (l, model.backward_from_prediction(&pass, &g))
        }
        LossKind::SigmoidCe => {
            let (l, g) = loss_sigmoid_ce(&pass.raw, x_bits.data())?;
            (l, model.backward(&pass, &g))
        }
        LossKind::SoftmaxCe => {
            let k = match model.head() {
                crate::denoiser::OutputHead::SoftmaxFactorization { codebook } => codebook.nrows(),
                _ => return Err(Error::config("softmax-ce loss needs a softmax-factorization head")),
            };
            let targets = one_hot_targets(x0.values(), k);
            let (l, g) = loss_softmax_ce(&pass.raw, &targets, k)?;
            (l, model.backward(&pass, &g))
        }
    };
    Ok(LossAndGrad { loss, grads })
}

/// Deterministic part of the training loss given its random draws.
pub fn training_loss_with_draws(
    x0: &DiscreteBatch,
    codec: &CodecSpec,
    model: &MlpDenoiser,
    sched: &Schedule,
    loss_kind: LossKind,
    draws: &TrainingDraws,
) -> Result<LossAndGrad> {
    let x_bits = codec.encode(x0)?;
    let x_crpt = sched.forward_diffuse_rows(&x_bits, &draws.t, &draws.noise)?;
    let cond = self_condition_estimate(model, &x_crpt, &draws.t, &draws.use_cond)?;
    conditioned_loss(model, x0, &x_bits, &x_crpt, &cond, &draws.t, loss_kind)
}

/// One stochastic evaluation of the denoising objective and its gradients.
pub fn training_loss<R: Rng + ?Sized>(
    x0: &DiscreteBatch,
    codec: &CodecSpec,
    model: &MlpDenoiser,
    sched: &Schedule,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<LossAndGrad> {
    cfg.check_head(model.head().kind())?;
    let features = x0.positions() * codec.n_bits();
    let draws = TrainingDraws::sample(x0.batch(), features, cfg, rng);
    training_loss_with_draws(x0, codec, model, sched, cfg.loss_kind, &draws)
}

/// L2 loss of an arbitrary prediction rule on freshly corrupted data; used
/// to compare denoisers that are not trainable.
pub fn l2_denoising_loss<F>(x_bits: &AnalogTensor, t: f64, noise: &AnalogTensor, sched: &Schedule, predict: F) -> Result<f64>
where
    F: Fn(&AnalogTensor, f64) -> Result<AnalogTensor>,
{
    let x_t = sched.forward_diffuse(x_bits, t, noise)?;
    let pred = predict(&x_t, t)?;
    Ok(loss_l2(pred.data(), x_bits.data())?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricRecord {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wallclock: Option<f64>,
}

/// Training state: live weights, optimizer moments, EMA shadow.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: MlpDenoiser,
    pub adam: Adam,
    pub ema: EmaState,
    pub cfg: TrainConfig,
}

impl Trainer {
    pub fn new(model: MlpDenoiser, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        cfg.check_head(model.head().kind())?;
        let adam = Adam::new(model.params(), cfg.learning_rate);
        let ema = EmaState::new(model.params(), cfg.ema_decay)?;
        Ok(Self { model, adam, ema, cfg })
    }

    pub fn step<R: Rng + ?Sized>(
        &mut self,
        x0: &DiscreteBatch,
        codec: &CodecSpec,
        sched: &Schedule,
        rng: &mut R,
    ) -> Result<f64> {
        let LossAndGrad { loss, grads } = training_loss(x0, codec, &self.model, sched, &self.cfg, rng)?;
        self.adam.step(self.model.params_mut(), &grads)?;
        self.ema.update(self.model.params())?;
        Ok(loss)
    }

    /// Run `total_steps` updates on batches from `data`. Data batches and
    /// training noise come from separate generators. `on_metric` receives
    /// the mean loss of each `log_every` window.
    pub fn fit<R: Rng, D: Rng>(
        &mut self,
        data: &DiscreteDistribution,
        codec: &CodecSpec,
        sched: &Schedule,
        train_rng: &mut R,
        data_rng: &mut D,
        mut on_metric: impl FnMut(&MetricRecord) -> Result<()>,
    ) -> Result<Vec<f64>> {
        if data.vocab_size() != codec.vocab_size() {
            return Err(Error::config("task vocabulary does not match the codec"));
        }
        let mut losses = Vec::with_capacity(self.cfg.total_steps as usize);
        let mut window = 0.0;
        for step in 1..=self.cfg.total_steps {
            let x0 = data.sample(self.cfg.batch_size, data_rng);
            let loss = self.step(&x0, codec, sched, train_rng)?;
            if !loss.is_finite() {
                return Err(Error::Invariant(format!("non-finite loss at step {step}")));
            }
            losses.push(loss);
            window += loss;
            if step % self.cfg.log_every == 0 || step == self.cfg.total_steps {
                let n = (step - 1) % self.cfg.log_every + 1;
                on_metric(&MetricRecord {
                    step,
                    loss: window / n as f64,
                    lr: self.cfg.learning_rate,
                    wallclock: None,
                })?;
                window = 0.0;
            }
        }
        Ok(losses)
    }

    pub fn ema_model(&self) -> Result<MlpDenoiser> {
        self.model.with_params(self.ema.shadow.clone())
    }
}

/// Median of a slice (NaN-free input).
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
