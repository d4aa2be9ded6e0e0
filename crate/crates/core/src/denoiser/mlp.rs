use std::f64::consts::PI;

use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::codec::CodecSpec;
use crate::error::{Error, Result};
use crate::tensor::{standard, AnalogTensor};

use super::Denoiser;

/// Sinusoidal time features: `[t, sin(pi 2^k t), cos(pi 2^k t)]` for `k < freqs`.
pub fn time_features(t: f64, freqs: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(1 + 2 * freqs);
    out.push(t);
    for k in 0..freqs {
        let w = PI * f64::from(1u32 << k);
        out.push((w * t).sin());
        out.push((w * t).cos());
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadKind {
    Linear,
    Sigmoid,
    SoftmaxFactorization,
}

impl HeadKind {
    pub fn code(self) -> u32 {
        match self {
            HeadKind::Linear => 0,
            HeadKind::Sigmoid => 1,
            HeadKind::SoftmaxFactorization => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(HeadKind::Linear),
            1 => Some(HeadKind::Sigmoid),
            2 => Some(HeadKind::SoftmaxFactorization),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Linear => "linear",
            HeadKind::Sigmoid => "sigmoid",
            HeadKind::SoftmaxFactorization => "softmax-factorization",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(HeadKind::Linear),
            "sigmoid" => Ok(HeadKind::Sigmoid),
            "softmax-factorization" | "softmax" => Ok(HeadKind::SoftmaxFactorization),
            other => Err(Error::config(format!("unknown head `{other}`"))),
        }
    }
}

/// Map from the network's raw output to the analog-bit prediction.
#[derive(Debug, Clone, PartialEq)]
pub enum OutputHead {
    Linear,
    /// `b * (2 sigmoid(z) - 1)`; raw outputs are per-bit logits.
    Sigmoid { scale: f64 },
    /// Per position, logits over the `K` rows of `codebook`; the prediction
    /// is the probability-weighted average codeword.
    SoftmaxFactorization { codebook: Array2<f64> },
}

impl OutputHead {
    pub fn kind(&self) -> HeadKind {
        match self {
            OutputHead::Linear => HeadKind::Linear,
            OutputHead::Sigmoid { .. } => HeadKind::Sigmoid,
            OutputHead::SoftmaxFactorization { .. } => HeadKind::SoftmaxFactorization,
        }
    }

    pub fn for_codec(kind: HeadKind, codec: &CodecSpec) -> Self {
        match kind {
            HeadKind::Linear => OutputHead::Linear,
            HeadKind::Sigmoid => OutputHead::Sigmoid {
                scale: codec.scale(),
            },
            HeadKind::SoftmaxFactorization => {
                let k = codec.vocab_size();
                let flat: Vec<f64> = codec.codebook().into_iter().flatten().collect();
                let codebook = Array2::from_shape_vec((k, codec.n_bits()), flat)
                    .expect("codebook rows have n_bits entries");
                OutputHead::SoftmaxFactorization { codebook }
            }
        }
    }

    /// Raw output width for `features` analog bits.
    fn raw_width(&self, features: usize) -> Result<usize> {
        match self {
            OutputHead::SoftmaxFactorization { codebook } => {
                let bits = codebook.ncols();
                if bits == 0 || !features.is_multiple_of(bits) {
                    return Err(Error::config(format!(
                        "{features} features not divisible by codeword width {bits}"
                    )));
                }
                Ok(features / bits * codebook.nrows())
            }
            _ => Ok(features),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpConfig {
    /// Analog-bit width of `x_t` (and of the prediction).
    pub features: usize,
    pub hidden: Vec<usize>,
    pub time_freqs: usize,
}

impl MlpConfig {
    pub fn input_width(&self) -> usize {
        2 * self.features + 1 + 2 * self.time_freqs
    }
}

/// Architecture knobs for building a fresh network for a codec.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub hidden: Vec<usize>,
    pub time_freqs: usize,
    pub head: HeadKind,
    pub zero_init_output: bool,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            hidden: vec![64, 64],
            time_freqs: 4,
            head: HeadKind::Linear,
            zero_init_output: false,
        }
    }
}

impl ModelSpec {
    pub fn build<R: Rng + ?Sized>(
        &self,
        codec: &CodecSpec,
        positions: usize,
        rng: &mut R,
    ) -> Result<MlpDenoiser> {
        let config = MlpConfig {
            features: positions * codec.n_bits(),
            hidden: self.hidden.clone(),
            time_freqs: self.time_freqs,
        };
        let mut m = MlpDenoiser::new(config, OutputHead::for_codec(self.head, codec), rng)?;
        if self.zero_init_output {
            m.zero_output_layer();
        }
        Ok(m)
    }
}

/// Fully connected layer, `y = x W^T + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    fn apply(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut y = standard(x.dot(&self.weight.t()));
        y += &self.bias;
        y
    }
}

/// All trainable arrays, in declaration order.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

impl MlpParams {
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.inputs(), l.outputs()))
                .collect(),
        }
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.layers.first().map_or(0, Dense::inputs)];
        w.extend(self.layers.iter().map(Dense::outputs));
        w
    }

    pub fn names(&self) -> Vec<String> {
        (0..self.layers.len())
            .flat_map(|i| [format!("layer{i}.weight"), format!("layer{i}.bias")])
            .collect()
    }

    pub fn arrays(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn arrays_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.arrays().iter().map(|a| a.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &MlpParams) -> bool {
        self.widths() == other.widths()
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// `self += alpha * other`, elementwise.
    pub fn add_scaled(&mut self, alpha: f64, other: &MlpParams) {
        for (dst, src) in self.arrays_mut().into_iter().zip(other.arrays()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += alpha * s;
            }
        }
    }
}

/// Cached activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    pub raw: Array2<f64>,
    pub prediction: Array2<f64>,
    probs: Option<Array2<f64>>,
}

impl ForwardPass {
    /// Softmax probabilities of the factorization head, `[batch, positions * K]`.
    pub fn probs(&self) -> Option<&Array2<f64>> {
        self.probs.as_ref()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn silu(z: f64) -> f64 {
    z * sigmoid(z)
}

fn silu_grad(z: f64) -> f64 {
    let s = sigmoid(z);
    s * (1.0 + z * (1.0 - s))
}

/// Small MLP denoiser with hand-written reverse-mode gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    config: MlpConfig,
    head: OutputHead,
    params: MlpParams,
}

impl MlpDenoiser {
    /// Random init, uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(config: MlpConfig, head: OutputHead, rng: &mut R) -> Result<Self> {
        if config.features == 0 {
            return Err(Error::config("MLP needs at least one feature"));
        }
        if config.hidden.contains(&0) {
            return Err(Error::config("hidden widths must be positive"));
        }
        let out = head.raw_width(config.features)?;
        let mut widths = vec![config.input_width()];
        widths.extend(&config.hidden);
        widths.push(out);
        let layers = widths
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                let mut d = Dense::zeros(w[0], w[1]);
                d.weight.mapv_inplace(|_| rng.random_range(-bound..bound));
                d.bias.mapv_inplace(|_| rng.random_range(-bound..bound));
                d
            })
            .collect();
        Ok(Self {
            config,
            head,
            params: MlpParams { layers },
        })
    }

    pub fn from_parts(config: MlpConfig, head: OutputHead, params: MlpParams) -> Result<Self> {
        let out = head.raw_width(config.features)?;
        let mut widths = vec![config.input_width()];
        widths.extend(&config.hidden);
        widths.push(out);
        if params.widths() != widths {
            return Err(Error::shape(format!(
                "parameter widths {:?} do not match config {:?}",
                params.widths(),
                widths
            )));
        }
        Ok(Self {
            config,
            head,
            params,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn head(&self) -> &OutputHead {
        &self.head
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut MlpParams {
        &mut self.params
    }

    pub fn set_params(&mut self, params: MlpParams) -> Result<()> {
        if !params.same_shape(&self.params) {
            return Err(Error::shape("replacement parameters have different widths"));
        }
        self.params = params;
        Ok(())
    }

    /// Same network with other weights (e.g. the EMA shadow).
    pub fn with_params(&self, params: MlpParams) -> Result<Self> {
        let mut m = self.clone();
        m.set_params(params)?;
        Ok(m)
    }

    pub fn zero_output_layer(&mut self) {
        if let Some(last) = self.params.layers.last_mut() {
            last.weight.fill(0.0);
            last.bias.fill(0.0);
        }
    }

    fn build_input(&self, x_t: &AnalogTensor, x_cond: &AnalogTensor, t: &[f64]) -> Result<Array2<f64>> {
        let f = self.config.features;
        if x_t.features() != f {
            return Err(Error::shape(format!("MLP expects {f} features, got {}", x_t.features())));
        }
        x_t.ensure_same_shape(x_cond, "MLP condition")?;
        if t.len() != x_t.batch() {
            return Err(Error::shape(format!("{} times for a batch of {}", t.len(), x_t.batch())));
        }
        let tw = 1 + 2 * self.config.time_freqs;
        let mut temb = Array2::zeros((t.len(), tw));
        for (mut row, &ti) in temb.rows_mut().into_iter().zip(t) {
            for (dst, v) in row.iter_mut().zip(time_features(ti, self.config.time_freqs)) {
                *dst = v;
            }
        }
        concatenate(Axis(1), &[x_t.view(), x_cond.view(), temb.view()])
            .map_err(|e| Error::shape(e.to_string()))
    }

    /// Forward pass with one time per row.
    pub fn forward(&self, x_t: &AnalogTensor, x_cond: &AnalogTensor, t: &[f64]) -> Result<ForwardPass> {
        let mut a = self.build_input(x_t, x_cond, t)?;
        let n = self.params.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n.saturating_sub(1));
        for (i, layer) in self.params.layers.iter().enumerate() {
            let z = layer.apply(a.view());
            inputs.push(a);
            if i + 1 < n {
                a = z.mapv(silu);
                pre.push(z);
            } else {
                a = z;
            }
        }
        let raw = a;
        let (prediction, probs) = self.apply_head(&raw);
        Ok(ForwardPass {
            inputs,
            pre,
            raw,
            prediction,
            probs,
        })
    }

    fn apply_head(&self, raw: &Array2<f64>) -> (Array2<f64>, Option<Array2<f64>>) {
        match &self.head {
            OutputHead::Linear => (raw.clone(), None),
            OutputHead::Sigmoid { scale } => (raw.mapv(|z| scale * (2.0 * sigmoid(z) - 1.0)), None),
            OutputHead::SoftmaxFactorization { codebook } => {
                let (k, bits) = codebook.dim();
                let positions = self.config.features / bits;
                let batch = raw.nrows();
                let mut probs = raw.clone();
                let mut pred = Array2::zeros((batch, self.config.features));
                for p in 0..positions {
                    let mut block = probs.slice_mut(s![.., p * k..(p + 1) * k]);
                    for mut row in block.rows_mut() {
                        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        row.mapv_inplace(|v| (v - max).exp());
                        let sum = row.sum();
                        row.mapv_inplace(|v| v / sum);
                    }
                    let avg = block.dot(codebook);
                    pred.slice_mut(s![.., p * bits..(p + 1) * bits]).assign(&avg);
                }
                (pred, Some(probs))
            }
        }
    }

    /// Gradient with respect to the raw outputs, given one with respect to
    /// the prediction.
    pub fn head_backward(&self, pass: &ForwardPass, grad_pred: &Array2<f64>) -> Array2<f64> {
        match &self.head {
            OutputHead::Linear => grad_pred.clone(),
            OutputHead::Sigmoid { scale } => {
                let mut g = grad_pred.clone();
                g.zip_mut_with(&pass.raw, |gi, &z| {
                    let s = sigmoid(z);
                    *gi *= 2.0 * scale * s * (1.0 - s);
                });
                g
            }
            OutputHead::SoftmaxFactorization { codebook } => {
                let probs = pass.probs.as_ref().expect("softmax head caches probabilities");
                let (k, bits) = codebook.dim();
                let positions = self.config.features / bits;
                let mut out = Array2::zeros(probs.dim());
                for p in 0..positions {
                    let g = grad_pred.slice(s![.., p * bits..(p + 1) * bits]);
                    // s_k = <g, c_k>
                    let proj = g.dot(&codebook.t());
                    let pr = probs.slice(s![.., p * k..(p + 1) * k]);
                    let mut dst = out.slice_mut(s![.., p * k..(p + 1) * k]);
                    for ((mut d, pr), sk) in dst.rows_mut().into_iter().zip(pr.rows()).zip(proj.rows()) {
                        let mean: f64 = pr.iter().zip(sk.iter()).map(|(a, b)| a * b).sum();
                        for ((di, &pi), &si) in d.iter_mut().zip(pr.iter()).zip(sk.iter()) {
                            *di = pi * (si - mean);
                        }
                    }
                }
                out
            }
        }
    }

    /// Parameter gradients given `dL/d(raw output)`.
    pub fn backward(&self, pass: &ForwardPass, grad_raw: &Array2<f64>) -> MlpParams {
        let mut grads = self.params.zeros_like();
        let mut g = grad_raw.clone();
        for i in (0..self.params.layers.len()).rev() {
            let input = &pass.inputs[i];
            grads.layers[i].weight = standard(g.t().dot(input));
            grads.layers[i].bias = g.sum_axis(Axis(0));
            if i > 0 {
                let mut prev = g.dot(&self.params.layers[i].weight);
                prev.zip_mut_with(&pass.pre[i - 1], |gi, &z| *gi *= silu_grad(z));
                g = prev;
            }
        }
        grads
    }

    /// Parameter gradients given `dL/d(prediction)`.
    pub fn backward_from_prediction(&self, pass: &ForwardPass, grad_pred: &Array2<f64>) -> MlpParams {
        let grad_raw = self.head_backward(pass, grad_pred);
        self.backward(pass, &grad_raw)
    }
}

impl Denoiser for MlpDenoiser {
    fn features(&self) -> usize {
        self.config.features
    }

    fn predict(&self, x_t: &AnalogTensor, x_cond: &AnalogTensor, t: f64) -> Result<AnalogTensor> {
        let times = vec![t; x_t.batch()];
        Ok(AnalogTensor::new(self.forward(x_t, x_cond, &times)?.prediction))
    }
}
