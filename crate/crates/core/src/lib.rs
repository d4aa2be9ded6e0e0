//! Continuous-state diffusion over analog bits for discrete data.
//!
//! Symbols are encoded as real-valued bit vectors ([`codec`]), corrupted by
//! a cosine-schedule Gaussian forward process ([`schedule`]), and generated
//! by running a denoiser ([`denoiser`]) through DDIM/DDPM reverse steps
//! ([`sampler`]). An exact posterior-mean oracle over enumerable supports
//! serves as ground truth for the samplers and for [`eval`].

pub mod cli;
pub mod codec;
pub mod config;
pub mod denoiser;
pub mod distribution;
pub mod error;
pub mod eval;
pub mod rng;
pub mod sampler;
pub mod schedule;
pub mod tensor;
pub mod trainer;

pub use codec::{CodecKind, CodecSpec};
pub use denoiser::{Denoiser, MlpDenoiser, OracleDenoiser};
pub use distribution::DiscreteDistribution;
pub use error::{Error, Result};
pub use sampler::{generate, SamplerConfig, StepRule, Strategy};
pub use schedule::Schedule;
pub use tensor::{AnalogTensor, DiscreteBatch};
pub use trainer::{LossKind, TrainConfig};
