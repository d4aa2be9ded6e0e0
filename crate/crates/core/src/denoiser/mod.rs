//! Denoising functions `f(x_t, x_cond, t) -> x0_hat`.

mod checkpoint;
mod mlp;
mod oracle;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{
    time_features, Dense, ForwardPass, HeadKind, MlpConfig, MlpDenoiser, MlpParams, ModelSpec,
    OutputHead,
};
pub use oracle::{OracleDenoiser, MAX_SUPPORT};

use crate::error::Result;
use crate::tensor::AnalogTensor;

/// Anything that predicts clean analog bits from a noisy state.
///
/// `x_cond` has the shape of `x_t`; all zeros means "no condition".
pub trait Denoiser: Sync {
    /// Analog-bit width per row.
    fn features(&self) -> usize;

    fn predict(&self, x_t: &AnalogTensor, x_cond: &AnalogTensor, t: f64) -> Result<AnalogTensor>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn features(&self) -> usize {
        (**self).features()
    }

    fn predict(&self, x_t: &AnalogTensor, x_cond: &AnalogTensor, t: f64) -> Result<AnalogTensor> {
        (**self).predict(x_t, x_cond, t)
    }
}
