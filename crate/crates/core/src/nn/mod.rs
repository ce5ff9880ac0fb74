//! Dense neural-network substrate.
//!
//! Everything here is plain `f64` math on `Vec`s: dense layers, a layer stack
//! ([`Mlp`]), an LSTM cell, SGD/Adam, finite-difference gradient checking and
//! the on-disk checkpoint format. Models are immutable during `forward`;
//! training owns a model mutably.

mod activation;
pub mod checkpoint;
pub mod gradcheck;
mod layer;
mod lstm;
mod mlp;
mod optim;

pub use activation::Activation;
pub use layer::{DenseLayer, LayerGrads};
pub use lstm::{LstmCell, LstmGrads, LstmState, LstmStepCache};
pub use mlp::{ForwardCache, Mlp, MlpGrads};
pub use optim::{Optimizer, OptimizerKind};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },
    #[error("backward called without a forward pass")]
    MissingForward,
    #[error("non-finite gradient in {param}")]
    NonFiniteGradient { param: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn check_len(context: &str, expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(NnError::Shape {
            context: context.to_owned(),
            expected,
            actual,
        });
    }
    Ok(())
}

/// Types that expose their trainable parameters as a fixed, ordered list of
/// flat slices. Gradient structs expose the same order, so optimizers and
/// gradient checks can walk both in lockstep.
pub trait Params {
    fn param_slices(&self) -> Vec<&[f64]>;
    fn param_slices_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    fn sum_squares(&self) -> f64 {
        self.param_slices()
            .iter()
            .flat_map(|s| s.iter())
            .map(|v| v * v)
            .sum()
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += alpha * x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}
