//! Minimal dense-network engine: forward pass, cross-entropy with L1,
//! backpropagation, layer-restricted Hessian-vector products and training.

mod backprop;
mod model;
mod train;

pub(crate) use backprop::{
    backward_plans, check_batch, cross_entropy, forward_plans, plans_from_model, ActQuant, LayerPlan,
};
pub(crate) use model::apply_activation;
pub(crate) use train::fit;

pub use backprop::{central_difference_hvp, data_loss, grad, hvp, l1_penalty, loss, LayerHessian};
pub use model::{argmax, softmax_in_place, Activation, BatchNorm, Checkpoint, Layer, MlpModel, CHECKPOINT_FORMAT};
pub use train::{train, EpochRecord, OptimizerKind, TrainConfig};

use crate::data::Dataset;
use crate::error::{Error, Result};

/// Default threshold below which a weight counts as pruned.
pub const SPARSITY_EPS: f64 = 1e-6;

/// Fraction of rows whose arg-max prediction equals the label.
pub fn accuracy(model: &MlpModel, data: &Dataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::domain("accuracy of an empty dataset"));
    }
    let pred = model.predict(&data.features)?;
    Ok(match_fraction(&pred, &data.labels))
}

pub(crate) fn match_fraction(pred: &[usize], labels: &[usize]) -> f64 {
    let hits = pred.iter().zip(labels).filter(|(p, y)| p == y).count();
    hits as f64 / labels.len() as f64
}

/// Per-layer fraction of weights with `|w| <= eps`.
pub fn sparsity(model: &MlpModel, eps: f64) -> Result<Vec<f64>> {
    if eps < 0.0 || eps.is_nan() {
        return Err(Error::domain("sparsity threshold must be >= 0"));
    }
    Ok(model
        .layers()
        .iter()
        .map(|l| {
            let w = l.weights.data();
            w.iter().filter(|v| v.abs() <= eps).count() as f64 / w.len() as f64
        })
        .collect())
}
