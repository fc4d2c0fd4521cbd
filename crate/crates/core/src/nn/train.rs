use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::accuracy;
use crate::nn::backprop::{backward_plans, check_batch, cross_entropy, forward_plans, plans_from_model, sign0};
use crate::nn::model::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// L1 coefficient λ on weight matrices.
    pub l1: f64,
    pub seed: u64,
    pub optimizer: OptimizerKind,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 20,
            batch_size: 256,
            l1: 0.0,
            seed: 0,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::domain("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::domain("batch size must be >= 1"));
        }
        if !(self.l1 >= 0.0 && self.l1.is_finite()) {
            return Err(Error::domain("L1 coefficient must be finite and >= 0"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning rate must be finite and > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean over mini-batches of data loss plus L1 penalty.
    pub train_loss: f64,
    pub val_accuracy: f64,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Mini-batch loop shared by float and quantization-aware training.
///
/// `batch_grad(params, epoch, batch)` returns the data loss and its gradient.
/// L1 is handled here on the positions flagged in `weight_mask`: a weight
/// sitting at exactly zero stays there while `|∂L_c/∂w| ≤ λ`, and a step that
/// would carry a weight across zero stops at zero.
pub(crate) fn fit<G, E>(
    params: &mut [f64],
    weight_mask: &[bool],
    data: &Dataset,
    cfg: &TrainConfig,
    mut batch_grad: G,
    mut on_epoch: E,
) -> Result<Vec<EpochRecord>>
where
    G: FnMut(&[f64], usize, &Dataset) -> Result<(f64, Vec<f64>)>,
    E: FnMut(&[f64], usize) -> Result<f64>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::domain("empty training set"));
    }
    let lambda = cfg.l1;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut m1 = vec![0.0; params.len()];
    let mut m2 = vec![0.0; params.len()];
    let mut step = 0i32;
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = data.subset(chunk);
            let (data_loss, g) = batch_grad(params, epoch, &batch)?;
            let penalty: f64 = params
                .iter()
                .zip(weight_mask)
                .filter(|(_, &w)| w)
                .map(|(p, _)| p.abs())
                .sum();
            let total = data_loss + lambda * penalty;
            if !total.is_finite() || g.iter().any(|v| !v.is_finite()) {
                return Err(Error::TrainingDiverged { epoch: epoch + 1 });
            }
            loss_sum += total;
            batches += 1;
            step += 1;
            let bc1 = 1.0 - ADAM_BETA1.powi(step);
            let bc2 = 1.0 - ADAM_BETA2.powi(step);
            for i in 0..params.len() {
                let w = params[i];
                let mut gi = g[i];
                if lambda > 0.0 && weight_mask[i] {
                    if w != 0.0 {
                        gi += lambda * sign0(w);
                    } else if gi.abs() <= lambda {
                        continue;
                    } else {
                        gi -= lambda * sign0(gi);
                    }
                }
                let delta = match cfg.optimizer {
                    OptimizerKind::Adam => {
                        m1[i] = ADAM_BETA1 * m1[i] + (1.0 - ADAM_BETA1) * gi;
                        m2[i] = ADAM_BETA2 * m2[i] + (1.0 - ADAM_BETA2) * gi * gi;
                        let mh = m1[i] / bc1;
                        let vh = m2[i] / bc2;
                        cfg.learning_rate * mh / (vh.sqrt() + ADAM_EPS)
                    }
                    OptimizerKind::Sgd => cfg.learning_rate * gi,
                };
                let next = w - delta;
                params[i] = if lambda > 0.0 && weight_mask[i] && w != 0.0 && sign0(next) != sign0(w) {
                    0.0
                } else {
                    next
                };
            }
        }
        let val_accuracy = on_epoch(params, epoch)?;
        history.push(EpochRecord {
            epoch: epoch + 1,
            train_loss: loss_sum / batches as f64,
            val_accuracy,
        });
    }
    Ok(history)
}

/// Trains a copy of `model` on `data` and reports per-epoch loss and
/// validation accuracy (on `val`, or on `data` when `val` is `None`).
/// Results depend only on `(model, data, cfg)`.
pub fn train(
    model: &MlpModel,
    data: &Dataset,
    val: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<(MlpModel, Vec<EpochRecord>)> {
    check_batch(model, data)?;
    if let Some(v) = val {
        check_batch(model, v)?;
    }
    let mut work = model.clone();
    let mut params = model.flat_params();
    let mask = model.weight_mask();
    let mut plans = plans_from_model(model)?;
    let mut eval_model = model.clone();
    let history = fit(
        &mut params,
        &mask,
        data,
        cfg,
        |p, _, batch| {
            load_plans(&mut plans, p);
            let cache = forward_plans(&plans, batch.features.data(), batch.len(), 0, None);
            let loss = cross_entropy(&cache, &batch.labels);
            let grads = backward_plans(&plans, &cache, &batch.labels, 0, None);
            let mut flat = Vec::with_capacity(p.len());
            for (dw, db) in grads {
                flat.extend(dw);
                flat.extend(db);
            }
            Ok((loss, flat))
        },
        |p, _| {
            eval_model.set_flat_params(p)?;
            accuracy(&eval_model, val.unwrap_or(data))
        },
    )?;
    work.set_flat_params(&params)?;
    Ok((work, history))
}

fn load_plans(plans: &mut [crate::nn::backprop::LayerPlan], params: &[f64]) {
    let mut off = 0;
    for p in plans {
        let nw = p.n * p.m;
        p.weights.copy_from_slice(&params[off..off + nw]);
        off += nw;
        p.bias.copy_from_slice(&params[off..off + p.m]);
        off += p.m;
    }
}
