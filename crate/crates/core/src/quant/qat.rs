use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{
    backward_plans, check_batch, cross_entropy, fit, forward_plans, match_fraction, plans_from_model, ActQuant,
    Activation, LayerPlan, MlpModel, TrainConfig,
};
use crate::quant::bn::fold_bn;
use crate::quant::params::{calibrate, QuantParams};
use crate::quant::schema::QuantSchema;
use crate::tensor::Tensor2D;

pub const DEFAULT_ACCUMULATOR_BITS: u32 = 32;
pub const MAX_ACCUMULATOR_BITS: u32 = 96;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QatConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Weight of the previous range in the activation-range EMA.
    pub ema_momentum: f64,
    /// Fraction of final epochs with frozen activation ranges.
    pub freeze_fraction: f64,
    pub accumulator_bits: u32,
}

impl Default for QatConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            ema_momentum: 0.95,
            freeze_fraction: 0.2,
            accumulator_bits: DEFAULT_ACCUMULATOR_BITS,
        }
    }
}

impl QatConfig {
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if !(0.0..1.0).contains(&self.ema_momentum) {
            return Err(Error::domain("EMA momentum must lie in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.freeze_fraction) {
            return Err(Error::domain("freeze fraction must lie in [0, 1]"));
        }
        check_accumulator_bits(self.accumulator_bits)
    }

    /// First 0-based epoch with frozen ranges.
    pub fn freeze_start(&self) -> usize {
        let frozen = (self.freeze_fraction * self.train.epochs as f64).ceil() as usize;
        self.train.epochs - frozen.min(self.train.epochs)
    }
}

pub(crate) fn check_accumulator_bits(bits: u32) -> Result<()> {
    if !(8..=MAX_ACCUMULATOR_BITS).contains(&bits) {
        return Err(Error::domain(format!(
            "accumulator width {bits} outside 8..={MAX_ACCUMULATOR_BITS}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QatEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    /// Number of mini-batches that updated the activation ranges.
    pub ema_updates: usize,
    pub frozen: bool,
}

/// Float shadow weights plus everything needed to fake-quantize them:
/// the schema, the static input quantizer and the hidden activation ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QatModel {
    model: MlpModel,
    schema: QuantSchema,
    input: QuantParams,
    act_ranges: Vec<f64>,
    accumulator_bits: u32,
}

impl QatModel {
    /// Post-training calibration: folds batch norm, fixes the input quantizer
    /// from `calib` and sets each hidden range to the largest activation seen
    /// with the preceding layers already quantized.
    pub fn calibrate(model: &MlpModel, schema: &QuantSchema, calib: &Dataset, accumulator_bits: u32) -> Result<Self> {
        check_accumulator_bits(accumulator_bits)?;
        let model = prepare(model, schema)?;
        check_batch(&model, calib)?;
        let input = calibrate(calib.features.data(), schema.input_bits, true)?;
        let hidden = model.num_layers() - 1;
        let mut q = Self {
            model,
            schema: schema.clone(),
            input,
            act_ranges: vec![1.0; hidden],
            accumulator_bits,
        };
        let x = q.quantize_input(calib.features.data());
        for l in 0..hidden {
            let plans = q.plans()?;
            let cache = forward_plans(&plans[..=l], &x, calib.len(), 0, None);
            let amax = cache.act_max[l];
            q.act_ranges[l] = if amax > 0.0 { amax } else { 1.0 };
        }
        Ok(q)
    }

    pub fn float_model(&self) -> &MlpModel {
        &self.model
    }

    pub fn schema(&self) -> &QuantSchema {
        &self.schema
    }

    pub fn input_params(&self) -> &QuantParams {
        &self.input
    }

    pub fn act_ranges(&self) -> &[f64] {
        &self.act_ranges
    }

    pub fn accumulator_bits(&self) -> u32 {
        self.accumulator_bits
    }

    pub fn num_layers(&self) -> usize {
        self.model.num_layers()
    }

    /// Symmetric per-tensor weight quantizer of layer `l`.
    pub fn weight_params(&self, l: usize) -> Result<QuantParams> {
        calibrate(self.model.layers()[l].weights.data(), self.schema.weight_bits[l], true)
    }

    /// Unsigned `[0, β]` quantizer of hidden layer `l`'s output.
    pub fn act_params(&self, l: usize) -> Result<QuantParams> {
        if l >= self.act_ranges.len() {
            return Err(Error::domain(format!("layer {l} has no quantized activation")));
        }
        QuantParams::unsigned(self.act_ranges[l], self.schema.act_bits[l])
    }

    /// Scale `S_h` of the activation entering layer `l`.
    pub fn input_scale(&self, l: usize) -> Result<f64> {
        if l == 0 {
            Ok(self.input.scale)
        } else {
            Ok(self.act_params(l - 1)?.scale)
        }
    }

    /// Integer weight codes of layer `l` (row-major `fan_in × fan_out`).
    pub fn weight_codes(&self, l: usize) -> Result<Vec<i64>> {
        let p = self.weight_params(l)?;
        Ok(self.model.layers()[l]
            .weights
            .data()
            .iter()
            .map(|&w| p.quantize(w))
            .collect())
    }

    /// Bias codes of layer `l` at scale `S_W·S_h`, saturated to the
    /// accumulator range.
    pub fn bias_codes(&self, l: usize) -> Result<Vec<i128>> {
        let s = self.weight_params(l)?.scale * self.input_scale(l)?;
        let lim = (1i128 << (self.accumulator_bits - 1)) - 1;
        Ok(self.model.layers()[l]
            .bias
            .iter()
            .map(|&b| ((b / s).round_ties_even() as i128).clamp(-lim, lim))
            .collect())
    }

    /// Per-layer fraction of zero weight codes.
    pub fn code_sparsity(&self) -> Result<Vec<f64>> {
        (0..self.num_layers())
            .map(|l| {
                let c = self.weight_codes(l)?;
                Ok(c.iter().filter(|&&q| q == 0).count() as f64 / c.len() as f64)
            })
            .collect()
    }

    /// Fake-quantized input features.
    pub fn quantize_input(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.input.fake(v)).collect()
    }

    pub(crate) fn plans(&self) -> Result<Vec<LayerPlan>> {
        let mut plans = plans_from_model(&self.model)?;
        let hidden = plans.len() - 1;
        for (l, p) in plans.iter_mut().enumerate() {
            let wq = self.weight_params(l)?;
            p.weights.iter_mut().for_each(|w| *w = wq.fake(*w));
            let s = wq.scale * self.input_scale(l)?;
            for (b, q) in p.bias.iter_mut().zip(self.bias_codes(l)?) {
                *b = s * q as f64;
            }
            if l < hidden {
                let a = self.act_params(l)?;
                p.act_quant = Some(ActQuant {
                    scale: a.scale,
                    qmax: a.qmax() as f64,
                });
            }
        }
        Ok(plans)
    }

    /// Fake-quantized forward pass; returns class probabilities.
    pub fn forward(&self, x: &Tensor2D) -> Result<Tensor2D> {
        if x.cols() != self.model.input_width() {
            return Err(Error::shape(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.model.input_width()
            )));
        }
        let plans = self.plans()?;
        let cache = forward_plans(&plans, &self.quantize_input(x.data()), x.rows(), 0, None);
        Tensor2D::from_vec(x.rows(), self.model.output_width(), cache.probs)
    }

    pub fn predict(&self, x: &Tensor2D) -> Result<Vec<usize>> {
        let p = self.forward(x)?;
        Ok((0..p.rows()).map(|r| crate::nn::argmax(p.row(r))).collect())
    }

    pub fn accuracy(&self, data: &Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::domain("accuracy of an empty dataset"));
        }
        Ok(match_fraction(&self.predict(&data.features)?, &data.labels))
    }

    /// The network with weights and biases replaced by their fake-quantized
    /// values (activations left in float).
    pub fn quantized_weights_model(&self) -> Result<MlpModel> {
        let mut m = self.model.clone();
        let plans = self.plans()?;
        for (layer, p) in m.layers_mut().iter_mut().zip(plans) {
            layer.weights.data_mut().copy_from_slice(&p.weights);
            layer.bias = p.bias;
        }
        Ok(m)
    }
}

fn prepare(model: &MlpModel, schema: &QuantSchema) -> Result<MlpModel> {
    schema.check_layers(model.num_layers())?;
    let model = fold_bn(model)?;
    let last = model.num_layers() - 1;
    if let Some(l) = model.layers()[..last]
        .iter()
        .position(|l| l.activation != Activation::Relu)
    {
        return Err(Error::domain(format!(
            "layer {l}: integer lowering needs ReLU hidden activations"
        )));
    }
    Ok(model)
}

/// Quantization-aware training with straight-through gradients.
///
/// Activation ranges start from a calibration pass over `data`, then track
/// an exponential moving average of per-batch maxima until the last
/// `freeze_fraction` of epochs. Validation accuracy is the fake-quantized
/// accuracy on `val` (or `data`).
pub fn qat_train(
    model: &MlpModel,
    data: &Dataset,
    val: Option<&Dataset>,
    schema: &QuantSchema,
    cfg: &QatConfig,
) -> Result<(QatModel, Vec<QatEpoch>)> {
    cfg.validate()?;
    let init = QatModel::calibrate(model, schema, data, cfg.accumulator_bits)?;
    if let Some(v) = val {
        check_batch(&init.model, v)?;
    }
    let mut params = init.model.flat_params();
    let mask = init.model.weight_mask();
    let freeze_start = cfg.freeze_start();
    let work = RefCell::new(init);
    let updates = RefCell::new(Vec::with_capacity(cfg.train.epochs));
    let epoch_updates = RefCell::new(0usize);
    let mom = cfg.ema_momentum;

    let history = fit(
        &mut params,
        &mask,
        data,
        &cfg.train,
        |p, epoch, batch| {
            let mut w = work.borrow_mut();
            w.model.set_flat_params(p)?;
            let plans = w.plans()?;
            let x = w.quantize_input(batch.features.data());
            let cache = forward_plans(&plans, &x, batch.len(), 0, None);
            let loss = cross_entropy(&cache, &batch.labels);
            let grads = backward_plans(&plans, &cache, &batch.labels, 0, None);
            if epoch < freeze_start {
                for (r, &amax) in w.act_ranges.iter_mut().zip(&cache.act_max) {
                    let next = mom * *r + (1.0 - mom) * amax;
                    *r = if next > 0.0 { next } else { *r };
                }
                *epoch_updates.borrow_mut() += 1;
            }
            let mut flat = Vec::with_capacity(p.len());
            for (dw, db) in grads {
                flat.extend(dw);
                flat.extend(db);
            }
            Ok((loss, flat))
        },
        |p, _| {
            let mut w = work.borrow_mut();
            w.model.set_flat_params(p)?;
            updates
                .borrow_mut()
                .push(std::mem::take(&mut *epoch_updates.borrow_mut()));
            w.accuracy(val.unwrap_or(data))
        },
    )?;
    let mut out = work.into_inner();
    out.model.set_flat_params(&params)?;
    let updates = updates.into_inner();
    let epochs = history
        .into_iter()
        .zip(updates)
        .map(|(h, ema_updates)| QatEpoch {
            frozen: h.epoch > freeze_start,
            epoch: h.epoch,
            train_loss: h.train_loss,
            val_accuracy: h.val_accuracy,
            ema_updates,
        })
        .collect();
    Ok((out, epochs))
}
