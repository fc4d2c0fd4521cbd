use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Standardizer;
use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
    None,
}

/// Batch-norm record applied between the affine map and the activation.
/// Inference mode only: `running_mean`/`running_var` must be populated
/// before the layer can be evaluated or folded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Option<Vec<f64>>,
    pub running_var: Option<Vec<f64>>,
    pub eps: f64,
}

impl BatchNorm {
    pub fn identity(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: None,
            running_var: None,
            eps: 1e-5,
        }
    }

    /// Per-unit `(scale, shift)` so that `bn(z) = scale·z + shift`.
    pub fn affine(&self) -> Option<(Vec<f64>, Vec<f64>)> {
        let (mean, var) = (self.running_mean.as_ref()?, self.running_var.as_ref()?);
        let scale: Vec<f64> = self
            .gamma
            .iter()
            .zip(var)
            .map(|(g, v)| g / (v + self.eps).sqrt())
            .collect();
        let shift = scale
            .iter()
            .zip(mean)
            .zip(&self.beta)
            .map(|((s, m), b)| b - s * m)
            .collect();
        Some((scale, shift))
    }
}

/// Dense layer `act(bn(h·W + b))`; `weights` is `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub weights: Tensor2D,
    pub bias: Vec<f64>,
    pub activation: Activation,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_norm: Option<BatchNorm>,
}

impl Layer {
    pub fn fan_in(&self) -> usize {
        self.weights.rows()
    }

    pub fn fan_out(&self) -> usize {
        self.weights.cols()
    }

    pub fn weight_count(&self) -> usize {
        self.weights.rows() * self.weights.cols()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    layers: Vec<Layer>,
}

impl MlpModel {
    /// Validates dimension chaining and the activation layout (hidden layers
    /// `relu`/`none`, output layer `softmax`).
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::shape("model needs at least one layer"));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(Error::shape(format!(
                    "layer {i}: bias length {} != fan-out {}",
                    l.bias.len(),
                    l.fan_out()
                )));
            }
            if let Some(bn) = &l.batch_norm {
                let w = l.fan_out();
                let ok = bn.gamma.len() == w
                    && bn.beta.len() == w
                    && bn.running_mean.as_ref().is_none_or(|m| m.len() == w)
                    && bn.running_var.as_ref().is_none_or(|v| v.len() == w);
                if !ok {
                    return Err(Error::shape(format!("layer {i}: batch-norm width mismatch")));
                }
            }
            if i + 1 < layers.len() {
                if layers[i + 1].fan_in() != l.fan_out() {
                    return Err(Error::shape(format!(
                        "layer {i} fan-out {} does not chain into layer {} fan-in {}",
                        l.fan_out(),
                        i + 1,
                        layers[i + 1].fan_in()
                    )));
                }
                if l.activation == Activation::Softmax {
                    return Err(Error::shape(format!("hidden layer {i} cannot use softmax")));
                }
            } else if l.activation != Activation::Softmax {
                return Err(Error::shape("output layer must use softmax"));
            }
        }
        Ok(Self { layers })
    }

    /// Default jet-tagging layout 16→64→32→32→5.
    pub fn default_dims() -> Vec<usize> {
        vec![16, 64, 32, 32, 5]
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::build(dims, |_, _| 0.0)
    }

    /// He-uniform weights (Glorot-uniform on the output layer), zero biases.
    pub fn random(dims: &[usize], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = dims.len().saturating_sub(2);
        Self::build(dims, |l, (n, m)| {
            let limit = if l == last {
                (6.0 / (n + m) as f64).sqrt()
            } else {
                (6.0 / n as f64).sqrt()
            };
            rng.gen_range(-limit..limit)
        })
    }

    fn build(dims: &[usize], mut init: impl FnMut(usize, (usize, usize)) -> f64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::shape(format!("invalid layer dimensions {dims:?}")));
        }
        let nl = dims.len() - 1;
        let layers = (0..nl)
            .map(|l| {
                let (n, m) = (dims[l], dims[l + 1]);
                let w: Vec<f64> = (0..n * m).map(|_| init(l, (n, m))).collect();
                Layer {
                    weights: Tensor2D::from_vec(n, m, w).expect("sized"),
                    bias: vec![0.0; m],
                    activation: if l + 1 == nl {
                        Activation::Softmax
                    } else {
                        Activation::Relu
                    },
                    batch_norm: None,
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_width())
            .chain(self.layers.iter().map(Layer::fan_out))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight_count() + l.fan_out()).sum()
    }

    /// Offset of layer `l`'s weights inside the canonical flat vector.
    pub fn layer_offset(&self, layer: usize) -> usize {
        self.layers[..layer]
            .iter()
            .map(|l| l.weight_count() + l.fan_out())
            .sum()
    }

    /// Canonical flattening: layers in forward order, each weight matrix
    /// row-major, then that layer's bias.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(l.weights.data());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::shape(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                params.len()
            )));
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weight_count();
            l.weights.data_mut().copy_from_slice(&params[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&params[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    /// `true` for flat-vector positions holding weights (not biases).
    pub fn weight_mask(&self) -> Vec<bool> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend(std::iter::repeat_n(true, l.weight_count()));
            out.extend(std::iter::repeat_n(false, l.fan_out()));
        }
        out
    }

    /// Class-probability rows for `x`.
    pub fn forward(&self, x: &Tensor2D) -> Result<Tensor2D> {
        if x.cols() != self.input_width() {
            return Err(Error::shape(format!(
                "input has {} columns, model expects {}",
                x.cols(),
                self.input_width()
            )));
        }
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.matmul(&layer.weights)?;
            let bn = match &layer.batch_norm {
                Some(bn) => Some(bn.affine().ok_or(Error::BatchNormTraining { layer: i })?),
                None => None,
            };
            for r in 0..z.rows() {
                let row = z.row_mut(r);
                for (v, b) in row.iter_mut().zip(&layer.bias) {
                    *v += b;
                }
                if let Some((s, t)) = &bn {
                    for ((v, s), t) in row.iter_mut().zip(s).zip(t) {
                        *v = *v * s + t;
                    }
                }
                apply_activation(layer.activation, row);
            }
            h = z;
        }
        Ok(h)
    }

    /// Predicted class per row.
    pub fn predict(&self, x: &Tensor2D) -> Result<Vec<usize>> {
        let p = self.forward(x)?;
        Ok((0..p.rows()).map(|r| argmax(p.row(r))).collect())
    }

    pub fn checkpoint(&self, standardizer: Option<Standardizer>) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            dims: self.dims(),
            activations: self.layers.iter().map(|l| l.activation).collect(),
            params: self.flat_params(),
            batch_norm: self.layers.iter().map(|l| l.batch_norm.clone()).collect(),
            standardizer,
        }
    }
}

pub const CHECKPOINT_FORMAT: &str = "mpq-mlp-v1";

/// Single-document model checkpoint: architecture, canonical flat
/// parameters and the standardization statistics of the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub params: Vec<f64>,
    pub batch_norm: Vec<Option<BatchNorm>>,
    pub standardizer: Option<Standardizer>,
}

impl Checkpoint {
    pub fn to_model(&self) -> Result<MlpModel> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::domain(format!("unknown checkpoint format '{}'", self.format)));
        }
        let nl = self.dims.len().saturating_sub(1);
        if self.activations.len() != nl || self.batch_norm.len() != nl {
            return Err(Error::shape("checkpoint layer metadata does not match dims"));
        }
        let mut model = MlpModel::zeros(&self.dims)?;
        for (l, layer) in model.layers.iter_mut().enumerate() {
            layer.activation = self.activations[l];
            layer.batch_norm = self.batch_norm[l].clone();
        }
        let mut model = MlpModel::new(model.layers)?;
        model.set_flat_params(&self.params)?;
        Ok(model)
    }
}

pub(crate) fn apply_activation(act: Activation, row: &mut [f64]) {
    match act {
        Activation::Relu => row.iter_mut().for_each(|v| *v = v.max(0.0)),
        Activation::Softmax => softmax_in_place(row),
        Activation::None => {}
    }
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    row.iter_mut().for_each(|v| *v /= sum);
}

/// Index of the first maximum.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
