//! Forward/backward passes over a flattened "plan" of the network.
//!
//! A plan holds the effective weights of every layer (float or fake-quantized)
//! so the float trainer, the quantization-aware trainer and the Hessian-vector
//! product all share one backpropagation routine.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::model::{softmax_in_place, Activation, MlpModel};
use crate::tensor::matmul_into;

/// Unsigned fake quantization of a hidden activation: `S·clip(round(a/S), 0, qmax)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ActQuant {
    pub scale: f64,
    pub qmax: f64,
}

impl ActQuant {
    #[inline]
    pub fn upper(&self) -> f64 {
        self.scale * self.qmax
    }
}

#[derive(Debug, Clone)]
pub(crate) struct LayerPlan {
    pub n: usize,
    pub m: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub bn: Option<(Vec<f64>, Vec<f64>)>,
    pub activation: Activation,
    pub act_quant: Option<ActQuant>,
}

pub(crate) fn plans_from_model(model: &MlpModel) -> Result<Vec<LayerPlan>> {
    model
        .layers()
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let bn = match &l.batch_norm {
                Some(bn) => Some(bn.affine().ok_or(Error::BatchNormTraining { layer: i })?),
                None => None,
            };
            Ok(LayerPlan {
                n: l.fan_in(),
                m: l.fan_out(),
                weights: l.weights.data().to_vec(),
                bias: l.bias.clone(),
                bn,
                activation: l.activation,
                act_quant: None,
            })
        })
        .collect()
}

pub(crate) struct Cache {
    pub rows: usize,
    pub start: usize,
    /// Input to each layer from `start` on (`rows × n`).
    pub inputs: Vec<Vec<f64>>,
    /// Activation derivative mask per hidden layer (`rows × m`).
    pub masks: Vec<Vec<f64>>,
    /// Output probabilities (`rows × classes`).
    pub probs: Vec<f64>,
    /// Output logits (`rows × classes`).
    pub logits: Vec<f64>,
    /// Largest post-ReLU (pre-quantization) activation per layer.
    pub act_max: Vec<f64>,
}

/// Runs layers `start..` on `input`. `weight_override` replaces one layer's
/// weights without cloning the plan.
pub(crate) fn forward_plans(
    plans: &[LayerPlan],
    input: &[f64],
    rows: usize,
    start: usize,
    weight_override: Option<(usize, &[f64])>,
) -> Cache {
    forward_impl(plans, input, rows, start, weight_override, None)
}

/// As [`forward_plans`], but every ReLU keeps the on/off pattern given in
/// `frozen` (indexed from `start`), so the network is the smooth piece that
/// pattern selects.
fn forward_impl(
    plans: &[LayerPlan],
    input: &[f64],
    rows: usize,
    start: usize,
    weight_override: Option<(usize, &[f64])>,
    frozen: Option<&[Vec<f64>]>,
) -> Cache {
    let mut inputs = Vec::with_capacity(plans.len() - start);
    let mut masks = Vec::with_capacity(plans.len() - start);
    let mut act_max = Vec::with_capacity(plans.len() - start);
    let mut h = input.to_vec();
    let mut logits = Vec::new();
    for (l, p) in plans.iter().enumerate().skip(start) {
        let w = match weight_override {
            Some((ol, w)) if ol == l => w,
            _ => &p.weights[..],
        };
        let mut z = vec![0.0; rows * p.m];
        matmul_into(&h, w, rows, p.n, p.m, &mut z);
        for r in 0..rows {
            let row = &mut z[r * p.m..(r + 1) * p.m];
            for (v, b) in row.iter_mut().zip(&p.bias) {
                *v += b;
            }
            if let Some((s, t)) = &p.bn {
                for ((v, s), t) in row.iter_mut().zip(s).zip(t) {
                    *v = *v * s + t;
                }
            }
        }
        inputs.push(std::mem::take(&mut h));
        let mut mask = vec![1.0; rows * p.m];
        let mut amax = 0.0f64;
        match p.activation {
            Activation::Softmax => {
                logits = z.clone();
                for r in 0..rows {
                    softmax_in_place(&mut z[r * p.m..(r + 1) * p.m]);
                }
            }
            Activation::Relu if frozen.is_some() => {
                let fm = &frozen.expect("guarded")[l - start];
                for ((v, mk), f) in z.iter_mut().zip(mask.iter_mut()).zip(fm) {
                    *v *= f;
                    *mk = *f;
                    amax = amax.max(*v);
                }
            }
            Activation::Relu => {
                for (v, mk) in z.iter_mut().zip(mask.iter_mut()) {
                    if *v <= 0.0 {
                        *v = 0.0;
                        *mk = 0.0;
                    }
                    amax = amax.max(*v);
                }
            }
            Activation::None => {
                amax = z.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            }
        }
        if let Some(q) = p.act_quant {
            let hi = q.upper();
            for (v, mk) in z.iter_mut().zip(mask.iter_mut()) {
                if *v > hi || *v < 0.0 {
                    *mk = 0.0;
                }
                *v = q.scale * (*v / q.scale).round_ties_even().clamp(0.0, q.qmax);
            }
        }
        masks.push(mask);
        act_max.push(amax);
        h = z;
    }
    Cache {
        rows,
        start,
        inputs,
        masks,
        probs: h,
        logits,
        act_max,
    }
}

/// Mean categorical cross-entropy of the cached logits.
pub(crate) fn cross_entropy(cache: &Cache, labels: &[usize]) -> f64 {
    let classes = cache.logits.len() / cache.rows.max(1);
    let mut total = 0.0;
    for (r, &y) in labels.iter().enumerate() {
        let row = &cache.logits[r * classes..(r + 1) * classes];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / cache.rows as f64
}

/// Data-loss gradients `(dW, db)` for layers `stop_at..`, indexed from `stop_at`.
pub(crate) fn backward_plans(
    plans: &[LayerPlan],
    cache: &Cache,
    labels: &[usize],
    stop_at: usize,
    weight_override: Option<(usize, &[f64])>,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let rows = cache.rows;
    let inv_n = 1.0 / rows as f64;
    let last = plans.len() - 1;
    let classes = plans[last].m;
    // d(loss)/d(logits) for softmax + mean cross-entropy.
    let mut delta: Vec<f64> = cache.probs.clone();
    for (r, &y) in labels.iter().enumerate() {
        delta[r * classes + y] -= 1.0;
    }
    delta.iter_mut().for_each(|v| *v *= inv_n);

    let mut grads = vec![(Vec::new(), Vec::new()); plans.len() - stop_at];
    for l in (stop_at..plans.len()).rev() {
        let p = &plans[l];
        let ci = l - cache.start;
        if l != last {
            for (d, mk) in delta.iter_mut().zip(&cache.masks[ci]) {
                *d *= mk;
            }
        }
        if let Some((s, _)) = &p.bn {
            for r in 0..rows {
                for (d, s) in delta[r * p.m..(r + 1) * p.m].iter_mut().zip(s) {
                    *d *= s;
                }
            }
        }
        let h = &cache.inputs[ci];
        let mut dw = vec![0.0; p.n * p.m];
        let mut db = vec![0.0; p.m];
        for r in 0..rows {
            let drow = &delta[r * p.m..(r + 1) * p.m];
            for (b, d) in db.iter_mut().zip(drow) {
                *b += d;
            }
            for i in 0..p.n {
                let hv = h[r * p.n + i];
                if hv == 0.0 {
                    continue;
                }
                for (g, d) in dw[i * p.m..(i + 1) * p.m].iter_mut().zip(drow) {
                    *g += hv * d;
                }
            }
        }
        if l > stop_at {
            let w = match weight_override {
                Some((ol, w)) if ol == l => w,
                _ => &p.weights[..],
            };
            let mut prev = vec![0.0; rows * p.n];
            for r in 0..rows {
                let drow = &delta[r * p.m..(r + 1) * p.m];
                for i in 0..p.n {
                    let wrow = &w[i * p.m..(i + 1) * p.m];
                    prev[r * p.n + i] = wrow.iter().zip(drow).map(|(a, b)| a * b).sum();
                }
            }
            delta = prev;
        }
        grads[l - stop_at] = (dw, db);
    }
    grads
}

pub(crate) fn check_batch(model: &MlpModel, batch: &Dataset) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::domain("empty batch"));
    }
    if batch.num_features() != model.input_width() {
        return Err(Error::shape(format!(
            "batch has {} features, model expects {}",
            batch.num_features(),
            model.input_width()
        )));
    }
    if let Some(&y) = batch.labels.iter().find(|&&y| y >= model.output_width()) {
        return Err(Error::domain(format!("label {y} outside model output width")));
    }
    Ok(())
}

/// Mean cross-entropy of `model` on `batch` (no regularization).
pub fn data_loss(model: &MlpModel, batch: &Dataset) -> Result<f64> {
    check_batch(model, batch)?;
    let plans = plans_from_model(model)?;
    let cache = forward_plans(&plans, batch.features.data(), batch.len(), 0, None);
    Ok(cross_entropy(&cache, &batch.labels))
}

/// `L_c(θ) + λ·Σ_j ‖W_j‖₁`.
pub fn loss(model: &MlpModel, batch: &Dataset, lambda: f64) -> Result<f64> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::domain(format!(
            "L1 coefficient {lambda} must be finite and >= 0"
        )));
    }
    Ok(data_loss(model, batch)? + lambda * l1_penalty(model))
}

pub fn l1_penalty(model: &MlpModel) -> f64 {
    model.layers().iter().map(|l| l.weights.l1_norm()).sum()
}

#[inline]
pub(crate) fn sign0(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Gradient of [`loss`] in canonical flat order. The L1 subgradient at an
/// exactly-zero weight is 0.
pub fn grad(model: &MlpModel, batch: &Dataset, lambda: f64) -> Result<Vec<f64>> {
    if lambda < 0.0 || !lambda.is_finite() {
        return Err(Error::domain(format!(
            "L1 coefficient {lambda} must be finite and >= 0"
        )));
    }
    check_batch(model, batch)?;
    let plans = plans_from_model(model)?;
    let cache = forward_plans(&plans, batch.features.data(), batch.len(), 0, None);
    let grads = backward_plans(&plans, &cache, &batch.labels, 0, None);
    let mut out = Vec::with_capacity(model.param_count());
    for ((dw, db), p) in grads.into_iter().zip(&plans) {
        out.extend(dw.iter().zip(&p.weights).map(|(g, w)| g + lambda * sign0(*w)));
        out.extend(db);
    }
    Ok(out)
}

/// Central-difference Hessian-vector product of a gradient field:
/// `(g(θ+εv) − g(θ−εv)) / 2ε` with
/// `ε = 1e-4·max(1, ‖θ‖) / max(‖v‖, 1e-12)`.
pub fn central_difference_hvp<F>(theta: &[f64], v: &[f64], mut gradient: F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let eps = hvp_epsilon(theta, v, 1e-4);
    if v.iter().all(|&x| x == 0.0) {
        return vec![0.0; theta.len()];
    }
    central_difference_hvp_with(theta, v, eps, &mut gradient)
}

pub(crate) fn hvp_epsilon(theta: &[f64], v: &[f64], base: f64) -> f64 {
    let tn = theta.iter().map(|x| x * x).sum::<f64>().sqrt();
    let vn = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    base * tn.max(1.0) / vn.max(1e-12)
}

pub(crate) fn central_difference_hvp_with<F>(theta: &[f64], v: &[f64], eps: f64, gradient: &mut F) -> Vec<f64>
where
    F: FnMut(&[f64]) -> Vec<f64>,
{
    let plus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t + eps * d).collect();
    let minus: Vec<f64> = theta.iter().zip(v).map(|(t, d)| t - eps * d).collect();
    let gp = gradient(&plus);
    let gm = gradient(&minus);
    gp.iter().zip(&gm).map(|(a, b)| (a - b) / (2.0 * eps)).collect()
}

/// Data-loss Hessian restricted to one layer's weight matrix, evaluated on a
/// fixed batch. The layer input is cached, so each product only reruns the
/// network from that layer on.
///
/// Gradients inside the finite difference keep the ReLU on/off pattern of
/// the base point. The loss is piecewise smooth in the weights, and a
/// perturbation that pushes a sample across a ReLU kink would otherwise add
/// a spurious `jump / 2ε` term; with the pattern frozen the product is the
/// Hessian of the piece containing the base point.
pub struct LayerHessian<'a> {
    plans: Vec<LayerPlan>,
    layer: usize,
    input: Vec<f64>,
    masks: Vec<Vec<f64>>,
    rows: usize,
    labels: &'a [usize],
    eps_base: f64,
}

impl<'a> LayerHessian<'a> {
    pub fn new(model: &MlpModel, batch: &'a Dataset, layer: usize) -> Result<Self> {
        if layer >= model.num_layers() {
            return Err(Error::LayerIndex {
                layer,
                layers: model.num_layers(),
            });
        }
        check_batch(model, batch)?;
        let plans = plans_from_model(model)?;
        let input = if layer == 0 {
            batch.features.data().to_vec()
        } else {
            let head = forward_plans(&plans[..layer], batch.features.data(), batch.len(), 0, None);
            head.probs
        };
        let masks = forward_plans(&plans, &input, batch.len(), layer, None).masks;
        Ok(Self {
            plans,
            layer,
            input,
            masks,
            rows: batch.len(),
            labels: &batch.labels,
            eps_base: 1e-4,
        })
    }

    /// Overrides the `1e-4` factor in the finite-difference step.
    pub fn with_epsilon_base(mut self, base: f64) -> Self {
        self.eps_base = base;
        self
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn dim(&self) -> usize {
        let p = &self.plans[self.layer];
        p.n * p.m
    }

    pub fn weights(&self) -> &[f64] {
        &self.plans[self.layer].weights
    }

    /// Data-loss gradient with respect to this layer's weights, at `w`.
    pub fn layer_gradient(&self, w: &[f64]) -> Vec<f64> {
        let ov = Some((self.layer, w));
        let cache = forward_impl(&self.plans, &self.input, self.rows, self.layer, ov, Some(&self.masks));
        let mut g = backward_plans(&self.plans, &cache, self.labels, self.layer, ov);
        std::mem::take(&mut g[0].0)
    }

    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::shape(format!(
                "direction has {} entries, layer {} has {} weights",
                v.len(),
                self.layer,
                self.dim()
            )));
        }
        if v.iter().all(|&x| x == 0.0) {
            return Ok(vec![0.0; v.len()]);
        }
        let theta = self.weights();
        let eps = hvp_epsilon(theta, v, self.eps_base);
        Ok(central_difference_hvp_with(theta, v, eps, &mut |w: &[f64]| {
            self.layer_gradient(w)
        }))
    }
}

/// Hessian-vector product of the data loss restricted to `layer`'s weights.
pub fn hvp(model: &MlpModel, batch: &Dataset, layer: usize, v: &[f64]) -> Result<Vec<f64>> {
    LayerHessian::new(model, batch, layer)?.apply(v)
}
