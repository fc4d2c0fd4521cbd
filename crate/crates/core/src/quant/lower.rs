use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::softmax_in_place;
use crate::quant::dyadic::{to_dyadic, DyadicScale};
use crate::quant::params::{qrange, QuantParams};
use crate::quant::qat::{check_accumulator_bits, QatModel};
use crate::tensor::Tensor2D;

pub const INTEGER_MODEL_FORMAT: &str = "mpq-int-v1";

/// Shift tried first when converting requantization multipliers.
const PREFERRED_SHIFT: u32 = 31;
/// A mantissa below this keeps fewer than 20 significant bits.
const MIN_MANTISSA: i64 = 1 << 19;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight_bits: u32,
    /// Width of the requantized output; `None` for the output layer.
    pub act_bits: Option<u32>,
    /// `S_W`.
    pub weight_scale: f64,
    /// `S_h` of this layer's input.
    pub input_scale: f64,
    /// `S_a` of this layer's output; `None` for the output layer.
    pub act_scale: Option<f64>,
    /// `fan_in × fan_out`, row-major.
    pub weights: Vec<i64>,
    pub bias: Vec<i128>,
    /// Dyadic form of `S_W·S_h/S_a`; `None` for the output layer.
    pub requant: Option<DyadicScale>,
}

impl IntLayer {
    /// Accumulator width required by `b_W + b_in + ceil(log2 n)`.
    pub fn required_bits(&self, input_bits: u32) -> u32 {
        self.weight_bits + input_bits + ceil_log2(self.fan_in)
    }
}

/// Integer-only network: input quantizer, per-layer integer weights and
/// biases, dyadic requantization between layers and one real output scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntegerModel {
    pub format: String,
    pub input: QuantParams,
    pub accumulator_bits: u32,
    pub layers: Vec<IntLayer>,
    /// `S_W·S_h` of the output layer; `logits = output_scale·q_logits`.
    pub output_scale: f64,
}

/// Arithmetic performed by one call of [`IntegerModel::int_forward_instrumented`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpTally {
    pub real_input: u64,
    pub int_mul: u64,
    pub int_add: u64,
    pub int_cmp: u64,
    pub int_shift: u64,
    /// Real-valued operations between input quantization and output
    /// dequantization.
    pub real_core: u64,
    pub real_output: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntForward {
    /// Output-layer accumulators (`rows × classes`, row-major).
    pub q_logits: Vec<i128>,
    pub logits: Tensor2D,
    pub probs: Tensor2D,
}

pub(crate) fn ceil_log2(n: usize) -> u32 {
    if n <= 1 {
        0
    } else {
        usize::BITS - (n - 1).leading_zeros()
    }
}

fn requant_scale(m: f64) -> Result<DyadicScale> {
    let d = to_dyadic(m, PREFERRED_SHIFT)?;
    if d.mantissa.abs() >= MIN_MANTISSA {
        return Ok(d);
    }
    to_dyadic(m, crate::quant::dyadic::MAX_DYADIC_SHIFT)
}

/// Lowers a fake-quantized model to integer arithmetic.
pub fn lower(q: &QatModel) -> Result<IntegerModel> {
    let schema = q.schema();
    let last = q.num_layers() - 1;
    let mut layers = Vec::with_capacity(q.num_layers());
    let mut output_scale = 0.0;
    for l in 0..=last {
        let layer = &q.float_model().layers()[l];
        let wp = q.weight_params(l)?;
        let s_h = q.input_scale(l)?;
        let (act_bits, act_scale, requant) = if l < last {
            let ap = q.act_params(l)?;
            let m = wp.scale * s_h / ap.scale;
            (Some(ap.bits), Some(ap.scale), Some(requant_scale(m)?))
        } else {
            output_scale = wp.scale * s_h;
            (None, None, None)
        };
        layers.push(IntLayer {
            fan_in: layer.fan_in(),
            fan_out: layer.fan_out(),
            weight_bits: schema.weight_bits[l],
            act_bits,
            weight_scale: wp.scale,
            input_scale: s_h,
            act_scale,
            weights: q.weight_codes(l)?,
            bias: q.bias_codes(l)?,
            requant,
        });
    }
    let im = IntegerModel {
        format: INTEGER_MODEL_FORMAT.to_string(),
        input: *q.input_params(),
        accumulator_bits: q.accumulator_bits(),
        layers,
        output_scale,
    };
    im.verify()?;
    Ok(im)
}

impl IntegerModel {
    pub fn input_width(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_width(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out
    }

    /// Width and signedness of the codes entering layer `l`.
    pub fn layer_input_range(&self, l: usize) -> (u32, i64, i64) {
        if l == 0 {
            let (lo, hi) = qrange(self.input.bits, self.input.signed);
            (self.input.bits, lo, hi)
        } else {
            let b = self.layers[l - 1].act_bits.unwrap_or(self.accumulator_bits);
            (b, 0, qrange(b, false).1)
        }
    }

    /// Checks every structural invariant, including the accumulator-width
    /// bound and a concrete worst-case accumulator magnitude per layer.
    pub fn verify(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidIntegerModel(msg));
        if self.format != INTEGER_MODEL_FORMAT {
            return bad(format!("unknown format {:?}", self.format));
        }
        check_accumulator_bits(self.accumulator_bits)?;
        self.input.validate()?;
        if !self.input.symmetric {
            return bad("input quantizer must be symmetric (Z = 0)".into());
        }
        if self.layers.is_empty() {
            return bad("no layers".into());
        }
        if !(self.output_scale > 0.0 && self.output_scale.is_finite()) {
            return bad("output scale must be finite and > 0".into());
        }
        let last = self.layers.len() - 1;
        let acc_lim = (1i128 << (self.accumulator_bits - 1)) - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            if l > 0 && layer.fan_in != self.layers[l - 1].fan_out {
                return bad(format!("layer {l}: fan-in {} does not chain", layer.fan_in));
            }
            if layer.weights.len() != layer.fan_in * layer.fan_out || layer.bias.len() != layer.fan_out {
                return bad(format!("layer {l}: weight or bias length mismatch"));
            }
            crate::quant::params::check_bits(layer.weight_bits)?;
            let (wlo, whi) = qrange(layer.weight_bits, true);
            if layer.weights.iter().any(|&w| w < wlo || w > whi) {
                return bad(format!(
                    "layer {l}: weight code outside {}-bit range",
                    layer.weight_bits
                ));
            }
            if layer.bias.iter().any(|b| b.abs() > acc_lim) {
                return bad(format!("layer {l}: bias code outside accumulator range"));
            }
            match (l == last, layer.requant, layer.act_bits) {
                (true, None, None) => {}
                (false, Some(d), Some(b)) => {
                    crate::quant::params::check_bits(b)?;
                    if !d.is_canonical() || d.mantissa < 0 {
                        return bad(format!("layer {l}: requantization scale {d:?} is not canonical"));
                    }
                }
                _ => {
                    return bad(format!(
                        "layer {l}: requantization must be present exactly on hidden layers"
                    ))
                }
            }
            let (in_bits, in_lo, in_hi) = self.layer_input_range(l);
            let needed = layer.required_bits(in_bits);
            if needed > self.accumulator_bits {
                return Err(Error::Overflow {
                    layer: l,
                    needed,
                    available: self.accumulator_bits,
                });
            }
            let in_max = in_lo.unsigned_abs().max(in_hi.unsigned_abs()) as i128;
            for j in 0..layer.fan_out {
                let col: i128 = (0..layer.fan_in)
                    .map(|i| layer.weights[i * layer.fan_out + j].unsigned_abs() as i128)
                    .sum();
                if col * in_max + layer.bias[j].abs() > acc_lim {
                    return Err(Error::Overflow {
                        layer: l,
                        needed: needed.max(self.accumulator_bits + 1),
                        available: self.accumulator_bits,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Parses and re-verifies a serialized model.
    pub fn from_json(text: &str) -> Result<Self> {
        let im: Self = serde_json::from_str(text)?;
        im.verify()?;
        Ok(im)
    }

    /// Input quantization at the declared input width.
    pub fn quantize_input(&self, x: &Tensor2D) -> Result<Vec<i64>> {
        if x.cols() != self.input_width() {
            return Err(Error::shape(format!(
                "input has {} features, model expects {}",
                x.cols(),
                self.input_width()
            )));
        }
        if x.data().iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("non-finite input"));
        }
        Ok(x.data().iter().map(|&v| self.input.quantize(v)).collect())
    }

    /// Integer pipeline from input codes to output accumulators. Takes and
    /// returns integers only.
    pub fn integer_core(&self, qx: &[i64], rows: usize, tally: &mut OpTally) -> Result<Vec<i128>> {
        let last = self.layers.len() - 1;
        let mut h: Vec<i128> = qx.iter().map(|&v| v as i128).collect();
        for (l, layer) in self.layers.iter().enumerate() {
            let (n, m) = (layer.fan_in, layer.fan_out);
            let mut out = vec![0i128; rows * m];
            for r in 0..rows {
                let hr = &h[r * n..(r + 1) * n];
                let orow = &mut out[r * m..(r + 1) * m];
                orow.copy_from_slice(&layer.bias);
                for (i, &hv) in hr.iter().enumerate() {
                    let wrow = &layer.weights[i * m..(i + 1) * m];
                    for (o, &w) in orow.iter_mut().zip(wrow) {
                        *o += hv * w as i128;
                    }
                }
                tally.int_mul += (n * m) as u64;
                tally.int_add += (n * m) as u64;
                if l < last {
                    let d = layer.requant.expect("verified hidden layer");
                    let qmax = qrange(layer.act_bits.expect("verified hidden layer"), false).1 as i128;
                    for o in orow.iter_mut() {
                        let acc = (*o).max(0);
                        let q = d.requantize(acc).ok_or(Error::Overflow {
                            layer: l,
                            needed: 128,
                            available: 127,
                        })?;
                        *o = q.min(qmax);
                    }
                    tally.int_cmp += 2 * m as u64;
                    tally.int_mul += m as u64;
                    tally.int_add += m as u64;
                    tally.int_shift += m as u64;
                }
            }
            h = out;
        }
        Ok(h)
    }

    pub fn int_forward(&self, x: &Tensor2D) -> Result<IntForward> {
        self.int_forward_instrumented(x).map(|(f, _)| f)
    }

    /// [`int_forward`](Self::int_forward) with an operation count per stage.
    pub fn int_forward_instrumented(&self, x: &Tensor2D) -> Result<(IntForward, OpTally)> {
        let mut tally = OpTally::default();
        let qx = self.quantize_input(x)?;
        tally.real_input += 2 * qx.len() as u64;
        let q_logits = self.integer_core(&qx, x.rows(), &mut tally)?;
        let classes = self.output_width();
        let logits: Vec<f64> = q_logits.iter().map(|&a| self.output_scale * a as f64).collect();
        let mut probs = logits.clone();
        for row in probs.chunks_mut(classes) {
            softmax_in_place(row);
        }
        tally.real_output += 4 * logits.len() as u64;
        Ok((
            IntForward {
                q_logits,
                logits: Tensor2D::from_vec(x.rows(), classes, logits)?,
                probs: Tensor2D::from_vec(x.rows(), classes, probs)?,
            },
            tally,
        ))
    }

    pub fn predict(&self, x: &Tensor2D) -> Result<Vec<usize>> {
        let classes = self.output_width();
        let f = self.int_forward(x)?;
        Ok(f.q_logits.chunks(classes).map(argmax_int).collect())
    }

    pub fn accuracy(&self, data: &crate::data::Dataset) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::domain("accuracy of an empty dataset"));
        }
        Ok(crate::nn::match_fraction(&self.predict(&data.features)?, &data.labels))
    }
}

fn argmax_int(row: &[i128]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate() {
        if *v > row[best] {
            best = i;
        }
    }
    best
}
