//! Heuristic FPGA resource estimate (LUT/FF/DSP) for a fully unrolled
//! dense network.
//!
//! Every nonzero weight gets one multiplier. A multiplier whose wider
//! operand reaches `dsp_threshold` bits maps to a DSP slice; narrower ones
//! are built from LUTs at `lut_per_bit_pair·b_W·b_a`. Each multiplier also
//! feeds an adder tree charged at `lut_per_adder_bit` per accumulator bit,
//! and each output neuron registers its accumulator.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::alloc::ArchSpec;
use crate::error::{Error, Result};
use crate::quant::{ceil_log2, QuantSchema};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorCoeffs {
    pub dsp_threshold: u32,
    pub lut_per_bit_pair: f64,
    pub lut_per_adder_bit: f64,
    pub ff_per_acc_bit: f64,
    pub softmax_lut: f64,
    pub softmax_ff: f64,
}

impl Default for EstimatorCoeffs {
    fn default() -> Self {
        Self {
            dsp_threshold: 11,
            lut_per_bit_pair: 0.5,
            lut_per_adder_bit: 1.0,
            ff_per_acc_bit: 1.0,
            softmax_lut: 2000.0,
            softmax_ff: 1000.0,
        }
    }
}

impl EstimatorCoeffs {
    pub fn validate(&self) -> Result<()> {
        if self.dsp_threshold < 2 {
            return Err(Error::domain("DSP threshold must be >= 2"));
        }
        let c = [
            self.lut_per_bit_pair,
            self.lut_per_adder_bit,
            self.ff_per_acc_bit,
            self.softmax_lut,
            self.softmax_ff,
        ];
        if c.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::domain("estimator coefficients must be finite and >= 0"));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        c.validate()?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerResources {
    pub layer: usize,
    /// Nonzero multipliers `n·m·(1−f_p)`, rounded.
    pub mults: u64,
    pub uses_dsp: bool,
    pub accumulator_bits: u32,
    pub dsp: u64,
    pub lut_mult: u64,
    pub lut_add: u64,
    pub ff: u64,
}

impl LayerResources {
    pub fn lut(&self) -> u64 {
        self.lut_mult + self.lut_add
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceEstimate {
    pub lut: u64,
    pub ff: u64,
    pub dsp: u64,
    pub overhead_lut: u64,
    pub overhead_ff: u64,
    pub layers: Vec<LayerResources>,
}

/// Per-layer and total resources; the activation width of a layer is the
/// width of its input, as in the BOPs model.
pub fn estimate(arch: &ArchSpec, schema: &QuantSchema, coeffs: &EstimatorCoeffs) -> Result<ResourceEstimate> {
    arch.validate()?;
    coeffs.validate()?;
    schema.check_layers(arch.layers())?;
    let mut layers = Vec::with_capacity(arch.layers());
    for (l, (&(n, m), &f)) in arch.dims.iter().zip(&arch.sparsity).enumerate() {
        let (bw, ba) = (schema.weight_bits[l], schema.input_act_bits(l));
        let mults = ((n * m) as f64 * (1.0 - f)).round() as u64;
        let uses_dsp = bw.max(ba) >= coeffs.dsp_threshold;
        let acc = bw + ba + ceil_log2(n);
        let lut_mult = if uses_dsp {
            0
        } else {
            (coeffs.lut_per_bit_pair * (bw * ba) as f64 * mults as f64).round() as u64
        };
        layers.push(LayerResources {
            layer: l,
            mults,
            uses_dsp,
            accumulator_bits: acc,
            dsp: if uses_dsp { mults } else { 0 },
            lut_mult,
            lut_add: (coeffs.lut_per_adder_bit * acc as f64 * mults as f64).round() as u64,
            ff: (coeffs.ff_per_acc_bit * acc as f64 * m as f64).round() as u64,
        });
    }
    let overhead_lut = coeffs.softmax_lut.round() as u64;
    let overhead_ff = coeffs.softmax_ff.round() as u64;
    Ok(ResourceEstimate {
        lut: layers.iter().map(LayerResources::lut).sum::<u64>() + overhead_lut,
        ff: layers.iter().map(|r| r.ff).sum::<u64>() + overhead_ff,
        dsp: layers.iter().map(|r| r.dsp).sum(),
        overhead_lut,
        overhead_ff,
        layers,
    })
}

impl ResourceEstimate {
    /// Per-layer table plus a `total` row.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        w.write_record([
            "layer",
            "mults",
            "uses_dsp",
            "accumulator_bits",
            "dsp",
            "lut_mult",
            "lut_add",
            "lut",
            "ff",
        ])
        .map_err(io)?;
        for r in &self.layers {
            w.write_record([
                r.layer.to_string(),
                r.mults.to_string(),
                r.uses_dsp.to_string(),
                r.accumulator_bits.to_string(),
                r.dsp.to_string(),
                r.lut_mult.to_string(),
                r.lut_add.to_string(),
                r.lut().to_string(),
                r.ff.to_string(),
            ])
            .map_err(io)?;
        }
        w.write_record([
            "total".to_string(),
            self.layers.iter().map(|r| r.mults).sum::<u64>().to_string(),
            String::new(),
            String::new(),
            self.dsp.to_string(),
            String::new(),
            String::new(),
            self.lut.to_string(),
            self.ff.to_string(),
        ])
        .map_err(io)?;
        w.flush()?;
        Ok(())
    }
}
