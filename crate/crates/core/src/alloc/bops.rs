use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::quant::QuantSchema;

/// Bit operations of one dense layer:
/// `m·n·((1−f_p)·b_a·b_W + b_a + b_W + log2 n)`.
pub fn layer_bops(n: usize, m: usize, b_a: u32, b_w: u32, f_p: f64) -> Result<f64> {
    if n == 0 || m == 0 {
        return Err(Error::domain("layer dimensions must be >= 1"));
    }
    if b_a == 0 || b_w == 0 {
        return Err(Error::domain("bit widths must be >= 1"));
    }
    if !(0.0..=1.0).contains(&f_p) {
        return Err(Error::domain(format!("sparsity {f_p} outside [0, 1]")));
    }
    let log2n = if n.is_power_of_two() {
        n.trailing_zeros() as f64
    } else {
        (n as f64).log2()
    };
    let (a, w) = (b_a as f64, b_w as f64);
    Ok((m * n) as f64 * ((1.0 - f_p) * a * w + a + w + log2n))
}

/// Layer dimensions and per-layer sparsity. The input activation width comes
/// from the [`QuantSchema`] being costed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchSpec {
    /// `(fan_in, fan_out)` per layer.
    pub dims: Vec<(usize, usize)>,
    pub sparsity: Vec<f64>,
}

impl ArchSpec {
    pub fn new(dims: Vec<(usize, usize)>, sparsity: Vec<f64>) -> Result<Self> {
        let a = Self { dims, sparsity };
        a.validate()?;
        Ok(a)
    }

    /// Dense architecture from a width list such as `[16, 64, 32, 32, 5]`.
    pub fn from_widths(widths: &[usize]) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::shape("need at least input and output widths"));
        }
        let dims: Vec<_> = widths.windows(2).map(|w| (w[0], w[1])).collect();
        let n = dims.len();
        Self::new(dims, vec![0.0; n])
    }

    pub fn from_model(model: &MlpModel, sparsity: Vec<f64>) -> Result<Self> {
        Self::new(
            model.layers().iter().map(|l| (l.fan_in(), l.fan_out())).collect(),
            sparsity,
        )
    }

    pub fn with_sparsity(mut self, sparsity: Vec<f64>) -> Result<Self> {
        self.sparsity = sparsity;
        self.validate()?;
        Ok(self)
    }

    pub fn layers(&self) -> usize {
        self.dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() {
            return Err(Error::shape("architecture has no layers"));
        }
        if self.dims.len() != self.sparsity.len() {
            return Err(Error::shape(format!(
                "{} layers but {} sparsity entries",
                self.dims.len(),
                self.sparsity.len()
            )));
        }
        for (i, w) in self.dims.windows(2).enumerate() {
            if w[0].1 != w[1].0 {
                return Err(Error::shape(format!(
                    "layer {} output {} ≠ layer {} input {}",
                    i,
                    w[0].1,
                    i + 1,
                    w[1].0
                )));
            }
        }
        if self.dims.iter().any(|&(n, m)| n == 0 || m == 0) {
            return Err(Error::shape("layer dimensions must be >= 1"));
        }
        if let Some(f) = self.sparsity.iter().find(|f| !(0.0..=1.0).contains(*f)) {
            return Err(Error::domain(format!("sparsity {f} outside [0, 1]")));
        }
        Ok(())
    }
}

/// Sum of [`layer_bops`]; layer 0 reads `schema.input_bits`, layer `l`
/// reads the activation width of layer `l−1`.
pub fn model_bops(arch: &ArchSpec, schema: &QuantSchema) -> Result<f64> {
    arch.validate()?;
    schema.check_layers(arch.layers())?;
    let mut total = 0.0;
    for (l, (&(n, m), &f)) in arch.dims.iter().zip(&arch.sparsity).enumerate() {
        total += layer_bops(n, m, schema.input_act_bits(l), schema.weight_bits[l], f)?;
    }
    Ok(total)
}
