use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quant::params::check_bits;

pub const DEFAULT_INPUT_BITS: u32 = 16;
pub const DEFAULT_ACT_OFFSET: u32 = 3;

/// Per-layer bit widths. `act_bits[l]` is the width of layer `l`'s output
/// activation; the last entry is carried for bookkeeping but the output
/// layer's logits stay at accumulator precision.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QuantSchema {
    pub weight_bits: Vec<u32>,
    pub act_bits: Vec<u32>,
    #[serde(default = "default_input_bits")]
    pub input_bits: u32,
}

fn default_input_bits() -> u32 {
    DEFAULT_INPUT_BITS
}

impl QuantSchema {
    pub fn new(weight_bits: Vec<u32>, act_bits: Vec<u32>, input_bits: u32) -> Result<Self> {
        let s = Self {
            weight_bits,
            act_bits,
            input_bits,
        };
        s.validate()?;
        Ok(s)
    }

    /// `b_a = b_W + offset` per layer.
    pub fn coupled(weight_bits: &[u32], offset: u32, input_bits: u32) -> Result<Self> {
        let act = weight_bits.iter().map(|b| b + offset).collect();
        Self::new(weight_bits.to_vec(), act, input_bits)
    }

    /// `b_a = b_W + 3`, 16-bit input.
    pub fn with_default_coupling(weight_bits: &[u32]) -> Result<Self> {
        Self::coupled(weight_bits, DEFAULT_ACT_OFFSET, DEFAULT_INPUT_BITS)
    }

    /// Same width for every weight and activation.
    pub fn homogeneous(bits: u32, layers: usize, input_bits: u32) -> Result<Self> {
        Self::new(vec![bits; layers], vec![bits; layers], input_bits)
    }

    pub fn validate(&self) -> Result<()> {
        if self.weight_bits.is_empty() {
            return Err(Error::domain("schema has no layers"));
        }
        if self.weight_bits.len() != self.act_bits.len() {
            return Err(Error::shape(format!(
                "schema has {} weight widths but {} activation widths",
                self.weight_bits.len(),
                self.act_bits.len()
            )));
        }
        check_bits(self.input_bits)?;
        for &b in self.weight_bits.iter().chain(&self.act_bits) {
            check_bits(b)?;
        }
        Ok(())
    }

    pub fn layers(&self) -> usize {
        self.weight_bits.len()
    }

    /// Width of the activation entering layer `l`.
    pub fn input_act_bits(&self, l: usize) -> u32 {
        if l == 0 {
            self.input_bits
        } else {
            self.act_bits[l - 1]
        }
    }

    pub(crate) fn check_layers(&self, layers: usize) -> Result<()> {
        self.validate()?;
        if self.layers() != layers {
            return Err(Error::shape(format!(
                "schema has {} layers, model has {layers}",
                self.layers()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_coupling() {
        let s = QuantSchema::with_default_coupling(&[4, 4, 5, 4]).unwrap();
        assert_eq!(s.act_bits, vec![7, 7, 8, 7]);
        assert_eq!(s.input_bits, 16);
        assert_eq!(s.input_act_bits(0), 16);
        assert_eq!(s.input_act_bits(2), 7);
    }

    #[test]
    fn rejects_out_of_range() {
        assert!(QuantSchema::homogeneous(1, 4, 16).is_err());
        assert!(QuantSchema::homogeneous(33, 4, 16).is_err());
        assert!(QuantSchema::with_default_coupling(&[30]).is_err());
        assert!(QuantSchema::new(vec![4, 4], vec![4], 16).is_err());
        assert!(QuantSchema::new(vec![], vec![], 16).is_err());
    }

    #[test]
    fn input_bits_default_on_load() {
        let s: QuantSchema = serde_json::from_str(r#"{"weight_bits":[8],"act_bits":[8]}"#).unwrap();
        assert_eq!(s.input_bits, 16);
    }
}
