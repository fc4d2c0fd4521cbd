use crate::error::{Error, Result};
use crate::quant::{calibrate, QuantSchema};

/// `‖Q(W) − W‖²` with a symmetric per-tensor quantizer calibrated on `W`.
pub fn perturbation(weights: &[f64], bits: u32) -> Result<f64> {
    let p = calibrate(weights, bits, true)?;
    Ok(weights.iter().map(|&w| (p.fake(w) - w).powi(2)).sum())
}

/// `Ω = Σ_i trace̅_i · ‖Q(W_i) − W_i‖²` at the schema's weight widths.
pub fn omega(traces: &[f64], weights: &[Vec<f64>], schema: &QuantSchema) -> Result<f64> {
    if traces.len() != weights.len() || traces.len() != schema.layers() {
        return Err(Error::shape(format!(
            "{} traces, {} weight tensors, {} schema layers",
            traces.len(),
            weights.len(),
            schema.layers()
        )));
    }
    let mut total = 0.0;
    for ((t, w), &b) in traces.iter().zip(weights).zip(&schema.weight_bits) {
        total += t * perturbation(w, b)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thirty_two_bits_negligible() {
        let w: Vec<f64> = (0..200).map(|i| ((i * 37) % 101) as f64 / 50.0 - 1.0).collect();
        assert!(perturbation(&w, 32).unwrap() < 1e-10);
    }

    #[test]
    fn grid_weights_only_pay_for_the_range_end() {
        // With S = 2β/15 the grid q·S never contains β itself, so only the
        // extreme weight is perturbed (by β/15).
        let beta = 1.5;
        let s = 2.0 * beta / 15.0;
        let mut w: Vec<f64> = (-7..=7).map(|q| q as f64 * s).collect();
        w.push(beta);
        let got = perturbation(&w, 4).unwrap();
        assert!((got - (beta / 15.0).powi(2)).abs() < 1e-15);
        assert_eq!(perturbation(&[0.0; 8], 4).unwrap(), 0.0);
    }

    #[test]
    fn zero_traces_zero_omega() {
        let s = QuantSchema::homogeneous(4, 2, 16).unwrap();
        let w = vec![vec![0.3, -0.2], vec![0.9]];
        assert_eq!(omega(&[0.0, 0.0], &w, &s).unwrap(), 0.0);
        assert!(omega(&[0.0], &w, &s).is_err());
    }
}
