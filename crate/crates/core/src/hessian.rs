//! Hutchinson trace estimation of layer-restricted Hessians.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::{LayerHessian, MlpModel};
use crate::tensor::Tensor2D;

/// Largest dimension [`exact_trace`] accepts.
pub const EXACT_TRACE_LIMIT: usize = 5000;
/// Rows used for trace evaluation.
pub const CALIBRATION_ROWS: usize = 1024;

/// A symmetric linear operator known only through matrix-vector products.
pub trait HessianOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, v: &[f64]) -> Result<Vec<f64>>;
}

impl HessianOperator for LayerHessian<'_> {
    fn dim(&self) -> usize {
        LayerHessian::dim(self)
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        LayerHessian::apply(self, v)
    }
}

/// Explicit matrix operator, the Hessian of `½ θᵀAθ`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSurrogate {
    a: Tensor2D,
}

impl QuadraticSurrogate {
    pub fn new(a: Tensor2D) -> Result<Self> {
        if a.rows() != a.cols() || a.rows() == 0 {
            return Err(Error::shape(format!(
                "surrogate matrix must be square, got {}×{}",
                a.rows(),
                a.cols()
            )));
        }
        Ok(Self { a })
    }

    pub fn diagonal(diag: &[f64]) -> Result<Self> {
        let d = diag.len();
        let mut a = Tensor2D::zeros(d, d);
        for (i, &v) in diag.iter().enumerate() {
            a.set(i, i, v);
        }
        Self::new(a)
    }

    pub fn identity(d: usize) -> Result<Self> {
        Self::diagonal(&vec![1.0; d])
    }

    pub fn trace(&self) -> f64 {
        (0..self.a.rows()).map(|i| self.a.get(i, i)).sum()
    }
}

impl HessianOperator for QuadraticSurrogate {
    fn dim(&self) -> usize {
        self.a.rows()
    }

    fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.dim() {
            return Err(Error::shape(format!(
                "vector has {} entries, operator has dimension {}",
                v.len(),
                self.dim()
            )));
        }
        Ok((0..self.dim())
            .map(|i| self.a.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEstimate {
    pub estimate: f64,
    /// Sample standard deviation over `√k`; 0 when `k = 1`.
    pub stderr: f64,
    pub k: usize,
    pub seed: u64,
}

fn rademacher(d: usize, seed: u64, sample: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(sample as u64);
    (0..d).map(|_| if rng.gen::<bool>() { 1.0 } else { -1.0 }).collect()
}

/// `(1/k)·Σ zᵢᵀHzᵢ` over seeded Rademacher probes. Sample `i` draws from
/// ChaCha stream `i`, so the result does not depend on thread scheduling.
pub fn hutchinson<H: HessianOperator + ?Sized>(op: &H, k: usize, seed: u64) -> Result<TraceEstimate> {
    if k == 0 {
        return Err(Error::domain("Hutchinson needs k >= 1"));
    }
    let d = op.dim();
    let samples: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|i| {
            let z = rademacher(d, seed, i);
            let hz = op.apply(&z)?;
            Ok(z.iter().zip(&hz).map(|(a, b)| a * b).sum())
        })
        .collect::<Result<_>>()?;
    let mean = samples.iter().sum::<f64>() / k as f64;
    let stderr = if k > 1 {
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (k - 1) as f64;
        (var / k as f64).sqrt()
    } else {
        0.0
    };
    Ok(TraceEstimate {
        estimate: mean,
        stderr,
        k,
        seed,
    })
}

/// `Σᵢ eᵢᵀHeᵢ` via `d` basis-vector products.
pub fn exact_trace_of<H: HessianOperator + ?Sized>(op: &H) -> Result<f64> {
    let d = op.dim();
    if d > EXACT_TRACE_LIMIT {
        return Err(Error::OracleGuard {
            params: d,
            limit: EXACT_TRACE_LIMIT,
        });
    }
    let diag: Vec<f64> = (0..d)
        .into_par_iter()
        .map(|i| {
            let mut e = vec![0.0; d];
            e[i] = 1.0;
            Ok(op.apply(&e)?[i])
        })
        .collect::<Result<_>>()?;
    Ok(diag.iter().sum())
}

/// Hutchinson estimate of the data-loss Hessian trace of `layer`'s weights.
pub fn hutchinson_trace(model: &MlpModel, batch: &Dataset, layer: usize, k: usize, seed: u64) -> Result<(f64, f64)> {
    let op = LayerHessian::new(model, batch, layer)?;
    let t = hutchinson(&op, k, seed)?;
    Ok((t.estimate, t.stderr))
}

pub fn exact_trace(model: &MlpModel, batch: &Dataset, layer: usize) -> Result<f64> {
    if layer < model.num_layers() && model.layers()[layer].weight_count() > EXACT_TRACE_LIMIT {
        return Err(Error::OracleGuard {
            params: model.layers()[layer].weight_count(),
            limit: EXACT_TRACE_LIMIT,
        });
    }
    exact_trace_of(&LayerHessian::new(model, batch, layer)?)
}

/// The first [`CALIBRATION_ROWS`] rows (or all of them).
pub fn calibration_batch(data: &Dataset) -> Dataset {
    data.head(CALIBRATION_ROWS.min(data.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub layer: usize,
    /// Number of weights `d`.
    pub params: usize,
    /// Raw trace estimate.
    pub trace: f64,
    pub stderr: f64,
    /// `trace / d`.
    pub mean_trace: f64,
    pub k: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceReport {
    pub batch_id: String,
    pub batch_rows: usize,
    pub layers: Vec<LayerTrace>,
}

impl TraceReport {
    pub fn mean_traces(&self) -> Vec<f64> {
        self.layers.iter().map(|l| l.mean_trace).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.layer != i {
                return Err(Error::domain(format!(
                    "trace report entry {i} is for layer {}",
                    l.layer
                )));
            }
            if l.k == 0 || l.stderr.is_nan() || l.stderr < 0.0 || !l.trace.is_finite() || l.params == 0 {
                return Err(Error::domain(format!("trace report entry {i} is malformed")));
            }
        }
        Ok(())
    }
}

/// Per-layer average Hessian trace. Layer `l` uses seed `seed + l`.
pub fn layer_sensitivities(model: &MlpModel, batch: &Dataset, k: usize, seed: u64) -> Result<TraceReport> {
    let mut layers = Vec::with_capacity(model.num_layers());
    for l in 0..model.num_layers() {
        let s = seed.wrapping_add(l as u64);
        let op = LayerHessian::new(model, batch, l)?;
        let t = hutchinson(&op, k, s)?;
        let d = op.dim();
        layers.push(LayerTrace {
            layer: l,
            params: d,
            trace: t.estimate,
            stderr: t.stderr,
            mean_trace: t.estimate / d as f64,
            k,
            seed: s,
        });
    }
    Ok(TraceReport {
        batch_id: format!("rows:{}", batch.len()),
        batch_rows: batch.len(),
        layers,
    })
}
