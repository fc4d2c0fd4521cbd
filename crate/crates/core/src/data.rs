//! Datasets: synthetic generation, CSV ingestion, splitting and standardization.
//!
//! The synthetic corpus is a 5-class, 16-feature Gaussian mixture. Every class
//! has two equally likely components with unit covariance, placed at
//! `base_c ± offset_c` where
//!
//! ```text
//! base_c[j]   = 0.40 · cos(2π (c+1)(j+1) / 17 + 0.5 c)
//! offset_c[j] = 0.75 · sin(2π (c+2)(j+1) / 13 + 1.3 c)
//! ```
//!
//! for class `c ∈ 0..5` and feature `j ∈ 0..16`. The two-component layout
//! makes the Bayes boundary nonlinear (Bayes accuracy ≈ 0.79, nearest-class-mean
//! ≈ 0.48), so hidden layers and their precision matter.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor2D;

pub const NUM_FEATURES: usize = 16;
pub const NUM_CLASSES: usize = 5;

const BASE_AMPLITUDE: f64 = 0.40;
const OFFSET_AMPLITUDE: f64 = 0.75;

/// Per-feature mean and standard deviation fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(features: &Tensor2D) -> Result<Self> {
        let n = features.rows();
        if n == 0 {
            return Err(Error::domain("cannot fit standardization on an empty set"));
        }
        let d = features.cols();
        let mut mean = vec![0.0; d];
        for r in 0..n {
            for (m, v) in mean.iter_mut().zip(features.row(r)) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in 0..n {
            for ((s, v), m) in var.iter_mut().zip(features.row(r)).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        // Constant columns keep unit scale instead of dividing by zero.
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n as f64).sqrt();
                if sd > 1e-12 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, std })
    }

    pub fn apply(&self, features: &Tensor2D) -> Result<Tensor2D> {
        self.check(features)?;
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn invert(&self, features: &Tensor2D) -> Result<Tensor2D> {
        self.check(features)?;
        let mut out = features.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.mean).zip(&self.std) {
                *v = *v * s + m;
            }
        }
        Ok(out)
    }

    fn check(&self, features: &Tensor2D) -> Result<()> {
        if features.cols() != self.mean.len() {
            return Err(Error::shape(format!(
                "standardizer fitted on {} features, got {}",
                self.mean.len(),
                features.cols()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub features: Tensor2D,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    /// Statistics used to standardize `features`, if they have been standardized.
    pub standardizer: Option<Standardizer>,
}

impl Dataset {
    pub fn new(features: Tensor2D, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::shape(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::domain(format!("label {bad} outside 0..{num_classes}")));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            standardizer: None,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_features(&self) -> usize {
        self.features.cols()
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            features: self.features.select_rows(idx),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            num_classes: self.num_classes,
            standardizer: self.standardizer.clone(),
        }
    }

    /// First `n` rows (or all if fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Deterministic shuffled split into `(first, second)` with
    /// `round(fraction · N)` rows in the first part.
    pub fn split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::domain(format!("split fraction {fraction} outside [0, 1]")));
        }
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let cut = (fraction * self.len() as f64).round() as usize;
        Ok((self.subset(&idx[..cut]), self.subset(&idx[cut..])))
    }

    /// Fits standardization on `self` and applies it.
    pub fn standardize(&self) -> Result<Dataset> {
        let st = Standardizer::fit(&self.features)?;
        self.standardize_with(&st)
    }

    pub fn standardize_with(&self, st: &Standardizer) -> Result<Dataset> {
        Ok(Dataset {
            features: st.apply(&self.features)?,
            labels: self.labels.clone(),
            num_classes: self.num_classes,
            standardizer: Some(st.clone()),
        })
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut h = vec![0; self.num_classes];
        for &l in &self.labels {
            h[l] += 1;
        }
        h
    }

    /// Writes the raw 17-column CSV form (16 features + label), no header.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::WriterBuilder::new()
            .has_headers(false)
            .from_path(path)
            .map_err(csv_io)?;
        for r in 0..self.len() {
            let mut rec: Vec<String> = self.features.row(r).iter().map(|v| format!("{v:?}")).collect();
            rec.push(self.labels[r].to_string());
            w.write_record(&rec).map_err(csv_io)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

/// Component means of the synthetic mixture, indexed `[class][component][feature]`.
pub fn synthetic_component_means() -> [[[f64; NUM_FEATURES]; 2]; NUM_CLASSES] {
    use std::f64::consts::PI;
    let mut out = [[[0.0; NUM_FEATURES]; 2]; NUM_CLASSES];
    for (c, comps) in out.iter_mut().enumerate() {
        let cf = c as f64;
        let [plus, minus] = comps;
        for (j, (p, m)) in plus.iter_mut().zip(minus.iter_mut()).enumerate() {
            let jf = (j + 1) as f64;
            let base = BASE_AMPLITUDE * (2.0 * PI * (cf + 1.0) * jf / 17.0 + 0.5 * cf).cos();
            let off = OFFSET_AMPLITUDE * (2.0 * PI * (cf + 2.0) * jf / 13.0 + 1.3 * cf).sin();
            *p = base + off;
            *m = base - off;
        }
    }
    out
}

/// Generates `n` rows of the synthetic mixture. Row `i` has label `i mod 5`,
/// so class counts differ by at most one.
pub fn generate_synthetic(n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::domain("synthetic dataset needs n >= 1"));
    }
    let means = synthetic_component_means();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * NUM_FEATURES);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % NUM_CLASSES;
        let comp = usize::from(rng.gen_bool(0.5));
        for &mu in &means[class][comp] {
            let z: f64 = rng.sample(StandardNormal);
            data.push(mu + z);
        }
        labels.push(class);
    }
    Dataset::new(Tensor2D::from_vec(n, NUM_FEATURES, data)?, labels, NUM_CLASSES)
}

/// Reads a 17-column CSV (16 reals then an integer label in `0..5`).
/// A non-numeric first row is treated as a header.
pub fn ingest_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())
        .map_err(csv_io)?;
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 1;
        let rec = rec.map_err(|e| Error::Parse {
            line,
            msg: e.to_string(),
        })?;
        if rec.iter().all(str::is_empty) {
            continue;
        }
        if line == 1 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
            continue;
        }
        if rec.len() != NUM_FEATURES + 1 {
            return Err(Error::Schema {
                line,
                msg: format!("expected {} columns, found {}", NUM_FEATURES + 1, rec.len()),
            });
        }
        for (col, field) in rec.iter().take(NUM_FEATURES).enumerate() {
            let v: f64 = field.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("column {}: '{field}' is not a real number", col + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    msg: format!("column {}: non-finite value", col + 1),
                });
            }
            data.push(v);
        }
        let raw = &rec[NUM_FEATURES];
        let label: i64 = raw.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("label '{raw}' is not an integer"),
        })?;
        if !(0..NUM_CLASSES as i64).contains(&label) {
            return Err(Error::Schema {
                line,
                msg: format!("label {label} outside 0..{NUM_CLASSES}"),
            });
        }
        labels.push(label as usize);
    }
    let n = labels.len();
    Dataset::new(Tensor2D::from_vec(n, NUM_FEATURES, data)?, labels, NUM_CLASSES)
}
