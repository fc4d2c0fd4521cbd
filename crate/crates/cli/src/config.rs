use std::path::{Path, PathBuf};

use mpq_core::alloc::{SolveMethod, SweepSample, DEFAULT_CANDIDATES};
use mpq_core::hwest::EstimatorCoeffs;
use mpq_core::nn::{MlpModel, TrainConfig};
use mpq_core::quant::{QatConfig, QuantSchema, DEFAULT_ACT_OFFSET, DEFAULT_INPUT_BITS};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, CliError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum DataSource {
    Synthetic { rows: usize },
    Csv { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HessianSettings {
    /// Hutchinson probes per layer.
    pub k: usize,
}

impl Default for HessianSettings {
    fn default() -> Self {
        Self { k: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AllocationSettings {
    pub candidates: Vec<u32>,
    /// BOPs budget; `None` means unbounded.
    pub budget: Option<f64>,
    pub act_offset: u32,
    pub input_bits: u32,
    pub method: SolveMethod,
}

impl Default for AllocationSettings {
    fn default() -> Self {
        Self {
            candidates: DEFAULT_CANDIDATES.to_vec(),
            budget: None,
            act_offset: DEFAULT_ACT_OFFSET,
            input_bits: DEFAULT_INPUT_BITS,
            method: SolveMethod::Auto,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSettings {
    pub qat: QatConfig,
    pub sample: SweepSample,
}

impl Default for SweepSettings {
    fn default() -> Self {
        let mut qat = QatConfig::default();
        qat.train.epochs = 5;
        Self {
            qat,
            sample: SweepSample::All,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataSource,
    /// Fraction of rows held out for validation.
    pub val_fraction: f64,
    pub dims: Vec<usize>,
    pub train: TrainConfig,
    pub hessian: HessianSettings,
    pub allocation: AllocationSettings,
    /// Fixed schema for `quantize`/`estimate`; when absent the schema
    /// comes from `allocation.json`.
    pub schema: Option<QuantSchema>,
    pub qat: QatConfig,
    pub sweep: SweepSettings,
    pub estimator: EstimatorCoeffs,
    /// Graph file `run-ir` evaluates, relative to the output directory.
    pub ir_graph: String,
    /// Root seed; every stochastic step derives its seed from it.
    pub seed: u64,
    pub out: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            data: DataSource::Synthetic { rows: 20_000 },
            val_fraction: 0.2,
            dims: MlpModel::default_dims(),
            train: TrainConfig::default(),
            hessian: HessianSettings::default(),
            allocation: AllocationSettings::default(),
            schema: None,
            qat: QatConfig::default(),
            sweep: SweepSettings::default(),
            estimator: EstimatorCoeffs::default(),
            ir_graph: "graph.json".to_string(),
            seed: 0,
            out: PathBuf::from("mpq-out"),
        }
    }
}

fn bad(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl PipelineConfig {
    /// Reads a config file, or the config embedded in a manifest.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(format!("reading {}", path.display())))?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        let value = match value.get("config") {
            Some(embedded) if value.get("command").is_some() => embedded.clone(),
            _ => value,
        };
        serde_json::from_value(value).map_err(|e| bad(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        match &self.data {
            DataSource::Synthetic { rows } if *rows < 10 => return Err(bad("synthetic data needs at least 10 rows")),
            _ => {}
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(bad("val_fraction must lie in (0, 1)"));
        }
        if self.dims.len() < 2 || self.dims.contains(&0) {
            return Err(bad("dims needs at least two nonzero widths"));
        }
        self.train.validate()?;
        self.qat.validate()?;
        self.sweep.qat.validate()?;
        self.estimator.validate()?;
        if self.hessian.k == 0 {
            return Err(bad("hessian.k must be >= 1"));
        }
        let a = &self.allocation;
        if a.candidates.is_empty() {
            return Err(bad("allocation.candidates is empty"));
        }
        if let Some(b) = a.budget {
            if b.is_nan() || b <= 0.0 {
                return Err(bad("allocation.budget must be > 0"));
            }
        }
        if let Some(s) = &self.schema {
            s.validate()?;
            if s.layers() != self.dims.len() - 1 {
                return Err(bad(format!(
                    "schema has {} layers, dims describe {}",
                    s.layers(),
                    self.dims.len() - 1
                )));
            }
        }
        Ok(())
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }

    pub fn qat_config(&self) -> QatConfig {
        let mut q = self.qat.clone();
        q.train.seed = self.seed;
        q
    }

    /// Canonical JSON; fields serialize in declaration order.
    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }
}
