//! Shared fixtures for the criterion benches.

use mpq_core::alloc::{AllocationProblem, ArchSpec};
use mpq_core::data::generate_synthetic;
use mpq_core::hessian::{calibration_batch, layer_sensitivities};
use mpq_core::nn::{sparsity, train, MlpModel, TrainConfig, SPARSITY_EPS};
use mpq_core::quant::{lower, IntegerModel, QatModel, QuantSchema};
use mpq_core::Dataset;

pub struct Fixture {
    pub model: MlpModel,
    pub train: Dataset,
    pub calib: Dataset,
}

/// Default architecture trained briefly on 4000 synthetic rows.
pub fn fixture() -> Fixture {
    let data = generate_synthetic(4000, 1).unwrap().standardize().unwrap();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        epochs: 3,
        batch_size: 64,
        seed: 1,
        ..TrainConfig::default()
    };
    let (model, _) = train(
        &MlpModel::random(&MlpModel::default_dims(), 1).unwrap(),
        &data,
        None,
        &cfg,
    )
    .unwrap();
    Fixture {
        model,
        calib: calibration_batch(&data),
        train: data,
    }
}

impl Fixture {
    pub fn problem(&self, budget: f64) -> AllocationProblem {
        let traces = layer_sensitivities(&self.model, &self.calib, 20, 1)
            .unwrap()
            .mean_traces();
        let arch = ArchSpec::from_model(&self.model, sparsity(&self.model, SPARSITY_EPS).unwrap()).unwrap();
        let weights = self.model.layers().iter().map(|l| l.weights.data().to_vec()).collect();
        AllocationProblem::new(arch, traces, weights, budget).unwrap()
    }

    pub fn integer_model(&self, bits: &[u32]) -> IntegerModel {
        let schema = QuantSchema::with_default_coupling(bits).unwrap();
        lower(&QatModel::calibrate(&self.model, &schema, &self.train, 32).unwrap()).unwrap()
    }
}
