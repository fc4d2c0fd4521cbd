mod common;

use common::{separable, trained_toy};
use mpq_core::hessian::{
    exact_trace, exact_trace_of, hutchinson, hutchinson_trace, layer_sensitivities, QuadraticSurrogate,
};
use mpq_core::nn::{train, LayerHessian, MlpModel, TrainConfig};
use mpq_core::{Error, Tensor2D};

fn dense_surrogate() -> QuadraticSurrogate {
    let a = [
        [3.0, 1.0, -0.5, 0.2, 0.0],
        [1.0, 2.0, 0.3, 0.0, -0.7],
        [-0.5, 0.3, 4.0, 1.1, 0.0],
        [0.2, 0.0, 1.1, 1.0, 0.4],
        [0.0, -0.7, 0.0, 0.4, 5.0],
    ];
    QuadraticSurrogate::new(Tensor2D::from_rows(&a.map(|r| r.to_vec())).unwrap()).unwrap()
}

#[test]
fn unbiased_over_independent_seeds() {
    let op = dense_surrogate();
    let est: Vec<f64> = (0..200)
        .map(|s| hutchinson(&op, 5, 1000 + s).unwrap().estimate)
        .collect();
    let n = est.len() as f64;
    let mean = est.iter().sum::<f64>() / n;
    let sd = (est.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(sd > 0.0);
    assert!((mean - op.trace()).abs() < 3.0 * sd / n.sqrt(), "mean {mean}, sd {sd}");

    let diag = QuadraticSurrogate::diagonal(&[1.0, 2.0, 3.0]).unwrap();
    for s in 0..200 {
        assert_eq!(hutchinson(&diag, 3, s).unwrap().estimate, 6.0);
    }
}

#[test]
fn stderr_tracks_spread() {
    let op = dense_surrogate();
    let a = hutchinson(&op, 100, 1).unwrap();
    let b = hutchinson(&op, 10_000, 1).unwrap();
    assert!(b.stderr < a.stderr);
    assert!((b.estimate - op.trace()).abs() < 4.0 * b.stderr);
    assert_eq!(hutchinson(&op, 1, 1).unwrap().stderr, 0.0);
}

#[test]
fn toy_model_agrees_with_exact_trace() {
    let (model, data) = trained_toy(3);
    for layer in 0..2 {
        let exact = exact_trace(&model, &data, layer).unwrap();
        let (est, _) = hutchinson_trace(&model, &data, layer, 2000, 17).unwrap();
        let rel = (est - exact).abs() / exact.abs().max(1e-6);
        assert!(rel < 0.05, "layer {layer}: {est} vs {exact}");
    }
}

#[test]
fn exact_trace_stable_under_epsilon() {
    let (model, data) = trained_toy(4);
    for layer in 0..2 {
        let a = exact_trace_of(&LayerHessian::new(&model, &data, layer).unwrap()).unwrap();
        let b = exact_trace_of(&LayerHessian::new(&model, &data, layer).unwrap().with_epsilon_base(5e-5)).unwrap();
        assert!((a - b).abs() <= 0.01 * a.abs(), "layer {layer}: {a} vs {b}");
    }
}

#[test]
fn saturated_fit_has_flat_curvature() {
    let data = separable(200, 0.5, 9);
    let cfg = TrainConfig {
        learning_rate: 5e-2,
        epochs: 400,
        batch_size: 200,
        ..TrainConfig::default()
    };
    let (model, _) = train(&MlpModel::random(&[4, 3, 2], 9).unwrap(), &data, None, &cfg).unwrap();
    assert!(mpq_core::nn::data_loss(&model, &data).unwrap() < 1e-3);
    for layer in 0..2 {
        let t = exact_trace(&model, &data, layer).unwrap();
        assert!(t.abs() < 1e-2, "layer {layer}: {t}");
    }
}

#[test]
fn sensitivity_ranking_matches_exact() {
    for seed in [3, 5, 8] {
        let (model, data) = trained_toy(seed);
        let report = layer_sensitivities(&model, &data, 2000, 40).unwrap();
        report.validate().unwrap();
        let exact: Vec<f64> = (0..2)
            .map(|l| exact_trace(&model, &data, l).unwrap() / model.layers()[l].weight_count() as f64)
            .collect();
        let m = report.mean_traces();
        assert_eq!(m[0] > m[1], exact[0] > exact[1], "seed {seed}: {m:?} vs {exact:?}");
    }
}

#[test]
fn reports_are_reproducible() {
    let model = MlpModel::zeros(&MlpModel::default_dims()).unwrap();
    let data = mpq_core::data::generate_synthetic(64, 1).unwrap();
    let a = layer_sensitivities(&model, &data, 4, 7).unwrap();
    assert!(a
        .layers
        .iter()
        .all(|l| l.trace.is_finite() && l.seed == 7 + l.layer as u64));
    let b = layer_sensitivities(&model, &data, 4, 7).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

#[test]
fn oracle_guard_refuses_large_layers() {
    let model = MlpModel::zeros(&[16, 400, 5]).unwrap();
    let data = mpq_core::data::generate_synthetic(8, 1).unwrap();
    assert!(matches!(
        exact_trace(&model, &data, 0),
        Err(Error::OracleGuard { params: 6400, .. })
    ));
}
