mod common;

use common::{bigint_logits, input_codes_oracle, rng};
use mpq_core::data::generate_synthetic;
use mpq_core::nn::{train, BatchNorm, MlpModel, TrainConfig};
use mpq_core::quant::{
    calibrate, fold_bn, lower, populate_bn_stats, qat_train, to_dyadic, DyadicScale, IntegerModel, QatConfig, QatModel,
    QuantParams, QuantSchema, MANTISSA_LIMIT,
};
use mpq_core::{Dataset, Error};
use num_bigint::BigInt;
use proptest::prelude::*;
use rand::Rng;

fn split(n: usize, seed: u64) -> (Dataset, Dataset) {
    let d = generate_synthetic(n, seed).unwrap().standardize().unwrap();
    d.split(0.8, seed).unwrap()
}

fn float_cfg(epochs: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: 3e-3,
        epochs,
        batch_size: 64,
        seed,
        ..TrainConfig::default()
    }
}

fn qat_cfg(epochs: usize, seed: u64, acc: u32) -> QatConfig {
    QatConfig {
        train: float_cfg(epochs, seed),
        accumulator_bits: acc,
        ..QatConfig::default()
    }
}

#[test]
fn randomized_round_trip_bound() {
    let mut r = rng(1);
    let settings = [
        (2, -1.0, 1.0),
        (4, -3.5, 3.5),
        (8, -0.01, 0.02),
        (12, 0.0, 100.0),
        (16, -250.0, 7.0),
    ];
    for &(bits, lo, hi) in &settings {
        for symmetric in [true, false] {
            let p = calibrate(&[lo, hi], bits, symmetric).unwrap();
            for _ in 0..2_000 {
                let v = r.gen_range(p.alpha..=p.beta);
                let err = (v - p.dequantize(p.quantize(v))).abs();
                assert!(
                    err <= p.scale / 2.0 + 1e-12,
                    "b={bits} [{lo},{hi}] sym={symmetric} r={v} err={err}"
                );
            }
        }
    }
}

#[test]
fn bound_strictly_shrinks_with_bits() {
    let mut prev = f64::INFINITY;
    for b in 2..=32 {
        let s = QuantParams::asymmetric(-1.3, 2.9, b, false).unwrap().scale;
        assert!((s - 4.2 / (2f64.powi(b as i32) - 1.0)).abs() < 1e-12);
        assert!(s / 2.0 < prev);
        prev = s / 2.0;
    }
}

fn bn_model(seed: u64) -> MlpModel {
    let mut m = MlpModel::random(&MlpModel::default_dims(), seed).unwrap();
    let mut r = rng(seed + 1000);
    for l in m.layers_mut() {
        let w = l.fan_out();
        l.batch_norm = Some(BatchNorm {
            gamma: (0..w)
                .map(|_| r.gen_range(0.2..2.0) * if r.gen_bool(0.2) { -1.0 } else { 1.0 })
                .collect(),
            beta: (0..w).map(|_| r.gen_range(-1.0..1.0)).collect(),
            running_mean: Some((0..w).map(|_| r.gen_range(-2.0..2.0)).collect()),
            running_var: Some((0..w).map(|_| r.gen_range(0.05..4.0)).collect()),
            eps: 1e-5,
        });
    }
    m
}

#[test]
fn bn_fold_is_equivalent_and_idempotent() {
    let m = bn_model(4);
    let folded = fold_bn(&m).unwrap();
    assert!(folded.layers().iter().all(|l| l.batch_norm.is_none()));
    let x = common::random_inputs(1000, 16, 6);
    let (a, b) = (m.forward(&x).unwrap(), folded.forward(&x).unwrap());
    let dev = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(p, q)| (p - q).abs())
        .fold(0.0, f64::max);
    assert!(dev < 1e-6, "max deviation {dev}");
    assert_eq!(fold_bn(&folded).unwrap(), folded);
}

#[test]
fn bn_fold_requires_running_stats() {
    let mut m = bn_model(4);
    m.layers_mut()[2].batch_norm.as_mut().unwrap().running_var = None;
    assert!(matches!(fold_bn(&m), Err(Error::BatchNormTraining { layer: 2 })));
    let (tr, _) = split(200, 3);
    let populated = populate_bn_stats(&m, &tr).unwrap();
    assert!(fold_bn(&populated).is_ok());
}

/// Smallest `|s − round(s·2^c)/2^c|` over every `c ≤ max_shift` with a
/// mantissa that fits.
fn best_dyadic_error(s: f64, max_shift: u32) -> f64 {
    (0..=max_shift)
        .filter_map(|c| {
            let m = (s * 2f64.powi(c as i32)).round();
            (m <= MANTISSA_LIMIT as f64).then(|| (s - m / 2f64.powi(c as i32)).abs())
        })
        .fold(f64::INFINITY, f64::min)
}

#[test]
fn dyadic_matches_brute_force_search() {
    let mut r = rng(12);
    for _ in 0..1000 {
        let s = 10f64.powf(r.gen_range(-4.0..4.0));
        let d = to_dyadic(s, 24).unwrap();
        assert!(d.is_canonical() && d.shift <= 24 && d.mantissa <= MANTISSA_LIMIT);
        let err = (s - d.value()).abs();
        let best = best_dyadic_error(s, 24);
        assert!(err <= best * (1.0 + 1e-12), "s={s}: {err} vs {best}");
    }
}

#[test]
fn requantization_example() {
    let d = DyadicScale { mantissa: 3, shift: 2 };
    assert_eq!(d.requantize(300), Some(225));
}

proptest! {
    #[test]
    fn relu_commutes_with_requantization(acc in -(1i64 << 40)..(1i64 << 40), m in 0i64..(1 << 31), c in 0u32..40) {
        let d = DyadicScale { mantissa: m, shift: c };
        let left = d.requantize(i128::from(acc.max(0))).unwrap();
        let right = d.requantize(i128::from(acc)).unwrap().max(0);
        prop_assert_eq!(left, right);
    }
}

fn trained_qat(bits: &[u32], acc: u32) -> (QatModel, Dataset) {
    let (tr, val) = split(2000, 31);
    let base = MlpModel::random(&MlpModel::default_dims(), 31).unwrap();
    let schema = QuantSchema::with_default_coupling(bits).unwrap();
    let (q, _) = qat_train(&base, &tr, Some(&val), &schema, &qat_cfg(3, 31, acc)).unwrap();
    (q, val)
}

fn assert_matches_bigint(im: &IntegerModel, rows: usize, seed: u64) {
    let x = common::random_inputs(rows, 16, seed);
    let qx = im.quantize_input(&x).unwrap();
    assert_eq!(qx, input_codes_oracle(im, &x));
    let got = im.int_forward(&x).unwrap().q_logits;
    let want = bigint_logits(im, &qx, rows);
    let mismatches = got.iter().zip(&want).filter(|(g, w)| BigInt::from(**g) != **w).count();
    assert_eq!(mismatches, 0);
}

#[test]
fn lowered_mixed_schema_is_bit_exact() {
    let (q, val) = trained_qat(&[4, 6, 5, 8], 32);
    let im = lower(&q).unwrap();
    for l in &im.layers {
        if let Some(d) = l.requant {
            assert!(d.is_canonical());
        }
    }
    assert_matches_bigint(&im, 1000, 2);
    let (_, tally) = im.int_forward_instrumented(&val.features).unwrap();
    assert_eq!(tally.real_core, 0);
    let reloaded = IntegerModel::from_json(&im.to_json().unwrap()).unwrap();
    assert_eq!(reloaded, im);
}

#[test]
fn thirty_two_bit_lowering_agrees_with_fake_quant() {
    let (tr, val) = split(2000, 5);
    let base = MlpModel::random(&MlpModel::default_dims(), 5).unwrap();
    let schema = QuantSchema::homogeneous(32, 4, 16).unwrap();
    let (q, _) = qat_train(&base, &tr, Some(&val), &schema, &qat_cfg(2, 5, 96)).unwrap();
    let im = lower(&q).unwrap();
    assert_matches_bigint(&im, 500, 3);
    let x = generate_synthetic(10_000, 99)
        .unwrap()
        .standardize_with(tr.standardizer.as_ref().unwrap())
        .unwrap()
        .features;
    let (a, b) = (q.predict(&x).unwrap(), im.predict(&x).unwrap());
    assert_eq!(a.iter().zip(&b).filter(|(p, r)| p != r).count(), 0);
}

#[test]
fn thirty_two_bit_qat_tracks_float_training() {
    let (tr, val) = split(3000, 17);
    let base = MlpModel::random(&MlpModel::default_dims(), 17).unwrap();
    let (fm, _) = train(&base, &tr, Some(&val), &float_cfg(5, 17)).unwrap();
    let schema = QuantSchema::homogeneous(32, 4, 32).unwrap();
    let (qm, _) = qat_train(&base, &tr, Some(&val), &schema, &qat_cfg(5, 17, 96)).unwrap();
    let fa = mpq_core::nn::accuracy(&fm, &val).unwrap();
    let qa = qm.accuracy(&val).unwrap();
    assert!((fa - qa).abs() <= 0.005, "float {fa} vs 32-bit {qa}");
}

#[test]
fn overflowing_accumulator_names_layer() {
    let (tr, _) = split(300, 8);
    let base = MlpModel::random(&MlpModel::default_dims(), 8).unwrap();
    let q = QatModel::calibrate(&base, &QuantSchema::homogeneous(8, 4, 16).unwrap(), &tr, 24).unwrap();
    assert!(matches!(lower(&q), Err(Error::Overflow { layer: 0, .. })));
}

#[test]
fn zero_input_zero_bias_is_uniform() {
    let (q, _) = trained_qat(&[5, 5, 5, 5], 32);
    let mut im = lower(&q).unwrap();
    for l in &mut im.layers {
        l.bias.iter_mut().for_each(|b| *b = 0);
    }
    let f = im.int_forward(&mpq_core::Tensor2D::zeros(3, 16)).unwrap();
    assert!(f.q_logits.iter().all(|&v| v == 0));
    assert!(f.probs.data().iter().all(|&p| (p - 0.2).abs() < 1e-15));
}
