//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit on any
//! failure. Oracles come from the core test suite.

#[path = "../../core/tests/common/mod.rs"]
mod common;
mod support;

use std::collections::BTreeMap;
use std::time::Instant;

use common::{bigint_logits, exhaustive_scan, median, random_inputs, rng, trained_toy};
use mpq_core::alloc::{default_budgets, model_bops, solve_ilp, AllocationProblem, ArchSpec, DEFAULT_CANDIDATES};
use mpq_core::data::generate_synthetic;
use mpq_core::hessian::{
    calibration_batch, exact_trace, hutchinson, hutchinson_trace, layer_sensitivities, QuadraticSurrogate,
};
use mpq_core::hwest::{estimate, EstimatorCoeffs};
use mpq_core::nn::{sparsity, train, MlpModel, TrainConfig, SPARSITY_EPS};
use mpq_core::qir::{
    export_graph, fold_constants, infer_shapes, merge_scales_relu, optimize, run_graph, IrGraph, Tensor, TensorData,
};
use mpq_core::quant::{calibrate, lower, qat_train, QatConfig, QuantSchema};
use mpq_core::Dataset;
use num_bigint::BigInt;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn suffix(items: &[String]) -> String {
    if items.is_empty() {
        String::new()
    } else {
        format!(": {}", items.join("; "))
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c1_bops() -> Outcome {
    let arch = ArchSpec::from_widths(&[16, 64, 32, 32, 5]).map_err(|e| e.to_string())?;
    let schema = QuantSchema::homogeneous(32, 4, 32).map_err(|e| e.to_string())?;
    let t = Instant::now();
    let b = model_bops(&arch, &schema).map_err(|e| e.to_string())?;
    let dt = t.elapsed();
    check(
        b == 4_652_832.0 && dt.as_micros() < 1000,
        format!("baseline BOPs {b} in {dt:?}"),
    )
}

fn c2_hutchinson_identity() -> Outcome {
    let t = Instant::now();
    let id = QuadraticSurrogate::identity(37).unwrap();
    let mut all_exact = true;
    for seed in 0..20 {
        let e = hutchinson(&id, 200, seed).unwrap();
        all_exact &= e.estimate == 37.0 && e.stderr == 0.0;
    }
    let diag: Vec<f64> = (1..=10).map(f64::from).collect();
    let e = hutchinson(&QuadraticSurrogate::diagonal(&diag).unwrap(), 10_000, 1).unwrap();
    let rel = (e.estimate - 55.0).abs() / 55.0;
    check(
        all_exact && rel <= 0.02,
        format!(
            "identity samples exact: {all_exact}; diag(1..10) estimate {:.4} (rel err {rel:.2e}) in {:?}",
            e.estimate,
            t.elapsed()
        ),
    )
}

fn c3_toy_oracle() -> Outcome {
    let (model, data) = trained_toy(3);
    let mut worst = 0.0f64;
    let mut parts = Vec::new();
    for l in 0..model.num_layers() {
        let exact = exact_trace(&model, &data, l).unwrap();
        let (est, _) = hutchinson_trace(&model, &data, l, 5000, 100 + l as u64).unwrap();
        let rel = (est - exact).abs() / exact.abs();
        worst = worst.max(rel);
        parts.push(format!("layer {l}: {est:.5} vs {exact:.5}"));
    }
    check(
        worst <= 0.05,
        format!("{}; worst rel err {worst:.2e}", parts.join(", ")),
    )
}

fn desk_model(seed: u64) -> (MlpModel, Dataset, Dataset) {
    let d = generate_synthetic(6000, seed).unwrap();
    let (tr, val) = d.split(0.8, seed).unwrap();
    let tr = tr.standardize().unwrap();
    let val = val.standardize_with(tr.standardizer.as_ref().unwrap()).unwrap();
    let cfg = TrainConfig {
        learning_rate: 3e-3,
        epochs: 10,
        batch_size: 64,
        seed,
        ..TrainConfig::default()
    };
    let (m, _) = train(
        &MlpModel::random(&MlpModel::default_dims(), seed).unwrap(),
        &tr,
        Some(&val),
        &cfg,
    )
    .unwrap();
    (m, tr, val)
}

fn allocation_problem(model: &MlpModel, tr: &Dataset, k: usize, seed: u64) -> AllocationProblem {
    let traces = layer_sensitivities(model, &calibration_batch(tr), k, seed)
        .unwrap()
        .mean_traces();
    let arch = ArchSpec::from_model(model, sparsity(model, SPARSITY_EPS).unwrap()).unwrap();
    let weights = model.layers().iter().map(|l| l.weights.data().to_vec()).collect();
    AllocationProblem::new(arch, traces, weights, f64::INFINITY).unwrap()
}

fn c4_ilp_optimality() -> Outcome {
    let (model, tr, _) = desk_model(4);
    let base = allocation_problem(&model, &tr, 50, 4);
    let t = Instant::now();
    let mut mismatches = Vec::new();
    for budget in default_budgets() {
        let p = base.with_budget(budget).unwrap();
        let s = solve_ilp(&p).unwrap();
        let o = exhaustive_scan(
            &p.arch.dims,
            &p.arch.sparsity,
            &p.traces,
            &p.weights,
            &DEFAULT_CANDIDATES,
            p.act_offset,
            p.input_bits,
            budget,
        );
        if s.feasible != o.feasible || s.weight_bits != o.bits {
            mismatches.push(format!("budget {budget}: {:?} vs scan {:?}", s.weight_bits, o.bits));
        }
    }
    let dt = t.elapsed();
    check(
        mismatches.is_empty() && dt.as_secs() < 60,
        format!(
            "7 budgets, {} mismatches in {dt:?}{}",
            mismatches.len(),
            suffix(&mismatches)
        ),
    )
}

fn c5_bit_exact() -> Outcome {
    let (model, tr, val) = desk_model(5);
    let schema = QuantSchema::with_default_coupling(&[4, 6, 5, 8]).unwrap();
    let cfg = QatConfig {
        train: TrainConfig {
            learning_rate: 1e-3,
            epochs: 2,
            batch_size: 64,
            seed: 5,
            ..TrainConfig::default()
        },
        ..QatConfig::default()
    };
    let (q, _) = qat_train(&model, &tr, Some(&val), &schema, &cfg).unwrap();
    let im = lower(&q).unwrap();
    let x = random_inputs(10_000, 16, 55);
    let qx = im.quantize_input(&x).unwrap();
    let got = im.int_forward(&x).unwrap().q_logits;
    let want = bigint_logits(&im, &qx, 10_000);
    let mismatches = got.iter().zip(&want).filter(|(g, w)| BigInt::from(**g) != **w).count();
    check(
        mismatches == 0,
        format!("{} logits over 10000 inputs, {mismatches} mismatches", got.len()),
    )
}

/// Largest real deviation, or `None` when integer tensors differ.
fn compare(a: &BTreeMap<String, Tensor>, b: &BTreeMap<String, Tensor>) -> Option<f64> {
    if a.keys().ne(b.keys()) {
        return None;
    }
    let mut dev = 0.0f64;
    for (k, ta) in a {
        let tb = &b[k];
        match (&ta.data, &tb.data) {
            (TensorData::Int(x), TensorData::Int(y)) if x != y => return None,
            (TensorData::Int(_), TensorData::Int(_)) => {}
            _ => {
                for (p, q) in ta.to_real().iter().zip(tb.to_real()) {
                    dev = dev.max((p - q).abs());
                }
            }
        }
    }
    Some(dev)
}

fn c6_ir_passes() -> Outcome {
    let (model, tr, _) = desk_model(6);
    let schema = QuantSchema::with_default_coupling(&[5, 4, 6, 7]).unwrap();
    let im = lower(&mpq_core::quant::QatModel::calibrate(&model, &schema, &tr, 32).unwrap()).unwrap();
    let g = export_graph(&im).unwrap();
    let passes: Vec<(&str, IrGraph)> = vec![
        ("infer_shapes", infer_shapes(&g).unwrap()),
        ("fold_constants", fold_constants(&g).unwrap()),
        ("merge_scales_relu", merge_scales_relu(&g).unwrap()),
        ("optimize", optimize(&g).unwrap().0),
    ];
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..100 {
        let x = random_inputs(1, 16, 600 + seed);
        let reference = run_graph(&g, &x).unwrap();
        for (name, h) in &passes {
            match compare(&reference, &run_graph(h, &x).unwrap()) {
                Some(d) if d <= 1e-6 => worst = worst.max(d),
                other => failures.push(format!("{name} on input {seed}: {other:?}")),
            }
        }
    }
    let mut round_trip = true;
    for graph in std::iter::once(&g).chain(passes.iter().map(|(_, h)| h)) {
        let back = IrGraph::from_json(&graph.to_json().unwrap()).unwrap();
        let x = random_inputs(100, 16, 9);
        round_trip &= compare(&run_graph(graph, &x).unwrap(), &run_graph(&back, &x).unwrap()) == Some(0.0);
    }
    check(
        failures.is_empty() && round_trip,
        format!(
            "4 passes x 100 inputs, worst real deviation {worst:.1e}, round trip identical: {round_trip}{}",
            suffix(&failures)
        ),
    )
}

fn c7_quant_bound() -> Outcome {
    let settings = [
        (2, -1.0, 1.0),
        (3, -0.2, 5.0),
        (4, -3.5, 3.5),
        (8, -0.01, 0.02),
        (12, 0.0, 100.0),
        (16, -250.0, 7.0),
    ];
    let mut r = rng(7);
    let mut draws = 0usize;
    let mut violations = 0usize;
    let mut worst = 0.0f64;
    while draws < 100_000 {
        for &(bits, lo, hi) in &settings {
            for symmetric in [true, false] {
                let p = calibrate(&[lo, hi], bits, symmetric).unwrap();
                let v = r.gen_range(p.alpha..=p.beta);
                let err = (v - p.dequantize(p.quantize(v))).abs();
                worst = worst.max(err / p.scale);
                violations += usize::from(err > p.scale / 2.0 + 1e-12);
                draws += 1;
            }
        }
    }
    check(
        violations == 0,
        format!("{draws} draws, {violations} violations, worst err/S {worst:.6}"),
    )
}

fn qat_accuracy(model: &MlpModel, tr: &Dataset, val: &Dataset, schema: &QuantSchema, seed: u64) -> f64 {
    let cfg = QatConfig {
        train: TrainConfig {
            learning_rate: 1e-3,
            epochs: 5,
            batch_size: 64,
            seed,
            ..TrainConfig::default()
        },
        ..QatConfig::default()
    };
    let (q, _) = qat_train(model, tr, Some(val), schema, &cfg).unwrap();
    q.accuracy(val).unwrap()
}

fn c8_trends() -> Outcome {
    let mut by_bits: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..10u64 {
        let (model, tr, val) = desk_model(800 + seed);
        let homogeneous = |b: u32| QuantSchema::homogeneous(b, 4, 16).unwrap();
        let mut acc = BTreeMap::new();
        for b in [4, 6, 8] {
            let a = qat_accuracy(&model, &tr, &val, &homogeneous(b), seed);
            by_bits.entry(b).or_default().push(a);
            acc.insert(b, a);
        }
        let base = allocation_problem(&model, &tr, 50, seed);
        let Some(sol) = default_budgets()
            .into_iter()
            .map(|b| solve_ilp(&base.with_budget(b).unwrap()).unwrap())
            .find(|s| s.feasible)
        else {
            lines.push(format!("seed {seed}: no feasible budget"));
            continue;
        };
        let hess = qat_accuracy(&model, &tr, &val, &sol.schema().unwrap(), seed);
        let Some(rival) = (4..=8).find(|&b| model_bops(&base.arch, &homogeneous(b)).unwrap() >= sol.bops) else {
            lines.push(format!("seed {seed}: no homogeneous schema reaches {} BOPs", sol.bops));
            continue;
        };
        let rival_acc = match acc.get(&rival) {
            Some(&a) => a,
            None => qat_accuracy(&model, &tr, &val, &homogeneous(rival), seed),
        };
        wins += usize::from(hess >= rival_acc);
        lines.push(format!(
            "seed {seed}: {:?} {hess:.4} vs INT{rival} {rival_acc:.4}",
            sol.weight_bits
        ));
    }
    let med: BTreeMap<u32, f64> = by_bits.iter_mut().map(|(b, v)| (*b, median(v))).collect();
    let ordered = med[&8] >= med[&6] && med[&6] >= med[&4];
    eprintln!("  criterion 8 detail: {}", lines.join("; "));
    check(
        ordered && wins >= 7,
        format!(
            "median INT8 {:.4}, INT6 {:.4}, INT4 {:.4}; Hessian >= homogeneous in {wins}/10 seeds",
            med[&8], med[&6], med[&4]
        ),
    )
}

fn c9_resource_ordering() -> Outcome {
    let c = EstimatorCoeffs::default();
    let arch = |f: f64| {
        ArchSpec::from_widths(&[16, 64, 32, 32, 5])
            .unwrap()
            .with_sparsity(vec![f; 4])
            .unwrap()
    };
    let base = estimate(&arch(0.0), &QuantSchema::homogeneous(32, 4, 32).unwrap(), &c).unwrap();
    let int8 = estimate(&arch(0.30), &QuantSchema::homogeneous(8, 4, 16).unwrap(), &c).unwrap();
    let hess = estimate(
        &arch(0.33),
        &QuantSchema::with_default_coupling(&[4, 4, 5, 4]).unwrap(),
        &c,
    )
    .unwrap();
    check(
        base.dsp > int8.dsp && int8.dsp > hess.dsp && base.lut > int8.lut && int8.lut > hess.lut,
        format!(
            "DSP {} > {} > {}, LUT {} > {} > {}",
            base.dsp, int8.dsp, hess.dsp, base.lut, int8.lut, hess.lut
        ),
    )
}

fn c10_cli_chain() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    let cfg = support::small_config(dir.path(), &a);
    let t = Instant::now();
    support::run_chain(&support::CHAIN, &cfg)?;
    let dt = t.elapsed();
    let diffs = support::rerun_from_manifests(&support::CHAIN, &a, &b)?;
    check(
        diffs.is_empty(),
        format!(
            "{} commands in {dt:?}, rerun differs in {diffs:?}",
            support::CHAIN.len()
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("exact baseline BOPs", c1_bops),
        ("Hutchinson identity and diagonal", c2_hutchinson_identity),
        ("Hutchinson vs exact trace on toy model", c3_toy_oracle),
        ("ILP equals exhaustive scan", c4_ilp_optimality),
        ("integer inference bit-exact", c5_bit_exact),
        ("IR pass soundness", c6_ir_passes),
        ("quantization round-trip bound", c7_quant_bound),
        ("accuracy trends", c8_trends),
        ("resource ordering", c9_resource_ordering),
        ("CLI chain reproducible", c10_cli_chain),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let outcome = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".to_string()));
        let (tag, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!(
            "criterion {:>2} {tag}: {name} ({detail}) [{:.1}s]",
            i + 1,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
