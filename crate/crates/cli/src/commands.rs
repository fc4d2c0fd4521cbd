use std::collections::BTreeMap;

use mpq_core::alloc::{
    model_bops, solve_ilp_with, sweep, write_sweep_csv, AllocationProblem, AllocationSolution, ArchSpec, SweepConfig,
};
use mpq_core::data::{generate_synthetic, ingest_csv, Standardizer};
use mpq_core::hessian::{calibration_batch, layer_sensitivities, TraceReport};
use mpq_core::hwest::{estimate, ResourceEstimate};
use mpq_core::nn::{accuracy, argmax, sparsity, train, Checkpoint, MlpModel, SPARSITY_EPS};
use mpq_core::qir::{export_graph, optimize, run_graph, validate, IrGraph, PROBS, Q_LOGITS};
use mpq_core::quant::{lower, qat_train, IntegerModel, QuantSchema};
use mpq_core::Dataset;
use serde::Serialize;

use crate::config::DataSource;
use crate::error::{io_err, CliError, Result};
use crate::run::Run;

pub const DATA: &str = "data.csv";
pub const MODEL: &str = "model.json";
pub const TRACES: &str = "traces.json";
pub const ALLOCATION: &str = "allocation.json";
pub const SWEEP: &str = "sweep.csv";
pub const INTEGER_MODEL: &str = "integer_model.json";
pub const GRAPH: &str = "graph.json";
pub const GRAPH_OPT: &str = "graph_opt.json";

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io {
        context: "csv".into(),
        source: std::io::Error::other(e),
    }
}

fn load_data(run: &mut Run) -> Result<Dataset> {
    let path = run.require(DATA, "gen-data")?;
    Ok(ingest_csv(path)?)
}

/// Raw train/validation split of `data.csv`.
fn split(run: &mut Run) -> Result<(Dataset, Dataset)> {
    let data = load_data(run)?;
    Ok(data.split(1.0 - run.cfg.val_fraction, run.cfg.seed)?)
}

fn load_model(run: &mut Run) -> Result<(MlpModel, Standardizer)> {
    let text = run.read_text(MODEL, "train")?;
    let ckpt: Checkpoint = serde_json::from_str(&text).map_err(mpq_core::Error::from)?;
    let st = ckpt
        .standardizer
        .clone()
        .ok_or_else(|| CliError::Config("model.json has no standardization statistics".into()))?;
    Ok((ckpt.to_model()?, st))
}

/// Standardized train/validation split plus the trained model.
fn model_and_splits(run: &mut Run) -> Result<(MlpModel, Dataset, Dataset)> {
    let (model, st) = load_model(run)?;
    let (tr, val) = split(run)?;
    Ok((model, tr.standardize_with(&st)?, val.standardize_with(&st)?))
}

/// The configured schema, or the one chosen by `allocate`.
fn resolve_schema(run: &mut Run) -> Result<QuantSchema> {
    if let Some(s) = &run.cfg.schema {
        return Ok(s.clone());
    }
    let text = run.read_text(ALLOCATION, "allocate")?;
    let sol: AllocationSolution = serde_json::from_str(&text).map_err(mpq_core::Error::from)?;
    Ok(sol.schema()?)
}

pub fn gen_data(run: &mut Run) -> Result<String> {
    let data = match run.cfg.data.clone() {
        DataSource::Synthetic { rows } => generate_synthetic(rows, run.cfg.seed)?,
        DataSource::Csv { path } => {
            run.record_external(&path)?;
            ingest_csv(&path)?
        }
    };
    run.write_with(DATA, |p| Ok(data.write_csv(p)?))?;
    Ok(format!(
        "{} rows, class counts {:?}",
        data.len(),
        data.class_histogram()
    ))
}

#[derive(Serialize)]
struct TrainSummary {
    train_rows: usize,
    val_rows: usize,
    val_accuracy: f64,
    sparsity: Vec<f64>,
    history: Vec<mpq_core::nn::EpochRecord>,
}

pub fn train_cmd(run: &mut Run) -> Result<String> {
    let (tr, val) = split(run)?;
    let tr = tr.standardize()?;
    let st = tr.standardizer.clone().expect("standardized");
    let val = val.standardize_with(&st)?;
    let dims = &run.cfg.dims;
    if dims[0] != tr.num_features() || *dims.last().unwrap() != tr.num_classes {
        return Err(CliError::Config(format!(
            "dims {dims:?} do not match data with {} features and {} classes",
            tr.num_features(),
            tr.num_classes
        )));
    }
    let init = MlpModel::random(dims, run.cfg.seed)?;
    let (model, history) = train(&init, &tr, Some(&val), &run.cfg.train_config())?;
    let summary = TrainSummary {
        train_rows: tr.len(),
        val_rows: val.len(),
        val_accuracy: accuracy(&model, &val)?,
        sparsity: sparsity(&model, SPARSITY_EPS)?,
        history,
    };
    run.write_json(MODEL, &model.checkpoint(Some(st)))?;
    run.write_json("train_history.json", &summary)?;
    Ok(format!("validation accuracy {:.4}", summary.val_accuracy))
}

pub fn trace(run: &mut Run) -> Result<String> {
    let (model, tr, _) = model_and_splits(run)?;
    let batch = calibration_batch(&tr);
    let report = layer_sensitivities(&model, &batch, run.cfg.hessian.k, run.cfg.seed)?;
    run.write_json(TRACES, &report)?;
    Ok(format!("mean traces {:?}", report.mean_traces()))
}

pub fn allocate(run: &mut Run) -> Result<String> {
    let (model, _) = load_model(run)?;
    let text = run.read_text(TRACES, "trace")?;
    let report: TraceReport = serde_json::from_str(&text).map_err(mpq_core::Error::from)?;
    report.validate()?;
    let a = run.cfg.allocation.clone();
    let arch = ArchSpec::from_model(&model, sparsity(&model, SPARSITY_EPS)?)?;
    let weights = model.layers().iter().map(|l| l.weights.data().to_vec()).collect();
    let mut problem = AllocationProblem::new(arch, report.mean_traces(), weights, a.budget.unwrap_or(f64::INFINITY))?;
    problem.candidates = vec![a.candidates.clone(); model.num_layers()];
    problem.act_offset = a.act_offset;
    problem.input_bits = a.input_bits;
    problem.validate()?;
    let sol = solve_ilp_with(&problem, a.method)?;
    run.write_json(ALLOCATION, &sol)?;
    if !sol.feasible {
        return Err(CliError::Infeasible {
            budget: problem.budget,
            min_bops: sol.min_bops,
        });
    }
    Ok(format!(
        "weight bits {:?}, {} BOPs, omega {:.6e}",
        sol.weight_bits, sol.bops, sol.omega
    ))
}

pub fn sweep_cmd(run: &mut Run, jobs: Option<usize>) -> Result<String> {
    let (model, tr, val) = model_and_splits(run)?;
    let a = &run.cfg.allocation;
    let cfg = SweepConfig {
        qat: run.cfg.sweep.qat.clone(),
        candidates: a.candidates.clone(),
        act_offset: a.act_offset,
        input_bits: a.input_bits,
        sample: run.cfg.sweep.sample,
        seed: run.cfg.seed,
    };
    let records = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Config(format!("--jobs {n}: {e}")))?
            .install(|| sweep(&model, &tr, &val, &cfg))?,
        None => sweep(&model, &tr, &val, &cfg)?,
    };
    let mut buf = Vec::new();
    write_sweep_csv(&records, model.num_layers(), &mut buf)?;
    run.write_bytes(SWEEP, &buf)?;
    let failed = records.iter().filter(|r| r.error.is_some()).count();
    Ok(format!("{} configs, {failed} failed", records.len()))
}

#[derive(Serialize)]
struct QuantizeSummary {
    schema: QuantSchema,
    float_accuracy: f64,
    qat_accuracy: f64,
    integer_accuracy: f64,
    code_sparsity: Vec<f64>,
    bops: f64,
    history: Vec<mpq_core::quant::QatEpoch>,
}

pub fn quantize(run: &mut Run) -> Result<String> {
    let (model, tr, val) = model_and_splits(run)?;
    let schema = resolve_schema(run)?;
    let (q, history) = qat_train(&model, &tr, Some(&val), &schema, &run.cfg.qat_config())?;
    let im = lower(&q)?;
    let code_sparsity = q.code_sparsity()?;
    let summary = QuantizeSummary {
        bops: model_bops(&ArchSpec::from_model(&model, code_sparsity.clone())?, &schema)?,
        float_accuracy: accuracy(&model, &val)?,
        qat_accuracy: q.accuracy(&val)?,
        integer_accuracy: im.accuracy(&val)?,
        code_sparsity,
        schema,
        history,
    };
    run.write_bytes(INTEGER_MODEL, (im.to_json()? + "\n").as_bytes())?;
    run.write_json("quantize_report.json", &summary)?;
    Ok(format!(
        "float {:.4}, fake-quant {:.4}, integer {:.4}",
        summary.float_accuracy, summary.qat_accuracy, summary.integer_accuracy
    ))
}

fn load_graph(run: &mut Run, name: &str, producer: &'static str) -> Result<IrGraph> {
    let text = run.read_text(name, producer)?;
    let g = IrGraph::from_json(&text)?;
    validate(&g)?;
    Ok(g)
}

pub fn export_ir(run: &mut Run) -> Result<String> {
    let text = run.read_text(INTEGER_MODEL, "quantize")?;
    let g = export_graph(&IntegerModel::from_json(&text)?)?;
    run.write_bytes(GRAPH, (g.to_json()? + "\n").as_bytes())?;
    Ok(format!("{} nodes", g.nodes.len()))
}

pub fn opt_ir(run: &mut Run) -> Result<String> {
    let g = load_graph(run, GRAPH, "export-ir")?;
    let (o, stats) = optimize(&g)?;
    run.write_bytes(GRAPH_OPT, (o.to_json()? + "\n").as_bytes())?;
    run.write_json("passes.json", &stats)?;
    let table: Vec<String> = stats
        .iter()
        .map(|s| {
            format!(
                "{}: {} nodes, {} Mul, {} Constant",
                s.pass, s.nodes, s.mul_nodes, s.constant_nodes
            )
        })
        .collect();
    Ok(table.join("\n"))
}

#[derive(Serialize)]
struct RunIrSummary {
    graph: String,
    rows: usize,
    accuracy: f64,
}

pub fn run_ir(run: &mut Run) -> Result<String> {
    let name = run.cfg.ir_graph.clone();
    let producer = if name == GRAPH_OPT { "opt-ir" } else { "export-ir" };
    let g = load_graph(run, &name, producer)?;
    let (_, _, val) = model_and_splits(run)?;
    let out = run_graph(&g, &val.features)?;
    let classes = val.num_classes;
    let probs = out[PROBS].to_real();
    let pred: Vec<usize> = probs.chunks(classes).map(argmax).collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["row".to_string(), "label".into(), "prediction".into()];
    header.extend((0..classes).map(|c| format!("q_logit_{c}")));
    w.write_record(&header).map_err(csv_err)?;
    let q = out[Q_LOGITS].as_int().map(<[i128]>::to_vec);
    for (i, (&p, &l)) in pred.iter().zip(&val.labels).enumerate() {
        let mut rec = vec![i.to_string(), l.to_string(), p.to_string()];
        if let Some(q) = &q {
            rec.extend(q[i * classes..(i + 1) * classes].iter().map(i128::to_string));
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| io_err("csv")(e.into_error()))?;
    let summary = RunIrSummary {
        graph: name,
        rows: val.len(),
        accuracy: pred.iter().zip(&val.labels).filter(|(p, l)| p == l).count() as f64 / val.len() as f64,
    };
    run.write_bytes("ir_predictions.csv", &bytes)?;
    run.write_json("ir_eval.json", &summary)?;
    Ok(format!("{} rows, accuracy {:.4}", summary.rows, summary.accuracy))
}

#[derive(Serialize)]
struct EstimateSummary {
    schema: QuantSchema,
    sparsity: Vec<f64>,
    estimate: ResourceEstimate,
    baseline_32bit: ResourceEstimate,
}

pub fn estimate_cmd(run: &mut Run) -> Result<String> {
    let (model, _) = load_model(run)?;
    let schema = resolve_schema(run)?;
    let sp = sparsity(&model, SPARSITY_EPS)?;
    let arch = ArchSpec::from_model(&model, sp.clone())?;
    let e = estimate(&arch, &schema, &run.cfg.estimator)?;
    let dense = ArchSpec::from_model(&model, vec![0.0; model.num_layers()])?;
    let base = QuantSchema::homogeneous(32, model.num_layers(), 32)?;
    let summary = EstimateSummary {
        baseline_32bit: estimate(&dense, &base, &run.cfg.estimator)?,
        estimate: e,
        sparsity: sp,
        schema,
    };
    let mut buf = Vec::new();
    summary.estimate.write_csv(&mut buf)?;
    run.write_bytes("estimate.csv", &buf)?;
    run.write_json("estimate.json", &summary)?;
    let e = &summary.estimate;
    Ok(format!("LUT {}, FF {}, DSP {}", e.lut, e.ff, e.dsp))
}

/// One parsed row of `sweep.csv`.
struct SweepRow {
    fields: BTreeMap<String, String>,
    weight_bits: Vec<u32>,
    act_bits: Vec<u32>,
    sparsity: Option<Vec<f64>>,
}

fn parse_sweep(text: &str) -> Result<(usize, Vec<SweepRow>)> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header: Vec<String> = r.headers().map_err(csv_err)?.iter().map(str::to_string).collect();
    let layers = header.iter().filter(|h| h.starts_with("bW_")).count();
    let bad = |line: usize, msg: String| CliError::Core(mpq_core::Error::Parse { line, msg });
    let mut rows = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(csv_err)?;
        let fields: BTreeMap<String, String> = header.iter().cloned().zip(rec.iter().map(str::to_string)).collect();
        let col = |prefix: &str, l: usize| fields.get(&format!("{prefix}_{l}")).cloned().unwrap_or_default();
        let ints = |prefix: &str| -> Result<Vec<u32>> {
            (0..layers)
                .map(|l| {
                    col(prefix, l)
                        .parse()
                        .map_err(|_| bad(line, format!("bad {prefix}_{l}")))
                })
                .collect()
        };
        let sparsity = (0..layers).map(|l| col("sparsity", l).parse::<f64>().ok()).collect();
        rows.push(SweepRow {
            weight_bits: ints("bW")?,
            act_bits: ints("bA")?,
            sparsity,
            fields,
        });
    }
    Ok((layers, rows))
}

pub fn report(run: &mut Run) -> Result<String> {
    let text = run.read_text(SWEEP, "sweep")?;
    let (layers, rows) = parse_sweep(&text)?;
    let dims = ArchSpec::from_widths(&run.cfg.dims)?;
    if dims.layers() != layers {
        return Err(CliError::Config(format!(
            "sweep has {layers} layers, config dims describe {}",
            dims.layers()
        )));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["config_id".to_string()];
    header.extend((0..layers).map(|l| format!("bW_{l}")));
    header.extend(["accuracy", "bops", "lut", "ff", "dsp"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for row in &rows {
        let schema = QuantSchema::new(
            row.weight_bits.clone(),
            row.act_bits.clone(),
            run.cfg.allocation.input_bits,
        )?;
        let est = match &row.sparsity {
            Some(sp) => Some(estimate(
                &dims.clone().with_sparsity(sp.clone())?,
                &schema,
                &run.cfg.estimator,
            )?),
            None => None,
        };
        let mut rec = vec![row.fields["config_id"].clone()];
        rec.extend(row.weight_bits.iter().map(u32::to_string));
        rec.push(row.fields.get("accuracy").cloned().unwrap_or_default());
        rec.push(row.fields.get("bops").cloned().unwrap_or_default());
        match &est {
            Some(e) => rec.extend([e.lut, e.ff, e.dsp].map(|v| v.to_string())),
            None => rec.extend([String::new(), String::new(), String::new()]),
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| io_err("csv")(e.into_error()))?;
    run.write_bytes("report.csv", &bytes)?;
    Ok(format!("{} rows", rows.len()))
}
