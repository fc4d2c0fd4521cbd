use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alloc::bops::{model_bops, ArchSpec};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::quant::{qat_train, QatConfig, QuantSchema, DEFAULT_ACT_OFFSET, DEFAULT_INPUT_BITS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepSample {
    All,
    Count(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub qat: QatConfig,
    /// Candidate weight widths, shared by every layer.
    pub candidates: Vec<u32>,
    pub act_offset: u32,
    pub input_bits: u32,
    pub sample: SweepSample,
    /// Config `i` trains with seed `seed + i`.
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            qat: QatConfig::default(),
            candidates: crate::alloc::DEFAULT_CANDIDATES.to_vec(),
            act_offset: DEFAULT_ACT_OFFSET,
            input_bits: DEFAULT_INPUT_BITS,
            sample: SweepSample::All,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub config_id: usize,
    pub weight_bits: Vec<u32>,
    pub act_bits: Vec<u32>,
    pub accuracy: Option<f64>,
    pub bops: Option<f64>,
    /// Fraction of zero weight codes per layer.
    pub sparsity: Vec<f64>,
    pub seed: u64,
    pub error: Option<String>,
}

/// Config ids of the search space to visit, ascending.
pub fn sweep_ids(layers: usize, cfg: &SweepConfig) -> Result<Vec<usize>> {
    if cfg.candidates.is_empty() {
        return Err(Error::domain("sweep needs at least one candidate width"));
    }
    let total = cfg
        .candidates
        .len()
        .checked_pow(layers as u32)
        .ok_or_else(|| Error::domain("sweep space too large"))?;
    let mut ids: Vec<usize> = (0..total).collect();
    if let SweepSample::Count(n) = cfg.sample {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        ids.shuffle(&mut rng);
        ids.truncate(n.min(total));
        ids.sort_unstable();
    }
    Ok(ids)
}

/// Weight widths of config `id` (last layer varies fastest).
pub fn sweep_bits(mut id: usize, layers: usize, candidates: &[u32]) -> Vec<u32> {
    let k = candidates.len();
    let mut bits = vec![0; layers];
    for b in bits.iter_mut().rev() {
        *b = candidates[id % k];
        id /= k;
    }
    bits
}

/// Quantization-aware fine-tuning of `model` under every visited schema.
/// Per-config failures are recorded in the `error` column.
pub fn sweep(model: &MlpModel, train: &Dataset, val: &Dataset, cfg: &SweepConfig) -> Result<Vec<SweepRecord>> {
    cfg.qat.validate()?;
    let layers = model.num_layers();
    let ids = sweep_ids(layers, cfg)?;
    let records = ids
        .par_iter()
        .map(|&id| run_one(model, train, val, cfg, id, layers))
        .collect();
    Ok(records)
}

fn run_one(
    model: &MlpModel,
    train: &Dataset,
    val: &Dataset,
    cfg: &SweepConfig,
    id: usize,
    layers: usize,
) -> SweepRecord {
    let bits = sweep_bits(id, layers, &cfg.candidates);
    let seed = cfg.seed.wrapping_add(id as u64);
    let mut rec = SweepRecord {
        config_id: id,
        act_bits: bits.iter().map(|b| b + cfg.act_offset).collect(),
        weight_bits: bits.clone(),
        accuracy: None,
        bops: None,
        sparsity: Vec::new(),
        seed,
        error: None,
    };
    let outcome = (|| -> Result<(f64, f64, Vec<f64>)> {
        let schema = QuantSchema::coupled(&bits, cfg.act_offset, cfg.input_bits)?;
        let mut qcfg = cfg.qat.clone();
        qcfg.train.seed = seed;
        let (q, _) = qat_train(model, train, Some(val), &schema, &qcfg)?;
        let sparsity = q.code_sparsity()?;
        let arch = ArchSpec::from_model(q.float_model(), sparsity.clone())?;
        Ok((q.accuracy(val)?, model_bops(&arch, &schema)?, sparsity))
    })();
    match outcome {
        Ok((acc, bops, sp)) => {
            rec.accuracy = Some(acc);
            rec.bops = Some(bops);
            rec.sparsity = sp;
        }
        Err(e) => rec.error = Some(e.to_string()),
    }
    rec
}

/// CSV with columns `config_id, bW_*, bA_*, accuracy, bops, sparsity_*,
/// seed, error`.
pub fn write_sweep_csv<W: Write>(records: &[SweepRecord], layers: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["config_id".to_string()];
    header.extend((0..layers).map(|l| format!("bW_{l}")));
    header.extend((0..layers).map(|l| format!("bA_{l}")));
    header.push("accuracy".into());
    header.push("bops".into());
    header.extend((0..layers).map(|l| format!("sparsity_{l}")));
    header.push("seed".into());
    header.push("error".into());
    w.write_record(&header).map_err(csv_err)?;
    for r in records {
        let mut row = vec![r.config_id.to_string()];
        row.extend(r.weight_bits.iter().map(|b| b.to_string()));
        row.extend(r.act_bits.iter().map(|b| b.to_string()));
        row.push(r.accuracy.map(|a| format!("{a:?}")).unwrap_or_default());
        row.push(r.bops.map(|b| format!("{b:?}")).unwrap_or_default());
        if r.sparsity.len() == layers {
            row.extend(r.sparsity.iter().map(|s| format!("{s:?}")));
        } else {
            row.extend(std::iter::repeat_n(String::new(), layers));
        }
        row.push(r.seed.to_string());
        row.push(r.error.clone().unwrap_or_default());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}
