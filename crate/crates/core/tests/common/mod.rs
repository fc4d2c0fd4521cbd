//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's numerical code; only data
//! structures are read.
#![allow(dead_code)]

use mpq_core::data::{synthetic_component_means, NUM_CLASSES};
use mpq_core::nn::{Activation, MlpModel};
use mpq_core::quant::IntegerModel;
use mpq_core::{Dataset, Tensor2D};
use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Two overlapping Gaussian blobs in 4-D, labels alternate 0/1.
pub fn blobs(n: usize, sep: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut x = Vec::with_capacity(n * 4);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % 2;
        let sign = if c == 0 { 1.0 } else { -1.0 };
        for j in 0..4 {
            let z: f64 = r.sample(StandardNormal);
            x.push(sign * sep * [1.0, -0.5, 0.25, 0.75][j] + z);
        }
        y.push(c);
    }
    Dataset::new(Tensor2D::from_vec(n, 4, x).unwrap(), y, 2).unwrap()
}

/// Separating direction used by [`separable`].
pub const SEPARATOR: [f64; 4] = [1.0, -1.0, 0.5, 2.0];

/// Points uniform in `[-2, 2]^4`, labelled by the side of [`SEPARATOR`],
/// keeping only those at distance `>= margin` from the hyperplane.
pub fn separable(n: usize, margin: f64, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let norm = SEPARATOR.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut x = Vec::with_capacity(n * 4);
    let mut y = Vec::with_capacity(n);
    while y.len() < n {
        let p: Vec<f64> = (0..4).map(|_| r.gen_range(-2.0..2.0)).collect();
        let d = p.iter().zip(SEPARATOR).map(|(a, b)| a * b).sum::<f64>() / norm;
        if d.abs() < margin {
            continue;
        }
        x.extend(p);
        y.push(usize::from(d > 0.0));
    }
    Dataset::new(Tensor2D::from_vec(n, 4, x).unwrap(), y, 2).unwrap()
}

/// Signed distance of each row from the [`SEPARATOR`] hyperplane.
pub fn separator_margins(d: &Dataset) -> Vec<f64> {
    let norm = SEPARATOR.iter().map(|v| v * v).sum::<f64>().sqrt();
    (0..d.len())
        .map(|r| d.features.row(r).iter().zip(SEPARATOR).map(|(a, b)| a * b).sum::<f64>() / norm)
        .collect()
}

/// Row-by-row `act(h·W + b)` with a max-shifted softmax.
pub fn forward_oracle(model: &MlpModel, x: &Tensor2D) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let mut h: Vec<f64> = x.row(r).to_vec();
        for layer in model.layers() {
            let (n, m) = (layer.fan_in(), layer.fan_out());
            let w = layer.weights.data();
            let mut z = vec![0.0; m];
            for j in 0..m {
                let mut s = layer.bias[j];
                for i in 0..n {
                    s += h[i] * w[i * m + j];
                }
                z[j] = s;
            }
            match layer.activation {
                Activation::Relu => z.iter_mut().for_each(|v| *v = v.max(0.0)),
                Activation::None => {}
                Activation::Softmax => {
                    let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
                    let s: f64 = e.iter().sum();
                    z = e.into_iter().map(|v| v / s).collect();
                }
            }
            h = z;
        }
        out.push(h);
    }
    out
}

/// Maximum-likelihood class under the generator's own equal-weight
/// two-component unit-covariance mixtures (equal priors).
pub fn bayes_predict(x: &[f64]) -> usize {
    let means = synthetic_component_means();
    let mut best = (f64::NEG_INFINITY, 0);
    for (c, comps) in means.iter().enumerate().take(NUM_CLASSES) {
        let d: Vec<f64> = comps
            .iter()
            .map(|mu| -0.5 * x.iter().zip(mu).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .collect();
        let mx = d[0].max(d[1]);
        let ll = mx + ((d[0] - mx).exp() + (d[1] - mx).exp()).ln();
        if ll > best.0 {
            best = (ll, c);
        }
    }
    best.1
}

/// Symmetric per-tensor fake quantization error `Σ (S·q − w)²`, with
/// `S = 2·max|w| / (2^b − 1)` and `q` rounded half-to-even into
/// `[−2^(b−1), 2^(b−1) − 1]`.
pub fn perturbation_oracle(w: &[f64], bits: u32) -> f64 {
    let beta = w.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let beta = if beta == 0.0 { 1.0 } else { beta };
    let levels = 2f64.powi(bits as i32) - 1.0;
    let s = 2.0 * beta / levels;
    let lo = -(2f64.powi(bits as i32 - 1));
    let hi = 2f64.powi(bits as i32 - 1) - 1.0;
    w.iter()
        .map(|&v| {
            let q = (v / s).round_ties_even().clamp(lo, hi);
            (s * q - v).powi(2)
        })
        .sum()
}

/// `m·n·((1 − f)·b_a·b_W + b_a + b_W + log2 n)`.
pub fn bops_oracle(n: usize, m: usize, ba: u32, bw: u32, f: f64) -> f64 {
    (m * n) as f64 * ((1.0 - f) * (ba * bw) as f64 + (ba + bw) as f64 + (n as f64).log2())
}

pub struct ScanResult {
    pub bits: Vec<u32>,
    pub omega: f64,
    pub bops: f64,
    pub feasible: bool,
    pub min_bops: f64,
}

/// Visits every per-layer assignment from `candidates` and keeps the
/// feasible one with the smallest `(Ω, BOPs, bits)`.
#[allow(clippy::too_many_arguments)]
pub fn exhaustive_scan(
    dims: &[(usize, usize)],
    sparsity: &[f64],
    traces: &[f64],
    weights: &[Vec<f64>],
    candidates: &[u32],
    act_offset: u32,
    input_bits: u32,
    budget: f64,
) -> ScanResult {
    let layers = dims.len();
    let k = candidates.len();
    let pert: Vec<Vec<f64>> = weights
        .iter()
        .map(|w| candidates.iter().map(|&b| perturbation_oracle(w, b)).collect())
        .collect();
    let total = k.pow(layers as u32);
    let mut best: Option<(f64, f64, Vec<u32>)> = None;
    let mut min_bops = f64::INFINITY;
    for id in 0..total {
        let mut idx = vec![0; layers];
        let mut rem = id;
        for l in (0..layers).rev() {
            idx[l] = rem % k;
            rem /= k;
        }
        let bits: Vec<u32> = idx.iter().map(|&i| candidates[i]).collect();
        let mut bops = 0.0;
        let mut omega = 0.0;
        for l in 0..layers {
            let ba = if l == 0 { input_bits } else { bits[l - 1] + act_offset };
            bops += bops_oracle(dims[l].0, dims[l].1, ba, bits[l], sparsity[l]);
            omega += traces[l] * pert[l][idx[l]];
        }
        min_bops = min_bops.min(bops);
        if bops > budget {
            continue;
        }
        let cand = (omega, bops, bits);
        let replace = match &best {
            None => true,
            Some(b) => (cand.0, cand.1) < (b.0, b.1) || ((cand.0, cand.1) == (b.0, b.1) && cand.2 < b.2),
        };
        if replace {
            best = Some(cand);
        }
    }
    match best {
        Some((omega, bops, bits)) => ScanResult {
            bits,
            omega,
            bops,
            feasible: true,
            min_bops,
        },
        None => ScanResult {
            bits: vec![candidates[0]; layers],
            omega: f64::NAN,
            bops: f64::NAN,
            feasible: false,
            min_bops,
        },
    }
}

/// Input codes `clip(round_half_even(x/S))` at the model's signed input width.
pub fn input_codes_oracle(im: &IntegerModel, x: &Tensor2D) -> Vec<i64> {
    let b = im.input.bits as i32;
    let (lo, hi) = (-(2f64.powi(b - 1)), 2f64.powi(b - 1) - 1.0);
    x.data()
        .iter()
        .map(|&v| (v / im.input.scale).round_ties_even().clamp(lo, hi) as i64)
        .collect()
}

/// Arbitrary-precision evaluation of the integer pipeline:
/// `acc = b + Σ q_h·q_W`; hidden layers apply `max(acc, 0)`, then
/// `(acc·m + 2^(c−1)) >> c` and clip to `2^(b_a) − 1`; the last layer
/// returns `acc`.
pub fn bigint_logits(im: &IntegerModel, qx: &[i64], rows: usize) -> Vec<BigInt> {
    let mut h: Vec<BigInt> = qx.iter().map(|&v| BigInt::from(v)).collect();
    let last = im.layers.len() - 1;
    for (l, layer) in im.layers.iter().enumerate() {
        let (n, m) = (layer.fan_in, layer.fan_out);
        let mut out = Vec::with_capacity(rows * m);
        for r in 0..rows {
            for j in 0..m {
                let mut acc = BigInt::from(layer.bias[j]);
                for i in 0..n {
                    acc += &h[r * n + i] * BigInt::from(layer.weights[i * m + j]);
                }
                if l < last {
                    let d = layer.requant.unwrap();
                    let bits = layer.act_bits.unwrap();
                    let zero = BigInt::from(0);
                    let a = if acc > zero { acc } else { zero };
                    let mut q = a * BigInt::from(d.mantissa);
                    if d.shift > 0 {
                        q = (q + (BigInt::from(1) << (d.shift - 1))) >> d.shift;
                    }
                    let cap = (BigInt::from(1) << bits) - 1;
                    acc = if q > cap { cap } else { q };
                }
                out.push(acc);
            }
        }
        h = out;
    }
    h
}

/// Uniform random standardized-scale inputs in `[-4, 4]`.
pub fn random_inputs(rows: usize, cols: usize, seed: u64) -> Tensor2D {
    let mut r = rng(seed);
    Tensor2D::from_vec(rows, cols, (0..rows * cols).map(|_| r.gen_range(-4.0..4.0)).collect()).unwrap()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            r[k] = avg;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = ra.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// A 4→3→2 model trained on overlapping blobs, with its training batch.
pub fn trained_toy(seed: u64) -> (MlpModel, Dataset) {
    use mpq_core::nn::{train, TrainConfig};
    let data = blobs(200, 0.8, seed);
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 150,
        batch_size: 32,
        seed,
        ..TrainConfig::default()
    };
    let (m, _) = train(&MlpModel::random(&[4, 3, 2], seed).unwrap(), &data, None, &cfg).unwrap();
    (m, data)
}
