use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::alloc::bops::{layer_bops, ArchSpec};
use crate::alloc::omega::perturbation;
use crate::error::{Error, Result};
use crate::quant::{QuantSchema, DEFAULT_ACT_OFFSET, DEFAULT_INPUT_BITS};

pub const DEFAULT_CANDIDATES: [u32; 5] = [4, 5, 6, 7, 8];

/// Spaces up to this size are enumerated outright.
const ENUMERATION_LIMIT: u128 = 200_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationProblem {
    pub arch: ArchSpec,
    /// Candidate weight widths per layer.
    pub candidates: Vec<Vec<u32>>,
    /// `b_a = b_W + act_offset`.
    pub act_offset: u32,
    pub input_bits: u32,
    /// Average Hessian trace per layer.
    pub traces: Vec<f64>,
    /// Float weights per layer.
    pub weights: Vec<Vec<f64>>,
    pub budget: f64,
}

impl AllocationProblem {
    /// Default candidates `{4..8}`, `b_a = b_W + 3`, 16-bit input.
    pub fn new(arch: ArchSpec, traces: Vec<f64>, weights: Vec<Vec<f64>>, budget: f64) -> Result<Self> {
        let layers = arch.layers();
        let p = Self {
            arch,
            candidates: vec![DEFAULT_CANDIDATES.to_vec(); layers],
            act_offset: DEFAULT_ACT_OFFSET,
            input_bits: DEFAULT_INPUT_BITS,
            traces,
            weights,
            budget,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_budget(&self, budget: f64) -> Result<Self> {
        let mut p = self.clone();
        p.budget = budget;
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        let l = self.arch.layers();
        if self.candidates.len() != l || self.traces.len() != l || self.weights.len() != l {
            return Err(Error::shape(format!(
                "{} layers, {} candidate sets, {} traces, {} weight tensors",
                l,
                self.candidates.len(),
                self.traces.len(),
                self.weights.len()
            )));
        }
        if self.candidates.iter().any(|c| c.is_empty()) {
            return Err(Error::domain("every layer needs at least one candidate width"));
        }
        for (i, (w, &(n, m))) in self.weights.iter().zip(&self.arch.dims).enumerate() {
            if w.len() != n * m {
                return Err(Error::shape(format!(
                    "layer {i}: {} weights for a {n}×{m} layer",
                    w.len()
                )));
            }
        }
        if self.traces.iter().any(|t| !t.is_finite()) {
            return Err(Error::domain("traces must be finite"));
        }
        if self.budget.is_nan() || self.budget <= 0.0 {
            return Err(Error::domain("BOPs budget must be > 0"));
        }
        Ok(())
    }

    pub fn schema(&self, weight_bits: &[u32]) -> Result<QuantSchema> {
        QuantSchema::coupled(weight_bits, self.act_offset, self.input_bits)
    }

    /// Total number of bit vectors in the search space.
    pub fn space_size(&self) -> u128 {
        self.candidates.iter().map(|c| c.len() as u128).product()
    }

    /// Bit vector for a mixed-radix index (last layer varies fastest).
    pub fn config(&self, mut index: u128) -> Vec<u32> {
        let mut bits = vec![0; self.candidates.len()];
        for (l, c) in self.candidates.iter().enumerate().rev() {
            bits[l] = c[(index % c.len() as u128) as usize];
            index /= c.len() as u128;
        }
        bits
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationSolution {
    pub weight_bits: Vec<u32>,
    pub act_bits: Vec<u32>,
    pub input_bits: u32,
    pub omega: f64,
    pub bops: f64,
    pub feasible: bool,
    /// `None` for an unbounded budget.
    pub budget: Option<f64>,
    /// Smallest BOPs in the search space.
    pub min_bops: f64,
}

impl AllocationSolution {
    pub fn schema(&self) -> Result<QuantSchema> {
        QuantSchema::new(self.weight_bits.clone(), self.act_bits.clone(), self.input_bits)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolveMethod {
    Auto,
    Enumerate,
    BranchAndBound,
}

/// Precomputed per-layer, per-candidate costs.
struct Tables {
    /// `omega[l][c] = trace_l · ‖Q(W_l) − W_l‖²` at candidate `c`.
    omega: Vec<Vec<f64>>,
    /// Activation width entering layer `l` when layer `l−1` takes candidate `p`.
    in_bits: Vec<Vec<u32>>,
}

impl Tables {
    fn new(p: &AllocationProblem) -> Result<Self> {
        let mut omega = Vec::with_capacity(p.candidates.len());
        for ((c, w), t) in p.candidates.iter().zip(&p.weights).zip(&p.traces) {
            omega.push(
                c.iter()
                    .map(|&b| Ok(t * perturbation(w, b)?))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let mut in_bits = vec![vec![p.input_bits]];
        for c in &p.candidates[..p.candidates.len() - 1] {
            in_bits.push(c.iter().map(|b| b + p.act_offset).collect());
        }
        Ok(Self { omega, in_bits })
    }

    fn layer_bops(&self, p: &AllocationProblem, l: usize, prev: usize, c: usize) -> Result<f64> {
        let (n, m) = p.arch.dims[l];
        let b_a = if l == 0 {
            self.in_bits[0][0]
        } else {
            self.in_bits[l][prev]
        };
        layer_bops(n, m, b_a, p.candidates[l][c], p.arch.sparsity[l])
    }
}

#[derive(Clone)]
struct Best {
    omega: f64,
    bops: f64,
    bits: Vec<u32>,
}

fn better(a: &Best, b: &Best) -> bool {
    let ord = a
        .omega
        .total_cmp(&b.omega)
        .then(a.bops.total_cmp(&b.bops))
        .then_with(|| a.bits.cmp(&b.bits));
    ord == Ordering::Less
}

/// Exact minimizer of Ω subject to `model_bops ≤ budget`.
pub fn solve_ilp(problem: &AllocationProblem) -> Result<AllocationSolution> {
    solve_ilp_with(problem, SolveMethod::Auto)
}

pub fn solve_ilp_with(problem: &AllocationProblem, method: SolveMethod) -> Result<AllocationSolution> {
    problem.validate()?;
    let t = Tables::new(problem)?;
    let min_idx: Vec<usize> = problem
        .candidates
        .iter()
        .map(|c| (0..c.len()).min_by_key(|&i| c[i]).expect("nonempty"))
        .collect();
    let min_bits: Vec<u32> = min_idx.iter().zip(&problem.candidates).map(|(&i, c)| c[i]).collect();
    let min_bops = config_bops(problem, &t, &min_idx)?;

    let method = match method {
        SolveMethod::Auto if problem.space_size() <= ENUMERATION_LIMIT => SolveMethod::Enumerate,
        SolveMethod::Auto => SolveMethod::BranchAndBound,
        m => m,
    };
    let best = match method {
        SolveMethod::Enumerate => enumerate(problem, &t)?,
        _ => {
            let mut s = Search {
                p: problem,
                t: &t,
                min_idx: &min_idx,
                best: None,
                idx: Vec::with_capacity(problem.candidates.len()),
            };
            s.dfs(0, 0.0, 0.0)?;
            s.best
        }
    };
    let (feasible, bits, omega, bops) = match best {
        Some(b) => (true, b.bits, b.omega, b.bops),
        None => {
            let omega = min_idx.iter().enumerate().map(|(l, &c)| t.omega[l][c]).sum();
            (false, min_bits, omega, min_bops)
        }
    };
    Ok(AllocationSolution {
        act_bits: bits.iter().map(|b| b + problem.act_offset).collect(),
        weight_bits: bits,
        input_bits: problem.input_bits,
        omega,
        bops,
        feasible,
        budget: problem.budget.is_finite().then_some(problem.budget),
        min_bops,
    })
}

fn config_bops(p: &AllocationProblem, t: &Tables, idx: &[usize]) -> Result<f64> {
    let mut total = 0.0;
    for l in 0..idx.len() {
        total += t.layer_bops(p, l, if l == 0 { 0 } else { idx[l - 1] }, idx[l])?;
    }
    Ok(total)
}

fn enumerate(p: &AllocationProblem, t: &Tables) -> Result<Option<Best>> {
    let radix: Vec<usize> = p.candidates.iter().map(|c| c.len()).collect();
    let mut idx = vec![0usize; radix.len()];
    let mut best: Option<Best> = None;
    loop {
        let bops = config_bops(p, t, &idx)?;
        if bops <= p.budget {
            let cand = Best {
                omega: idx.iter().enumerate().map(|(l, &c)| t.omega[l][c]).sum(),
                bops,
                bits: idx.iter().enumerate().map(|(l, &c)| p.candidates[l][c]).collect(),
            };
            if best.as_ref().is_none_or(|b| better(&cand, b)) {
                best = Some(cand);
            }
        }
        // Odometer increment, last layer fastest.
        let mut l = radix.len();
        loop {
            if l == 0 {
                return Ok(best);
            }
            l -= 1;
            idx[l] += 1;
            if idx[l] < radix[l] {
                break;
            }
            idx[l] = 0;
        }
    }
}

struct Search<'a> {
    p: &'a AllocationProblem,
    t: &'a Tables,
    min_idx: &'a [usize],
    best: Option<Best>,
    idx: Vec<usize>,
}

impl Search<'_> {
    /// Cheapest completion of layers `from..` after layer `from−1` took `prev`.
    /// BOPs grow with every width, so the all-minimum suffix is the bound.
    fn suffix_bops(&self, from: usize, prev: usize) -> Result<f64> {
        let mut total = 0.0;
        let mut p = prev;
        for l in from..self.p.candidates.len() {
            total += self.t.layer_bops(self.p, l, p, self.min_idx[l])?;
            p = self.min_idx[l];
        }
        Ok(total)
    }

    fn suffix_omega(&self, from: usize) -> f64 {
        self.t.omega[from..]
            .iter()
            .map(|row| row.iter().copied().fold(f64::INFINITY, f64::min))
            .sum()
    }

    fn dfs(&mut self, l: usize, omega: f64, bops: f64) -> Result<()> {
        let layers = self.p.candidates.len();
        if l == layers {
            let cand = Best {
                omega,
                bops,
                bits: self
                    .idx
                    .iter()
                    .enumerate()
                    .map(|(l, &c)| self.p.candidates[l][c])
                    .collect(),
            };
            if self.best.as_ref().is_none_or(|b| better(&cand, b)) {
                self.best = Some(cand);
            }
            return Ok(());
        }
        let prev = if l == 0 { 0 } else { self.idx[l - 1] };
        for c in 0..self.p.candidates[l].len() {
            let b = bops + self.t.layer_bops(self.p, l, prev, c)?;
            if b + self.suffix_bops(l + 1, c)? > self.p.budget {
                continue;
            }
            let o = omega + self.t.omega[l][c];
            if let Some(best) = &self.best {
                if o + self.suffix_omega(l + 1) > best.omega {
                    continue;
                }
            }
            self.idx.push(c);
            self.dfs(l + 1, o, b)?;
            self.idx.pop();
        }
        Ok(())
    }
}
