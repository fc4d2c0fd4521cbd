use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::qir::eval::run_node;
use crate::qir::graph::{IrGraph, IrNode, Op, Tensor, TensorData};
use crate::qir::shape::{infer_shapes, validate};

fn drop_unused_initializers(g: &mut IrGraph) {
    let used: BTreeSet<String> = g
        .nodes
        .iter()
        .flat_map(|n| n.inputs.iter().cloned())
        .chain(g.outputs.iter().cloned())
        .collect();
    g.initializers.retain(|k, _| used.contains(k));
}

fn drop_dead_constants(g: &mut IrGraph) {
    loop {
        let uses = g.use_counts();
        let before = g.nodes.len();
        let dead: BTreeSet<String> = g
            .nodes
            .iter()
            .filter(|n| matches!(n.op, Op::Constant(_)) && !uses.contains_key(n.output.as_str()))
            .map(|n| n.name.clone())
            .collect();
        g.nodes.retain(|n| !dead.contains(&n.name));
        if g.nodes.len() == before {
            return;
        }
    }
}

/// Replaces every node whose inputs are all constant (initializers or
/// `Constant` outputs) with a `Constant` holding its value, then drops
/// initializers and constants nothing reads.
pub fn fold_constants(g: &IrGraph) -> Result<IrGraph> {
    let mut out = g.clone();
    let mut consts: BTreeMap<String, Tensor> = g.initializers.clone();
    for name in &g.inputs {
        consts.remove(name);
    }
    for n in &mut out.nodes {
        if let Op::Constant(t) = &n.op {
            consts.insert(n.output.clone(), t.clone());
            continue;
        }
        if !n.inputs.iter().all(|i| consts.contains_key(i)) {
            continue;
        }
        let args: Vec<&Tensor> = n.inputs.iter().map(|i| &consts[i]).collect();
        let value = run_node(&n.name, &n.op, &args)?;
        consts.insert(n.output.clone(), value.clone());
        n.op = Op::Constant(value);
        n.inputs.clear();
    }
    drop_dead_constants(&mut out);
    drop_unused_initializers(&mut out);
    infer_shapes(&out)
}

fn constant_value<'a>(g: &'a IrGraph, name: &str) -> Option<&'a Tensor> {
    g.initializers.get(name).or_else(|| {
        g.nodes.iter().find_map(|n| match &n.op {
            Op::Constant(t) if n.output == name => Some(t),
            _ => None,
        })
    })
}

/// Splits a `Mul` into (data input, positive constant scalar) when one side
/// qualifies.
fn scalar_operand<'a>(g: &'a IrGraph, n: &'a IrNode, need_positive: bool) -> Option<(&'a str, &'a Tensor)> {
    if !matches!(n.op, Op::Mul) || n.inputs.len() != 2 {
        return None;
    }
    for (d, s) in [(0, 1), (1, 0)] {
        if let Some(t) = constant_value(g, &n.inputs[s]) {
            if let Some(v) = t.scalar() {
                if !need_positive || v > 0.0 {
                    return Some((&n.inputs[d], t));
                }
            }
        }
    }
    None
}

fn product(a: &Tensor, b: &Tensor) -> Tensor {
    match (&a.data, &b.data) {
        (TensorData::Int(x), TensorData::Int(y)) => match x[0].checked_mul(y[0]) {
            Some(v) => Tensor::int_scalar(v),
            None => Tensor::real_scalar(x[0] as f64 * y[0] as f64),
        },
        _ => Tensor::real_scalar(a.scalar().expect("scalar") * b.scalar().expect("scalar")),
    }
}

/// Rewrites `Mul(s₁) → Relu → Mul(s₂)` into `Relu → Mul(s₁·s₂)` when `s₁` is
/// a positive constant scalar and `s₂` a constant scalar, using
/// `relu(s₁·x) = s₁·relu(x)`. Intermediate tensors must have no other
/// readers.
pub fn merge_scales_relu(g: &IrGraph) -> Result<IrGraph> {
    let mut out = g.clone();
    loop {
        let uses = out.use_counts();
        let producers = out.producer_index();
        let mut rewrite = None;
        for (ri, r) in out.nodes.iter().enumerate() {
            if !matches!(r.op, Op::Relu) || r.inputs.len() != 1 {
                continue;
            }
            let Some(&mi) = producers.get(r.inputs[0].as_str()) else {
                continue;
            };
            let Some((x, s1)) = scalar_operand(&out, &out.nodes[mi], true) else {
                continue;
            };
            if uses.get(r.inputs[0].as_str()) != Some(&1) || uses.get(r.output.as_str()) != Some(&1) {
                continue;
            }
            let Some(ci) = out.nodes.iter().position(|n| n.inputs.contains(&r.output)) else {
                continue;
            };
            let Some((_, s2)) = scalar_operand(&out, &out.nodes[ci], false) else {
                continue;
            };
            rewrite = Some((mi, ri, ci, x.to_string(), product(s1, s2)));
            break;
        }
        let Some((mi, ri, ci, x, merged)) = rewrite else { break };
        let mut name = format!("{}_scale", out.nodes[ci].name);
        while out.initializers.contains_key(&name) || out.tensors.contains_key(&name) {
            name.push('_');
        }
        out.initializers.insert(name.clone(), merged);
        let relu_out = out.nodes[ri].output.clone();
        out.nodes[ri].inputs = vec![x];
        out.nodes[ci].inputs = vec![relu_out, name];
        out.nodes.remove(mi);
    }
    drop_dead_constants(&mut out);
    drop_unused_initializers(&mut out);
    infer_shapes(&out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PassStat {
    pub pass: String,
    pub nodes: usize,
    pub mul_nodes: usize,
    pub constant_nodes: usize,
}

impl PassStat {
    fn of(pass: &str, g: &IrGraph) -> Self {
        Self {
            pass: pass.to_string(),
            nodes: g.nodes.len(),
            mul_nodes: g.count_op("Mul"),
            constant_nodes: g.count_op("Constant"),
        }
    }
}

/// Shape inference, constant folding and ReLU scale merging, validating
/// after each pass. Returns the graph and node counts before and after
/// every pass.
pub fn optimize(g: &IrGraph) -> Result<(IrGraph, Vec<PassStat>)> {
    validate(g)?;
    let mut stats = vec![PassStat::of("input", g)];
    let g = infer_shapes(g)?;
    validate(&g)?;
    stats.push(PassStat::of("infer_shapes", &g));
    let g = fold_constants(&g)?;
    validate(&g)?;
    stats.push(PassStat::of("fold_constants", &g));
    let g = merge_scales_relu(&g)?;
    validate(&g)?;
    stats.push(PassStat::of("merge_scales_relu", &g));
    Ok((g, stats))
}
