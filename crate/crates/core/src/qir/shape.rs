use std::collections::{BTreeMap, BTreeSet};

use crate::error::{Error, Result};
use crate::qir::graph::{ElemKind, IrGraph, Op, TensorInfo};

fn broadcast_dims(a: &[i64], b: &[i64]) -> Option<Vec<i64>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            (-1, y) => y,
            (x, -1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn combine_kind(a: ElemKind, b: ElemKind) -> ElemKind {
    if a.is_int() && b.is_int() {
        ElemKind::Int {
            bits: None,
            signed: true,
        }
    } else {
        ElemKind::Real
    }
}

/// Rebuilds the tensor table with a concrete kind and shape for every tensor
/// that a node, input or initializer defines. Inputs keep their declared
/// entries.
pub fn infer_shapes(g: &IrGraph) -> Result<IrGraph> {
    let mut table: BTreeMap<String, TensorInfo> = BTreeMap::new();
    for i in &g.inputs {
        let info = g
            .tensors
            .get(i)
            .ok_or_else(|| Error::Graph(format!("graph input '{i}' has no declared type")))?;
        if info.shape.is_none() {
            return Err(Error::Graph(format!("graph input '{i}' has no declared shape")));
        }
        table.insert(i.clone(), info.clone());
    }
    for (name, t) in &g.initializers {
        table.insert(
            name.clone(),
            TensorInfo {
                kind: t.kind(),
                shape: Some(t.shape.iter().map(|&d| d as i64).collect()),
            },
        );
    }
    for n in &g.nodes {
        let arg = |k: usize| -> Result<(ElemKind, Vec<i64>)> {
            let name = n
                .inputs
                .get(k)
                .ok_or_else(|| Error::Graph(format!("node '{}': missing input {k}", n.name)))?;
            let info = table
                .get(name)
                .ok_or_else(|| Error::Graph(format!("node '{}': input '{name}' is undefined", n.name)))?;
            Ok((info.kind, info.shape.clone().unwrap_or_default()))
        };
        let mismatch = |what: String| Error::Graph(format!("node '{}': {what}", n.name));
        let (kind, shape) = match &n.op {
            Op::Quant(a) => {
                let (_, x) = arg(0)?;
                let (_, s) = arg(1)?;
                let (_, z) = arg(2)?;
                let sh = broadcast_dims(&x, &s)
                    .and_then(|v| broadcast_dims(&v, &z))
                    .ok_or_else(|| mismatch(format!("Quant operands {x:?}, {s:?}, {z:?} do not broadcast")))?;
                (
                    ElemKind::Int {
                        bits: Some(a.bits),
                        signed: a.signed,
                    },
                    sh,
                )
            }
            Op::MatMul => {
                let (ka, a) = arg(0)?;
                let (kb, b) = arg(1)?;
                let (&[r, n1], &[n2, m]) = (a.as_slice(), b.as_slice()) else {
                    return Err(mismatch(format!("MatMul needs 2-D operands, got {a:?} and {b:?}")));
                };
                if n1 >= 0 && n2 >= 0 && n1 != n2 {
                    return Err(mismatch(format!("MatMul inner dimensions {n1} and {n2} differ")));
                }
                (combine_kind(ka, kb), vec![r, m])
            }
            Op::Add | Op::Mul => {
                let (ka, a) = arg(0)?;
                let (kb, b) = arg(1)?;
                let sh = broadcast_dims(&a, &b)
                    .ok_or_else(|| mismatch(format!("shapes {a:?} and {b:?} do not broadcast")))?;
                (combine_kind(ka, kb), sh)
            }
            Op::Relu => arg(0)?,
            Op::Softmax => (ElemKind::Real, arg(0)?.1),
            Op::Constant(t) => (t.kind(), t.shape.iter().map(|&d| d as i64).collect()),
        };
        table.insert(
            n.output.clone(),
            TensorInfo {
                kind,
                shape: Some(shape),
            },
        );
    }
    let mut out = g.clone();
    out.tensors = table;
    Ok(out)
}

/// Finds one dependency cycle among nodes and returns its node names.
fn find_cycle(g: &IrGraph) -> Option<Vec<String>> {
    let producers = g.producer_index();
    let succ: Vec<Vec<usize>> = g
        .nodes
        .iter()
        .map(|n| {
            n.inputs
                .iter()
                .filter_map(|i| producers.get(i.as_str()).copied())
                .collect()
        })
        .collect();
    // 0 = unvisited, 1 = on stack, 2 = done
    let mut state = vec![0u8; g.nodes.len()];
    let mut stack: Vec<usize> = Vec::new();
    fn visit(v: usize, succ: &[Vec<usize>], state: &mut [u8], stack: &mut Vec<usize>) -> Option<Vec<usize>> {
        state[v] = 1;
        stack.push(v);
        for &w in &succ[v] {
            if state[w] == 1 {
                let pos = stack.iter().position(|&x| x == w).expect("on stack");
                return Some(stack[pos..].to_vec());
            }
            if state[w] == 0 {
                if let Some(c) = visit(w, succ, state, stack) {
                    return Some(c);
                }
            }
        }
        stack.pop();
        state[v] = 2;
        None
    }
    for v in 0..g.nodes.len() {
        if state[v] == 0 {
            if let Some(mut c) = visit(v, &succ, &mut state, &mut stack) {
                // Dependencies were followed backwards; report in data-flow order.
                c.reverse();
                return Some(c.into_iter().map(|i| g.nodes[i].name.clone()).collect());
            }
        }
    }
    None
}

/// All structural and shape problems, each naming the offending node or
/// tensor. Empty means the graph is valid.
pub fn diagnostics(g: &IrGraph) -> Vec<String> {
    let mut diags = Vec::new();
    let mut defined: BTreeSet<&str> = g.inputs.iter().map(String::as_str).collect();
    defined.extend(g.initializers.keys().map(String::as_str));
    let mut outputs: BTreeSet<&str> = BTreeSet::new();
    for n in &g.nodes {
        if defined.contains(n.output.as_str()) || !outputs.insert(n.output.as_str()) {
            diags.push(format!(
                "node '{}': output '{}' is defined more than once",
                n.name, n.output
            ));
        }
    }
    let all: BTreeSet<&str> = defined.union(&outputs).copied().collect();
    for n in &g.nodes {
        if n.inputs.len() != n.op.arity() {
            diags.push(format!(
                "node '{}': {} takes {} inputs, got {}",
                n.name,
                n.op.name(),
                n.op.arity(),
                n.inputs.len()
            ));
        }
        for i in &n.inputs {
            if !all.contains(i.as_str()) {
                diags.push(format!("node '{}': dangling tensor '{i}' (no producer)", n.name));
            }
        }
        if let Op::Quant(_) = n.op {
            if let Some(zp) = n.inputs.get(2).and_then(|z| g.initializers.get(z)) {
                if zp.to_real().iter().any(|&v| v != 0.0) {
                    diags.push(format!("node '{}': Quant zero point must be 0", n.name));
                }
            }
        }
    }
    for o in &g.outputs {
        if !all.contains(o.as_str()) {
            diags.push(format!("graph output '{o}' is never produced"));
        }
    }
    if let Some(cycle) = find_cycle(g) {
        let mut path = cycle.clone();
        path.push(cycle[0].clone());
        diags.push(format!("cycle: {}", path.join(" -> ")));
    } else {
        let mut seen = defined.clone();
        for n in &g.nodes {
            for i in &n.inputs {
                if outputs.contains(i.as_str()) && !seen.contains(i.as_str()) {
                    diags.push(format!("node '{}': reads '{i}' before it is produced", n.name));
                }
            }
            seen.insert(n.output.as_str());
        }
    }
    if diags.is_empty() {
        if let Err(e) = infer_shapes(g) {
            diags.push(e.to_string());
        }
    }
    diags
}

pub fn validate(g: &IrGraph) -> Result<()> {
    let d = diagnostics(g);
    if d.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(d))
    }
}
