use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::qir::graph::{IrGraph, Op, QuantAttrs, Rounding, Tensor, TensorData};

/// Numpy-style broadcast of two shapes.
pub(crate) fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let da = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let db = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (da, db) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

/// Flat source offset of every output element for an operand of `shape`
/// broadcast to `out`.
fn broadcast_index(shape: &[usize], out: &[usize]) -> Vec<usize> {
    let rank = out.len();
    let pad = rank - shape.len();
    let mut strides = vec![0; rank];
    let mut s = 1;
    for i in (0..shape.len()).rev() {
        strides[pad + i] = if shape[i] == 1 { 0 } else { s };
        s *= shape[i];
    }
    let total: usize = out.iter().product();
    let mut idx = Vec::with_capacity(total);
    let mut coord = vec![0; rank];
    for _ in 0..total {
        idx.push(coord.iter().zip(&strides).map(|(c, s)| c * s).sum());
        for d in (0..rank).rev() {
            coord[d] += 1;
            if coord[d] < out[d] {
                break;
            }
            coord[d] = 0;
        }
    }
    idx
}

fn binary(
    node: &str,
    a: &Tensor,
    b: &Tensor,
    int_op: fn(i128, i128) -> Option<i128>,
    real_op: fn(f64, f64) -> f64,
) -> Result<Tensor> {
    let shape = broadcast_shape(&a.shape, &b.shape).ok_or_else(|| {
        Error::Graph(format!(
            "node '{node}': shapes {:?} and {:?} do not broadcast",
            a.shape, b.shape
        ))
    })?;
    let ia = broadcast_index(&a.shape, &shape);
    let ib = broadcast_index(&b.shape, &shape);
    match (&a.data, &b.data) {
        (TensorData::Int(x), TensorData::Int(y)) => {
            let data = ia
                .iter()
                .zip(&ib)
                .map(|(&i, &j)| {
                    int_op(x[i], y[j]).ok_or_else(|| Error::Graph(format!("node '{node}': integer overflow")))
                })
                .collect::<Result<_>>()?;
            Tensor::int(shape, data)
        }
        _ => {
            let (x, y) = (a.to_real(), b.to_real());
            Tensor::real(shape, ia.iter().zip(&ib).map(|(&i, &j)| real_op(x[i], y[j])).collect())
        }
    }
}

fn matmul(node: &str, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (&[r, n], &[n2, m]) = (a.shape.as_slice(), b.shape.as_slice()) else {
        return Err(Error::Graph(format!(
            "node '{node}': MatMul needs 2-D operands, got {:?} and {:?}",
            a.shape, b.shape
        )));
    };
    if n != n2 {
        return Err(Error::Graph(format!(
            "node '{node}': inner dimensions {n} and {n2} differ"
        )));
    }
    match (&a.data, &b.data) {
        (TensorData::Int(x), TensorData::Int(y)) => {
            let mut out = vec![0i128; r * m];
            for i in 0..r {
                for k in 0..n {
                    let xv = x[i * n + k];
                    for j in 0..m {
                        let p = xv
                            .checked_mul(y[k * m + j])
                            .and_then(|p| out[i * m + j].checked_add(p))
                            .ok_or_else(|| Error::Graph(format!("node '{node}': integer overflow")))?;
                        out[i * m + j] = p;
                    }
                }
            }
            Tensor::int(vec![r, m], out)
        }
        _ => {
            let (x, y) = (a.to_real(), b.to_real());
            let mut out = vec![0.0; r * m];
            crate::tensor::matmul_into(&x, &y, r, n, m, &mut out);
            Tensor::real(vec![r, m], out)
        }
    }
}

fn quant(node: &str, a: &QuantAttrs, x: &Tensor, scale: &Tensor, zp: &Tensor) -> Result<Tensor> {
    if !(2..=64).contains(&a.bits) {
        return Err(Error::Graph(format!(
            "node '{node}': Quant width {} unsupported",
            a.bits
        )));
    }
    let (mut lo, hi) = if a.signed {
        (-(1i128 << (a.bits - 1)), (1i128 << (a.bits - 1)) - 1)
    } else {
        (0, (1i128 << a.bits) - 1)
    };
    if a.narrow && a.signed {
        lo += 1;
    }
    let shape = broadcast_shape(&x.shape, &scale.shape)
        .and_then(|s| broadcast_shape(&s, &zp.shape))
        .ok_or_else(|| Error::Graph(format!("node '{node}': Quant operands do not broadcast")))?;
    let (xv, sv, zv) = (x.to_real(), scale.to_real(), zp.to_real());
    let (ix, is, iz) = (
        broadcast_index(&x.shape, &shape),
        broadcast_index(&scale.shape, &shape),
        broadcast_index(&zp.shape, &shape),
    );
    let mut out = Vec::with_capacity(ix.len());
    for k in 0..ix.len() {
        let s = sv[is[k]];
        if !(s > 0.0 && s.is_finite()) {
            return Err(Error::Graph(format!(
                "node '{node}': Quant scale must be finite and > 0"
            )));
        }
        let v = xv[ix[k]] / s - zv[iz[k]];
        if v.is_nan() {
            return Err(Error::Graph(format!("node '{node}': NaN input")));
        }
        let r = match a.rounding {
            Rounding::HalfEven => v.round_ties_even(),
            Rounding::HalfUp => (v + 0.5).floor(),
        };
        out.push((r.clamp(lo as f64, hi as f64) as i128).clamp(lo, hi));
    }
    Tensor::int(shape, out)
}

fn softmax(x: &Tensor) -> Result<Tensor> {
    let mut v = x.to_real();
    let last = *x.shape.last().unwrap_or(&1);
    if last > 0 {
        for row in v.chunks_mut(last) {
            crate::nn::softmax_in_place(row);
        }
    }
    Tensor::real(x.shape.clone(), v)
}

/// Executes one node on concrete operands.
pub fn run_node(node: &str, op: &Op, args: &[&Tensor]) -> Result<Tensor> {
    if args.len() != op.arity() {
        return Err(Error::Graph(format!(
            "node '{node}': {} takes {} inputs, got {}",
            op.name(),
            op.arity(),
            args.len()
        )));
    }
    match op {
        Op::Quant(a) => quant(node, a, args[0], args[1], args[2]),
        Op::MatMul => matmul(node, args[0], args[1]),
        Op::Add => binary(node, args[0], args[1], i128::checked_add, |x, y| x + y),
        Op::Mul => binary(node, args[0], args[1], i128::checked_mul, |x, y| x * y),
        Op::Relu => Ok(Tensor {
            shape: args[0].shape.clone(),
            data: match &args[0].data {
                TensorData::Int(v) => TensorData::Int(v.iter().map(|&x| x.max(0)).collect()),
                TensorData::Real(v) => TensorData::Real(v.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()),
            },
        }),
        Op::Softmax => softmax(args[0]),
        Op::Constant(t) => Ok(t.clone()),
    }
}

/// Reference interpreter. Runs nodes in list order and returns every
/// declared graph output.
pub fn evaluate(g: &IrGraph, inputs: &BTreeMap<String, Tensor>) -> Result<BTreeMap<String, Tensor>> {
    let mut env: BTreeMap<&str, &Tensor> = BTreeMap::new();
    for name in &g.inputs {
        let t = inputs
            .get(name)
            .ok_or_else(|| Error::Graph(format!("missing graph input '{name}'")))?;
        if let Some(info) = g.tensors.get(name) {
            if info.kind.is_int() != t.is_int() {
                return Err(Error::Graph(format!("input '{name}' has the wrong element kind")));
            }
            if let Some(shape) = &info.shape {
                let ok =
                    shape.len() == t.shape.len() && shape.iter().zip(&t.shape).all(|(&d, &s)| d < 0 || d as usize == s);
                if !ok {
                    return Err(Error::Graph(format!(
                        "input '{name}' has shape {:?}, declared {shape:?}",
                        t.shape
                    )));
                }
            }
        }
        env.insert(name, t);
    }
    for (name, t) in &g.initializers {
        env.entry(name).or_insert(t);
    }
    let mut produced: Vec<Tensor> = Vec::with_capacity(g.nodes.len());
    let mut slot: BTreeMap<&str, usize> = BTreeMap::new();
    for n in &g.nodes {
        let args = n
            .inputs
            .iter()
            .map(|i| {
                slot.get(i.as_str())
                    .map(|&k| &produced[k])
                    .or_else(|| env.get(i.as_str()).copied())
                    .ok_or_else(|| Error::Graph(format!("node '{}': input '{i}' is not available", n.name)))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = run_node(&n.name, &n.op, &args)?;
        produced.push(out);
        slot.insert(n.output.as_str(), produced.len() - 1);
    }
    let mut outs = BTreeMap::new();
    for o in &g.outputs {
        let t = match slot.get(o.as_str()) {
            Some(&k) => produced[k].clone(),
            None => (*env
                .get(o.as_str())
                .ok_or_else(|| Error::Graph(format!("graph output '{o}' is never produced")))?)
            .clone(),
        };
        outs.insert(o.clone(), t);
    }
    Ok(outs)
}
