use std::collections::BTreeMap;

use crate::error::Result;
use crate::qir::graph::{ElemKind, IrGraph, IrNode, Op, QuantAttrs, Rounding, Tensor, TensorInfo};
use crate::qir::shape::{infer_shapes, validate};
use crate::quant::IntegerModel;
use crate::tensor::Tensor2D;

pub const INPUT: &str = "x";
pub const Q_LOGITS: &str = "q_logits";
pub const LOGITS: &str = "logits";
pub const PROBS: &str = "probs";

/// Builds the unoptimized graph of a lowered model.
///
/// Input: `Quant(x)` at the input width. Hidden layer `l`:
/// `Quant(W) → MatMul → Add(bias) → Mul(mantissa) → Relu → Mul(2^-shift) →
/// Quant(b_a, unsigned, half-up)`. Output layer: `Quant(W) → MatMul →
/// Add(bias)` yielding `q_logits`, then `Mul(S_W·S_h)` for `logits` and
/// `Softmax` for `probs`. Weights are stored as `S_W·q_W` and re-quantized
/// by the graph.
pub fn export_graph(im: &IntegerModel) -> Result<IrGraph> {
    im.verify()?;
    let mut g = IrGraph::new(vec![INPUT.into()], vec![Q_LOGITS.into(), LOGITS.into(), PROBS.into()]);
    g.tensors.insert(
        INPUT.into(),
        TensorInfo {
            kind: ElemKind::Real,
            shape: Some(vec![-1, im.input_width() as i64]),
        },
    );
    let init = |g: &mut IrGraph, name: &str, t: Tensor| {
        g.initializers.insert(name.to_string(), t);
    };
    init(&mut g, "zero", Tensor::int_scalar(0));
    init(&mut g, "in_scale", Tensor::real_scalar(im.input.scale));
    g.nodes.push(IrNode::new(
        "quant_in",
        Op::Quant(QuantAttrs {
            bits: im.input.bits,
            signed: true,
            narrow: false,
            rounding: Rounding::HalfEven,
        }),
        &[INPUT, "in_scale", "zero"],
        "x_q",
    ));
    let last = im.layers.len() - 1;
    let mut h = "x_q".to_string();
    for (l, layer) in im.layers.iter().enumerate() {
        let p = |s: &str| format!("l{l}_{s}");
        let wf: Vec<f64> = layer.weights.iter().map(|&q| layer.weight_scale * q as f64).collect();
        init(&mut g, &p("w"), Tensor::real(vec![layer.fan_in, layer.fan_out], wf)?);
        init(&mut g, &p("w_scale"), Tensor::real_scalar(layer.weight_scale));
        init(
            &mut g,
            &p("bias"),
            Tensor::int(vec![layer.fan_out], layer.bias.clone())?,
        );
        let wq = QuantAttrs {
            bits: layer.weight_bits,
            signed: true,
            narrow: false,
            rounding: Rounding::HalfEven,
        };
        g.nodes.push(IrNode::new(
            p("quant_w"),
            Op::Quant(wq),
            &[&p("w"), &p("w_scale"), "zero"],
            p("w_q"),
        ));
        g.nodes
            .push(IrNode::new(p("matmul"), Op::MatMul, &[&h, &p("w_q")], p("acc")));
        let acc_out = if l == last { Q_LOGITS.to_string() } else { p("acc_b") };
        g.nodes.push(IrNode::new(
            p("add_bias"),
            Op::Add,
            &[&p("acc"), &p("bias")],
            acc_out.clone(),
        ));
        if l == last {
            init(&mut g, "out_scale", Tensor::real_scalar(im.output_scale));
            g.nodes
                .push(IrNode::new("mul_out_scale", Op::Mul, &[Q_LOGITS, "out_scale"], LOGITS));
            g.nodes.push(IrNode::new("softmax", Op::Softmax, &[LOGITS], PROBS));
            break;
        }
        let d = layer.requant.expect("verified hidden layer");
        let bits = layer.act_bits.expect("verified hidden layer");
        init(&mut g, &p("mantissa"), Tensor::int_scalar(d.mantissa as i128));
        init(&mut g, &p("shift"), Tensor::real_scalar(2f64.powi(-(d.shift as i32))));
        init(&mut g, &p("one"), Tensor::real_scalar(1.0));
        g.nodes.push(IrNode::new(
            p("mul_mantissa"),
            Op::Mul,
            &[&acc_out, &p("mantissa")],
            p("scaled"),
        ));
        g.nodes
            .push(IrNode::new(p("relu"), Op::Relu, &[&p("scaled")], p("relu")));
        g.nodes.push(IrNode::new(
            p("mul_shift"),
            Op::Mul,
            &[&p("relu"), &p("shift")],
            p("real"),
        ));
        let aq = QuantAttrs {
            bits,
            signed: false,
            narrow: false,
            rounding: Rounding::HalfUp,
        };
        g.nodes.push(IrNode::new(
            p("quant_a"),
            Op::Quant(aq),
            &[&p("real"), &p("one"), "zero"],
            p("q"),
        ));
        h = p("q");
    }
    let g = infer_shapes(&g)?;
    validate(&g)?;
    Ok(g)
}

/// Runs `g` on a batch of features bound to the graph input.
pub fn run_graph(g: &IrGraph, x: &Tensor2D) -> Result<BTreeMap<String, Tensor>> {
    let t = Tensor::real(vec![x.rows(), x.cols()], x.data().to_vec())?;
    crate::qir::eval::evaluate(g, &BTreeMap::from([(INPUT.to_string(), t)]))
}
