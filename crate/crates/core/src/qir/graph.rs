use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const IR_VERSION: u32 = 1;

/// Element type of a graph tensor. Integers without a width are exact
/// accumulators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ElemKind {
    Real,
    Int {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        bits: Option<u32>,
        signed: bool,
    },
}

impl ElemKind {
    pub fn is_int(&self) -> bool {
        matches!(self, ElemKind::Int { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorInfo {
    pub kind: ElemKind,
    /// `-1` marks a dynamic (batch) dimension.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shape: Option<Vec<i64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TensorData {
    Real(Vec<f64>),
    Int(Vec<i128>),
}

/// Dense row-major tensor, used both for constants and runtime values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

impl Tensor {
    pub fn real(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        Self::checked(shape, TensorData::Real(data))
    }

    pub fn int(shape: Vec<usize>, data: Vec<i128>) -> Result<Self> {
        Self::checked(shape, TensorData::Int(data))
    }

    pub fn real_scalar(v: f64) -> Self {
        Self {
            shape: vec![],
            data: TensorData::Real(vec![v]),
        }
    }

    pub fn int_scalar(v: i128) -> Self {
        Self {
            shape: vec![],
            data: TensorData::Int(vec![v]),
        }
    }

    fn checked(shape: Vec<usize>, data: TensorData) -> Result<Self> {
        let t = Self { shape, data };
        if t.len() != t.shape.iter().product::<usize>() {
            return Err(Error::Graph(format!(
                "tensor data length {} does not match shape {:?}",
                t.len(),
                t.shape
            )));
        }
        Ok(t)
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::Real(v) => v.len(),
            TensorData::Int(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_int(&self) -> bool {
        matches!(self.data, TensorData::Int(_))
    }

    /// Values as reals (integers converted).
    pub fn to_real(&self) -> Vec<f64> {
        match &self.data {
            TensorData::Real(v) => v.clone(),
            TensorData::Int(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }

    pub fn as_int(&self) -> Option<&[i128]> {
        match &self.data {
            TensorData::Int(v) => Some(v),
            TensorData::Real(_) => None,
        }
    }

    pub fn as_real(&self) -> Option<&[f64]> {
        match &self.data {
            TensorData::Real(v) => Some(v),
            TensorData::Int(_) => None,
        }
    }

    /// The single element of a one-element tensor, as a real.
    pub fn scalar(&self) -> Option<f64> {
        (self.len() == 1).then(|| self.to_real()[0])
    }

    pub fn kind(&self) -> ElemKind {
        match self.data {
            TensorData::Real(_) => ElemKind::Real,
            TensorData::Int(_) => ElemKind::Int {
                bits: None,
                signed: true,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    HalfEven,
    /// `floor(v + 0.5)`.
    HalfUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuantAttrs {
    pub bits: u32,
    pub signed: bool,
    /// Drops the most negative code when set.
    pub narrow: bool,
    pub rounding: Rounding,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Inputs: data, scale, zero point.
    Quant(QuantAttrs),
    MatMul,
    Add,
    Mul,
    Relu,
    /// Over the last axis.
    Softmax,
    Constant(Tensor),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Quant(_) => "Quant",
            Op::MatMul => "MatMul",
            Op::Add => "Add",
            Op::Mul => "Mul",
            Op::Relu => "Relu",
            Op::Softmax => "Softmax",
            Op::Constant(_) => "Constant",
        }
    }

    pub fn arity(&self) -> usize {
        match self {
            Op::Quant(_) => 3,
            Op::MatMul | Op::Add | Op::Mul => 2,
            Op::Relu | Op::Softmax => 1,
            Op::Constant(_) => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrNode {
    pub name: String,
    pub op: Op,
    pub inputs: Vec<String>,
    pub output: String,
}

impl IrNode {
    pub fn new(name: impl Into<String>, op: Op, inputs: &[&str], output: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            op,
            inputs: inputs.iter().map(|s| s.to_string()).collect(),
            output: output.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IrGraph {
    pub version: u32,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tensors: BTreeMap<String, TensorInfo>,
    pub initializers: BTreeMap<String, Tensor>,
    pub nodes: Vec<IrNode>,
}

/// On-disk node: the operator is a free string so unknown operators can be
/// reported by name instead of as a generic schema error.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNode {
    name: String,
    op: String,
    inputs: Vec<String>,
    output: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attrs: Option<QuantAttrs>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<Tensor>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGraph {
    version: u32,
    inputs: Vec<String>,
    outputs: Vec<String>,
    tensors: BTreeMap<String, TensorInfo>,
    initializers: BTreeMap<String, Tensor>,
    nodes: Vec<RawNode>,
}

impl From<&IrNode> for RawNode {
    fn from(n: &IrNode) -> Self {
        let (attrs, value) = match &n.op {
            Op::Quant(a) => (Some(*a), None),
            Op::Constant(t) => (None, Some(t.clone())),
            _ => (None, None),
        };
        RawNode {
            name: n.name.clone(),
            op: n.op.name().to_string(),
            inputs: n.inputs.clone(),
            output: n.output.clone(),
            attrs,
            value,
        }
    }
}

impl TryFrom<RawNode> for IrNode {
    type Error = Error;

    fn try_from(r: RawNode) -> Result<Self> {
        let missing = |what: &str| Error::Graph(format!("node '{}': {} requires `{what}`", r.name, r.op));
        let op = match r.op.as_str() {
            "Quant" => Op::Quant(r.attrs.ok_or_else(|| missing("attrs"))?),
            "MatMul" => Op::MatMul,
            "Add" => Op::Add,
            "Mul" => Op::Mul,
            "Relu" => Op::Relu,
            "Softmax" => Op::Softmax,
            "Constant" => Op::Constant(r.value.clone().ok_or_else(|| missing("value"))?),
            other => {
                return Err(Error::UnsupportedOperator {
                    op: other.to_string(),
                    node: r.name.clone(),
                })
            }
        };
        Ok(IrNode {
            name: r.name,
            op,
            inputs: r.inputs,
            output: r.output,
        })
    }
}

impl IrGraph {
    pub fn new(inputs: Vec<String>, outputs: Vec<String>) -> Self {
        Self {
            version: IR_VERSION,
            inputs,
            outputs,
            tensors: BTreeMap::new(),
            initializers: BTreeMap::new(),
            nodes: Vec::new(),
        }
    }

    /// Canonical JSON: fixed field order, sorted tensor and initializer
    /// tables, nodes in execution order.
    pub fn to_json(&self) -> Result<String> {
        let raw = RawGraph {
            version: self.version,
            inputs: self.inputs.clone(),
            outputs: self.outputs.clone(),
            tensors: self.tensors.clone(),
            initializers: self.initializers.clone(),
            nodes: self.nodes.iter().map(RawNode::from).collect(),
        };
        let mut s = serde_json::to_string_pretty(&raw)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawGraph = serde_json::from_str(text).map_err(|e| Error::Document {
            line: e.line(),
            column: e.column(),
            msg: e.to_string(),
        })?;
        if raw.version != IR_VERSION {
            return Err(Error::Graph(format!("unsupported graph version {}", raw.version)));
        }
        Ok(Self {
            version: raw.version,
            inputs: raw.inputs,
            outputs: raw.outputs,
            tensors: raw.tensors,
            initializers: raw.initializers,
            nodes: raw.nodes.into_iter().map(IrNode::try_from).collect::<Result<_>>()?,
        })
    }

    pub fn count_op(&self, name: &str) -> usize {
        self.nodes.iter().filter(|n| n.op.name() == name).count()
    }

    pub(crate) fn producer_index(&self) -> BTreeMap<&str, usize> {
        self.nodes
            .iter()
            .enumerate()
            .map(|(i, n)| (n.output.as_str(), i))
            .collect()
    }

    /// Number of node inputs (plus graph outputs) reading each tensor.
    pub(crate) fn use_counts(&self) -> BTreeMap<&str, usize> {
        let mut c = BTreeMap::new();
        for n in &self.nodes {
            for i in &n.inputs {
                *c.entry(i.as_str()).or_insert(0) += 1;
            }
        }
        for o in &self.outputs {
            *c.entry(o.as_str()).or_insert(0) += 1;
        }
        c
    }
}
