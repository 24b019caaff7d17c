//! Tape-based reverse-mode automatic differentiation over [`Tensor`]s.
//!
//! A [`Graph`] records every operation as it is evaluated (the forward pass
//! is eager), so node values are available immediately after each call.
//! [`Graph::backward`] then walks the tape once, in reverse, from a scalar
//! root and leaves `d root / d node` on every node that depends on a
//! parameter or on an input created with [`Graph::input_with_grad`].
//!
//! Only the primitives the networks and losses need are provided. All
//! matrix-shaped operations treat a tensor as `rows x cols` (see
//! [`Tensor::rows`]); there is no general broadcasting.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::AutodiffError;
use crate::tensor::Tensor;

/// Lower clamp applied inside [`Graph::log`].
pub const LOG_FLOOR: f64 = 1e-12;

/// Kind of a recorded operation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpKind {
    Input,
    Parameter,
    Affine,
    Relu,
    Sigmoid,
    SoftmaxRows,
    ConcatColumns,
    AbsDiff,
    Product,
    ReduceMean,
    ReduceSum,
    Log,
    Power,
    ScalarScale,
    ScalarAdd,
    Add,
    GatherRows,
}

impl OpKind {
    /// Every differentiable primitive, in a stable order.
    pub const DIFFERENTIABLE: [OpKind; 15] = [
        OpKind::Affine,
        OpKind::Relu,
        OpKind::Sigmoid,
        OpKind::SoftmaxRows,
        OpKind::ConcatColumns,
        OpKind::AbsDiff,
        OpKind::Product,
        OpKind::ReduceMean,
        OpKind::ReduceSum,
        OpKind::Log,
        OpKind::Power,
        OpKind::ScalarScale,
        OpKind::ScalarAdd,
        OpKind::Add,
        OpKind::GatherRows,
    ];

    pub fn name(self) -> &'static str {
        match self {
            OpKind::Input => "input",
            OpKind::Parameter => "parameter",
            OpKind::Affine => "affine",
            OpKind::Relu => "relu",
            OpKind::Sigmoid => "sigmoid",
            OpKind::SoftmaxRows => "softmax-rows",
            OpKind::ConcatColumns => "concat-columns",
            OpKind::AbsDiff => "elementwise-abs-diff",
            OpKind::Product => "elementwise-product",
            OpKind::ReduceMean => "reduce-mean",
            OpKind::ReduceSum => "reduce-sum",
            OpKind::Log => "log",
            OpKind::Power => "power",
            OpKind::ScalarScale => "scalar-scale",
            OpKind::ScalarAdd => "scalar-add",
            OpKind::Add => "add",
            OpKind::GatherRows => "gather-rows",
        }
    }

    pub fn from_name(name: &str) -> Option<OpKind> {
        Self::DIFFERENTIABLE
            .into_iter()
            .chain([OpKind::Input, OpKind::Parameter])
            .find(|k| k.name() == name)
    }
}

impl fmt::Display for OpKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Input,
    Parameter(String),
    Affine { x: NodeId, w: NodeId, b: NodeId },
    Relu(NodeId),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    ConcatColumns(NodeId, NodeId),
    AbsDiff(NodeId, NodeId),
    Product(NodeId, NodeId),
    ReduceMean(NodeId),
    ReduceSum(NodeId),
    Log(NodeId),
    Power(NodeId, f64),
    ScalarScale(NodeId, f64),
    ScalarAdd(NodeId),
    Add(NodeId, NodeId),
    GatherRows(NodeId, Vec<usize>),
}

impl Op {
    fn kind(&self) -> OpKind {
        match self {
            Op::Input => OpKind::Input,
            Op::Parameter(_) => OpKind::Parameter,
            Op::Affine { .. } => OpKind::Affine,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::SoftmaxRows(_) => OpKind::SoftmaxRows,
            Op::ConcatColumns(..) => OpKind::ConcatColumns,
            Op::AbsDiff(..) => OpKind::AbsDiff,
            Op::Product(..) => OpKind::Product,
            Op::ReduceMean(_) => OpKind::ReduceMean,
            Op::ReduceSum(_) => OpKind::ReduceSum,
            Op::Log(_) => OpKind::Log,
            Op::Power(..) => OpKind::Power,
            Op::ScalarScale(..) => OpKind::ScalarScale,
            Op::ScalarAdd(_) => OpKind::ScalarAdd,
            Op::Add(..) => OpKind::Add,
            Op::GatherRows(..) => OpKind::GatherRows,
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

type OpResult = Result<NodeId, AutodiffError>;

/// Recorded computation. Nodes are stored in evaluation order, which is a
/// topological order by construction.
#[derive(Debug, Clone, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    sign_fault: Option<OpKind>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    /// Test fixture: negates the backward rule of one primitive so that
    /// gradient checks can be shown to detect a broken derivative.
    #[doc(hidden)]
    pub fn inject_sign_error(&mut self, kind: OpKind) {
        self.sign_fault = Some(kind);
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn kind(&self, id: NodeId) -> OpKind {
        self.nodes[id.0].op.kind()
    }

    /// Gradient of the root with respect to `id`, once `backward` has run.
    pub fn grad(&self, id: NodeId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    /// Gradients of all parameter nodes, keyed by name. A parameter bound
    /// more than once has its contributions summed.
    pub fn parameter_grads(&self) -> BTreeMap<String, Vec<f64>> {
        let mut out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for (i, node) in self.nodes.iter().enumerate() {
            if let Op::Parameter(name) = &node.op {
                let g = match &self.grads.get(i) {
                    Some(Some(g)) => g.clone(),
                    _ => vec![0.0; node.value.len()],
                };
                match out.get_mut(name) {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, x)| *a += x),
                    None => {
                        out.insert(name.clone(), g);
                    }
                }
            }
        }
        out
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> OpResult {
        let id = self.nodes.len();
        if !value.is_finite() {
            return Err(AutodiffError::NumericOverflow {
                node: id,
                op: op.kind().name(),
            });
        }
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Ok(NodeId(id))
    }

    fn mismatch(&self, op: OpKind, detail: String) -> AutodiffError {
        AutodiffError::ShapeMismatch {
            node: self.nodes.len(),
            op: op.name(),
            detail,
        }
    }

    fn check_id(&self, id: NodeId, op: OpKind) -> Result<(), AutodiffError> {
        if id.0 >= self.nodes.len() {
            return Err(AutodiffError::State(format!(
                "{op}: node {} does not exist in this graph",
                id.0
            )));
        }
        Ok(())
    }

    fn needs(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Constant input; no gradient is tracked for it.
    pub fn input(&mut self, t: Tensor) -> OpResult {
        self.push(Op::Input, t, false)
    }

    /// Input whose gradient is reported after `backward`.
    pub fn input_with_grad(&mut self, t: Tensor) -> OpResult {
        self.push(Op::Input, t, true)
    }

    pub fn parameter(&mut self, name: &str, t: &Tensor) -> OpResult {
        let mut value = t.clone();
        value.zero_grad();
        self.push(Op::Parameter(name.to_string()), value, true)
    }

    /// `x W^T + b` with `x: n x in`, `W: out x in`, `b: out`.
    pub fn affine(&mut self, x: NodeId, w: NodeId, b: NodeId) -> OpResult {
        for id in [x, w, b] {
            self.check_id(id, OpKind::Affine)?;
        }
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 {
            return Err(self.mismatch(
                OpKind::Affine,
                format!("weight must be 2-D, got {:?}", wv.shape()),
            ));
        }
        let (out, inp) = (wv.shape()[0], wv.shape()[1]);
        if xv.cols() != inp {
            return Err(self.mismatch(
                OpKind::Affine,
                format!("input has {} columns, weight expects {inp}", xv.cols()),
            ));
        }
        if bv.len() != out {
            return Err(self.mismatch(
                OpKind::Affine,
                format!("bias has {} entries, expected {out}", bv.len()),
            ));
        }
        let n = xv.rows();
        let (xs, ws, bs) = (xv.values(), wv.values(), bv.values());
        let mut y = vec![0.0; n * out];
        for r in 0..n {
            let xr = &xs[r * inp..(r + 1) * inp];
            for o in 0..out {
                let wr = &ws[o * inp..(o + 1) * inp];
                let mut acc = 0.0;
                for k in 0..inp {
                    acc += xr[k] * wr[k];
                }
                y[r * out + o] = acc + bs[o];
            }
        }
        let t = Tensor::matrix(n, out, y).expect("affine output shape");
        let req = self.needs(&[x, w, b]);
        self.push(Op::Affine { x, w, b }, t, req)
    }

    fn unary(&mut self, a: NodeId, op: Op, f: impl Fn(f64) -> f64) -> OpResult {
        self.check_id(a, op.kind())?;
        let av = self.value(a);
        let vals: Vec<f64> = av.values().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(av.shape().to_vec(), vals).expect("same shape");
        let req = self.needs(&[a]);
        self.push(op, t, req)
    }

    pub fn relu(&mut self, a: NodeId) -> OpResult {
        self.unary(a, Op::Relu(a), |v| if v > 0.0 { v } else { 0.0 })
    }

    pub fn sigmoid(&mut self, a: NodeId) -> OpResult {
        self.unary(a, Op::Sigmoid(a), stable_sigmoid)
    }

    /// `ln(clamp(a, LOG_FLOOR, 1))`, intended for probabilities.
    pub fn log(&mut self, a: NodeId) -> OpResult {
        self.unary(a, Op::Log(a), |v| v.clamp(LOG_FLOOR, 1.0).ln())
    }

    pub fn power(&mut self, a: NodeId, exponent: f64) -> OpResult {
        self.unary(a, Op::Power(a, exponent), |v| v.powf(exponent))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> OpResult {
        self.unary(a, Op::ScalarScale(a, c), |v| c * v)
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> OpResult {
        self.unary(a, Op::ScalarAdd(a), |v| v + c)
    }

    /// Row-wise softmax, computed with the row maximum subtracted.
    pub fn softmax_rows(&mut self, a: NodeId) -> OpResult {
        self.check_id(a, OpKind::SoftmaxRows)?;
        let av = self.value(a);
        let c = av.cols();
        let mut out = av.values().to_vec();
        for row in out.chunks_mut(c) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let t = Tensor::new(av.shape().to_vec(), out).expect("same shape");
        let req = self.needs(&[a]);
        self.push(Op::SoftmaxRows(a), t, req)
    }

    pub fn concat_columns(&mut self, a: NodeId, b: NodeId) -> OpResult {
        self.check_id(a, OpKind::ConcatColumns)?;
        self.check_id(b, OpKind::ConcatColumns)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.rows() != bv.rows() {
            return Err(self.mismatch(
                OpKind::ConcatColumns,
                format!("row counts differ: {} vs {}", av.rows(), bv.rows()),
            ));
        }
        let (ca, cb) = (av.cols(), bv.cols());
        let mut out = Vec::with_capacity(av.len() + bv.len());
        for r in 0..av.rows() {
            out.extend_from_slice(av.row(r));
            out.extend_from_slice(bv.row(r));
        }
        let t = Tensor::matrix(av.rows(), ca + cb, out).expect("concat shape");
        let req = self.needs(&[a, b]);
        self.push(Op::ConcatColumns(a, b), t, req)
    }

    fn binary(&mut self, a: NodeId, b: NodeId, op: Op, f: impl Fn(f64, f64) -> f64) -> OpResult {
        let kind = op.kind();
        self.check_id(a, kind)?;
        self.check_id(b, kind)?;
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(self.mismatch(
                kind,
                format!("operand shapes differ: {:?} vs {:?}", av.shape(), bv.shape()),
            ));
        }
        let vals: Vec<f64> = av
            .values()
            .iter()
            .zip(bv.values())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(av.shape().to_vec(), vals).expect("same shape");
        let req = self.needs(&[a, b]);
        self.push(op, t, req)
    }

    /// Elementwise `|a - b|`.
    pub fn abs_diff(&mut self, a: NodeId, b: NodeId) -> OpResult {
        self.binary(a, b, Op::AbsDiff(a, b), |x, y| (x - y).abs())
    }

    /// Elementwise `a * b`.
    pub fn product(&mut self, a: NodeId, b: NodeId) -> OpResult {
        self.binary(a, b, Op::Product(a, b), |x, y| x * y)
    }

    /// Elementwise `a + b`.
    pub fn add(&mut self, a: NodeId, b: NodeId) -> OpResult {
        self.binary(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn reduce_sum(&mut self, a: NodeId) -> OpResult {
        self.check_id(a, OpKind::ReduceSum)?;
        let s: f64 = self.value(a).values().iter().sum();
        let req = self.needs(&[a]);
        self.push(Op::ReduceSum(a), Tensor::scalar(s), req)
    }

    pub fn reduce_mean(&mut self, a: NodeId) -> OpResult {
        self.check_id(a, OpKind::ReduceMean)?;
        let av = self.value(a);
        let s: f64 = av.values().iter().sum::<f64>() / av.len() as f64;
        let req = self.needs(&[a]);
        self.push(Op::ReduceMean(a), Tensor::scalar(s), req)
    }

    /// Rows of `a` selected by `idx` (repeats allowed).
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> OpResult {
        self.check_id(a, OpKind::GatherRows)?;
        let av = self.value(a);
        if idx.is_empty() {
            return Err(self.mismatch(OpKind::GatherRows, "no rows selected".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= av.rows()) {
            return Err(self.mismatch(
                OpKind::GatherRows,
                format!("row {bad} out of range for {} rows", av.rows()),
            ));
        }
        let t = av.select_rows(idx);
        let req = self.needs(&[a]);
        self.push(Op::GatherRows(a, idx.to_vec()), t, req)
    }

    /// Propagates `d root / d node` to every tracked node. Allowed once per
    /// recorded forward pass.
    pub fn backward(&mut self, root: NodeId) -> Result<(), AutodiffError> {
        if self.nodes.is_empty() || root.0 >= self.nodes.len() {
            return Err(AutodiffError::State(
                "backward called before any forward computation".into(),
            ));
        }
        if self.backward_done {
            return Err(AutodiffError::State(
                "backward already applied to this forward pass".into(),
            ));
        }
        let rv = &self.nodes[root.0].value;
        if !rv.is_scalar() {
            return Err(AutodiffError::NonScalarRoot {
                node: root.0,
                shape: rv.shape().to_vec(),
            });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                grads[i] = Some(g);
                continue;
            }
            let flip = self.sign_fault == Some(node.op.kind());
            let mut contributions = self.local_grads(i, &g);
            if flip {
                for (_, c) in contributions.iter_mut() {
                    c.iter_mut().for_each(|v| *v = -*v);
                }
            }
            for (parent, c) in contributions {
                if !self.nodes[parent.0].requires_grad {
                    continue;
                }
                match &mut grads[parent.0] {
                    Some(acc) => acc.iter_mut().zip(&c).for_each(|(a, x)| *a += x),
                    slot @ None => *slot = Some(c),
                }
            }
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Vector-Jacobian products of node `i` with upstream gradient `g`.
    fn local_grads(&self, i: usize, g: &[f64]) -> Vec<(NodeId, Vec<f64>)> {
        let node = &self.nodes[i];
        let y = node.value.values();
        match &node.op {
            Op::Input | Op::Parameter(_) => Vec::new(),
            Op::Affine { x, w, b } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                let (out, inp) = (wv.shape()[0], wv.shape()[1]);
                let n = xv.rows();
                let (xs, ws) = (xv.values(), wv.values());
                let mut res = Vec::with_capacity(3);
                if self.nodes[x.0].requires_grad {
                    let mut dx = vec![0.0; n * inp];
                    for r in 0..n {
                        let dxr = &mut dx[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let go = g[r * out + o];
                            if go == 0.0 {
                                continue;
                            }
                            let wr = &ws[o * inp..(o + 1) * inp];
                            for k in 0..inp {
                                dxr[k] += go * wr[k];
                            }
                        }
                    }
                    res.push((*x, dx));
                }
                if self.nodes[w.0].requires_grad {
                    let mut dw = vec![0.0; out * inp];
                    for r in 0..n {
                        let xr = &xs[r * inp..(r + 1) * inp];
                        for o in 0..out {
                            let go = g[r * out + o];
                            if go == 0.0 {
                                continue;
                            }
                            let dwr = &mut dw[o * inp..(o + 1) * inp];
                            for k in 0..inp {
                                dwr[k] += go * xr[k];
                            }
                        }
                    }
                    res.push((*w, dw));
                }
                if self.nodes[b.0].requires_grad {
                    let mut db = vec![0.0; out];
                    for r in 0..n {
                        for o in 0..out {
                            db[o] += g[r * out + o];
                        }
                    }
                    res.push((*b, db));
                }
                res
            }
            Op::Relu(a) => {
                let av = self.value(*a).values();
                let d = av
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| if x > 0.0 { gi } else { 0.0 })
                    .collect();
                vec![(*a, d)]
            }
            Op::Sigmoid(a) => {
                let d = y.iter().zip(g).map(|(&s, &gi)| gi * s * (1.0 - s)).collect();
                vec![(*a, d)]
            }
            Op::SoftmaxRows(a) => {
                let c = node.value.cols();
                let mut d = vec![0.0; y.len()];
                for ((dr, yr), gr) in d.chunks_mut(c).zip(y.chunks(c)).zip(g.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for k in 0..c {
                        dr[k] = yr[k] * (gr[k] - dot);
                    }
                }
                vec![(*a, d)]
            }
            Op::ConcatColumns(a, b) => {
                let (ca, cb) = (self.value(*a).cols(), self.value(*b).cols());
                let mut da = Vec::with_capacity(self.value(*a).len());
                let mut db = Vec::with_capacity(self.value(*b).len());
                for gr in g.chunks(ca + cb) {
                    da.extend_from_slice(&gr[..ca]);
                    db.extend_from_slice(&gr[ca..]);
                }
                vec![(*a, da), (*b, db)]
            }
            Op::AbsDiff(a, b) => {
                let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                let da: Vec<f64> = av
                    .iter()
                    .zip(bv)
                    .zip(g)
                    .map(|((&x, &z), &gi)| {
                        let diff = x - z;
                        if diff > 0.0 {
                            gi
                        } else if diff < 0.0 {
                            -gi
                        } else {
                            0.0
                        }
                    })
                    .collect();
                let db = da.iter().map(|v| -v).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Product(a, b) => {
                let (av, bv) = (self.value(*a).values(), self.value(*b).values());
                let da = bv.iter().zip(g).map(|(z, gi)| z * gi).collect();
                let db = av.iter().zip(g).map(|(x, gi)| x * gi).collect();
                vec![(*a, da), (*b, db)]
            }
            Op::Add(a, b) => vec![(*a, g.to_vec()), (*b, g.to_vec())],
            Op::ReduceSum(a) => vec![(*a, vec![g[0]; self.value(*a).len()])],
            Op::ReduceMean(a) => {
                let n = self.value(*a).len();
                vec![(*a, vec![g[0] / n as f64; n])]
            }
            Op::Log(a) => {
                let av = self.value(*a).values();
                let d = av
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| {
                        if (LOG_FLOOR..=1.0).contains(&x) {
                            gi / x
                        } else {
                            0.0
                        }
                    })
                    .collect();
                vec![(*a, d)]
            }
            Op::Power(a, k) => {
                let k = *k;
                let av = self.value(*a).values();
                let d = av
                    .iter()
                    .zip(g)
                    .map(|(&x, &gi)| {
                        if k == 0.0 || (x == 0.0 && k < 1.0) {
                            0.0
                        } else {
                            gi * k * x.powf(k - 1.0)
                        }
                    })
                    .collect();
                vec![(*a, d)]
            }
            Op::ScalarScale(a, c) => vec![(*a, g.iter().map(|v| c * v).collect())],
            Op::ScalarAdd(a) => vec![(*a, g.to_vec())],
            Op::GatherRows(a, idx) => {
                let src = self.value(*a);
                let c = src.cols();
                let mut d = vec![0.0; src.len()];
                for (gr, &r) in g.chunks(c).zip(idx) {
                    d[r * c..(r + 1) * c]
                        .iter_mut()
                        .zip(gr)
                        .for_each(|(dv, gv)| *dv += gv);
                }
                vec![(*a, d)]
            }
        }
    }
}

pub(crate) fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
