use std::collections::BTreeMap;

use super::array::RealArray;
use crate::error::{Error, Result};

/// Index of a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef(usize);

impl NodeRef {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Primitive operations the tape knows how to differentiate.
///
/// Vector ops (`Concat`, `Slice`, `Softmax`) act on rank-1 arrays; `MatMul`
/// accepts `[m, k] x [k]` and `[m, k] x [k, n]`.
///
/// `LstmCell` takes `[w_input, x, w_hidden, h_prev, bias, c_prev]` with
/// gate rows ordered `i, f, g, o` and yields `[h, c, i, f, g, o]`, each of
/// length `hidden`.
#[derive(Clone, Debug, PartialEq)]
pub enum OpKind {
    MatMul,
    Add,
    Mul,
    Sigmoid,
    Tanh,
    Log,
    Negate,
    Sum,
    Concat,
    Slice { start: usize, len: usize },
    Clamp { lo: f64, hi: f64 },
    Square,
    Softmax,
    LstmCell,
}

impl OpKind {
    fn name(&self) -> &'static str {
        match self {
            OpKind::MatMul => "matmul",
            OpKind::Add => "add",
            OpKind::Mul => "mul",
            OpKind::Sigmoid => "sigmoid",
            OpKind::Tanh => "tanh",
            OpKind::Log => "log",
            OpKind::Negate => "negate",
            OpKind::Sum => "sum",
            OpKind::Concat => "concat",
            OpKind::Slice { .. } => "slice",
            OpKind::Clamp { .. } => "clamp",
            OpKind::Square => "square",
            OpKind::Softmax => "softmax",
            OpKind::LstmCell => "lstm_cell",
        }
    }
}

#[derive(Clone, Debug)]
enum NodeKind {
    Constant,
    Param,
    Op(OpKind, Vec<NodeRef>),
}

#[derive(Clone, Debug)]
struct Node {
    kind: NodeKind,
    value: RealArray,
    requires_grad: bool,
}

/// Eager reverse-mode tape. Values are computed as ops are recorded; `backward`
/// walks the node list in reverse.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    adjoints: Vec<Option<RealArray>>,
}

/// Gradients of a scalar output with respect to every parameter leaf.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    by_node: BTreeMap<NodeRef, RealArray>,
}

impl Gradients {
    pub fn get(&self, node: NodeRef) -> Option<&RealArray> {
        self.by_node.get(&node)
    }

    pub fn take(&mut self, node: NodeRef) -> Option<RealArray> {
        self.by_node.remove(&node)
    }

    pub fn len(&self) -> usize {
        self.by_node.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_node.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&NodeRef, &RealArray)> {
        self.by_node.iter()
    }
}

fn mismatch(op: &'static str, a: &RealArray, b: &RealArray) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn constant(&mut self, value: RealArray) -> NodeRef {
        self.push(NodeKind::Constant, value, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: RealArray) -> NodeRef {
        self.push(NodeKind::Param, value, true)
    }

    pub fn value(&self, node: NodeRef) -> &RealArray {
        &self.nodes[node.0].value
    }

    /// Adjoint populated by the last `backward` call; `None` when the node
    /// does not influence the output through any parameter.
    pub fn adjoint(&self, node: NodeRef) -> Option<&RealArray> {
        self.adjoints.get(node.0).and_then(Option::as_ref)
    }

    fn push(&mut self, kind: NodeKind, value: RealArray, requires_grad: bool) -> NodeRef {
        self.nodes.push(Node {
            kind,
            value,
            requires_grad,
        });
        NodeRef(self.nodes.len() - 1)
    }

    /// Evaluate `kind` on `inputs` and append the result.
    pub fn record(&mut self, kind: OpKind, inputs: &[NodeRef]) -> Result<NodeRef> {
        let op = kind.name();
        let arity = match kind {
            OpKind::MatMul | OpKind::Add | OpKind::Mul => Some(2),
            OpKind::LstmCell => Some(6),
            OpKind::Concat => None,
            _ => Some(1),
        };
        if let Some(n) = arity {
            if inputs.len() != n {
                return Err(Error::InvalidOp {
                    op,
                    msg: format!("expected {n} inputs, got {}", inputs.len()),
                });
            }
        }
        if inputs.is_empty() {
            return Err(Error::InvalidOp {
                op,
                msg: "no inputs".into(),
            });
        }
        for r in inputs {
            if r.0 >= self.nodes.len() {
                return Err(Error::InvalidOp {
                    op,
                    msg: format!("node {} is not on the tape", r.0),
                });
            }
        }
        let val = |i: usize| &self.nodes[inputs[i].0].value;
        let value = match &kind {
            OpKind::MatMul => matmul_forward(val(0), val(1))?,
            OpKind::Add => {
                if val(0).shape() != val(1).shape() {
                    return Err(mismatch(op, val(0), val(1)));
                }
                val(0).zip_map(val(1), |a, b| a + b)
            }
            OpKind::Mul => {
                if val(0).shape() != val(1).shape() {
                    return Err(mismatch(op, val(0), val(1)));
                }
                val(0).zip_map(val(1), |a, b| a * b)
            }
            OpKind::Sigmoid => val(0).map(sigmoid),
            OpKind::Tanh => val(0).map(f64::tanh),
            OpKind::Log => {
                if val(0).data().iter().any(|&v| v <= 0.0) {
                    return Err(Error::InvalidOp {
                        op,
                        msg: "argument must be positive".into(),
                    });
                }
                val(0).map(f64::ln)
            }
            OpKind::Negate => val(0).map(|v| -v),
            OpKind::Sum => RealArray::scalar(val(0).data().iter().sum()),
            OpKind::Concat => {
                let mut data = Vec::new();
                for r in inputs {
                    let v = &self.nodes[r.0].value;
                    if v.shape().len() != 1 {
                        return Err(Error::InvalidOp {
                            op,
                            msg: format!("expected rank-1 inputs, got {:?}", v.shape()),
                        });
                    }
                    data.extend_from_slice(v.data());
                }
                RealArray::vector(data)
            }
            OpKind::Slice { start, len } => {
                let v = val(0);
                if v.shape().len() != 1 || start + len > v.len() {
                    return Err(Error::InvalidOp {
                        op,
                        msg: format!("range {start}..{} out of bounds for {:?}", start + len, v.shape()),
                    });
                }
                RealArray::vector(v.data()[*start..start + len].to_vec())
            }
            OpKind::Clamp { lo, hi } => {
                if lo > hi {
                    return Err(Error::InvalidOp {
                        op,
                        msg: format!("lo {lo} > hi {hi}"),
                    });
                }
                val(0).map(|v| v.clamp(*lo, *hi))
            }
            OpKind::Square => val(0).map(|v| v * v),
            OpKind::Softmax => {
                let v = val(0);
                if v.shape().len() != 1 {
                    return Err(Error::InvalidOp {
                        op,
                        msg: format!("expected rank-1 input, got {:?}", v.shape()),
                    });
                }
                let m = v.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = v.data().iter().map(|x| (x - m).exp()).collect();
                let s: f64 = e.iter().sum();
                RealArray::vector(e.into_iter().map(|x| x / s).collect())
            }
            OpKind::LstmCell => lstm_forward(val(0), val(1), val(2), val(3), val(4), val(5))?,
        };
        let requires_grad = inputs.iter().any(|r| self.nodes[r.0].requires_grad);
        Ok(self.push(NodeKind::Op(kind, inputs.to_vec()), value, requires_grad))
    }

    pub fn matmul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.record(OpKind::MatMul, &[a, b])
    }

    pub fn add(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.record(OpKind::Add, &[a, b])
    }

    pub fn mul(&mut self, a: NodeRef, b: NodeRef) -> Result<NodeRef> {
        self.record(OpKind::Mul, &[a, b])
    }

    pub fn sigmoid(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.record(OpKind::Sigmoid, &[a])
    }

    pub fn tanh(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.record(OpKind::Tanh, &[a])
    }

    pub fn log(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.record(OpKind::Log, &[a])
    }

    pub fn negate(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.record(OpKind::Negate, &[a])
    }

    pub fn sum(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.record(OpKind::Sum, &[a])
    }

    pub fn concat(&mut self, parts: &[NodeRef]) -> Result<NodeRef> {
        self.record(OpKind::Concat, parts)
    }

    pub fn slice(&mut self, a: NodeRef, start: usize, len: usize) -> Result<NodeRef> {
        self.record(OpKind::Slice { start, len }, &[a])
    }

    pub fn clamp(&mut self, a: NodeRef, lo: f64, hi: f64) -> Result<NodeRef> {
        self.record(OpKind::Clamp { lo, hi }, &[a])
    }

    pub fn square(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.record(OpKind::Square, &[a])
    }

    pub fn softmax(&mut self, a: NodeRef) -> Result<NodeRef> {
        self.record(OpKind::Softmax, &[a])
    }

    /// Fused LSTM step; see [`OpKind::LstmCell`] for the input and output layout.
    pub fn lstm_cell(
        &mut self,
        w_input: NodeRef,
        x: NodeRef,
        w_hidden: NodeRef,
        h_prev: NodeRef,
        bias: NodeRef,
        c_prev: NodeRef,
    ) -> Result<NodeRef> {
        self.record(OpKind::LstmCell, &[w_input, x, w_hidden, h_prev, bias, c_prev])
    }

    /// `1 - a`, built from primitives.
    pub fn one_minus(&mut self, a: NodeRef) -> Result<NodeRef> {
        let ones = self.constant(RealArray::filled(self.value(a).shape(), 1.0));
        let neg = self.negate(a)?;
        self.add(ones, neg)
    }

    /// Elementwise product with a constant array of the same shape.
    pub fn scale_by(&mut self, a: NodeRef, weights: RealArray) -> Result<NodeRef> {
        let w = self.constant(weights);
        self.mul(a, w)
    }

    /// Reverse pass from a scalar `output`. Populates adjoints for every node
    /// that depends on a parameter and returns `d output / d param` for each
    /// parameter leaf.
    pub fn backward(&mut self, output: NodeRef) -> Result<Gradients> {
        let out_val = &self.nodes[output.0].value;
        if !out_val.is_scalar() {
            return Err(Error::NonScalarOutput(out_val.shape().to_vec()));
        }
        let mut adj: Vec<Option<RealArray>> = vec![None; self.nodes.len()];
        adj[output.0] = Some(RealArray::filled(out_val.shape(), 1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let (kind, inputs) = match &node.kind {
                NodeKind::Op(kind, inputs) => (kind, inputs),
                _ => continue,
            };
            let Some(g) = adj[idx].take() else {
                continue;
            };
            let wants = |r: &NodeRef| self.nodes[r.0].requires_grad;
            let inval = |i: usize| &self.nodes[inputs[i].0].value;
            let out = &node.value;
            match kind {
                OpKind::MatMul => {
                    let (a, b) = (inval(0), inval(1));
                    if wants(&inputs[0]) {
                        matmul_grad_lhs(slot(&mut adj, inputs[0], a.shape()), &g, b, a.shape()[1]);
                    }
                    if wants(&inputs[1]) {
                        accumulate(&mut adj, inputs[1], matmul_grad_rhs(&g, a, b.shape()));
                    }
                }
                OpKind::Add => {
                    for r in inputs {
                        if wants(r) {
                            accumulate(&mut adj, *r, g.clone());
                        }
                    }
                }
                OpKind::Mul => {
                    if wants(&inputs[0]) {
                        accumulate(&mut adj, inputs[0], g.zip_map(inval(1), |g, b| g * b));
                    }
                    if wants(&inputs[1]) {
                        accumulate(&mut adj, inputs[1], g.zip_map(inval(0), |g, a| g * a));
                    }
                }
                OpKind::Sigmoid => {
                    accumulate(&mut adj, inputs[0], g.zip_map(out, |g, s| g * s * (1.0 - s)));
                }
                OpKind::Tanh => {
                    accumulate(&mut adj, inputs[0], g.zip_map(out, |g, t| g * (1.0 - t * t)));
                }
                OpKind::Log => {
                    accumulate(&mut adj, inputs[0], g.zip_map(inval(0), |g, x| g / x));
                }
                OpKind::Negate => {
                    accumulate(&mut adj, inputs[0], g.map(|g| -g));
                }
                OpKind::Sum => {
                    let gs = g.item();
                    accumulate(&mut adj, inputs[0], RealArray::filled(inval(0).shape(), gs));
                }
                OpKind::Concat => {
                    let mut offset = 0;
                    for r in inputs {
                        let n = self.nodes[r.0].value.len();
                        if wants(r) {
                            let part = RealArray::vector(g.data()[offset..offset + n].to_vec());
                            accumulate(&mut adj, *r, part);
                        }
                        offset += n;
                    }
                }
                OpKind::Slice { start, len } => {
                    let dst = &mut slot(&mut adj, inputs[0], inval(0).shape())[*start..start + len];
                    for (d, g) in dst.iter_mut().zip(g.data()) {
                        *d += g;
                    }
                }
                OpKind::Clamp { lo, hi } => {
                    let grad = g.zip_map(inval(0), |g, x| if x > *lo && x < *hi { g } else { 0.0 });
                    accumulate(&mut adj, inputs[0], grad);
                }
                OpKind::Square => {
                    accumulate(&mut adj, inputs[0], g.zip_map(inval(0), |g, x| 2.0 * g * x));
                }
                OpKind::Softmax => {
                    let dot: f64 = g.data().iter().zip(out.data()).map(|(g, p)| g * p).sum();
                    accumulate(&mut adj, inputs[0], g.zip_map(out, |g, p| p * (g - dot)));
                }
                OpKind::LstmCell => {
                    let v = |i: usize| self.nodes[inputs[i].0].value.data();
                    let grads = lstm_backward(&g, out.data(), v(0), v(1), v(2), v(3), v(5));
                    let [dz, dx, dh, dc] = grads;
                    let (four_h, nx) = (dz.len(), v(1).len());
                    let nh = four_h / 4;
                    let shape = |i: usize| self.nodes[inputs[i].0].value.shape();
                    if wants(&inputs[0]) {
                        outer_add(slot(&mut adj, inputs[0], shape(0)), &dz, v(1), nx);
                    }
                    if wants(&inputs[1]) {
                        add_into(slot(&mut adj, inputs[1], shape(1)), &dx);
                    }
                    if wants(&inputs[2]) {
                        outer_add(slot(&mut adj, inputs[2], shape(2)), &dz, v(3), nh);
                    }
                    if wants(&inputs[3]) {
                        add_into(slot(&mut adj, inputs[3], shape(3)), &dh);
                    }
                    if wants(&inputs[4]) {
                        add_into(slot(&mut adj, inputs[4], shape(4)), &dz);
                    }
                    if wants(&inputs[5]) {
                        add_into(slot(&mut adj, inputs[5], shape(5)), &dc);
                    }
                }
            }
            adj[idx] = Some(g);
        }

        let mut grads = Gradients::default();
        for (i, node) in self.nodes.iter().enumerate() {
            if matches!(node.kind, NodeKind::Param) {
                let g = adj[i].clone().unwrap_or_else(|| RealArray::zeros(node.value.shape()));
                grads.by_node.insert(NodeRef(i), g);
            }
        }
        self.adjoints = adj;
        Ok(grads)
    }
}

fn accumulate(adj: &mut [Option<RealArray>], node: NodeRef, grad: RealArray) {
    match &mut adj[node.0] {
        Some(existing) => existing.add_assign(&grad),
        slot @ None => *slot = Some(grad),
    }
}

fn matmul_forward(a: &RealArray, b: &RealArray) -> Result<RealArray> {
    let err = || mismatch("matmul", a, b);
    if a.shape().len() != 2 {
        return Err(err());
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    match b.shape() {
        [kb] if *kb == k => {
            let bd = b.data();
            let out = (0..m)
                .map(|i| {
                    let row = &ad[i * k..(i + 1) * k];
                    row.iter().zip(bd).map(|(x, y)| x * y).sum()
                })
                .collect();
            Ok(RealArray::vector(out))
        }
        [kb, n] if *kb == k => {
            let n = *n;
            let bd = b.data();
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for p in 0..k {
                    let a_ip = ad[i * k + p];
                    let brow = &bd[p * n..(p + 1) * n];
                    for (o, bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                        *o += a_ip * bv;
                    }
                }
            }
            RealArray::matrix(m, n, out)
        }
        _ => Err(err()),
    }
}

fn lstm_forward(
    w_input: &RealArray,
    x: &RealArray,
    w_hidden: &RealArray,
    h_prev: &RealArray,
    bias: &RealArray,
    c_prev: &RealArray,
) -> Result<RealArray> {
    let err = || Error::InvalidOp {
        op: "lstm_cell",
        msg: format!(
            "incompatible shapes w_input {:?}, x {:?}, w_hidden {:?}, h {:?}, bias {:?}, c {:?}",
            w_input.shape(),
            x.shape(),
            w_hidden.shape(),
            h_prev.shape(),
            bias.shape(),
            c_prev.shape()
        ),
    };
    let h = h_prev.len();
    let nx = x.len();
    if w_input.shape() != [4 * h, nx]
        || w_hidden.shape() != [4 * h, h]
        || bias.shape() != [4 * h]
        || c_prev.shape() != [h]
        || x.shape().len() != 1
        || h_prev.shape().len() != 1
    {
        return Err(err());
    }
    let (wi, wh, xd, hd, bd) = (w_input.data(), w_hidden.data(), x.data(), h_prev.data(), bias.data());
    let z: Vec<f64> = (0..4 * h)
        .map(|r| {
            let zx: f64 = wi[r * nx..(r + 1) * nx].iter().zip(xd).map(|(a, b)| a * b).sum();
            let zh: f64 = wh[r * h..(r + 1) * h].iter().zip(hd).map(|(a, b)| a * b).sum();
            zx + zh + bd[r]
        })
        .collect();
    let mut out = vec![0.0; 6 * h];
    for k in 0..h {
        let i = sigmoid(z[k]);
        let f = sigmoid(z[h + k]);
        let g = z[2 * h + k].tanh();
        let o = sigmoid(z[3 * h + k]);
        let c = f * c_prev.data()[k] + i * g;
        out[k] = o * c.tanh();
        out[h + k] = c;
        out[2 * h + k] = i;
        out[3 * h + k] = f;
        out[4 * h + k] = g;
        out[5 * h + k] = o;
    }
    Ok(RealArray::vector(out))
}

/// Returns `[d z, d x, d h_prev, d c_prev]` where `z` is the pre-activation.
fn lstm_backward(
    g: &RealArray,
    out: &[f64],
    w_input: &[f64],
    x: &[f64],
    w_hidden: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
) -> [Vec<f64>; 4] {
    let h = h_prev.len();
    let nx = x.len();
    let gd = g.data();
    let mut dz = vec![0.0; 4 * h];
    let mut dc_prev = vec![0.0; h];
    for k in 0..h {
        let (c, i, f, gg, o) = (
            out[h + k],
            out[2 * h + k],
            out[3 * h + k],
            out[4 * h + k],
            out[5 * h + k],
        );
        let tc = c.tanh();
        let gh = gd[k];
        let dc = gd[h + k] + gh * o * (1.0 - tc * tc);
        dz[k] = (dc * gg + gd[2 * h + k]) * i * (1.0 - i);
        dz[h + k] = (dc * c_prev[k] + gd[3 * h + k]) * f * (1.0 - f);
        dz[2 * h + k] = (dc * i + gd[4 * h + k]) * (1.0 - gg * gg);
        dz[3 * h + k] = (gh * tc + gd[5 * h + k]) * o * (1.0 - o);
        dc_prev[k] = dc * f;
    }
    let mut dx = vec![0.0; nx];
    let mut dh = vec![0.0; h];
    for (r, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        for (o, w) in dx.iter_mut().zip(&w_input[r * nx..(r + 1) * nx]) {
            *o += w * d;
        }
        for (o, w) in dh.iter_mut().zip(&w_hidden[r * h..(r + 1) * h]) {
            *o += w * d;
        }
    }
    [dz, dx, dh, dc_prev]
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

// dst[r, :] += a[r] * b
fn outer_add(dst: &mut [f64], a: &[f64], b: &[f64], cols: usize) {
    for (r, &ar) in a.iter().enumerate() {
        if ar == 0.0 {
            continue;
        }
        for (o, bv) in dst[r * cols..(r + 1) * cols].iter_mut().zip(b) {
            *o += ar * bv;
        }
    }
}

/// Adjoint buffer of `node`, created as zeros on first use.
fn slot<'a>(adj: &'a mut [Option<RealArray>], node: NodeRef, shape: &[usize]) -> &'a mut [f64] {
    adj[node.0].get_or_insert_with(|| RealArray::zeros(shape)).data_mut()
}

// d/dA of sum(G * (A B)) = G B^T, added into `out`.
fn matmul_grad_lhs(out: &mut [f64], g: &RealArray, b: &RealArray, k: usize) {
    let m = out.len() / k;
    let gd = g.data();
    let bd = b.data();
    match b.shape() {
        [_] => {
            for i in 0..m {
                let gi = gd[i];
                if gi == 0.0 {
                    continue;
                }
                for (o, bv) in out[i * k..(i + 1) * k].iter_mut().zip(bd) {
                    *o += gi * bv;
                }
            }
        }
        [_, n] => {
            let n = *n;
            for i in 0..m {
                for p in 0..k {
                    out[i * k + p] += (0..n).map(|j| gd[i * n + j] * bd[p * n + j]).sum::<f64>();
                }
            }
        }
        _ => unreachable!("validated in forward"),
    }
}

// d/dB of sum(G * (A B)) = A^T G
fn matmul_grad_rhs(g: &RealArray, a: &RealArray, b_shape: &[usize]) -> RealArray {
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let ad = a.data();
    let gd = g.data();
    let n = if b_shape.len() == 2 { b_shape[1] } else { 1 };
    let mut out = vec![0.0; k * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let gij = gd[i * n + j];
            if gij == 0.0 {
                continue;
            }
            for p in 0..k {
                out[p * n + j] += arow[p] * gij;
            }
        }
    }
    RealArray::new(b_shape.to_vec(), out).expect("shape from forward")
}
