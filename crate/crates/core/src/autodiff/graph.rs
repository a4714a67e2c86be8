use std::collections::HashMap;

use super::params::{ParamId, ParamStore};
use super::tensor::{numel, Tensor};
use super::AutodiffError;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Value {
    Owned(Vec<f64>),
    Param(ParamId),
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, m: usize, k: usize, n: usize },
    Add(Var, Var),
    AddN(Vec<Var>),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Concat { inputs: Vec<Var>, outer: usize, widths: Vec<usize> },
    Slice { src: Var, outer: usize, src_width: usize, start: usize, len: usize },
    StackRows(Vec<Var>),
    Embedding { table: Var, row: usize, width: usize },
    Softmax { x: Var, outer: usize, len: usize, inner: usize },
    CrossEntropy { logits: Var, target: usize, probs: Vec<f64> },
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Value,
    op: Op,
    needs_grad: bool,
}

/// Gradients of a scalar loss with respect to every parameter the graph touched.
#[derive(Debug, Default)]
pub struct Gradients {
    entries: Vec<(ParamId, Vec<f64>)>,
}

impl Gradients {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.entries.iter().map(|(id, g)| (*id, g.as_slice()))
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, g)| g.as_slice())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Tape of executed primitives. Nodes are appended in execution order, so the
/// node list is always topologically sorted.
///
/// Shape mismatches are programming errors and panic.
pub struct Graph<'p> {
    params: Option<&'p ParamStore>,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
    grads: Vec<Option<Vec<f64>>>,
    backward_done: bool,
    track_params: bool,
}

impl Default for Graph<'_> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'p> Graph<'p> {
    /// A graph with no parameter store; only inputs and constants.
    pub fn new() -> Self {
        Graph {
            params: None,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
            grads: Vec::new(),
            backward_done: false,
            track_params: true,
        }
    }

    /// A graph whose parameter leaves read from `params` and receive gradients.
    pub fn with_params(params: &'p ParamStore) -> Self {
        Graph { params: Some(params), ..Graph::new() }
    }

    /// A graph over `params` that never records gradients (evaluation only).
    pub fn inference(params: &'p ParamStore) -> Self {
        Graph { params: Some(params), track_params: false, ..Graph::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        value_of(&self.nodes, self.params, v.0)
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec())
    }

    /// Scalar value of a one-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        let data = self.value(v);
        assert_eq!(data.len(), 1, "node {} is not a scalar", v.0);
        data[0]
    }

    /// Gradient accumulated for `v` by [`Graph::backward`], if any reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Differentiable leaf.
    pub fn input(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Value::Owned(t.into_data()), Op::Leaf, true)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, t: Tensor) -> Var {
        let shape = t.shape().to_vec();
        self.push(shape, Value::Owned(t.into_data()), Op::Leaf, false)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let store = self.params.expect("graph has no parameter store");
        let shape = store.get(id).value.shape().to_vec();
        let v = self.push(shape, Value::Param(id), Op::Leaf, self.track_params);
        self.param_vars.insert(id, v);
        v
    }

    fn push(&mut self, shape: Vec<usize>, value: Value, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { shape, value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// Matrix product with 1-D operands treated as row (left) or column (right) vectors.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (m, k, a_vec) = match sa.as_slice() {
            [k] => (1, *k, true),
            [m, k] => (*m, *k, false),
            _ => panic!("matmul: left operand must be 1-D or 2-D, got {sa:?}"),
        };
        let (kb, n, b_vec) = match sb.as_slice() {
            [k] => (*k, 1, true),
            [k, n] => (*k, *n, false),
            _ => panic!("matmul: right operand must be 1-D or 2-D, got {sb:?}"),
        };
        assert_eq!(k, kb, "matmul: inner dimensions differ ({sa:?} x {sb:?})");
        let out_shape = match (a_vec, b_vec) {
            (false, false) => vec![m, n],
            (false, true) => vec![m],
            (true, false) => vec![n],
            (true, true) => vec![],
        };
        let av = self.value(a);
        let bv = self.value(b);
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (i, o) in out.iter_mut().enumerate() {
                let row = &av[i * k..(i + 1) * k];
                *o = row.iter().zip(bv).map(|(x, y)| x * y).sum();
            }
        } else {
            for i in 0..m {
                let orow = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let x = av[i * k + p];
                    if x == 0.0 {
                        continue;
                    }
                    for (o, y) in orow.iter_mut().zip(&bv[p * n..(p + 1) * n]) {
                        *o += x * y;
                    }
                }
            }
        }
        let ng = self.needs(&[a, b]);
        self.push(out_shape, Value::Owned(out), Op::MatMul { a, b, m, k, n }, ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        self.push(shape, Value::Owned(out), Op::Add(a, b), ng)
    }

    /// Sum of any number of equally shaped nodes.
    pub fn add_n(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "add_n: no inputs");
        let shape = self.shape(inputs[0]).to_vec();
        let mut out = vec![0.0; numel(&shape)];
        for &v in inputs {
            assert_eq!(self.shape(v), shape.as_slice(), "add_n: shape mismatch");
            for (o, x) in out.iter_mut().zip(self.value(v)) {
                *o += x;
            }
        }
        let ng = self.needs(inputs);
        self.push(shape, Value::Owned(out), Op::AddN(inputs.to_vec()), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let shape = self.shape(a).to_vec();
        let ng = self.needs(&[a, b]);
        self.push(shape, Value::Owned(out), Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|v| v * c).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x]);
        self.push(shape, Value::Owned(out), Op::Scale(x, c), ng)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|v| v.tanh()).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x]);
        self.push(shape, Value::Owned(out), Op::Tanh(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out: Vec<f64> = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        let shape = self.shape(x).to_vec();
        let ng = self.needs(&[x]);
        self.push(shape, Value::Owned(out), Op::Sigmoid(x), ng)
    }

    /// Concatenation along the last axis; leading dimensions must agree.
    pub fn concat(&mut self, inputs: &[Var]) -> Var {
        assert!(!inputs.is_empty(), "concat: no inputs");
        let first = self.shape(inputs[0]).to_vec();
        assert!(!first.is_empty(), "concat: scalars have no last axis");
        let lead = &first[..first.len() - 1];
        let outer = numel(lead);
        let mut widths = Vec::with_capacity(inputs.len());
        for &v in inputs {
            let s = self.shape(v);
            assert!(
                s.len() == first.len() && &s[..s.len() - 1] == lead,
                "concat: leading dimensions differ ({first:?} vs {s:?})"
            );
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&v, &w) in inputs.iter().zip(&widths) {
                out.extend_from_slice(&self.value(v)[o * w..(o + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let ng = self.needs(inputs);
        self.push(shape, Value::Owned(out), Op::Concat { inputs: inputs.to_vec(), outer, widths }, ng)
    }

    /// Contiguous window `[start, start + len)` of the last axis.
    pub fn slice_last(&mut self, src: Var, start: usize, len: usize) -> Var {
        let shape = self.shape(src).to_vec();
        assert!(!shape.is_empty(), "slice: scalars have no last axis");
        let src_width = shape[shape.len() - 1];
        assert!(len > 0 && start + len <= src_width, "slice: [{start}, {}) out of range {src_width}", start + len);
        let outer = numel(&shape[..shape.len() - 1]);
        let sv = self.value(src);
        let mut out = Vec::with_capacity(outer * len);
        for o in 0..outer {
            out.extend_from_slice(&sv[o * src_width + start..o * src_width + start + len]);
        }
        let mut out_shape = shape[..shape.len() - 1].to_vec();
        out_shape.push(len);
        let ng = self.needs(&[src]);
        self.push(out_shape, Value::Owned(out), Op::Slice { src, outer, src_width, start, len }, ng)
    }

    /// Splits the last axis into three equal parts.
    pub fn split_thirds(&mut self, src: Var) -> Result<[Var; 3], AutodiffError> {
        let shape = self.shape(src);
        let width = *shape.last().expect("split: scalars have no last axis");
        if !width.is_multiple_of(3) {
            return Err(AutodiffError::SplitNotDivisible { width });
        }
        let third = width / 3;
        Ok([
            self.slice_last(src, 0, third),
            self.slice_last(src, third, third),
            self.slice_last(src, 2 * third, third),
        ])
    }

    /// Stacks equally sized vectors as the rows of a matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Var {
        assert!(!rows.is_empty(), "stack_rows: no rows");
        let width = match self.shape(rows[0]) {
            [w] => *w,
            s => panic!("stack_rows: rows must be 1-D, got {s:?}"),
        };
        let mut out = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            assert_eq!(self.shape(r), &[width], "stack_rows: row width mismatch");
            out.extend_from_slice(self.value(r));
        }
        let ng = self.needs(rows);
        self.push(vec![rows.len(), width], Value::Owned(out), Op::StackRows(rows.to_vec()), ng)
    }

    /// Row `row` of a 2-D table.
    pub fn embedding(&mut self, table: Var, row: usize) -> Var {
        let (rows, width) = match self.shape(table) {
            [r, w] => (*r, *w),
            s => panic!("embedding: table must be 2-D, got {s:?}"),
        };
        assert!(row < rows, "embedding: row {row} out of range {rows}");
        let out = self.value(table)[row * width..(row + 1) * width].to_vec();
        let ng = self.needs(&[table]);
        self.push(vec![width], Value::Owned(out), Op::Embedding { table, row, width }, ng)
    }

    /// Max-shifted softmax along `axis`.
    pub fn softmax(&mut self, x: Var, axis: usize) -> Var {
        let shape = self.shape(x).to_vec();
        assert!(axis < shape.len(), "softmax: axis {axis} out of range for {shape:?}");
        let outer = numel(&shape[..axis]);
        let len = shape[axis];
        let inner = numel(&shape[axis + 1..]);
        let mut out = self.value(x).to_vec();
        for o in 0..outer {
            for i in 0..inner {
                let idx = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| out[idx(j)]).fold(f64::NEG_INFINITY, f64::max);
                let mut total = 0.0;
                for j in 0..len {
                    let e = (out[idx(j)] - max).exp();
                    out[idx(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    out[idx(j)] /= total;
                }
            }
        }
        let ng = self.needs(&[x]);
        self.push(shape, Value::Owned(out), Op::Softmax { x, outer, len, inner }, ng)
    }

    /// `-log softmax(logits)[target]` for a 1-D logit vector.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, AutodiffError> {
        let classes = match self.shape(logits) {
            [c] => *c,
            s => panic!("cross_entropy: logits must be 1-D, got {s:?}"),
        };
        if target >= classes {
            return Err(AutodiffError::TargetOutOfRange { target, classes });
        }
        let lv = self.value(logits);
        let max = lv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = lv.iter().map(|v| (v - max).exp()).collect();
        let total: f64 = probs.iter().sum();
        let loss = total.ln() - (lv[target] - max);
        for p in probs.iter_mut() {
            *p /= total;
        }
        let ng = self.needs(&[logits]);
        Ok(self.push(vec![], Value::Owned(vec![loss]), Op::CrossEntropy { logits, target, probs }, ng))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let total: f64 = self.value(x).iter().sum();
        let ng = self.needs(&[x]);
        self.push(vec![], Value::Owned(vec![total]), Op::Sum(x), ng)
    }

    /// Reverse sweep from a scalar `loss`. Each node is visited once, in
    /// reverse execution order; gradients of reused nodes accumulate.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, AutodiffError> {
        if self.backward_done {
            return Err(AutodiffError::BackwardTwice);
        }
        if !self.shape(loss).is_empty() && numel(self.shape(loss)) != 1 {
            return Err(AutodiffError::NonScalarLoss { shape: self.shape(loss).to_vec() });
        }
        self.backward_done = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(vec![1.0]);

        let nodes = &self.nodes;
        let params = self.params;
        let grads = &mut self.grads;
        for idx in (0..=loss.0).rev() {
            let node = &nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            backprop_node(nodes, params, grads, idx, &g);
            grads[idx] = Some(g);
        }

        let mut entries: Vec<(ParamId, Vec<f64>)> = self
            .param_vars
            .iter()
            .filter_map(|(&id, &v)| self.grads[v.0].clone().map(|g| (id, g)))
            .collect();
        entries.sort_by_key(|(id, _)| *id);
        Ok(Gradients { entries })
    }
}

fn value_of<'a>(nodes: &'a [Node], params: Option<&'a ParamStore>, idx: usize) -> &'a [f64] {
    match &nodes[idx].value {
        Value::Owned(v) => v,
        Value::Param(id) => params.expect("parameter node without store").get(*id).value.data(),
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], v: Var, f: impl FnOnce(&mut [f64])) {
    let node = &nodes[v.0];
    if !node.needs_grad {
        return;
    }
    let slot = grads[v.0].get_or_insert_with(|| vec![0.0; numel(&node.shape)]);
    f(slot);
}

fn backprop_node(
    nodes: &[Node],
    params: Option<&ParamStore>,
    grads: &mut [Option<Vec<f64>>],
    idx: usize,
    g: &[f64],
) {
    let val = |i: usize| value_of(nodes, params, i);
    match &nodes[idx].op {
        Op::Leaf => {}
        Op::MatMul { a, b, m, k, n } => {
            let (m, k, n) = (*m, *k, *n);
            let av = val(a.0);
            let bv = val(b.0);
            accumulate(nodes, grads, *a, |da| {
                for i in 0..m {
                    for p in 0..k {
                        let brow = &bv[p * n..(p + 1) * n];
                        let grow = &g[i * n..(i + 1) * n];
                        da[i * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                    }
                }
            });
            accumulate(nodes, grads, *b, |db| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let x = av[i * k + p];
                        for (d, gv) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *d += x * gv;
                        }
                    }
                }
            });
        }
        Op::Add(a, b) => {
            for v in [a, b] {
                accumulate(nodes, grads, *v, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
            }
        }
        Op::AddN(inputs) => {
            for v in inputs {
                accumulate(nodes, grads, *v, |d| d.iter_mut().zip(g).for_each(|(d, x)| *d += x));
            }
        }
        Op::Mul(a, b) => {
            let av = val(a.0);
            let bv = val(b.0);
            accumulate(nodes, grads, *a, |d| {
                for ((d, x), y) in d.iter_mut().zip(g).zip(bv) {
                    *d += x * y;
                }
            });
            accumulate(nodes, grads, *b, |d| {
                for ((d, x), y) in d.iter_mut().zip(g).zip(av) {
                    *d += x * y;
                }
            });
        }
        Op::Scale(x, c) => {
            accumulate(nodes, grads, *x, |d| d.iter_mut().zip(g).for_each(|(d, v)| *d += c * v));
        }
        Op::Tanh(x) => {
            let y = val(idx);
            accumulate(nodes, grads, *x, |d| {
                for ((d, gv), yv) in d.iter_mut().zip(g).zip(y) {
                    *d += gv * (1.0 - yv * yv);
                }
            });
        }
        Op::Sigmoid(x) => {
            let y = val(idx);
            accumulate(nodes, grads, *x, |d| {
                for ((d, gv), yv) in d.iter_mut().zip(g).zip(y) {
                    *d += gv * yv * (1.0 - yv);
                }
            });
        }
        Op::Concat { inputs, outer, widths } => {
            let total: usize = widths.iter().sum();
            let mut offset = 0;
            for (v, &w) in inputs.iter().zip(widths) {
                accumulate(nodes, grads, *v, |d| {
                    for o in 0..*outer {
                        let src = &g[o * total + offset..o * total + offset + w];
                        for (d, x) in d[o * w..(o + 1) * w].iter_mut().zip(src) {
                            *d += x;
                        }
                    }
                });
                offset += w;
            }
        }
        Op::Slice { src, outer, src_width, start, len } => {
            accumulate(nodes, grads, *src, |d| {
                for o in 0..*outer {
                    let dst = &mut d[o * src_width + start..o * src_width + start + len];
                    for (d, x) in dst.iter_mut().zip(&g[o * len..(o + 1) * len]) {
                        *d += x;
                    }
                }
            });
        }
        Op::StackRows(rows) => {
            let width = g.len() / rows.len();
            for (r, v) in rows.iter().enumerate() {
                accumulate(nodes, grads, *v, |d| {
                    for (d, x) in d.iter_mut().zip(&g[r * width..(r + 1) * width]) {
                        *d += x;
                    }
                });
            }
        }
        Op::Embedding { table, row, width } => {
            accumulate(nodes, grads, *table, |d| {
                for (d, x) in d[row * width..(row + 1) * width].iter_mut().zip(g) {
                    *d += x;
                }
            });
        }
        Op::Softmax { x, outer, len, inner } => {
            let y = val(idx);
            let (outer, len, inner) = (*outer, *len, *inner);
            accumulate(nodes, grads, *x, |d| {
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot: f64 = (0..len).map(|j| g[at(j)] * y[at(j)]).sum();
                        for j in 0..len {
                            d[at(j)] += y[at(j)] * (g[at(j)] - dot);
                        }
                    }
                }
            });
        }
        Op::CrossEntropy { logits, target, probs } => {
            let gv = g[0];
            accumulate(nodes, grads, *logits, |d| {
                for (j, (d, p)) in d.iter_mut().zip(probs).enumerate() {
                    let onehot = if j == *target { 1.0 } else { 0.0 };
                    *d += gv * (p - onehot);
                }
            });
        }
        Op::Sum(x) => {
            let gv = g[0];
            accumulate(nodes, grads, *x, |d| d.iter_mut().for_each(|d| *d += gv));
        }
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
