//! Reverse-mode differentiation over a linear tape.
//!
//! Every forward op appends one node holding its output value and the
//! indices of its inputs. Inputs always precede outputs, so a single
//! reverse sweep from the loss visits each node once in topological order.
//! Trainable parameters enter the tape through [`Tape::param`] (whole
//! tensor) or [`Tape::lookup`] (one row); their gradients are accumulated
//! into the owning [`ParamStore`] when [`Tape::backward`] runs.

use std::collections::HashMap;

use super::tensor::{ParamId, ParamStore, Real, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Lookup { param: ParamId, row: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    MulConst(Var, Vec<T>),
    MulScalar(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Log(Var),
    ClampMin(Var, T),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Slice(Var, usize),
    Select(Var, usize),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
    StdPop(Var),
    /// Saved activations are `[i, f, o, g, tanh(c)]`, `d` each.
    LstmCell {
        w: Var,
        b: Var,
        x: Var,
        h: Option<Var>,
        c: Option<Var>,
        acts: Vec<T>,
    },
}

#[derive(Debug, Clone)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
}

#[derive(Debug)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    params: HashMap<ParamId, Var>,
    check_finite: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

impl<T: Real> Tape<T> {
    /// A tape that rejects NaN/Inf values as soon as an op produces them.
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            params: HashMap::new(),
            check_finite: true,
        }
    }

    pub fn unchecked() -> Self {
        Tape {
            check_finite: false,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, op_name: &'static str, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Result<Var> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        if self.check_finite && !value.iter().all(|x| x.is_finite()) {
            return Err(Error::Numeric { op: op_name });
        }
        self.nodes.push(Node { shape, value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Result<Var> {
        let shape = tensor.shape().to_vec();
        self.push("constant", shape, tensor.into_values(), Op::Constant)
    }

    pub fn constant_vec(&mut self, values: Vec<T>) -> Result<Var> {
        if values.is_empty() {
            return Err(shape_err("constant", "empty vector".into()));
        }
        self.push("constant", vec![values.len()], values, Op::Constant)
    }

    /// Whole-tensor parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Result<Var> {
        if let Some(&v) = self.params.get(&id) {
            return Ok(v);
        }
        let t = store.get(id);
        let v = self.push("param", t.shape().to_vec(), t.values().to_vec(), Op::Param(id))?;
        self.params.insert(id, v);
        Ok(v)
    }

    /// Row `row` of a 2-D parameter (embedding lookup).
    pub fn lookup(&mut self, store: &ParamStore<T>, id: ParamId, row: usize) -> Result<Var> {
        let t = store.get(id);
        let shape = t.shape();
        if shape.len() != 2 || row >= shape[0] {
            return Err(shape_err(
                "lookup",
                format!("row {row} of `{}` with shape {shape:?}", store.name(id)),
            ));
        }
        let width = shape[1];
        let value = t.values()[row * width..(row + 1) * width].to_vec();
        self.push("lookup", vec![width], value, Op::Lookup { param: id, row })
    }

    /// `[m, n] x [n]` or `[m, n] x [n, p]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        if sa.len() != 2 || sa[1] != sb[0] || sb.len() > 2 {
            return Err(shape_err("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (m, n) = (sa[0], sa[1]);
        let p = if sb.len() == 2 { sb[1] } else { 1 };
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut out = vec![T::zero(); m * p];
        for i in 0..m {
            let row = &av[i * n..(i + 1) * n];
            if p == 1 {
                out[i] = row.iter().zip(bv).fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            } else {
                let dst = &mut out[i * p..(i + 1) * p];
                for (j, &aij) in row.iter().enumerate() {
                    let brow = &bv[j * p..(j + 1) * p];
                    for (o, &bjk) in dst.iter_mut().zip(brow) {
                        *o += aij * bjk;
                    }
                }
            }
        }
        let shape = if sb.len() == 2 { vec![m, p] } else { vec![m] };
        self.push("matmul", shape, out, Op::MatMul(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(
                op,
                format!("{:?} vs {:?}", self.shape(a), self.shape(b)),
            ));
        }
        Ok(())
    }

    fn zip_with(&mut self, op_name: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        self.same_shape(op_name, a, b)?;
        let value = self.value(a)
            .iter()
            .zip(self.value(b))
            .map(|(&x, &y)| f(x, y))
            .collect();
        self.push(op_name, self.shape(a).to_vec(), value, op)
    }

    fn map(&mut self, op_name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(op_name, self.shape(a).to_vec(), value, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var> {
        self.map("scale", a, |x| x * c, Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -T::one())
    }

    pub fn add_const(&mut self, a: Var, c: T) -> Result<Var> {
        self.map("add_const", a, |x| x + c, Op::AddConst(a))
    }

    /// `1 - a`, elementwise.
    pub fn one_minus(&mut self, a: Var) -> Result<Var> {
        let n = self.neg(a)?;
        self.add_const(n, T::one())
    }

    /// Elementwise product with a constant array (dropout masks).
    pub fn mul_const(&mut self, a: Var, mask: Vec<T>) -> Result<Var> {
        if mask.len() != self.value(a).len() {
            return Err(shape_err(
                "mul_const",
                format!("{:?} vs mask of {}", self.shape(a), mask.len()),
            ));
        }
        let value = self.value(a).iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        self.push("mul_const", self.shape(a).to_vec(), value, Op::MulConst(a, mask))
    }

    /// Broadcast multiply by a single-element node.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).len() != 1 {
            return Err(shape_err("mul_scalar", format!("scalar operand has shape {:?}", self.shape(s))));
        }
        let c = self.scalar(s);
        let value = self.value(a).iter().map(|&x| x * c).collect();
        self.push("mul_scalar", self.shape(a).to_vec(), value, Op::MulScalar(a, s))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map("tanh", a, T::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map("log", a, T::ln, Op::Log(a))
    }

    pub fn clamp_min(&mut self, a: Var, lo: T) -> Result<Var> {
        self.map("clamp_min", a, |x| x.max(lo), Op::ClampMin(a, lo))
    }

    /// Concatenates 1-D nodes.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(shape_err("concat", "no inputs".into()));
        }
        let mut value = Vec::new();
        for &p in parts {
            if self.shape(p).len() != 1 {
                return Err(shape_err("concat", format!("input shape {:?} is not 1-D", self.shape(p))));
            }
            value.extend_from_slice(self.value(p));
        }
        let n = value.len();
        self.push("concat", vec![n], value, Op::Concat(parts.to_vec()))
    }

    /// Stacks equal-length 1-D nodes as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var> {
        if rows.is_empty() {
            return Err(shape_err("stack", "no inputs".into()));
        }
        let width = self.shape(rows[0]).to_vec();
        let mut value = Vec::new();
        for &r in rows {
            if self.shape(r) != width.as_slice() || width.len() != 1 {
                return Err(shape_err("stack", format!("row shape {:?} vs {width:?}", self.shape(r))));
            }
            value.extend_from_slice(self.value(r));
        }
        self.push("stack", vec![rows.len(), width[0]], value, Op::Stack(rows.to_vec()))
    }

    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let shape = self.shape(a);
        if shape.len() != 1 || len == 0 || start + len > shape[0] {
            return Err(shape_err("slice", format!("[{start}, {}) of {shape:?}", start + len)));
        }
        let value = self.value(a)[start..start + len].to_vec();
        self.push("slice", vec![len], value, Op::Slice(a, start))
    }

    pub fn select(&mut self, a: Var, index: usize) -> Result<Var> {
        let n = self.value(a).len();
        if index >= n {
            return Err(shape_err("select", format!("index {index} of {:?}", self.shape(a))));
        }
        let value = vec![self.value(a)[index]];
        self.push("select", vec![1], value, Op::Select(a, index))
    }

    fn require_vector(&self, op: &'static str, a: Var) -> Result<()> {
        if self.shape(a).len() != 1 {
            return Err(shape_err(op, format!("expected 1-D input, got {:?}", self.shape(a))));
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.require_vector("softmax", a)?;
        let value = softmax(self.value(a));
        self.push("softmax", self.shape(a).to_vec(), value, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.require_vector("log_softmax", a)?;
        let x = self.value(a);
        let max = x.iter().copied().fold(T::neg_infinity(), T::max);
        let lse = max + x.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
        let value = x.iter().map(|&v| v - lse).collect();
        self.push("log_softmax", self.shape(a).to_vec(), value, Op::LogSoftmax(a))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).iter().copied().sum();
        self.push("sum", vec![1], vec![s], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let s = x.iter().copied().sum::<T>() / T::lit(x.len() as f64);
        self.push("mean", vec![1], vec![s], Op::Mean(a))
    }

    /// Population standard deviation of all entries.
    pub fn std_pop(&mut self, a: Var) -> Result<Var> {
        let s = std_pop(self.value(a));
        self.push("std_pop", vec![1], vec![s], Op::StdPop(a))
    }

    /// Fused LSTM cell. `w` is `[4d, n + d]`, `b` is `[4d]`, gates are
    /// ordered (input, forget, output, candidate); a missing state is zero.
    /// Returns a `[2d]` node holding `[h; c]`.
    pub fn lstm_cell(&mut self, w: Var, b: Var, x: Var, state: Option<(Var, Var)>) -> Result<Var> {
        let sw = self.shape(w).to_vec();
        let n = self.value(x).len();
        if sw.len() != 2 || sw[0] % 4 != 0 {
            return Err(shape_err("lstm_cell", format!("weight shape {sw:?}")));
        }
        let d = sw[0] / 4;
        if sw[1] != n + d || self.value(b).len() != 4 * d {
            return Err(shape_err(
                "lstm_cell",
                format!("weight {sw:?}, bias {:?}, input {n}", self.shape(b)),
            ));
        }
        if let Some((h, c)) = state {
            if self.value(h).len() != d || self.value(c).len() != d {
                return Err(shape_err("lstm_cell", format!("state width differs from {d}")));
            }
        }
        let wv = &self.nodes[w.0].value;
        let bv = &self.nodes[b.0].value;
        let xv = &self.nodes[x.0].value;
        let hv = state.map(|(h, _)| &self.nodes[h.0].value);
        let cv = state.map(|(_, c)| &self.nodes[c.0].value);
        let mut pre = bv.clone();
        for (r, p) in pre.iter_mut().enumerate() {
            let row = &wv[r * (n + d)..(r + 1) * (n + d)];
            let mut s = row[..n].iter().zip(xv).fold(T::zero(), |acc, (&a, &b)| acc + a * b);
            if let Some(hv) = hv {
                s = row[n..].iter().zip(hv).fold(s, |acc, (&a, &b)| acc + a * b);
            }
            *p += s;
        }
        let mut acts = vec![T::zero(); 5 * d];
        let mut out = vec![T::zero(); 2 * d];
        for j in 0..d {
            let i = sigmoid(pre[j]);
            let f = sigmoid(pre[d + j]);
            let o = sigmoid(pre[2 * d + j]);
            let g = pre[3 * d + j].tanh();
            let c = match cv {
                Some(cv) => f * cv[j] + i * g,
                None => i * g,
            };
            let tc = c.tanh();
            acts[j] = i;
            acts[d + j] = f;
            acts[2 * d + j] = o;
            acts[3 * d + j] = g;
            acts[4 * d + j] = tc;
            out[j] = o * tc;
            out[d + j] = c;
        }
        let (h, c) = match state {
            Some((h, c)) => (Some(h), Some(c)),
            None => (None, None),
        };
        self.push("lstm_cell", vec![2 * d], out, Op::LstmCell { w, b, x, h, c, acts })
    }

    /// Runs the reverse sweep from the scalar `loss` and adds every
    /// parameter gradient into `store`. Consumes the tape.
    pub fn backward(self, loss: Var, store: &mut ParamStore<T>) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        let nodes = self.nodes;
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);

        fn acc<'a, T: Real>(grads: &'a mut [Option<Vec<T>>], nodes: &[Node<T>], v: Var) -> &'a mut Vec<T> {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); nodes[v.0].value.len()])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if self.check_finite && !g.iter().all(|x| x.is_finite()) {
                return Err(Error::Numeric { op: "backward" });
            }
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    for (d, &x) in store.get_mut(*id).grad_mut().iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                Op::Lookup { param, row } => {
                    let width = g.len();
                    let dst = &mut store.get_mut(*param).grad_mut()[row * width..(row + 1) * width];
                    for (d, &x) in dst.iter_mut().zip(&g) {
                        *d += x;
                    }
                }
                Op::MatMul(a, b) => {
                    let sa = &nodes[a.0].shape;
                    let sb = &nodes[b.0].shape;
                    let (m, n) = (sa[0], sa[1]);
                    let p = if sb.len() == 2 { sb[1] } else { 1 };
                    let av = &nodes[a.0].value;
                    let bv = &nodes[b.0].value;
                    {
                        let da = acc(&mut grads, &nodes, *a);
                        for i in 0..m {
                            let drow = &mut da[i * n..(i + 1) * n];
                            for k in 0..p {
                                let gik = g[i * p + k];
                                if gik == T::zero() {
                                    continue;
                                }
                                for (j, d) in drow.iter_mut().enumerate() {
                                    *d += gik * bv[j * p + k];
                                }
                            }
                        }
                    }
                    let db = acc(&mut grads, &nodes, *b);
                    for i in 0..m {
                        let arow = &av[i * n..(i + 1) * n];
                        for k in 0..p {
                            let gik = g[i * p + k];
                            if gik == T::zero() {
                                continue;
                            }
                            for (j, &aij) in arow.iter().enumerate() {
                                db[j * p + k] += aij * gik;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, &nodes, *a), &g);
                    add_into(acc(&mut grads, &nodes, *b), &g);
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut grads, &nodes, *a), &g);
                    for (d, &x) in acc(&mut grads, &nodes, *b).iter_mut().zip(&g) {
                        *d -= x;
                    }
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                    for ((d, &x), &y) in acc(&mut grads, &nodes, *a).iter_mut().zip(&g).zip(bv) {
                        *d += x * y;
                    }
                    for ((d, &x), &y) in acc(&mut grads, &nodes, *b).iter_mut().zip(&g).zip(av) {
                        *d += x * y;
                    }
                }
                Op::Scale(a, c) => {
                    for (d, &x) in acc(&mut grads, &nodes, *a).iter_mut().zip(&g) {
                        *d += x * *c;
                    }
                }
                Op::AddConst(a) => add_into(acc(&mut grads, &nodes, *a), &g),
                Op::MulConst(a, mask) => {
                    for ((d, &x), &m) in acc(&mut grads, &nodes, *a).iter_mut().zip(&g).zip(mask) {
                        *d += x * m;
                    }
                }
                Op::MulScalar(a, s) => {
                    let c = nodes[s.0].value[0];
                    let av = &nodes[a.0].value;
                    let ds: T = g.iter().zip(av).map(|(&x, &y)| x * y).sum();
                    for (d, &x) in acc(&mut grads, &nodes, *a).iter_mut().zip(&g) {
                        *d += x * c;
                    }
                    acc(&mut grads, &nodes, *s)[0] += ds;
                }
                Op::Tanh(a) => {
                    for ((d, &x), &y) in acc(&mut grads, &nodes, *a).iter_mut().zip(&g).zip(&node.value) {
                        *d += x * (T::one() - y * y);
                    }
                }
                Op::Sigmoid(a) => {
                    for ((d, &x), &y) in acc(&mut grads, &nodes, *a).iter_mut().zip(&g).zip(&node.value) {
                        *d += x * y * (T::one() - y);
                    }
                }
                Op::Log(a) => {
                    let av = &nodes[a.0].value;
                    for ((d, &x), &y) in acc(&mut grads, &nodes, *a).iter_mut().zip(&g).zip(av) {
                        *d += x / y;
                    }
                }
                Op::ClampMin(a, lo) => {
                    let av = &nodes[a.0].value;
                    for ((d, &x), &y) in acc(&mut grads, &nodes, *a).iter_mut().zip(&g).zip(av) {
                        if y >= *lo {
                            *d += x;
                        }
                    }
                }
                Op::Concat(parts) | Op::Stack(parts) => {
                    let mut offset = 0;
                    for p in parts {
                        let n = nodes[p.0].value.len();
                        add_into(acc(&mut grads, &nodes, *p), &g[offset..offset + n]);
                        offset += n;
                    }
                }
                Op::Slice(a, start) => {
                    let da = acc(&mut grads, &nodes, *a);
                    add_into(&mut da[*start..*start + g.len()], &g);
                }
                Op::Select(a, index) => {
                    acc(&mut grads, &nodes, *a)[*index] += g[0];
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let dot: T = g.iter().zip(y).map(|(&x, &p)| x * p).sum();
                    for ((d, &x), &p) in acc(&mut grads, &nodes, *a).iter_mut().zip(&g).zip(y) {
                        *d += p * (x - dot);
                    }
                }
                Op::LogSoftmax(a) => {
                    let total: T = g.iter().copied().sum();
                    for ((d, &x), &ly) in acc(&mut grads, &nodes, *a).iter_mut().zip(&g).zip(&node.value) {
                        *d += x - ly.exp() * total;
                    }
                }
                Op::Sum(a) => {
                    for d in acc(&mut grads, &nodes, *a).iter_mut() {
                        *d += g[0];
                    }
                }
                Op::Mean(a) => {
                    let n = T::lit(nodes[a.0].value.len() as f64);
                    for d in acc(&mut grads, &nodes, *a).iter_mut() {
                        *d += g[0] / n;
                    }
                }
                Op::LstmCell { w, b, x, h, c, acts } => {
                    let d = acts.len() / 5;
                    let n = nodes[x.0].value.len();
                    let (dh, dc) = g.split_at(d);
                    let mut dpre = vec![T::zero(); 4 * d];
                    let mut dc_prev = vec![T::zero(); d];
                    for j in 0..d {
                        let (i, f, o, gg, tc) = (acts[j], acts[d + j], acts[2 * d + j], acts[3 * d + j], acts[4 * d + j]);
                        let dct = dc[j] + dh[j] * o * (T::one() - tc * tc);
                        dpre[j] = dct * gg * i * (T::one() - i);
                        dpre[2 * d + j] = dh[j] * tc * o * (T::one() - o);
                        dpre[3 * d + j] = dct * i * (T::one() - gg * gg);
                        if let Some(c) = c {
                            dpre[d + j] = dct * nodes[c.0].value[j] * f * (T::one() - f);
                            dc_prev[j] = dct * f;
                        }
                    }
                    add_into(acc(&mut grads, &nodes, *b), &dpre);
                    let wv = &nodes[w.0].value;
                    let xv = &nodes[x.0].value;
                    let hv = h.map(|h| &nodes[h.0].value);
                    {
                        let dw = acc(&mut grads, &nodes, *w);
                        for (r, &gr) in dpre.iter().enumerate() {
                            if gr == T::zero() {
                                continue;
                            }
                            let row = &mut dw[r * (n + d)..(r + 1) * (n + d)];
                            for (dst, &v) in row[..n].iter_mut().zip(xv) {
                                *dst += gr * v;
                            }
                            if let Some(hv) = hv {
                                for (dst, &v) in row[n..].iter_mut().zip(hv) {
                                    *dst += gr * v;
                                }
                            }
                        }
                    }
                    let mut dxh = vec![T::zero(); n + d];
                    for (r, &gr) in dpre.iter().enumerate() {
                        if gr == T::zero() {
                            continue;
                        }
                        for (dst, &wv) in dxh.iter_mut().zip(&wv[r * (n + d)..(r + 1) * (n + d)]) {
                            *dst += gr * wv;
                        }
                    }
                    add_into(acc(&mut grads, &nodes, *x), &dxh[..n]);
                    if let Some(h) = h {
                        add_into(acc(&mut grads, &nodes, *h), &dxh[n..]);
                    }
                    if let Some(c) = c {
                        add_into(acc(&mut grads, &nodes, *c), &dc_prev);
                    }
                }
                Op::StdPop(a) => {
                    let sd = node.value[0];
                    // d std / dx is undefined at zero spread; treated as zero.
                    if sd > T::zero() {
                        let x = &nodes[a.0].value;
                        let k = T::lit(x.len() as f64);
                        let mu = x.iter().copied().sum::<T>() / k;
                        for (d, &xi) in acc(&mut grads, &nodes, *a).iter_mut().zip(x) {
                            *d += g[0] * (xi - mu) / (k * sd);
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Max-subtracted softmax.
pub fn softmax<T: Real>(x: &[T]) -> Vec<T> {
    let max = x.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = x.iter().map(|&v| (v - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

pub fn std_pop<T: Real>(x: &[T]) -> T {
    let k = T::lit(x.len() as f64);
    let mu = x.iter().copied().sum::<T>() / k;
    let var = x.iter().map(|&v| (v - mu) * (v - mu)).sum::<T>() / k;
    var.sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(name: &str, shape: Vec<usize>, values: Vec<f64>) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.insert(name, Tensor::new(shape, values).unwrap()).unwrap();
        (s, id)
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut t = Tape::<f64>::new();
        let x = t.constant_vec(vec![0.0]).unwrap();
        let y = t.sigmoid(x).unwrap();
        assert_eq!(t.value(y), &[0.5]);
    }

    #[test]
    fn identity_matmul() {
        let mut t = Tape::<f64>::new();
        let eye = t
            .constant(Tensor::new(vec![3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]).unwrap())
            .unwrap();
        let a_vals: Vec<f64> = (0..9).map(|i| i as f64 * 0.7 - 2.0).collect();
        let a = t.constant(Tensor::new(vec![3, 3], a_vals.clone()).unwrap()).unwrap();
        let y = t.matmul(eye, a).unwrap();
        assert_eq!(t.shape(y), &[3, 3]);
        assert_eq!(t.value(y), a_vals.as_slice());
    }

    #[test]
    fn softmax_closed_form() {
        let mut t = Tape::<f64>::new();
        let x = t.constant_vec(vec![0.0, 2f64.ln()]).unwrap();
        let y = t.softmax(x).unwrap();
        let v = t.value(y);
        assert!((v[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((v[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn square_sum_gradient() {
        let (mut s, id) = store_with("w", vec![2], vec![1.0, 2.0]);
        let mut t = Tape::new();
        let w = t.param(&s, id).unwrap();
        let sq = t.mul(w, w).unwrap();
        let loss = t.sum(sq).unwrap();
        t.backward(loss, &mut s).unwrap();
        assert_eq!(s.get(id).grad().unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let (mut s, id) = store_with("x", vec![1], vec![0.0]);
        let mut t = Tape::new();
        let x = t.param(&s, id).unwrap();
        let y = t.sigmoid(x).unwrap();
        t.backward(y, &mut s).unwrap();
        assert_eq!(s.get(id).grad().unwrap(), &[0.25]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let (mut s, id) = store_with("x", vec![2], vec![0.0, 1.0]);
        let mut t = Tape::new();
        let x = t.param(&s, id).unwrap();
        let err = t.backward(x, &mut s).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let mut t = Tape::<f64>::new();
        let a = t.constant_vec(vec![1.0, 2.0]).unwrap();
        let b = t.constant_vec(vec![1.0, 2.0, 3.0]).unwrap();
        let err = t.add(a, b).unwrap_err();
        assert!(err.to_string().contains("add"), "{err}");
        let m = t.constant(Tensor::zeros(vec![2, 2])).unwrap();
        let err = t.matmul(m, b).unwrap_err();
        assert!(err.to_string().contains("matmul"), "{err}");
    }

    #[test]
    fn non_finite_rejected() {
        let mut t = Tape::<f64>::new();
        let x = t.constant_vec(vec![0.0]).unwrap();
        assert!(matches!(t.log(x), Err(Error::Numeric { op: "log" })));
        let mut lax = Tape::<f64>::unchecked();
        let x = lax.constant_vec(vec![0.0]).unwrap();
        assert!(lax.log(x).is_ok());
    }

    #[test]
    fn param_leaf_is_shared() {
        let (s, id) = store_with("w", vec![2], vec![1.0, 2.0]);
        let mut t = Tape::new();
        let a = t.param(&s, id).unwrap();
        let b = t.param(&s, id).unwrap();
        assert_eq!(a, b);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn lookup_accumulates_into_row() {
        let (mut s, id) = store_with("e", vec![3, 2], vec![0.0; 6]);
        let mut t = Tape::new();
        let r = t.lookup(&s, id, 1).unwrap();
        let r2 = t.lookup(&s, id, 1).unwrap();
        let both = t.add(r, r2).unwrap();
        let loss = t.sum(both).unwrap();
        t.backward(loss, &mut s).unwrap();
        assert_eq!(s.get(id).grad().unwrap(), &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn std_pop_zero_spread_has_zero_gradient() {
        let (mut s, id) = store_with("p", vec![4], vec![0.25; 4]);
        let mut t = Tape::new();
        let p = t.param(&s, id).unwrap();
        let sd = t.std_pop(p).unwrap();
        assert_eq!(t.scalar(sd), 0.0);
        t.backward(sd, &mut s).unwrap();
        assert!(s.get(id).grad().is_none_or(|g| g.iter().all(|&x| x == 0.0)));
    }
}
