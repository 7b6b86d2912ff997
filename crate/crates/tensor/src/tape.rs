//! Operation tape and differentiable variables.
//!
//! Nodes are appended in evaluation order, so the tape is always topologically
//! sorted and `backward` is a single reverse sweep.

use std::cell::RefCell;
use std::rc::Rc;

use crate::error::{Result, TensorError};
use crate::exec::{for_each_row, ExecPolicy};
use crate::kernels;
use crate::param::{ParamId, ParamStore};
use crate::tensor::Tensor;

/// Variable-length index lists in CSR form, one bag per example.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bag {
    offsets: Vec<usize>,
    indices: Vec<u32>,
}

impl Bag {
    /// `offsets` has one more entry than there are bags; bag `b` is
    /// `indices[offsets[b]..offsets[b + 1]]`.
    pub fn new(offsets: Vec<usize>, indices: Vec<u32>) -> Self {
        assert!(!offsets.is_empty() && offsets[0] == 0);
        assert!(offsets.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(*offsets.last().unwrap(), indices.len());
        Bag { offsets, indices }
    }

    /// One index per example.
    pub fn single(indices: Vec<u32>) -> Self {
        let offsets = (0..=indices.len()).collect();
        Bag { offsets, indices }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn bag(&self, b: usize) -> &[u32] {
        &self.indices[self.offsets[b]..self.offsets[b + 1]]
    }

    pub fn max_index(&self) -> Option<u32> {
        self.indices.iter().copied().max()
    }
}

#[derive(Debug)]
enum Op {
    Constant,
    Param(ParamId),
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow { a: usize, bias: usize },
    Scale(usize, f32),
    AddScalar(usize),
    Relu(usize),
    Sigmoid(usize),
    Tanh(usize),
    Exp(usize),
    Ln(usize),
    Sin(usize),
    Cos(usize),
    Abs(usize),
    Concat { inputs: Vec<usize>, outer: usize, chunks: Vec<usize> },
    Sum(usize),
    Mean(usize),
    SumLastAxis { a: usize, last: usize },
    Reshape(usize),
    EmbeddingBag { table: usize, bag: Rc<Bag>, dim: usize },
    OuterHadamard { x: usize, x0: usize, h: usize, f: usize, d: usize },
    MixRows { w: usize, z: usize, h: usize, m: usize, d: usize },
    BceWithLogits { logits: usize, labels: Rc<[f32]> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records operations for one forward/backward pass. Confined to one thread.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    policy: ExecPolicy,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &self.shape())
            .finish()
    }
}

fn check_finite(op: &'static str, data: &[f32]) -> Result<()> {
    match data.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(TensorError::domain(
            op,
            format!("non-finite result {} at {i}", data[i]),
        )),
        None => Ok(()),
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_policy(policy: ExecPolicy) -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            policy,
        }
    }

    pub fn policy(&self) -> ExecPolicy {
        self.policy
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn checked(&self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var<'_>> {
        check_finite(op_name, value.data())?;
        Ok(self.push(value, op))
    }

    /// Non-differentiable input.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant)
    }

    /// Snapshot of a parameter's current value; its gradient lands in the store on `backward`.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.push(store.get(id).value().clone(), Op::Param(id))
    }

    fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    /// Concatenates along `axis`; all other dimensions must agree.
    pub fn concat<'t>(&'t self, vars: &[Var<'t>], axis: usize) -> Result<Var<'t>> {
        let Some(first) = vars.first() else {
            return Err(TensorError::shape("concat", &[], &[]));
        };
        let nodes = self.nodes.borrow();
        let base = nodes[first.id].value.shape().to_vec();
        if axis >= base.len() {
            return Err(TensorError::shape("concat", &base, &[axis]));
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let mut chunks = Vec::with_capacity(vars.len());
        let mut total_axis = 0;
        for v in vars {
            let s = nodes[v.id].value.shape();
            if s.len() != base.len()
                || s[..axis] != base[..axis]
                || s[axis + 1..] != base[axis + 1..]
            {
                return Err(TensorError::shape("concat", &base, s));
            }
            chunks.push(s[axis] * inner);
            total_axis += s[axis];
        }
        let row: usize = chunks.iter().sum();
        let mut data = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (v, &c) in vars.iter().zip(&chunks) {
                data.extend_from_slice(&nodes[v.id].value.data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = base;
        shape[axis] = total_axis;
        drop(nodes);
        Ok(self.push(
            Tensor::from_parts(shape, data),
            Op::Concat {
                inputs: vars.iter().map(|v| v.id).collect(),
                outer,
                chunks,
            },
        ))
    }

    /// Sum-pools rows of `table` (`[vocab x dim]`) over each bag, giving `[bags x dim]`.
    pub fn embedding_bag<'t>(&'t self, table: Var<'t>, bag: Rc<Bag>) -> Result<Var<'t>> {
        let nodes = self.nodes.borrow();
        let t = &nodes[table.id].value;
        if t.shape().len() != 2 {
            return Err(TensorError::shape("embedding_bag", t.shape(), &[]));
        }
        let (vocab, dim) = (t.shape()[0], t.shape()[1]);
        if let Some(max) = bag.max_index() {
            if max as usize >= vocab {
                return Err(TensorError::domain(
                    "embedding_bag",
                    format!("index {max} out of range for vocabulary {vocab}"),
                ));
            }
        }
        let mut out = vec![0.0f32; bag.len() * dim];
        for (b, row) in out.chunks_mut(dim.max(1)).enumerate().take(bag.len()) {
            for &idx in bag.bag(b) {
                let src = &t.data()[idx as usize * dim..(idx as usize + 1) * dim];
                for (o, s) in row.iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        drop(nodes);
        self.checked(
            "embedding_bag",
            Tensor::from_parts(vec![bag.len(), dim], out),
            Op::EmbeddingBag {
                table: table.id,
                bag,
                dim,
            },
        )
    }

    /// Reverse sweep from a scalar `output`. Every parameter gradient in `store` is
    /// reset first, so parameters not reachable from `output` end with zero gradient.
    pub fn backward(&self, output: Var<'_>, store: &mut ParamStore) -> Result<()> {
        let nodes = self.nodes.borrow();
        let out_value = &nodes[output.id].value;
        if out_value.len() != 1 {
            return Err(TensorError::NotScalarOutput(out_value.shape().to_vec()));
        }
        store.zero_grads();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; output.id + 1];
        grads[output.id] = Some(vec![1.0]);
        let policy = self.policy;

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let val = |i: usize| nodes[i].value.data();
            match &node.op {
                Op::Constant => {}
                Op::Param(pid) => {
                    let acc = store.params_mut()[pid.index()].grad_mut().data_mut();
                    for (a, x) in acc.iter_mut().zip(&g) {
                        *a += x;
                    }
                }
                &Op::MatMul { a, b, m, k, n } => {
                    let da = kernels::matmul_nt(policy, &g, val(b), m, n, k);
                    let db = kernels::matmul_tn(policy, val(a), &g, m, k, n);
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                &Op::Add(a, b) => {
                    accumulate(&mut grads, a, g.clone());
                    accumulate(&mut grads, b, g);
                }
                &Op::Sub(a, b) => {
                    accumulate(&mut grads, b, g.iter().map(|x| -x).collect());
                    accumulate(&mut grads, a, g);
                }
                &Op::Mul(a, b) => {
                    let da = g.iter().zip(val(b)).map(|(g, y)| g * y).collect();
                    let db = g.iter().zip(val(a)).map(|(g, x)| g * x).collect();
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                &Op::AddRow { a, bias } => {
                    let n = nodes[bias].value.len();
                    let mut db = vec![0.0f64; n];
                    for row in g.chunks(n) {
                        for (d, x) in db.iter_mut().zip(row) {
                            *d += *x as f64;
                        }
                    }
                    accumulate(&mut grads, bias, db.into_iter().map(|v| v as f32).collect());
                    accumulate(&mut grads, a, g);
                }
                &Op::Scale(a, c) => accumulate(&mut grads, a, g.iter().map(|x| x * c).collect()),
                &Op::AddScalar(a) | &Op::Reshape(a) => accumulate(&mut grads, a, g),
                &Op::Relu(a) => {
                    let d = g
                        .iter()
                        .zip(val(a))
                        .map(|(g, &x)| if x > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, a, d);
                }
                &Op::Sigmoid(a) => {
                    let y = node.value.data();
                    let d = g.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    accumulate(&mut grads, a, d);
                }
                &Op::Tanh(a) => {
                    let y = node.value.data();
                    let d = g.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    accumulate(&mut grads, a, d);
                }
                &Op::Exp(a) => {
                    let y = node.value.data();
                    let d = g.iter().zip(y).map(|(g, y)| g * y).collect();
                    accumulate(&mut grads, a, d);
                }
                &Op::Ln(a) => {
                    let d = g.iter().zip(val(a)).map(|(g, x)| g / x).collect();
                    accumulate(&mut grads, a, d);
                }
                &Op::Sin(a) => {
                    let d = g.iter().zip(val(a)).map(|(g, x)| g * x.cos()).collect();
                    accumulate(&mut grads, a, d);
                }
                &Op::Cos(a) => {
                    let d = g.iter().zip(val(a)).map(|(g, x)| -g * x.sin()).collect();
                    accumulate(&mut grads, a, d);
                }
                &Op::Abs(a) => {
                    let d = g
                        .iter()
                        .zip(val(a))
                        .map(|(g, &x)| {
                            if x > 0.0 {
                                *g
                            } else if x < 0.0 {
                                -g
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    accumulate(&mut grads, a, d);
                }
                Op::Concat {
                    inputs,
                    outer,
                    chunks,
                } => {
                    let row: usize = chunks.iter().sum();
                    let mut offset = 0;
                    for (&input, &c) in inputs.iter().zip(chunks) {
                        let mut d = Vec::with_capacity(outer * c);
                        for o in 0..*outer {
                            d.extend_from_slice(&g[o * row + offset..o * row + offset + c]);
                        }
                        accumulate(&mut grads, input, d);
                        offset += c;
                    }
                }
                &Op::Sum(a) => {
                    let n = nodes[a].value.len();
                    accumulate(&mut grads, a, vec![g[0]; n]);
                }
                &Op::Mean(a) => {
                    let n = nodes[a].value.len();
                    accumulate(&mut grads, a, vec![g[0] / n as f32; n]);
                }
                &Op::SumLastAxis { a, last } => {
                    let mut d = Vec::with_capacity(g.len() * last);
                    for &x in &g {
                        d.extend(std::iter::repeat_n(x, last));
                    }
                    accumulate(&mut grads, a, d);
                }
                Op::EmbeddingBag { table, bag, dim } => {
                    let dim = *dim;
                    let mut d = vec![0.0f32; nodes[*table].value.len()];
                    for b in 0..bag.len() {
                        let gb = &g[b * dim..(b + 1) * dim];
                        for &idx in bag.bag(b) {
                            let dst = &mut d[idx as usize * dim..(idx as usize + 1) * dim];
                            for (o, x) in dst.iter_mut().zip(gb) {
                                *o += x;
                            }
                        }
                    }
                    accumulate(&mut grads, *table, d);
                }
                &Op::OuterHadamard { x, x0, h, f, d } => {
                    let xs = val(x);
                    let x0s = val(x0);
                    let batch = g.len() / (h * f * d).max(1);
                    let mut dx = vec![0.0f32; batch * h * d];
                    let mut dx0 = vec![0.0f32; batch * f * d];
                    for b in 0..batch {
                        for i in 0..h {
                            for j in 0..f {
                                let go = ((b * h + i) * f + j) * d;
                                let xi = (b * h + i) * d;
                                let xj = (b * f + j) * d;
                                for t in 0..d {
                                    let gv = g[go + t];
                                    dx[xi + t] += gv * x0s[xj + t];
                                    dx0[xj + t] += gv * xs[xi + t];
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, x0, dx0);
                }
                &Op::MixRows { w, z, h, m, d } => {
                    let ws = val(w);
                    let zs = val(z);
                    let batch = g.len() / (h * d).max(1);
                    // dW = sum_b g_b * Z_b^T ; dZ_b = W^T * g_b
                    let mut dw = vec![0.0f32; h * m];
                    for b in 0..batch {
                        let gb = &g[b * h * d..(b + 1) * h * d];
                        let zb = &zs[b * m * d..(b + 1) * m * d];
                        let part = kernels::matmul_nt(ExecPolicy::Sequential, gb, zb, h, d, m);
                        for (o, p) in dw.iter_mut().zip(part) {
                            *o += p;
                        }
                    }
                    let wt = kernels::transpose(ws, h, m);
                    let mut dz = vec![0.0f32; batch * m * d];
                    for_each_row(policy, &mut dz, m * d, h * m * d, |b, row| {
                        let gb = &g[b * h * d..(b + 1) * h * d];
                        let r = kernels::matmul(ExecPolicy::Sequential, &wt, gb, m, h, d);
                        row.copy_from_slice(&r);
                    });
                    accumulate(&mut grads, w, dw);
                    accumulate(&mut grads, z, dz);
                }
                Op::BceWithLogits { logits, labels } => {
                    let n = labels.len() as f32;
                    let d = val(*logits)
                        .iter()
                        .zip(labels.iter())
                        .map(|(&x, &y)| g[0] * (kernels::sigmoid(x) - y) / n)
                        .collect();
                    accumulate(&mut grads, *logits, d);
                }
            }
        }
        for p in store.params_mut() {
            check_finite("backward", p.grad().data())?;
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f32>>], id: usize, g: Vec<f32>) {
    match &mut grads[id] {
        Some(existing) => {
            for (e, x) in existing.iter_mut().zip(g) {
                *e += x;
            }
        }
        slot @ None => *slot = Some(g),
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    /// Copy of the current value.
    pub fn value(&self) -> Tensor {
        self.tape.with_value(self.id, Tensor::clone)
    }

    pub fn to_vec(&self) -> Vec<f32> {
        self.tape.with_value(self.id, |t| t.data().to_vec())
    }

    fn unary(
        self,
        name: &'static str,
        op: fn(usize) -> Op,
        f: impl Fn(f32) -> f32,
    ) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| {
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|&x| f(x)).collect())
        });
        self.tape.checked(name, value, op(self.id))
    }

    fn binary(
        self,
        rhs: Var<'t>,
        name: &'static str,
        op: fn(usize, usize) -> Op,
        f: impl Fn(f32, f32) -> f32,
    ) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            if a.shape() != b.shape() {
                return Err(TensorError::shape(name, a.shape(), b.shape()));
            }
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        self.tape.checked(name, value, op(self.id, rhs.id))
    }

    /// `[m x k] * [k x n]`.
    pub fn matmul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[rhs.id].value);
            if a.shape().len() != 2 || b.shape().len() != 2 || a.shape()[1] != b.shape()[0] {
                return Err(TensorError::shape("matmul", a.shape(), b.shape()));
            }
            let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let c = kernels::matmul(self.tape.policy, a.data(), b.data(), m, k, n);
            (Tensor::from_parts(vec![m, n], c), m, k, n)
        };
        let (t, m, k, n) = value;
        self.tape.checked(
            "matmul",
            t,
            Op::MatMul {
                a: self.id,
                b: rhs.id,
                m,
                k,
                n,
            },
        )
    }

    pub fn add(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "add", Op::Add, |x, y| x + y)
    }

    pub fn sub(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "sub", Op::Sub, |x, y| x - y)
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(self, rhs: Var<'t>) -> Result<Var<'t>> {
        self.binary(rhs, "mul", Op::Mul, |x, y| x * y)
    }

    /// Adds a vector of the last-axis length to every row.
    pub fn add_row(self, bias: Var<'t>) -> Result<Var<'t>> {
        let value = {
            let nodes = self.tape.nodes.borrow();
            let (a, b) = (&nodes[self.id].value, &nodes[bias.id].value);
            let n = b.len();
            if a.shape().last() != Some(&n) || b.shape().iter().product::<usize>() != n {
                return Err(TensorError::shape("add_row", a.shape(), b.shape()));
            }
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(n) {
                for (x, y) in row.iter_mut().zip(b.data()) {
                    *x += y;
                }
            }
            Tensor::from_parts(a.shape().to_vec(), data)
        };
        self.tape.checked(
            "add_row",
            value,
            Op::AddRow {
                a: self.id,
                bias: bias.id,
            },
        )
    }

    pub fn scale(self, c: f32) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| {
            Tensor::from_parts(t.shape().to_vec(), t.data().iter().map(|x| x * c).collect())
        });
        self.tape.checked("scale", value, Op::Scale(self.id, c))
    }

    pub fn add_scalar(self, c: f32) -> Result<Var<'t>> {
        self.unary("add_scalar", Op::AddScalar, |x| x + c)
    }

    pub fn relu(self) -> Result<Var<'t>> {
        self.unary("relu", Op::Relu, |x| x.max(0.0))
    }

    pub fn sigmoid(self) -> Result<Var<'t>> {
        self.unary("sigmoid", Op::Sigmoid, kernels::sigmoid)
    }

    pub fn tanh(self) -> Result<Var<'t>> {
        self.unary("tanh", Op::Tanh, f32::tanh)
    }

    pub fn exp(self) -> Result<Var<'t>> {
        self.unary("exp", Op::Exp, f32::exp)
    }

    /// Natural log; every input must be strictly positive.
    pub fn ln(self) -> Result<Var<'t>> {
        let bad = self
            .tape
            .with_value(self.id, |t| t.data().iter().copied().find(|&x| x <= 0.0));
        if let Some(x) = bad {
            return Err(TensorError::domain("ln", format!("non-positive input {x}")));
        }
        self.unary("ln", Op::Ln, f32::ln)
    }

    pub fn sin(self) -> Result<Var<'t>> {
        self.unary("sin", Op::Sin, f32::sin)
    }

    pub fn cos(self) -> Result<Var<'t>> {
        self.unary("cos", Op::Cos, f32::cos)
    }

    pub fn abs(self) -> Result<Var<'t>> {
        self.unary("abs", Op::Abs, f32::abs)
    }

    /// Sum of all elements as a scalar.
    pub fn sum(self) -> Result<Var<'t>> {
        let s = self.tape.with_value(self.id, |t| kernels::sum_f64(t.data()));
        self.tape
            .checked("sum", Tensor::scalar(s as f32), Op::Sum(self.id))
    }

    pub fn mean(self) -> Result<Var<'t>> {
        let s = self.tape.with_value(self.id, |t| {
            if t.is_empty() {
                f64::NAN
            } else {
                kernels::sum_f64(t.data()) / t.len() as f64
            }
        });
        self.tape
            .checked("mean", Tensor::scalar(s as f32), Op::Mean(self.id))
    }

    /// Reduces the last axis: `[.., n] -> [..]`.
    pub fn sum_last_axis(self) -> Result<Var<'t>> {
        let (value, last) = self.tape.with_value(self.id, |t| {
            let shape = t.shape();
            let last = *shape.last().unwrap_or(&1);
            let data = t
                .data()
                .chunks(last.max(1))
                .map(|c| kernels::sum_f64(c) as f32)
                .collect();
            let out_shape = shape[..shape.len().saturating_sub(1)].to_vec();
            (Tensor::from_parts(out_shape, data), last)
        });
        self.tape
            .checked("sum_last_axis", value, Op::SumLastAxis { a: self.id, last })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>> {
        let value = self.tape.with_value(self.id, |t| t.clone().reshape(shape))?;
        Ok(self.tape.push(value, Op::Reshape(self.id)))
    }

    /// CIN interaction: `self` is `[B, H, d]`, `base` is `[B, F, d]`; output
    /// `[B, H*F, d]` holds `self[b,i,:] * base[b,j,:]` at row `i*F + j`.
    pub fn outer_hadamard(self, base: Var<'t>) -> Result<Var<'t>> {
        let (value, h, f, d) = {
            let nodes = self.tape.nodes.borrow();
            let (x, x0) = (&nodes[self.id].value, &nodes[base.id].value);
            let (xs, bs) = (x.shape(), x0.shape());
            if xs.len() != 3 || bs.len() != 3 || xs[0] != bs[0] || xs[2] != bs[2] {
                return Err(TensorError::shape("outer_hadamard", xs, bs));
            }
            let (batch, h, f, d) = (xs[0], xs[1], bs[1], xs[2]);
            let mut out = vec![0.0f32; batch * h * f * d];
            let (xd, bd) = (x.data(), x0.data());
            for_each_row(self.tape.policy, &mut out, h * f * d, h * f * d, |b, row| {
                for i in 0..h {
                    let xi = &xd[(b * h + i) * d..(b * h + i + 1) * d];
                    for j in 0..f {
                        let xj = &bd[(b * f + j) * d..(b * f + j + 1) * d];
                        let o = &mut row[(i * f + j) * d..(i * f + j + 1) * d];
                        for t in 0..d {
                            o[t] = xi[t] * xj[t];
                        }
                    }
                }
            });
            (Tensor::from_parts(vec![batch, h * f, d], out), h, f, d)
        };
        self.tape.checked(
            "outer_hadamard",
            value,
            Op::OuterHadamard {
                x: self.id,
                x0: base.id,
                h,
                f,
                d,
            },
        )
    }

    /// Applies the weight matrix `self` (`[H x M]`) to every example of `z`
    /// (`[B, M, d]`): `out[b] = W * z[b]`, shape `[B, H, d]`.
    pub fn mix_rows(self, z: Var<'t>) -> Result<Var<'t>> {
        let (value, h, m, d) = {
            let nodes = self.tape.nodes.borrow();
            let (w, zt) = (&nodes[self.id].value, &nodes[z.id].value);
            let (ws, zs) = (w.shape(), zt.shape());
            if ws.len() != 2 || zs.len() != 3 || ws[1] != zs[1] {
                return Err(TensorError::shape("mix_rows", ws, zs));
            }
            let (batch, h, m, d) = (zs[0], ws[0], ws[1], zs[2]);
            let mut out = vec![0.0f32; batch * h * d];
            let (wd, zd) = (w.data(), zt.data());
            for_each_row(self.tape.policy, &mut out, h * d, h * m * d, |b, row| {
                let r = kernels::matmul(ExecPolicy::Sequential, wd, &zd[b * m * d..(b + 1) * m * d], h, m, d);
                row.copy_from_slice(&r);
            });
            (Tensor::from_parts(vec![batch, h, d], out), h, m, d)
        };
        self.tape.checked(
            "mix_rows",
            value,
            Op::MixRows {
                w: self.id,
                z: z.id,
                h,
                m,
                d,
            },
        )
    }

    /// Mean binary cross-entropy of logits against `labels`, via log-sigmoid.
    pub fn bce_with_logits(self, labels: &[f32]) -> Result<Var<'t>> {
        let loss = {
            let nodes = self.tape.nodes.borrow();
            let x = &nodes[self.id].value;
            if x.len() != labels.len() || labels.is_empty() {
                return Err(TensorError::shape("bce_with_logits", x.shape(), &[labels.len()]));
            }
            let total: f64 = x
                .data()
                .iter()
                .zip(labels)
                .map(|(&z, &y)| {
                    let z = z as f64;
                    let y = y as f64;
                    -(y * kernels::log_sigmoid(z) + (1.0 - y) * kernels::log_sigmoid(-z))
                })
                .sum();
            total / labels.len() as f64
        };
        self.tape.checked(
            "bce_with_logits",
            Tensor::scalar(loss as f32),
            Op::BceWithLogits {
                logits: self.id,
                labels: labels.into(),
            },
        )
    }
}
