//! Tape-based reverse-mode differentiation over dense [`Tensor`]s.
//!
//! Every operation on a [`Var`] evaluates eagerly and appends a node to the
//! owning [`Tape`]. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints. Nodes that do not depend on any differentiable leaf
//! are skipped, so a tape built with [`Tape::no_grad`] costs nothing extra.

use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;
use std::rc::Rc;

use super::tensor::{CsrMatrix, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Unary {
    Sigmoid,
    Tanh,
    Relu,
    Cos,
    Exp,
    Log,
    Square,
    Sqrt,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    AddRow(usize, usize),
    Scale(usize, f64),
    AddConst(usize),
    MulScalar(usize, usize),
    DivScalar(usize, usize),
    Matmul(usize, usize),
    SpMatmul(Rc<CsrMatrix>, usize),
    Unary(usize, Unary),
    Sum(usize),
    Mean(usize),
    SumSq(usize),
    RowNorms(usize, f64),
    ConcatCols(usize, usize),
    ConcatRows(usize, usize),
    StackRows(Vec<usize>),
    Gather(usize, Vec<usize>),
    Scatter(Vec<(usize, usize, usize)>),
    ReplaceRows(usize, Vec<(usize, usize)>),
    ScaleRows(usize, Rc<Vec<f64>>),
    MulConst(usize, Rc<Tensor>),
    MaskedLogSoftmax(usize, Rc<Vec<bool>>),
    MaskedSoftmax(usize),
    Element(usize, usize),
    Reshape(usize),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    param: Option<String>,
}

/// Records operations for one forward pass.
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    grad_enabled: bool,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}({:?})", self.id, self.value())
    }
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: BTreeMap<String, (usize, Vec<usize>)>,
}

impl Gradients {
    /// Gradient with respect to a differentiable leaf, if it was reached.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient map keyed by parameter name. Parameters the loss does not
    /// depend on receive zeros.
    pub fn by_name(&self) -> BTreeMap<String, Tensor> {
        self.params
            .iter()
            .map(|(name, (id, shape))| {
                let g = self.grads[*id].clone().unwrap_or_else(|| Tensor::zeros(shape));
                (name.clone(), g)
            })
            .collect()
    }
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), grad_enabled: true }
    }

    /// A tape whose parameters are recorded as constants.
    pub fn no_grad() -> Self {
        Tape { nodes: RefCell::new(Vec::new()), grad_enabled: false }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.borrow().is_empty()
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad, param: None });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn rg(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn value_of(&self, id: usize) -> Ref<'_, Tensor> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, v: f64) -> Var<'_> {
        self.constant(Tensor::scalar(v))
    }

    /// A differentiable leaf.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, self.grad_enabled)
    }

    /// A named differentiable leaf; its gradient appears under `name`.
    pub fn param(&self, name: &str, value: Tensor) -> Var<'_> {
        let v = self.leaf(value);
        self.nodes.borrow_mut()[v.id].param = Some(name.to_string());
        v
    }

    /// Stacks single-row values into a matrix.
    pub fn stack_rows(&self, rows: &[Var<'_>]) -> Var<'_> {
        assert!(!rows.is_empty(), "stack_rows of nothing");
        let ids: Vec<usize> = rows.iter().map(|v| v.id).collect();
        let value = {
            let nodes = self.nodes.borrow();
            let cols = nodes[ids[0]].value.cols();
            let mut data = Vec::with_capacity(ids.len() * cols);
            for &i in &ids {
                let v = &nodes[i].value;
                assert!(v.rows() == 1 && v.cols() == cols, "stack_rows needs equal-width single rows");
                data.extend_from_slice(v.data());
            }
            Tensor::matrix(ids.len(), cols, data)
        };
        let rg = self.rg(&ids);
        self.push(value, Op::StackRows(ids), rg)
    }

    /// Builds a `rows x cols` matrix whose listed entries are copied from
    /// elements of other values: `(out_row, out_col, source, source_index)`.
    /// Unlisted entries are zero.
    pub fn scatter(&self, rows: usize, cols: usize, entries: &[(usize, usize, Var<'_>, usize)]) -> Var<'_> {
        let mut data = vec![0.0; rows * cols];
        let mut list = Vec::with_capacity(entries.len());
        {
            let nodes = self.nodes.borrow();
            for &(r, c, src, idx) in entries {
                assert!(r < rows && c < cols, "scatter target out of range");
                data[r * cols + c] = nodes[src.id].value.data()[idx];
                list.push((r * cols + c, src.id, idx));
            }
        }
        let ids: Vec<usize> = entries.iter().map(|e| e.2.id).collect();
        let rg = self.rg(&ids);
        self.push(Tensor::matrix(rows, cols, data), Op::Scatter(list), rg)
    }

    /// Product of a constant sparse matrix with `x`.
    pub fn sparse_matmul<'t>(&'t self, m: Rc<CsrMatrix>, x: Var<'t>) -> Var<'t> {
        let value = m.matmul_dense(&x.value());
        let rg = self.rg(&[x.id]);
        self.push(value, Op::SpMatmul(m, x.id), rg)
    }

    /// Reverse sweep from the scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[loss.id].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.id + 1];
        let shape = nodes[loss.id].value.shape().to_vec();
        grads[loss.id] = Some(Tensor::full(&shape, 1.0));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }

        let params = nodes[..=loss.id]
            .iter()
            .enumerate()
            .filter(|(_, n)| n.requires_grad)
            .filter_map(|(i, n)| n.param.clone().map(|p| (p, (i, n.value.shape().to_vec()))))
            .collect();
        Ok(Gradients { grads, params })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], nodes: &[Node], id: usize, g: Tensor) {
    if !nodes[id].requires_grad {
        return;
    }
    match &mut grads[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            let shape = nodes[id].value.shape().to_vec();
            *slot = Some(g.reshape(shape).expect("gradient shape"));
        }
    }
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let val = |i: usize| &nodes[i].value;
    let out = &node.value;
    match &node.op {
        Op::Leaf => {}
        Op::Add(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.clone());
        }
        Op::Sub(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            accumulate(grads, nodes, *b, g.map(|v| -v));
        }
        Op::Mul(a, b) => {
            accumulate(grads, nodes, *a, g.zip_map(val(*b), |g, y| g * y));
            accumulate(grads, nodes, *b, g.zip_map(val(*a), |g, x| g * x));
        }
        Op::Div(a, b) => {
            accumulate(grads, nodes, *a, g.zip_map(val(*b), |g, y| g / y));
            let gb = g.zip_map(out, |g, q| g * q).zip_map(val(*b), |gq, y| -gq / y);
            accumulate(grads, nodes, *b, gb);
        }
        Op::AddRow(a, b) => {
            accumulate(grads, nodes, *a, g.clone());
            let n = g.cols();
            let mut gb = vec![0.0; n];
            for r in 0..g.rows() {
                for (acc, v) in gb.iter_mut().zip(g.row(r)) {
                    *acc += v;
                }
            }
            accumulate(grads, nodes, *b, Tensor::vector(gb));
        }
        Op::Scale(a, c) => accumulate(grads, nodes, *a, g.map(|v| v * c)),
        Op::AddConst(a) => accumulate(grads, nodes, *a, g.clone()),
        Op::MulScalar(a, s) => {
            let sv = val(*s).item();
            accumulate(grads, nodes, *a, g.map(|v| v * sv));
            let gs: f64 = g.data().iter().zip(val(*a).data()).map(|(g, x)| g * x).sum();
            accumulate(grads, nodes, *s, Tensor::scalar(gs));
        }
        Op::DivScalar(a, s) => {
            let sv = val(*s).item();
            accumulate(grads, nodes, *a, g.map(|v| v / sv));
            let gs: f64 = g.data().iter().zip(val(*a).data()).map(|(g, x)| g * x).sum();
            accumulate(grads, nodes, *s, Tensor::scalar(-gs / (sv * sv)));
        }
        Op::Matmul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let g2 = Tensor::matrix(g.rows(), g.cols(), g.data().to_vec());
            if nodes[*a].requires_grad {
                accumulate(grads, nodes, *a, g2.matmul(&bv.transpose()));
            }
            if nodes[*b].requires_grad {
                accumulate(grads, nodes, *b, av.transpose().matmul(&g2));
            }
        }
        Op::SpMatmul(m, x) => {
            let g2 = Tensor::matrix(g.rows(), g.cols(), g.data().to_vec());
            accumulate(grads, nodes, *x, m.transpose_matmul_dense(&g2));
        }
        Op::Unary(a, kind) => {
            let x = val(*a);
            let d = match kind {
                Unary::Sigmoid => g.zip_map(out, |g, y| g * y * (1.0 - y)),
                Unary::Tanh => g.zip_map(out, |g, y| g * (1.0 - y * y)),
                Unary::Relu => g.zip_map(x, |g, x| if x > 0.0 { g } else { 0.0 }),
                Unary::Cos => g.zip_map(x, |g, x| -g * x.sin()),
                Unary::Exp => g.zip_map(out, |g, y| g * y),
                Unary::Log => g.zip_map(x, |g, x| g / x),
                Unary::Square => g.zip_map(x, |g, x| 2.0 * g * x),
                Unary::Sqrt => g.zip_map(out, |g, y| g / (2.0 * y)),
            };
            accumulate(grads, nodes, *a, d);
        }
        Op::Sum(a) => {
            let gv = g.item();
            accumulate(grads, nodes, *a, Tensor::full(val(*a).shape(), gv));
        }
        Op::Mean(a) => {
            let x = val(*a);
            let gv = g.item() / x.len() as f64;
            accumulate(grads, nodes, *a, Tensor::full(x.shape(), gv));
        }
        Op::SumSq(a) => {
            let gv = g.item();
            accumulate(grads, nodes, *a, val(*a).map(|x| 2.0 * gv * x));
        }
        Op::RowNorms(a, eps) => {
            let x = val(*a);
            let n = x.cols();
            let mut d = vec![0.0; x.len()];
            for r in 0..x.rows() {
                let norm = out.data()[r];
                let above_floor = x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt() >= *eps;
                if above_floor {
                    for c in 0..n {
                        d[r * n + c] = g.data()[r] * x.get(r, c) / norm;
                    }
                }
            }
            accumulate(grads, nodes, *a, Tensor::new(x.shape().to_vec(), d).unwrap());
        }
        Op::ConcatCols(a, b) => {
            let (ca, cb) = (val(*a).cols(), val(*b).cols());
            let rows = g.rows();
            let mut ga = Vec::with_capacity(rows * ca);
            let mut gb = Vec::with_capacity(rows * cb);
            for r in 0..rows {
                let row = g.row(r);
                ga.extend_from_slice(&row[..ca]);
                gb.extend_from_slice(&row[ca..]);
            }
            accumulate(grads, nodes, *a, Tensor::matrix(rows, ca, ga));
            accumulate(grads, nodes, *b, Tensor::matrix(rows, cb, gb));
        }
        Op::ConcatRows(a, b) => {
            let split = val(*a).len();
            let (ra, rb) = (val(*a).rows(), val(*b).rows());
            let cols = g.cols();
            accumulate(grads, nodes, *a, Tensor::matrix(ra, cols, g.data()[..split].to_vec()));
            accumulate(grads, nodes, *b, Tensor::matrix(rb, cols, g.data()[split..].to_vec()));
        }
        Op::StackRows(ids) => {
            for (r, &id) in ids.iter().enumerate() {
                accumulate(grads, nodes, id, Tensor::vector(g.row(r).to_vec()));
            }
        }
        Op::Gather(a, idx) => {
            let x = val(*a);
            if nodes[*a].requires_grad {
                let n = x.cols();
                let mut d = vec![0.0; x.len()];
                for (r, &src) in idx.iter().enumerate() {
                    for (acc, v) in d[src * n..(src + 1) * n].iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(grads, nodes, *a, Tensor::new(x.shape().to_vec(), d).unwrap());
            }
        }
        Op::Scatter(entries) => {
            for &(flat, src, idx) in entries {
                if !nodes[src].requires_grad {
                    continue;
                }
                let mut d = Tensor::zeros(val(src).shape());
                d.data_mut()[idx] = g.data()[flat];
                accumulate(grads, nodes, src, d);
            }
        }
        Op::ReplaceRows(base, repl) => {
            let n = g.cols();
            let mut gb = g.clone();
            for &(r, src) in repl {
                gb.data_mut()[r * n..(r + 1) * n].fill(0.0);
                accumulate(grads, nodes, src, Tensor::vector(g.row(r).to_vec()));
            }
            accumulate(grads, nodes, *base, gb);
        }
        Op::ScaleRows(a, s) => {
            let n = g.cols();
            let d: Vec<f64> = g.data().iter().enumerate().map(|(i, v)| v * s[i / n]).collect();
            accumulate(grads, nodes, *a, Tensor::new(g.shape().to_vec(), d).unwrap());
        }
        Op::MulConst(a, c) => accumulate(grads, nodes, *a, g.zip_map(c, |g, c| g * c)),
        Op::MaskedLogSoftmax(a, mask) => {
            let total: f64 = g.data().iter().zip(mask.iter()).filter(|(_, &m)| !m).map(|(g, _)| g).sum();
            let d: Vec<f64> = out
                .data()
                .iter()
                .zip(g.data())
                .zip(mask.iter())
                .map(|((&y, &g), &m)| if m { 0.0 } else { g - y.exp() * total })
                .collect();
            accumulate(grads, nodes, *a, Tensor::new(out.shape().to_vec(), d).unwrap());
        }
        Op::MaskedSoftmax(a) => {
            let dot: f64 = out.data().iter().zip(g.data()).map(|(p, g)| p * g).sum();
            accumulate(grads, nodes, *a, out.zip_map(g, |p, g| p * (g - dot)));
        }
        Op::Element(a, idx) => {
            let mut d = Tensor::zeros(val(*a).shape());
            d.data_mut()[*idx] = g.item();
            accumulate(grads, nodes, *a, d);
        }
        Op::Reshape(a) => accumulate(grads, nodes, *a, g.clone()),
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Ref<'t, Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn to_tensor(&self) -> Tensor {
        self.value().clone()
    }

    pub fn item(&self) -> f64 {
        self.value().item()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn rows(&self) -> usize {
        self.value().rows()
    }

    pub fn cols(&self) -> usize {
        self.value().cols()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary_op(self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.rg(&[self.id]);
        self.tape.push(value, op, rg)
    }

    fn binary_op(self, other: Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.tape.rg(&[self.id, other.id]);
        self.tape.push(value, op, rg)
    }

    fn same_len(&self, other: &Var<'t>, what: &str) {
        let (a, b) = (self.value(), other.value());
        assert_eq!(a.len(), b.len(), "{what}: shapes {:?} and {:?}", a.shape(), b.shape());
    }

    pub fn add(self, other: Var<'t>) -> Var<'t> {
        self.same_len(&other, "add");
        let v = self.value().zip_map(&other.value(), |a, b| a + b);
        self.binary_op(other, v, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Var<'t> {
        self.same_len(&other, "sub");
        let v = self.value().zip_map(&other.value(), |a, b| a - b);
        self.binary_op(other, v, Op::Sub(self.id, other.id))
    }

    pub fn mul(self, other: Var<'t>) -> Var<'t> {
        self.same_len(&other, "mul");
        let v = self.value().zip_map(&other.value(), |a, b| a * b);
        self.binary_op(other, v, Op::Mul(self.id, other.id))
    }

    pub fn div(self, other: Var<'t>) -> Var<'t> {
        self.same_len(&other, "div");
        let v = self.value().zip_map(&other.value(), |a, b| a / b);
        self.binary_op(other, v, Op::Div(self.id, other.id))
    }

    /// Adds a row vector to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        let v = {
            let (a, b) = (self.value(), row.value());
            assert_eq!(a.cols(), b.len(), "add_row: {:?} + {:?}", a.shape(), b.shape());
            let n = a.cols();
            let data = a.data().iter().enumerate().map(|(i, x)| x + b.data()[i % n]).collect();
            Tensor::new(a.shape().to_vec(), data).unwrap()
        };
        self.binary_op(row, v, Op::AddRow(self.id, row.id))
    }

    pub fn scale(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x * c);
        self.unary_op(v, Op::Scale(self.id, c))
    }

    pub fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }

    pub fn add_const(self, c: f64) -> Var<'t> {
        let v = self.value().map(|x| x + c);
        self.unary_op(v, Op::AddConst(self.id))
    }

    /// Multiplies every element by a one-element value.
    pub fn mul_scalar(self, s: Var<'t>) -> Var<'t> {
        let v = {
            let sv = s.value().item();
            self.value().map(|x| x * sv)
        };
        self.binary_op(s, v, Op::MulScalar(self.id, s.id))
    }

    pub fn div_scalar(self, s: Var<'t>) -> Var<'t> {
        let v = {
            let sv = s.value().item();
            self.value().map(|x| x / sv)
        };
        self.binary_op(s, v, Op::DivScalar(self.id, s.id))
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let v = self.value().matmul(&other.value());
        self.binary_op(other, v, Op::Matmul(self.id, other.id))
    }

    fn apply(self, kind: Unary) -> Var<'t> {
        let f: fn(f64) -> f64 = match kind {
            Unary::Sigmoid => sigmoid,
            Unary::Tanh => f64::tanh,
            Unary::Relu => |x| if x < 0.0 { 0.0 } else { x },
            Unary::Cos => f64::cos,
            Unary::Exp => f64::exp,
            Unary::Log => f64::ln,
            Unary::Square => |x| x * x,
            Unary::Sqrt => f64::sqrt,
        };
        let v = self.value().map(f);
        self.unary_op(v, Op::Unary(self.id, kind))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.apply(Unary::Sigmoid)
    }

    pub fn tanh(self) -> Var<'t> {
        self.apply(Unary::Tanh)
    }

    pub fn relu(self) -> Var<'t> {
        self.apply(Unary::Relu)
    }

    pub fn cos(self) -> Var<'t> {
        self.apply(Unary::Cos)
    }

    pub fn exp(self) -> Var<'t> {
        self.apply(Unary::Exp)
    }

    pub fn ln(self) -> Var<'t> {
        self.apply(Unary::Log)
    }

    pub fn square(self) -> Var<'t> {
        self.apply(Unary::Square)
    }

    pub fn sqrt(self) -> Var<'t> {
        self.apply(Unary::Sqrt)
    }

    pub fn sum(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().sum());
        self.unary_op(v, Op::Sum(self.id))
    }

    pub fn mean(self) -> Var<'t> {
        let v = {
            let x = self.value();
            Tensor::scalar(x.sum() / x.len() as f64)
        };
        self.unary_op(v, Op::Mean(self.id))
    }

    /// Squared Euclidean norm of all elements.
    pub fn sum_sq(self) -> Var<'t> {
        let v = Tensor::scalar(self.value().data().iter().map(|x| x * x).sum());
        self.unary_op(v, Op::SumSq(self.id))
    }

    /// Euclidean norm of each row, floored at `eps`. Rows below the floor
    /// return `eps` and pass no gradient. Output is a column.
    pub fn row_norms_floor(self, eps: f64) -> Var<'t> {
        let v = {
            let x = self.value();
            let data: Vec<f64> = (0..x.rows())
                .map(|r| x.row(r).iter().map(|v| v * v).sum::<f64>().sqrt().max(eps))
                .collect();
            Tensor::matrix(x.rows(), 1, data)
        };
        self.unary_op(v, Op::RowNorms(self.id, eps))
    }

    pub fn concat_cols(self, other: Var<'t>) -> Var<'t> {
        let v = {
            let (a, b) = (self.value(), other.value());
            assert_eq!(a.rows(), b.rows(), "concat_cols row counts");
            let mut data = Vec::with_capacity(a.len() + b.len());
            for r in 0..a.rows() {
                data.extend_from_slice(a.row(r));
                data.extend_from_slice(b.row(r));
            }
            Tensor::matrix(a.rows(), a.cols() + b.cols(), data)
        };
        self.binary_op(other, v, Op::ConcatCols(self.id, other.id))
    }

    pub fn concat_rows(self, other: Var<'t>) -> Var<'t> {
        let v = {
            let (a, b) = (self.value(), other.value());
            assert_eq!(a.cols(), b.cols(), "concat_rows column counts");
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            Tensor::matrix(a.rows() + b.rows(), a.cols(), data)
        };
        self.binary_op(other, v, Op::ConcatRows(self.id, other.id))
    }

    pub fn gather_rows(self, idx: &[usize]) -> Var<'t> {
        let v = {
            let x = self.value();
            let mut data = Vec::with_capacity(idx.len() * x.cols());
            for &i in idx {
                data.extend_from_slice(x.row(i));
            }
            Tensor::matrix(idx.len(), x.cols(), data)
        };
        self.unary_op(v, Op::Gather(self.id, idx.to_vec()))
    }

    pub fn row(self, i: usize) -> Var<'t> {
        self.gather_rows(&[i])
    }

    /// Replaces whole rows of `self` with single-row values.
    pub fn replace_rows(self, rows: &[(usize, Var<'t>)]) -> Var<'t> {
        let v = {
            let mut base = self.value().clone();
            let n = base.cols();
            for (r, src) in rows {
                let s = src.value();
                assert_eq!(s.len(), n, "replace_rows width");
                base.data_mut()[r * n..(r + 1) * n].copy_from_slice(s.data());
            }
            base
        };
        let mut ids = vec![self.id];
        ids.extend(rows.iter().map(|(_, s)| s.id));
        let rg = self.tape.rg(&ids);
        let list = rows.iter().map(|(r, s)| (*r, s.id)).collect();
        self.tape.push(v, Op::ReplaceRows(self.id, list), rg)
    }

    /// Multiplies row `r` by the constant `factors[r]`.
    pub fn scale_rows(self, factors: Rc<Vec<f64>>) -> Var<'t> {
        let v = {
            let x = self.value();
            assert_eq!(x.rows(), factors.len(), "scale_rows factor count");
            let n = x.cols();
            let data = x.data().iter().enumerate().map(|(i, v)| v * factors[i / n]).collect();
            Tensor::new(x.shape().to_vec(), data).unwrap()
        };
        self.unary_op(v, Op::ScaleRows(self.id, factors))
    }

    /// Elementwise product with a constant of the same size.
    pub fn mul_const(self, c: Rc<Tensor>) -> Var<'t> {
        let v = self.value().zip_map(&c, |a, b| a * b);
        self.unary_op(v, Op::MulConst(self.id, c))
    }

    /// Log-softmax over all elements; entries where `mask` is true come out
    /// as `-inf` and receive no gradient.
    pub fn masked_log_softmax(self, mask: Rc<Vec<bool>>) -> Var<'t> {
        let v = {
            let x = self.value();
            assert_eq!(x.len(), mask.len(), "mask length");
            let lse = masked_logsumexp(x.data(), &mask);
            x.zip_map(&mask_tensor(&mask, x.shape()), |v, m| if m > 0.0 { f64::NEG_INFINITY } else { v - lse })
        };
        self.unary_op(v, Op::MaskedLogSoftmax(self.id, mask))
    }

    /// Softmax over all elements; masked entries are exactly zero.
    pub fn masked_softmax(self, mask: Rc<Vec<bool>>) -> Var<'t> {
        let v = {
            let x = self.value();
            assert_eq!(x.len(), mask.len(), "mask length");
            Tensor::new(x.shape().to_vec(), masked_softmax(x.data(), &mask)).unwrap()
        };
        self.unary_op(v, Op::MaskedSoftmax(self.id))
    }

    /// Flat element `idx` as a scalar.
    pub fn element(self, idx: usize) -> Var<'t> {
        let v = Tensor::scalar(self.value().data()[idx]);
        self.unary_op(v, Op::Element(self.id, idx))
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t> {
        let v = self.value().clone().reshape(shape.to_vec()).expect("reshape");
        self.unary_op(v, Op::Reshape(self.id))
    }
}

fn mask_tensor(mask: &[bool], shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect()).unwrap()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Log-sum-exp over the unmasked entries with max subtraction.
pub fn masked_logsumexp(x: &[f64], mask: &[bool]) -> f64 {
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    let s: f64 = x.iter().zip(mask).filter(|(_, &m)| !m).map(|(&v, _)| (v - max).exp()).sum();
    max + s.ln()
}

/// Softmax over the unmasked entries; masked entries are exactly zero.
pub fn masked_softmax(x: &[f64], mask: &[bool]) -> Vec<f64> {
    let max = x
        .iter()
        .zip(mask)
        .filter(|(_, &m)| !m)
        .map(|(&v, _)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().zip(mask).map(|(&v, &m)| if m { 0.0 } else { (v - max).exp() }).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}
