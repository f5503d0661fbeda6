//! Reverse-mode automatic differentiation over 2-D `f64` arrays.
//!
//! Every value on a [`Tape`] is a row-major `Array2<f64>`; batches are rows and
//! features are columns. Scalars are `1 x 1` arrays. A tape is built fresh for
//! each forward pass, then [`Tape::backward`] walks it in reverse to produce
//! gradients for parameters and for any leaf created with [`Tape::var`].
//!
//! Shape mismatches are programming errors and panic, in the same way ndarray
//! arithmetic does.

use std::cell::RefCell;
use std::collections::HashMap;
use std::ops;
use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::params::{ParamGrads, ParamId, ParamStore};

enum Op {
    Leaf,
    Param,
    MatMul(usize, usize),
    AddRow(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    MulCol(usize, usize),
    Scale(usize, f64),
    AddScalar(usize),
    Silu(usize),
    Relu(usize),
    Tanh(usize),
    Sigmoid(usize),
    Exp(usize),
    Ln(usize),
    Square(usize),
    Sqrt(usize),
    Softplus(usize),
    Clamp(usize, f64, f64),
    Concat(Vec<usize>),
    Slice(usize, usize, usize),
    Sum(usize),
    Mean(usize),
    RowSum(usize),
    BceWithLogits(usize, Rc<Array2<f64>>),
    SoftmaxXent(usize, Rc<Vec<usize>>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Recording tape for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    param_nodes: RefCell<HashMap<ParamId, usize>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    idx: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var(#{} {:?})", self.idx, self.shape())
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

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, needs_grad });
        Var { tape: self, idx: nodes.len() - 1 }
    }

    /// A leaf that gradients are tracked for.
    pub fn var(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// A leaf treated as a constant.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    /// Loads a parameter onto the tape. Repeated loads of the same id within
    /// one tape share a node, so gradients accumulate in one place.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        if let Some(&idx) = self.param_nodes.borrow().get(&id) {
            return Var { tape: self, idx };
        }
        let v = self.push(store.get(id).clone(), Op::Param, true);
        self.param_nodes.borrow_mut().insert(id, v.idx);
        v
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn unary(&self, a: usize, f: impl Fn(&Array2<f64>) -> Array2<f64>, op: Op) -> Var<'_> {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            (f(&nodes[a].value), nodes[a].needs_grad)
        };
        self.push(value, op, needs)
    }

    fn binary(
        &self,
        a: usize,
        b: usize,
        f: impl Fn(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
        op: Op,
    ) -> Var<'_> {
        let (value, needs) = {
            let nodes = self.nodes.borrow();
            (
                f(&nodes[a].value, &nodes[b].value),
                nodes[a].needs_grad || nodes[b].needs_grad,
            )
        };
        self.push(value, op, needs)
    }

    /// Back-propagates from a `1 x 1` root.
    pub fn backward(&self, root: Var<'_>) -> Gradients {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[root.idx].value.dim(), (1, 1), "backward root must be a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.idx] = Some(Array2::ones((1, 1)));

        for i in (0..=root.idx).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.needs_grad {
                continue;
            }
            let val = |j: usize| &nodes[j].value;
            let needs = |j: usize| nodes[j].needs_grad;
            let mut acc = |j: usize, delta: Array2<f64>| {
                if !nodes[j].needs_grad {
                    return;
                }
                match &mut grads[j] {
                    Some(existing) => *existing += &delta,
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Leaf | Op::Param => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if needs(*a) {
                        acc(*a, g.dot(&val(*b).t()));
                    }
                    if needs(*b) {
                        acc(*b, val(*a).t().dot(&g));
                    }
                }
                Op::AddRow(a, b) => {
                    if needs(*b) {
                        acc(*b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    acc(*a, g);
                }
                Op::Add(a, b) => {
                    if needs(*b) {
                        acc(*b, g.clone());
                    }
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    if needs(*b) {
                        acc(*b, -&g);
                    }
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    if needs(*a) {
                        acc(*a, &g * val(*b));
                    }
                    if needs(*b) {
                        acc(*b, &g * val(*a));
                    }
                }
                Op::Div(a, b) => {
                    if needs(*a) {
                        acc(*a, &g / val(*b));
                    }
                    if needs(*b) {
                        let mut gb = g.clone();
                        Zip::from(&mut gb)
                            .and(val(*a))
                            .and(val(*b))
                            .for_each(|gb, &x, &y| *gb = -*gb * x / (y * y));
                        acc(*b, gb);
                    }
                }
                Op::MulCol(a, c) => {
                    if needs(*c) {
                        let gc = (&g * val(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                        acc(*c, gc);
                    }
                    if needs(*a) {
                        acc(*a, &g * val(*c));
                    }
                }
                Op::Scale(a, k) => acc(*a, g * *k),
                Op::AddScalar(a) => acc(*a, g),
                Op::Silu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|g, &x| {
                        let s = sigmoid(x);
                        *g *= s * (1.0 + x * (1.0 - s));
                    });
                    acc(*a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0;
                        }
                    });
                    acc(*a, ga);
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|g, &y| *g *= 1.0 - y * y);
                    acc(*a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|g, &y| *g *= y * (1.0 - y));
                    acc(*a, ga);
                }
                Op::Exp(a) => acc(*a, g * &node.value),
                Op::Ln(a) => acc(*a, g / val(*a)),
                Op::Square(a) => acc(*a, g * val(*a) * 2.0),
                Op::Sqrt(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(&node.value).for_each(|g, &y| *g *= 0.5 / y);
                    acc(*a, ga);
                }
                Op::Softplus(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|g, &x| *g *= sigmoid(x));
                    acc(*a, ga);
                }
                Op::Clamp(a, lo, hi) => {
                    let mut ga = g;
                    Zip::from(&mut ga).and(val(*a)).for_each(|g, &x| {
                        if x < *lo || x > *hi {
                            *g = 0.0;
                        }
                    });
                    acc(*a, ga);
                }
                Op::Concat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let width = val(p).ncols();
                        if needs(p) {
                            acc(p, g.slice(s![.., start..start + width]).to_owned());
                        }
                        start += width;
                    }
                }
                Op::Slice(a, start, end) => {
                    let mut ga = Array2::zeros(val(*a).raw_dim());
                    ga.slice_mut(s![.., *start..*end]).assign(&g);
                    acc(*a, ga);
                }
                Op::Sum(a) => acc(*a, Array2::from_elem(val(*a).raw_dim(), g[[0, 0]])),
                Op::Mean(a) => {
                    let n = val(*a).len() as f64;
                    acc(*a, Array2::from_elem(val(*a).raw_dim(), g[[0, 0]] / n));
                }
                Op::RowSum(a) => {
                    let ga = g.broadcast(val(*a).raw_dim()).expect("row sum broadcast").to_owned();
                    acc(*a, ga);
                }
                Op::BceWithLogits(a, target) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(val(*a))
                        .and(target.as_ref())
                        .for_each(|g, &x, &y| *g *= sigmoid(x) - y);
                    acc(*a, ga);
                }
                Op::SoftmaxXent(a, labels) => {
                    let logits = val(*a);
                    let mut ga = Array2::zeros(logits.raw_dim());
                    for (r, (row, &label)) in logits.rows().into_iter().zip(labels.iter()).enumerate() {
                        let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                        let z: f64 = row.iter().map(|&x| (x - m).exp()).sum();
                        for (c, &x) in row.iter().enumerate() {
                            let p = (x - m).exp() / z;
                            ga[[r, c]] = g[[r, 0]] * (p - if c == label { 1.0 } else { 0.0 });
                        }
                    }
                    acc(*a, ga);
                }
            }
        }

        let param_index = self.param_nodes.borrow().clone();
        Gradients { grads, param_index }
    }
}

/// Output of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
    param_index: HashMap<ParamId, usize>,
}

impl Gradients {
    /// Gradient with respect to a leaf or parameter node; `None` when the root
    /// does not depend on it.
    pub fn wrt(&self, v: Var<'_>) -> Option<&Array2<f64>> {
        self.grads.get(v.idx).and_then(Option::as_ref)
    }

    pub fn param(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.param_index.get(&id).and_then(|&i| self.grads[i].as_ref())
    }

    /// Moves the parameter gradients out, indexed like the store.
    pub fn into_param_grads(mut self, store: &ParamStore) -> ParamGrads {
        let mut out = ParamGrads::zeros_like(store);
        for (&id, &idx) in &self.param_index {
            if let Some(g) = self.grads[idx].take() {
                out.set(id, g);
            }
        }
        out
    }
}

impl<'t> Var<'t> {
    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.nodes.borrow()[self.idx].value.dim()
    }

    pub fn rows(&self) -> usize {
        self.shape().0
    }

    pub fn cols(&self) -> usize {
        self.shape().1
    }

    /// Copy of the current value.
    pub fn value(&self) -> Array2<f64> {
        self.tape.nodes.borrow()[self.idx].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Array2<f64>) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.idx].value)
    }

    /// Value of a `1 x 1` node.
    pub fn item(&self) -> f64 {
        self.with_value(|v| {
            assert_eq!(v.dim(), (1, 1), "item() on non-scalar");
            v[[0, 0]]
        })
    }

    pub fn matmul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.idx, rhs.idx, |a, b| a.dot(b), Op::MatMul(self.idx, rhs.idx))
    }

    /// Adds a `1 x N` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        self.tape.binary(
            self.idx,
            row.idx,
            |a, b| {
                assert_eq!(b.nrows(), 1, "add_row expects a single row");
                a + b
            },
            Op::AddRow(self.idx, row.idx),
        )
    }

    pub fn div(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(self.idx, rhs.idx, |a, b| a / b, Op::Div(self.idx, rhs.idx))
    }

    /// Multiplies each row by the matching entry of a `B x 1` column.
    pub fn mul_col(self, col: Var<'t>) -> Var<'t> {
        self.tape.binary(
            self.idx,
            col.idx,
            |a, c| {
                assert_eq!(c.dim(), (a.nrows(), 1), "mul_col expects a B x 1 column");
                a * c
            },
            Op::MulCol(self.idx, col.idx),
        )
    }

    pub fn scale(self, k: f64) -> Var<'t> {
        self.tape.unary(self.idx, |a| a * k, Op::Scale(self.idx, k))
    }

    pub fn add_scalar(self, k: f64) -> Var<'t> {
        self.tape.unary(self.idx, |a| a + k, Op::AddScalar(self.idx))
    }

    pub fn silu(self) -> Var<'t> {
        self.tape.unary(self.idx, |a| a.mapv(|x| x * sigmoid(x)), Op::Silu(self.idx))
    }

    pub fn relu(self) -> Var<'t> {
        self.tape.unary(self.idx, |a| a.mapv(|x| x.max(0.0)), Op::Relu(self.idx))
    }

    pub fn tanh(self) -> Var<'t> {
        self.tape.unary(self.idx, |a| a.mapv(f64::tanh), Op::Tanh(self.idx))
    }

    pub fn sigmoid(self) -> Var<'t> {
        self.tape.unary(self.idx, |a| a.mapv(sigmoid), Op::Sigmoid(self.idx))
    }

    pub fn exp(self) -> Var<'t> {
        self.tape.unary(self.idx, |a| a.mapv(f64::exp), Op::Exp(self.idx))
    }

    pub fn ln(self) -> Var<'t> {
        self.tape.unary(self.idx, |a| a.mapv(f64::ln), Op::Ln(self.idx))
    }

    pub fn square(self) -> Var<'t> {
        self.tape.unary(self.idx, |a| a.mapv(|x| x * x), Op::Square(self.idx))
    }

    pub fn sqrt(self) -> Var<'t> {
        self.tape.unary(self.idx, |a| a.mapv(f64::sqrt), Op::Sqrt(self.idx))
    }

    pub fn softplus(self) -> Var<'t> {
        self.tape.unary(self.idx, |a| a.mapv(softplus), Op::Softplus(self.idx))
    }

    /// Elementwise clamp; the gradient is zero where the input lies outside
    /// `[lo, hi]`.
    pub fn clamp(self, lo: f64, hi: f64) -> Var<'t> {
        self.tape.unary(self.idx, |a| a.mapv(|x| x.clamp(lo, hi)), Op::Clamp(self.idx, lo, hi))
    }

    /// Column range `[start, end)`.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        self.tape.unary(
            self.idx,
            |a| a.slice(s![.., start..end]).to_owned(),
            Op::Slice(self.idx, start, end),
        )
    }

    pub fn sum(self) -> Var<'t> {
        self.tape.unary(self.idx, |a| Array2::from_elem((1, 1), a.sum()), Op::Sum(self.idx))
    }

    pub fn mean(self) -> Var<'t> {
        self.tape.unary(
            self.idx,
            |a| Array2::from_elem((1, 1), a.sum() / a.len() as f64),
            Op::Mean(self.idx),
        )
    }

    /// Per-row sum, `B x N -> B x 1`.
    pub fn row_sum(self) -> Var<'t> {
        self.tape.unary(
            self.idx,
            |a| a.sum_axis(Axis(1)).insert_axis(Axis(1)),
            Op::RowSum(self.idx),
        )
    }

    /// Elementwise binary cross-entropy of `self` as logits against fixed
    /// targets in `[0, 1]`.
    pub fn bce_with_logits(self, targets: &Array2<f64>) -> Var<'t> {
        let targets = Rc::new(targets.clone());
        let t2 = Rc::clone(&targets);
        self.tape.unary(
            self.idx,
            move |a| {
                assert_eq!(a.dim(), t2.dim(), "bce target shape");
                let mut out = a.clone();
                Zip::from(&mut out).and(t2.as_ref()).for_each(|x, &y| *x = softplus(*x) - *x * y);
                out
            },
            Op::BceWithLogits(self.idx, targets),
        )
    }

    /// Per-row softmax cross-entropy against integer labels, `B x C -> B x 1`.
    pub fn softmax_cross_entropy(self, labels: &[usize]) -> Var<'t> {
        let labels = Rc::new(labels.to_vec());
        let l2 = Rc::clone(&labels);
        self.tape.unary(
            self.idx,
            move |a| {
                assert_eq!(a.nrows(), l2.len(), "label count");
                let mut out = Array2::zeros((a.nrows(), 1));
                for (r, row) in a.rows().into_iter().enumerate() {
                    let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
                    let lse = m + row.iter().map(|&x| (x - m).exp()).sum::<f64>().ln();
                    out[[r, 0]] = lse - row[l2[r]];
                }
                out
            },
            Op::SoftmaxXent(self.idx, labels),
        )
    }
}

/// Concatenates along columns; all parts must share the row count.
pub fn concat_cols<'t>(parts: &[Var<'t>]) -> Var<'t> {
    assert!(!parts.is_empty(), "concat of nothing");
    let tape = parts[0].tape;
    let (value, needs) = {
        let nodes = tape.nodes.borrow();
        let views: Vec<_> = parts.iter().map(|p| nodes[p.idx].value.view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("concat row mismatch");
        (value, parts.iter().any(|p| nodes[p.idx].needs_grad))
    };
    tape.push(value, Op::Concat(parts.iter().map(|p| p.idx).collect()), needs)
}

impl<'t> ops::Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(
            self.idx,
            rhs.idx,
            |a, b| {
                assert_eq!(a.dim(), b.dim(), "add shape");
                a + b
            },
            Op::Add(self.idx, rhs.idx),
        )
    }
}

impl<'t> ops::Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(
            self.idx,
            rhs.idx,
            |a, b| {
                assert_eq!(a.dim(), b.dim(), "sub shape");
                a - b
            },
            Op::Sub(self.idx, rhs.idx),
        )
    }
}

impl<'t> ops::Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.tape.binary(
            self.idx,
            rhs.idx,
            |a, b| {
                assert_eq!(a.dim(), b.dim(), "mul shape");
                a * b
            },
            Op::Mul(self.idx, rhs.idx),
        )
    }
}

impl<'t> ops::Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}
