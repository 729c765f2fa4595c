//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s as a node in
//! a Wengert list. [`Tape::backward`] walks the list once in reverse and
//! accumulates adjoints, so a parameter reused at every step of a long
//! rollout receives the sum of its per-step gradients.
//!
//! All values are 2-D; scalars are `1 × 1`.
//!
//! ```
//! use dpc::autodiff::Tape;
//! use ndarray::arr2;
//!
//! let tape = Tape::new();
//! let x = tape.var(arr2(&[[1.0, 2.0]]));
//! let loss = (x * x).sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &arr2(&[[2.0, 4.0]]));
//! ```

use std::cell::{Ref, RefCell};
use std::ops::{Add, Mul, Neg, Sub};

use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis, Zip};

use super::linalg;
use crate::error::{DpcError, Result};

enum Op {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    MulRow(usize, usize),
    AddScalar(usize, usize),
    MulScalar(usize, usize),
    AddDiag(usize, usize),
    Scale(usize, f64),
    MatMul(usize, usize),
    /// `x·w + b`, optionally followed by ELU; only the output is stored.
    Dense { x: usize, w: usize, b: usize, elu: bool },
    Transpose(usize),
    Exp(usize),
    Ln(usize),
    Elu(usize),
    Abs(usize),
    Sum(usize),
    Mean(usize),
    SqDist(usize, usize),
    SolveSpd { a: usize, b: usize, lower: Array2<f64> },
    TraceMatMul(usize, usize),
    SliceCols(usize, usize),
    ScatterCols { src: usize, cols: Vec<usize> },
    HConcat(Vec<usize>),
    /// Row-wise map with stored Jacobians, `rows × out × in`, row-major.
    RowJacobian { input: usize, jac: Vec<f64>, in_cols: usize },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

/// Recording of a computation for reverse-mode differentiation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({}, {:?})", self.id, self.shape())
    }
}

/// Adjoints of the leaves that require gradients.
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var<'_>) -> Option<&Array2<f64>> {
        self.grads.get(v.id).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of the given shape if `v` did not influence the loss.
    pub fn get_or_zeros(&self, v: Var<'_>) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(v.shape()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, op, requires_grad });
        Var { tape: self, id: nodes.len() - 1 }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Array2<f64>, op: Op, parents: &[usize]) -> Var<'_> {
        let rg = self.requires(parents);
        self.push(value, op, rg)
    }

    /// Trainable leaf.
    pub fn var(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Array2<f64>) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&self, value: f64) -> Var<'_> {
        self.var(Array2::from_elem((1, 1), value))
    }

    pub fn constant_scalar(&self, value: f64) -> Var<'_> {
        self.constant(Array2::from_elem((1, 1), value))
    }

    fn value_of(&self, id: usize) -> Ref<'_, Array2<f64>> {
        Ref::map(self.nodes.borrow(), |n| &n[id].value)
    }

    /// Horizontal concatenation of equally tall matrices.
    pub fn hconcat<'t>(&'t self, parts: &[Var<'t>]) -> Var<'t> {
        assert!(!parts.is_empty(), "hconcat of nothing");
        let value = {
            let nodes = self.nodes.borrow();
            let views: Vec<ArrayView2<f64>> = parts.iter().map(|p| nodes[p.id].value.view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("hconcat: row counts differ")
        };
        let ids: Vec<usize> = parts.iter().map(|p| p.id).collect();
        self.record(value, Op::HConcat(ids.clone()), &ids)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        let n = loss.id + 1;
        if nodes[loss.id].value.dim() != (1, 1) {
            return Err(DpcError::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                nodes[loss.id].value.dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Array2::ones((1, 1)));
        for id in (0..n).rev() {
            let node = &nodes[id];
            if matches!(node.op, Op::Leaf) || !node.requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            let val = |i: usize| &nodes[i].value;
            let mut acc = |i: usize, delta: Array2<f64>| {
                if !nodes[i].requires_grad {
                    return;
                }
                match &mut grads[i] {
                    Some(existing) => *existing += &delta,
                    slot => *slot = Some(delta),
                }
            };
            let wants = |i: usize| nodes[i].requires_grad;
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Add(a, b) => {
                    if wants(*b) {
                        acc(*b, g.clone());
                    }
                    acc(*a, g);
                }
                Op::Sub(a, b) => {
                    if wants(*b) {
                        acc(*b, -&g);
                    }
                    acc(*a, g);
                }
                Op::Mul(a, b) => {
                    if wants(*a) {
                        acc(*a, &g * val(*b));
                    }
                    if wants(*b) {
                        acc(*b, &g * val(*a));
                    }
                }
                Op::AddRow(a, row) => {
                    if wants(*row) {
                        acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    acc(*a, g);
                }
                Op::MulRow(a, row) => {
                    if wants(*row) {
                        acc(*row, (&g * val(*a)).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if wants(*a) {
                        acc(*a, &g * val(*row));
                    }
                }
                Op::AddScalar(a, sc) => {
                    if wants(*sc) {
                        acc(*sc, Array2::from_elem((1, 1), g.sum()));
                    }
                    acc(*a, g);
                }
                Op::MulScalar(a, sc) => {
                    if wants(*sc) {
                        let d = Zip::from(&g).and(val(*a)).fold(0.0, |s, &x, &y| s + x * y);
                        acc(*sc, Array2::from_elem((1, 1), d));
                    }
                    if wants(*a) {
                        let k = val(*sc)[[0, 0]];
                        acc(*a, g.mapv(|v| v * k));
                    }
                }
                Op::AddDiag(a, sc) => {
                    if wants(*sc) {
                        acc(*sc, Array2::from_elem((1, 1), g.diag().sum()));
                    }
                    acc(*a, g);
                }
                Op::Scale(a, k) => {
                    let k = *k;
                    acc(*a, g.mapv(|v| v * k));
                }
                Op::MatMul(a, b) => {
                    if wants(*a) {
                        acc(*a, g.dot(&val(*b).t()));
                    }
                    if wants(*b) {
                        acc(*b, val(*a).t().dot(&g));
                    }
                }
                Op::Dense { x, w, b, elu } => {
                    let mut d = g;
                    if *elu {
                        Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                            if y <= 0.0 {
                                *d *= y + 1.0;
                            }
                        });
                    }
                    if wants(*b) {
                        acc(*b, d.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if wants(*w) {
                        acc(*w, val(*x).t().dot(&d));
                    }
                    if wants(*x) {
                        acc(*x, d.dot(&val(*w).t()));
                    }
                }
                Op::Transpose(a) => acc(*a, g.t().to_owned()),
                Op::Exp(a) => acc(*a, &g * &node.value),
                Op::Ln(a) => acc(*a, &g / val(*a)),
                Op::Elu(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(&node.value).for_each(|d, &y| {
                        if y <= 0.0 {
                            *d *= y + 1.0;
                        }
                    });
                    acc(*a, d);
                }
                Op::Abs(a) => {
                    let mut d = g;
                    Zip::from(&mut d).and(val(*a)).for_each(|d, &x| *d *= sign(x));
                    acc(*a, d);
                }
                Op::Sum(a) => acc(*a, Array2::from_elem(val(*a).dim(), g[[0, 0]])),
                Op::Mean(a) => {
                    let shape = val(*a).dim();
                    let k = g[[0, 0]] / (shape.0 * shape.1) as f64;
                    acc(*a, Array2::from_elem(shape, k));
                }
                Op::SqDist(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    if wants(*a) {
                        let rs = g.sum_axis(Axis(1));
                        let mut d = av * &rs.insert_axis(Axis(1));
                        d -= &g.dot(bv);
                        d *= 2.0;
                        acc(*a, d);
                    }
                    if wants(*b) {
                        let cs = g.sum_axis(Axis(0));
                        let mut d = bv * &cs.insert_axis(Axis(1));
                        d -= &g.t().dot(av);
                        d *= 2.0;
                        acc(*b, d);
                    }
                }
                Op::SolveSpd { a, b, lower } => {
                    let gb = linalg::cholesky_solve(&lower.view(), &g.view());
                    if wants(*a) {
                        acc(*a, -gb.dot(&node.value.t()));
                    }
                    acc(*b, gb);
                }
                Op::TraceMatMul(a, b) => {
                    let k = g[[0, 0]];
                    if wants(*a) {
                        acc(*a, val(*b).t().mapv(|v| v * k));
                    }
                    if wants(*b) {
                        acc(*b, val(*a).t().mapv(|v| v * k));
                    }
                }
                Op::SliceCols(a, start) => {
                    let mut d = Array2::zeros(val(*a).dim());
                    d.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    acc(*a, d);
                }
                Op::ScatterCols { src, cols } => {
                    let mut d = Array2::zeros(val(*src).dim());
                    for (k, &c) in cols.iter().enumerate() {
                        d.column_mut(k).assign(&g.column(c));
                    }
                    acc(*src, d);
                }
                Op::HConcat(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).ncols();
                        if wants(p) {
                            acc(p, g.slice(s![.., start..start + w]).to_owned());
                        }
                        start += w;
                    }
                }
                Op::RowJacobian { input, jac, in_cols } => {
                    let (rows, out_cols) = g.dim();
                    let in_cols = *in_cols;
                    let mut d = Array2::zeros((rows, in_cols));
                    for r in 0..rows {
                        let jr = &jac[r * out_cols * in_cols..(r + 1) * out_cols * in_cols];
                        for i in 0..out_cols {
                            let gi = g[[r, i]];
                            if gi == 0.0 {
                                continue;
                            }
                            for j in 0..in_cols {
                                d[[r, j]] += gi * jr[i * in_cols + j];
                            }
                        }
                    }
                    acc(*input, d);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

impl<'t> Var<'t> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn value(&self) -> Ref<'t, Array2<f64>> {
        self.tape.value_of(self.id)
    }

    pub fn to_array(self) -> Array2<f64> {
        self.value().clone()
    }

    /// Value of a `1 × 1` variable.
    pub fn item(self) -> f64 {
        let v = self.value();
        assert_eq!(v.dim(), (1, 1), "item() on non-scalar");
        v[[0, 0]]
    }

    pub fn shape(self) -> (usize, usize) {
        self.value().dim()
    }

    pub fn requires_grad(self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    fn unary(self, op: Op, f: impl FnOnce(&Array2<f64>) -> Array2<f64>) -> Var<'t> {
        let v = f(&self.value());
        self.tape.record(v, op, &[self.id])
    }

    fn binary(
        self,
        other: Var<'t>,
        op: Op,
        f: impl FnOnce(&Array2<f64>, &Array2<f64>) -> Array2<f64>,
    ) -> Var<'t> {
        assert!(std::ptr::eq(self.tape, other.tape), "variables from different tapes");
        let v = f(&self.value(), &other.value());
        self.tape.record(v, op, &[self.id, other.id])
    }

    fn same_shape(self, other: Var<'t>, what: &str) {
        let (a, b) = (self.shape(), other.shape());
        assert_eq!(a, b, "{what}: shape mismatch {a:?} vs {b:?}");
    }

    pub fn matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.shape(), other.shape());
        assert_eq!(a.1, b.0, "matmul: inner dimensions {a:?} x {b:?}");
        self.binary(other, Op::MatMul(self.id, other.id), |x, y| x.dot(y))
    }

    /// Fused affine layer `self·w + b` (with `b` a `1 × out` row), optionally
    /// followed by ELU. Equal bit for bit to the unfused composition.
    pub fn dense(self, w: Var<'t>, b: Var<'t>, elu_activation: bool) -> Var<'t> {
        assert_eq!(self.shape().1, w.shape().0, "dense: inner dimensions differ");
        assert_eq!(b.shape(), (1, w.shape().1), "dense: bias shape");
        let value = {
            let (x, wv, bv) = (self.value(), w.value(), b.value());
            let mut y = x.dot(&*wv) + &*bv;
            if elu_activation {
                y.mapv_inplace(elu);
            }
            y
        };
        let op = Op::Dense { x: self.id, w: w.id, b: b.id, elu: elu_activation };
        self.tape.record(value, op, &[self.id, w.id, b.id])
    }

    pub fn t(self) -> Var<'t> {
        self.unary(Op::Transpose(self.id), |x| x.t().as_standard_layout().into_owned())
    }

    /// Add a `1 × cols` row to every row.
    pub fn add_row(self, row: Var<'t>) -> Var<'t> {
        assert_eq!(row.shape(), (1, self.shape().1), "add_row: bad row shape");
        self.binary(row, Op::AddRow(self.id, row.id), |x, r| x + r)
    }

    /// Multiply every row elementwise by a `1 × cols` row.
    pub fn mul_row(self, row: Var<'t>) -> Var<'t> {
        assert_eq!(row.shape(), (1, self.shape().1), "mul_row: bad row shape");
        self.binary(row, Op::MulRow(self.id, row.id), |x, r| x * r)
    }

    /// Add a `1 × 1` variable to every entry.
    pub fn add_scalar(self, sc: Var<'t>) -> Var<'t> {
        assert_eq!(sc.shape(), (1, 1), "add_scalar: not a scalar");
        self.binary(sc, Op::AddScalar(self.id, sc.id), |x, s| x + s[[0, 0]])
    }

    /// Multiply every entry by a `1 × 1` variable.
    pub fn mul_scalar(self, sc: Var<'t>) -> Var<'t> {
        assert_eq!(sc.shape(), (1, 1), "mul_scalar: not a scalar");
        self.binary(sc, Op::MulScalar(self.id, sc.id), |x, s| x * s[[0, 0]])
    }

    /// `A + s·I` for square `A` and scalar variable `s`.
    pub fn add_diag(self, sc: Var<'t>) -> Var<'t> {
        let (r, c) = self.shape();
        assert_eq!(r, c, "add_diag: non-square matrix");
        assert_eq!(sc.shape(), (1, 1), "add_diag: not a scalar");
        self.binary(sc, Op::AddDiag(self.id, sc.id), |x, s| {
            let mut v = x.clone();
            v.diag_mut().mapv_inplace(|d| d + s[[0, 0]]);
            v
        })
    }

    /// Multiply by a constant.
    pub fn scale(self, k: f64) -> Var<'t> {
        self.unary(Op::Scale(self.id, k), |x| x * k)
    }

    pub fn exp(self) -> Var<'t> {
        self.unary(Op::Exp(self.id), |x| x.mapv(f64::exp))
    }

    pub fn ln(self) -> Var<'t> {
        self.unary(Op::Ln(self.id), |x| x.mapv(f64::ln))
    }

    /// Exponential linear unit with unit scale.
    pub fn elu(self) -> Var<'t> {
        self.unary(Op::Elu(self.id), |x| x.mapv(elu))
    }

    pub fn abs(self) -> Var<'t> {
        self.unary(Op::Abs(self.id), |x| x.mapv(f64::abs))
    }

    pub fn sum(self) -> Var<'t> {
        self.unary(Op::Sum(self.id), |x| Array2::from_elem((1, 1), x.sum()))
    }

    pub fn mean(self) -> Var<'t> {
        self.unary(Op::Mean(self.id), |x| {
            Array2::from_elem((1, 1), x.sum() / x.len() as f64)
        })
    }

    /// Pairwise squared Euclidean distances between the rows of `self` and `other`.
    pub fn sq_dist(self, other: Var<'t>) -> Var<'t> {
        assert_eq!(self.shape().1, other.shape().1, "sq_dist: feature dimensions differ");
        self.binary(other, Op::SqDist(self.id, other.id), |a, b| pairwise_sq_dist(a.view(), b.view()))
    }

    /// `A⁻¹ B` for symmetric positive definite `A = self`, via Cholesky with
    /// jitter escalation.
    pub fn solve_spd(self, b: Var<'t>) -> Result<Var<'t>> {
        assert!(std::ptr::eq(self.tape, b.tape), "variables from different tapes");
        let (lower, x) = {
            let a = self.value();
            let bv = b.value();
            assert_eq!(a.nrows(), bv.nrows(), "solve_spd: row counts differ");
            let factor = linalg::cholesky_with_jitter(&a.view()).map_err(|condition| {
                DpcError::SingularGram { lambda: f64::NAN, condition }
            })?;
            let x = linalg::cholesky_solve(&factor.lower.view(), &bv.view());
            (factor.lower, x)
        };
        Ok(self.tape.record(x, Op::SolveSpd { a: self.id, b: b.id, lower }, &[self.id, b.id]))
    }

    /// `tr(self · other)` without forming the product.
    pub fn trace_matmul(self, other: Var<'t>) -> Var<'t> {
        let (a, b) = (self.shape(), other.shape());
        assert!(a.0 == b.1 && a.1 == b.0, "trace_matmul: shapes {a:?} and {b:?}");
        self.binary(other, Op::TraceMatMul(self.id, other.id), |x, y| {
            let t = Zip::from(x).and(y.t()).fold(0.0, |s, &p, &q| s + p * q);
            Array2::from_elem((1, 1), t)
        })
    }

    /// Columns `start..end`.
    pub fn slice_cols(self, start: usize, end: usize) -> Var<'t> {
        assert!(start <= end && end <= self.shape().1, "slice_cols: out of range");
        self.unary(Op::SliceCols(self.id, start), |x| x.slice(s![.., start..end]).to_owned())
    }

    /// Column `k` of `self` becomes column `cols[k]` of a zero matrix with `width` columns.
    pub fn scatter_cols(self, width: usize, cols: &[usize]) -> Var<'t> {
        assert_eq!(cols.len(), self.shape().1, "scatter_cols: column count");
        assert!(cols.iter().all(|&c| c < width), "scatter_cols: target out of range");
        let cols = cols.to_vec();
        let v = {
            let x = self.value();
            let mut out = Array2::zeros((x.nrows(), width));
            for (k, &c) in cols.iter().enumerate() {
                out.column_mut(c).assign(&x.column(k));
            }
            out
        };
        self.tape.record(v, Op::ScatterCols { src: self.id, cols }, &[self.id])
    }

    /// Apply `f(row, input_row, output_row, jacobian)` independently to each
    /// row. `f` must fill the output row and the row-major `out × in`
    /// Jacobian of output with respect to input.
    pub fn map_rows(
        self,
        out_cols: usize,
        mut f: impl FnMut(usize, ArrayView1<f64>, &mut [f64], &mut [f64]),
    ) -> Var<'t> {
        let (value, jac, in_cols) = {
            let x = self.value();
            let (rows, in_cols) = x.dim();
            let mut value = Array2::zeros((rows, out_cols));
            let mut jac = vec![0.0; rows * out_cols * in_cols];
            let mut out_row = vec![0.0; out_cols];
            for r in 0..rows {
                f(
                    r,
                    x.row(r),
                    &mut out_row,
                    &mut jac[r * out_cols * in_cols..(r + 1) * out_cols * in_cols],
                );
                value.row_mut(r).assign(&ArrayView1::from(&out_row));
            }
            (value, jac, in_cols)
        };
        let op = Op::RowJacobian { input: self.id, jac, in_cols };
        self.tape.record(value, op, &[self.id])
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

/// Pairwise squared distances, computed from explicit differences so that
/// identical rows give exactly zero.
pub fn pairwise_sq_dist(a: ArrayView2<f64>, b: ArrayView2<f64>) -> Array2<f64> {
    let (n, d) = a.dim();
    let p = b.nrows();
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    let (asl, bsl) = (a.as_slice().unwrap(), b.as_slice().unwrap());
    Array2::from_shape_fn((n, p), |(i, j)| {
        let (x, y) = (&asl[i * d..(i + 1) * d], &bsl[j * d..(j + 1) * d]);
        x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum()
    })
}

impl<'t> Add for Var<'t> {
    type Output = Var<'t>;
    fn add(self, rhs: Var<'t>) -> Var<'t> {
        self.same_shape(rhs, "add");
        self.binary(rhs, Op::Add(self.id, rhs.id), |x, y| x + y)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Var<'t>;
    fn sub(self, rhs: Var<'t>) -> Var<'t> {
        self.same_shape(rhs, "sub");
        self.binary(rhs, Op::Sub(self.id, rhs.id), |x, y| x - y)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Var<'t>;
    fn mul(self, rhs: Var<'t>) -> Var<'t> {
        self.same_shape(rhs, "mul");
        self.binary(rhs, Op::Mul(self.id, rhs.id), |x, y| x * y)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Var<'t>;
    fn neg(self) -> Var<'t> {
        self.scale(-1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;
    use rand::{Rng, SeedableRng};

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Compare reverse-mode gradients of `build` with central differences
    /// for every entry of every input.
    fn fd_check<F>(inputs: &[Array2<f64>], tol: f64, build: F)
    where
        F: for<'t> Fn(&'t Tape, &[Var<'t>]) -> Var<'t>,
    {
        let eval = |vals: &[Array2<f64>]| {
            let tape = Tape::new();
            let vars: Vec<Var> = vals.iter().map(|v| tape.var(v.clone())).collect();
            build(&tape, &vars).item()
        };
        let tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|v| tape.var(v.clone())).collect();
        let loss = build(&tape, &vars);
        let grads = tape.backward(loss).unwrap();
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let g = grads.get_or_zeros(vars[k]);
            for r in 0..input.nrows() {
                for c in 0..input.ncols() {
                    let mut plus = inputs.to_vec();
                    plus[k][[r, c]] += h;
                    let mut minus = inputs.to_vec();
                    minus[k][[r, c]] -= h;
                    let fd = (eval(&plus) - eval(&minus)) / (2.0 * h);
                    let err = (fd - g[[r, c]]).abs() / fd.abs().max(g[[r, c]].abs()).max(1.0);
                    assert!(err < tol, "input {k} entry ({r},{c}): tape {} vs fd {fd}", g[[r, c]]);
                }
            }
        }
    }

    #[test]
    fn sum_gradient_is_ones() {
        let tape = Tape::new();
        let x = tape.var(random(3, 4, 0));
        let grads = tape.backward(x.sum()).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Array2::<f64>::ones((3, 4)));
    }

    #[test]
    fn quadratic_form_gradient() {
        // ∇ₓ xᵀAx = (A + Aᵀ)x
        let a = arr2(&[[2.0, 1.0], [0.0, 3.0]]);
        let xv = arr2(&[[1.0], [-2.0]]);
        let tape = Tape::new();
        let x = tape.var(xv.clone());
        let av = tape.constant(a.clone());
        let loss = x.t().matmul(av.matmul(x));
        assert_eq!(loss.item(), 2.0 - 2.0 + 12.0);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads.get(x).unwrap(), &(&a + &a.t()).dot(&xv));
        assert!(grads.get(av).is_none());
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let tape = Tape::new();
        let x = tape.var(random(2, 2, 1));
        assert!(matches!(tape.backward(x), Err(DpcError::Contract(_))));
    }

    #[test]
    fn reused_variable_accumulates() {
        let tape = Tape::new();
        let x = tape.scalar(3.0);
        let mut y = x;
        for _ in 0..4 {
            y = y + x;
        }
        assert_eq!(tape.backward(y).unwrap().get(x).unwrap()[[0, 0]], 5.0);
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        let inputs = [random(3, 4, 2), random(3, 4, 3), random(1, 4, 4), random(1, 1, 5)];
        fd_check(&inputs, 1e-7, |_, v| {
            let a = (v[0] + v[1]) * (v[0] - v[1]).add_row(v[2]);
            let b = a.mul_row(v[2]).add_scalar(v[3]).mul_scalar(v[3]).scale(0.7);
            (b.elu() + (-b).exp()).abs().sum() + v[1].mul_scalar(v[3]).mean()
        });
    }

    #[test]
    fn ln_and_transpose_match_finite_differences() {
        let inputs = [random(3, 2, 6).mapv(|x| x + 2.0), random(2, 3, 7)];
        fd_check(&inputs, 1e-7, |_, v| (v[0].ln().t() * v[1]).sum());
    }

    #[test]
    fn matmul_and_dense_match_finite_differences() {
        let inputs = [random(4, 3, 8), random(3, 5, 9), random(1, 5, 10), random(5, 2, 11)];
        fd_check(&inputs, 1e-7, |_, v| {
            let h = v[0].dense(v[1], v[2], true);
            let y = h.dense(v[3], v[2].slice_cols(0, 2), false);
            (y * y).sum() + v[0].matmul(v[1]).sum()
        });
    }

    #[test]
    fn dense_equals_unfused_composition_bitwise() {
        let (x, w, b) = (random(6, 4, 12), random(4, 3, 13), random(1, 3, 14));
        let tape = Tape::new();
        let (xv, wv, bv) = (tape.var(x), tape.var(w), tape.var(b));
        for act in [false, true] {
            let fused = xv.dense(wv, bv, act);
            let mut plain = xv.matmul(wv).add_row(bv);
            if act {
                plain = plain.elu();
            }
            assert_eq!(*fused.value(), *plain.value());
        }
    }

    #[test]
    fn sq_dist_matches_finite_differences() {
        let inputs = [random(4, 3, 15), random(5, 3, 16)];
        fd_check(&inputs, 1e-7, |_, v| {
            let d = v[0].sq_dist(v[1]);
            let s = v[0].sq_dist(v[0]);
            d.scale(-0.5).exp().sum() + s.scale(-0.3).exp().sum()
        });
    }

    #[test]
    fn sq_dist_of_identical_rows_is_exactly_zero() {
        let a = random(5, 7, 17);
        let d = pairwise_sq_dist(a.view(), a.view());
        assert!(d.diag().iter().all(|&v| v == 0.0));
        assert_eq!(d, d.t());
    }

    #[test]
    fn solve_spd_and_trace_match_finite_differences() {
        let m = random(4, 4, 18);
        let base = m.t().dot(&m) + Array2::<f64>::eye(4);
        let inputs = [base, random(4, 2, 19), random(2, 4, 20), random(1, 1, 21)];
        fd_check(&inputs, 1e-6, |_, v| {
            // symmetrize so the perturbed matrix stays a valid SPD input
            let a = (v[0] + v[0].t()).scale(0.5).add_diag(v[3].exp());
            let x = a.solve_spd(v[1]).unwrap();
            x.trace_matmul(v[2]) + (x * x).sum()
        });
    }

    #[test]
    fn solve_spd_solves() {
        let tape = Tape::new();
        let a = tape.constant(arr2(&[[4.0, 1.0], [1.0, 3.0]]));
        let b = tape.constant(arr2(&[[1.0], [2.0]]));
        let x = a.solve_spd(b).unwrap().to_array();
        assert!((x[[0, 0]] - 1.0 / 11.0).abs() < 1e-14);
        assert!((x[[1, 0]] - 7.0 / 11.0).abs() < 1e-14);
    }

    #[test]
    fn solve_spd_rejects_indefinite() {
        let tape = Tape::new();
        let a = tape.constant(arr2(&[[1.0, 0.0], [0.0, -1.0]]));
        let b = tape.constant(arr2(&[[1.0], [1.0]]));
        assert!(matches!(a.solve_spd(b), Err(DpcError::SingularGram { .. })));
    }

    #[test]
    fn column_plumbing_matches_finite_differences() {
        let inputs = [random(3, 2, 22), random(3, 4, 23), random(3, 5, 24)];
        fd_check(&inputs, 1e-7, |tape, v| {
            let wide = v[0].scatter_cols(5, &[4, 1]);
            let cat = tape.hconcat(&[v[1], v[0]]);
            let cut = cat.slice_cols(1, 6);
            ((wide + v[2]) * cut).sum()
        });
    }

    #[test]
    fn map_rows_uses_supplied_jacobian() {
        // f(x, y) = (x·y, x²) per row, scaled by the row index + 1
        let inputs = [random(4, 2, 25)];
        fd_check(&inputs, 1e-7, |_, v| {
            let y = v[0].map_rows(2, |r, x, out, jac| {
                let k = (r + 1) as f64;
                out[0] = k * x[0] * x[1];
                out[1] = k * x[0] * x[0];
                jac.copy_from_slice(&[k * x[1], k * x[0], 2.0 * k * x[0], 0.0]);
            });
            (y * y).sum()
        });
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let tape = Tape::new();
            let x = tape.var(random(8, 8, 26));
            let w = tape.var(random(8, 8, 27));
            let k = x.matmul(w).sq_dist(x).scale(-0.1).exp().add_diag(tape.constant_scalar(1.0));
            let loss = k.solve_spd(x).unwrap().sum();
            let g = tape.backward(loss).unwrap();
            (g.get_or_zeros(x), g.get_or_zeros(w))
        };
        assert_eq!(run(), run());
    }
}
