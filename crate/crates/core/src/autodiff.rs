//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation as a node holding its value and the
//! indices of its operands. [`Tape::backward`] walks the nodes in reverse and
//! accumulates adjoints. There is no implicit broadcasting: shapes must match
//! exactly, and [`Tape::broadcast_rows`] / [`Tape::broadcast_cols`] are the only
//! ways to expand a row or column.
//!
//! Shape mistakes are programming errors and panic. Non-finite values are not:
//! the tape remembers the first operation whose output was non-finite and
//! [`Tape::check_finite`] turns it into [`Error::Divergence`].

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MatMul(usize, usize),
    BroadcastRows(usize),
    BroadcastCols(usize),
    RowDot(usize, usize),
    RowSqNorm(usize),
    RowNorm(usize),
    RowClipNorm(usize, f64),
    Relu(usize),
    Tanh(usize),
    Atanh(usize, f64),
    Asinh(usize),
    Exp(usize),
    Ln(usize),
    Abs(usize),
    Softplus(usize),
    Clamp(usize, f64, f64),
    Sum(usize),
    SliceRows(usize, usize),
    ConcatRows(usize, usize),
}

impl Op {
    fn name(self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Div(..) => "div",
            Op::Neg(..) => "neg",
            Op::Scale(..) => "scale",
            Op::Offset(..) => "offset",
            Op::MatMul(..) => "matmul",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::RowDot(..) => "row_dot",
            Op::RowSqNorm(..) => "row_sq_norm",
            Op::RowNorm(..) => "row_norm",
            Op::RowClipNorm(..) => "row_clip_norm",
            Op::Relu(..) => "relu",
            Op::Tanh(..) => "tanh",
            Op::Atanh(..) => "atanh",
            Op::Asinh(..) => "asinh",
            Op::Exp(..) => "exp",
            Op::Ln(..) => "ln",
            Op::Abs(..) => "abs",
            Op::Softplus(..) => "softplus",
            Op::Clamp(..) => "clamp",
            Op::Sum(..) => "sum",
            Op::SliceRows(..) => "slice_rows",
            Op::ConcatRows(..) => "concat_rows",
        }
    }
}

struct Node {
    value: Vec<f64>,
    rows: usize,
    cols: usize,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    first_nonfinite: Cell<Option<usize>>,
}

/// Adjoints of every node reachable from the root, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`; zeros if `v` does not
    /// influence the root.
    pub fn get(&self, v: Var) -> Vec<f64> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                vec![0.0; r * c]
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Trainable input.
    pub fn leaf(&self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "leaf shape");
        self.push(value, rows, cols, Op::Leaf, true)
    }

    pub fn constant(&self, value: Vec<f64>, rows: usize, cols: usize) -> Var {
        assert_eq!(value.len(), rows * cols, "constant shape");
        self.push(value, rows, cols, Op::Constant, false)
    }

    pub fn scalar_constant(&self, value: f64) -> Var {
        self.constant(vec![value], 1, 1)
    }

    pub fn value(&self, v: Var) -> Vec<f64> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let nodes = self.nodes.borrow();
        assert_eq!(nodes[v.0].value.len(), 1, "scalar() on non-scalar node");
        nodes[v.0].value[0]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let nodes = self.nodes.borrow();
        (nodes[v.0].rows, nodes[v.0].cols)
    }

    /// Fails with the name of the first operation that produced a non-finite value.
    pub fn check_finite(&self) -> Result<()> {
        match self.first_nonfinite.get() {
            None => Ok(()),
            Some(i) => Err(Error::Divergence {
                op: self.nodes.borrow()[i].op.name().to_string(),
            }),
        }
    }

    fn push(&self, value: Vec<f64>, rows: usize, cols: usize, op: Op, requires_grad: bool) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        let idx = nodes.len();
        if self.first_nonfinite.get().is_none() && value.iter().any(|x| !x.is_finite()) {
            self.first_nonfinite.set(Some(idx));
        }
        nodes.push(Node {
            value,
            rows,
            cols,
            op,
            requires_grad,
        });
        Var(idx)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.0].requires_grad)
    }

    fn unary(&self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let (value, rows, cols) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            (n.value.iter().map(|&x| f(x)).collect(), n.rows, n.cols)
        };
        let rg = self.needs(&[a]);
        self.push(value, rows, cols, op, rg)
    }

    fn binary(&self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (value, rows, cols) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(
                (na.rows, na.cols),
                (nb.rows, nb.cols),
                "{}: shape mismatch",
                op.name()
            );
            let v = na
                .value
                .iter()
                .zip(&nb.value)
                .map(|(&x, &y)| f(x, y))
                .collect();
            (v, na.rows, na.cols)
        };
        let rg = self.needs(&[a, b]);
        self.push(value, rows, cols, op, rg)
    }

    pub fn add(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Add(a.0, b.0), |x, y| x + y)
    }

    pub fn sub(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Sub(a.0, b.0), |x, y| x - y)
    }

    pub fn mul(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Mul(a.0, b.0), |x, y| x * y)
    }

    pub fn div(&self, a: Var, b: Var) -> Var {
        self.binary(a, b, Op::Div(a.0, b.0), |x, y| x / y)
    }

    pub fn neg(&self, a: Var) -> Var {
        self.unary(a, Op::Neg(a.0), |x| -x)
    }

    pub fn scale(&self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Scale(a.0, k), |x| k * x)
    }

    /// `a + k` elementwise.
    pub fn offset(&self, a: Var, k: f64) -> Var {
        self.unary(a, Op::Offset(a.0), |x| x + k)
    }

    pub fn relu(&self, a: Var) -> Var {
        self.unary(a, Op::Relu(a.0), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn tanh(&self, a: Var) -> Var {
        self.unary(a, Op::Tanh(a.0), f64::tanh)
    }

    /// `artanh(clamp(a, -limit, limit))`; zero gradient where the clamp is active.
    pub fn atanh_clamped(&self, a: Var, limit: f64) -> Var {
        self.unary(a, Op::Atanh(a.0, limit), |x| x.clamp(-limit, limit).atanh())
    }

    pub fn asinh(&self, a: Var) -> Var {
        self.unary(a, Op::Asinh(a.0), f64::asinh)
    }

    pub fn exp(&self, a: Var) -> Var {
        self.unary(a, Op::Exp(a.0), f64::exp)
    }

    pub fn ln(&self, a: Var) -> Var {
        self.unary(a, Op::Ln(a.0), f64::ln)
    }

    pub fn abs(&self, a: Var) -> Var {
        self.unary(a, Op::Abs(a.0), f64::abs)
    }

    /// `ln(1 + e^a)`, evaluated without overflow.
    pub fn softplus(&self, a: Var) -> Var {
        self.unary(a, Op::Softplus(a.0), softplus)
    }

    /// Clamp with zero gradient outside `[lo, hi]`.
    pub fn clamp(&self, a: Var, lo: f64, hi: f64) -> Var {
        self.unary(a, Op::Clamp(a.0, lo, hi), |x| x.clamp(lo, hi))
    }

    pub fn matmul(&self, a: Var, b: Var) -> Var {
        let (value, rows, cols) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(na.cols, nb.rows, "matmul: inner dimension mismatch");
            let (m, k, n) = (na.rows, na.cols, nb.cols);
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                let row = &mut out[i * n..(i + 1) * n];
                for p in 0..k {
                    let aip = na.value[i * k + p];
                    if aip == 0.0 {
                        continue;
                    }
                    let brow = &nb.value[p * n..(p + 1) * n];
                    for (o, &bv) in row.iter_mut().zip(brow) {
                        *o += aip * bv;
                    }
                }
            }
            (out, m, n)
        };
        let rg = self.needs(&[a, b]);
        self.push(value, rows, cols, Op::MatMul(a.0, b.0), rg)
    }

    /// Repeats a `1 × c` row `rows` times.
    pub fn broadcast_rows(&self, a: Var, rows: usize) -> Var {
        let (value, cols) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            assert_eq!(n.rows, 1, "broadcast_rows expects a single row");
            (n.value.repeat(rows), n.cols)
        };
        let rg = self.needs(&[a]);
        self.push(value, rows, cols, Op::BroadcastRows(a.0), rg)
    }

    /// Repeats an `r × 1` column `cols` times.
    pub fn broadcast_cols(&self, a: Var, cols: usize) -> Var {
        let (value, rows) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            assert_eq!(n.cols, 1, "broadcast_cols expects a single column");
            let v = n
                .value
                .iter()
                .flat_map(|&x| std::iter::repeat_n(x, cols))
                .collect();
            (v, n.rows)
        };
        let rg = self.needs(&[a]);
        self.push(value, rows, cols, Op::BroadcastCols(a.0), rg)
    }

    /// Row-wise inner product, `r × 1`.
    pub fn row_dot(&self, a: Var, b: Var) -> Var {
        let (value, rows) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(
                (na.rows, na.cols),
                (nb.rows, nb.cols),
                "row_dot: shape mismatch"
            );
            let c = na.cols;
            let v = (0..na.rows)
                .map(|i| {
                    crate::geometry::dot(
                        &na.value[i * c..(i + 1) * c],
                        &nb.value[i * c..(i + 1) * c],
                    )
                })
                .collect();
            (v, na.rows)
        };
        let rg = self.needs(&[a, b]);
        self.push(value, rows, 1, Op::RowDot(a.0, b.0), rg)
    }

    pub fn row_sq_norm(&self, a: Var) -> Var {
        self.row_reduce(a, Op::RowSqNorm(a.0), crate::geometry::sq_norm)
    }

    pub fn row_norm(&self, a: Var) -> Var {
        self.row_reduce(a, Op::RowNorm(a.0), crate::geometry::norm)
    }

    fn row_reduce(&self, a: Var, op: Op, f: impl Fn(&[f64]) -> f64) -> Var {
        let (value, rows) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            let v = n.value.chunks(n.cols.max(1)).map(&f).collect();
            (v, n.rows)
        };
        let rg = self.needs(&[a]);
        self.push(value, rows, 1, op, rg)
    }

    /// Rescales each row whose norm exceeds `radius` onto the sphere of that radius.
    pub fn row_clip_norm(&self, a: Var, radius: f64) -> Var {
        let (value, rows, cols) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            let mut v = n.value.clone();
            for row in v.chunks_mut(n.cols.max(1)) {
                let nn = crate::geometry::norm(row);
                if nn > radius {
                    let s = radius / nn;
                    row.iter_mut().for_each(|x| *x *= s);
                }
            }
            (v, n.rows, n.cols)
        };
        let rg = self.needs(&[a]);
        self.push(value, rows, cols, Op::RowClipNorm(a.0, radius), rg)
    }

    pub fn sum(&self, a: Var) -> Var {
        let s = self.nodes.borrow()[a.0].value.iter().sum();
        let rg = self.needs(&[a]);
        self.push(vec![s], 1, 1, Op::Sum(a.0), rg)
    }

    pub fn slice_rows(&self, a: Var, start: usize, end: usize) -> Var {
        let (value, cols) = {
            let nodes = self.nodes.borrow();
            let n = &nodes[a.0];
            assert!(start <= end && end <= n.rows, "slice_rows out of range");
            (n.value[start * n.cols..end * n.cols].to_vec(), n.cols)
        };
        let rg = self.needs(&[a]);
        self.push(value, end - start, cols, Op::SliceRows(a.0, start), rg)
    }

    pub fn concat_rows(&self, a: Var, b: Var) -> Var {
        let (value, rows, cols) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.0], &nodes[b.0]);
            assert_eq!(na.cols, nb.cols, "concat_rows: column mismatch");
            let mut v = na.value.clone();
            v.extend_from_slice(&nb.value);
            (v, na.rows + nb.rows, na.cols)
        };
        let rg = self.needs(&[a, b]);
        self.push(value, rows, cols, Op::ConcatRows(a.0, b.0), rg)
    }

    /// Propagates adjoints from the scalar `root` to every node it depends on.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[root.0].value.len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {}x{}",
                nodes[root.0].rows, nodes[root.0].cols
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            if !node.requires_grad {
                continue;
            }
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::Divergence {
                    op: format!("backward through {}", node.op.name()),
                });
            }
            propagate(&nodes, node, &g, &mut grads);
            grads[i] = Some(g);
        }

        Ok(Gradients {
            grads,
            shapes: nodes.iter().map(|n| (n.rows, n.cols)).collect(),
        })
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn acc<'a>(
    grads: &'a mut [Option<Vec<f64>>],
    nodes: &[Node],
    idx: usize,
) -> Option<&'a mut Vec<f64>> {
    if !nodes[idx].requires_grad {
        return None;
    }
    Some(grads[idx].get_or_insert_with(|| vec![0.0; nodes[idx].value.len()]))
}

fn propagate(nodes: &[Node], node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
    let out = &node.value;
    match node.op {
        Op::Leaf | Op::Constant => {}
        Op::Add(a, b) => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            if let Some(gb) = acc(grads, nodes, b) {
                gb.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += y);
            }
            if let Some(gb) = acc(grads, nodes, b) {
                gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y);
            }
        }
        Op::Mul(a, b) => {
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            if let Some(ga) = acc(grads, nodes, a) {
                for ((x, gi), bi) in ga.iter_mut().zip(g).zip(vb) {
                    *x += gi * bi;
                }
            }
            if let Some(gb) = acc(grads, nodes, b) {
                for ((x, gi), ai) in gb.iter_mut().zip(g).zip(va) {
                    *x += gi * ai;
                }
            }
        }
        Op::Div(a, b) => {
            let vb = &nodes[b].value;
            if let Some(ga) = acc(grads, nodes, a) {
                for ((x, gi), bi) in ga.iter_mut().zip(g).zip(vb) {
                    *x += gi / bi;
                }
            }
            if let Some(gb) = acc(grads, nodes, b) {
                for (((x, gi), bi), oi) in gb.iter_mut().zip(g).zip(vb).zip(out) {
                    *x -= gi * oi / bi;
                }
            }
        }
        Op::Neg(a) => elementwise(nodes, grads, a, g, |_, _| -1.0, out),
        Op::Scale(a, k) => elementwise(nodes, grads, a, g, |_, _| k, out),
        Op::Offset(a) => elementwise(nodes, grads, a, g, |_, _| 1.0, out),
        Op::Relu(a) => elementwise(
            nodes,
            grads,
            a,
            g,
            |x, _| if x > 0.0 { 1.0 } else { 0.0 },
            out,
        ),
        Op::Tanh(a) => elementwise(nodes, grads, a, g, |_, y| 1.0 - y * y, out),
        Op::Atanh(a, limit) => elementwise(
            nodes,
            grads,
            a,
            g,
            |x, _| {
                if x.abs() > limit {
                    0.0
                } else {
                    1.0 / (1.0 - x * x)
                }
            },
            out,
        ),
        Op::Asinh(a) => elementwise(nodes, grads, a, g, |x, _| 1.0 / (1.0 + x * x).sqrt(), out),
        Op::Exp(a) => elementwise(nodes, grads, a, g, |_, y| y, out),
        Op::Ln(a) => elementwise(nodes, grads, a, g, |x, _| 1.0 / x, out),
        Op::Abs(a) => elementwise(
            nodes,
            grads,
            a,
            g,
            |x, _| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            },
            out,
        ),
        Op::Softplus(a) => elementwise(nodes, grads, a, g, |x, _| sigmoid(x), out),
        Op::Clamp(a, lo, hi) => elementwise(
            nodes,
            grads,
            a,
            g,
            |x, _| if x < lo || x > hi { 0.0 } else { 1.0 },
            out,
        ),
        Op::MatMul(a, b) => {
            let (na, nb) = (&nodes[a], &nodes[b]);
            let (m, k, n) = (na.rows, na.cols, nb.cols);
            if let Some(ga) = acc(grads, nodes, a) {
                // dA = G Bᵀ
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let brow = &nb.value[p * n..(p + 1) * n];
                        ga[i * k + p] += crate::geometry::dot(grow, brow);
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, b) {
                // dB = Aᵀ G
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = na.value[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        for (x, gv) in gb[p * n..(p + 1) * n].iter_mut().zip(grow) {
                            *x += aip * gv;
                        }
                    }
                }
            }
        }
        Op::BroadcastRows(a) => {
            let cols = nodes[a].cols;
            if let Some(ga) = acc(grads, nodes, a) {
                for row in g.chunks(cols) {
                    ga.iter_mut().zip(row).for_each(|(x, y)| *x += y);
                }
            }
        }
        Op::BroadcastCols(a) => {
            let cols = node.cols;
            if let Some(ga) = acc(grads, nodes, a) {
                for (x, row) in ga.iter_mut().zip(g.chunks(cols)) {
                    *x += row.iter().sum::<f64>();
                }
            }
        }
        Op::RowDot(a, b) => {
            let cols = nodes[a].cols;
            let (va, vb) = (&nodes[a].value, &nodes[b].value);
            if let Some(ga) = acc(grads, nodes, a) {
                for (i, gi) in g.iter().enumerate() {
                    for j in 0..cols {
                        ga[i * cols + j] += gi * vb[i * cols + j];
                    }
                }
            }
            if let Some(gb) = acc(grads, nodes, b) {
                for (i, gi) in g.iter().enumerate() {
                    for j in 0..cols {
                        gb[i * cols + j] += gi * va[i * cols + j];
                    }
                }
            }
        }
        Op::RowSqNorm(a) => {
            let cols = nodes[a].cols;
            let va = &nodes[a].value;
            if let Some(ga) = acc(grads, nodes, a) {
                for (i, gi) in g.iter().enumerate() {
                    for j in 0..cols {
                        ga[i * cols + j] += 2.0 * gi * va[i * cols + j];
                    }
                }
            }
        }
        Op::RowNorm(a) => {
            let cols = nodes[a].cols;
            let va = &nodes[a].value;
            if let Some(ga) = acc(grads, nodes, a) {
                for (i, gi) in g.iter().enumerate() {
                    let n = out[i];
                    if n > 0.0 {
                        for j in 0..cols {
                            ga[i * cols + j] += gi * va[i * cols + j] / n;
                        }
                    }
                }
            }
        }
        Op::RowClipNorm(a, radius) => {
            let cols = nodes[a].cols;
            let va = &nodes[a].value;
            if let Some(ga) = acc(grads, nodes, a) {
                for i in 0..node.rows {
                    let x = &va[i * cols..(i + 1) * cols];
                    let gr = &g[i * cols..(i + 1) * cols];
                    let n = crate::geometry::norm(x);
                    let dst = &mut ga[i * cols..(i + 1) * cols];
                    if n > radius {
                        // J = (r/n)(I - x̂x̂ᵀ)
                        let xg = crate::geometry::dot(x, gr) / (n * n);
                        let s = radius / n;
                        for j in 0..cols {
                            dst[j] += s * (gr[j] - x[j] * xg);
                        }
                    } else {
                        dst.iter_mut().zip(gr).for_each(|(d, y)| *d += y);
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().for_each(|x| *x += g[0]);
            }
        }
        Op::SliceRows(a, start) => {
            let cols = node.cols;
            if let Some(ga) = acc(grads, nodes, a) {
                ga[start * cols..start * cols + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(x, y)| *x += y);
            }
        }
        Op::ConcatRows(a, b) => {
            let split = nodes[a].value.len();
            if let Some(ga) = acc(grads, nodes, a) {
                ga.iter_mut().zip(&g[..split]).for_each(|(x, y)| *x += y);
            }
            if let Some(gb) = acc(grads, nodes, b) {
                gb.iter_mut().zip(&g[split..]).for_each(|(x, y)| *x += y);
            }
        }
    }
}

/// `ga += g * d(x, y)` where `x` is the operand and `y` the output.
fn elementwise(
    nodes: &[Node],
    grads: &mut [Option<Vec<f64>>],
    a: usize,
    g: &[f64],
    d: impl Fn(f64, f64) -> f64,
    out: &[f64],
) {
    let va = &nodes[a].value;
    if let Some(ga) = acc(grads, nodes, a) {
        for (((x, gi), ai), yi) in ga.iter_mut().zip(g).zip(va).zip(out) {
            *x += gi * d(*ai, *yi);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(build: impl Fn(&Tape, Var) -> Var, x0: &[f64], rows: usize, cols: usize) {
        let t = Tape::new();
        let x = t.leaf(x0.to_vec(), rows, cols);
        let y = build(&t, x);
        let g = t.backward(y).unwrap().get(x);
        let h = 1e-6;
        for i in 0..x0.len() {
            let eval = |delta: f64| {
                let t = Tape::new();
                let mut xv = x0.to_vec();
                xv[i] += delta;
                let x = t.leaf(xv, rows, cols);
                let y = build(&t, x);
                t.scalar(y)
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            assert!(
                (fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()),
                "coord {i}: fd {fd} vs {}",
                g[i]
            );
        }
    }

    #[test]
    fn root_is_leaf() {
        let t = Tape::new();
        let x = t.leaf(vec![3.0], 1, 1);
        assert_eq!(t.backward(x).unwrap().get(x), vec![1.0]);
    }

    #[test]
    fn squared_norm_gradient() {
        let t = Tape::new();
        let v = t.leaf(vec![1.0, -2.0, 0.5], 1, 3);
        let y = t.row_sq_norm(v);
        assert_eq!(t.backward(y).unwrap().get(v), vec![2.0, -4.0, 1.0]);
    }

    #[test]
    fn simple_values() {
        let t = Tape::new();
        let z = t.tanh(t.constant(vec![0.0], 1, 1));
        assert_eq!(t.scalar(z), 0.0);
        let a = t.constant(vec![1.0, 0.0], 1, 2);
        let b = t.constant(vec![0.0, 5.0], 1, 2);
        assert_eq!(t.scalar(t.row_dot(a, b)), 0.0);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let t = Tape::new();
        let v = t.leaf(vec![1.0, 2.0], 1, 2);
        assert!(matches!(t.backward(v), Err(Error::Contract(_))));
    }

    #[test]
    fn nonfinite_reports_first_op() {
        let t = Tape::new();
        let x = t.leaf(vec![0.0], 1, 1);
        let y = t.ln(x);
        let _ = t.exp(y);
        match t.check_finite() {
            Err(Error::Divergence { op }) => assert_eq!(op, "ln"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn matmul_and_broadcast_gradients() {
        let w = [0.3, -0.2, 0.1, 0.7, 0.5, -0.4];
        fd_check(
            |t, w| {
                let x = t.constant(vec![1.0, 2.0, -1.0, 0.5, 0.25, 3.0], 2, 3);
                let b = t.constant(vec![0.1, -0.1], 1, 2);
                let h = t.add(t.matmul(x, w), t.broadcast_rows(b, 2));
                t.sum(t.tanh(h))
            },
            &w,
            3,
            2,
        );
    }

    #[test]
    fn elementwise_gradients() {
        let x = [0.3, -0.6, 0.2, 0.45];
        fd_check(
            |t, x| {
                let a = t.atanh_clamped(x, 1.0 - 1e-9);
                let b = t.asinh(t.scale(x, 3.0));
                let c = t.softplus(t.mul(x, x));
                let d = t.div(t.exp(x), t.offset(t.abs(x), 1.0));
                let e = t.ln(t.offset(t.relu(x), 2.0));
                let s = t.add(t.add(a, b), t.sub(c, t.neg(d)));
                t.sum(t.add(s, e))
            },
            &x,
            2,
            2,
        );
    }

    #[test]
    fn row_op_gradients() {
        let x = [0.3, -0.6, 2.2, 1.45, 0.1, -0.05];
        fd_check(
            |t, x| {
                let n = t.row_norm(x);
                let c = t.row_clip_norm(x, 1.0);
                let top = t.slice_rows(c, 0, 1);
                let both = t.concat_rows(top, t.slice_rows(x, 1, 2));
                let d = t.row_dot(both, both);
                let s = t.mul(t.broadcast_cols(n, 3), x);
                t.add(t.sum(d), t.sum(t.clamp(s, -0.5, 0.5)))
            },
            &x,
            2,
            3,
        );
    }

    #[test]
    fn row_norm_at_zero_has_zero_gradient() {
        let t = Tape::new();
        let x = t.leaf(vec![0.0, 0.0], 1, 2);
        let y = t.sum(t.row_norm(x));
        assert_eq!(t.backward(y).unwrap().get(x), vec![0.0, 0.0]);
    }

    #[test]
    fn linearity() {
        let x0 = vec![0.4, -0.3, 0.9];
        let grad_of = |a: f64, b: f64| {
            let t = Tape::new();
            let x = t.leaf(x0.clone(), 1, 3);
            let f = t.sum(t.tanh(x));
            let g = t.row_sq_norm(x);
            let y = t.add(t.scale(f, a), t.scale(g, b));
            t.backward(y).unwrap().get(x)
        };
        let gf = grad_of(1.0, 0.0);
        let gg = grad_of(0.0, 1.0);
        let gc = grad_of(2.5, -1.5);
        for i in 0..3 {
            assert!((gc[i] - (2.5 * gf[i] - 1.5 * gg[i])).abs() < 1e-10);
        }
    }
}
