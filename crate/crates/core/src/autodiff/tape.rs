//! Eager reverse-mode tape over dense `f64` matrices.
//!
//! Every operation computes its value immediately and appends a node. Nodes
//! only reference earlier nodes, so reverse insertion order is a valid
//! topological order for the backward sweep.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;

/// Floor applied by [`Tape::log_clamped`].
pub const EPS_LOG: f64 = 1e-12;

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Neg(Var),
    Exp(Var),
    LogClamped(Var),
    Relu(Var),
    Transpose(Var),
    AddBias(Var, Var),
    PairwiseSqDist(Var),
    RowNormalize(Var),
    ColumnNormalize(Var),
    SymNormalize(Var),
    L2RowNormalize(Var),
    LinearSolve(Var, Var),
    Select {
        x: Var,
        rows: Vec<usize>,
        cols: Vec<usize>,
    },
    Gather {
        x: Var,
        pairs: Vec<(usize, usize)>,
    },
    ReduceSum(Var),
    ReduceMean(Var),
    LogSoftmaxRows {
        x: Var,
        mask: Option<Matrix>,
        probs: Matrix,
    },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::Sub(..) => "subtract",
            Op::Mul(..) => "elementwise_multiply",
            Op::Div(..) => "elementwise_divide",
            Op::Scale(..) => "scale",
            Op::AddScalar(..) => "add_scalar",
            Op::Neg(..) => "elementwise_negate",
            Op::Exp(..) => "elementwise_exp",
            Op::LogClamped(..) => "log_clamped",
            Op::Relu(..) => "relu",
            Op::Transpose(..) => "transpose",
            Op::AddBias(..) => "add_bias",
            Op::PairwiseSqDist(..) => "pairwise_sqdist",
            Op::RowNormalize(..) => "row_normalize",
            Op::ColumnNormalize(..) => "column_normalize",
            Op::SymNormalize(..) => "symmetric_normalize",
            Op::L2RowNormalize(..) => "l2_row_normalize",
            Op::LinearSolve(..) => "linear_solve",
            Op::Select { .. } => "masked_select",
            Op::Gather { .. } => "gather",
            Op::ReduceSum(..) => "reduce_sum",
            Op::ReduceMean(..) => "reduce_mean",
            Op::LogSoftmaxRows { .. } => "log_softmax_rows",
        }
    }
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Append-only record of a computation.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by node.
#[derive(Debug, Clone)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Adjoint of `v`, or `None` when `v` does not influence the root.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.adjoints.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, zero-filled when `v` does not influence the root.
    pub fn wrt(&self, v: Var) -> Matrix {
        match self.get(v) {
            Some(m) => m.clone(),
            None => {
                let (r, c) = self.shapes[v.0];
                Matrix::zeros(r, c)
            }
        }
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

/// LU with partial pivoting; `None` when the factorization is singular.
pub fn lu_solve(a: &Matrix, b: &Matrix) -> Option<Matrix> {
    a.clone().lu().solve(b)
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

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[(0, 0)]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives an adjoint.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::shape(
                "matmul",
                format!("{:?} x {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = va * vb;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("subtract", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("elementwise_multiply", self.value(a), self.value(b))?;
        let out = self.value(a).component_mul(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        check_same("elementwise_divide", self.value(a), self.value(b))?;
        let out = self.value(a).component_div(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::Div(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a) * s;
        let rg = self.rg(&[a]);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).add_scalar(s);
        let rg = self.rg(&[a]);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        let out = -self.value(a);
        let rg = self.rg(&[a]);
        self.push(out, Op::Neg(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::exp);
        let rg = self.rg(&[a]);
        self.push(out, Op::Exp(a), rg)
    }

    /// `ln(max(x, EPS_LOG))`; the adjoint is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(EPS_LOG).ln());
        let rg = self.rg(&[a]);
        self.push(out, Op::LogClamped(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| x.max(0.0));
        let rg = self.rg(&[a]);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        let rg = self.rg(&[a]);
        self.push(out, Op::Transpose(a), rg)
    }

    /// `x` (m×n) plus the row vector `b` (1×n) added to every row.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(Error::shape(
                "add_bias",
                format!("{:?} + row {:?}", vx.shape(), vb.shape()),
            ));
        }
        let mut out = vx.clone();
        for mut row in out.row_iter_mut() {
            row += vb;
        }
        let rg = self.rg(&[x, b]);
        Ok(self.push(out, Op::AddBias(x, b), rg))
    }

    /// `D[i][j] = ||x_i - x_j||^2` over the rows of `x`.
    pub fn pairwise_sqdist(&mut self, x: Var) -> Var {
        let vx = self.value(x);
        let (n, d) = vx.shape();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let mut s = 0.0;
                for k in 0..d {
                    let diff = vx[(i, k)] - vx[(j, k)];
                    s += diff * diff;
                }
                out[(i, j)] = s;
                out[(j, i)] = s;
            }
        }
        let rg = self.rg(&[x]);
        self.push(out, Op::PairwiseSqDist(x), rg)
    }

    /// Divide each row by its sum.
    pub fn row_normalize(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let mut out = va.clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            let s = row.sum();
            if s == 0.0 || !s.is_finite() {
                return Err(Error::NonFinite(format!("row_normalize: row {i} sums to {s}")));
            }
            row /= s;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::RowNormalize(a), rg))
    }

    /// Divide each column by its sum.
    pub fn column_normalize(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        let mut out = va.clone();
        for (j, mut col) in out.column_iter_mut().enumerate() {
            let s = col.sum();
            if s == 0.0 || !s.is_finite() {
                return Err(Error::NonFinite(format!(
                    "column_normalize: column {j} sums to {s}"
                )));
            }
            col /= s;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::ColumnNormalize(a), rg))
    }

    /// `D^{-1/2} W D^{-1/2}` with `D` the diagonal of row sums of `W`.
    pub fn sym_normalize(&mut self, w: Var) -> Result<Var> {
        let vw = self.value(w);
        let n = vw.nrows();
        if vw.ncols() != n {
            return Err(Error::shape("symmetric_normalize", format!("{:?}", vw.shape())));
        }
        let mut r = Vec::with_capacity(n);
        for (i, row) in vw.row_iter().enumerate() {
            let d = row.sum();
            if !(d > 0.0) {
                return Err(Error::NonFinite(format!(
                    "symmetric_normalize: node {i} has degree {d}"
                )));
            }
            r.push(1.0 / d.sqrt());
        }
        let out = Matrix::from_fn(n, n, |i, j| vw[(i, j)] * r[i] * r[j]);
        let rg = self.rg(&[w]);
        Ok(self.push(out, Op::SymNormalize(w), rg))
    }

    /// Scale each row to unit Euclidean norm.
    pub fn l2_row_normalize(&mut self, a: Var) -> Result<Var> {
        let mut out = self.value(a).clone();
        for (i, mut row) in out.row_iter_mut().enumerate() {
            let norm = row.norm();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::NonFinite(format!("l2_row_normalize: row {i} has norm {norm}")));
            }
            row /= norm;
        }
        let rg = self.rg(&[a]);
        Ok(self.push(out, Op::L2RowNormalize(a), rg))
    }

    /// Solve `A X = B` for `X`.
    pub fn linear_solve(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if !va.is_square() || va.nrows() != vb.nrows() {
            return Err(Error::shape(
                "linear_solve",
                format!("A {:?}, b {:?}", va.shape(), vb.shape()),
            ));
        }
        let out = lu_solve(va, vb)
            .ok_or_else(|| Error::Tape("linear_solve: singular matrix".into()))?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, Op::LinearSolve(a, b), rg))
    }

    /// Submatrix at the given rows and columns, in the given order.
    pub fn select(&mut self, x: Var, rows: &[usize], cols: &[usize]) -> Result<Var> {
        let vx = self.value(x);
        let (m, n) = vx.shape();
        if rows.iter().any(|&r| r >= m) || cols.iter().any(|&c| c >= n) {
            return Err(Error::shape(
                "masked_select",
                format!("index out of range for {:?}", vx.shape()),
            ));
        }
        let out = Matrix::from_fn(rows.len(), cols.len(), |i, j| vx[(rows[i], cols[j])]);
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::Select {
                x,
                rows: rows.to_vec(),
                cols: cols.to_vec(),
            },
            rg,
        ))
    }

    /// Column vector of the entries at `pairs`.
    pub fn gather(&mut self, x: Var, pairs: &[(usize, usize)]) -> Result<Var> {
        let vx = self.value(x);
        let (m, n) = vx.shape();
        if pairs.iter().any(|&(i, j)| i >= m || j >= n) {
            return Err(Error::shape(
                "gather",
                format!("index out of range for {:?}", vx.shape()),
            ));
        }
        let out = Matrix::from_iterator(pairs.len(), 1, pairs.iter().map(|&(i, j)| vx[(i, j)]));
        let rg = self.rg(&[x]);
        Ok(self.push(
            out,
            Op::Gather {
                x,
                pairs: pairs.to_vec(),
            },
            rg,
        ))
    }

    pub fn reduce_sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(&[a]);
        self.push(Matrix::from_element(1, 1, s), Op::ReduceSum(a), rg)
    }

    pub fn reduce_mean(&mut self, a: Var) -> Result<Var> {
        let va = self.value(a);
        if va.is_empty() {
            return Err(Error::shape("reduce_mean", "empty input"));
        }
        let s = va.sum() / va.len() as f64;
        let rg = self.rg(&[a]);
        Ok(self.push(Matrix::from_element(1, 1, s), Op::ReduceMean(a), rg))
    }

    /// Row-wise log-softmax. With a mask, only entries where the mask is
    /// nonzero take part; masked-out outputs are 0 and receive no adjoint.
    pub fn log_softmax_rows(&mut self, x: Var, mask: Option<Matrix>) -> Result<Var> {
        let vx = self.value(x);
        let (m, n) = vx.shape();
        if let Some(mk) = &mask {
            if mk.shape() != (m, n) {
                return Err(Error::shape(
                    "log_softmax_rows",
                    format!("mask {:?} vs input {:?}", mk.shape(), vx.shape()),
                ));
            }
        }
        let keep = |i: usize, j: usize| mask.as_ref().is_none_or(|mk| mk[(i, j)] != 0.0);
        let mut out = Matrix::zeros(m, n);
        let mut probs = Matrix::zeros(m, n);
        for i in 0..m {
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if keep(i, j) {
                    mx = mx.max(vx[(i, j)]);
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(Error::shape("log_softmax_rows", format!("row {i} fully masked")));
            }
            let mut z = 0.0;
            for j in 0..n {
                if keep(i, j) {
                    z += (vx[(i, j)] - mx).exp();
                }
            }
            let lse = mx + z.ln();
            for j in 0..n {
                if keep(i, j) {
                    out[(i, j)] = vx[(i, j)] - lse;
                    probs[(i, j)] = out[(i, j)].exp();
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(out, Op::LogSoftmaxRows { x, mask, probs }, rg))
    }

    /// Reverse sweep from a 1×1 root.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::Tape("backward called on an empty tape".into()));
        }
        if root.0 >= self.nodes.len() {
            return Err(Error::Tape(format!("root {} is not on this tape", root.0)));
        }
        if self.shape(root) != (1, 1) {
            return Err(Error::Tape(format!(
                "backward root must be 1x1, got {:?}",
                self.shape(root)
            )));
        }

        let mut adj: Vec<Option<Matrix>> = vec![None; root.0 + 1];
        adj[root.0] = Some(Matrix::from_element(1, 1, 1.0));

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }

        adj.resize(self.nodes.len(), None);
        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }

    fn accumulate(&self, adj: &mut [Option<Matrix>], v: Var, delta: Matrix) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        debug_assert_eq!(delta.shape(), self.nodes[v.0].value.shape());
        match &mut adj[v.0] {
            Some(acc) => *acc += delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn propagate(&self, node: &Node, g: &Matrix, adj: &mut [Option<Matrix>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(adj, *a, g * self.value(*b).transpose());
                }
                if self.wants(*b) {
                    self.accumulate(adj, *b, self.value(*a).transpose() * g);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(adj, *a, g.clone());
                self.accumulate(adj, *b, -g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    self.accumulate(adj, *a, g.component_mul(self.value(*b)));
                }
                if self.wants(*b) {
                    self.accumulate(adj, *b, g.component_mul(self.value(*a)));
                }
            }
            Op::Div(a, b) => {
                let vb = self.value(*b);
                if self.wants(*a) {
                    self.accumulate(adj, *a, g.component_div(vb));
                }
                if self.wants(*b) {
                    // d(a/b)/db = -(a/b)/b
                    let delta = -g.component_mul(y).component_div(vb);
                    self.accumulate(adj, *b, delta);
                }
            }
            Op::Scale(a, s) => self.accumulate(adj, *a, g * *s),
            Op::AddScalar(a) => self.accumulate(adj, *a, g.clone()),
            Op::Neg(a) => self.accumulate(adj, *a, -g),
            Op::Exp(a) => self.accumulate(adj, *a, g.component_mul(y)),
            Op::LogClamped(a) => {
                let x = self.value(*a);
                let delta = g.zip_map(x, |gi, xi| if xi > EPS_LOG { gi / xi } else { 0.0 });
                self.accumulate(adj, *a, delta);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let delta = g.zip_map(x, |gi, xi| if xi > 0.0 { gi } else { 0.0 });
                self.accumulate(adj, *a, delta);
            }
            Op::Transpose(a) => self.accumulate(adj, *a, g.transpose()),
            Op::AddBias(x, b) => {
                self.accumulate(adj, *x, g.clone());
                if self.wants(*b) {
                    self.accumulate(adj, *b, Matrix::from_fn(1, g.ncols(), |_, j| g.column(j).sum()));
                }
            }
            Op::PairwiseSqDist(a) => {
                let x = self.value(*a);
                let (n, d) = x.shape();
                let mut delta = Matrix::zeros(n, d);
                for i in 0..n {
                    for j in 0..n {
                        if i == j {
                            continue;
                        }
                        let w = 2.0 * (g[(i, j)] + g[(j, i)]);
                        for k in 0..d {
                            delta[(i, k)] += w * (x[(i, k)] - x[(j, k)]);
                        }
                    }
                }
                self.accumulate(adj, *a, delta);
            }
            Op::RowNormalize(a) => {
                let x = self.value(*a);
                let mut delta = Matrix::zeros(x.nrows(), x.ncols());
                for i in 0..x.nrows() {
                    let s = x.row(i).sum();
                    let dot = g.row(i).dot(&y.row(i));
                    for j in 0..x.ncols() {
                        delta[(i, j)] = (g[(i, j)] - dot) / s;
                    }
                }
                self.accumulate(adj, *a, delta);
            }
            Op::ColumnNormalize(a) => {
                let x = self.value(*a);
                let mut delta = Matrix::zeros(x.nrows(), x.ncols());
                for j in 0..x.ncols() {
                    let s = x.column(j).sum();
                    let dot = g.column(j).dot(&y.column(j));
                    for i in 0..x.nrows() {
                        delta[(i, j)] = (g[(i, j)] - dot) / s;
                    }
                }
                self.accumulate(adj, *a, delta);
            }
            Op::SymNormalize(w) => {
                let vw = self.value(*w);
                let n = vw.nrows();
                let deg: Vec<f64> = vw.row_iter().map(|r| r.sum()).collect();
                let r: Vec<f64> = deg.iter().map(|d| 1.0 / d.sqrt()).collect();
                let ga = g.component_mul(y);
                let q: Vec<f64> = (0..n)
                    .map(|m| -(ga.row(m).sum() + ga.column(m).sum()) / (2.0 * deg[m]))
                    .collect();
                let delta = Matrix::from_fn(n, n, |k, l| g[(k, l)] * r[k] * r[l] + q[k]);
                self.accumulate(adj, *w, delta);
            }
            Op::L2RowNormalize(a) => {
                let x = self.value(*a);
                let mut delta = Matrix::zeros(x.nrows(), x.ncols());
                for i in 0..x.nrows() {
                    let norm = x.row(i).norm();
                    let dot = g.row(i).dot(&y.row(i));
                    for j in 0..x.ncols() {
                        delta[(i, j)] = (g[(i, j)] - dot * y[(i, j)]) / norm;
                    }
                }
                self.accumulate(adj, *a, delta);
            }
            Op::LinearSolve(a, b) => {
                // A x = b  =>  A^T u = g,  b_bar = u,  A_bar = -u x^T
                let va = self.value(*a);
                let u = match lu_solve(&va.transpose(), g) {
                    Some(u) => u,
                    None => return,
                };
                if self.wants(*a) {
                    self.accumulate(adj, *a, -(&u * y.transpose()));
                }
                self.accumulate(adj, *b, u);
            }
            Op::Select { x, rows, cols } => {
                let (m, n) = self.shape(*x);
                let mut delta = Matrix::zeros(m, n);
                for (i, &r) in rows.iter().enumerate() {
                    for (j, &c) in cols.iter().enumerate() {
                        delta[(r, c)] += g[(i, j)];
                    }
                }
                self.accumulate(adj, *x, delta);
            }
            Op::Gather { x, pairs } => {
                let (m, n) = self.shape(*x);
                let mut delta = Matrix::zeros(m, n);
                for (k, &(i, j)) in pairs.iter().enumerate() {
                    delta[(i, j)] += g[(k, 0)];
                }
                self.accumulate(adj, *x, delta);
            }
            Op::ReduceSum(a) => {
                let (m, n) = self.shape(*a);
                self.accumulate(adj, *a, Matrix::from_element(m, n, g[(0, 0)]));
            }
            Op::ReduceMean(a) => {
                let (m, n) = self.shape(*a);
                let v = g[(0, 0)] / (m * n) as f64;
                self.accumulate(adj, *a, Matrix::from_element(m, n, v));
            }
            Op::LogSoftmaxRows { x, mask, probs } => {
                let (m, n) = self.shape(*x);
                let keep = |i: usize, j: usize| mask.as_ref().is_none_or(|mk| mk[(i, j)] != 0.0);
                let mut delta = Matrix::zeros(m, n);
                for i in 0..m {
                    let mut gs = 0.0;
                    for j in 0..n {
                        if keep(i, j) {
                            gs += g[(i, j)];
                        }
                    }
                    for j in 0..n {
                        if keep(i, j) {
                            delta[(i, j)] = g[(i, j)] - probs[(i, j)] * gs;
                        }
                    }
                }
                self.accumulate(adj, *x, delta);
            }
        }
    }

    /// Name of the operation that produced `v`.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_shape_rule() {
        let mut t = Tape::new();
        let a = t.param(Matrix::from_element(2, 3, 1.0));
        let b = t.param(Matrix::from_element(3, 4, 1.0));
        let c = t.matmul(a, b).unwrap();
        assert_eq!(t.shape(c), (2, 4));
        let err = t.matmul(b, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("(3, 4)"), "{err}");
    }

    #[test]
    fn sqdist_identical_rows() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 0.0, 5.0]));
        let d = t.pairwise_sqdist(x);
        assert_eq!(t.value(d)[(0, 1)], 0.0);
        assert_eq!(t.value(d)[(1, 0)], 0.0);
        assert_eq!(t.value(d)[(0, 2)], 1.0 + 9.0);
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let mut t = Tape::new();
        let a = t.constant(Matrix::identity(3, 3));
        let b = t.param(Matrix::from_row_slice(3, 2, &[1.0, -2.0, 3.5, 0.0, 7.0, 1e-3]));
        let x = t.linear_solve(a, b).unwrap();
        assert_eq!(t.value(x), t.value(b));
    }

    #[test]
    fn reduce_sum_gradient_is_ones() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let s = t.reduce_sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x), Matrix::from_element(2, 2, 1.0));
    }

    #[test]
    fn exp_gradient_at_zero() {
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 3));
        let e = t.exp(x);
        let s = t.reduce_sum(e);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(x), Matrix::from_element(2, 3, 1.0));
    }

    #[test]
    fn backward_errors() {
        let t = Tape::new();
        assert!(t.backward(Var(0)).is_err());
        let mut t = Tape::new();
        let x = t.param(Matrix::zeros(2, 2));
        let err = t.backward(x).unwrap_err().to_string();
        assert!(err.contains("1x1"), "{err}");
    }

    #[test]
    fn constants_get_no_adjoint() {
        let mut t = Tape::new();
        let c = t.constant(Matrix::from_element(2, 2, 3.0));
        let x = t.param(Matrix::from_element(2, 2, 1.0));
        let p = t.mul(c, x).unwrap();
        let s = t.reduce_sum(p);
        let g = t.backward(s).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.wrt(x), Matrix::from_element(2, 2, 3.0));
    }

    #[test]
    fn log_clamped_floor() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_row_slice(1, 3, &[0.0, -1.0, 2.0]));
        let l = t.log_clamped(x);
        assert_eq!(t.value(l)[(0, 0)], EPS_LOG.ln());
        let s = t.reduce_sum(l);
        let g = t.backward(s).unwrap().wrt(x);
        assert_eq!(g[(0, 0)], 0.0);
        assert_eq!(g[(0, 1)], 0.0);
        assert_eq!(g[(0, 2)], 0.5);
    }

    #[test]
    fn unreachable_param_gradient_is_zero() {
        let mut t = Tape::new();
        let x = t.param(Matrix::from_element(2, 2, 1.0));
        let unused = t.param(Matrix::from_element(3, 1, 1.0));
        let s = t.reduce_sum(x);
        let g = t.backward(s).unwrap();
        assert_eq!(g.wrt(unused), Matrix::zeros(3, 1));
    }
}
