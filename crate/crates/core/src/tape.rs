//! Reverse-mode differentiation over [`Tensor`] values.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output value. [`Tape::backward`] sweeps the nodes in reverse creation
//! order and accumulates adjoints; each node is visited once per sweep.
//!
//! ```
//! use dprnn::tape::Tape;
//! use dprnn::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::row_vector(vec![1.0, 2.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let root = tape.sum(sq);
//! tape.backward(root).unwrap();
//! assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0]);
//! ```
//!
//! The op set is exactly what the matching model needs; there is no general
//! broadcasting. Composite kernels (cosine matrices, column normalization,
//! temperature softmax) carry hand-written adjoints that are checked against
//! finite differences in the test suite.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::{self, matmul_into, Tensor, NORM_EPS};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRowBias(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    ClampAtZero(Var),
    SoftmaxRows { input: Var, lambda: f64 },
    CosineMatrix(Var, Var),
    RowCosine(Var, Var),
    ColNormalize { input: Var, eps: f64 },
    GatherRows(Var, Vec<usize>),
    StackRows(Vec<Var>),
    Sum(Var),
}

#[derive(Debug)]
struct Node {
    value: Arc<Tensor>,
    op: Op,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient, `None` if no backward sweep reached `v`.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    /// Gradient of `v`, or zeros of its shape when nothing reached it.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        match self.grad(v) {
            Some(g) => g.clone(),
            None => {
                let [r, c] = self.value(v).shape();
                Tensor::zeros(r, c)
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.push_shared(Arc::new(value), op)
    }

    fn push_shared(&mut self, value: Arc<Tensor>, op: Op) -> Var {
        self.nodes.push(Node {
            value,
            op,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf whose value is shared with the caller instead of copied.
    pub fn leaf_shared(&mut self, value: Arc<Tensor>) -> Var {
        self.push_shared(value, Op::Leaf)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::Shape {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).transpose();
        self.push(out, Op::Transpose(a))
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Tensor> {
        self.same_shape(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(ta.rows(), ta.cols(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("add", a, b, |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("sub", a, b, |x, y| x - y)?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with("mul", a, b, |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Adds the `1 × n` row `bias` to every row of the `m × n` matrix `a`.
    pub fn add_row_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        if tb.rows() != 1 || tb.cols() != ta.cols() {
            return Err(Error::Shape {
                op: "add_row_bias",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        Ok(self.push(out, Op::AddRowBias(a, bias)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x * c);
        self.push(out, Op::Scale(a, c))
    }

    /// Adds the constant `c` to every entry.
    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|x| x + c);
        self.push(out, Op::Offset(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(tensor::sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).map(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    /// `max(x, 0)`; the backward pass lets gradient through only where `x > 0`.
    pub fn clamp_at_zero(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(out, Op::ClampAtZero(a))
    }

    /// Row-wise softmax of `lambda · a`.
    pub fn softmax_rows(&mut self, a: Var, lambda: f64) -> Result<Var> {
        self.softmax_rows_masked(a, lambda, None)
    }

    /// Row-wise softmax of `lambda · a` where `mask[c] == false` excludes
    /// column `c` from every row's support.
    pub fn softmax_rows_masked(
        &mut self,
        a: Var,
        lambda: f64,
        mask: Option<&[bool]>,
    ) -> Result<Var> {
        if lambda < 0.0 || !lambda.is_finite() {
            return Err(Error::Validation(format!(
                "softmax inverse temperature must be finite and nonnegative, got {lambda}"
            )));
        }
        let ta = self.value(a);
        let mut out = Tensor::zeros(ta.rows(), ta.cols());
        for r in 0..ta.rows() {
            tensor::softmax_temp_into(ta.row(r), lambda, mask, out.row_mut(r))?;
        }
        Ok(self.push(out, Op::SoftmaxRows { input: a, lambda }))
    }

    /// `C[i][j] = cosine(a_i, b_j)` for rows of `a` (`m × h`) and `b` (`n × h`).
    pub fn cosine_matrix(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(Error::Shape {
                op: "cosine_matrix",
                left: ta.shape(),
                right: tb.shape(),
            });
        }
        let mut out = Tensor::zeros(ta.rows(), tb.rows());
        let nb: Vec<f64> = (0..tb.rows()).map(|j| tensor::norm(tb.row(j))).collect();
        for i in 0..ta.rows() {
            let na = tensor::norm(ta.row(i));
            for (j, &nj) in nb.iter().enumerate() {
                out.set(
                    i,
                    j,
                    tensor::dot(ta.row(i), tb.row(j)) / (na * nj + NORM_EPS),
                );
            }
        }
        Ok(self.push(out, Op::CosineMatrix(a, b)))
    }

    /// `c[i] = cosine(a_i, b_i)` as an `r × 1` column.
    pub fn row_cosine(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("row_cosine", a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let data = (0..ta.rows())
            .map(|i| tensor::cosine(ta.row(i), tb.row(i)))
            .collect();
        let out = Tensor::new(ta.rows(), 1, data)?;
        Ok(self.push(out, Op::RowCosine(a, b)))
    }

    /// Divides each column by `sqrt(Σ_i x_ij² + eps²)`.
    pub fn col_normalize(&mut self, a: Var, eps: f64) -> Var {
        let ta = self.value(a);
        let scales = col_scales(ta, eps);
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (v, s) in out.row_mut(r).iter_mut().zip(&scales) {
                *v /= s;
            }
        }
        self.push(out, Op::ColNormalize { input: a, eps })
    }

    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if indices.is_empty() || indices.iter().any(|&i| i >= ta.rows()) {
            return Err(Error::Validation(format!(
                "gather_rows: indices {indices:?} invalid for {} rows",
                ta.rows()
            )));
        }
        let out = ta.gather_rows(indices);
        Ok(self.push(out, Op::GatherRows(a, indices.to_vec())))
    }

    pub fn row(&mut self, a: Var, r: usize) -> Result<Var> {
        self.gather_rows(a, &[r])
    }

    /// Stacks `1 × n` rows into an `m × n` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Validation("stack_rows needs at least one row".into()))?;
        let cols = self.value(*first).cols();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            let t = self.value(r);
            if t.rows() != 1 || t.cols() != cols {
                return Err(Error::Shape {
                    op: "stack_rows",
                    left: [1, cols],
                    right: t.shape(),
                });
            }
            data.extend_from_slice(t.data());
        }
        let out = Tensor::new(rows.len(), cols, data)?;
        Ok(self.push(out, Op::StackRows(rows.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let out = Tensor::scalar(self.value(a).sum());
        self.push(out, Op::Sum(a))
    }

    /// Accumulates `d(root)/d(node)` into every node's gradient slot.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.value(root).shape();
        if shape != [1, 1] {
            return Err(Error::Contract(format!(
                "backward root must be a scalar, got shape {shape:?}"
            )));
        }
        self.backward_with(&[(root, Tensor::scalar(1.0))])
    }

    /// Reverse sweep seeded with explicit output adjoints. Gradients add onto
    /// whatever earlier sweeps left in the slots.
    pub fn backward_with(&mut self, seeds: &[(Var, Tensor)]) -> Result<()> {
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        let mut start = 0;
        for (v, g) in seeds {
            if g.shape() != self.value(*v).shape() {
                return Err(Error::Shape {
                    op: "backward seed",
                    left: self.value(*v).shape(),
                    right: g.shape(),
                });
            }
            accumulate(&mut adj, *v, g.clone());
            start = start.max(v.0 + 1);
        }
        for idx in (0..start).rev() {
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(idx, &g, &mut adj);
            adj[idx] = Some(g);
        }
        for (node, a) in self.nodes.iter_mut().zip(adj) {
            if let Some(a) = a {
                match &mut node.grad {
                    Some(existing) => existing.add_assign(&a),
                    slot @ None => *slot = Some(a),
                }
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| &self.nodes[v.0].value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                accumulate(adj, *a, matmul_nt(g, val(*b)));
                accumulate(adj, *b, matmul_tn(val(*a), g));
            }
            Op::Transpose(a) => accumulate(adj, *a, g.transpose()),
            Op::Add(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(adj, *a, g.clone());
                accumulate(adj, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                accumulate(adj, *a, hadamard(g, val(*b)));
                accumulate(adj, *b, hadamard(g, val(*a)));
            }
            Op::AddRowBias(a, bias) => {
                let mut db = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (d, x) in db.data_mut().iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                accumulate(adj, *a, g.clone());
                accumulate(adj, *bias, db);
            }
            Op::Scale(a, c) => accumulate(adj, *a, g.map(|x| x * c)),
            Op::Offset(a) => accumulate(adj, *a, g.clone()),
            Op::Sigmoid(a) => {
                let y = &node.value;
                accumulate(adj, *a, zip_map(g, y, |gi, yi| gi * yi * (1.0 - yi)));
            }
            Op::Tanh(a) => {
                let y = &node.value;
                accumulate(adj, *a, zip_map(g, y, |gi, yi| gi * (1.0 - yi * yi)));
            }
            Op::ClampAtZero(a) => {
                accumulate(
                    adj,
                    *a,
                    zip_map(g, val(*a), |gi, xi| if xi > 0.0 { gi } else { 0.0 }),
                );
            }
            Op::SoftmaxRows { input, lambda } => {
                let y = &node.value;
                let mut dx = Tensor::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let inner = tensor::dot(g.row(r), y.row(r));
                    for ((d, gi), yi) in dx.row_mut(r).iter_mut().zip(g.row(r)).zip(y.row(r)) {
                        *d = lambda * yi * (gi - inner);
                    }
                }
                accumulate(adj, *input, dx);
            }
            Op::CosineMatrix(a, b) => {
                let (da, db) = cosine_matrix_grads(val(*a), val(*b), g);
                accumulate(adj, *a, da);
                accumulate(adj, *b, db);
            }
            Op::RowCosine(a, b) => {
                let (ta, tb) = (val(*a), val(*b));
                let mut da = Tensor::zeros(ta.rows(), ta.cols());
                let mut db = Tensor::zeros(tb.rows(), tb.cols());
                for i in 0..ta.rows() {
                    cosine_pair_grad(
                        ta.row(i),
                        tb.row(i),
                        g.data()[i],
                        da.row_mut(i),
                        db.row_mut(i),
                    );
                }
                accumulate(adj, *a, da);
                accumulate(adj, *b, db);
            }
            Op::ColNormalize { input, eps } => {
                let x = val(*input);
                let scales = col_scales(x, *eps);
                let mut inner = vec![0.0; x.cols()];
                for r in 0..x.rows() {
                    for ((acc, gi), xi) in inner.iter_mut().zip(g.row(r)).zip(x.row(r)) {
                        *acc += gi * xi;
                    }
                }
                let mut dx = Tensor::zeros(x.rows(), x.cols());
                for r in 0..x.rows() {
                    for c in 0..x.cols() {
                        let s = scales[c];
                        dx.set(r, c, g.get(r, c) / s - x.get(r, c) * inner[c] / (s * s * s));
                    }
                }
                accumulate(adj, *input, dx);
            }
            Op::GatherRows(a, indices) => {
                let ta = val(*a);
                let mut da = Tensor::zeros(ta.rows(), ta.cols());
                for (r, &src) in indices.iter().enumerate() {
                    for (d, x) in da.row_mut(src).iter_mut().zip(g.row(r)) {
                        *d += x;
                    }
                }
                accumulate(adj, *a, da);
            }
            Op::StackRows(rows) => {
                for (r, v) in rows.iter().enumerate() {
                    accumulate(adj, *v, Tensor::row_vector(g.row(r).to_vec()));
                }
            }
            Op::Sum(a) => {
                let [r, c] = val(*a).shape();
                accumulate(adj, *a, Tensor::filled(r, c, g.item()));
            }
        }
    }
}

fn accumulate(adj: &mut [Option<Tensor>], v: Var, g: Tensor) {
    match &mut adj[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| f(x, y))
        .collect();
    Tensor::new(a.rows(), a.cols(), data).expect("shapes already validated")
}

fn hadamard(a: &Tensor, b: &Tensor) -> Tensor {
    zip_map(a, b, |x, y| x * y)
}

fn col_scales(x: &Tensor, eps: f64) -> Vec<f64> {
    let mut sq = vec![eps * eps; x.cols()];
    for r in 0..x.rows() {
        for (s, v) in sq.iter_mut().zip(x.row(r)) {
            *s += v * v;
        }
    }
    sq.into_iter().map(f64::sqrt).collect()
}

/// `g · bᵀ`
fn matmul_nt(g: &Tensor, b: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(g.rows(), b.rows());
    for i in 0..g.rows() {
        for k in 0..b.rows() {
            out.set(i, k, tensor::dot(g.row(i), b.row(k)));
        }
    }
    out
}

/// `aᵀ · g`
fn matmul_tn(a: &Tensor, g: &Tensor) -> Tensor {
    let mut out = Tensor::zeros(a.cols(), g.cols());
    matmul_into(&a.transpose(), g, &mut out);
    out
}

/// Adjoint of `cosine(a, b) = aᵀb / (‖a‖‖b‖ + ε)` scaled by `g`, added into
/// `da` and `db`. At a zero vector the norm-derivative term is taken as zero.
fn cosine_pair_grad(a: &[f64], b: &[f64], g: f64, da: &mut [f64], db: &mut [f64]) {
    if g == 0.0 {
        return;
    }
    let (na, nb) = (tensor::norm(a), tensor::norm(b));
    let d = tensor::dot(a, b);
    let denom = na * nb + NORM_EPS;
    let coef_a = if na > 0.0 {
        d * nb / (na * denom * denom)
    } else {
        0.0
    };
    let coef_b = if nb > 0.0 {
        d * na / (nb * denom * denom)
    } else {
        0.0
    };
    for k in 0..a.len() {
        da[k] += g * (b[k] / denom - coef_a * a[k]);
        db[k] += g * (a[k] / denom - coef_b * b[k]);
    }
}

fn cosine_matrix_grads(a: &Tensor, b: &Tensor, g: &Tensor) -> (Tensor, Tensor) {
    let mut da = Tensor::zeros(a.rows(), a.cols());
    let mut db = Tensor::zeros(b.rows(), b.cols());
    let h = a.cols();
    let mut tmp_a = vec![0.0; h];
    for i in 0..a.rows() {
        for j in 0..b.rows() {
            tmp_a.fill(0.0);
            let db_row = &mut db.data_mut()[j * h..(j + 1) * h];
            cosine_pair_grad(a.row(i), b.row(j), g.get(i, j), &mut tmp_a, db_row);
            for (d, t) in da.row_mut(i).iter_mut().zip(&tmp_a) {
                *d += t;
            }
        }
    }
    (da, db)
}
