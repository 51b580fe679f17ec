//! The recorded computation graph and its backward rules.

use crate::sparse::CsrMatrix;
use crate::Mat;
use ndarray::{Array2, Axis};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: (usize, usize), rhs: (usize, usize) },
    #[error("backward requires a scalar loss, got a {0}x{1} node")]
    NonScalarLoss(usize, usize),
    #[error("mask must contain only 0.0 and 1.0 entries, found {0} at ({1},{2})")]
    NonBinaryMask(f64, usize, usize),
    #[error("{op}: index {index} out of bounds for {bound}")]
    IndexOutOfBounds { op: &'static str, index: usize, bound: usize },
    #[error("concat_cols requires at least one input")]
    EmptyConcat,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// Elementwise nonlinearity applied by [`Tape::activation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActivationKind {
    Relu,
    Sigmoid,
    Tanh,
    Linear,
}

impl ActivationKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "relu" => Some(Self::Relu),
            "sigmoid" => Some(Self::Sigmoid),
            "tanh" => Some(Self::Tanh),
            "linear" | "none" | "identity" => Some(Self::Linear),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Relu => "relu",
            Self::Sigmoid => "sigmoid",
            Self::Tanh => "tanh",
            Self::Linear => "linear",
        }
    }

    fn apply(&self, x: f64) -> f64 {
        match self {
            Self::Relu => x.max(0.0),
            Self::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Self::Tanh => x.tanh(),
            Self::Linear => x,
        }
    }

    /// Derivative expressed through the activation output `y`.
    fn derivative_from_output(&self, y: f64) -> f64 {
        match self {
            Self::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Sigmoid => y * (1.0 - y),
            Self::Tanh => 1.0 - y * y,
            Self::Linear => 1.0,
        }
    }
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    Transpose(NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    ScaleByScalar(NodeId, NodeId),
    AddScalar(NodeId, NodeId),
    Activation(NodeId, ActivationKind),
    RowSoftmaxGram(NodeId, NodeId),
    RowScale(NodeId, NodeId),
    ColSlice(NodeId, usize),
    RowSlice(NodeId, Arc<Vec<usize>>),
    ConcatCols(Vec<NodeId>),
    Diag(NodeId),
    SpmmConst(Arc<CsrMatrix>, NodeId),
    SumAll(NodeId),
    MaskedMse { pred: NodeId, target: Arc<Mat>, mask: Arc<Mat>, normalizer: f64 },
    MaskedDotMse {
        u1: NodeId,
        u2: NodeId,
        scale: NodeId,
        shift: NodeId,
        entries: Arc<Vec<(usize, usize, f64)>>,
        normalizer: f64,
    },
}

struct Node {
    value: Mat,
    grad: Option<Mat>,
    op: Op,
    needs_grad: bool,
}

/// Records a single forward computation over dense matrices.
///
/// Nodes are appended in topological order by construction, so the backward
/// pass is a single reverse sweep. Gradient accumulation order is fixed,
/// making backward bit-deterministic for a fixed tape.
pub struct Tape {
    nodes: Vec<Node>,
    value_elems: usize,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), value_elems: 0 }
    }

    /// Total number of matrix elements held by node values. Since nodes are
    /// never freed during a tape's life, this is also the peak.
    pub fn value_elems(&self) -> usize {
        self.value_elems
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Mat {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        let v = &self.nodes[id.0].value;
        (v.nrows(), v.ncols())
    }

    /// Gradient of the last backward target w.r.t. `id`. Zero if the node was
    /// not reached (or not differentiated).
    pub fn grad(&self, id: NodeId) -> Mat {
        match &self.nodes[id.0].grad {
            Some(g) => g.clone(),
            None => Array2::zeros(self.nodes[id.0].value.raw_dim()),
        }
    }

    /// Shapes of all node values; used by tests that account for allocations.
    pub fn node_shapes(&self) -> Vec<(usize, usize)> {
        self.nodes.iter().map(|n| (n.value.nrows(), n.value.ncols())).collect()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> NodeId {
        self.value_elems += value.len();
        self.nodes.push(Node { value, grad: None, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Non-differentiable input (data, adjacency blocks densified on purpose).
    pub fn constant(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf (a model parameter).
    pub fn leaf(&mut self, value: Mat) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if ac != br {
            return Err(DiffError::ShapeMismatch { op: "matmul", lhs: (ar, ac), rhs: (br, bc) });
        }
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::MatMul(a, b), needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape("add", a, b)?;
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a, b), needs))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape("sub", a, b)?;
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a, b), needs))
    }

    pub fn hadamard(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, DiffError> {
        self.same_shape("hadamard", a, b)?;
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Hadamard(a, b), needs))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let value = self.nodes[a.0].value.t().to_owned();
        let needs = self.needs(a);
        self.push(value, Op::Transpose(a), needs)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = &self.nodes[a.0].value * c;
        let needs = self.needs(a);
        self.push(value, Op::Scale(a, c), needs)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let value = &self.nodes[a.0].value + c;
        let needs = self.needs(a);
        self.push(value, Op::AddConst(a), needs)
    }

    /// Multiplies every entry of `a` by the 1x1 node `s`.
    pub fn scale_by(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, DiffError> {
        self.expect_scalar("scale_by", s)?;
        let sv = self.nodes[s.0].value[[0, 0]];
        let value = &self.nodes[a.0].value * sv;
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(value, Op::ScaleByScalar(a, s), needs))
    }

    /// Adds the 1x1 node `s` to every entry of `a`.
    pub fn add_scalar(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, DiffError> {
        self.expect_scalar("add_scalar", s)?;
        let sv = self.nodes[s.0].value[[0, 0]];
        let value = &self.nodes[a.0].value + sv;
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(value, Op::AddScalar(a, s), needs))
    }

    pub fn activation(&mut self, a: NodeId, kind: ActivationKind) -> NodeId {
        let value = self.nodes[a.0].value.mapv(|x| kind.apply(x));
        let needs = self.needs(a);
        self.push(value, Op::Activation(a, kind), needs)
    }

    /// Row-wise softmax of the gram matrix `u * v^T`:
    /// `out(i,j) = exp(<u_i, v_j>) / sum_k exp(<u_i, v_k>)`.
    /// Stabilized by subtracting the row maximum before exponentiation.
    pub fn row_softmax_gram(&mut self, u: NodeId, v: NodeId) -> Result<NodeId, DiffError> {
        let (ur, uc) = self.shape(u);
        let (vr, vc) = self.shape(v);
        if uc != vc {
            return Err(DiffError::ShapeMismatch {
                op: "row_softmax_gram",
                lhs: (ur, uc),
                rhs: (vr, vc),
            });
        }
        let logits = self.nodes[u.0].value.dot(&self.nodes[v.0].value.t());
        let value = row_softmax(&logits);
        let needs = self.needs(u) || self.needs(v);
        Ok(self.push(value, Op::RowSoftmaxGram(u, v), needs))
    }

    /// Scales row i of `a` by entry i of the column vector node `s` (n x 1).
    pub fn row_scale(&mut self, a: NodeId, s: NodeId) -> Result<NodeId, DiffError> {
        let (ar, _) = self.shape(a);
        let (sr, sc) = self.shape(s);
        if sc != 1 || sr != ar {
            return Err(DiffError::ShapeMismatch { op: "row_scale", lhs: self.shape(a), rhs: (sr, sc) });
        }
        let mut value = self.nodes[a.0].value.clone();
        for (i, mut row) in value.rows_mut().into_iter().enumerate() {
            let f = self.nodes[s.0].value[[i, 0]];
            row.mapv_inplace(|x| x * f);
        }
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(value, Op::RowScale(a, s), needs))
    }

    /// Extracts column `j` of `a` as an n x 1 node.
    pub fn col_slice(&mut self, a: NodeId, j: usize) -> Result<NodeId, DiffError> {
        let (rows, cols) = self.shape(a);
        if j >= cols {
            return Err(DiffError::IndexOutOfBounds { op: "col_slice", index: j, bound: cols });
        }
        let value = self.nodes[a.0].value.column(j).to_owned().insert_axis(Axis(1));
        let needs = self.needs(a);
        let _ = rows;
        Ok(self.push(value, Op::ColSlice(a, j), needs))
    }

    /// Gathers the given rows of `a` (duplicates allowed).
    pub fn row_slice(&mut self, a: NodeId, rows: Arc<Vec<usize>>) -> Result<NodeId, DiffError> {
        let (nr, nc) = self.shape(a);
        if let Some(&bad) = rows.iter().find(|&&r| r >= nr) {
            return Err(DiffError::IndexOutOfBounds { op: "row_slice", index: bad, bound: nr });
        }
        let mut value = Array2::zeros((rows.len(), nc));
        for (k, &r) in rows.iter().enumerate() {
            value.row_mut(k).assign(&self.nodes[a.0].value.row(r));
        }
        let needs = self.needs(a);
        Ok(self.push(value, Op::RowSlice(a, rows), needs))
    }

    /// Concatenates nodes along columns: `[a_1 | a_2 | ... | a_k]`.
    pub fn concat_cols(&mut self, parts: &[NodeId]) -> Result<NodeId, DiffError> {
        let first = *parts.first().ok_or(DiffError::EmptyConcat)?;
        let (rows, _) = self.shape(first);
        let mut total = 0;
        for &p in parts {
            let (r, c) = self.shape(p);
            if r != rows {
                return Err(DiffError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: (rows, 0),
                    rhs: (r, c),
                });
            }
            total += c;
        }
        let mut value = Array2::zeros((rows, total));
        let mut off = 0;
        for &p in parts {
            let c = self.shape(p).1;
            value
                .slice_mut(ndarray::s![.., off..off + c])
                .assign(&self.nodes[p.0].value);
            off += c;
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Embeds the n x 1 node `v` as an n x n diagonal matrix.
    pub fn diag(&mut self, v: NodeId) -> Result<NodeId, DiffError> {
        let (n, c) = self.shape(v);
        if c != 1 {
            return Err(DiffError::ShapeMismatch { op: "diag", lhs: (n, c), rhs: (n, 1) });
        }
        let mut value = Array2::zeros((n, n));
        for i in 0..n {
            value[[i, i]] = self.nodes[v.0].value[[i, 0]];
        }
        let needs = self.needs(v);
        Ok(self.push(value, Op::Diag(v), needs))
    }

    /// Product of a constant sparse matrix with the dense node `a`.
    pub fn spmm(&mut self, sp: Arc<CsrMatrix>, a: NodeId) -> Result<NodeId, DiffError> {
        let (ar, ac) = self.shape(a);
        if sp.cols() != ar {
            return Err(DiffError::ShapeMismatch {
                op: "spmm",
                lhs: (sp.rows(), sp.cols()),
                rhs: (ar, ac),
            });
        }
        let value = sp.mul_dense(&self.nodes[a.0].value);
        let needs = self.needs(a);
        Ok(self.push(value, Op::SpmmConst(sp, a), needs))
    }

    /// Sum of all entries as a 1x1 node.
    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.sum();
        let needs = self.needs(a);
        self.push(Array2::from_elem((1, 1), s), Op::SumAll(a), needs)
    }

    /// Squared error over masked entries, divided by `normalizer`:
    /// `sum_ij mask(i,j) * (target(i,j) - pred(i,j))^2 / normalizer`.
    /// Pass `normalizer = 1.0` for the raw squared Frobenius norm.
    pub fn masked_mse(
        &mut self,
        pred: NodeId,
        target: Arc<Mat>,
        mask: Arc<Mat>,
        normalizer: f64,
    ) -> Result<NodeId, DiffError> {
        let (pr, pc) = self.shape(pred);
        if target.dim() != (pr, pc) {
            return Err(DiffError::ShapeMismatch {
                op: "masked_mse",
                lhs: (pr, pc),
                rhs: (target.nrows(), target.ncols()),
            });
        }
        if mask.dim() != (pr, pc) {
            return Err(DiffError::ShapeMismatch {
                op: "masked_mse",
                lhs: (pr, pc),
                rhs: (mask.nrows(), mask.ncols()),
            });
        }
        validate_binary(&mask)?;
        let p = &self.nodes[pred.0].value;
        let mut acc = 0.0;
        for ((i, j), &m) in mask.indexed_iter() {
            if m == 1.0 {
                let e = target[[i, j]] - p[[i, j]];
                acc += e * e;
            }
        }
        let needs = self.needs(pred);
        Ok(self.push(
            Array2::from_elem((1, 1), acc / normalizer),
            Op::MaskedMse { pred, target, mask, normalizer },
            needs,
        ))
    }

    /// Squared error of calibrated dot-product predictions over an explicit
    /// entry list: `pred(i,j) = scale * <u1_i, u2_j> + shift`. Never forms the
    /// full prediction matrix.
    pub fn masked_dot_mse(
        &mut self,
        u1: NodeId,
        u2: NodeId,
        scale: NodeId,
        shift: NodeId,
        entries: Arc<Vec<(usize, usize, f64)>>,
        normalizer: f64,
    ) -> Result<NodeId, DiffError> {
        let (n1, r1) = self.shape(u1);
        let (n2, r2) = self.shape(u2);
        if r1 != r2 {
            return Err(DiffError::ShapeMismatch { op: "masked_dot_mse", lhs: (n1, r1), rhs: (n2, r2) });
        }
        self.expect_scalar("masked_dot_mse", scale)?;
        self.expect_scalar("masked_dot_mse", shift)?;
        if let Some(&(i, j, _)) = entries.iter().find(|&&(i, j, _)| i >= n1 || j >= n2) {
            return Err(DiffError::IndexOutOfBounds { op: "masked_dot_mse", index: i.max(j), bound: n1.max(n2) });
        }
        let a = self.nodes[scale.0].value[[0, 0]];
        let b = self.nodes[shift.0].value[[0, 0]];
        let mut acc = 0.0;
        {
            let v1 = &self.nodes[u1.0].value;
            let v2 = &self.nodes[u2.0].value;
            for &(i, j, h) in entries.iter() {
                let e = h - (a * v1.row(i).dot(&v2.row(j)) + b);
                acc += e * e;
            }
        }
        let needs =
            self.needs(u1) || self.needs(u2) || self.needs(scale) || self.needs(shift);
        Ok(self.push(
            Array2::from_elem((1, 1), acc / normalizer),
            Op::MaskedDotMse { u1, u2, scale, shift, entries, normalizer },
            needs,
        ))
    }

    /// Reverse sweep from the scalar node `loss`. Gradients accumulate into
    /// every node with `needs_grad`; query them with [`Tape::grad`].
    pub fn backward(&mut self, loss: NodeId) -> Result<(), DiffError> {
        let (r, c) = self.shape(loss);
        if (r, c) != (1, 1) {
            return Err(DiffError::NonScalarLoss(r, c));
        }
        for node in self.nodes.iter_mut() {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(Array2::from_elem((1, 1), 1.0));
        for idx in (0..=loss.0).rev() {
            if !self.nodes[idx].needs_grad || self.nodes[idx].grad.is_none() {
                continue;
            }
            self.propagate(idx);
        }
        Ok(())
    }

    fn accumulate(&mut self, target: NodeId, delta: Mat) {
        if !self.nodes[target.0].needs_grad {
            return;
        }
        match &mut self.nodes[target.0].grad {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    #[allow(clippy::too_many_lines)]
    fn propagate(&mut self, idx: usize) {
        let g = self.nodes[idx].grad.clone().expect("gradient present");
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let d = g.dot(&self.nodes[b.0].value.t());
                    self.accumulate(a, d);
                }
                if self.needs(b) {
                    let d = self.nodes[a.0].value.t().dot(&g);
                    self.accumulate(b, d);
                }
            }
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g);
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, -&g);
            }
            Op::Hadamard(a, b) => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    let d = &g * &self.nodes[b.0].value;
                    self.accumulate(a, d);
                }
                if self.needs(b) {
                    let d = &g * &self.nodes[a.0].value;
                    self.accumulate(b, d);
                }
            }
            Op::Transpose(a) => {
                let a = *a;
                self.accumulate(a, g.t().to_owned());
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                self.accumulate(a, &g * c);
            }
            Op::AddConst(a) => {
                let a = *a;
                self.accumulate(a, g);
            }
            Op::ScaleByScalar(a, s) => {
                let (a, s) = (*a, *s);
                if self.needs(a) {
                    let sv = self.nodes[s.0].value[[0, 0]];
                    self.accumulate(a, &g * sv);
                }
                if self.needs(s) {
                    let d = (&g * &self.nodes[a.0].value).sum();
                    self.accumulate(s, Array2::from_elem((1, 1), d));
                }
            }
            Op::AddScalar(a, s) => {
                let (a, s) = (*a, *s);
                self.accumulate(a, g.clone());
                if self.needs(s) {
                    self.accumulate(s, Array2::from_elem((1, 1), g.sum()));
                }
            }
            Op::Activation(a, kind) => {
                let (a, kind) = (*a, *kind);
                let y = &self.nodes[idx].value;
                let d = ndarray::Zip::from(&g)
                    .and(y)
                    .map_collect(|&gv, &yv| gv * kind.derivative_from_output(yv));
                self.accumulate(a, d);
            }
            Op::RowSoftmaxGram(u, v) => {
                let (u, v) = (*u, *v);
                let s = &self.nodes[idx].value;
                // dL(i,:) = s_i ⊙ g_i - (g_i · s_i) * s_i
                let mut dlogits = &g * s;
                for (mut row, srow) in dlogits.rows_mut().into_iter().zip(s.rows()) {
                    let dot: f64 = row.sum();
                    ndarray::Zip::from(&mut row).and(&srow).for_each(|r, &sv| *r -= dot * sv);
                }
                if self.needs(u) {
                    let d = dlogits.dot(&self.nodes[v.0].value);
                    self.accumulate(u, d);
                }
                if self.needs(v) {
                    let d = dlogits.t().dot(&self.nodes[u.0].value);
                    self.accumulate(v, d);
                }
            }
            Op::RowScale(a, s) => {
                let (a, s) = (*a, *s);
                if self.needs(a) {
                    let mut d = g.clone();
                    for (i, mut row) in d.rows_mut().into_iter().enumerate() {
                        let f = self.nodes[s.0].value[[i, 0]];
                        row.mapv_inplace(|x| x * f);
                    }
                    self.accumulate(a, d);
                }
                if self.needs(s) {
                    let prod = &g * &self.nodes[a.0].value;
                    let d = prod.sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.accumulate(s, d);
                }
            }
            Op::ColSlice(a, j) => {
                let (a, j) = (*a, *j);
                let (rows, cols) = self.shape(a);
                let mut d = Array2::zeros((rows, cols));
                d.column_mut(j).assign(&g.column(0));
                self.accumulate(a, d);
            }
            Op::RowSlice(a, rows) => {
                let (a, rows) = (*a, rows.clone());
                let (nr, nc) = self.shape(a);
                let mut d = Array2::zeros((nr, nc));
                for (k, &r) in rows.iter().enumerate() {
                    let mut dst = d.row_mut(r);
                    let src = g.row(k);
                    for c in 0..nc {
                        dst[c] += src[c];
                    }
                }
                self.accumulate(a, d);
            }
            Op::ConcatCols(parts) => {
                let parts = parts.clone();
                let mut off = 0;
                for p in parts {
                    let c = self.shape(p).1;
                    let d = g.slice(ndarray::s![.., off..off + c]).to_owned();
                    off += c;
                    self.accumulate(p, d);
                }
            }
            Op::Diag(v) => {
                let v = *v;
                let n = self.shape(v).0;
                let mut d = Array2::zeros((n, 1));
                for i in 0..n {
                    d[[i, 0]] = g[[i, i]];
                }
                self.accumulate(v, d);
            }
            Op::SpmmConst(sp, a) => {
                let (sp, a) = (sp.clone(), *a);
                let d = sp.transpose_mul_dense(&g);
                self.accumulate(a, d);
            }
            Op::SumAll(a) => {
                let a = *a;
                let (r, c) = self.shape(a);
                let d = Array2::from_elem((r, c), g[[0, 0]]);
                self.accumulate(a, d);
            }
            Op::MaskedMse { pred, target, mask, normalizer } => {
                let (pred, target, mask, normalizer) =
                    (*pred, target.clone(), mask.clone(), *normalizer);
                let scale = 2.0 * g[[0, 0]] / normalizer;
                let p = &self.nodes[pred.0].value;
                let d = ndarray::Zip::from(&*mask)
                    .and(&*target)
                    .and(p)
                    .map_collect(|&m, &t, &pv| scale * m * (pv - t));
                self.accumulate(pred, d);
            }
            Op::MaskedDotMse { u1, u2, scale, shift, entries, normalizer } => {
                let (u1, u2, scale, shift, entries, normalizer) =
                    (*u1, *u2, *scale, *shift, entries.clone(), *normalizer);
                let a = self.nodes[scale.0].value[[0, 0]];
                let b = self.nodes[shift.0].value[[0, 0]];
                let f = 2.0 * g[[0, 0]] / normalizer;
                let (n1, r) = self.shape(u1);
                let (n2, _) = self.shape(u2);
                let mut d1 = Array2::zeros((n1, r));
                let mut d2 = Array2::zeros((n2, r));
                let mut da = 0.0;
                let mut db = 0.0;
                {
                    let v1 = &self.nodes[u1.0].value;
                    let v2 = &self.nodes[u2.0].value;
                    for &(i, j, h) in entries.iter() {
                        let dot = v1.row(i).dot(&v2.row(j));
                        let e = f * (a * dot + b - h);
                        for c in 0..r {
                            d1[[i, c]] += e * a * v2[[j, c]];
                            d2[[j, c]] += e * a * v1[[i, c]];
                        }
                        da += e * dot;
                        db += e;
                    }
                }
                self.accumulate(u1, d1);
                self.accumulate(u2, d2);
                self.accumulate(scale, Array2::from_elem((1, 1), da));
                self.accumulate(shift, Array2::from_elem((1, 1), db));
            }
        }
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<(), DiffError> {
        let (lhs, rhs) = (self.shape(a), self.shape(b));
        if lhs != rhs {
            return Err(DiffError::ShapeMismatch { op, lhs, rhs });
        }
        Ok(())
    }

    fn expect_scalar(&self, op: &'static str, s: NodeId) -> Result<(), DiffError> {
        let sh = self.shape(s);
        if sh != (1, 1) {
            return Err(DiffError::ShapeMismatch { op, lhs: (1, 1), rhs: sh });
        }
        Ok(())
    }
}

/// Numerically stable row-wise softmax of a dense logits matrix.
pub(crate) fn row_softmax(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum: f64 = row.sum();
        row.mapv_inplace(|x| x / sum);
    }
    out
}

fn validate_binary(mask: &Mat) -> Result<(), DiffError> {
    for ((i, j), &m) in mask.indexed_iter() {
        if m != 0.0 && m != 1.0 {
            return Err(DiffError::NonBinaryMask(m, i, j));
        }
    }
    Ok(())
}
