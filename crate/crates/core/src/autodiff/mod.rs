//! Reverse-mode differentiation over rank-2 `f64` tensors.
//!
//! A [`Tape`] records every operation in execution order; tensors are
//! addressed by [`Var`] handles. [`Tape::backward`] walks the record in
//! reverse exactly once and accumulates gradients into every tensor that
//! (transitively) depends on a leaf created with [`Tape::param`].
//!
//! Sparse operands (normalized adjacencies, neighbor segments) are borrowed
//! for the lifetime of the tape and treated as constants.

mod adam;
pub mod gradcheck;

pub use adam::{adam_step, AdamConfig, AdamState};

use thiserror::Error;

use crate::matrix::{Matrix, SparseMatrix};

#[derive(Debug, Error, PartialEq)]
pub enum AutodiffError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("{op}: index {index} out of range for {len} rows")]
    IndexOutOfRange { op: &'static str, index: usize, len: usize },
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NotScalar((usize, usize)),
    #[error("tensor handle {0} is not on this tape")]
    UnknownVar(usize),
}

type Result<T> = std::result::Result<T, AutodiffError>;

/// Handle to a tensor recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variable-size groups of row indices in CSR layout: output row `i` reads
/// `members[offsets[i]..offsets[i+1]]`. Position `e` in `members` doubles as
/// an edge id for per-edge tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Segments {
    pub offsets: Vec<usize>,
    pub members: Vec<usize>,
}

impl Segments {
    pub fn from_groups(groups: &[Vec<usize>]) -> Self {
        let mut offsets = Vec::with_capacity(groups.len() + 1);
        let mut members = Vec::new();
        offsets.push(0);
        for g in groups {
            members.extend_from_slice(g);
            offsets.push(members.len());
        }
        Self { offsets, members }
    }

    pub fn num_segments(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn num_members(&self) -> usize {
        self.members.len()
    }

    pub fn span(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    /// Segment id of each member position.
    pub fn owners(&self) -> Vec<usize> {
        let mut out = vec![0; self.members.len()];
        for i in 0..self.num_segments() {
            for e in self.span(i) {
                out[e] = i;
            }
        }
        out
    }
}

enum Op<'g> {
    Leaf,
    MatMul(Var, Var),
    SpMM(&'g SparseMatrix, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Elu(Var, f64),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softplus(Var),
    LogSoftmax(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    SegmentSum(&'g Segments, Var),
    GatherRows(Var, Vec<usize>),
    ConcatCols(Var, Var),
    RowSum(Var),
    Sum(Var),
    Mean(Var),
    Pick(Var, Vec<(usize, usize)>),
    SegmentSoftmax(&'g Segments, Var),
    EdgeAggregate {
        segments: &'g Segments,
        weights: Var,
        x: Var,
    },
}

/// One recorded tensor: its value, gradient buffer and provenance.
pub struct Tensor<'g> {
    value: Matrix,
    grad: Option<Matrix>,
    requires_grad: bool,
    op: Op<'g>,
}

impl Tensor<'_> {
    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Gradient buffer; all zeros when backward never reached this tensor.
    pub fn grad(&self) -> Matrix {
        self.grad
            .clone()
            .unwrap_or_else(|| Matrix::zeros(self.value.rows(), self.value.cols()))
    }
}

#[derive(Default)]
pub struct Tape<'g> {
    nodes: Vec<Tensor<'g>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + eˣ)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

impl<'g> Tape<'g> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op<'g>, requires_grad: bool) -> Var {
        self.nodes.push(Tensor {
            value,
            grad: None,
            requires_grad,
            op,
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> Result<&Tensor<'g>> {
        self.nodes.get(v.0).ok_or(AutodiffError::UnknownVar(v.0))
    }

    fn rg(&self, vs: &[Var]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn tensor(&self, v: Var) -> &Tensor<'g> {
        &self.nodes[v.0]
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.shape()
    }

    pub fn grad(&self, v: Var) -> Matrix {
        self.nodes[v.0].grad()
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.node(a)?.shape(), self.node(b)?.shape());
        if sa != sb {
            return Err(AutodiffError::ShapeMismatch {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.node(a)?.shape(), self.node(b)?.shape());
        if sa.1 != sb.0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: sa,
                right: sb,
            });
        }
        let v = self.value(a).matmul(self.value(b));
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::MatMul(a, b), rg))
    }

    /// `adj · x` for a constant sparse matrix.
    pub fn spmm(&mut self, adj: &'g SparseMatrix, x: Var) -> Result<Var> {
        let sx = self.node(x)?.shape();
        if adj.cols() != sx.0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "spmm",
                left: (adj.rows(), adj.cols()),
                right: sx,
            });
        }
        let v = adj.spmm(self.value(x));
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::SpMM(adj, x), rg))
    }

    /// Adds a `1 x d` bias row to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (sx, sb) = (self.node(x)?.shape(), self.node(bias)?.shape());
        if sb != (1, sx.1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                left: sx,
                right: sb,
            });
        }
        let mut v = self.value(x).clone();
        let b = self.value(bias).row(0).to_vec();
        for r in 0..sx.0 {
            for (o, bb) in v.row_mut(r).iter_mut().zip(&b) {
                *o += bb;
            }
        }
        let rg = self.rg(&[x, bias]);
        Ok(self.push(v, Op::AddBias(x, bias), rg))
    }

    fn zip_with(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Matrix> {
        self.same_shape(op, a, b)?;
        let (va, vb) = (self.value(a), self.value(b));
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Ok(Matrix::from_vec(va.rows(), va.cols(), data))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("add", a, b, |x, y| x + y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Sub(a, b), rg))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.zip_with("hadamard", a, b, |x, y| x * y)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::Hadamard(a, b), rg))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var> {
        let v = self.node(x)?.value.map(|a| a * s);
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Scale(x, s), rg))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op<'g>) -> Result<Var> {
        let v = self.node(x)?.value.map(f);
        let rg = self.rg(&[x]);
        Ok(self.push(v, op, rg))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, |a| a.max(0.0), Op::Relu(x))
    }

    pub fn elu(&mut self, x: Var, alpha: f64) -> Result<Var> {
        self.unary(
            x,
            move |a| if a > 0.0 { a } else { alpha * a.exp_m1() },
            Op::Elu(x, alpha),
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Result<Var> {
        self.unary(x, move |a| if a > 0.0 { a } else { slope * a }, Op::LeakyRelu(x, slope))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, softplus, Op::Softplus(x))
    }

    /// Row-wise log-softmax, shifted by the row max.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var> {
        let mut v = self.node(x)?.value.clone();
        for r in 0..v.rows() {
            let row = v.row_mut(r);
            let m = row.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            let lse = m + row.iter().map(|&a| (a - m).exp()).sum::<f64>().ln();
            row.iter_mut().for_each(|a| *a -= lse);
        }
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::LogSoftmax(x), rg))
    }

    /// Column-wise max over each segment's member rows. Ties go to the
    /// lowest member index; an empty segment yields a zero row.
    pub fn row_max_pool(&mut self, segments: &'g Segments, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let (n, d) = (segments.num_segments(), xv.cols());
        if let Some(&bad) = segments.members.iter().find(|&&m| m >= xv.rows()) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "row_max_pool",
                index: bad,
                len: xv.rows(),
            });
        }
        let mut v = Matrix::zeros(n, d);
        let mut argmax = vec![usize::MAX; n * d];
        for i in 0..n {
            let mut members: Vec<usize> = segments.members[segments.span(i)].to_vec();
            members.sort_unstable();
            for c in 0..d {
                let mut best: Option<usize> = None;
                for &j in &members {
                    if best.is_none_or(|b| xv.get(j, c) > xv.get(b, c)) {
                        best = Some(j);
                    }
                }
                if let Some(b) = best {
                    v.set(i, c, xv.get(b, c));
                    argmax[i * d + c] = b;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::MaxPool { input: x, argmax }, rg))
    }

    /// Sum over each segment's member rows (empty segment → zero row).
    pub fn row_sum_pool(&mut self, segments: &'g Segments, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if let Some(&bad) = segments.members.iter().find(|&&m| m >= xv.rows()) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "row_sum_pool",
                index: bad,
                len: xv.rows(),
            });
        }
        let mut v = Matrix::zeros(segments.num_segments(), xv.cols());
        for i in 0..segments.num_segments() {
            for e in segments.span(i) {
                let src = xv.row(segments.members[e]);
                for (o, s) in v.row_mut(i).iter_mut().zip(src) {
                    *o += s;
                }
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::SegmentSum(segments, x), rg))
    }

    pub fn gather_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if let Some(&bad) = idx.iter().find(|&&i| i >= xv.rows()) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "gather_rows",
                index: bad,
                len: xv.rows(),
            });
        }
        let v = xv.select_rows(idx);
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::GatherRows(x, idx.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.node(a)?.shape(), self.node(b)?.shape());
        if sa.0 != sb.0 {
            return Err(AutodiffError::ShapeMismatch {
                op: "concat_cols",
                left: sa,
                right: sb,
            });
        }
        let mut v = Matrix::zeros(sa.0, sa.1 + sb.1);
        for r in 0..sa.0 {
            let row = v.row_mut(r);
            row[..sa.1].copy_from_slice(self.nodes[a.0].value.row(r));
            row[sa.1..].copy_from_slice(self.nodes[b.0].value.row(r));
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(v, Op::ConcatCols(a, b), rg))
    }

    /// `n x d → n x 1` sum over columns.
    pub fn row_sum(&mut self, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let data = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let v = Matrix::from_vec(xv.rows(), 1, data);
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::RowSum(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let s = self.node(x)?.value.sum();
        let rg = self.rg(&[x]);
        Ok(self.push(Matrix::scalar(s), Op::Sum(x), rg))
    }

    /// Mean of all entries; the mean of an empty tensor is 0.
    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let s = if xv.is_empty() { 0.0 } else { xv.sum() / xv.len() as f64 };
        let rg = self.rg(&[x]);
        Ok(self.push(Matrix::scalar(s), Op::Mean(x), rg))
    }

    /// Selects entries `(row, col)` into a `k x 1` column.
    pub fn pick(&mut self, x: Var, entries: &[(usize, usize)]) -> Result<Var> {
        let xv = &self.node(x)?.value;
        let mut data = Vec::with_capacity(entries.len());
        for &(r, c) in entries {
            if r >= xv.rows() || c >= xv.cols() {
                return Err(AutodiffError::IndexOutOfRange {
                    op: "pick",
                    index: if r >= xv.rows() { r } else { c },
                    len: if r >= xv.rows() { xv.rows() } else { xv.cols() },
                });
            }
            data.push(xv.get(r, c));
        }
        let v = Matrix::from_vec(entries.len(), 1, data);
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::Pick(x, entries.to_vec()), rg))
    }

    /// Softmax of an `E x 1` column within each segment (positions are edge ids).
    pub fn segment_softmax(&mut self, segments: &'g Segments, x: Var) -> Result<Var> {
        let xv = &self.node(x)?.value;
        if xv.shape() != (segments.num_members(), 1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "segment_softmax",
                left: xv.shape(),
                right: (segments.num_members(), 1),
            });
        }
        let mut v = Matrix::zeros(segments.num_members(), 1);
        for i in 0..segments.num_segments() {
            let span = segments.span(i);
            if span.is_empty() {
                continue;
            }
            let m = span.clone().fold(f64::NEG_INFINITY, |a, e| a.max(xv.data()[e]));
            let z: f64 = span.clone().map(|e| (xv.data()[e] - m).exp()).sum();
            for e in span {
                v.data_mut()[e] = (xv.data()[e] - m).exp() / z;
            }
        }
        let rg = self.rg(&[x]);
        Ok(self.push(v, Op::SegmentSoftmax(segments, x), rg))
    }

    /// `out[i] = Σ_{e ∈ segment i} weights[e] · x[members[e]]`.
    pub fn edge_aggregate(&mut self, segments: &'g Segments, weights: Var, x: Var) -> Result<Var> {
        let (sw, sx) = (self.node(weights)?.shape(), self.node(x)?.shape());
        if sw != (segments.num_members(), 1) {
            return Err(AutodiffError::ShapeMismatch {
                op: "edge_aggregate",
                left: sw,
                right: (segments.num_members(), 1),
            });
        }
        if let Some(&bad) = segments.members.iter().find(|&&m| m >= sx.0) {
            return Err(AutodiffError::IndexOutOfRange {
                op: "edge_aggregate",
                index: bad,
                len: sx.0,
            });
        }
        let (wv, xv) = (&self.nodes[weights.0].value, &self.nodes[x.0].value);
        let mut v = Matrix::zeros(segments.num_segments(), sx.1);
        for i in 0..segments.num_segments() {
            for e in segments.span(i) {
                let w = wv.data()[e];
                let src = xv.row(segments.members[e]);
                for (o, s) in v.row_mut(i).iter_mut().zip(src) {
                    *o += w * s;
                }
            }
        }
        let rg = self.rg(&[weights, x]);
        Ok(self.push(v, Op::EdgeAggregate { segments, weights, x }, rg))
    }

    /// Accumulates d`loss`/d(each tensor) for every tensor that requires grad.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.node(loss)?.shape();
        if shape != (1, 1) {
            return Err(AutodiffError::NotScalar(shape));
        }
        let mut grads: Vec<Option<Matrix>> = self.nodes.iter_mut().map(|n| n.grad.take()).collect();
        let seed = Matrix::scalar(1.0);
        match &mut grads[loss.0] {
            Some(g) => g.add_assign(&seed),
            slot => *slot = Some(seed),
        }
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (n, g) in self.nodes.iter_mut().zip(grads) {
            n.grad = g;
        }
        Ok(())
    }

    fn backprop_node(&self, i: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[i];
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let mut acc = |v: Var, d: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&d),
                slot => *slot = Some(d),
            }
        };
        let elementwise = |x: &Matrix, f: &dyn Fn(usize) -> f64| {
            let data = (0..x.len()).map(|k| g.data()[k] * f(k)).collect();
            Matrix::from_vec(x.rows(), x.cols(), data)
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(*a, g.matmul_t(val(*b)));
                }
                if wants(*b) {
                    acc(*b, val(*a).t_matmul(g));
                }
            }
            Op::SpMM(adj, x) => acc(*x, adj.t_spmm(g)),
            Op::AddBias(x, b) => {
                acc(*x, g.clone());
                if wants(*b) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (o, v) in db.row_mut(0).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Hadamard(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                if wants(*a) {
                    acc(*a, elementwise(va, &|k| vb.data()[k]));
                }
                if wants(*b) {
                    acc(*b, elementwise(vb, &|k| va.data()[k]));
                }
            }
            Op::Scale(x, s) => acc(*x, g.map(|v| v * s)),
            Op::Relu(x) => {
                let xv = val(*x);
                acc(*x, elementwise(xv, &|k| if xv.data()[k] > 0.0 { 1.0 } else { 0.0 }));
            }
            Op::Elu(x, alpha) => {
                let xv = val(*x);
                acc(
                    *x,
                    elementwise(xv, &|k| {
                        let a = xv.data()[k];
                        if a > 0.0 {
                            1.0
                        } else {
                            alpha * a.exp()
                        }
                    }),
                );
            }
            Op::LeakyRelu(x, slope) => {
                let xv = val(*x);
                acc(*x, elementwise(xv, &|k| if xv.data()[k] > 0.0 { 1.0 } else { *slope }));
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                acc(*x, elementwise(y, &|k| y.data()[k] * (1.0 - y.data()[k])));
            }
            Op::Softplus(x) => {
                let xv = val(*x);
                acc(*x, elementwise(xv, &|k| sigmoid(xv.data()[k])));
            }
            Op::LogSoftmax(x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let gs: f64 = g.row(r).iter().sum();
                    for c in 0..y.cols() {
                        dx.set(r, c, g.get(r, c) - y.get(r, c).exp() * gs);
                    }
                }
                acc(*x, dx);
            }
            Op::MaxPool { input, argmax } => {
                let xv = val(*input);
                let d = g.cols();
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (k, &src) in argmax.iter().enumerate() {
                    if src != usize::MAX {
                        let c = k % d;
                        let cur = dx.get(src, c);
                        dx.set(src, c, cur + g.data()[k]);
                    }
                }
                acc(*input, dx);
            }
            Op::SegmentSum(seg, x) => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for i in 0..seg.num_segments() {
                    for e in seg.span(i) {
                        let j = seg.members[e];
                        for (o, gv) in dx.row_mut(j).iter_mut().zip(g.row(i)) {
                            *o += gv;
                        }
                    }
                }
                acc(*x, dx);
            }
            Op::GatherRows(x, idx) => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (o, &i) in idx.iter().enumerate() {
                    for (d, gv) in dx.row_mut(i).iter_mut().zip(g.row(o)) {
                        *d += gv;
                    }
                }
                acc(*x, dx);
            }
            Op::ConcatCols(a, b) => {
                let ca = val(*a).cols();
                let cb = val(*b).cols();
                let mut da = Matrix::zeros(g.rows(), ca);
                let mut db = Matrix::zeros(g.rows(), cb);
                for r in 0..g.rows() {
                    da.row_mut(r).copy_from_slice(&g.row(r)[..ca]);
                    db.row_mut(r).copy_from_slice(&g.row(r)[ca..]);
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::RowSum(x) => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for r in 0..xv.rows() {
                    dx.row_mut(r).fill(g.data()[r]);
                }
                acc(*x, dx);
            }
            Op::Sum(x) => {
                let xv = val(*x);
                acc(*x, Matrix::filled(xv.rows(), xv.cols(), g.item()));
            }
            Op::Mean(x) => {
                let xv = val(*x);
                let n = xv.len().max(1) as f64;
                acc(*x, Matrix::filled(xv.rows(), xv.cols(), g.item() / n));
            }
            Op::Pick(x, entries) => {
                let xv = val(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (k, &(r, c)) in entries.iter().enumerate() {
                    let cur = dx.get(r, c);
                    dx.set(r, c, cur + g.data()[k]);
                }
                acc(*x, dx);
            }
            Op::SegmentSoftmax(seg, x) => {
                let y = &node.value;
                let mut dx = Matrix::zeros(y.rows(), 1);
                for i in 0..seg.num_segments() {
                    let span = seg.span(i);
                    let inner: f64 = span.clone().map(|e| y.data()[e] * g.data()[e]).sum();
                    for e in span {
                        dx.data_mut()[e] = y.data()[e] * (g.data()[e] - inner);
                    }
                }
                acc(*x, dx);
            }
            Op::EdgeAggregate { segments, weights, x } => {
                let (wv, xv) = (val(*weights), val(*x));
                let mut dw = Matrix::zeros(wv.rows(), 1);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for i in 0..segments.num_segments() {
                    let gi = g.row(i);
                    for e in segments.span(i) {
                        let j = segments.members[e];
                        dw.data_mut()[e] = crate::matrix::dot(gi, xv.row(j));
                        let w = wv.data()[e];
                        for (o, gv) in dx.row_mut(j).iter_mut().zip(gi) {
                            *o += w * gv;
                        }
                    }
                }
                acc(*weights, dw);
                acc(*x, dx);
            }
        }
    }
}
