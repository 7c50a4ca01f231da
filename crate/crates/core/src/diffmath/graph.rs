//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Graph`] records every operation as a node holding its forward value
//! and the ids of its inputs. Node ids are allocated in creation order, so the
//! recorded graph is acyclic by construction and reverse creation order is a
//! valid topological order for the backward sweep.
//!
//! Everything is stored as a 2-D matrix. Scalars are `1×1`, column vectors are
//! `n×1`, and spatial grids are flattened to `(h·w)×c` with the layout carried by
//! the caller.

use ndarray::{Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Handle to a node inside one [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Behaviour of cosine similarity when one side has zero norm.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ZeroNorm {
    /// Zero-norm vectors normalize to zero, so every similarity against them is 0.
    #[default]
    Lenient,
    /// Zero-norm vectors are rejected.
    Strict,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    MatMulNt(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    Scale(NodeId, f64),
    AddScalar(NodeId),
    LeakyRelu(NodeId, f64),
    Sigmoid(NodeId),
    SoftmaxRows(NodeId),
    NormalizeRows(NodeId, Vec<f64>),
    Sum(NodeId),
    Mean(NodeId),
    RowMax(NodeId, Vec<usize>),
    SelectSum {
        input: NodeId,
        picks: Vec<Vec<usize>>,
    },
    SparseRows {
        input: NodeId,
        rows: Vec<Vec<(usize, f64)>>,
    },
    Unfold {
        input: NodeId,
        sources: Vec<Vec<Option<usize>>>,
    },
    MaxPoolRows {
        input: NodeId,
        argmax: Vec<usize>,
    },
    ConcatCols(NodeId, NodeId),
    BatchNorm {
        input: NodeId,
        xhat: Matrix,
        inv_std: Vec<f64>,
        mean: Vec<f64>,
        var: Vec<f64>,
    },
    CrossEntropy {
        logits: NodeId,
        labels: Vec<usize>,
        probs: Matrix,
    },
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// A single-use computation graph.
///
/// Build it forward with the op methods, call [`Graph::backward`] once on a
/// scalar node, then read gradients with [`Graph::grad`]. Call [`Graph::reset`]
/// before recording a new computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    backward_done: bool,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Drops every node so the graph can record a fresh computation.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Value of a `1×1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        assert_eq!(v.dim(), (1, 1), "scalar() on a non-scalar node");
        v[[0, 0]]
    }

    /// Gradient of the last backward target with respect to `id`.
    ///
    /// `None` before backward, or when `id` does not influence the target.
    pub fn grad(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn backward_done(&self) -> bool {
        self.backward_done
    }

    /// Batch mean and variance observed by a batch-norm node.
    pub fn batch_stats(&self, id: NodeId) -> Option<(&[f64], &[f64])> {
        match &self.nodes[id.0].op {
            Op::BatchNorm { mean, var, .. } => Some((mean, var)),
            _ => None,
        }
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> NodeId {
        debug_assert!(!self.backward_done, "recording into a graph after backward");
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.nrows(), "matmul: inner dimensions differ");
        let out = va.dot(vb);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMul(a, b), rg)
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.ncols(), vb.ncols(), "matmul_nt: column counts differ");
        let out = va.dot(&vb.t());
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::MatMulNt(a, b), rg)
    }

    fn same_shape(&self, a: NodeId, b: NodeId, what: &str) {
        assert_eq!(
            self.value(a).dim(),
            self.value(b).dim(),
            "{what}: shape mismatch"
        );
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "add");
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "sub");
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Sub(a, b), rg)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.same_shape(a, b, "mul");
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Mul(a, b), rg)
    }

    /// Adds a `1×n` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.dim(), (1, va.ncols()), "add_row: row must be 1×ncols");
        let out = va + vr;
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::AddRow(a, row), rg)
    }

    /// Multiplies every row of `a` elementwise by a `1×n` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let (va, vr) = (self.value(a), self.value(row));
        assert_eq!(vr.dim(), (1, va.ncols()), "mul_row: row must be 1×ncols");
        let out = va * vr;
        let rg = self.rg(a) || self.rg(row);
        self.push(out, Op::MulRow(a, row), rg)
    }

    /// Scales row `i` of `a` by `col[i]` where `col` is `n×1`.
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let (va, vc) = (self.value(a), self.value(col));
        assert_eq!(vc.dim(), (va.nrows(), 1), "mul_col: col must be nrows×1");
        let out = va * vc;
        let rg = self.rg(a) || self.rg(col);
        self.push(out, Op::MulCol(a, col), rg)
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let out = self.value(a) * s;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    pub fn add_scalar(&mut self, a: NodeId, s: f64) -> NodeId {
        let out = self.value(a) + s;
        let rg = self.rg(a);
        self.push(out, Op::AddScalar(a), rg)
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: f64) -> NodeId {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { slope * x });
        let rg = self.rg(a);
        self.push(out, Op::LeakyRelu(a, slope), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let z: f64 = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        let rg = self.rg(a);
        self.push(out, Op::SoftmaxRows(a), rg)
    }

    /// Scales each row to unit L2 norm.
    pub fn normalize_rows(&mut self, a: NodeId, zero: ZeroNorm) -> Result<NodeId> {
        let mut out = self.value(a).clone();
        let mut norms = Vec::with_capacity(out.nrows());
        for (i, mut row) in out.rows_mut().into_iter().enumerate() {
            let n = row.dot(&row).sqrt();
            if n == 0.0 {
                if zero == ZeroNorm::Strict {
                    return Err(Error::invalid(format!(
                        "zero-norm vector at row {i} in cosine similarity"
                    )));
                }
                row.fill(0.0);
            } else {
                row.mapv_inplace(|x| x / n);
            }
            norms.push(n);
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::NormalizeRows(a, norms), rg))
    }

    /// Pairwise cosine similarities between the rows of `a` and the rows of `b`.
    pub fn cosine_similarity(&mut self, a: NodeId, b: NodeId, zero: ZeroNorm) -> Result<NodeId> {
        let na = self.normalize_rows(a, zero)?;
        let nb = if a == b { na } else { self.normalize_rows(b, zero)? };
        Ok(self.matmul_nt(na, nb))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a);
        assert!(!v.is_empty(), "mean of an empty node");
        let s = v.sum() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Array2::from_elem((1, 1), s), Op::Mean(a), rg)
    }

    /// Row-wise maximum as an `n×1` node plus the winning column per row.
    ///
    /// Ties resolve to the lowest column. The index is a constant for backward.
    pub fn max_with_index(&mut self, a: NodeId) -> (NodeId, Vec<usize>) {
        let v = self.value(a);
        let mut out = Array2::zeros((v.nrows(), 1));
        let mut idx = Vec::with_capacity(v.nrows());
        for (i, row) in v.rows().into_iter().enumerate() {
            let (j, m) = argmax(row.iter().copied());
            out[[i, 0]] = m;
            idx.push(j);
        }
        let rg = self.rg(a);
        let id = self.push(out, Op::RowMax(a, idx.clone()), rg);
        (id, idx)
    }

    /// `out[i][c] = Σ_{j ∈ picks[i·ncols + c]} a[i][j]`.
    ///
    /// The pick lists are constants; an empty list yields 0.
    pub fn select_sum(&mut self, a: NodeId, ncols: usize, picks: Vec<Vec<usize>>) -> NodeId {
        let v = self.value(a);
        assert_eq!(picks.len(), v.nrows() * ncols, "select_sum: pick table size");
        let mut out = Array2::zeros((v.nrows(), ncols));
        for i in 0..v.nrows() {
            for c in 0..ncols {
                out[[i, c]] = picks[i * ncols + c].iter().map(|&j| v[[i, j]]).sum();
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SelectSum { input: a, picks }, rg)
    }

    /// Each output row is a weighted sum of input rows: `out[r] = Σ w·a[s]`.
    ///
    /// Covers gathers, segment sums and segment means.
    pub fn sparse_rows(&mut self, a: NodeId, rows: Vec<Vec<(usize, f64)>>) -> NodeId {
        let v = self.value(a);
        let mut out = Array2::zeros((rows.len(), v.ncols()));
        for (r, terms) in rows.iter().enumerate() {
            let mut dst = out.row_mut(r);
            for &(s, w) in terms {
                dst.scaled_add(w, &v.row(s));
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::SparseRows { input: a, rows }, rg)
    }

    /// Row gather with unit weights.
    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        self.sparse_rows(a, idx.iter().map(|&i| vec![(i, 1.0)]).collect())
    }

    /// Builds patch rows: `out[r][t·c + ch] = a[sources[r][t]][ch]`, or 0 for `None`.
    ///
    /// This is the im2col step behind convolutions and patch embeddings.
    pub fn unfold(&mut self, a: NodeId, sources: Vec<Vec<Option<usize>>>) -> NodeId {
        let v = self.value(a);
        let c = v.ncols();
        let taps = sources.first().map_or(0, Vec::len);
        let mut out = Array2::zeros((sources.len(), taps * c));
        for (r, src) in sources.iter().enumerate() {
            assert_eq!(src.len(), taps, "unfold: ragged source table");
            for (t, s) in src.iter().enumerate() {
                if let Some(s) = *s {
                    out.row_mut(r)
                        .slice_mut(ndarray::s![t * c..(t + 1) * c])
                        .assign(&v.row(s));
                }
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::Unfold { input: a, sources }, rg)
    }

    /// Column-wise max over groups of input rows (max pooling on flattened grids).
    pub fn max_pool_rows(&mut self, a: NodeId, groups: &[Vec<usize>]) -> NodeId {
        let v = self.value(a);
        let c = v.ncols();
        let mut out = Array2::zeros((groups.len(), c));
        let mut argmax_rows = Vec::with_capacity(groups.len() * c);
        for (r, g) in groups.iter().enumerate() {
            assert!(!g.is_empty(), "max_pool_rows: empty group");
            for ch in 0..c {
                let (k, m) = argmax(g.iter().map(|&s| v[[s, ch]]));
                out[[r, ch]] = m;
                argmax_rows.push(g[k]);
            }
        }
        let rg = self.rg(a);
        self.push(
            out,
            Op::MaxPoolRows {
                input: a,
                argmax: argmax_rows,
            },
            rg,
        )
    }

    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.nrows(), vb.nrows(), "concat_cols: row counts differ");
        let out = ndarray::concatenate(Axis(1), &[va.view(), vb.view()]).expect("shapes checked");
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::ConcatCols(a, b), rg)
    }

    /// Per-column standardization with batch statistics (no affine part).
    pub fn batch_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let v = self.value(a);
        let n = v.nrows() as f64;
        assert!(v.nrows() > 0, "batch_norm on an empty batch");
        let mean: Vec<f64> = v.mean_axis(Axis(0)).expect("nonempty").to_vec();
        let var: Vec<f64> = (0..v.ncols())
            .map(|j| v.column(j).iter().map(|x| (x - mean[j]).powi(2)).sum::<f64>() / n)
            .collect();
        let inv_std: Vec<f64> = var.iter().map(|s| 1.0 / (s + eps).sqrt()).collect();
        let mut xhat = v.clone();
        for (j, mut col) in xhat.columns_mut().into_iter().enumerate() {
            col.mapv_inplace(|x| (x - mean[j]) * inv_std[j]);
        }
        let rg = self.rg(a);
        self.push(
            xhat.clone(),
            Op::BatchNorm {
                input: a,
                xhat,
                inv_std,
                mean,
                var,
            },
            rg,
        )
    }

    /// Mean softmax cross-entropy of `logits` rows against integer labels.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> NodeId {
        let v = self.value(logits);
        assert_eq!(v.nrows(), labels.len(), "cross_entropy: one label per row");
        assert!(!labels.is_empty(), "cross_entropy over zero rows");
        let mut probs = v.clone();
        let mut total = 0.0;
        for (mut row, &y) in probs.rows_mut().into_iter().zip(labels) {
            assert!(y < row.len(), "cross_entropy: label out of range");
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
            total += lse - row[y];
            row.mapv_inplace(|x| (x - lse).exp());
        }
        let loss = total / labels.len() as f64;
        let rg = self.rg(logits);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Propagates d(loss)/d(node) to every node that influences `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.backward_done {
            return Err(Error::contract(
                "backward already ran on this graph; reset it first",
            ));
        }
        let v = self.value(loss);
        if v.dim() != (1, 1) {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                v.dim()
            )));
        }
        if !v[[0, 0]].is_finite() {
            return Err(Error::contract(format!(
                "backward on non-finite loss {}",
                v[[0, 0]]
            )));
        }
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss.0] = Some(Array2::ones((1, 1)));
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = self.grads[i].take() else {
                continue;
            };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
        self.backward_done = true;
        Ok(())
    }

    fn acc(&mut self, id: NodeId, delta: Matrix) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        match &mut self.grads[id.0] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, i: usize, g: &Matrix) {
        // Take the op out temporarily so we can borrow self mutably.
        let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let d = g.dot(&self.value(b).t());
                    self.acc(a, d);
                }
                if self.rg(b) {
                    let d = self.value(a).t().dot(g);
                    self.acc(b, d);
                }
            }
            Op::MatMulNt(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let d = g.dot(self.value(b));
                    self.acc(a, d);
                }
                if self.rg(b) {
                    let d = g.t().dot(self.value(a));
                    self.acc(b, d);
                }
            }
            Op::Add(a, b) => {
                self.acc(*a, g.clone());
                self.acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(*a, g.clone());
                self.acc(*b, -g);
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.rg(a) {
                    let d = g * self.value(b);
                    self.acc(a, d);
                }
                if self.rg(b) {
                    let d = g * self.value(a);
                    self.acc(b, d);
                }
            }
            Op::AddRow(a, row) => {
                self.acc(*a, g.clone());
                if self.rg(*row) {
                    let d = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.acc(*row, d);
                }
            }
            Op::MulRow(a, row) => {
                let (a, row) = (*a, *row);
                if self.rg(a) {
                    let d = g * self.value(row);
                    self.acc(a, d);
                }
                if self.rg(row) {
                    let d = (g * self.value(a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    self.acc(row, d);
                }
            }
            Op::MulCol(a, col) => {
                let (a, col) = (*a, *col);
                if self.rg(a) {
                    let d = g * self.value(col);
                    self.acc(a, d);
                }
                if self.rg(col) {
                    let d = (g * self.value(a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    self.acc(col, d);
                }
            }
            Op::Scale(a, s) => self.acc(*a, g * *s),
            Op::AddScalar(a) => self.acc(*a, g.clone()),
            Op::LeakyRelu(a, slope) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(self.value(*a))
                    .for_each(|d, &x| {
                        if x <= 0.0 {
                            *d *= *slope
                        }
                    });
                self.acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[i].value;
                let d = g * &y.mapv(|y| y * (1.0 - y));
                self.acc(*a, d);
            }
            Op::SoftmaxRows(a) => {
                let y = &self.nodes[i].value;
                let mut d = g * y;
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(y.rows()) {
                    let s = drow.sum();
                    drow.scaled_add(-s, &yrow);
                }
                self.acc(*a, d);
            }
            Op::NormalizeRows(a, norms) => {
                let y = &self.nodes[i].value;
                let mut d = g.clone();
                for ((mut drow, yrow), &n) in d.rows_mut().into_iter().zip(y.rows()).zip(norms) {
                    if n == 0.0 {
                        drow.fill(0.0);
                        continue;
                    }
                    let proj = drow.dot(&yrow);
                    drow.scaled_add(-proj, &yrow);
                    drow.mapv_inplace(|x| x / n);
                }
                self.acc(*a, d);
            }
            Op::Sum(a) => {
                let shape = self.value(*a).dim();
                self.acc(*a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::Mean(a) => {
                let v = self.value(*a);
                let shape = v.dim();
                let n = v.len() as f64;
                self.acc(*a, Array2::from_elem(shape, g[[0, 0]] / n));
            }
            Op::RowMax(a, idx) => {
                let mut d = Array2::zeros(self.value(*a).dim());
                for (r, &j) in idx.iter().enumerate() {
                    d[[r, j]] = g[[r, 0]];
                }
                self.acc(*a, d);
            }
            Op::SelectSum { input, picks } => {
                let v = self.value(*input);
                let ncols = g.ncols();
                let mut d = Array2::zeros(v.dim());
                for r in 0..g.nrows() {
                    for c in 0..ncols {
                        for &j in &picks[r * ncols + c] {
                            d[[r, j]] += g[[r, c]];
                        }
                    }
                }
                self.acc(*input, d);
            }
            Op::SparseRows { input, rows } => {
                let mut d = Array2::zeros(self.value(*input).dim());
                for (r, terms) in rows.iter().enumerate() {
                    for &(s, w) in terms {
                        d.row_mut(s).scaled_add(w, &g.row(r));
                    }
                }
                self.acc(*input, d);
            }
            Op::Unfold { input, sources } => {
                let v = self.value(*input);
                let c = v.ncols();
                let mut d = Array2::zeros(v.dim());
                for (r, src) in sources.iter().enumerate() {
                    for (t, s) in src.iter().enumerate() {
                        if let Some(s) = *s {
                            let gs = g.row(r);
                            let gs = gs.slice(ndarray::s![t * c..(t + 1) * c]);
                            d.row_mut(s).scaled_add(1.0, &gs);
                        }
                    }
                }
                self.acc(*input, d);
            }
            Op::MaxPoolRows { input, argmax } => {
                let c = g.ncols();
                let mut d = Array2::zeros(self.value(*input).dim());
                for r in 0..g.nrows() {
                    for ch in 0..c {
                        d[[argmax[r * c + ch], ch]] += g[[r, ch]];
                    }
                }
                self.acc(*input, d);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).ncols();
                let ga = g.slice(ndarray::s![.., ..ca]).to_owned();
                let gb = g.slice(ndarray::s![.., ca..]).to_owned();
                self.acc(*a, ga);
                self.acc(*b, gb);
            }
            Op::BatchNorm {
                input,
                xhat,
                inv_std,
                ..
            } => {
                let n = g.nrows() as f64;
                let mut d = Array2::zeros(g.dim());
                for j in 0..g.ncols() {
                    let gc = g.column(j);
                    let xc = xhat.column(j);
                    let sum_g: f64 = gc.sum();
                    let sum_gx: f64 = gc.dot(&xc);
                    for r in 0..g.nrows() {
                        d[[r, j]] = inv_std[j] / n * (n * gc[r] - sum_g - xc[r] * sum_gx);
                    }
                }
                self.acc(*input, d);
            }
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            } => {
                let n = labels.len() as f64;
                let mut d = probs.clone();
                for (r, &y) in labels.iter().enumerate() {
                    d[[r, y]] -= 1.0;
                }
                d.mapv_inplace(|x| x * g[[0, 0]] / n);
                self.acc(*logits, d);
            }
        }
        self.nodes[i].op = op;
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// First index of the maximum; the iterator must be nonempty.
pub(crate) fn argmax(values: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0usize, f64::NEG_INFINITY);
    for (i, x) in values.enumerate() {
        if i == 0 || x > best.1 {
            best = (i, x);
        }
    }
    best
}
