//! Reverse-mode autodiff tape over dense 2-d arrays.
//!
//! Define-by-run: each op computes its value eagerly and records enough to
//! replay the backward pass. Everything is generic over [`Real`] so training
//! runs in `f32` while gradient checks instantiate `f64`.
//!
//! Conventions: rows are time steps (or batch items), columns are features.
//! Shape mismatches inside a graph are programming errors and panic; domain
//! validation happens at module boundaries.

use crate::real::{rr, Real};
use crate::softdtw;
use ndarray::{s, Array2, Axis};

pub type NodeId = usize;

enum Op<R: Real> {
    /// Leaf value. `param` is `Some(store_index)` for trainable parameters.
    Leaf { param: Option<usize> },
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// `(m x n) + (1 x n)` broadcast over rows.
    AddRow(NodeId, NodeId),
    /// `(m x n) * (1 x n)` broadcast over rows.
    MulRow(NodeId, NodeId),
    Scale(NodeId, R),
    Tanh(NodeId),
    Sigmoid(NodeId),
    Relu(NodeId),
    LeakyRelu(NodeId, R),
    Sqrt(NodeId),
    SoftmaxRows(NodeId),
    LogSoftmaxRows(NodeId),
    SumAll(NodeId),
    MeanAll(NodeId),
    Transpose(NodeId),
    ConcatRows(Vec<NodeId>),
    ConcatCols(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    SliceCols(NodeId, usize, usize),
    /// Row gather: `out[i] = a[idx[i]]`; backward scatter-adds.
    GatherRows(NodeId, Vec<usize>),
    /// Per-row element pick: `out[i, 0] = a[i, idx[i]]`.
    SelectPerRow(NodeId, Vec<usize>),
    /// `(1 x n)` -> `(m x n)`.
    BroadcastRow(NodeId),
    /// Non-overlapping mean pooling over row windows of width `w`.
    MeanPoolRows(NodeId, usize),
    /// Row-major reshape.
    Reshape(NodeId),
    /// Centered sliding window unfold with zero padding: `(t x d)` -> `(t x k*d)`.
    UnfoldRows(NodeId, usize),
    /// Per-row layer normalization (no affine; compose with MulRow/AddRow).
    LayerNormRows(NodeId, R),
    /// Identity forward, gradient barrier backward.
    Detach,
    /// Soft dynamic time warping over a pairwise cost matrix; `r` is the
    /// forward DP table kept for the backward pass.
    SoftDtw { cost: NodeId, gamma: R, r: Array2<R> },
}

struct Node<R: Real> {
    value: Array2<R>,
    needs_grad: bool,
    op: Op<R>,
}

pub struct Graph<R: Real> {
    nodes: Vec<Node<R>>,
}

/// Per-node gradients produced by [`Graph::backward`].
pub struct Grads<R: Real> {
    by_node: Vec<Option<Array2<R>>>,
}

impl<R: Real> Grads<R> {
    pub fn get(&self, id: NodeId) -> Option<&Array2<R>> {
        self.by_node.get(id).and_then(|g| g.as_ref())
    }
}

impl<R: Real> Default for Graph<R> {
    fn default() -> Self {
        Self::new()
    }
}

impl<R: Real> Graph<R> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array2<R> {
        &self.nodes[id].value
    }

    pub fn scalar(&self, id: NodeId) -> R {
        let v = &self.nodes[id].value;
        assert_eq!(v.dim(), (1, 1), "node is not scalar");
        v[(0, 0)]
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id].value.dim()
    }

    fn push(&mut self, value: Array2<R>, needs_grad: bool, op: Op<R>) -> NodeId {
        self.nodes.push(Node { value, needs_grad, op });
        self.nodes.len() - 1
    }

    fn ng(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    // ---- leaves ----

    /// Constant input; no gradient tracked.
    pub fn input(&mut self, value: Array2<R>) -> NodeId {
        self.push(value, false, Op::Leaf { param: None })
    }

    /// Trainable parameter leaf bound to a store slot.
    pub fn param(&mut self, store_index: usize, value: Array2<R>) -> NodeId {
        self.push(value, true, Op::Leaf { param: Some(store_index) })
    }

    /// Input that wants a gradient but is not a parameter (e.g. probes).
    pub fn input_with_grad(&mut self, value: Array2<R>) -> NodeId {
        self.push(value, true, Op::Leaf { param: None })
    }

    // ---- ops ----

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.nodes[a].value.dot(&self.nodes[b].value);
        let g = self.ng(a) || self.ng(b);
        self.push(v, g, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "add shape mismatch");
        let v = &self.nodes[a].value + &self.nodes[b].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, g, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "sub shape mismatch");
        let v = &self.nodes[a].value - &self.nodes[b].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, g, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        assert_eq!(self.shape(a), self.shape(b), "mul shape mismatch");
        let v = &self.nodes[a].value * &self.nodes[b].value;
        let g = self.ng(a) || self.ng(b);
        self.push(v, g, Op::Mul(a, b))
    }

    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.shape(row).0, 1, "add_row needs 1 x n row");
        assert_eq!(self.shape(a).1, self.shape(row).1, "add_row width mismatch");
        let v = &self.nodes[a].value + &self.nodes[row].value;
        let g = self.ng(a) || self.ng(row);
        self.push(v, g, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        assert_eq!(self.shape(row).0, 1, "mul_row needs 1 x n row");
        assert_eq!(self.shape(a).1, self.shape(row).1, "mul_row width mismatch");
        let v = &self.nodes[a].value * &self.nodes[row].value;
        let g = self.ng(a) || self.ng(row);
        self.push(v, g, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, c: R) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x * c);
        let g = self.ng(a);
        self.push(v, g, Op::Scale(a, c))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.tanh());
        let g = self.ng(a);
        self.push(v, g, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let one = R::one();
        let v = self.nodes[a].value.mapv(|x| one / (one + (-x).exp()));
        let g = self.ng(a);
        self.push(v, g, Op::Sigmoid(a))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| if x > R::zero() { x } else { R::zero() });
        let g = self.ng(a);
        self.push(v, g, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: R) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| if x > R::zero() { x } else { x * slope });
        let g = self.ng(a);
        self.push(v, g, Op::LeakyRelu(a, slope))
    }

    pub fn sqrt(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.mapv(|x| x.sqrt());
        let g = self.ng(a);
        self.push(v, g, Op::Sqrt(a))
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows_values(&self.nodes[a].value);
        let g = self.ng(a);
        self.push(v, g, Op::SoftmaxRows(a))
    }

    pub fn log_softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = &self.nodes[a].value;
        let mut v = x.clone();
        for mut row in v.rows_mut() {
            let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
            let lse = row.iter().map(|&x| (x - max).exp()).sum::<R>().ln() + max;
            row.mapv_inplace(|x| x - lse);
        }
        let g = self.ng(a);
        self.push(v, g, Op::LogSoftmaxRows(a))
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a].value.iter().cloned().sum::<R>();
        let g = self.ng(a);
        self.push(Array2::from_elem((1, 1), s), g, Op::SumAll(a))
    }

    pub fn mean_all(&mut self, a: NodeId) -> NodeId {
        let n = self.nodes[a].value.len();
        let s = self.nodes[a].value.iter().cloned().sum::<R>() / rr(n as f64);
        let g = self.ng(a);
        self.push(Array2::from_elem((1, 1), s), g, Op::MeanAll(a))
    }

    pub fn transpose(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.t().to_owned();
        let g = self.ng(a);
        self.push(v, g, Op::Transpose(a))
    }

    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&id| self.nodes[id].value.view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("concat_rows shape mismatch");
        let g = parts.iter().any(|&id| self.ng(id));
        self.push(v, g, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty());
        let views: Vec<_> = parts.iter().map(|&id| self.nodes[id].value.view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("concat_cols shape mismatch");
        let g = parts.iter().any(|&id| self.ng(id));
        self.push(v, g, Op::ConcatCols(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.nodes[a].value.slice(s![start..end, ..]).to_owned();
        let g = self.ng(a);
        self.push(v, g, Op::SliceRows(a, start, end))
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = self.nodes[a].value.slice(s![.., start..end]).to_owned();
        let g = self.ng(a);
        self.push(v, g, Op::SliceCols(a, start, end))
    }

    pub fn gather_rows(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let src = &self.nodes[a].value;
        let mut v = Array2::zeros((idx.len(), src.ncols()));
        for (i, &k) in idx.iter().enumerate() {
            v.row_mut(i).assign(&src.row(k));
        }
        let g = self.ng(a);
        self.push(v, g, Op::GatherRows(a, idx.to_vec()))
    }

    pub fn select_per_row(&mut self, a: NodeId, idx: &[usize]) -> NodeId {
        let src = &self.nodes[a].value;
        assert_eq!(src.nrows(), idx.len(), "select_per_row needs one index per row");
        let mut v = Array2::zeros((idx.len(), 1));
        for (i, &k) in idx.iter().enumerate() {
            v[(i, 0)] = src[(i, k)];
        }
        let g = self.ng(a);
        self.push(v, g, Op::SelectPerRow(a, idx.to_vec()))
    }

    pub fn broadcast_row(&mut self, a: NodeId, rows: usize) -> NodeId {
        assert_eq!(self.shape(a).0, 1, "broadcast_row needs 1 x n input");
        let src = self.nodes[a].value.row(0).to_owned();
        let v = Array2::from_shape_fn((rows, src.len()), |(_, j)| src[j]);
        let g = self.ng(a);
        self.push(v, g, Op::BroadcastRow(a))
    }

    pub fn mean_pool_rows(&mut self, a: NodeId, w: usize) -> NodeId {
        let (t, d) = self.shape(a);
        assert!(w > 0 && t % w == 0, "mean_pool_rows needs divisible length");
        let src = &self.nodes[a].value;
        let inv = R::one() / rr(w as f64);
        let mut v = Array2::zeros((t / w, d));
        for i in 0..t / w {
            for k in 0..w {
                for j in 0..d {
                    v[(i, j)] = v[(i, j)] + src[(i * w + k, j)] * inv;
                }
            }
        }
        let g = self.ng(a);
        self.push(v, g, Op::MeanPoolRows(a, w))
    }

    pub fn reshape(&mut self, a: NodeId, rows: usize, cols: usize) -> NodeId {
        let (r0, c0) = self.shape(a);
        assert_eq!(r0 * c0, rows * cols, "reshape element count mismatch");
        let flat: Vec<R> = self.nodes[a].value.iter().cloned().collect();
        let v = Array2::from_shape_vec((rows, cols), flat).expect("reshape");
        let g = self.ng(a);
        self.push(v, g, Op::Reshape(a))
    }

    pub fn unfold_rows(&mut self, a: NodeId, k: usize) -> NodeId {
        assert!(k % 2 == 1, "unfold_rows expects odd window");
        let (t, d) = self.shape(a);
        let h = k / 2;
        let src = &self.nodes[a].value;
        let mut v = Array2::zeros((t, k * d));
        for i in 0..t {
            for j in 0..k {
                let srow = i as isize + j as isize - h as isize;
                if srow >= 0 && (srow as usize) < t {
                    for c in 0..d {
                        v[(i, j * d + c)] = src[(srow as usize, c)];
                    }
                }
            }
        }
        let g = self.ng(a);
        self.push(v, g, Op::UnfoldRows(a, k))
    }

    pub fn layer_norm_rows(&mut self, a: NodeId, eps: R) -> NodeId {
        let v = layer_norm_values(&self.nodes[a].value, eps);
        let g = self.ng(a);
        self.push(v, g, Op::LayerNormRows(a, eps))
    }

    pub fn detach(&mut self, a: NodeId) -> NodeId {
        let v = self.nodes[a].value.clone();
        self.push(v, false, Op::Detach)
    }

    pub fn soft_dtw(&mut self, cost: NodeId, gamma: R) -> NodeId {
        assert!(gamma > R::zero(), "soft-dtw smoothing must be positive");
        let r = softdtw::forward_table(&self.nodes[cost].value, gamma);
        let (n, m) = self.shape(cost);
        let v = Array2::from_elem((1, 1), r[(n, m)]);
        let g = self.ng(cost);
        self.push(v, g, Op::SoftDtw { cost, gamma, r })
    }

    // ---- composites ----

    /// `x @ w + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: NodeId) -> NodeId {
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Mean of squared elements of `a - b`.
    pub fn mse(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    /// Euclidean norm of `a - b` over all elements.
    pub fn euclid(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        let s = self.sum_all(sq);
        self.sqrt(s)
    }

    /// Mean negative log-likelihood of `targets` under row logits.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize]) -> NodeId {
        let logp = self.log_softmax_rows(logits);
        let picked = self.select_per_row(logp, targets);
        let mean = self.mean_all(picked);
        self.scale(mean, -R::one())
    }

    // ---- backward ----

    pub fn backward(&self, loss: NodeId) -> Grads<R> {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar loss");
        let mut by_node: Vec<Option<Array2<R>>> = vec![None; loss + 1];
        by_node[loss] = Some(Array2::from_elem((1, 1), R::one()));

        for id in (0..=loss).rev() {
            if by_node[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let gy = by_node[id].take().expect("checked above");
            self.apply_backward(id, &gy, &mut by_node);
            by_node[id] = Some(gy);
        }
        Grads { by_node }
    }

    /// Gradients for each trainable parameter slot that appears in the graph,
    /// accumulated across multiple leaves bound to the same slot.
    pub fn param_grads(&self, grads: &Grads<R>, n_slots: usize) -> Vec<Option<Array2<R>>> {
        let mut out: Vec<Option<Array2<R>>> = (0..n_slots).map(|_| None).collect();
        for (id, node) in self.nodes.iter().enumerate() {
            if let Op::Leaf { param: Some(slot) } = node.op {
                if let Some(g) = grads.get(id) {
                    match &mut out[slot] {
                        Some(acc) => *acc += g,
                        none => *none = Some(g.clone()),
                    }
                }
            }
        }
        out
    }

    fn apply_backward(&self, id: NodeId, gy: &Array2<R>, by: &mut [Option<Array2<R>>]) {
        let acc = |by: &mut [Option<Array2<R>>], tgt: NodeId, delta: Array2<R>, ng: bool| {
            if !ng {
                return;
            }
            match &mut by[tgt] {
                Some(g) => *g += &delta,
                slot => *slot = Some(delta),
            }
        };
        match &self.nodes[id].op {
            Op::Leaf { .. } | Op::Detach => {}
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                if self.ng(a) {
                    let da = gy.dot(&self.nodes[b].value.t());
                    acc(by, a, da, true);
                }
                if self.ng(b) {
                    let db = self.nodes[a].value.t().dot(gy);
                    acc(by, b, db, true);
                }
            }
            Op::Add(a, b) => {
                acc(by, *a, gy.clone(), self.ng(*a));
                acc(by, *b, gy.clone(), self.ng(*b));
            }
            Op::Sub(a, b) => {
                acc(by, *a, gy.clone(), self.ng(*a));
                acc(by, *b, gy.mapv(|x| -x), self.ng(*b));
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                if self.ng(a) {
                    acc(by, a, gy * &self.nodes[b].value, true);
                }
                if self.ng(b) {
                    acc(by, b, gy * &self.nodes[a].value, true);
                }
            }
            Op::AddRow(a, row) => {
                acc(by, *a, gy.clone(), self.ng(*a));
                if self.ng(*row) {
                    let dr = gy.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(by, *row, dr, true);
                }
            }
            Op::MulRow(a, row) => {
                let (a, row) = (*a, *row);
                if self.ng(a) {
                    acc(by, a, gy * &self.nodes[row].value, true);
                }
                if self.ng(row) {
                    let prod = gy * &self.nodes[a].value;
                    acc(by, row, prod.sum_axis(Axis(0)).insert_axis(Axis(0)), true);
                }
            }
            Op::Scale(a, c) => acc(by, *a, gy.mapv(|x| x * *c), self.ng(*a)),
            Op::Tanh(a) => {
                let y = &self.nodes[id].value;
                acc(by, *a, gy * &y.mapv(|v| R::one() - v * v), self.ng(*a));
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[id].value;
                acc(by, *a, gy * &y.mapv(|v| v * (R::one() - v)), self.ng(*a));
            }
            Op::Relu(a) => {
                let x = &self.nodes[*a].value;
                let mask = x.mapv(|v| if v > R::zero() { R::one() } else { R::zero() });
                acc(by, *a, gy * &mask, self.ng(*a));
            }
            Op::LeakyRelu(a, slope) => {
                let x = &self.nodes[*a].value;
                let mask = x.mapv(|v| if v > R::zero() { R::one() } else { *slope });
                acc(by, *a, gy * &mask, self.ng(*a));
            }
            Op::Sqrt(a) => {
                // guard: upstream is zero exactly where the value is pinned at 0
                let y = &self.nodes[id].value;
                let floor = rr::<R>(1e-12);
                let d = gy / &y.mapv(|v| (v + v).max(floor));
                acc(by, *a, d, self.ng(*a));
            }
            Op::SoftmaxRows(a) => {
                if self.ng(*a) {
                    let y = &self.nodes[id].value;
                    let mut dx = gy * y;
                    for (mut drow, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let dot: R = drow.iter().cloned().sum();
                        for (d, &yv) in drow.iter_mut().zip(yrow.iter()) {
                            *d -= dot * yv;
                        }
                    }
                    acc(by, *a, dx, true);
                }
            }
            Op::LogSoftmaxRows(a) => {
                if self.ng(*a) {
                    let y = &self.nodes[id].value;
                    let mut dx = gy.clone();
                    for (mut drow, yrow) in dx.rows_mut().into_iter().zip(y.rows()) {
                        let total: R = drow.iter().cloned().sum();
                        for (d, &yv) in drow.iter_mut().zip(yrow.iter()) {
                            *d -= total * yv.exp();
                        }
                    }
                    acc(by, *a, dx, true);
                }
            }
            Op::SumAll(a) => {
                let g = gy[(0, 0)];
                let shape = self.shape(*a);
                acc(by, *a, Array2::from_elem(shape, g), self.ng(*a));
            }
            Op::MeanAll(a) => {
                let shape = self.shape(*a);
                let g = gy[(0, 0)] / rr((shape.0 * shape.1) as f64);
                acc(by, *a, Array2::from_elem(shape, g), self.ng(*a));
            }
            Op::Transpose(a) => acc(by, *a, gy.t().to_owned(), self.ng(*a)),
            Op::ConcatRows(parts) => {
                let mut start = 0;
                for &p in parts {
                    let rows = self.shape(p).0;
                    let d = gy.slice(s![start..start + rows, ..]).to_owned();
                    acc(by, p, d, self.ng(p));
                    start += rows;
                }
            }
            Op::ConcatCols(parts) => {
                let mut start = 0;
                for &p in parts {
                    let cols = self.shape(p).1;
                    let d = gy.slice(s![.., start..start + cols]).to_owned();
                    acc(by, p, d, self.ng(p));
                    start += cols;
                }
            }
            Op::SliceRows(a, start, end) => {
                if self.ng(*a) {
                    let mut d = Array2::zeros(self.shape(*a));
                    d.slice_mut(s![*start..*end, ..]).assign(gy);
                    acc(by, *a, d, true);
                }
            }
            Op::SliceCols(a, start, end) => {
                if self.ng(*a) {
                    let mut d = Array2::zeros(self.shape(*a));
                    d.slice_mut(s![.., *start..*end]).assign(gy);
                    acc(by, *a, d, true);
                }
            }
            Op::GatherRows(a, idx) => {
                if self.ng(*a) {
                    let mut d = Array2::zeros(self.shape(*a));
                    for (i, &k) in idx.iter().enumerate() {
                        let mut row = d.row_mut(k);
                        row += &gy.row(i);
                    }
                    acc(by, *a, d, true);
                }
            }
            Op::SelectPerRow(a, idx) => {
                if self.ng(*a) {
                    let mut d = Array2::zeros(self.shape(*a));
                    for (i, &k) in idx.iter().enumerate() {
                        d[(i, k)] = gy[(i, 0)];
                    }
                    acc(by, *a, d, true);
                }
            }
            Op::BroadcastRow(a) => {
                if self.ng(*a) {
                    acc(by, *a, gy.sum_axis(Axis(0)).insert_axis(Axis(0)), true);
                }
            }
            Op::MeanPoolRows(a, w) => {
                if self.ng(*a) {
                    let (t, d) = self.shape(*a);
                    let inv = R::one() / rr(*w as f64);
                    let mut dx = Array2::zeros((t, d));
                    for i in 0..t {
                        for j in 0..d {
                            dx[(i, j)] = gy[(i / w, j)] * inv;
                        }
                    }
                    acc(by, *a, dx, true);
                }
            }
            Op::Reshape(a) => {
                if self.ng(*a) {
                    let shape = self.shape(*a);
                    let flat: Vec<R> = gy.iter().cloned().collect();
                    acc(by, *a, Array2::from_shape_vec(shape, flat).expect("reshape"), true);
                }
            }
            Op::UnfoldRows(a, k) => {
                if self.ng(*a) {
                    let (t, d) = self.shape(*a);
                    let h = k / 2;
                    let mut dx = Array2::zeros((t, d));
                    for i in 0..t {
                        for j in 0..*k {
                            let srow = i as isize + j as isize - h as isize;
                            if srow >= 0 && (srow as usize) < t {
                                for c in 0..d {
                                    dx[(srow as usize, c)] =
                                        dx[(srow as usize, c)] + gy[(i, j * d + c)];
                                }
                            }
                        }
                    }
                    acc(by, *a, dx, true);
                }
            }
            Op::LayerNormRows(a, eps) => {
                if self.ng(*a) {
                    let x = &self.nodes[*a].value;
                    let n = rr::<R>(x.ncols() as f64);
                    let mut dx = Array2::zeros(x.raw_dim());
                    for i in 0..x.nrows() {
                        let row = x.row(i);
                        let mean = row.iter().cloned().sum::<R>() / n;
                        let var =
                            row.iter().map(|&v| (v - mean) * (v - mean)).sum::<R>() / n;
                        let inv = R::one() / (var + *eps).sqrt();
                        let xhat: Vec<R> = row.iter().map(|&v| (v - mean) * inv).collect();
                        let gyr = gy.row(i);
                        let mean_gy = gyr.iter().cloned().sum::<R>() / n;
                        let mean_gy_xhat = gyr
                            .iter()
                            .zip(xhat.iter())
                            .map(|(&g, &xh)| g * xh)
                            .sum::<R>()
                            / n;
                        for j in 0..x.ncols() {
                            dx[(i, j)] =
                                inv * (gyr[j] - mean_gy - xhat[j] * mean_gy_xhat);
                        }
                    }
                    acc(by, *a, dx, true);
                }
            }
            Op::SoftDtw { cost, gamma, r } => {
                if self.ng(*cost) {
                    let e = softdtw::backward_table(&self.nodes[*cost].value, r, *gamma);
                    acc(by, *cost, e.mapv(|v| v * gy[(0, 0)]), true);
                }
            }
        }
    }
}

pub(crate) fn softmax_rows_values<R: Real>(x: &Array2<R>) -> Array2<R> {
    let mut v = x.clone();
    for mut row in v.rows_mut() {
        let max = row.iter().cloned().fold(R::neg_infinity(), R::max);
        row.mapv_inplace(|x| (x - max).exp());
        let sum: R = row.iter().cloned().sum();
        row.mapv_inplace(|x| x / sum);
    }
    v
}

pub(crate) fn layer_norm_values<R: Real>(x: &Array2<R>, eps: R) -> Array2<R> {
    let n = rr::<R>(x.ncols() as f64);
    let mut v = x.clone();
    for mut row in v.rows_mut() {
        let mean = row.iter().cloned().sum::<R>() / n;
        let var = row.iter().map(|&a| (a - mean) * (a - mean)).sum::<R>() / n;
        let inv = R::one() / (var + eps).sqrt();
        row.mapv_inplace(|a| (a - mean) * inv);
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array;
    use rand::Rng;

    fn rand_arr(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::rng::stream(seed, "graph-test", 0);
        Array::from_shape_fn((r, c), |_| rng.gen_range(-1.0..1.0))
    }

    /// Finite-difference check of a scalar-valued builder against the tape.
    fn check_input_grad<F>(x0: Array2<f64>, build: F, tol: f64)
    where
        F: Fn(&mut Graph<f64>, NodeId) -> NodeId,
    {
        let mut g = Graph::new();
        let x = g.input_with_grad(x0.clone());
        let loss = build(&mut g, x);
        assert_eq!(g.shape(loss), (1, 1));
        let grads = g.backward(loss);
        let analytic = grads.get(x).expect("input grad").clone();

        let eps = 1e-6;
        for i in 0..x0.nrows() {
            for j in 0..x0.ncols() {
                let eval = |v: f64| {
                    let mut xp = x0.clone();
                    xp[(i, j)] = v;
                    let mut g = Graph::new();
                    let x = g.input_with_grad(xp);
                    let loss = build(&mut g, x);
                    g.scalar(loss)
                };
                let fd = (eval(x0[(i, j)] + eps) - eval(x0[(i, j)] - eps)) / (2.0 * eps);
                let a = analytic[(i, j)];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
                assert!(
                    rel < tol,
                    "grad mismatch at ({i},{j}): analytic {a}, fd {fd}, rel {rel}"
                );
            }
        }
    }

    #[test]
    fn matmul_linear_chain_grad() {
        let w = rand_arr(3, 4, 1);
        let b = rand_arr(1, 4, 2);
        check_input_grad(rand_arr(5, 3, 3), move |g, x| {
            let wn = g.input(w.clone());
            let bn = g.input(b.clone());
            let y = g.linear(x, wn, bn);
            let t = g.tanh(y);
            let sq = g.mul(t, t);
            g.mean_all(sq)
        }, 1e-6);
    }

    #[test]
    fn softmax_logsoftmax_grads() {
        check_input_grad(rand_arr(4, 6, 4), |g, x| {
            let sm = g.softmax_rows(x);
            let sq = g.mul(sm, sm);
            g.sum_all(sq)
        }, 1e-6);
        check_input_grad(rand_arr(4, 6, 5), |g, x| {
            g.cross_entropy(x, &[1, 0, 5, 2])
        }, 1e-6);
    }

    #[test]
    fn layer_norm_grad() {
        check_input_grad(rand_arr(3, 8, 6), |g, x| {
            let ln = g.layer_norm_rows(x, 1e-5);
            let w = g.input(rand_arr(8, 1, 7));
            let y = g.matmul(ln, w);
            let sq = g.mul(y, y);
            g.mean_all(sq)
        }, 1e-5);
    }

    #[test]
    fn structural_op_grads() {
        check_input_grad(rand_arr(6, 4, 8), |g, x| {
            let up = g.unfold_rows(x, 3);
            let pooled = g.mean_pool_rows(up, 2);
            let resh = g.reshape(pooled, 6, 6);
            let t = g.transpose(resh);
            let sl = g.slice_cols(t, 1, 5);
            let sq = g.mul(sl, sl);
            g.mean_all(sq)
        }, 1e-6);
    }

    #[test]
    fn gather_select_broadcast_grads() {
        check_input_grad(rand_arr(5, 3, 9), |g, x| {
            let gth = g.gather_rows(x, &[4, 0, 0, 2]);
            let sel = g.select_per_row(gth, &[2, 1, 0, 2]);
            let sq = g.mul(sel, sel);
            g.sum_all(sq)
        }, 1e-6);
        check_input_grad(rand_arr(1, 4, 10), |g, x| {
            let b = g.broadcast_row(x, 5);
            let w = g.input(rand_arr(5, 4, 11));
            let p = g.mul(b, w);
            g.sum_all(p)
        }, 1e-6);
    }

    #[test]
    fn concat_slice_grads() {
        let other = rand_arr(2, 4, 12);
        check_input_grad(rand_arr(3, 4, 13), move |g, x| {
            let o = g.input_with_grad(other.clone());
            let c = g.concat_rows(&[x, o, x]);
            let cc = g.concat_cols(&[c, c]);
            let sl = g.slice_rows(cc, 1, 7);
            let sq = g.mul(sl, sl);
            g.mean_all(sq)
        }, 1e-6);
    }

    #[test]
    fn activation_grads() {
        check_input_grad(rand_arr(4, 4, 14), |g, x| {
            let a = g.sigmoid(x);
            let b = g.tanh(a);
            let c = g.leaky_relu(b, 0.2);
            let d = g.mul(c, c);
            let e = g.sqrt_positive_helper(d);
            g.mean_all(e)
        }, 1e-5);
    }

    impl Graph<f64> {
        /// shift away from 0 so the sqrt guard is not exercised by FD
        fn sqrt_positive_helper(&mut self, a: NodeId) -> NodeId {
            let ones = Array2::from_elem(self.shape(a), 0.5);
            let o = self.input(ones);
            let s = self.add(a, o);
            self.sqrt(s)
        }
    }

    #[test]
    fn detach_blocks_gradient() {
        let mut g = Graph::new();
        let x = g.input_with_grad(rand_arr(2, 2, 15));
        let d = g.detach(x);
        let y = g.mul(d, d);
        let loss = g.sum_all(y);
        let grads = g.backward(loss);
        assert!(grads.get(x).is_none());
    }

    #[test]
    fn straight_through_identity_gradient() {
        // q_st = f + detach(q - f): value is q, gradient wrt f is identity.
        let f0 = rand_arr(3, 4, 16);
        let q0 = rand_arr(3, 4, 17);
        let mut g = Graph::new();
        let f = g.input_with_grad(f0.clone());
        let q = g.input(q0.clone());
        let diff = g.sub(q, f);
        let dd = g.detach(diff);
        let st = g.add(f, dd);
        assert_eq!(g.value(st), &q0);
        let sq = g.mul(st, st);
        let loss = g.sum_all(sq);
        let grads = g.backward(loss);
        // d(sum q_st^2)/df via straight-through = 2 * q evaluated as if st = f
        let expected = q0.mapv(|v| 2.0 * v);
        let got = grads.get(f).unwrap();
        for (a, b) in got.iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn param_grads_accumulate_across_leaves() {
        let w0 = rand_arr(2, 2, 18);
        let mut g = Graph::new();
        let w1 = g.param(0, w0.clone());
        let w2 = g.param(0, w0.clone());
        let s = g.add(w1, w2);
        let sq = g.mul(s, s);
        let loss = g.sum_all(sq);
        let grads = g.backward(loss);
        let pg = g.param_grads(&grads, 1);
        let expected = w0.mapv(|v| 8.0 * v); // d/dw of sum (2w)^2 = 8w
        for (a, b) in pg[0].as_ref().unwrap().iter().zip(expected.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
