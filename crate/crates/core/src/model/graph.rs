//! Reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records every operation as a node. Parameter nodes borrow
//! their value from a [`ParamStore`]; after [`Graph::backward`] the
//! gradient of each parameter that took part in the computation is
//! accumulated into a [`Gradients`] buffer.

use super::matrix::{dot, Matrix};
use super::params::ParamStore;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

enum Op {
    Input,
    Param(usize),
    MatMul(NodeId, NodeId),
    MatMulBt(NodeId, NodeId),
    Add(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    MulRow(NodeId, NodeId),
    Scale(NodeId, f64),
    CausalMask(NodeId),
    Softmax(NodeId),
    LayerNorm { x: NodeId, inv_std: Vec<f64> },
    Gelu(NodeId),
    Gather { table: NodeId, ids: Vec<usize> },
    ColSlice { x: NodeId, start: usize },
    ConcatCols(Vec<NodeId>),
    MeanRows(NodeId),
    BroadcastRows(NodeId),
    ScaleByEntry { x: NodeId, s: NodeId, col: usize },
    CrossEntropy { logits: NodeId, targets: Vec<usize>, weights: Vec<f64>, probs: Matrix },
}

enum Value {
    Owned(Matrix),
    Param(usize),
}

struct Node {
    value: Value,
    op: Op,
}

/// Per-parameter gradient buffers aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub tensors: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Gradients {
            tensors: store.tensors().iter().map(|t| Matrix::zeros(t.rows(), t.cols())).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v *= s;
            }
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.iter().map(Matrix::sq_norm).sum::<f64>().sqrt()
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        match &self.nodes[id.0].value {
            Value::Owned(m) => m,
            Value::Param(i) => &self.params.tensors()[*i],
        }
    }

    fn push(&mut self, value: Matrix, op: Op) -> NodeId {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn input(&mut self, m: Matrix) -> NodeId {
        self.push(m, Op::Input)
    }

    pub fn param(&mut self, index: usize) -> NodeId {
        self.nodes.push(Node {
            value: Value::Param(index),
            op: Op::Param(index),
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_bt(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = self.value(a).matmul_bt(self.value(b));
        self.push(v, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds a `1 × cols` row to every row of `a`.
    pub fn add_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((1, v.cols()), r.shape(), "add_row shape");
        for i in 0..v.rows() {
            for (x, b) in v.row_mut(i).iter_mut().zip(r.data()) {
                *x += b;
            }
        }
        self.push(v, Op::AddRow(a, row))
    }

    /// Multiplies every row of `a` elementwise by a `1 × cols` row.
    pub fn mul_row(&mut self, a: NodeId, row: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((1, v.cols()), r.shape(), "mul_row shape");
        for i in 0..v.rows() {
            for (x, g) in v.row_mut(i).iter_mut().zip(r.data()) {
                *x *= g;
            }
        }
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: NodeId, s: f64) -> NodeId {
        let v = self.value(a).scale(s);
        self.push(v, Op::Scale(a, s))
    }

    /// Row-wise softmax. Entries equal to `-inf` receive probability 0.
    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            let p = super::matrix::softmax(x.row(i));
            v.row_mut(i).copy_from_slice(&p);
        }
        self.push(v, Op::Softmax(a))
    }

    /// Sets entries above the diagonal to `-inf`; only kept entries pass gradient.
    pub fn causal_mask(&mut self, a: NodeId) -> NodeId {
        let mut v = self.value(a).clone();
        for i in 0..v.rows() {
            for j in (i + 1)..v.cols() {
                v.set(i, j, f64::NEG_INFINITY);
            }
        }
        self.push(v, Op::CausalMask(a))
    }

    /// Row-wise normalization to zero mean and unit variance (no affine).
    pub fn layer_norm(&mut self, a: NodeId, eps: f64) -> NodeId {
        let x = self.value(a);
        let n = x.cols() as f64;
        let mut v = Matrix::zeros(x.rows(), x.cols());
        let mut inv_std = Vec::with_capacity(x.rows());
        for i in 0..x.rows() {
            let row = x.row(i);
            let mean = row.iter().sum::<f64>() / n;
            let var = row.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            for (o, r) in v.row_mut(i).iter_mut().zip(row) {
                *o = (r - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(v, Op::LayerNorm { x: a, inv_std })
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh()));
        self.push(v, Op::Gelu(a))
    }

    /// Selects rows of `table` by index.
    pub fn gather(&mut self, table: NodeId, ids: &[usize]) -> NodeId {
        let t = self.value(table);
        let mut v = Matrix::zeros(ids.len(), t.cols());
        for (i, &id) in ids.iter().enumerate() {
            v.row_mut(i).copy_from_slice(t.row(id));
        }
        self.push(v, Op::Gather { table, ids: ids.to_vec() })
    }

    pub fn col_slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let x = self.value(a);
        let mut v = Matrix::zeros(x.rows(), len);
        for i in 0..x.rows() {
            v.row_mut(i).copy_from_slice(&x.row(i)[start..start + len]);
        }
        self.push(v, Op::ColSlice { x: a, start })
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let rows = self.value(parts[0]).rows();
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut v = Matrix::zeros(rows, cols);
        for i in 0..rows {
            let mut off = 0;
            for &p in parts {
                let m = self.value(p);
                v.row_mut(i)[off..off + m.cols()].copy_from_slice(m.row(i));
                off += m.cols();
            }
        }
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    pub fn mean_rows(&mut self, a: NodeId) -> NodeId {
        let x = self.value(a);
        let mut v = Matrix::zeros(1, x.cols());
        for i in 0..x.rows() {
            for (o, r) in v.row_mut(0).iter_mut().zip(x.row(i)) {
                *o += r;
            }
        }
        let n = x.rows() as f64;
        let v = v.scale(1.0 / n);
        self.push(v, Op::MeanRows(a))
    }

    /// Repeats a single row `n` times.
    pub fn broadcast_rows(&mut self, a: NodeId, n: usize) -> NodeId {
        let x = self.value(a);
        assert_eq!(x.rows(), 1, "broadcast_rows expects a single row");
        let mut v = Matrix::zeros(n, x.cols());
        for i in 0..n {
            v.row_mut(i).copy_from_slice(x.row(0));
        }
        self.push(v, Op::BroadcastRows(a))
    }

    /// `s[0, col] · x`
    pub fn scale_by_entry(&mut self, x: NodeId, s: NodeId, col: usize) -> NodeId {
        let k = self.value(s).get(0, col);
        let v = self.value(x).scale(k);
        self.push(v, Op::ScaleByEntry { x, s, col })
    }

    /// Weighted mean negative log-likelihood of `targets` under row-wise
    /// softmax of `logits`: `Σ w_i · (−log p_i[t_i]) / Σ w_i`.
    pub fn cross_entropy(&mut self, logits: NodeId, targets: &[usize], weights: &[f64]) -> NodeId {
        let l = self.value(logits);
        assert_eq!(l.rows(), targets.len());
        assert_eq!(targets.len(), weights.len());
        let total: f64 = weights.iter().sum();
        let mut probs = Matrix::zeros(l.rows(), l.cols());
        let mut loss = 0.0;
        for i in 0..l.rows() {
            let lp = super::matrix::log_softmax(l.row(i));
            loss -= weights[i] * lp[targets[i]];
            for (p, x) in probs.row_mut(i).iter_mut().zip(&lp) {
                *p = x.exp();
            }
        }
        let v = Matrix::from_vec(1, 1, vec![loss / total]);
        let weights = weights.iter().map(|w| w / total).collect();
        self.push(
            v,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
            },
        )
    }

    /// Backpropagates from a `1 × 1` node and returns parameter gradients.
    pub fn backward(&self, root: NodeId) -> Gradients {
        let mut out = Gradients::zeros_like(self.params);
        self.backward_into(root, &mut out);
        out
    }

    pub fn backward_into(&self, root: NodeId, out: &mut Gradients) {
        assert_eq!(self.value(root).shape(), (1, 1), "backward from a non-scalar");
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Matrix::filled(1, 1, 1.0));

        fn acc(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
            match &mut grads[id.0] {
                Some(existing) => existing.add_assign(&g),
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Input => {}
                Op::Param(p) => out.tensors[*p].add_assign(&g),
                Op::MatMul(a, b) => {
                    let ga = g.matmul_bt(self.value(*b));
                    let gb = self.value(*a).matmul_at(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    // y = a bᵀ: da = g b, db = gᵀ a
                    let ga = g.matmul(self.value(*b));
                    let gb = g.matmul_at(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let mut gr = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, x) in gr.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let x = self.value(*a);
                    let r = self.value(*row);
                    let mut gr = Matrix::zeros(1, g.cols());
                    let mut ga = g.clone();
                    for i in 0..g.rows() {
                        for j in 0..g.cols() {
                            gr.data_mut()[j] += g.get(i, j) * x.get(i, j);
                            ga.set(i, j, g.get(i, j) * r.get(0, j));
                        }
                    }
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, ga);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g.scale(*s)),
                Op::CausalMask(a) => {
                    let mut ga = g;
                    for i in 0..ga.rows() {
                        for j in (i + 1)..ga.cols() {
                            ga.set(i, j, 0.0);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = self.value(NodeId(idx));
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for i in 0..g.rows() {
                        let s = dot(g.row(i), y.row(i));
                        for ((o, gy), yy) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(y.row(i)) {
                            *o = yy * (gy - s);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, inv_std } => {
                    let xhat = self.value(NodeId(idx));
                    let n = g.cols() as f64;
                    let mut ga = Matrix::zeros(g.rows(), g.cols());
                    for (i, &s) in inv_std.iter().enumerate() {
                        let gsum: f64 = g.row(i).iter().sum();
                        let gx: f64 = dot(g.row(i), xhat.row(i));
                        for ((o, gy), xh) in ga.row_mut(i).iter_mut().zip(g.row(i)).zip(xhat.row(i)) {
                            *o = s / n * (n * gy - gsum - xh * gx);
                        }
                    }
                    acc(&mut grads, *x, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut ga = g.clone();
                    for (o, &xv) in ga.data_mut().iter_mut().zip(x.data()) {
                        let u = GELU_C * (xv + GELU_A * xv * xv * xv);
                        let t = u.tanh();
                        let d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * xv * xv);
                        *o *= d;
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Gather { table, ids } => {
                    let t = self.value(*table);
                    let mut gt = Matrix::zeros(t.rows(), t.cols());
                    for (i, &id) in ids.iter().enumerate() {
                        for (o, x) in gt.row_mut(id).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *table, gt);
                }
                Op::ColSlice { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows(), xv.cols());
                    for i in 0..g.rows() {
                        gx.row_mut(i)[*start..*start + g.cols()].copy_from_slice(g.row(i));
                    }
                    acc(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let c = self.value(p).cols();
                        let mut gp = Matrix::zeros(g.rows(), c);
                        for i in 0..g.rows() {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[off..off + c]);
                        }
                        off += c;
                        acc(&mut grads, p, gp);
                    }
                }
                Op::MeanRows(a) => {
                    let n = self.value(*a).rows();
                    let mut ga = Matrix::zeros(n, g.cols());
                    let gs = g.scale(1.0 / n as f64);
                    for i in 0..n {
                        ga.row_mut(i).copy_from_slice(gs.row(0));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::BroadcastRows(a) => {
                    let mut ga = Matrix::zeros(1, g.cols());
                    for i in 0..g.rows() {
                        for (o, x) in ga.row_mut(0).iter_mut().zip(g.row(i)) {
                            *o += x;
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ScaleByEntry { x, s, col } => {
                    let sv = self.value(*s);
                    let k = sv.get(0, *col);
                    let mut gs = Matrix::zeros(sv.rows(), sv.cols());
                    gs.set(0, *col, dot(g.data(), self.value(*x).data()));
                    acc(&mut grads, *s, gs);
                    acc(&mut grads, *x, g.scale(k));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let up = g.get(0, 0);
                    let mut gl = probs.clone();
                    for i in 0..gl.rows() {
                        let w = weights[i] * up;
                        for v in gl.row_mut(i) {
                            *v *= w;
                        }
                        let t = targets[i];
                        gl.set(i, t, gl.get(i, t) - w);
                    }
                    acc(&mut grads, *logits, gl);
                }
            }
        }
    }
}
