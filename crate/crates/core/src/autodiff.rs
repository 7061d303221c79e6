//! Reverse-mode differentiation over a tape of matrix operations.
//!
//! Only the operations the models need are provided. Sparse structure
//! (graphs, bases, gather indices) is held by `Arc` so a tape can be built
//! repeatedly without copying it.

use std::sync::Arc;

use crate::basis::HaarBasis;
use crate::graph::{CsrMatrix, SparseGraph};
use crate::matrix::{logistic, softplus, Matrix};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Elementwise map applied to a raw gain parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GainMap {
    /// `logistic(θ)` in (0, 1)
    Logistic,
    /// `1 + softplus(θ)` in [1, ∞)
    OnePlusSoftplus,
}

impl GainMap {
    pub fn apply(self, theta: f64) -> f64 {
        match self {
            GainMap::Logistic => logistic(theta),
            GainMap::OnePlusSoftplus => 1.0 + softplus(theta),
        }
    }

    fn derivative(self, theta: f64) -> f64 {
        match self {
            GainMap::Logistic => {
                let s = logistic(theta);
                s * (1.0 - s)
            }
            GainMap::OnePlusSoftplus => logistic(theta),
        }
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulTn(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    MulConst(Var, Matrix),
    Relu(Var),
    Logistic(Var),
    RowSoftmax(Var),
    SumAll(Var),
    EdgeScores(Arc<SparseGraph>, Var, Var),
    EdgeSoftmax(Arc<SparseGraph>, Var),
    SpmmEdge(Arc<SparseGraph>, Var, Var),
    SpmmConst(Arc<CsrMatrix>, Var),
    GatherRows(Arc<Vec<usize>>, Var),
    HaarFilter(Arc<HaarBasis>, Var, Var),
    GainExpand(Var, Arc<Vec<(usize, GainMap)>>),
    SoftmaxCe(Var, Arc<Vec<(usize, usize)>>, Matrix),
    MeanEntropy(Var),
}

struct Node {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by `Var`; `None` where nothing flowed.
pub struct Grads(Vec<Option<Matrix>>);

impl Grads {
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.0[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed.
    pub fn get_or_zeros(&self, v: Var, like: &Matrix) -> Matrix {
        self.get(v).cloned().unwrap_or_else(|| Matrix::zeros(like.rows(), like.cols()))
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Matrix, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    /// Trainable input.
    pub fn leaf(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, true)
    }

    /// Input that receives no gradient.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMul(a, b), ng)
    }

    /// `aᵀ b`
    pub fn matmul_tn(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul_tn(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::MatMulTn(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).add(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::Add(a, b), ng)
    }

    /// Adds the `1 × d` row `bias` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let mut v = self.value(a).clone();
        let b = self.value(bias).row(0).to_vec();
        for i in 0..v.rows() {
            for (x, y) in v.row_mut(i).iter_mut().zip(&b) {
                *x += y;
            }
        }
        let ng = self.ng(a) || self.ng(bias);
        self.push(v, Op::AddBias(a, bias), ng)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).scale(s);
        let ng = self.ng(a);
        self.push(v, Op::Scale(a, s), ng)
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a).map(|x| x + s);
        let ng = self.ng(a);
        self.push(v, Op::AddScalar(a), ng)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, m: Matrix) -> Var {
        let v = self.value(a).zip_map(&m, |x, y| x * y);
        let ng = self.ng(a);
        self.push(v, Op::MulConst(a, m), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(v, Op::Relu(a), ng)
    }

    pub fn logistic(&mut self, a: Var) -> Var {
        let v = self.value(a).map(logistic);
        let ng = self.ng(a);
        self.push(v, Op::Logistic(a), ng)
    }

    pub fn row_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let mut v = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.rows() {
            crate::matrix::softmax_into(x.row(i), v.row_mut(i));
        }
        let ng = self.ng(a);
        self.push(v, Op::RowSoftmax(a), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        let ng = self.ng(a);
        self.push(v, Op::SumAll(a), ng)
    }

    /// Per stored entry `(i, j)` of `g`: `a_i + b_j`, as an `E × 1` column.
    pub fn edge_scores(&mut self, g: Arc<SparseGraph>, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        let mut out = Vec::with_capacity(g.num_entries());
        for i in 0..g.n() {
            for &j in g.neighbors(i) {
                out.push(av.get(i, 0) + bv.get(j as usize, 0));
            }
        }
        let v = Matrix::column(&out);
        let ng = self.ng(a) || self.ng(b);
        self.push(v, Op::EdgeScores(g, a, b), ng)
    }

    /// Softmax of an edge column within each row of `g`.
    pub fn edge_softmax(&mut self, g: Arc<SparseGraph>, e: Var) -> Var {
        let mut vals = self.value(e).data().to_vec();
        crate::encoder::normalize_edge_scores(&g, &mut vals, crate::encoder::SimilarityNorm::Softmax);
        let v = Matrix::column(&vals);
        let ng = self.ng(e);
        self.push(v, Op::EdgeSoftmax(g, e), ng)
    }

    /// `A_w X` where the entries of `g` take weights from the `E × 1` column `w`.
    pub fn spmm_edge(&mut self, g: Arc<SparseGraph>, w: Var, x: Var) -> Var {
        let wv = self.value(w).data();
        let v = g.spmm_with(|e| wv[e], self.value(x));
        let ng = self.ng(w) || self.ng(x);
        self.push(v, Op::SpmmEdge(g, w, x), ng)
    }

    pub fn spmm_const(&mut self, m: Arc<CsrMatrix>, x: Var) -> Var {
        let v = m.spmm(self.value(x));
        let ng = self.ng(x);
        self.push(v, Op::SpmmConst(m, x), ng)
    }

    pub fn gather_rows(&mut self, idx: Arc<Vec<usize>>, x: Var) -> Var {
        let v = self.value(x).select_rows(&idx);
        let ng = self.ng(x);
        self.push(v, Op::GatherRows(idx, x), ng)
    }

    /// `U diag(gains) Uᵀ X` with `gains` an `n_cols × 1` column.
    pub fn haar_filter(&mut self, basis: Arc<HaarBasis>, x: Var, gains: Var) -> Var {
        let v = basis
            .filter(self.value(gains).data(), self.value(x))
            .expect("haar_filter shapes");
        let ng = self.ng(x) || self.ng(gains);
        self.push(v, Op::HaarFilter(basis, x, gains), ng)
    }

    /// Column of gains: entry `c` is `map_c(θ[idx_c])`.
    pub fn gain_expand(&mut self, theta: Var, map: Arc<Vec<(usize, GainMap)>>) -> Var {
        let t = self.value(theta).data();
        let vals: Vec<f64> = map.iter().map(|&(i, f)| f.apply(t[i])).collect();
        let v = Matrix::column(&vals);
        let ng = self.ng(theta);
        self.push(v, Op::GainExpand(theta, map), ng)
    }

    /// Mean cross-entropy over `(row, class)` targets.
    pub fn softmax_ce(&mut self, logits: Var, targets: Arc<Vec<(usize, usize)>>) -> Var {
        let z = self.value(logits);
        let mut probs = Matrix::zeros(targets.len(), z.cols());
        let mut loss = 0.0;
        for (t, &(r, y)) in targets.iter().enumerate() {
            let row = z.row(r);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
            crate::matrix::softmax_into(row, probs.row_mut(t));
        }
        let v = Matrix::scalar(loss / targets.len().max(1) as f64);
        let ng = self.ng(logits);
        self.push(v, Op::SoftmaxCe(logits, targets, probs), ng)
    }

    /// Mean Shannon entropy of the rows of a row-stochastic matrix.
    pub fn mean_entropy(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let h: f64 = x.data().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
        let v = Matrix::scalar(h / x.rows().max(1) as f64);
        let ng = self.ng(a);
        self.push(v, Op::MeanEntropy(a), ng)
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Grads {
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Grads(grads)
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
        if !self.ng(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.add_assign(&g),
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let out = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, g.matmul_nt(self.value(*b)));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul_tn(g));
                }
            }
            Op::MatMulTn(a, b) => {
                if self.ng(*a) {
                    self.accumulate(grads, *a, self.value(*b).matmul_nt(g));
                }
                if self.ng(*b) {
                    self.accumulate(grads, *b, self.value(*a).matmul(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBias(a, bias) => {
                self.accumulate(grads, *a, g.clone());
                if self.ng(*bias) {
                    let s = g.col_sums();
                    self.accumulate(grads, *bias, Matrix::from_vec(1, s.len(), s).unwrap());
                }
            }
            Op::Scale(a, s) => self.accumulate(grads, *a, g.scale(*s)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::MulConst(a, m) => self.accumulate(grads, *a, g.zip_map(m, |x, y| x * y)),
            Op::Relu(a) => {
                let d = g.zip_map(self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
            Op::Logistic(a) => self.accumulate(grads, *a, g.zip_map(out, |gv, y| gv * y * (1.0 - y))),
            Op::RowSoftmax(a) => {
                let mut d = Matrix::zeros(out.rows(), out.cols());
                for i in 0..out.rows() {
                    let (y, gr) = (out.row(i), g.row(i));
                    let inner = crate::matrix::dot(y, gr);
                    for ((o, &yv), &gv) in d.row_mut(i).iter_mut().zip(y).zip(gr) {
                        *o = yv * (gv - inner);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SumAll(a) => {
                let x = self.value(*a);
                self.accumulate(grads, *a, Matrix::filled(x.rows(), x.cols(), g.value()));
            }
            Op::EdgeScores(graph, a, b) => {
                let mut da = Matrix::zeros(graph.n(), 1);
                let mut db = Matrix::zeros(graph.n(), 1);
                for i in 0..graph.n() {
                    for e in graph.row_range(i) {
                        let j = graph.col_indices()[e] as usize;
                        let ge = g.data()[e];
                        da.data_mut()[i] += ge;
                        db.data_mut()[j] += ge;
                    }
                }
                self.accumulate(grads, *a, da);
                self.accumulate(grads, *b, db);
            }
            Op::EdgeSoftmax(graph, e) => {
                let y = out.data();
                let gd = g.data();
                let mut d = vec![0.0; y.len()];
                for i in 0..graph.n() {
                    let r = graph.row_range(i);
                    let inner: f64 = r.clone().map(|k| y[k] * gd[k]).sum();
                    for k in r {
                        d[k] = y[k] * (gd[k] - inner);
                    }
                }
                self.accumulate(grads, *e, Matrix::column(&d));
            }
            Op::SpmmEdge(graph, w, x) => {
                let xv = self.value(*x);
                if self.ng(*w) {
                    let mut dw = vec![0.0; graph.num_entries()];
                    for i in 0..graph.n() {
                        for e in graph.row_range(i) {
                            let j = graph.col_indices()[e] as usize;
                            dw[e] = crate::matrix::dot(g.row(i), xv.row(j));
                        }
                    }
                    self.accumulate(grads, *w, Matrix::column(&dw));
                }
                if self.ng(*x) {
                    let wv = self.value(*w).data();
                    let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                    for i in 0..graph.n() {
                        for e in graph.row_range(i) {
                            let j = graph.col_indices()[e] as usize;
                            let we = wv[e];
                            for (o, gv) in dx.row_mut(j).iter_mut().zip(g.row(i)) {
                                *o += we * gv;
                            }
                        }
                    }
                    self.accumulate(grads, *x, dx);
                }
            }
            Op::SpmmConst(m, x) => {
                let mut dx = Matrix::zeros(m.n, g.cols());
                for i in 0..m.n {
                    for e in m.row_offsets[i]..m.row_offsets[i + 1] {
                        let v = m.vals[e];
                        for (o, gv) in dx.row_mut(m.cols[e]).iter_mut().zip(g.row(i)) {
                            *o += v * gv;
                        }
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::GatherRows(idx, x) => {
                let xv = self.value(*x);
                let mut dx = Matrix::zeros(xv.rows(), xv.cols());
                for (r, &i) in idx.iter().enumerate() {
                    for (o, gv) in dx.row_mut(i).iter_mut().zip(g.row(r)) {
                        *o += gv;
                    }
                }
                self.accumulate(grads, *x, dx);
            }
            Op::HaarFilter(basis, x, gains) => {
                let gain_vals = self.value(*gains).data();
                let back = basis.analysis(g);
                if self.ng(*x) {
                    let mut scaled = back.clone();
                    for (c, &l) in gain_vals.iter().enumerate() {
                        for v in scaled.row_mut(c) {
                            *v *= l;
                        }
                    }
                    self.accumulate(grads, *x, basis.synthesis(&scaled));
                }
                if self.ng(*gains) {
                    let coef = basis.analysis(self.value(*x));
                    let dl: Vec<f64> = (0..coef.rows())
                        .map(|c| crate::matrix::dot(coef.row(c), back.row(c)))
                        .collect();
                    self.accumulate(grads, *gains, Matrix::column(&dl));
                }
            }
            Op::GainExpand(theta, map) => {
                let t = self.value(*theta);
                let mut dt = Matrix::zeros(t.rows(), t.cols());
                for (c, &(i, f)) in map.iter().enumerate() {
                    dt.data_mut()[i] += g.data()[c] * f.derivative(t.data()[i]);
                }
                self.accumulate(grads, *theta, dt);
            }
            Op::SoftmaxCe(logits, targets, probs) => {
                let z = self.value(*logits);
                let mut d = Matrix::zeros(z.rows(), z.cols());
                let scale = g.value() / targets.len().max(1) as f64;
                for (t, &(r, y)) in targets.iter().enumerate() {
                    let row = d.row_mut(r);
                    for (o, p) in row.iter_mut().zip(probs.row(t)) {
                        *o += scale * p;
                    }
                    row[y] -= scale;
                }
                self.accumulate(grads, *logits, d);
            }
            Op::MeanEntropy(a) => {
                let x = self.value(*a);
                let scale = -g.value() / x.rows().max(1) as f64;
                let d = x.map(|p| if p > 0.0 { scale * (p.ln() + 1.0) } else { 0.0 });
                self.accumulate(grads, *a, d);
            }
        }
    }
}
