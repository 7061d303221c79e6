//! Reference propagation models: GCN, label-signed message passing, and
//! Chebyshev polynomial filters.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{HmhError, Result};
use crate::graph::{gcn_propagation, normalized_laplacian, CsrMatrix, SparseGraph};
use crate::matrix::Matrix;

use super::params::{glorot, ParamSet};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    Gcn,
    Smp,
    Cheb,
}

/// How a graph-level prediction is read from per-node outputs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    /// Node 0, the root in tree-shaped inputs.
    Root,
    #[default]
    Mean,
    Sum,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub layers: usize,
    pub hidden: usize,
    /// Polynomial order for the Chebyshev model.
    pub cheb_order: usize,
    pub dropout: f64,
    pub readout: Readout,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            layers: 2,
            hidden: 64,
            cheb_order: 2,
            dropout: 0.1,
            readout: Readout::Mean,
        }
    }
}

/// Signed adjacency `S`: `S_uv = +1` when both endpoints share a label and
/// `−1` otherwise.
pub fn label_sign_graph(g: &SparseGraph, labels: &[usize]) -> SparseGraph {
    let mut w = Vec::with_capacity(g.num_entries());
    for i in 0..g.n() {
        for &j in g.neighbors(i) {
            w.push(if labels[i] == labels[j as usize] { 1.0 } else { -1.0 });
        }
    }
    g.with_entry_weights(w)
}

/// `D^{-1/2} S D^{-1/2}`.
fn signed_propagation(g: &SparseGraph, labels: &[usize]) -> CsrMatrix {
    let s = label_sign_graph(g, labels);
    let inv: Vec<f64> = (0..g.n())
        .map(|i| if g.degree(i) > 0 { 1.0 / (g.degree(i) as f64).sqrt() } else { 0.0 })
        .collect();
    let mut row_offsets = vec![0];
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for i in 0..g.n() {
        for e in g.row_range(i) {
            let j = g.col_indices()[e] as usize;
            cols.push(j);
            vals.push(s.entry_weight(e) * inv[i] * inv[j]);
        }
        row_offsets.push(cols.len());
    }
    CsrMatrix {
        n: g.n(),
        row_offsets,
        cols,
        vals,
    }
}

/// `L − I`, the normalized Laplacian shifted onto `[−1, 1]`.
pub fn shifted_laplacian(g: &SparseGraph) -> CsrMatrix {
    let mut l = normalized_laplacian(g);
    for i in 0..l.n {
        for e in l.row_offsets[i]..l.row_offsets[i + 1] {
            if l.cols[e] == i {
                l.vals[e] -= 1.0;
            }
        }
    }
    l
}

/// Per-layer outputs of `σ(P H W)` with the GCN propagation `P`.
pub fn gcn_forward(g: &SparseGraph, x: &Matrix, weights: &[Matrix], relu: bool) -> Result<Vec<Matrix>> {
    propagate_stack(&gcn_propagation(g), x, weights, relu)
}

/// Per-layer outputs of signed propagation with label-derived signs.
pub fn smp_forward(g: &SparseGraph, x: &Matrix, labels: &[usize], weights: &[Matrix], linear: bool) -> Result<Vec<Matrix>> {
    if labels.len() != g.n() {
        return Err(HmhError::dim("smp labels", g.n(), labels.len()));
    }
    propagate_stack(&signed_propagation(g, labels), x, weights, !linear)
}

fn propagate_stack(p: &CsrMatrix, x: &Matrix, weights: &[Matrix], relu: bool) -> Result<Vec<Matrix>> {
    if x.rows() != p.n {
        return Err(HmhError::dim("propagation rows", p.n, x.rows()));
    }
    let mut h = x.clone();
    let mut out = Vec::with_capacity(weights.len());
    for (k, w) in weights.iter().enumerate() {
        if w.rows() != h.cols() {
            return Err(HmhError::dim(format!("layer {k} weight rows"), h.cols(), w.rows()));
        }
        h = p.spmm(&h.matmul(w));
        if relu {
            h = h.map(|v| v.max(0.0));
        }
        out.push(h.clone());
    }
    Ok(out)
}

/// `Σ_r θ_r T_r(L − I) X` by the three-term recurrence.
pub fn cheb_filter(g: &SparseGraph, x: &Matrix, theta: &[f64]) -> Matrix {
    let lt = shifted_laplacian(g);
    let mut out = Matrix::zeros(x.rows(), x.cols());
    let mut prev = x.clone();
    if let Some(&t0) = theta.first() {
        out.axpy(t0, &prev);
    }
    if theta.len() < 2 {
        return out;
    }
    let mut cur = lt.spmm(x);
    out.axpy(theta[1], &cur);
    for &t in &theta[2..] {
        let mut next = lt.spmm(&cur).scale(2.0);
        next.axpy(-1.0, &prev);
        out.axpy(t, &next);
        prev = cur;
        cur = next;
    }
    out
}

#[derive(Clone, Debug)]
pub struct BaselineModel {
    pub kind: BaselineKind,
    pub config: BaselineConfig,
    pub d_in: usize,
    pub num_classes: usize,
}

/// Propagation operator for one input graph.
#[derive(Clone, Debug)]
pub struct BaselinePrepared {
    pub graph: Arc<SparseGraph>,
    pub features: Matrix,
    pub op: Arc<CsrMatrix>,
}

pub struct BaselineForward {
    pub logits: Var,
    /// Input to the final layer (last hidden representation).
    pub embedding: Var,
}

impl BaselineModel {
    pub fn new(kind: BaselineKind, config: BaselineConfig, d_in: usize, num_classes: usize) -> Result<Self> {
        if config.layers == 0 {
            return Err(HmhError::Config("baseline needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(HmhError::Config(format!("dropout must lie in [0,1), got {}", config.dropout)));
        }
        Ok(BaselineModel {
            kind,
            config,
            d_in,
            num_classes,
        })
    }

    fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.d_in];
        d.extend(std::iter::repeat_n(self.config.hidden, self.config.layers - 1));
        d.push(self.num_classes);
        d
    }

    fn orders(&self) -> usize {
        match self.kind {
            BaselineKind::Cheb => self.config.cheb_order + 1,
            _ => 1,
        }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        let dims = self.dims();
        let mut p = ParamSet::new();
        for k in 0..self.config.layers {
            for r in 0..self.orders() {
                p.insert(format!("layer.{k}.w.{r}"), glorot(dims[k], dims[k + 1], rng));
            }
            p.insert(format!("layer.{k}.b"), Matrix::zeros(1, dims[k + 1]));
        }
        p
    }

    /// `labels` is required for the signed model only.
    pub fn prepare(&self, g: Arc<SparseGraph>, x: &Matrix, labels: Option<&[usize]>) -> Result<BaselinePrepared> {
        if x.cols() != self.d_in {
            return Err(HmhError::dim("model input dim", self.d_in, x.cols()));
        }
        let op = match self.kind {
            BaselineKind::Gcn => gcn_propagation(&g),
            BaselineKind::Cheb => shifted_laplacian(&g),
            BaselineKind::Smp => {
                let labels = labels.ok_or_else(|| HmhError::Config("signed baseline needs labels".into()))?;
                signed_propagation(&g, labels)
            }
        };
        Ok(BaselinePrepared {
            graph: g,
            features: x.clone(),
            op: Arc::new(op),
        })
    }

    fn layer(&self, tape: &mut Tape, params: &ParamSet, vars: &[Var], prep: &BaselinePrepared, k: usize, h: Var) -> Var {
        let w = |r: usize| vars[params.index_of(&format!("layer.{k}.w.{r}")).unwrap()];
        let b = vars[params.index_of(&format!("layer.{k}.b")).unwrap()];
        let out = match self.kind {
            BaselineKind::Gcn | BaselineKind::Smp => {
                let hw = tape.matmul(h, w(0));
                tape.spmm_const(prep.op.clone(), hw)
            }
            BaselineKind::Cheb => {
                let mut t_prev = h;
                let mut acc = tape.matmul(h, w(0));
                let mut t_cur = h;
                for r in 1..self.orders() {
                    let lt = tape.spmm_const(prep.op.clone(), t_cur);
                    let next = if r == 1 {
                        lt
                    } else {
                        let two = tape.scale(lt, 2.0);
                        let neg = tape.scale(t_prev, -1.0);
                        tape.add(two, neg)
                    };
                    let term = tape.matmul(next, w(r));
                    acc = tape.add(acc, term);
                    t_prev = t_cur;
                    t_cur = next;
                }
                acc
            }
        };
        tape.add_bias(out, b)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        vars: &[Var],
        prep: &BaselinePrepared,
        graph_readout: bool,
        mut dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<BaselineForward> {
        let mut h = tape.constant(prep.features.clone());
        let mut embedding = h;
        for k in 0..self.config.layers {
            if k + 1 == self.config.layers {
                embedding = h;
            }
            h = self.layer(tape, params, vars, prep, k, h);
            if k + 1 < self.config.layers {
                h = tape.relu(h);
                if let Some(rng) = dropout_rng.as_deref_mut() {
                    h = dropout(tape, h, self.config.dropout, rng);
                }
            }
        }
        let logits = if graph_readout { readout(tape, h, self.config.readout) } else { h };
        Ok(BaselineForward { logits, embedding })
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": self.kind,
            "d_in": self.d_in,
            "num_classes": self.num_classes,
            "config": self.config,
        })
    }
}

pub(crate) fn dropout(tape: &mut Tape, h: Var, p: f64, rng: &mut dyn rand::RngCore) -> Var {
    if p <= 0.0 {
        return h;
    }
    let (r, c) = tape.value(h).shape();
    let keep = 1.0 / (1.0 - p);
    let data = (0..r * c).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect();
    tape.mul_const(h, Matrix::from_vec(r, c, data).unwrap())
}

fn readout(tape: &mut Tape, h: Var, mode: Readout) -> Var {
    let n = tape.value(h).rows();
    match mode {
        Readout::Root => tape.gather_rows(Arc::new(vec![0]), h),
        Readout::Mean | Readout::Sum => {
            let w = if mode == Readout::Mean { 1.0 / n as f64 } else { 1.0 };
            let pool = tape.constant(Matrix::filled(n, 1, w));
            tape.matmul_tn(pool, h)
        }
    }
}
