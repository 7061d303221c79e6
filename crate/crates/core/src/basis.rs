//! Sparse orthonormal Haar bases over a cluster hierarchy, and the diagonal
//! filter that rescales their coefficients.
//!
//! Level `ℓ` has `n_ℓ` columns: one scaling vector lifted from the level
//! above, `K − 1` block-constant contrasts between clusters, and
//! `Σ_k (n_k − 1)` contrasts inside clusters.

use serde::{Deserialize, Serialize};

use crate::error::{HmhError, Result};
use crate::graph::SparseGraph;
use crate::hierarchy::HaarTree;
use crate::matrix::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ColumnKind {
    Scaling,
    Inter,
    Intra { cluster: usize },
}

impl ColumnKind {
    /// Slot in a per-kind gain triple `(scaling, inter, intra)`.
    pub fn slot(self) -> usize {
        match self {
            ColumnKind::Scaling => 0,
            ColumnKind::Inter => 1,
            ColumnKind::Intra { .. } => 2,
        }
    }
}

/// Column-compressed square basis.
#[derive(Clone, Debug, PartialEq)]
pub struct HaarBasis {
    pub level: usize,
    pub n: usize,
    col_offsets: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
    pub kinds: Vec<ColumnKind>,
}

/// `m − 1` orthonormal vectors orthogonal to `√mass`. Vector `r` contrasts
/// position `r` against every later position.
pub fn helmert_chain(masses: &[f64]) -> Result<Vec<Vec<f64>>> {
    let m = masses.len();
    if let Some(bad) = masses.iter().find(|&&w| !(w > 0.0)) {
        return Err(HmhError::InvalidParameter(format!("helmert mass must be positive, got {bad}")));
    }
    let mut tails = vec![0.0; m + 1];
    for r in (0..m).rev() {
        tails[r] = tails[r + 1] + masses[r];
    }
    let mut out = Vec::with_capacity(m.saturating_sub(1));
    for r in 0..m.saturating_sub(1) {
        let (alpha, beta) = (masses[r], tails[r + 1]);
        let plus = (beta / (alpha * (alpha + beta))).sqrt();
        let minus = -(alpha / (beta * (alpha + beta))).sqrt();
        let mut v = vec![0.0; m];
        v[r] = masses[r].sqrt() * plus;
        for j in r + 1..m {
            v[j] = masses[j].sqrt() * minus;
        }
        out.push(v);
    }
    Ok(out)
}

/// Lifts a coarse scaling vector through hard parents and renormalizes.
pub fn lift_scaling(u_next: &[f64], hard: &[usize]) -> Vec<f64> {
    let mut u: Vec<f64> = hard.iter().map(|&p| u_next[p]).collect();
    let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in &mut u {
        *v /= norm;
    }
    u
}

/// `K − 1` block-constant columns orthogonal to the lifted scaling vector
/// `u_fine`. Cluster `k` carries mass `n_k · u_k²`, which is `n_k` up to a
/// common factor whenever the scaling vector is uniform.
pub fn inter_wavelets(hard: &[usize], k: usize, u_fine: &[f64]) -> Result<Vec<Vec<f64>>> {
    let mut sizes = vec![0usize; k];
    let mut level_val = vec![0.0; k];
    for (i, &p) in hard.iter().enumerate() {
        sizes[p] += 1;
        level_val[p] = u_fine[i];
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(HmhError::InvalidParameter(format!("cluster {c} is empty")));
    }
    let masses: Vec<f64> = (0..k).map(|c| sizes[c] as f64 * level_val[c] * level_val[c]).collect();
    let chain = helmert_chain(&masses)?;
    Ok(chain
        .into_iter()
        .map(|v| {
            hard.iter()
                .enumerate()
                .map(|(i, &p)| v[p] * u_fine[i] / masses[p].sqrt())
                .collect()
        })
        .collect())
}

/// Unit-mass contrasts among one cluster's members (ascending order),
/// returned as `(node, value)` lists.
pub fn intra_wavelets(members: &[usize]) -> Vec<Vec<(usize, f64)>> {
    let chain = helmert_chain(&vec![1.0; members.len()]).expect("unit masses are positive");
    chain
        .into_iter()
        .map(|v| {
            members
                .iter()
                .zip(v)
                .filter(|(_, x)| *x != 0.0)
                .map(|(&i, x)| (i, x))
                .collect()
        })
        .collect()
}

struct Builder {
    n: usize,
    col_offsets: Vec<usize>,
    rows: Vec<u32>,
    vals: Vec<f64>,
    kinds: Vec<ColumnKind>,
}

impl Builder {
    fn new(n: usize) -> Self {
        Builder {
            n,
            col_offsets: vec![0],
            rows: Vec::new(),
            vals: Vec::new(),
            kinds: Vec::new(),
        }
    }

    fn push_dense(&mut self, v: &[f64], kind: ColumnKind) {
        self.push_sparse(v.iter().copied().enumerate().filter(|(_, x)| *x != 0.0), kind);
    }

    fn push_sparse(&mut self, entries: impl IntoIterator<Item = (usize, f64)>, kind: ColumnKind) {
        for (i, x) in entries {
            self.rows.push(i as u32);
            self.vals.push(x);
        }
        self.col_offsets.push(self.rows.len());
        self.kinds.push(kind);
    }

    fn finish(self, level: usize) -> HaarBasis {
        debug_assert_eq!(self.kinds.len(), self.n);
        HaarBasis {
            level,
            n: self.n,
            col_offsets: self.col_offsets,
            rows: self.rows,
            vals: self.vals,
            kinds: self.kinds,
        }
    }
}

/// Uniform scaling column plus unit-mass contrasts over `k` supernodes.
pub fn coarsest_basis(k: usize, level: usize) -> HaarBasis {
    let mut b = Builder::new(k);
    b.push_dense(&vec![1.0 / (k as f64).sqrt(); k], ColumnKind::Scaling);
    for v in helmert_chain(&vec![1.0; k]).expect("unit masses are positive") {
        b.push_dense(&v, ColumnKind::Inter);
    }
    b.finish(level)
}

/// Basis for a level whose parents are `hard` (K clusters) given the
/// scaling vector `u_next` of the level above.
pub fn level_basis(hard: &[usize], k: usize, u_next: &[f64], level: usize) -> Result<HaarBasis> {
    let n = hard.len();
    let u = lift_scaling(u_next, hard);
    let mut b = Builder::new(n);
    b.push_dense(&u, ColumnKind::Scaling);
    for v in inter_wavelets(hard, k, &u)? {
        b.push_dense(&v, ColumnKind::Inter);
    }
    let mut members = vec![Vec::new(); k];
    for (i, &p) in hard.iter().enumerate() {
        members[p].push(i);
    }
    for (c, m) in members.iter().enumerate() {
        for col in intra_wavelets(m) {
            b.push_sparse(col, ColumnKind::Intra { cluster: c });
        }
    }
    Ok(b.finish(level))
}

/// One basis per tree level, finest first.
pub fn assemble_basis(tree: &HaarTree) -> Result<Vec<HaarBasis>> {
    let depth = tree.depth();
    let mut bases: Vec<HaarBasis> = Vec::with_capacity(depth);
    let top = depth - 1;
    bases.push(coarsest_basis(tree.levels[top].graph.n(), top));
    for ell in (0..top).rev() {
        let a = tree.levels[ell]
            .assignment
            .as_ref()
            .ok_or_else(|| HmhError::InvalidParameter(format!("level {ell} has no assignment")))?;
        let u_next = bases.last().unwrap().column_dense(0);
        bases.push(level_basis(&a.hard, a.num_clusters(), &u_next, ell)?);
    }
    bases.reverse();
    Ok(bases)
}

impl HaarBasis {
    pub fn num_columns(&self) -> usize {
        self.kinds.len()
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn column(&self, c: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.col_offsets[c]..self.col_offsets[c + 1];
        self.rows[r.clone()].iter().map(|&i| i as usize).zip(self.vals[r].iter().copied())
    }

    pub fn column_dense(&self, c: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        for (i, x) in self.column(c) {
            v[i] = x;
        }
        v
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.num_columns());
        for c in 0..self.num_columns() {
            for (i, x) in self.column(c) {
                m.set(i, c, x);
            }
        }
        m
    }

    pub fn kind_counts(&self) -> [usize; 3] {
        let mut out = [0; 3];
        for k in &self.kinds {
            out[k.slot()] += 1;
        }
        out
    }

    /// `max |UᵀU − I|`, computed from sparse column dot products.
    pub fn gram_residual(&self) -> f64 {
        let cols = self.num_columns();
        // row-wise view so that only overlapping columns are paired
        let mut by_row: Vec<Vec<(usize, f64)>> = vec![Vec::new(); self.n];
        for c in 0..cols {
            for (i, x) in self.column(c) {
                by_row[i].push((c, x));
            }
        }
        let mut worst: f64 = 0.0;
        let mut acc = vec![0.0; cols];
        let mut touched = Vec::new();
        for c in 0..cols {
            for (i, x) in self.column(c) {
                for &(c2, y) in &by_row[i] {
                    if acc[c2] == 0.0 {
                        touched.push(c2);
                    }
                    acc[c2] += x * y;
                }
            }
            for &c2 in &touched {
                let target = if c2 == c { 1.0 } else { 0.0 };
                worst = worst.max((acc[c2] - target).abs());
                acc[c2] = 0.0;
            }
            if !touched.contains(&c) {
                worst = worst.max(1.0);
            }
            touched.clear();
        }
        worst
    }

    /// `Uᵀ X`
    pub fn analysis(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.n);
        let d = x.cols();
        let mut out = Matrix::zeros(self.num_columns(), d);
        for c in 0..self.num_columns() {
            let (lo, hi) = (self.col_offsets[c], self.col_offsets[c + 1]);
            let o = out.row_mut(c);
            for e in lo..hi {
                let v = self.vals[e];
                for (a, b) in o.iter_mut().zip(x.row(self.rows[e] as usize)) {
                    *a += v * b;
                }
            }
        }
        out
    }

    /// `U C`
    pub fn synthesis(&self, coef: &Matrix) -> Matrix {
        assert_eq!(coef.rows(), self.num_columns());
        let d = coef.cols();
        let mut out = Matrix::zeros(self.n, d);
        for c in 0..self.num_columns() {
            let cr = coef.row(c);
            for e in self.col_offsets[c]..self.col_offsets[c + 1] {
                let v = self.vals[e];
                for (a, b) in out.row_mut(self.rows[e] as usize).iter_mut().zip(cr) {
                    *a += v * b;
                }
            }
        }
        out
    }

    /// `U diag(gains) Uᵀ X` in two sparse passes.
    pub fn filter(&self, gains: &[f64], x: &Matrix) -> Result<Matrix> {
        if x.rows() != self.n {
            return Err(HmhError::dim("filter rows", self.n, x.rows()));
        }
        if gains.len() != self.num_columns() {
            return Err(HmhError::dim("filter gains", self.num_columns(), gains.len()));
        }
        let mut coef = self.analysis(x);
        for (c, &g) in gains.iter().enumerate() {
            for v in coef.row_mut(c) {
                *v *= g;
            }
        }
        Ok(self.synthesis(&coef))
    }
}

/// Diagonal gains for one level.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterGains {
    pub lambda_sc: f64,
    /// One entry per wavelet column in basis order.
    pub lambda_wav: Vec<f64>,
}

impl FilterGains {
    pub fn identity(basis: &HaarBasis) -> Self {
        FilterGains {
            lambda_sc: 1.0,
            lambda_wav: vec![1.0; basis.num_columns() - 1],
        }
    }

    /// Tied gains per kind: `(scaling, inter, intra)`.
    pub fn tied(basis: &HaarBasis, sc: f64, inter: f64, intra: f64) -> Self {
        FilterGains {
            lambda_sc: sc,
            lambda_wav: basis.kinds[1..]
                .iter()
                .map(|k| if k.slot() == 1 { inter } else { intra })
                .collect(),
        }
    }

    /// Gain per basis column (scaling first).
    pub fn column_gains(&self) -> Vec<f64> {
        std::iter::once(self.lambda_sc).chain(self.lambda_wav.iter().copied()).collect()
    }
}

/// Energy fraction of `column` per hop shell around its largest-magnitude
/// entry: shells `0..=max_hops`, then one bucket for everything farther
/// (including unreachable nodes).
pub fn hop_energy_profile(g: &SparseGraph, column: &[f64], max_hops: usize) -> Result<Vec<f64>> {
    let total: f64 = column.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(HmhError::InvalidParameter("zero column has no energy profile".into()));
    }
    let center = column
        .iter()
        .enumerate()
        .fold((0, -1.0), |best, (i, v)| if v.abs() > best.1 { (i, v.abs()) } else { best })
        .0;
    let dist = g.bfs_distances(center);
    let mut out = vec![0.0; max_hops + 2];
    for (i, v) in column.iter().enumerate() {
        let shell = if dist[i] <= max_hops { dist[i] } else { max_hops + 1 };
        out[shell] += v * v / total;
    }
    Ok(out)
}
