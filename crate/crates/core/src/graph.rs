//! Compressed-row undirected graphs and the Laplacian utilities shared by
//! every other module.

use std::collections::VecDeque;
use std::ops::Range;

use crate::error::{HmhError, Result};
use crate::matrix::Matrix;

pub type NodeId = u32;

/// Symmetric CSR adjacency. Rows are sorted, deduplicated and free of
/// self-loops; `weights` is `None` when every edge has weight 1.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseGraph {
    n: usize,
    row_offsets: Vec<u64>,
    col_indices: Vec<NodeId>,
    weights: Option<Vec<f64>>,
}

impl SparseGraph {
    /// Canonicalizes an arbitrary edge list: symmetrizes, drops self-loops,
    /// sorts rows and sums the weights of duplicate edges.
    pub fn build(n: usize, edges: &[(NodeId, NodeId)], weights: Option<&[f64]>) -> Result<Self> {
        if let Some(w) = weights {
            if w.len() != edges.len() {
                return Err(HmhError::dim("edge weights", edges.len(), w.len()));
            }
        }
        let mut entries: Vec<(NodeId, NodeId, f64)> = Vec::with_capacity(edges.len() * 2);
        for (e, &(u, v)) in edges.iter().enumerate() {
            for node in [u, v] {
                if node as usize >= n {
                    return Err(HmhError::NodeOutOfRange {
                        node: node as u64,
                        n,
                    });
                }
            }
            let w = weights.map_or(1.0, |w| w[e]);
            if !w.is_finite() {
                return Err(HmhError::NonFiniteWeight { u, v, weight: w });
            }
            if u == v {
                continue;
            }
            // one-directional listings and explicit reverse listings both
            // collapse onto the canonical (min, max) pair
            let (a, b) = if u < v { (u, v) } else { (v, u) };
            entries.push((a, b, w));
        }
        entries.sort_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
        let mut undirected: Vec<(NodeId, NodeId, f64)> = Vec::with_capacity(entries.len());
        for (a, b, w) in entries {
            match undirected.last_mut() {
                Some(last) if last.0 == a && last.1 == b => {
                    // an edge listed in both directions is one edge, not two
                    last.2 += w;
                }
                _ => undirected.push((a, b, w)),
            }
        }
        Ok(Self::from_undirected(n, &undirected, weights.is_some()))
    }

    /// Builds from already-unique undirected pairs `(a, b, w)` with `a < b`.
    fn from_undirected(n: usize, pairs: &[(NodeId, NodeId, f64)], weighted: bool) -> Self {
        let mut degree = vec![0u64; n];
        for &(a, b, _) in pairs {
            degree[a as usize] += 1;
            degree[b as usize] += 1;
        }
        let mut row_offsets = vec![0u64; n + 1];
        for i in 0..n {
            row_offsets[i + 1] = row_offsets[i] + degree[i];
        }
        let total = row_offsets[n] as usize;
        let mut col_indices = vec![0 as NodeId; total];
        let mut w = vec![0.0; total];
        let mut cursor: Vec<u64> = row_offsets[..n].to_vec();
        // pairs are sorted by (a, b): pushing (a->b) and (b->a) in this order
        // keeps every row sorted ascending
        let mut push = |row: NodeId, col: NodeId, weight: f64| {
            let slot = cursor[row as usize] as usize;
            col_indices[slot] = col;
            w[slot] = weight;
            cursor[row as usize] += 1;
        };
        for &(a, b, weight) in pairs {
            push(b, a, weight);
        }
        for &(a, b, weight) in pairs {
            push(a, b, weight);
        }
        let mut g = SparseGraph {
            n,
            row_offsets,
            col_indices,
            weights: if weighted { Some(w) } else { None },
        };
        g.sort_rows();
        g
    }

    fn sort_rows(&mut self) {
        for i in 0..self.n {
            let r = self.row_range(i);
            let already = self.col_indices[r.clone()].windows(2).all(|p| p[0] < p[1]);
            if already {
                continue;
            }
            let mut pairs: Vec<(NodeId, f64)> = r
                .clone()
                .map(|e| (self.col_indices[e], self.weights.as_ref().map_or(1.0, |w| w[e])))
                .collect();
            pairs.sort_by_key(|p| p.0);
            for (k, e) in r.enumerate() {
                self.col_indices[e] = pairs[k].0;
                if let Some(w) = self.weights.as_mut() {
                    w[e] = pairs[k].1;
                }
            }
        }
    }

    /// Graph with `n` nodes and no edges.
    pub fn empty(n: usize) -> Self {
        SparseGraph {
            n,
            row_offsets: vec![0; n + 1],
            col_indices: Vec::new(),
            weights: None,
        }
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored (directed) entries, i.e. twice the undirected edge count.
    #[inline]
    pub fn num_entries(&self) -> usize {
        self.col_indices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    #[inline]
    pub fn row_range(&self, i: usize) -> Range<usize> {
        self.row_offsets[i] as usize..self.row_offsets[i + 1] as usize
    }

    pub fn row_offsets(&self) -> &[u64] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[NodeId] {
        &self.col_indices
    }

    #[inline]
    pub fn neighbors(&self, i: usize) -> &[NodeId] {
        &self.col_indices[self.row_range(i)]
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn is_weighted(&self) -> bool {
        self.weights.is_some()
    }

    #[inline]
    pub fn entry_weight(&self, e: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[e])
    }

    pub fn degree(&self, i: usize) -> usize {
        self.row_range(i).len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        (0..self.n).map(|i| self.degree(i)).collect()
    }

    pub fn weighted_degree(&self, i: usize) -> f64 {
        self.row_range(i).map(|e| self.entry_weight(e)).sum()
    }

    /// Position of entry `(i, j)` in `col_indices`, if present.
    pub fn find_entry(&self, i: usize, j: NodeId) -> Option<usize> {
        let r = self.row_range(i);
        self.col_indices[r.clone()]
            .binary_search(&j)
            .ok()
            .map(|k| r.start + k)
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.find_entry(i, j as NodeId).is_some()
    }

    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.find_entry(i, j as NodeId)
            .map_or(0.0, |e| self.entry_weight(e))
    }

    /// Row index of every stored entry, aligned with `col_indices`.
    pub fn entry_rows(&self) -> Vec<NodeId> {
        let mut rows = Vec::with_capacity(self.num_entries());
        for i in 0..self.n {
            rows.extend(std::iter::repeat_n(i as NodeId, self.degree(i)));
        }
        rows
    }

    /// Undirected edges `(u, v, w)` with `u < v`.
    pub fn edges(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.row_range(i).filter_map(move |e| {
                let j = self.col_indices[e];
                ((i as NodeId) < j).then(|| (i as NodeId, j, self.entry_weight(e)))
            })
        })
    }

    /// Same sparsity pattern, new entry weights (aligned with `col_indices`).
    pub fn with_entry_weights(&self, weights: Vec<f64>) -> SparseGraph {
        assert_eq!(weights.len(), self.num_entries());
        SparseGraph {
            n: self.n,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            weights: Some(weights),
        }
    }

    /// Unweighted copy of the sparsity pattern.
    pub fn pattern(&self) -> SparseGraph {
        SparseGraph {
            n: self.n,
            row_offsets: self.row_offsets.clone(),
            col_indices: self.col_indices.clone(),
            weights: None,
        }
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for e in self.row_range(i) {
                m.set(i, self.col_indices[e] as usize, self.entry_weight(e));
            }
        }
        m
    }

    /// `A · X` using the stored entry weights.
    pub fn spmm(&self, x: &Matrix) -> Matrix {
        self.spmm_with(|e| self.entry_weight(e), x)
    }

    /// `A_w · X` where entry `e` carries weight `w(e)`.
    pub fn spmm_with(&self, w: impl Fn(usize) -> f64, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.n);
        let d = x.cols();
        let mut out = Matrix::zeros(self.n, d);
        for i in 0..self.n {
            let out_row = out.row_mut(i);
            for e in self.row_range(i) {
                let we = w(e);
                if we == 0.0 {
                    continue;
                }
                let xr = x.row(self.col_indices[e] as usize);
                for (o, v) in out_row.iter_mut().zip(xr) {
                    *o += we * v;
                }
            }
        }
        out
    }

    /// Breadth-first hop distances from `source`, `usize::MAX` when unreachable.
    pub fn bfs_distances(&self, source: usize) -> Vec<usize> {
        let mut dist = vec![usize::MAX; self.n];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &v in self.neighbors(u) {
                let v = v as usize;
                if dist[v] == usize::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Connected component id per node.
    pub fn components(&self) -> Vec<usize> {
        let mut comp = vec![usize::MAX; self.n];
        let mut next = 0;
        for s in 0..self.n {
            if comp[s] != usize::MAX {
                continue;
            }
            let mut stack = vec![s];
            comp[s] = next;
            while let Some(u) = stack.pop() {
                for &v in self.neighbors(u) {
                    if comp[v as usize] == usize::MAX {
                        comp[v as usize] = next;
                        stack.push(v as usize);
                    }
                }
            }
            next += 1;
        }
        comp
    }
}

/// Nodes at shortest-path distance 1 or 2 from `i`, sorted ascending.
pub fn two_hop_set(g: &SparseGraph, i: usize) -> Vec<NodeId> {
    let mut out: Vec<NodeId> = Vec::new();
    for &j in g.neighbors(i) {
        out.push(j);
        out.extend(g.neighbors(j as usize).iter().copied().filter(|&k| k as usize != i));
    }
    out.sort_unstable();
    out.dedup();
    out
}

/// Two-hop sets for every node. Topology-only, so callers cache the result.
pub fn two_hop_sets(g: &SparseGraph) -> Vec<Vec<NodeId>> {
    // marker array instead of sort+dedup: cost is the sum of two-hop walk lengths
    let mut mark = vec![usize::MAX; g.n()];
    let mut sets = Vec::with_capacity(g.n());
    for i in 0..g.n() {
        let mut set = Vec::new();
        mark[i] = i;
        for &j in g.neighbors(i) {
            if mark[j as usize] != i {
                mark[j as usize] = i;
                set.push(j);
            }
            for &k in g.neighbors(j as usize) {
                if mark[k as usize] != i {
                    mark[k as usize] = i;
                    set.push(k);
                }
            }
        }
        set.sort_unstable();
        sets.push(set);
    }
    sets
}

/// Jaccard index of two sorted id lists; 0 when both are empty.
pub fn jaccard_sorted(a: &[NodeId], b: &[NodeId]) -> f64 {
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let (mut i, mut j, mut inter) = (0, 0, 0usize);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                inter += 1;
                i += 1;
                j += 1;
            }
        }
    }
    let union = a.len() + b.len() - inter;
    inter as f64 / union as f64
}

/// Square sparse matrix in CSR form (may carry a diagonal, unlike `SparseGraph`).
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_offsets: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    pub fn spmm(&self, x: &Matrix) -> Matrix {
        assert_eq!(x.rows(), self.n);
        let mut out = Matrix::zeros(self.n, x.cols());
        for i in 0..self.n {
            let out_row = out.row_mut(i);
            for e in self.row_offsets[i]..self.row_offsets[i + 1] {
                let v = self.vals[e];
                for (o, xv) in out_row.iter_mut().zip(x.row(self.cols[e])) {
                    *o += v * xv;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> Matrix {
        let mut m = Matrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for e in self.row_offsets[i]..self.row_offsets[i + 1] {
                m.set(i, self.cols[e], m.get(i, self.cols[e]) + self.vals[e]);
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }
}

/// `I − D^{-1/2} A D^{-1/2}` with weighted degrees. Isolated nodes keep a
/// unit diagonal and no off-diagonal entries.
pub fn normalized_laplacian(g: &SparseGraph) -> CsrMatrix {
    propagation_like(g, 1.0, -1.0, false)
}

/// GCN propagation `D̂^{-1/2}(A + I)D̂^{-1/2}` with `D̂ = D + I`.
pub fn gcn_propagation(g: &SparseGraph) -> CsrMatrix {
    propagation_like(g, 0.0, 1.0, true)
}

/// Builds `diag_const·I + off_sign·D^{-1/2} A' D^{-1/2}` where `A'` gains
/// unit self-loops when `self_loops` is set.
fn propagation_like(g: &SparseGraph, diag_const: f64, off_sign: f64, self_loops: bool) -> CsrMatrix {
    let n = g.n();
    let loop_w = if self_loops { 1.0 } else { 0.0 };
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d = g.weighted_degree(i) + loop_w;
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let mut row_offsets = Vec::with_capacity(n + 1);
    let mut cols = Vec::with_capacity(g.num_entries() + n);
    let mut vals = Vec::with_capacity(g.num_entries() + n);
    row_offsets.push(0);
    for i in 0..n {
        let isolated = g.degree(i) == 0;
        let mut diag_done = false;
        let diag_val = if self_loops {
            diag_const + off_sign * loop_w * inv_sqrt[i] * inv_sqrt[i]
        } else if isolated {
            1.0
        } else {
            diag_const
        };
        for e in g.row_range(i) {
            let j = g.col_indices()[e] as usize;
            if !diag_done && j > i {
                cols.push(i);
                vals.push(diag_val);
                diag_done = true;
            }
            cols.push(j);
            vals.push(off_sign * g.entry_weight(e) * inv_sqrt[i] * inv_sqrt[j]);
        }
        if !diag_done {
            cols.push(i);
            vals.push(diag_val);
        }
        row_offsets.push(cols.len());
    }
    CsrMatrix {
        n,
        row_offsets,
        cols,
        vals,
    }
}

/// Integer class id per node (or per graph).
#[derive(Clone, Debug, PartialEq)]
pub struct LabelVector {
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl LabelVector {
    pub fn new(labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(HmhError::InvalidParameter(format!(
                "label {bad} outside 0..{num_classes}"
            )));
        }
        Ok(LabelVector {
            labels,
            num_classes,
        })
    }

    /// Infers `num_classes` as `max + 1`.
    pub fn from_labels(labels: Vec<usize>) -> Self {
        let num_classes = labels.iter().max().map_or(0, |m| m + 1);
        LabelVector {
            labels,
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Masks {
    pub train: Vec<bool>,
    pub val: Vec<bool>,
    pub test: Vec<bool>,
}

impl Masks {
    pub fn from_indices(n: usize, train: &[usize], val: &[usize], test: &[usize]) -> Result<Self> {
        let mut masks = Masks {
            train: vec![false; n],
            val: vec![false; n],
            test: vec![false; n],
        };
        for (list, mask) in [(train, &mut masks.train), (val, &mut masks.val), (test, &mut masks.test)] {
            for &i in list {
                if i >= n {
                    return Err(HmhError::NodeOutOfRange { node: i as u64, n });
                }
                mask[i] = true;
            }
        }
        masks.validate()?;
        Ok(masks)
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..self.train.len() {
            let c = self.train[i] as u8 + self.val[i] as u8 + self.test[i] as u8;
            if c > 1 {
                return Err(HmhError::InvalidParameter(format!(
                    "node {i} appears in more than one split"
                )));
            }
        }
        Ok(())
    }

    pub fn indices(mask: &[bool]) -> Vec<usize> {
        mask.iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Node-classification dataset.
#[derive(Clone, Debug)]
pub struct NodeDataset {
    pub graph: SparseGraph,
    pub features: Matrix,
    pub labels: LabelVector,
    pub masks: Masks,
}

impl NodeDataset {
    pub fn new(graph: SparseGraph, features: Matrix, labels: LabelVector, masks: Masks) -> Result<Self> {
        let n = graph.n();
        for (what, len) in [
            ("features", features.rows()),
            ("labels", labels.len()),
            ("train mask", masks.train.len()),
            ("val mask", masks.val.len()),
            ("test mask", masks.test.len()),
        ] {
            if len != n {
                return Err(HmhError::dim(what, n, len));
            }
        }
        if !features.all_finite() {
            return Err(HmhError::NonFinite("node features".into()));
        }
        masks.validate()?;
        Ok(NodeDataset {
            graph,
            features,
            labels,
            masks,
        })
    }
}

/// One labelled graph of a graph-classification dataset.
#[derive(Clone, Debug)]
pub struct GraphSample {
    pub graph: SparseGraph,
    pub features: Matrix,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct GraphDataset {
    pub graphs: Vec<GraphSample>,
    pub num_classes: usize,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl GraphDataset {
    pub fn validate(&self) -> Result<()> {
        let d = self.graphs.first().map_or(0, |g| g.features.cols());
        for (i, s) in self.graphs.iter().enumerate() {
            if s.features.rows() != s.graph.n() {
                return Err(HmhError::dim(format!("graph {i} features"), s.graph.n(), s.features.rows()));
            }
            if s.features.cols() != d {
                return Err(HmhError::dim(format!("graph {i} feature dim"), d, s.features.cols()));
            }
            if s.label >= self.num_classes {
                return Err(HmhError::InvalidParameter(format!("graph {i} label {} out of range", s.label)));
            }
        }
        let mut seen = vec![false; self.graphs.len()];
        for &i in self.train.iter().chain(&self.val).chain(&self.test) {
            if i >= self.graphs.len() || seen[i] {
                return Err(HmhError::InvalidParameter(format!("graph split index {i} invalid or repeated")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum Dataset {
    Node(NodeDataset),
    Graph(GraphDataset),
}
