//! Signed adaptive encoder.
//!
//! Each layer scores every edge by a feature term (logistic of a linear
//! function of both endpoint embeddings) plus a structural term (Jaccard
//! overlap of two-hop sets), normalizes the scores, and maps them to signed
//! weights in `[-1, 1]` before propagating.

use serde::{Deserialize, Serialize};

use crate::error::{HmhError, Result};
use crate::graph::{jaccard_sorted, two_hop_sets, SparseGraph};
use crate::matrix::{dot, logistic, Matrix};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimilarityNorm {
    /// Per-row softmax over the neighborhood.
    #[default]
    Softmax,
    /// Independent logistic per edge, no row normalization.
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer {
    /// Length `2·d_in`: first half scores the source row, second half the target.
    pub w_att: Vec<f64>,
    /// `d_in × d_out`.
    pub w: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<EncoderLayer>,
}

impl EncoderParams {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.rows())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.cols())
    }

    pub fn validate(&self) -> Result<()> {
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.w_att.len() != 2 * layer.w.rows() {
                return Err(HmhError::dim(format!("encoder layer {k} w_att"), 2 * layer.w.rows(), layer.w_att.len()));
            }
            if k > 0 && self.layers[k - 1].w.cols() != layer.w.rows() {
                return Err(HmhError::dim(format!("encoder layer {k} input"), self.layers[k - 1].w.cols(), layer.w.rows()));
            }
            if !layer.w.all_finite() || layer.w_att.iter().any(|v| !v.is_finite()) {
                return Err(HmhError::NonFinite(format!("encoder layer {k} weights")));
            }
        }
        Ok(())
    }
}

/// Per-edge values aligned with a host graph's `col_indices`.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeSimilarity {
    pub values: Vec<f64>,
}

/// `logistic(w_attᵀ [h_i ‖ h_j])`
pub fn feature_affinity(h_i: &[f64], h_j: &[f64], w_att: &[f64]) -> Result<f64> {
    if w_att.len() != h_i.len() + h_j.len() {
        return Err(HmhError::dim("feature_affinity", h_i.len() + h_j.len(), w_att.len()));
    }
    let (a, b) = w_att.split_at(h_i.len());
    Ok(logistic(dot(a, h_i) + dot(b, h_j)))
}

/// Jaccard overlap of the two-hop sets of `i` and `j`.
pub fn structural_similarity(g: &SparseGraph, i: usize, j: usize) -> f64 {
    let a = crate::graph::two_hop_set(g, i);
    let b = crate::graph::two_hop_set(g, j);
    jaccard_sorted(&a, &b)
}

/// Structural term for every stored entry. Depends on topology only, so a
/// level computes it once and reuses it across layers and epochs.
pub fn structural_edge_scores(g: &SparseGraph) -> Vec<f64> {
    let words = g.n().div_ceil(64);
    // dense bitsets win once neighborhoods get large; cap their memory at 64 MiB
    if g.n() > 0 && words * g.n() * 8 <= 64 << 20 && g.num_entries() > 16 * g.n() {
        return structural_edge_scores_bitset(g, words);
    }
    let sets = two_hop_sets(g);
    let mut out = Vec::with_capacity(g.num_entries());
    for i in 0..g.n() {
        for &j in g.neighbors(i) {
            out.push(jaccard_sorted(&sets[i], &sets[j as usize]));
        }
    }
    out
}

fn structural_edge_scores_bitset(g: &SparseGraph, words: usize) -> Vec<f64> {
    let n = g.n();
    let mut adj = vec![0u64; n * words];
    for i in 0..n {
        for &j in g.neighbors(i) {
            adj[i * words + j as usize / 64] |= 1 << (j % 64);
        }
    }
    let mut hop2 = vec![0u64; n * words];
    for i in 0..n {
        let (dst, _) = hop2.split_at_mut((i + 1) * words);
        let dst = &mut dst[i * words..];
        dst.copy_from_slice(&adj[i * words..(i + 1) * words]);
        for &j in g.neighbors(i) {
            let src = &adj[j as usize * words..(j as usize + 1) * words];
            for (d, s) in dst.iter_mut().zip(src) {
                *d |= s;
            }
        }
        dst[i / 64] &= !(1 << (i % 64));
    }
    let mut out = Vec::with_capacity(g.num_entries());
    for i in 0..n {
        let a = &hop2[i * words..(i + 1) * words];
        for &j in g.neighbors(i) {
            let b = &hop2[j as usize * words..(j as usize + 1) * words];
            let (mut inter, mut union) = (0u32, 0u32);
            for (x, y) in a.iter().zip(b) {
                inter += (x & y).count_ones();
                union += (x | y).count_ones();
            }
            out.push(if union == 0 { 0.0 } else { inter as f64 / union as f64 });
        }
    }
    out
}

/// Normalizes raw edge scores in place according to `mode`.
pub fn normalize_edge_scores(g: &SparseGraph, raw: &mut [f64], mode: SimilarityNorm) {
    match mode {
        SimilarityNorm::Softmax => {
            for i in 0..g.n() {
                let r = g.row_range(i);
                if r.is_empty() {
                    continue;
                }
                let row = &mut raw[r];
                let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - m).exp();
                    z += *v;
                }
                for v in row.iter_mut() {
                    *v /= z;
                }
            }
        }
        SimilarityNorm::Sigmoid => {
            for v in raw.iter_mut() {
                // raw scores lie in (0, 2); clamp keeps the open interval under rounding
                *v = logistic(*v).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
            }
        }
    }
}

/// Normalized similarity `S̃` for one layer.
pub fn combined_similarity(
    g: &SparseGraph,
    h: &Matrix,
    w_att: &[f64],
    structural: &[f64],
    mode: SimilarityNorm,
) -> Result<EdgeSimilarity> {
    if h.rows() != g.n() {
        return Err(HmhError::dim("combined_similarity rows", g.n(), h.rows()));
    }
    if w_att.len() != 2 * h.cols() {
        return Err(HmhError::dim("combined_similarity w_att", 2 * h.cols(), w_att.len()));
    }
    if !h.all_finite() {
        return Err(HmhError::NonFinite("encoder input".into()));
    }
    let (wa, wb) = w_att.split_at(h.cols());
    let a: Vec<f64> = (0..g.n()).map(|i| dot(wa, h.row(i))).collect();
    let b: Vec<f64> = (0..g.n()).map(|i| dot(wb, h.row(i))).collect();
    let mut raw = Vec::with_capacity(g.num_entries());
    for i in 0..g.n() {
        for e in g.row_range(i) {
            let j = g.col_indices()[e] as usize;
            raw.push(logistic(a[i] + b[j]) + structural[e]);
        }
    }
    normalize_edge_scores(g, &mut raw, mode);
    Ok(EdgeSimilarity { values: raw })
}

/// Signed adjacency with weight `2·S̃ − 1` on every edge.
pub fn adaptive_adjacency(sim: &EdgeSimilarity, g: &SparseGraph) -> SparseGraph {
    g.with_entry_weights(sim.values.iter().map(|s| 2.0 * s - 1.0).collect())
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    pub z: Matrix,
    pub adjacencies: Vec<SparseGraph>,
}

/// Runs every layer, recomputing similarities from the current embedding.
/// `activation = false` gives the linear variant used by the sign-flip test.
pub fn encoder_forward(
    g: &SparseGraph,
    x: &Matrix,
    params: &EncoderParams,
    structural: &[f64],
    mode: SimilarityNorm,
    activation: bool,
) -> Result<EncoderOutput> {
    params.validate()?;
    if x.cols() != params.input_dim() && !params.layers.is_empty() {
        return Err(HmhError::dim("encoder input dim", params.input_dim(), x.cols()));
    }
    let mut z = x.clone();
    let mut adjacencies = Vec::with_capacity(params.layers.len());
    for (k, layer) in params.layers.iter().enumerate() {
        let sim = combined_similarity(g, &z, &layer.w_att, structural, mode)
            .map_err(|e| HmhError::NonFinite(format!("encoder layer {k}: {e}")))?;
        let adp = adaptive_adjacency(&sim, g);
        let mut next = adp.spmm(&z.matmul(&layer.w));
        if activation {
            next = next.map(|v| v.max(0.0));
        }
        if !next.all_finite() {
            return Err(HmhError::NonFinite(format!("encoder layer {k} output")));
        }
        adjacencies.push(adp);
        z = next;
    }
    Ok(EncoderOutput { z, adjacencies })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path5() -> SparseGraph {
        SparseGraph::build(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], None).unwrap()
    }

    #[test]
    fn affinity_examples() {
        assert_eq!(feature_affinity(&[3.0], &[-2.0], &[0.0, 0.0]).unwrap(), 0.5);
        let v = feature_affinity(&[1.0], &[0.0], &[1.0, 1.0]).unwrap();
        assert!((v - 1.0 / (1.0 + (-1.0f64).exp())).abs() < 1e-15);
        let s = feature_affinity(&[-1e6], &[5.0], &[1.0, 0.0]).unwrap();
        assert!(s.is_finite() && (0.0..1.0).contains(&s));
        assert!(feature_affinity(&[1.0], &[1.0], &[1.0]).is_err());
    }

    #[test]
    fn structural_on_path() {
        let g = path5();
        // N2(b) = {a,c,d}, N2(d) = {b,c,e}: one shared of five
        assert!((structural_similarity(&g, 1, 3) - 0.2).abs() < 1e-15);
        let k3 = SparseGraph::build(3, &[(0, 1), (1, 2), (0, 2)], None).unwrap();
        // N2(0) = {1,2}, N2(1) = {0,2}
        assert!((structural_similarity(&k3, 0, 1) - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_rows() {
        let g = SparseGraph::build(3, &[(0, 1), (0, 2)], None).unwrap();
        let mut raw = vec![1.0, 0.0, 5.0, 7.0];
        normalize_edge_scores(&g, &mut raw, SimilarityNorm::Softmax);
        assert!((raw[0] - logistic(1.0)).abs() < 1e-12);
        assert!((raw[1] - logistic(-1.0)).abs() < 1e-12);
        assert_eq!(raw[2], 1.0);
        assert_eq!(raw[3], 1.0);
    }

    #[test]
    fn equal_scores_split_evenly() {
        let g = SparseGraph::build(3, &[(0, 1), (0, 2)], None).unwrap();
        let h = Matrix::from_rows(&[vec![1.0], vec![2.0], vec![2.0]]);
        let s = combined_similarity(&g, &h, &[0.3, 0.7], &[0.0; 4], SimilarityNorm::Softmax).unwrap();
        assert!((s.values[0] - 0.5).abs() < 1e-15 && (s.values[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn adaptive_weights_affine() {
        let g = SparseGraph::build(4, &[(0, 1), (2, 3)], None).unwrap();
        let sim = EdgeSimilarity {
            values: vec![0.5, 1.0, 0.25, 0.75],
        };
        let a = adaptive_adjacency(&sim, &g);
        assert_eq!(a.weights().unwrap(), &[0.0, 1.0, -0.5, 0.5]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let g = path5();
        let x = Matrix::filled(5, 2, 1.5);
        let params = EncoderParams {
            layers: vec![EncoderLayer {
                w_att: vec![0.1; 4],
                w: Matrix::zeros(2, 3),
            }],
        };
        let st = structural_edge_scores(&g);
        let out = encoder_forward(&g, &x, &params, &st, SimilarityNorm::Softmax, true).unwrap();
        assert_eq!(out.z, Matrix::zeros(5, 3));
    }

    #[test]
    fn edgeless_graph_zero_output() {
        let g = SparseGraph::empty(3);
        let x = Matrix::filled(3, 1, 2.0);
        let params = EncoderParams {
            layers: vec![EncoderLayer {
                w_att: vec![1.0, 1.0],
                w: Matrix::identity(1),
            }],
        };
        let out = encoder_forward(&g, &x, &params, &[], SimilarityNorm::Softmax, true).unwrap();
        assert_eq!(out.z, Matrix::zeros(3, 1));
    }

    #[test]
    fn two_node_dense_oracle() {
        let g = SparseGraph::build(2, &[(0, 1)], None).unwrap();
        let x = Matrix::from_rows(&[vec![0.7], vec![-1.3]]);
        let params = EncoderParams {
            layers: vec![EncoderLayer {
                w_att: vec![0.4, -0.2],
                w: Matrix::identity(1),
            }],
        };
        let st = structural_edge_scores(&g);
        let out = encoder_forward(&g, &x, &params, &st, SimilarityNorm::Sigmoid, false).unwrap();
        // two-hop sets {1} and {0} are disjoint: structural term 0
        let s01 = logistic(logistic(0.4 * 0.7 - 0.2 * -1.3));
        let s10 = logistic(logistic(0.4 * -1.3 - 0.2 * 0.7));
        assert!((out.z.get(0, 0) - (2.0 * s01 - 1.0) * -1.3).abs() < 1e-14);
        assert!((out.z.get(1, 0) - (2.0 * s10 - 1.0) * 0.7).abs() < 1e-14);
    }

    #[test]
    fn bitset_and_merge_paths_agree() {
        let mut edges = Vec::new();
        for i in 0..70u32 {
            for j in (i + 1)..70 {
                if (i * 7 + j * 13) % 5 < 2 {
                    edges.push((i, j));
                }
            }
        }
        let g = SparseGraph::build(70, &edges, None).unwrap();
        let sets = two_hop_sets(&g);
        let merged: Vec<f64> = (0..g.n())
            .flat_map(|i| g.neighbors(i).iter().map(|&j| jaccard_sorted(&sets[i], &sets[j as usize])).collect::<Vec<_>>())
            .collect();
        let bits = structural_edge_scores_bitset(&g, 2);
        assert_eq!(merged.len(), bits.len());
        for (a, b) in merged.iter().zip(&bits) {
            assert!((a - b).abs() < 1e-15);
        }
    }
}
