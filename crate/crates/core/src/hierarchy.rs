//! Haar tree construction: cluster encoder scores, softly assign nodes to
//! prototypes, aggregate features and edges, repeat.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::encoder::{encoder_forward, structural_edge_scores, EncoderParams, SimilarityNorm};
use crate::error::{HmhError, Result};
use crate::graph::{NodeId, SparseGraph};
use crate::kmeans::{kmeanspp_seed, lloyd_refine};
use crate::matrix::{argmax, dot, softmax_into, sq_dist, Matrix};

/// How node-to-prototype affinities are scored before the softmax.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Affinity {
    /// `⟨z_i, p_k⟩`
    #[default]
    InnerProduct,
    /// `−‖z_i − p_k‖²`, consistent with the k-means objective.
    NegSqDistance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HierarchyConfig {
    pub ratio: f64,
    pub h_t: usize,
    pub tau: f64,
    pub seed: u64,
    pub coarsen_to_one: bool,
    pub similarity_norm: SimilarityNorm,
    pub affinity: Affinity,
    pub kmeans_max_iter: usize,
    pub kmeans_tol: f64,
}

impl Default for HierarchyConfig {
    fn default() -> Self {
        HierarchyConfig {
            ratio: 0.5,
            h_t: 10,
            tau: 1.0,
            seed: 0,
            coarsen_to_one: false,
            similarity_norm: SimilarityNorm::Softmax,
            affinity: Affinity::InnerProduct,
            kmeans_max_iter: 50,
            kmeans_tol: 1e-6,
        }
    }
}

impl HierarchyConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ratio > 0.0 && self.ratio < 1.0) {
            return Err(HmhError::InvalidParameter(format!("ratio must lie in (0,1), got {}", self.ratio)));
        }
        if self.h_t < 1 {
            return Err(HmhError::InvalidParameter("h_t must be at least 1".into()));
        }
        if !(self.tau > 0.0) {
            return Err(HmhError::InvalidParameter(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// Whether a level with `n` nodes is the last one.
    pub fn is_terminal(&self, n: usize) -> bool {
        if self.coarsen_to_one {
            n <= 1
        } else {
            n <= self.h_t
        }
    }

    /// Node count of the level below one with `n` nodes.
    pub fn next_size(&self, n: usize) -> usize {
        ((n as f64 * self.ratio).floor() as usize).max(1)
    }

    /// Level sizes predicted by the size recurrence (no cluster removal).
    pub fn nominal_sizes(&self, n: usize) -> Vec<usize> {
        let mut sizes = vec![n];
        let mut cur = n;
        while !self.is_terminal(cur) {
            cur = self.next_size(cur);
            sizes.push(cur);
        }
        sizes
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelAssignment {
    /// `n × K`, row-stochastic.
    pub soft: Matrix,
    /// Parent cluster of every node.
    pub hard: Vec<usize>,
    /// `K × d_z`.
    pub prototypes: Matrix,
    pub tau: f64,
}

impl LevelAssignment {
    pub fn num_clusters(&self) -> usize {
        self.prototypes.rows()
    }

    /// Member lists per cluster in ascending node order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_clusters()];
        for (i, &p) in self.hard.iter().enumerate() {
            out[p].push(i);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct HierarchyLevel {
    pub graph: Arc<SparseGraph>,
    pub features: Matrix,
    /// Structural similarity per stored entry of `graph`.
    pub structural: Arc<Vec<f64>>,
    /// Link to the next level; absent at the coarsest level.
    pub assignment: Option<LevelAssignment>,
    /// Encoder output used for clustering; absent at the coarsest level.
    pub encoder_scores: Option<Matrix>,
}

#[derive(Clone, Debug)]
pub struct HaarTree {
    pub levels: Vec<HierarchyLevel>,
    pub config: HierarchyConfig,
}

impl HaarTree {
    pub fn sizes(&self) -> Vec<usize> {
        self.levels.iter().map(|l| l.graph.n()).collect()
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    /// Cluster id of every level-0 node at every level (level 0 maps to itself).
    pub fn ancestors(&self) -> Vec<Vec<usize>> {
        let n0 = self.levels[0].graph.n();
        let mut cur: Vec<usize> = (0..n0).collect();
        let mut out = vec![cur.clone()];
        for level in &self.levels[..self.levels.len() - 1] {
            let hard = &level.assignment.as_ref().expect("non-terminal level has assignment").hard;
            cur = cur.iter().map(|&i| hard[i]).collect();
            out.push(cur.clone());
        }
        out
    }
}

/// Row-stochastic assignment `softmax(Ω / τ)` with `Ω` from `affinity`.
pub fn soft_assign(z: &Matrix, prototypes: &Matrix, tau: f64, affinity: Affinity) -> Result<Matrix> {
    if !(tau > 0.0) {
        return Err(HmhError::InvalidParameter(format!("tau must be positive, got {tau}")));
    }
    if z.cols() != prototypes.cols() {
        return Err(HmhError::dim("soft_assign", prototypes.cols(), z.cols()));
    }
    let k = prototypes.rows();
    let mut out = Matrix::zeros(z.rows(), k);
    let mut omega = vec![0.0; k];
    for i in 0..z.rows() {
        for (c, o) in omega.iter_mut().enumerate() {
            let raw = match affinity {
                Affinity::InnerProduct => dot(z.row(i), prototypes.row(c)),
                Affinity::NegSqDistance => -sq_dist(z.row(i), prototypes.row(c)),
            };
            *o = raw / tau;
        }
        softmax_into(&omega, out.row_mut(i));
    }
    Ok(out)
}

/// `A_sᵀ X`
pub fn aggregate_features(x: &Matrix, soft: &Matrix) -> Matrix {
    soft.matmul_tn(x)
}

/// Sums fine edge weights between distinct clusters; intra-cluster mass is dropped.
pub fn aggregate_adjacency(g: &SparseGraph, hard: &[usize], k: usize) -> Result<SparseGraph> {
    if let Some(&bad) = hard.iter().find(|&&p| p >= k) {
        return Err(HmhError::InvalidParameter(format!("parent id {bad} >= {k}")));
    }
    let mut pairs = Vec::new();
    let mut weights = Vec::new();
    for (u, v, w) in g.edges() {
        let (a, b) = (hard[u as usize], hard[v as usize]);
        if a != b {
            pairs.push((a as NodeId, b as NodeId));
            weights.push(w);
        }
    }
    SparseGraph::build(k, &pairs, Some(&weights))
}

/// Drops clusters that received no node and relabels the rest densely.
fn compact(hard: &mut [usize], prototypes: &Matrix) -> Matrix {
    let k = prototypes.rows();
    let mut used = vec![false; k];
    for &p in hard.iter() {
        used[p] = true;
    }
    let keep: Vec<usize> = (0..k).filter(|&c| used[c]).collect();
    if keep.len() == k {
        return prototypes.clone();
    }
    let mut remap = vec![usize::MAX; k];
    for (new, &old) in keep.iter().enumerate() {
        remap[old] = new;
    }
    for p in hard.iter_mut() {
        *p = remap[*p];
    }
    prototypes.select_rows(&keep)
}

/// Clusters scores `z` into (up to) `k` groups and returns the hardened assignment.
pub fn assign_level(z: &Matrix, k: usize, cfg: &HierarchyConfig, seed: u64) -> Result<LevelAssignment> {
    let init = kmeanspp_seed(z, k, seed)?;
    let refined = lloyd_refine(z, &init, cfg.kmeans_max_iter, cfg.kmeans_tol);
    let soft = soft_assign(z, &refined.centers, cfg.tau, cfg.affinity)?;
    let mut hard: Vec<usize> = (0..z.rows()).map(|i| argmax(soft.row(i))).collect();
    let prototypes = compact(&mut hard, &refined.centers);
    let soft = if prototypes.rows() == refined.centers.rows() {
        soft
    } else {
        soft_assign(z, &prototypes, cfg.tau, cfg.affinity)?
    };
    Ok(LevelAssignment {
        soft,
        hard,
        prototypes,
        tau: cfg.tau,
    })
}

/// Per-level seed so that levels draw independent k-means++ streams.
pub fn level_seed(seed: u64, level: usize) -> u64 {
    seed ^ (level as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

/// Builds the full tree. `encoders` holds one parameter set shared by all
/// levels, or one per level (the last is reused past the end).
pub fn build_hierarchy(
    g: &SparseGraph,
    x: &Matrix,
    encoders: &[EncoderParams],
    cfg: &HierarchyConfig,
) -> Result<HaarTree> {
    build_hierarchy_with(Arc::new(g.clone()), None, x, encoders, cfg)
}

/// As `build_hierarchy`, reusing a precomputed level-0 structural cache.
pub fn build_hierarchy_with(
    g: Arc<SparseGraph>,
    structural0: Option<Arc<Vec<f64>>>,
    x: &Matrix,
    encoders: &[EncoderParams],
    cfg: &HierarchyConfig,
) -> Result<HaarTree> {
    cfg.validate()?;
    if g.n() == 0 {
        return Err(HmhError::EmptyGraph);
    }
    if x.rows() != g.n() {
        return Err(HmhError::dim("hierarchy features", g.n(), x.rows()));
    }
    let mut levels = Vec::new();
    let mut graph = g;
    let mut features = x.clone();
    let mut structural = structural0.unwrap_or_else(|| Arc::new(structural_edge_scores(&graph)));
    loop {
        let ell = levels.len();
        let n = graph.n();
        if cfg.is_terminal(n) {
            levels.push(HierarchyLevel {
                graph,
                features,
                structural,
                assignment: None,
                encoder_scores: None,
            });
            break;
        }
        let enc = encoders
            .get(ell)
            .or(encoders.last())
            .ok_or_else(|| HmhError::InvalidParameter("no encoder parameters".into()))?;
        let z = encoder_forward(&graph, &features, enc, &structural, cfg.similarity_norm, true)?.z;
        let k = cfg.next_size(n);
        let assignment = assign_level(&z, k, cfg, level_seed(cfg.seed, ell))?;
        let next_features = aggregate_features(&features, &assignment.soft);
        let next_graph = aggregate_adjacency(&graph, &assignment.hard, assignment.num_clusters())?;
        let next_structural = Arc::new(structural_edge_scores(&next_graph));
        levels.push(HierarchyLevel {
            graph,
            features,
            structural,
            assignment: Some(assignment),
            encoder_scores: Some(z),
        });
        graph = Arc::new(next_graph);
        features = next_features;
        structural = next_structural;
    }
    Ok(HaarTree {
        levels,
        config: cfg.clone(),
    })
}
