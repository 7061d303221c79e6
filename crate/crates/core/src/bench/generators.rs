//! Seeded synthetic datasets: hub-and-spoke graphs, tree key matching, and
//! stochastic block models.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HmhError, Result};
use crate::graph::{GraphDataset, GraphSample, LabelVector, Masks, NodeDataset, NodeId, SparseGraph};
use crate::matrix::Matrix;

/// Per-class random split; every class with at least three members gets at
/// least one node in each split.
pub fn stratified_split(labels: &[usize], train_frac: f64, val_frac: f64, rng: &mut impl Rng) -> Result<Masks> {
    if !(train_frac > 0.0 && val_frac >= 0.0 && train_frac + val_frac < 1.0) {
        return Err(HmhError::InvalidParameter(format!(
            "split fractions ({train_frac}, {val_frac}) must be positive and sum below 1"
        )));
    }
    let num_classes = labels.iter().max().map_or(0, |m| m + 1);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for c in 0..num_classes {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).collect();
        members.shuffle(rng);
        let m = members.len();
        let mut nt = ((m as f64) * train_frac).round() as usize;
        let mut nv = ((m as f64) * val_frac).round() as usize;
        if m >= 3 {
            nt = nt.clamp(1, m - 2);
            nv = nv.clamp(1, m - nt - 1);
        } else {
            nt = nt.min(m);
            nv = nv.min(m - nt);
        }
        train.extend_from_slice(&members[..nt]);
        val.extend_from_slice(&members[nt..nt + nv]);
        test.extend_from_slice(&members[nt + nv..]);
    }
    Masks::from_indices(labels.len(), &train, &val, &test)
}

fn bernoulli_edges(rng: &mut impl Rng, edges: &mut Vec<(NodeId, NodeId)>, us: &[usize], vs: &[usize], p: f64, same: bool) {
    for (a, &u) in us.iter().enumerate() {
        let start = if same { a + 1 } else { 0 };
        for &v in &vs[start..] {
            if rng.random::<f64>() < p {
                edges.push((u as NodeId, v as NodeId));
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HubSpokeConfig {
    pub a: usize,
    pub b: usize,
    pub m: usize,
    pub kappa: f64,
    pub d: usize,
    pub p_intra: f64,
    pub p_spoke_hub: f64,
    /// Gaussian perturbation scale applied before renormalising features.
    pub noise: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for HubSpokeConfig {
    fn default() -> Self {
        HubSpokeConfig {
            a: 10,
            b: 10,
            m: 200,
            kappa: 0.8,
            d: 8,
            p_intra: 0.1,
            p_spoke_hub: 0.02,
            noise: 0.6,
            train_frac: 0.4,
            val_frac: 0.2,
            seed: 0,
        }
    }
}

impl HubSpokeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HmhError::InvalidParameter(m));
        if self.a == 0 || self.b == 0 {
            return bad("spoke groups must be non-empty".into());
        }
        if self.m < 5 * (self.a + self.b) {
            return bad(format!("hub size {} must be at least 5(a+b) = {}", self.m, 5 * (self.a + self.b)));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return bad(format!("kappa must lie in (0,1), got {}", self.kappa));
        }
        if self.d < 3 {
            return bad(format!("signed margins need d ≥ 3, got {}", self.d));
        }
        for (name, p) in [("p_intra", self.p_intra), ("p_spoke_hub", self.p_spoke_hub)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0,1], got {p}"));
            }
        }
        if !(self.noise >= 0.0) {
            return bad(format!("noise must be non-negative, got {}", self.noise));
        }
        Ok(())
    }
}

/// Unit class means: the hub along `e0`, the spokes at `−κ e0 ± √(1−κ²) e1`.
/// Spoke–hub products are exactly `−κ`; the spoke–spoke product is
/// `2κ² − 1`, the most negative value compatible with the other two.
pub fn margin_means(kappa: f64, d: usize) -> [Vec<f64>; 3] {
    let s = (1.0 - kappa * kappa).sqrt();
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    let mut h = vec![0.0; d];
    a[0] = -kappa;
    a[1] = s;
    b[0] = -kappa;
    b[1] = -s;
    h[0] = 1.0;
    [a, b, h]
}

#[derive(Clone, Debug)]
pub struct HubSpoke {
    pub dataset: NodeDataset,
    pub group_a: Vec<usize>,
    pub group_b: Vec<usize>,
    pub hub: Vec<usize>,
}

/// Nodes `0..a` form spoke group A (class 0), `a..a+b` group B (class 1),
/// and the rest the hub (class 2). A and B are never adjacent.
pub fn gen_hub_spoke(cfg: &HubSpokeConfig) -> Result<HubSpoke> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = cfg.a + cfg.b + cfg.m;
    let group_a: Vec<usize> = (0..cfg.a).collect();
    let group_b: Vec<usize> = (cfg.a..cfg.a + cfg.b).collect();
    let hub: Vec<usize> = (cfg.a + cfg.b..n).collect();
    let mut edges = Vec::new();
    for grp in [&group_a, &group_b, &hub] {
        bernoulli_edges(&mut rng, &mut edges, grp, grp, cfg.p_intra, true);
    }
    bernoulli_edges(&mut rng, &mut edges, &group_a, &hub, cfg.p_spoke_hub, false);
    bernoulli_edges(&mut rng, &mut edges, &group_b, &hub, cfg.p_spoke_hub, false);
    let graph = SparseGraph::build(n, &edges, None)?;

    let means = margin_means(cfg.kappa, cfg.d);
    let labels: Vec<usize> = (0..n).map(|i| if i < cfg.a { 0 } else if i < cfg.a + cfg.b { 1 } else { 2 }).collect();
    let mut x = Matrix::zeros(n, cfg.d);
    let scale = cfg.noise / (cfg.d as f64).sqrt();
    for i in 0..n {
        let row = x.row_mut(i);
        for (j, r) in row.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *r = means[labels[i]][j] + scale * z;
        }
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        row.iter_mut().for_each(|v| *v /= norm);
    }
    let masks = stratified_split(&labels, cfg.train_frac, cfg.val_frac, &mut rng)?;
    let dataset = NodeDataset::new(graph, x, LabelVector::new(labels, 3)?, masks)?;
    Ok(HubSpoke {
        dataset,
        group_a,
        group_b,
        hub,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TreeMatchConfig {
    pub depth: usize,
    pub num_classes: usize,
    pub samples: usize,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for TreeMatchConfig {
    fn default() -> Self {
        TreeMatchConfig {
            depth: 4,
            num_classes: 2,
            samples: 512,
            train_frac: 0.6,
            val_frac: 0.2,
            seed: 0,
        }
    }
}

/// Node layout of a complete binary tree: root 0, children `2i+1`, `2i+2`.
pub fn complete_binary_tree(depth: usize) -> SparseGraph {
    let n = (1usize << (depth + 1)) - 1;
    let edges: Vec<(NodeId, NodeId)> = (1..n).map(|c| (((c - 1) / 2) as NodeId, c as NodeId)).collect();
    SparseGraph::build(n, &edges, None).expect("tree edges are valid")
}

/// Feature width of a tree sample: one slot per (key, class) pair and one
/// per query key.
pub fn tree_feature_dim(depth: usize, num_classes: usize) -> usize {
    let leaves = 1 << depth;
    leaves * num_classes + leaves
}

/// Leaf `ℓ` holds a distinct key and a class, one-hot over (key, class)
/// pairs; the root holds a one-hot query key. The graph label is the class
/// of the leaf whose key matches the query. Labels cycle through the classes
/// so they are balanced.
pub fn gen_tree_neighborsmatch(cfg: &TreeMatchConfig) -> Result<GraphDataset> {
    if cfg.depth < 2 {
        return Err(HmhError::InvalidParameter(format!("tree depth must be ≥ 2, got {}", cfg.depth)));
    }
    let leaves = 1usize << cfg.depth;
    if cfg.num_classes < 2 || cfg.num_classes > leaves {
        return Err(HmhError::InvalidParameter(format!(
            "num_classes must lie in 2..={leaves}, got {}",
            cfg.num_classes
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tree = complete_binary_tree(cfg.depth);
    let n = tree.n();
    let first_leaf = n - leaves;
    let d = tree_feature_dim(cfg.depth, cfg.num_classes);
    let query_off = leaves * cfg.num_classes;
    let mut graphs = Vec::with_capacity(cfg.samples);
    for s in 0..cfg.samples {
        let label = s % cfg.num_classes;
        let mut keys: Vec<usize> = (0..leaves).collect();
        keys.shuffle(&mut rng);
        let target = rng.random_range(0..leaves);
        let mut x = Matrix::zeros(n, d);
        for (l, &key) in keys.iter().enumerate() {
            let class = if l == target { label } else { rng.random_range(0..cfg.num_classes) };
            x.set(first_leaf + l, key * cfg.num_classes + class, 1.0);
        }
        x.set(0, query_off + keys[target], 1.0);
        graphs.push(GraphSample {
            graph: tree.clone(),
            features: x,
            label,
        });
    }
    let mut order: Vec<usize> = (0..cfg.samples).collect();
    order.shuffle(&mut rng);
    let nt = ((cfg.samples as f64) * cfg.train_frac).round() as usize;
    let nv = ((cfg.samples as f64) * cfg.val_frac).round() as usize;
    let ds = GraphDataset {
        graphs,
        num_classes: cfg.num_classes,
        train: order[..nt].to_vec(),
        val: order[nt..(nt + nv).min(order.len())].to_vec(),
        test: order[(nt + nv).min(order.len())..].to_vec(),
    };
    ds.validate()?;
    Ok(ds)
}

/// Leaf index whose key the root queries, read back from the features.
pub fn tree_query_leaf(sample: &GraphSample, depth: usize, num_classes: usize) -> Option<usize> {
    let leaves = 1usize << depth;
    let n = sample.graph.n();
    let q = (0..leaves).find(|&k| sample.features.get(0, leaves * num_classes + k) == 1.0)?;
    let hits: Vec<usize> = (0..leaves)
        .filter(|&l| (0..num_classes).any(|c| sample.features.get(n - leaves + l, q * num_classes + c) == 1.0))
        .collect();
    (hits.len() == 1).then(|| hits[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SbmConfig {
    pub sizes: Vec<usize>,
    pub p_in: f64,
    pub p_out: f64,
    pub d: usize,
    /// Standard deviation of per-node noise around the class mean.
    pub noise: f64,
    pub train_frac: f64,
    pub val_frac: f64,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        SbmConfig {
            sizes: vec![500, 500],
            p_in: 0.016,
            p_out: 0.004,
            d: 16,
            noise: 1.0,
            train_frac: 0.6,
            val_frac: 0.2,
            seed: 0,
        }
    }
}

/// Expected edge count of an SBM.
pub fn sbm_expected_edges(sizes: &[usize], p_in: f64, p_out: f64) -> f64 {
    let (w_in, w_out) = sbm_pair_counts(sizes);
    p_in * w_in + p_out * w_out
}

fn sbm_pair_counts(sizes: &[usize]) -> (f64, f64) {
    let w_in: f64 = sizes.iter().map(|&s| (s * s.saturating_sub(1)) as f64 / 2.0).sum();
    let total: usize = sizes.iter().sum();
    let all = (total * total.saturating_sub(1)) as f64 / 2.0;
    (w_in, all - w_in)
}

/// `(p_in, p_out)` with `p_in = ratio · p_out` whose expected edge count is
/// `target`.
pub fn sbm_probabilities(sizes: &[usize], target: f64, ratio: f64) -> Result<(f64, f64)> {
    let (w_in, w_out) = sbm_pair_counts(sizes);
    let p_out = target / (ratio * w_in + w_out);
    let p_in = ratio * p_out;
    if !(0.0..=1.0).contains(&p_in) || !(0.0..=1.0).contains(&p_out) {
        return Err(HmhError::InvalidParameter(format!("{target} edges are not reachable with ratio {ratio}")));
    }
    Ok((p_in, p_out))
}

/// Graph of an SBM draw. Pairs are visited with geometric skips, so the
/// cost tracks the edge count rather than `n²`.
pub fn sbm_graph(sizes: &[usize], p_in: f64, p_out: f64, rng: &mut impl Rng) -> Result<(SparseGraph, Vec<usize>)> {
    for (name, p) in [("p_in", p_in), ("p_out", p_out)] {
        if !(0.0..=1.0).contains(&p) {
            return Err(HmhError::InvalidParameter(format!("{name} must lie in [0,1], got {p}")));
        }
    }
    let n: usize = sizes.iter().sum();
    let labels: Vec<usize> = sizes.iter().enumerate().flat_map(|(c, &s)| std::iter::repeat_n(c, s)).collect();
    let starts: Vec<usize> = sizes
        .iter()
        .scan(0, |acc, &s| {
            let st = *acc;
            *acc += s;
            Some(st)
        })
        .collect();
    let mut edges = Vec::new();
    for (bu, &su) in sizes.iter().enumerate() {
        for (bv, &sv) in sizes.iter().enumerate().skip(bu) {
            let p = if bu == bv { p_in } else { p_out };
            let pairs = if bu == bv { su * su.saturating_sub(1) / 2 } else { su * sv };
            for k in skip_sample(pairs, p, rng) {
                let (u, v) = if bu == bv {
                    // k-th pair (u, v) with u < v inside the block
                    let (u, v) = triangle_pair(k, su);
                    (starts[bu] + u, starts[bu] + v)
                } else {
                    (starts[bu] + k / sv, starts[bv] + k % sv)
                };
                edges.push((u as NodeId, v as NodeId));
            }
        }
    }
    Ok((SparseGraph::build(n, &edges, None)?, labels))
}

/// Indices in `0..count` kept independently with probability `p`.
fn skip_sample(count: usize, p: f64, rng: &mut impl Rng) -> Vec<usize> {
    if p <= 0.0 || count == 0 {
        return Vec::new();
    }
    if p >= 1.0 {
        return (0..count).collect();
    }
    let log_q = (1.0 - p).ln();
    let mut out = Vec::new();
    let mut i: f64 = -1.0;
    loop {
        let r: f64 = rng.random::<f64>();
        i += 1.0 + ((1.0 - r).ln() / log_q).floor();
        if i >= count as f64 {
            return out;
        }
        out.push(i as usize);
    }
}

fn triangle_pair(k: usize, s: usize) -> (usize, usize) {
    // rows u hold s-1-u pairs; find u with offset(u) ≤ k < offset(u+1)
    let mut u = 0;
    let mut offset = 0;
    while offset + (s - 1 - u) <= k {
        offset += s - 1 - u;
        u += 1;
    }
    (u, u + 1 + (k - offset))
}

/// Block-labelled SBM with Gaussian class-mean features.
pub fn gen_sbm(cfg: &SbmConfig) -> Result<NodeDataset> {
    if cfg.sizes.is_empty() || cfg.sizes.contains(&0) {
        return Err(HmhError::InvalidParameter("SBM blocks must be non-empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (graph, labels) = sbm_graph(&cfg.sizes, cfg.p_in, cfg.p_out, &mut rng)?;
    let k = cfg.sizes.len();
    let mut means = Matrix::zeros(k, cfg.d);
    for v in means.data_mut() {
        *v = StandardNormal.sample(&mut rng);
    }
    let n = graph.n();
    let mut x = Matrix::zeros(n, cfg.d);
    for i in 0..n {
        for j in 0..cfg.d {
            let z: f64 = StandardNormal.sample(&mut rng);
            x.set(i, j, means.get(labels[i], j) + cfg.noise * z);
        }
    }
    let masks = stratified_split(&labels, cfg.train_frac, cfg.val_frac, &mut rng)?;
    NodeDataset::new(graph, x, LabelVector::new(labels, k)?, masks)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn triangle_pairs_enumerate_upper_triangle() {
        let s = 5;
        let all: Vec<(usize, usize)> = (0..s * (s - 1) / 2).map(|k| triangle_pair(k, s)).collect();
        let mut want = Vec::new();
        for u in 0..s {
            for v in u + 1..s {
                want.push((u, v));
            }
        }
        assert_eq!(all, want);
    }

    #[test]
    fn skip_sample_extremes() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(skip_sample(7, 1.0, &mut r), (0..7).collect::<Vec<_>>());
        assert!(skip_sample(7, 0.0, &mut r).is_empty());
        let kept = skip_sample(100_000, 0.3, &mut r);
        assert!(kept.windows(2).all(|w| w[0] < w[1]));
        assert!((kept.len() as f64 - 30_000.0).abs() < 600.0);
    }

    #[test]
    fn margin_means_products() {
        let [a, b, h] = margin_means(0.8, 4);
        let dot = crate::matrix::dot;
        assert!((dot(&a, &h) + 0.8).abs() < 1e-15);
        assert!((dot(&b, &h) + 0.8).abs() < 1e-15);
        assert!((dot(&a, &b) - (2.0 * 0.64 - 1.0)).abs() < 1e-15);
        assert!((dot(&a, &a) - 1.0).abs() < 1e-15);
    }
}
