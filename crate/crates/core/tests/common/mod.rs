#![allow(dead_code)]

use hmh_core::graph::{LabelVector, Masks, NodeDataset};
use hmh_core::{Matrix, SparseGraph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Ring over `n` nodes plus `extra` random chords.
pub fn ring_with_chords(n: usize, extra: usize, seed: u64) -> SparseGraph {
    let mut r = rng(seed);
    let mut edges: Vec<(u32, u32)> = (0..n).map(|i| (i as u32, ((i + 1) % n) as u32)).collect();
    for _ in 0..extra {
        let u = r.random_range(0..n);
        let v = r.random_range(0..n);
        if u != v {
            edges.push((u as u32, v as u32));
        }
    }
    SparseGraph::build(n, &edges, None).unwrap()
}

/// Erdős–Rényi graph with a spanning path so it is connected.
pub fn connected_random(n: usize, p: f64, seed: u64) -> SparseGraph {
    let mut r = rng(seed);
    let mut edges: Vec<(u32, u32)> = (1..n as u32).map(|i| (i - 1, i)).collect();
    for u in 0..n {
        for v in u + 1..n {
            if r.random::<f64>() < p {
                edges.push((u as u32, v as u32));
            }
        }
    }
    SparseGraph::build(n, &edges, None).unwrap()
}

pub fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut r)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

/// Two classes of `half` nodes each, a ring inside each class joined by one
/// bridge, features = class indicator plus small noise.
pub fn separable_toy(half: usize, seed: u64) -> NodeDataset {
    let n = 2 * half;
    let mut edges = Vec::new();
    for c in 0..2 {
        for i in 0..half {
            edges.push(((c * half + i) as u32, (c * half + (i + 1) % half) as u32));
        }
    }
    edges.push((0, half as u32));
    let g = SparseGraph::build(n, &edges, None).unwrap();
    let noise = gaussian(n, 3, seed);
    let mut x = Matrix::zeros(n, 3);
    let labels: Vec<usize> = (0..n).map(|i| i / half).collect();
    for i in 0..n {
        x.set(i, labels[i], 1.0);
        x.set(i, 2, 1.0);
        for j in 0..3 {
            x.set(i, j, x.get(i, j) + 0.05 * noise.get(i, j));
        }
    }
    let train: Vec<usize> = (0..n).filter(|i| i % 4 < 2).collect();
    let val: Vec<usize> = (0..n).filter(|i| i % 4 == 2).collect();
    let test: Vec<usize> = (0..n).filter(|i| i % 4 == 3).collect();
    let masks = Masks::from_indices(n, &train, &val, &test).unwrap();
    NodeDataset::new(g, x, LabelVector::new(labels, 2).unwrap(), masks).unwrap()
}
