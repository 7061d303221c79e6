//! k-means++ seeding and Lloyd refinement on encoder scores.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{HmhError, Result};
use crate::matrix::{sq_dist, Matrix};

/// Picks `k` rows of `z`: the first uniformly, each subsequent one with
/// probability proportional to its squared distance from the nearest pick.
pub fn kmeanspp_seed(z: &Matrix, k: usize, seed: u64) -> Result<Matrix> {
    let n = z.rows();
    if k == 0 || k > n {
        return Err(HmhError::InvalidParameter(format!(
            "k-means++ needs 1 <= k <= rows, got k={k}, rows={n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen = Vec::with_capacity(k);
    chosen.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(z.row(i), z.row(chosen[0]))).collect();
    while chosen.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    if target < d {
                        pick = Some(i);
                        break;
                    }
                    target -= d;
                }
            }
            // rounding can leave `target` just past the last positive weight
            pick.unwrap_or_else(|| d2.iter().rposition(|&d| d > 0.0).unwrap())
        } else {
            // every remaining row coincides with a center
            let free: Vec<usize> = (0..n).filter(|i| !chosen.contains(i)).collect();
            free[rng.random_range(0..free.len())]
        };
        chosen.push(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min(sq_dist(z.row(i), z.row(pick)));
        }
    }
    Ok(z.select_rows(&chosen))
}

/// Index of the nearest center; ties go to the lowest index.
pub fn nearest(point: &[f64], centers: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for c in 0..centers.rows() {
        let d = sq_dist(point, centers.row(c));
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

#[derive(Clone, Debug)]
pub struct LloydResult {
    pub centers: Matrix,
    pub assignment: Vec<usize>,
    pub iterations: usize,
}

/// Alternating assign/update until no center moves by `tol` or more.
/// A cluster left empty takes over the point farthest from its own center.
pub fn lloyd_refine(z: &Matrix, centers: &Matrix, max_iter: usize, tol: f64) -> LloydResult {
    let (n, d) = z.shape();
    let k = centers.rows();
    let mut centers = centers.clone();
    let mut assignment = vec![0usize; n];
    let mut dist = vec![0.0; n];
    let mut iterations = 0;
    for _ in 0..max_iter {
        iterations += 1;
        for i in 0..n {
            let (c, dd) = nearest(z.row(i), &centers);
            assignment[i] = c;
            dist[i] = dd;
        }
        let mut counts = vec![0usize; k];
        for &c in &assignment {
            counts[c] += 1;
        }
        for c in 0..k {
            if counts[c] > 0 {
                continue;
            }
            let far = farthest(&dist, &assignment, &counts);
            if let Some(i) = far {
                counts[assignment[i]] -= 1;
                assignment[i] = c;
                counts[c] = 1;
                dist[i] = 0.0;
            }
        }
        let mut next = Matrix::zeros(k, d);
        for i in 0..n {
            let row = next.row_mut(assignment[i]);
            for (o, v) in row.iter_mut().zip(z.row(i)) {
                *o += v;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                next.row_mut(c).copy_from_slice(centers.row(c));
                continue;
            }
            let inv = 1.0 / counts[c] as f64;
            for v in next.row_mut(c) {
                *v *= inv;
            }
            shift = shift.max(sq_dist(next.row(c), centers.row(c)).sqrt());
        }
        centers = next;
        if shift < tol {
            break;
        }
    }
    for i in 0..n {
        assignment[i] = nearest(z.row(i), &centers).0;
    }
    LloydResult {
        centers,
        assignment,
        iterations,
    }
}

/// Farthest point whose removal does not empty its own cluster.
fn farthest(dist: &[f64], assignment: &[usize], counts: &[usize]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for i in 0..dist.len() {
        if counts[assignment[i]] < 2 {
            continue;
        }
        if best.is_none_or(|b| dist[i] > dist[b]) {
            best = Some(i);
        }
    }
    best
}
