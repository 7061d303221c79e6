mod common;

use hmh_core::encoder::{EncoderLayer, EncoderParams};
use hmh_core::hierarchy::{aggregate_features, build_hierarchy, soft_assign, Affinity, HaarTree, HierarchyConfig};
use hmh_core::kmeans::kmeanspp_seed;
use hmh_core::Matrix;
use proptest::prelude::*;

use common::*;

/// No layers: the clustering scores are the level features themselves.
fn passthrough() -> Vec<EncoderParams> {
    vec![EncoderParams { layers: vec![] }]
}

fn random_encoder(d: usize, seed: u64) -> Vec<EncoderParams> {
    let w_att = gaussian(2 * d, 1, seed).into_data();
    vec![EncoderParams {
        layers: vec![EncoderLayer {
            w_att,
            w: gaussian(d, 6, seed ^ 5),
        }],
    }]
}

fn cfg(ratio: f64, h_t: usize, seed: u64, affinity: Affinity) -> HierarchyConfig {
    HierarchyConfig {
        ratio,
        h_t,
        seed,
        affinity,
        ..Default::default()
    }
}

fn assert_same_tree(a: &HaarTree, b: &HaarTree) {
    assert_eq!(a.sizes(), b.sizes());
    for (x, y) in a.levels.iter().zip(&b.levels) {
        assert_eq!(x.graph.col_indices(), y.graph.col_indices());
        assert_eq!(x.graph.weights(), y.graph.weights());
        assert_eq!(x.features.data(), y.features.data());
        assert_eq!(x.structural, y.structural);
        assert_eq!(x.assignment, y.assignment);
        assert_eq!(x.encoder_scores, y.encoder_scores);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn distinct_scores_follow_the_size_recurrence(
        n in 2usize..300,
        ratio in 0.2f64..0.8,
        h_t in 1usize..12,
        seed in any::<u64>(),
    ) {
        let g = connected_random(n, 4.0 / n as f64, seed);
        let x = gaussian(n, 3, seed ^ 9);
        let c = cfg(ratio, h_t, seed, Affinity::NegSqDistance);
        let tree = build_hierarchy(&g, &x, &passthrough(), &c).unwrap();
        let sizes = tree.sizes();
        prop_assert_eq!(&sizes, &c.nominal_sizes(n));
        prop_assert!(sizes.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(*sizes.last().unwrap() <= h_t || sizes == vec![n]);
    }

    #[test]
    fn encoded_trees_shrink_to_threshold(n in 2usize..200, seed in any::<u64>(), inner in any::<bool>(), to_one in any::<bool>()) {
        let g = connected_random(n, 4.0 / n as f64, seed);
        let x = gaussian(n, 4, seed ^ 9);
        let affinity = if inner { Affinity::InnerProduct } else { Affinity::NegSqDistance };
        let c = HierarchyConfig { coarsen_to_one: to_one, ..cfg(0.5, 4, seed, affinity) };
        let tree = build_hierarchy(&g, &x, &random_encoder(4, seed), &c).unwrap();
        let sizes = tree.sizes();
        prop_assert!(sizes.windows(2).all(|w| w[1] < w[0] && w[1] <= c.next_size(w[0])));
        let last = *sizes.last().unwrap();
        let done = if to_one { last == 1 } else { last <= 4 };
        prop_assert!(done, "last level has {} nodes", last);
        for (ell, level) in tree.levels.iter().enumerate() {
            match &level.assignment {
                Some(a) => {
                    prop_assert_eq!(a.soft.shape(), (sizes[ell], sizes[ell + 1]));
                    prop_assert!(a.members().iter().all(|m| !m.is_empty()));
                }
                None => prop_assert_eq!(ell, sizes.len() - 1),
            }
        }
    }

    #[test]
    fn hard_parent_is_first_argmax_of_soft(n in 2usize..200, seed in any::<u64>(), inner in any::<bool>()) {
        let g = connected_random(n, 4.0 / n as f64, seed);
        let x = gaussian(n, 4, seed ^ 9);
        let affinity = if inner { Affinity::InnerProduct } else { Affinity::NegSqDistance };
        let tree = build_hierarchy(&g, &x, &random_encoder(4, seed), &cfg(0.5, 2, seed, affinity)).unwrap();
        for level in &tree.levels {
            let Some(a) = &level.assignment else { continue };
            prop_assert_eq!(a.hard.len(), a.soft.rows());
            for i in 0..a.soft.rows() {
                let row = a.soft.row(i);
                let best = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let first = row.iter().position(|&v| v == best).unwrap();
                prop_assert_eq!(a.hard[i], first);
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            }
        }
    }

    #[test]
    fn aggregation_conserves_column_mass(n in 1usize..120, k in 1usize..10, tau in 0.05f64..5.0, seed in any::<u64>()) {
        let z = gaussian(n, 3, seed);
        let protos = gaussian(k, 3, seed ^ 1);
        let soft = soft_assign(&z, &protos, tau, Affinity::InnerProduct).unwrap();
        let x = gaussian(n, 5, seed ^ 2).scale(10.0);
        let coarse = aggregate_features(&x, &soft);
        for (a, b) in coarse.col_sums().iter().zip(x.col_sums()) {
            prop_assert!((a - b).abs() <= 1e-8 * (1.0 + b.abs()), "{} vs {}", a, b);
        }
    }

    #[test]
    fn same_inputs_and_seed_give_identical_trees(n in 2usize..150, seed in any::<u64>()) {
        let g = connected_random(n, 4.0 / n as f64, seed);
        let x = gaussian(n, 4, seed ^ 9);
        let enc = random_encoder(4, seed);
        let c = cfg(0.5, 3, seed, Affinity::InnerProduct);
        let a = build_hierarchy(&g, &x, &enc, &c).unwrap();
        let b = build_hierarchy(&g, &x, &enc, &c).unwrap();
        assert_same_tree(&a, &b);
    }
}

#[test]
fn size_examples() {
    let run = |n: usize, c: HierarchyConfig| {
        let g = connected_random(n, 0.05, 1);
        build_hierarchy(&g, &gaussian(n, 3, 2), &passthrough(), &c).unwrap().sizes()
    };
    assert_eq!(run(100, cfg(0.5, 10, 0, Affinity::NegSqDistance)), vec![100, 50, 25, 12, 6]);
    assert_eq!(run(5, cfg(0.5, 10, 0, Affinity::NegSqDistance)), vec![5]);
    let to_one = HierarchyConfig {
        coarsen_to_one: true,
        ..cfg(0.5, 10, 0, Affinity::NegSqDistance)
    };
    assert_eq!(run(8, to_one), vec![8, 4, 2, 1]);
}

/// Blobs of four points around (0,0) and (10,10). The second k-means++ seed
/// lands in the first seed's blob with probability Σ_same d² / Σ_all d²,
/// averaged over the uniform first pick.
#[test]
fn kmeanspp_splits_separated_blobs() {
    let pts = [
        [0.0, 0.0],
        [0.5, 0.0],
        [0.0, 0.5],
        [0.5, 0.5],
        [10.0, 10.0],
        [10.5, 10.0],
        [10.0, 10.5],
        [10.5, 10.5],
    ];
    let d2 = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let blob = |i: usize| i / 4;
    let mut same_blob = 0.0;
    for (f, pf) in pts.iter().enumerate() {
        let total: f64 = pts.iter().map(|p| d2(pf, p)).sum();
        let same: f64 = pts.iter().enumerate().filter(|(j, _)| blob(*j) == blob(f)).map(|(_, p)| d2(pf, p)).sum();
        same_blob += same / total / pts.len() as f64;
    }
    assert!(1.0 - same_blob >= 0.99, "oracle split probability {}", 1.0 - same_blob);

    let z = Matrix::from_rows(&pts.iter().map(|p| p.to_vec()).collect::<Vec<_>>());
    let trials = 400;
    let split = (0..trials)
        .filter(|&s| {
            let c = kmeanspp_seed(&z, 2, s).unwrap();
            (c.get(0, 0) < 5.0) != (c.get(1, 0) < 5.0)
        })
        .count();
    assert!(split as f64 / trials as f64 >= 0.99, "{split}/{trials} seeds split the blobs");
}
