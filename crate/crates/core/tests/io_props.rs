use std::path::Path;

use hmh_core::graph::{LabelVector, Masks, NodeDataset};
use hmh_core::io::{
    edges_tsv, features_csv, labels_csv, load_node_dataset, parse_edges, parse_features, parse_labels,
    save_node_dataset, NodeDataPaths, Splits,
};
use hmh_core::{Matrix, SparseGraph};
use proptest::prelude::*;

fn graphs() -> impl Strategy<Value = SparseGraph> {
    (1usize..40, any::<bool>()).prop_flat_map(|(n, weighted)| {
        prop::collection::vec((0..n as u32, 0..n as u32, 0.1f64..5.0), 0..3 * n).prop_map(move |raw| {
            let edges: Vec<(u32, u32)> = raw.iter().filter(|e| e.0 != e.1).map(|e| (e.0, e.1)).collect();
            let w: Vec<f64> = raw.iter().filter(|e| e.0 != e.1).map(|e| e.2).collect();
            SparseGraph::build(n, &edges, weighted.then_some(&w[..])).unwrap()
        })
    })
}

/// An edgeless file cannot say whether the graph was weighted, so graphs
/// are compared by their weighted edge lists.
fn edge_set(g: &SparseGraph) -> (usize, Vec<(u32, u32, f64)>) {
    (g.n(), g.edges().collect())
}

fn matrices() -> impl Strategy<Value = Matrix> {
    (1usize..20, 1usize..6).prop_flat_map(|(r, c)| {
        prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::ZERO, r * c)
            .prop_map(move |d| Matrix::from_vec(r, c, d).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edges_round_trip(g in graphs()) {
        let parsed = parse_edges(&edges_tsv(&g), Path::new("edges.tsv")).unwrap();
        let back = parsed.into_graph(g.n()).unwrap();
        prop_assert_eq!(edge_set(&back), edge_set(&g));
    }

    #[test]
    fn features_round_trip_bit_exact(x in matrices()) {
        let back = parse_features(&features_csv(&x), Path::new("features.csv")).unwrap();
        prop_assert_eq!(back, x);
    }

    #[test]
    fn labels_round_trip(labels in prop::collection::vec(0usize..7, 1..50)) {
        let back = parse_labels(&labels_csv(&labels), labels.len(), Path::new("labels.csv")).unwrap();
        prop_assert_eq!(back.labels, labels);
    }

    #[test]
    fn node_dataset_round_trip(g in graphs(), seed in any::<u64>()) {
        let n = g.n();
        let x = Matrix::from_vec(n, 2, (0..2 * n).map(|k| (k as f64 + seed as f64).sin()).collect()).unwrap();
        let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
        let num_classes = labels.iter().max().unwrap() + 1;
        let all: Vec<usize> = (0..n).collect();
        let (train, rest) = all.split_at(n.div_ceil(2));
        let (val, test) = rest.split_at(rest.len() / 2);
        let masks = Masks::from_indices(n, train, val, test).unwrap();
        let ds = NodeDataset::new(g, x, LabelVector::new(labels, num_classes).unwrap(), masks).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_node_dataset(&ds, dir.path()).unwrap();
        let back = load_node_dataset(&NodeDataPaths::in_dir(dir.path())).unwrap();
        prop_assert_eq!(edge_set(&back.graph), edge_set(&ds.graph));
        prop_assert_eq!(&back.features, &ds.features);
        prop_assert_eq!(&back.labels.labels, &ds.labels.labels);
        prop_assert_eq!(Splits::from_masks(&back.masks), Splits::from_masks(&ds.masks));
    }
}

#[test]
fn splits_reject_unknown_keys() {
    let ok: Splits = serde_json::from_str(r#"{"train":[0],"val":[1],"test":[2]}"#).unwrap();
    assert_eq!(ok.to_masks(3).unwrap().train, vec![true, false, false]);
    assert!(serde_json::from_str::<Splits>(r#"{"train":[0],"val":[1],"test":[2],"extra":[]}"#).is_err());
}
