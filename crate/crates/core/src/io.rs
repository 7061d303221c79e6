//! Dataset file formats.
//!
//! A node dataset is a directory holding `edges.tsv`, `features.csv`,
//! `labels.csv` and `splits.json`. A graph dataset holds `graphs.csv`
//! (`graph_id,label`), `splits.json` with graph indices, and one
//! `graphs/<id>/{edges.tsv,features.csv}` pair per sample.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{HmhError, Result};
use crate::graph::{GraphDataset, GraphSample, LabelVector, Masks, NodeDataset, NodeId, SparseGraph};
use crate::matrix::Matrix;

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| HmhError::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| HmhError::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| HmhError::io(path, e))
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> HmhError {
    HmhError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Raw edge list: endpoints plus weights when every line carries one.
#[derive(Clone, Debug, PartialEq)]
pub struct EdgeList {
    pub edges: Vec<(NodeId, NodeId)>,
    pub weights: Option<Vec<f64>>,
}

impl EdgeList {
    pub fn max_node(&self) -> Option<usize> {
        self.edges.iter().map(|&(u, v)| u.max(v) as usize).max()
    }

    pub fn into_graph(self, n: usize) -> Result<SparseGraph> {
        SparseGraph::build(n, &self.edges, self.weights.as_deref())
    }
}

pub fn parse_edges(text: &str, path: &Path) -> Result<EdgeList> {
    let mut edges = Vec::new();
    let mut weights = Vec::new();
    let mut weighted: Option<bool> = None;
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap().trim();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').map(str::trim).collect();
        if parts.len() != 2 && parts.len() != 3 {
            return Err(parse_err(path, k + 1, format!("expected 2 or 3 tab-separated fields, found {}", parts.len())));
        }
        let node = |s: &str| s.parse::<NodeId>().map_err(|e| parse_err(path, k + 1, format!("bad node id {s:?}: {e}")));
        edges.push((node(parts[0])?, node(parts[1])?));
        let has_w = parts.len() == 3;
        match weighted {
            None => weighted = Some(has_w),
            Some(w) if w != has_w => return Err(parse_err(path, k + 1, "mixed weighted and unweighted lines")),
            _ => {}
        }
        if has_w {
            let w: f64 = parts[2].parse().map_err(|e| parse_err(path, k + 1, format!("bad weight {:?}: {e}", parts[2])))?;
            weights.push(w);
        }
    }
    Ok(EdgeList {
        edges,
        weights: (weighted == Some(true)).then_some(weights),
    })
}

pub fn read_edges(path: &Path) -> Result<EdgeList> {
    parse_edges(&read(path)?, path)
}

/// One line per undirected edge, `u < v`; weights only for weighted graphs.
pub fn edges_tsv(g: &SparseGraph) -> String {
    let mut out = String::new();
    for (u, v, w) in g.edges() {
        if g.is_weighted() {
            writeln!(out, "{u}\t{v}\t{w}").unwrap();
        } else {
            writeln!(out, "{u}\t{v}").unwrap();
        }
    }
    out
}

pub fn parse_features(text: &str, path: &Path) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let before = data.len();
        for f in line.split(',') {
            let v: f64 = f.trim().parse().map_err(|e| parse_err(path, k + 1, format!("bad feature {f:?}: {e}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, k + 1, "non-finite feature"));
            }
            data.push(v);
        }
        let c = data.len() - before;
        match cols {
            None => cols = Some(c),
            Some(c0) if c0 != c => return Err(parse_err(path, k + 1, format!("expected {c0} columns, found {c}"))),
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| parse_err(path, 0, "no feature rows"))?;
    Matrix::from_vec(rows, cols, data)
}

pub fn read_features(path: &Path) -> Result<Matrix> {
    parse_features(&read(path)?, path)
}

pub fn features_csv(x: &Matrix) -> String {
    let mut out = String::new();
    for i in 0..x.rows() {
        let row: Vec<String> = x.row(i).iter().map(f64::to_string).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

/// `node_id,label` rows; an optional header line is skipped. Every node in
/// `0..n` must appear exactly once.
pub fn parse_labels(text: &str, n: usize, path: &Path) -> Result<LabelVector> {
    let mut labels = vec![None; n];
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (k == 0 && line.starts_with("node_id")) {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| parse_err(path, k + 1, "expected node_id,label"))?;
        let node: usize = a.trim().parse().map_err(|e| parse_err(path, k + 1, format!("bad node id: {e}")))?;
        let label: usize = b.trim().parse().map_err(|e| parse_err(path, k + 1, format!("bad label: {e}")))?;
        if node >= n {
            return Err(parse_err(path, k + 1, format!("node {node} out of range for {n} nodes")));
        }
        if labels[node].replace(label).is_some() {
            return Err(parse_err(path, k + 1, format!("node {node} labelled twice")));
        }
    }
    let labels: Vec<usize> = labels
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| parse_err(path, 0, format!("node {i} has no label"))))
        .collect::<Result<_>>()?;
    Ok(LabelVector::from_labels(labels))
}

pub fn labels_csv(labels: &[usize]) -> String {
    let mut out = String::from("node_id,label\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(out, "{i},{l}").unwrap();
    }
    out
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Splits {
    pub fn from_masks(m: &Masks) -> Splits {
        Splits {
            train: Masks::indices(&m.train),
            val: Masks::indices(&m.val),
            test: Masks::indices(&m.test),
        }
    }

    pub fn to_masks(&self, n: usize) -> Result<Masks> {
        Masks::from_indices(n, &self.train, &self.val, &self.test)
    }
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read(path)?).map_err(|e| HmhError::Json {
        context: path.display().to_string(),
        source: e,
    })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| HmhError::Json {
        context: path.display().to_string(),
        source: e,
    })?;
    text.push('\n');
    write(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    write(path, text)
}

/// Explicit file locations of a node dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeDataPaths {
    pub edges: PathBuf,
    pub features: PathBuf,
    pub labels: PathBuf,
    pub splits: PathBuf,
}

impl NodeDataPaths {
    pub fn in_dir(dir: &Path) -> Self {
        NodeDataPaths {
            edges: dir.join("edges.tsv"),
            features: dir.join("features.csv"),
            labels: dir.join("labels.csv"),
            splits: dir.join("splits.json"),
        }
    }

    pub fn resolve(&self, base: &Path) -> Self {
        NodeDataPaths {
            edges: base.join(&self.edges),
            features: base.join(&self.features),
            labels: base.join(&self.labels),
            splits: base.join(&self.splits),
        }
    }
}

/// Node count comes from the feature file; edges naming larger ids fail.
pub fn load_node_dataset(paths: &NodeDataPaths) -> Result<NodeDataset> {
    let x = read_features(&paths.features)?;
    let n = x.rows();
    let edges = read_edges(&paths.edges)?;
    if let Some(m) = edges.max_node() {
        if m >= n {
            return Err(parse_err(&paths.edges, 0, format!("node {m} out of range for {n} feature rows")));
        }
    }
    let g = edges.into_graph(n)?;
    let labels = parse_labels(&read(&paths.labels)?, n, &paths.labels)?;
    let splits: Splits = read_json(&paths.splits)?;
    NodeDataset::new(g, x, labels, splits.to_masks(n)?)
}

pub fn save_node_dataset(ds: &NodeDataset, dir: &Path) -> Result<()> {
    let p = NodeDataPaths::in_dir(dir);
    write(&p.edges, &edges_tsv(&ds.graph))?;
    write(&p.features, &features_csv(&ds.features))?;
    write(&p.labels, &labels_csv(&ds.labels.labels))?;
    write_json(&p.splits, &Splits::from_masks(&ds.masks))
}

pub fn load_graph_dataset(dir: &Path) -> Result<GraphDataset> {
    let index = dir.join("graphs.csv");
    let text = read(&index)?;
    let mut graphs = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || (k == 0 && line.starts_with("graph_id")) {
            continue;
        }
        let (a, b) = line.split_once(',').ok_or_else(|| parse_err(&index, k + 1, "expected graph_id,label"))?;
        let id: usize = a.trim().parse().map_err(|e| parse_err(&index, k + 1, format!("bad graph id: {e}")))?;
        let label: usize = b.trim().parse().map_err(|e| parse_err(&index, k + 1, format!("bad label: {e}")))?;
        if id != graphs.len() {
            return Err(parse_err(&index, k + 1, format!("graph ids must be 0.. in order, found {id}")));
        }
        let sub = dir.join("graphs").join(id.to_string());
        let x = read_features(&sub.join("features.csv"))?;
        let graph = read_edges(&sub.join("edges.tsv"))?.into_graph(x.rows())?;
        graphs.push(GraphSample { graph, features: x, label });
    }
    let splits: Splits = read_json(&dir.join("splits.json"))?;
    let num_classes = graphs.iter().map(|s| s.label + 1).max().unwrap_or(0);
    let ds = GraphDataset {
        graphs,
        num_classes,
        train: splits.train,
        val: splits.val,
        test: splits.test,
    };
    ds.validate()?;
    Ok(ds)
}

pub fn save_graph_dataset(ds: &GraphDataset, dir: &Path) -> Result<()> {
    let mut index = String::from("graph_id,label\n");
    for (i, s) in ds.graphs.iter().enumerate() {
        writeln!(index, "{i},{}", s.label).unwrap();
        let sub = dir.join("graphs").join(i.to_string());
        write(&sub.join("edges.tsv"), &edges_tsv(&s.graph))?;
        write(&sub.join("features.csv"), &features_csv(&s.features))?;
    }
    write(&dir.join("graphs.csv"), &index)?;
    write_json(
        &dir.join("splits.json"),
        &Splits {
            train: ds.train.clone(),
            val: ds.val.clone(),
            test: ds.test.clone(),
        },
    )
}
