//! End-to-end training and evaluation runs driven by a [`RunConfig`].

use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::bench::{gen_hub_spoke, gen_sbm, gen_tree_neighborsmatch};
use crate::config::{DataSpec, RunConfig, Task};
use crate::error::{HmhError, Result};
use crate::graph::{Dataset, GraphDataset, NodeDataset};
use crate::io::{load_graph_dataset, load_node_dataset, write_json, write_text, NodeDataPaths};
use crate::metrics::Metric;
use crate::model::{ModelKind, Network, ParamSet, ParamsDocument};
use crate::train::{evaluate_graphs, evaluate_node, history_csv, train_graphs, train_node, TrainOutcome};

pub fn load_data(spec: &DataSpec, task: Task) -> Result<Dataset> {
    Ok(match (spec, task) {
        (DataSpec::Dir(d), Task::Node) => Dataset::Node(load_node_dataset(&NodeDataPaths::in_dir(d))?),
        (DataSpec::Dir(d), Task::Graph) => Dataset::Graph(load_graph_dataset(d)?),
        (DataSpec::Files(p), Task::Node) => Dataset::Node(load_node_dataset(p)?),
        (DataSpec::Hubspoke(c), Task::Node) => Dataset::Node(gen_hub_spoke(c)?.dataset),
        (DataSpec::Sbm(c), Task::Node) => Dataset::Node(gen_sbm(c)?),
        (DataSpec::Tree(c), Task::Graph) => Dataset::Graph(gen_tree_neighborsmatch(c)?),
        _ => return Err(HmhError::Config(format!("data source does not fit a {task:?} task"))),
    })
}

pub fn build_network(cfg: &RunConfig, data: &Dataset) -> Result<Network> {
    let (d_in, classes, max_nodes) = match data {
        Dataset::Node(ds) => (ds.features.cols(), ds.labels.num_classes, ds.graph.n()),
        Dataset::Graph(ds) => (
            ds.graphs.first().map(|s| s.features.cols()).ok_or(HmhError::EmptyGraph)?,
            ds.num_classes,
            ds.graphs.iter().map(|s| s.graph.n()).max().unwrap_or(0),
        ),
    };
    Network::build(cfg.model, &cfg.hmh, &cfg.baseline, d_in, classes, max_nodes)
}

/// Final scores on each split; a split with no members is `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScores {
    pub metric: Metric,
    pub train: Option<f64>,
    pub val: Option<f64>,
    pub test: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub model: ModelKind,
    pub scores: Option<SplitScores>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub diverged: Option<String>,
}

pub fn split_scores(net: &Network, params: &ParamSet, data: &Dataset, metric: Metric, threads: usize) -> Result<SplitScores> {
    let score = |which: usize| -> Result<Option<f64>> {
        match data {
            Dataset::Node(ds) => {
                let mask = [&ds.masks.train, &ds.masks.val, &ds.masks.test][which];
                if !mask.iter().any(|&b| b) {
                    return Ok(None);
                }
                evaluate_node(net, params, ds, mask, metric).map(Some)
            }
            Dataset::Graph(ds) => {
                let idx = [&ds.train, &ds.val, &ds.test][which];
                if idx.is_empty() {
                    return Ok(None);
                }
                evaluate_graphs(net, params, ds, idx, metric, threads).map(Some)
            }
        }
    };
    Ok(SplitScores {
        metric,
        train: score(0)?,
        val: score(1)?,
        test: score(2)?,
    })
}

pub struct RunResult {
    pub report: MetricsReport,
    /// Absent when training diverged.
    pub checkpoint: Option<ParamsDocument>,
    pub history_csv: String,
}

impl RunResult {
    pub fn diverged(&self) -> bool {
        self.report.diverged.is_some()
    }
}

fn train_on(net: &Network, data: &Dataset, cfg: &RunConfig) -> Result<TrainOutcome> {
    match data {
        Dataset::Node(ds) => train_node(net, ds, &cfg.train, None),
        Dataset::Graph(ds) => train_graphs(net, ds, &cfg.train, None),
    }
}

/// Trains without touching the filesystem beyond loading data.
pub fn train_run(cfg: &RunConfig) -> Result<RunResult> {
    cfg.validate()?;
    let data = load_data(&cfg.data, cfg.task)?;
    let net = build_network(cfg, &data)?;
    let out = train_on(&net, &data, cfg)?;
    let history = history_csv(&out.history);
    let mut report = MetricsReport {
        task: cfg.task,
        model: cfg.model,
        scores: None,
        best_epoch: out.best_epoch,
        best_val_loss: out.best_val_loss,
        epochs_run: out.history.len(),
        stopped_early: out.stopped_early,
        diverged: out.divergence.as_ref().map(|e| e.to_string()),
    };
    if out.divergence.is_some() {
        return Ok(RunResult {
            report,
            checkpoint: None,
            history_csv: history,
        });
    }
    report.scores = Some(split_scores(&net, &out.params, &data, cfg.train.metric, cfg.train.threads)?);
    Ok(RunResult {
        report,
        checkpoint: Some(out.params.to_document(net.describe())),
        history_csv: history,
    })
}

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

/// Writes `checkpoint.json` (on success), `history.csv`, `metrics.json` and
/// `meta.json` into `outdir`. Only `meta.json` carries wall-clock data.
pub fn write_run(outdir: &Path, result: &RunResult, cfg: &RunConfig, started_unix: f64) -> Result<()> {
    std::fs::create_dir_all(outdir).map_err(|e| HmhError::io(outdir, e))?;
    if let Some(doc) = &result.checkpoint {
        doc.save(&outdir.join("checkpoint.json"))?;
    }
    write_text(&outdir.join("history.csv"), &result.history_csv)?;
    write_json(&outdir.join("metrics.json"), &result.report)?;
    write_json(
        &outdir.join("meta.json"),
        &serde_json::json!({
            "started_unix": started_unix,
            "finished_unix": unix_now(),
            "version": env!("CARGO_PKG_VERSION"),
            "threads": cfg.train.threads,
            "config": cfg,
        }),
    )
}

pub fn train_and_write(cfg: &RunConfig) -> Result<RunResult> {
    let started = unix_now();
    let result = train_run(cfg)?;
    write_run(&cfg.outdir, &result, cfg, started)?;
    Ok(result)
}

/// Scores a saved checkpoint on the dataset named by `cfg`.
pub fn eval_checkpoint(cfg: &RunConfig, checkpoint: &Path) -> Result<SplitScores> {
    let doc = ParamsDocument::load(checkpoint)?;
    let net = Network::from_description(&doc.model)?;
    let params = ParamSet::from_document(&doc)?;
    let data = load_data(&cfg.data, cfg.task)?;
    split_scores(&net, &params, &data, cfg.train.metric, cfg.train.threads)
}

pub fn node_dataset(data: Dataset) -> Result<NodeDataset> {
    match data {
        Dataset::Node(ds) => Ok(ds),
        Dataset::Graph(_) => Err(HmhError::Config("expected a node dataset".into())),
    }
}

pub fn graph_dataset(data: Dataset) -> Result<GraphDataset> {
    match data {
        Dataset::Graph(ds) => Ok(ds),
        Dataset::Node(_) => Err(HmhError::Config("expected a graph dataset".into())),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LevelInspection {
    pub level: usize,
    pub n: usize,
    pub columns: usize,
    pub nnz: usize,
    /// `nnz / n²`.
    pub density: f64,
    pub scaling: usize,
    pub inter: usize,
    pub intra: usize,
    pub gram_residual: f64,
    /// Row-major `U`, only for `n ≤ 64`.
    pub dense: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BasisInspection {
    pub levels: Vec<LevelInspection>,
    /// `level,column,hop,fraction`; the last hop row of a column is labelled
    /// `beyond`.
    pub hop_energy_csv: String,
}

pub const DENSE_DUMP_LIMIT: usize = 64;

/// Builds the Haar tree of a node dataset under a freshly initialised HMH
/// model (seeded by `train.seed`) and summarises every level's basis.
pub fn inspect_basis(cfg: &RunConfig, max_hops: usize) -> Result<BasisInspection> {
    use rand::SeedableRng;
    use std::sync::Arc;
    let ds = node_dataset(load_data(&cfg.data, Task::Node)?)?;
    let net = Network::build(ModelKind::Hmh, &cfg.hmh, &cfg.baseline, ds.features.cols(), ds.labels.num_classes, ds.graph.n())?;
    let params = net.init_params(&mut rand_chacha::ChaCha8Rng::seed_from_u64(cfg.train.seed));
    let prep = match net.prepare(&params, Arc::new(ds.graph.clone()), None, &ds.features, None)? {
        crate::model::Prepared::Hmh(p) => p,
        crate::model::Prepared::Baseline(_) => unreachable!("built an HMH network"),
    };
    let mut levels = Vec::new();
    for (ell, b) in prep.bases.iter().enumerate() {
        let [scaling, inter, intra] = b.kind_counts();
        let n = b.num_columns();
        levels.push(LevelInspection {
            level: ell,
            n,
            columns: n,
            nnz: b.nnz(),
            density: b.nnz() as f64 / (n * n) as f64,
            scaling,
            inter,
            intra,
            gram_residual: b.gram_residual(),
            dense: (n <= DENSE_DUMP_LIMIT).then(|| {
                let u = b.to_dense();
                (0..n).map(|i| u.row(i).to_vec()).collect()
            }),
        });
    }
    let mut csv = String::from("level,column,hop,fraction\n");
    for c in crate::bench::basis_locality(&prep.graphs, &prep.bases, max_hops)? {
        for (h, f) in c.shells.iter().enumerate() {
            let hop = if h + 1 == c.shells.len() { "beyond".to_string() } else { h.to_string() };
            csv.push_str(&format!("{},{},{},{}\n", c.level, c.column, hop, f));
        }
    }
    Ok(BasisInspection {
        levels,
        hop_energy_csv: csv,
    })
}
