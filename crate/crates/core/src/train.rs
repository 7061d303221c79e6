//! Gradients, AdamW, the training loop, and finite-difference checks.

use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::encoder::structural_edge_scores;
use crate::error::{HmhError, Result};
use crate::graph::{GraphDataset, NodeDataset, SparseGraph};
use crate::matrix::Matrix;
use crate::metrics::{dirichlet_energy, evaluate_logits, Metric};
use crate::model::{loss_on_tape, Network, ParamSet, Prepared};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Overrides the model's diversity weight when set.
    pub lambda_div: Option<f64>,
    pub refresh_every: usize,
    /// Forces single-threaded execution.
    pub deterministic: bool,
    pub metric: Metric,
    /// Graphs per optimizer step for graph tasks.
    pub batch_size: usize,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            weight_decay: 1e-4,
            epochs: 200,
            patience: 50,
            seed: 0,
            lambda_div: None,
            refresh_every: 25,
            deterministic: true,
            metric: Metric::Accuracy,
            batch_size: 32,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(HmhError::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.patience > self.epochs {
            return bad(format!("patience {} exceeds epochs {}", self.patience, self.epochs));
        }
        if self.refresh_every == 0 {
            return bad("refresh_every must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if let Some(l) = self.lambda_div {
            if !(l >= 0.0 && l.is_finite()) {
                return bad(format!("lambda_div must be non-negative, got {l}"));
            }
        }
        Ok(())
    }

    fn workers(&self) -> usize {
        if self.deterministic {
            1
        } else {
            self.threads.max(1)
        }
    }
}

/// AdamW state: moment estimates mirror the parameter blocks.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    step: u64,
}

impl AdamW {
    pub fn new(params: &ParamSet, lr: f64, weight_decay: f64) -> Self {
        let zeros: Vec<Matrix> = params.values().iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
        AdamW {
            lr,
            weight_decay,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &ParamSet) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let decay = 1.0 - self.lr * self.weight_decay;
        for (k, (p, g)) in params.values_mut().iter_mut().zip(grads.values()).enumerate() {
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((pi, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *pi = *pi * decay - self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}

/// Loss value and parameter gradients of one pass.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: ParamSet,
}

fn record(
    net: &Network,
    tape: &mut Tape,
    params: &ParamSet,
    vars: &[Var],
    prep: &Prepared,
    targets: &[(usize, usize)],
    graph_readout: bool,
    lambda_div: f64,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<Var> {
    let out = net.forward(tape, params, vars, prep, graph_readout, rng)?;
    Ok(loss_on_tape(tape, out.logits, Arc::new(targets.to_vec()), &out.softs, lambda_div))
}

/// Exact gradients of the total loss. Prototypes, hard assignments, and bases
/// inside `prep` are constants.
#[allow(clippy::too_many_arguments)]
pub fn compute_gradients(
    net: &Network,
    params: &ParamSet,
    prep: &Prepared,
    targets: &[(usize, usize)],
    graph_readout: bool,
    lambda_div: f64,
    rng: Option<&mut dyn rand::RngCore>,
) -> Result<LossGrad> {
    if targets.is_empty() {
        return Err(HmhError::EmptyMask("training targets".into()));
    }
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.values().iter().map(|m| tape.leaf(m.clone())).collect();
    let loss = record(net, &mut tape, params, &vars, prep, targets, graph_readout, lambda_div, rng)?;
    let value = tape.value(loss).value();
    if !value.is_finite() {
        return Err(HmhError::NonFinite(format!("loss is {value}")));
    }
    let g = tape.backward(loss);
    let mut grads = ParamSet::new();
    for ((name, p), &v) in params.iter().zip(&vars) {
        let gm = g.get_or_zeros(v, p);
        if !gm.all_finite() {
            return Err(HmhError::NonFinite(format!("gradient of {name}")));
        }
        grads.insert(name, gm);
    }
    Ok(LossGrad { loss: value, grads })
}

/// Loss value only, without dropout.
pub fn loss_value(
    net: &Network,
    params: &ParamSet,
    prep: &Prepared,
    targets: &[(usize, usize)],
    graph_readout: bool,
    lambda_div: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.values().iter().map(|m| tape.constant(m.clone())).collect();
    let loss = record(net, &mut tape, params, &vars, prep, targets, graph_readout, lambda_div, None)?;
    Ok(tape.value(loss).value())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockError {
    pub name: String,
    pub scalars: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub blocks: Vec<BlockError>,
    pub max_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Compares `analytic` with central differences of `loss` at `params`,
/// one scalar at a time. Error is `|a − n| / max(1, |a|, |n|)`.
pub fn finite_difference_check(
    params: &ParamSet,
    analytic: &ParamSet,
    mut loss: impl FnMut(&ParamSet) -> f64,
    h: f64,
    tolerance: f64,
) -> GradCheckReport {
    let mut probe = params.clone();
    let mut blocks = Vec::new();
    for (k, name) in params.names().iter().enumerate() {
        let mut worst: f64 = 0.0;
        let len = params.values()[k].len();
        for i in 0..len {
            let orig = params.values()[k].data()[i];
            probe.values_mut()[k].data_mut()[i] = orig + h;
            let up = loss(&probe);
            probe.values_mut()[k].data_mut()[i] = orig - h;
            let down = loss(&probe);
            probe.values_mut()[k].data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic.values()[k].data()[i];
            let err = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
            // NaN must fail the check rather than vanish in max()
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
        }
        blocks.push(BlockError {
            name: name.clone(),
            scalars: len,
            max_rel_error: worst,
        });
    }
    let max_error = blocks.iter().map(|b| b.max_rel_error).fold(0.0, f64::max);
    GradCheckReport {
        blocks,
        max_error,
        tolerance,
        passed: max_error <= tolerance,
    }
}

/// Finite-difference check of [`compute_gradients`] for a prepared model.
pub fn check_model_gradients(
    net: &Network,
    params: &ParamSet,
    prep: &Prepared,
    targets: &[(usize, usize)],
    graph_readout: bool,
    h: f64,
    tolerance: f64,
) -> Result<GradCheckReport> {
    let lambda = net.lambda_div();
    let analytic = compute_gradients(net, params, prep, targets, graph_readout, lambda, None)?;
    let report = finite_difference_check(
        params,
        &analytic.grads,
        |p| loss_value(net, p, prep, targets, graph_readout, lambda).unwrap_or(f64::NAN),
        h,
        tolerance,
    );
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_metric: f64,
    pub dirichlet_energy: Option<f64>,
    pub best_val_loss: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_metric,dirichlet_energy";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut out = String::from(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        let energy = r.dirichlet_energy.map(|e| e.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.val_metric, energy));
    }
    out
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the best validation epoch (the initial ones if none finished).
    pub params: ParamSet,
    pub history: Vec<HistoryRow>,
    pub best_epoch: Option<usize>,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    /// Set when training aborted on a non-finite loss, gradient, or parameter.
    pub divergence: Option<HmhError>,
}

impl TrainOutcome {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

fn epoch_rng(seed: u64, epoch: usize, item: usize) -> ChaCha8Rng {
    let mix = seed
        ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (item as u64 + 1).wrapping_mul(0xC2B2_AE3D_27D4_EB4F);
    ChaCha8Rng::seed_from_u64(mix)
}

/// Maps `f` over `items` on up to `threads` scoped workers; output order
/// follows input order.
fn par_map<T: Sync, R: Send>(items: &[T], threads: usize, f: impl Fn(&T) -> R + Sync) -> Vec<R> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    std::thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| {
                let f = &f;
                s.spawn(move || c.iter().map(f).collect::<Vec<R>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("worker panicked")).collect()
    })
}

/// Early-stopping bookkeeping shared by node and graph loops.
struct Tracker {
    best: f64,
    best_epoch: Option<usize>,
    best_params: ParamSet,
    bad: usize,
    patience: usize,
}

impl Tracker {
    fn new(params: &ParamSet, patience: usize) -> Self {
        Tracker {
            best: f64::INFINITY,
            best_epoch: None,
            best_params: params.clone(),
            bad: 0,
            patience,
        }
    }

    /// Returns true when training should stop.
    fn observe(&mut self, epoch: usize, val_loss: f64, params: &ParamSet) -> bool {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.best_params = params.clone();
            self.bad = 0;
            false
        } else {
            self.bad += 1;
            self.bad > self.patience
        }
    }
}

fn diverge(epoch: usize, e: HmhError) -> HmhError {
    match e {
        HmhError::NonFinite(reason) => HmhError::Divergence { epoch, reason },
        other => other,
    }
}

fn finish(tracker: Tracker, history: Vec<HistoryRow>, stopped_early: bool, divergence: Option<HmhError>) -> TrainOutcome {
    TrainOutcome {
        params: tracker.best_params,
        history,
        best_epoch: tracker.best_epoch,
        best_val_loss: tracker.best,
        stopped_early,
        divergence,
    }
}

/// Logits and node embedding of a dropout-free pass.
pub fn forward_eval(net: &Network, params: &ParamSet, prep: &Prepared, graph_readout: bool) -> Result<(Matrix, Matrix)> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.values().iter().map(|m| tape.constant(m.clone())).collect();
    let out = net.forward(&mut tape, params, &vars, prep, graph_readout, None)?;
    Ok((tape.value(out.logits).clone(), tape.value(out.embedding).clone()))
}

fn mean_ce(logits: &Matrix, rows: &[(usize, usize)]) -> f64 {
    let mut total = 0.0;
    for &(r, y) in rows {
        let row = logits.row(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
    }
    total / rows.len() as f64
}

fn initial_params(net: &Network, cfg: &TrainConfig, init: Option<ParamSet>) -> ParamSet {
    init.unwrap_or_else(|| net.init_params(&mut ChaCha8Rng::seed_from_u64(cfg.seed)))
}

fn structural_cache(net: &Network, g: &SparseGraph) -> Option<Arc<Vec<f64>>> {
    net.needs_refresh().then(|| Arc::new(structural_edge_scores(g)))
}

/// Holds a node dataset's graph and cached structural scores for repeated
/// preparation.
pub struct NodeContext<'a> {
    pub dataset: &'a NodeDataset,
    pub graph: Arc<SparseGraph>,
    pub structural: Option<Arc<Vec<f64>>>,
}

impl<'a> NodeContext<'a> {
    pub fn new(net: &Network, dataset: &'a NodeDataset) -> Self {
        let graph = Arc::new(dataset.graph.clone());
        let structural = structural_cache(net, &graph);
        NodeContext {
            dataset,
            graph,
            structural,
        }
    }

    pub fn prepare(&self, net: &Network, params: &ParamSet) -> Result<Prepared> {
        net.prepare(
            params,
            self.graph.clone(),
            self.structural.clone(),
            &self.dataset.features,
            Some(&self.dataset.labels.labels),
        )
    }
}

/// Full-batch training on one graph.
pub fn train_node(net: &Network, ds: &NodeDataset, cfg: &TrainConfig, init: Option<ParamSet>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let labels = &ds.labels.labels;
    let train: Vec<(usize, usize)> = ds.masks.train.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| (i, labels[i])).collect();
    let val: Vec<(usize, usize)> = ds.masks.val.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| (i, labels[i])).collect();
    if train.is_empty() {
        return Err(HmhError::EmptyMask("train".into()));
    }
    if val.is_empty() {
        return Err(HmhError::EmptyMask("val".into()));
    }
    let val_rows: Vec<usize> = val.iter().map(|&(i, _)| i).collect();
    let lambda = cfg.lambda_div.unwrap_or_else(|| net.lambda_div());
    let ctx = NodeContext::new(net, ds);
    let mut params = initial_params(net, cfg, init);
    let mut opt = AdamW::new(&params, cfg.lr, cfg.weight_decay);
    let mut tracker = Tracker::new(&params, cfg.patience);
    let mut history = Vec::new();
    let mut prep: Option<Prepared> = None;
    for epoch in 0..cfg.epochs {
        if prep.is_none() || (net.needs_refresh() && epoch % cfg.refresh_every == 0) {
            prep = Some(ctx.prepare(net, &params)?);
        }
        let p = prep.as_ref().unwrap();
        let mut rng = epoch_rng(cfg.seed, epoch, 0);
        let lg = match compute_gradients(net, &params, p, &train, false, lambda, Some(&mut rng)) {
            Ok(lg) => lg,
            Err(e @ HmhError::NonFinite(_)) => return Ok(finish(tracker, history, false, Some(diverge(epoch, e)))),
            Err(e) => return Err(e),
        };
        opt.step(&mut params, &lg.grads);
        if !params.all_finite() {
            let e = HmhError::Divergence {
                epoch,
                reason: "parameters became non-finite".into(),
            };
            return Ok(finish(tracker, history, false, Some(e)));
        }
        let (logits, emb) = forward_eval(net, &params, p, false)?;
        let val_loss = mean_ce(&logits, &val);
        if !val_loss.is_finite() {
            let e = HmhError::Divergence {
                epoch,
                reason: format!("validation loss is {val_loss}"),
            };
            return Ok(finish(tracker, history, false, Some(e)));
        }
        let val_metric = evaluate_logits(&logits, labels, &val_rows, cfg.metric)?;
        let energy = (emb.rows() == ds.graph.n()).then(|| dirichlet_energy(&ds.graph, &emb));
        let stop = tracker.observe(epoch, val_loss, &params);
        history.push(HistoryRow {
            epoch,
            train_loss: lg.loss,
            val_loss,
            val_metric,
            dirichlet_energy: energy,
            best_val_loss: tracker.best,
        });
        if stop {
            return Ok(finish(tracker, history, true, None));
        }
    }
    Ok(finish(tracker, history, false, None))
}

/// Logits for every node after preparing the model with `params`.
pub fn predict_node(net: &Network, params: &ParamSet, ds: &NodeDataset) -> Result<Matrix> {
    let ctx = NodeContext::new(net, ds);
    let prep = ctx.prepare(net, params)?;
    net.predict(params, &prep, false)
}

pub fn evaluate_node(net: &Network, params: &ParamSet, ds: &NodeDataset, mask: &[bool], metric: Metric) -> Result<f64> {
    let rows: Vec<usize> = (0..mask.len()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(HmhError::EmptyMask("evaluation".into()));
    }
    let logits = predict_node(net, params, ds)?;
    evaluate_logits(&logits, &ds.labels.labels, &rows, metric)
}

/// Per-graph graphs and structural caches for a graph dataset.
pub struct GraphContext<'a> {
    pub dataset: &'a GraphDataset,
    pub graphs: Vec<Arc<SparseGraph>>,
    pub structural: Vec<Option<Arc<Vec<f64>>>>,
}

impl<'a> GraphContext<'a> {
    pub fn new(net: &Network, dataset: &'a GraphDataset) -> Self {
        let graphs: Vec<Arc<SparseGraph>> = dataset.graphs.iter().map(|s| Arc::new(s.graph.clone())).collect();
        let structural = graphs.iter().map(|g| structural_cache(net, g)).collect();
        GraphContext {
            dataset,
            graphs,
            structural,
        }
    }

    pub fn prepare(&self, net: &Network, params: &ParamSet, i: usize) -> Result<Prepared> {
        net.prepare(params, self.graphs[i].clone(), self.structural[i].clone(), &self.dataset.graphs[i].features, None)
    }

    pub fn prepare_all(&self, net: &Network, params: &ParamSet, threads: usize) -> Result<Vec<Prepared>> {
        let idx: Vec<usize> = (0..self.graphs.len()).collect();
        par_map(&idx, threads, |&i| self.prepare(net, params, i)).into_iter().collect()
    }
}

fn graph_logits(net: &Network, params: &ParamSet, preps: &[Prepared], idx: &[usize], threads: usize) -> Result<Matrix> {
    let rows: Vec<Result<Matrix>> = par_map(idx, threads, |&i| net.predict(params, &preps[i], true));
    let mut out: Option<Matrix> = None;
    for (r, m) in rows.into_iter().enumerate() {
        let m = m?;
        let o = out.get_or_insert_with(|| Matrix::zeros(idx.len(), m.cols()));
        o.row_mut(r).copy_from_slice(m.row(0));
    }
    out.ok_or_else(|| HmhError::EmptyMask("graph evaluation".into()))
}

/// Mini-batch training over a list of graphs with a graph-level readout.
pub fn train_graphs(net: &Network, ds: &GraphDataset, cfg: &TrainConfig, init: Option<ParamSet>) -> Result<TrainOutcome> {
    cfg.validate()?;
    ds.validate()?;
    if ds.train.is_empty() {
        return Err(HmhError::EmptyMask("train".into()));
    }
    if ds.val.is_empty() {
        return Err(HmhError::EmptyMask("val".into()));
    }
    let threads = cfg.workers();
    let lambda = cfg.lambda_div.unwrap_or_else(|| net.lambda_div());
    let ctx = GraphContext::new(net, ds);
    let mut params = initial_params(net, cfg, init);
    let mut opt = AdamW::new(&params, cfg.lr, cfg.weight_decay);
    let mut tracker = Tracker::new(&params, cfg.patience);
    let mut history = Vec::new();
    let mut preps: Vec<Prepared> = Vec::new();
    let val_labels: Vec<usize> = ds.val.iter().map(|&i| ds.graphs[i].label).collect();
    let val_targets: Vec<(usize, usize)> = val_labels.iter().cloned().enumerate().collect();
    let val_rows: Vec<usize> = (0..ds.val.len()).collect();
    let mut order = ds.train.clone();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5DEE_CE66_D1CE_4E5B);
    for epoch in 0..cfg.epochs {
        if preps.is_empty() || (net.needs_refresh() && epoch % cfg.refresh_every == 0) {
            preps = ctx.prepare_all(net, &params, threads)?;
        }
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = par_map(batch, threads, |&i| {
                let mut rng = epoch_rng(cfg.seed, epoch, i);
                compute_gradients(net, &params, &preps[i], &[(0, ds.graphs[i].label)], true, lambda, Some(&mut rng))
            });
            let inv = 1.0 / batch.len() as f64;
            let mut grads = params.zeros_like();
            for r in results {
                let lg = match r {
                    Ok(lg) => lg,
                    Err(e @ HmhError::NonFinite(_)) => return Ok(finish(tracker, history, false, Some(diverge(epoch, e)))),
                    Err(e) => return Err(e),
                };
                loss_sum += lg.loss;
                for (acc, g) in grads.values_mut().iter_mut().zip(lg.grads.values()) {
                    acc.axpy(inv, g);
                }
            }
            opt.step(&mut params, &grads);
            if !params.all_finite() {
                let e = HmhError::Divergence {
                    epoch,
                    reason: "parameters became non-finite".into(),
                };
                return Ok(finish(tracker, history, false, Some(e)));
            }
        }
        let logits = graph_logits(net, &params, &preps, &ds.val, threads)?;
        let val_loss = mean_ce(&logits, &val_targets);
        if !val_loss.is_finite() {
            let e = HmhError::Divergence {
                epoch,
                reason: format!("validation loss is {val_loss}"),
            };
            return Ok(finish(tracker, history, false, Some(e)));
        }
        let val_metric = evaluate_logits(&logits, &val_labels, &val_rows, cfg.metric)?;
        let stop = tracker.observe(epoch, val_loss, &params);
        history.push(HistoryRow {
            epoch,
            train_loss: loss_sum / order.len() as f64,
            val_loss,
            val_metric,
            dirichlet_energy: None,
            best_val_loss: tracker.best,
        });
        if stop {
            return Ok(finish(tracker, history, true, None));
        }
    }
    Ok(finish(tracker, history, false, None))
}

/// One logit row per graph in `idx`, each prepared with `params`.
pub fn predict_graphs(net: &Network, params: &ParamSet, ds: &GraphDataset, idx: &[usize], threads: usize) -> Result<Matrix> {
    let ctx = GraphContext::new(net, ds);
    let preps: Vec<Result<Prepared>> = par_map(idx, threads, |&i| ctx.prepare(net, params, i));
    let mut local = Vec::with_capacity(idx.len());
    for p in preps {
        local.push(p?);
    }
    let pos: Vec<usize> = (0..idx.len()).collect();
    graph_logits(net, params, &local, &pos, threads)
}

pub fn evaluate_graphs(net: &Network, params: &ParamSet, ds: &GraphDataset, idx: &[usize], metric: Metric, threads: usize) -> Result<f64> {
    if idx.is_empty() {
        return Err(HmhError::EmptyMask("evaluation".into()));
    }
    let logits = predict_graphs(net, params, ds, idx, threads)?;
    let labels: Vec<usize> = idx.iter().map(|&i| ds.graphs[i].label).collect();
    let rows: Vec<usize> = (0..idx.len()).collect();
    evaluate_logits(&logits, &labels, &rows, metric)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_block(v: Matrix) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("w", v);
        p
    }

    #[test]
    fn adam_zero_gradient_is_identity_without_decay() {
        let mut p = one_block(Matrix::from_rows(&[vec![1.0, -2.0]]));
        let before = p.clone();
        let mut opt = AdamW::new(&p, 0.1, 0.0);
        opt.step(&mut p, &before.zeros_like());
        assert_eq!(p.values()[0], before.values()[0]);
    }

    #[test]
    fn adam_decay_is_decoupled() {
        let mut p = one_block(Matrix::from_rows(&[vec![1.0, -2.0]]));
        let zero = p.zeros_like();
        let mut opt = AdamW::new(&p, 0.1, 0.5);
        opt.step(&mut p, &zero);
        let d = p.values()[0].data();
        assert!((d[0] - 0.95).abs() < 1e-15 && (d[1] + 1.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_hand_computed() {
        // m̂ = g, v̂ = g², so the step is lr·g/(|g|+eps)
        let mut p = one_block(Matrix::from_rows(&[vec![0.0, 0.0]]));
        let g = one_block(Matrix::from_rows(&[vec![3.0, -0.5]]));
        let mut opt = AdamW::new(&p, 0.01, 0.0);
        opt.step(&mut p, &g);
        let want = [-0.01 * 3.0 / (3.0 + 1e-8), 0.01 * 0.5 / (0.5 + 1e-8)];
        for (a, b) in p.values()[0].data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn fd_check_exact_on_quadratic() {
        let p = one_block(Matrix::from_rows(&[vec![0.3, -1.2, 2.0]]));
        let loss = |q: &ParamSet| q.values()[0].data().iter().map(|x| 1.5 * x * x - x).sum::<f64>();
        let grad = one_block(p.values()[0].map(|x| 3.0 * x - 1.0));
        let r = finite_difference_check(&p, &grad, loss, 1e-5, 1e-10);
        assert!(r.passed, "{r:?}");
        let doubled = one_block(grad.values()[0].scale(2.0));
        assert!(!finite_difference_check(&p, &doubled, loss, 1e-5, 1e-4).passed);
    }

    #[test]
    fn par_map_keeps_order() {
        let items: Vec<usize> = (0..17).collect();
        assert_eq!(par_map(&items, 4, |&x| x * x), items.iter().map(|x| x * x).collect::<Vec<_>>());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let c = TrainConfig {
            lr: 0.0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = TrainConfig {
            patience: 300,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
