//! The pathology experiments. Every suite returns a plot-ready CSV body and a
//! JSON summary carrying its pass/fail verdict.

use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::generators::*;
use crate::autodiff::{Tape, Var};
use crate::basis::{coarsest_basis, hop_energy_profile, level_basis, ColumnKind, FilterGains, HaarBasis};
use crate::encoder::{encoder_forward, structural_edge_scores, EncoderLayer, EncoderParams, SimilarityNorm};
use crate::error::{HmhError, Result};
use crate::graph::{normalized_laplacian, LabelVector, Masks, NodeDataset, NodeId, SparseGraph};
use crate::hierarchy::{Affinity, HierarchyConfig};
use crate::matrix::Matrix;
use crate::metrics::{degree_stratified_accuracy, dirichlet_energy, separation_ratio, CohortAccuracy, Metric};
use crate::model::baselines::{gcn_forward, shifted_laplacian, smp_forward};
use crate::model::{BaselineConfig, HmhConfig, ModelKind, Network, ParamSet, Prepared, Readout};
use crate::train::{compute_gradients, evaluate_graphs, predict_node, train_graphs, train_node, TrainConfig};

#[derive(Clone, Debug, Serialize)]
pub struct SuiteReport {
    pub suite: String,
    pub csv: String,
    pub summary: serde_json::Value,
    pub passed: bool,
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------- hub

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HubSuiteConfig {
    pub generator: HubSpokeConfig,
    pub seeds: usize,
    /// Degree cohorts: spokes `d ≤ lo`, hubs `d > hi`.
    pub thresholds: (usize, usize),
    pub train: TrainConfig,
    pub hmh: HmhConfig,
    pub gcn: BaselineConfig,
    pub separation: SeparationConfig,
}

impl Default for HubSuiteConfig {
    fn default() -> Self {
        HubSuiteConfig {
            generator: HubSpokeConfig::default(),
            seeds: 10,
            thresholds: (8, 12),
            train: TrainConfig {
                lr: 0.01,
                epochs: 300,
                patience: 100,
                ..Default::default()
            },
            hmh: HmhConfig {
                hidden: 32,
                encoder_dims: vec![32],
                hierarchy: HierarchyConfig {
                    ratio: 0.05,
                    affinity: Affinity::NegSqDistance,
                    ..Default::default()
                },
                ..Default::default()
            },
            gcn: BaselineConfig {
                hidden: 32,
                ..Default::default()
            },
            separation: SeparationConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HubSeedResult {
    pub seed: u64,
    pub model: ModelKind,
    pub overall: f64,
    pub cohorts: CohortAccuracy,
}

/// Test-set cohort accuracies of a trained model.
pub fn hub_seed(cfg: &HubSuiteConfig, seed: u64, kind: ModelKind) -> Result<HubSeedResult> {
    let gen = HubSpokeConfig {
        seed,
        ..cfg.generator.clone()
    };
    let data = gen_hub_spoke(&gen)?;
    let ds = &data.dataset;
    let net = Network::build(kind, &cfg.hmh, &cfg.gcn, ds.features.cols(), 3, ds.graph.n())?;
    let tc = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let out = train_node(&net, ds, &tc, None)?;
    if let Some(e) = out.divergence {
        return Err(e);
    }
    let logits = predict_node(&net, &out.params, ds)?;
    let test = Masks::indices(&ds.masks.test);
    let preds: Vec<usize> = test.iter().map(|&i| logits.row_argmax(i)).collect();
    let labels: Vec<usize> = test.iter().map(|&i| ds.labels.labels[i]).collect();
    let degrees: Vec<usize> = test.iter().map(|&i| ds.graph.degree(i)).collect();
    let cohorts = degree_stratified_accuracy(&preds, &labels, &degrees, cfg.thresholds)?;
    let overall = preds.iter().zip(&labels).filter(|(p, l)| p == l).count() as f64 / test.len() as f64;
    Ok(HubSeedResult {
        seed,
        model: kind,
        overall,
        cohorts,
    })
}

pub fn run_hub(cfg: &HubSuiteConfig) -> Result<SuiteReport> {
    let mut rows = Vec::new();
    for s in 0..cfg.seeds as u64 {
        let seed = cfg.generator.seed + s;
        rows.push(hub_seed(cfg, seed, ModelKind::Gcn)?);
        rows.push(hub_seed(cfg, seed, ModelKind::Hmh)?);
    }
    let mut csv = String::from("seed,model,overall,spoke,medium,hub,n_spoke,n_medium,n_hub\n");
    for r in &rows {
        let c = &r.cohorts;
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.seed,
            serde_json::to_value(r.model).unwrap().as_str().unwrap(),
            r.overall,
            csv_opt(c.low),
            csv_opt(c.mid),
            csv_opt(c.high),
            c.counts[0],
            c.counts[1],
            c.counts[2]
        ));
    }
    let verdict = hub_verdict(&rows);
    let sep = theorem_separation(&cfg.separation)?;
    let passed = verdict.passed;
    let summary = json!({
        "gcn_spoke_mean": verdict.gcn_spoke_mean,
        "gcn_hub_mean": verdict.gcn_hub_mean,
        "gcn_hub_minus_spoke_points": verdict.gap_points,
        "hmh_spoke_mean": verdict.hmh_spoke_mean,
        "hmh_spoke_ge_gcn_seeds": verdict.hmh_wins,
        "seeds": verdict.seeds,
        "criteria": {
            "gcn_gap_at_least_5_points": verdict.gap_points >= 5.0,
            "hmh_spoke_ge_gcn_on_8_of_10": verdict.hmh_wins * 10 >= 8 * verdict.seeds,
        },
        "separation": sep,
        "passed": passed,
    });
    Ok(SuiteReport {
        suite: "hub".into(),
        csv,
        summary,
        passed,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct HubVerdict {
    pub seeds: usize,
    pub gcn_spoke_mean: f64,
    pub gcn_hub_mean: f64,
    pub gap_points: f64,
    pub hmh_spoke_mean: f64,
    pub hmh_wins: usize,
    pub passed: bool,
}

/// Averages over seeds; a seed missing a cohort is skipped for that mean.
pub fn hub_verdict(rows: &[HubSeedResult]) -> HubVerdict {
    let pick = |kind: ModelKind, f: &dyn Fn(&CohortAccuracy) -> Option<f64>| -> Vec<(u64, Option<f64>)> {
        rows.iter().filter(|r| r.model == kind).map(|r| (r.seed, f(&r.cohorts))).collect()
    };
    let mean = |v: &[(u64, Option<f64>)]| {
        let xs: Vec<f64> = v.iter().filter_map(|x| x.1).collect();
        if xs.is_empty() {
            f64::NAN
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    let gcn_spoke = pick(ModelKind::Gcn, &|c| c.low);
    let gcn_hub = pick(ModelKind::Gcn, &|c| c.high);
    let hmh_spoke = pick(ModelKind::Hmh, &|c| c.low);
    let hmh_wins = gcn_spoke
        .iter()
        .filter(|(seed, g)| {
            let h = hmh_spoke.iter().find(|x| x.0 == *seed).and_then(|x| x.1);
            matches!((h, g), (Some(h), Some(g)) if h >= *g)
        })
        .count();
    let seeds = gcn_spoke.len();
    let gap_points = 100.0 * (mean(&gcn_hub) - mean(&gcn_spoke));
    HubVerdict {
        seeds,
        gcn_spoke_mean: mean(&gcn_spoke),
        gcn_hub_mean: mean(&gcn_hub),
        gap_points,
        hmh_spoke_mean: mean(&hmh_spoke),
        hmh_wins,
        passed: gap_points >= 5.0 && hmh_wins * 10 >= 8 * seeds,
    }
}

// ------------------------------------------------- separation bound

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SeparationConfig {
    pub kappa: f64,
    pub m: usize,
    pub a: usize,
    pub b: usize,
    pub d: usize,
    /// Feature perturbation before renormalising; 0 gives exact class means.
    pub noise: f64,
    pub lambda_sc: f64,
    pub lambda_wav: f64,
    pub seed: u64,
}

impl Default for SeparationConfig {
    fn default() -> Self {
        SeparationConfig {
            kappa: 0.8,
            m: 100,
            a: 5,
            b: 5,
            d: 8,
            noise: 0.0,
            lambda_sc: 0.1,
            lambda_wav: 10.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeparationReport {
    /// `Δ_AB / Δ_AH` after filtering.
    pub ratio: f64,
    /// The same ratio on the unfiltered features.
    pub input_ratio: f64,
    /// `√M (1 − 2/√M)`.
    pub bound: f64,
    pub passed: bool,
}

/// Unit features with signed margin κ on three groups, filtered in the Haar
/// basis whose clusters are exactly A, B, and the hub, with the scaling
/// column at `lambda_sc` and every wavelet at `lambda_wav`.
pub fn theorem_separation(cfg: &SeparationConfig) -> Result<SeparationReport> {
    let gen = HubSpokeConfig {
        a: cfg.a,
        b: cfg.b,
        m: cfg.m,
        kappa: cfg.kappa,
        d: cfg.d,
        p_intra: 0.0,
        p_spoke_hub: 0.0,
        noise: cfg.noise,
        seed: cfg.seed,
        ..Default::default()
    };
    let hs = gen_hub_spoke(&gen)?;
    let x = &hs.dataset.features;
    let hard = hs.dataset.labels.labels.clone();
    let top = coarsest_basis(3, 1);
    let basis = level_basis(&hard, 3, &top.column_dense(0), 0)?;
    let gains = FilterGains::tied(&basis, cfg.lambda_sc, cfg.lambda_wav, cfg.lambda_wav);
    let h = basis.filter(&gains.column_gains(), x)?;
    let ratio = separation_ratio(&h, &hs.group_a, &hs.group_b, &hs.hub)?;
    let input_ratio = separation_ratio(x, &hs.group_a, &hs.group_b, &hs.hub)?;
    let sm = (cfg.m as f64).sqrt();
    let bound = sm * (1.0 - 2.0 / sm);
    Ok(SeparationReport {
        ratio,
        input_ratio,
        bound,
        passed: ratio >= bound,
    })
}

// ------------------------------------------------------- depth

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSuiteConfig {
    pub sbm: SbmConfig,
    pub gcn_depth: usize,
    pub hmh: HmhConfig,
    pub seed: u64,
}

impl Default for DepthSuiteConfig {
    fn default() -> Self {
        DepthSuiteConfig {
            sbm: SbmConfig {
                sizes: vec![200, 200],
                p_in: 0.05,
                p_out: 0.01,
                d: 16,
                ..Default::default()
            },
            gcn_depth: 16,
            hmh: HmhConfig {
                hidden: 16,
                encoder_dims: vec![16],
                hierarchy: HierarchyConfig {
                    coarsen_to_one: true,
                    ..Default::default()
                },
                ..Default::default()
            },
            seed: 0,
        }
    }
}

/// Dirichlet energy of identity-weight linear GCN outputs at depths
/// `1..=depth`.
pub fn gcn_energy_by_depth(g: &SparseGraph, x: &Matrix, depth: usize) -> Result<Vec<f64>> {
    let eye = Matrix::identity(x.cols());
    let weights = vec![eye; depth];
    Ok(gcn_forward(g, x, &weights, false)?.iter().map(|h| dirichlet_energy(g, h)).collect())
}

/// Energy of `Y⁰ + Σ_{ℓ ≤ k} (ancestor summaries)` for `k = 0..L-1`, all
/// from one randomly initialised model.
pub fn hmh_energy_by_depth(cfg: &HmhConfig, ds: &NodeDataset, seed: u64) -> Result<Vec<f64>> {
    let net = Network::build(ModelKind::Hmh, cfg, &BaselineConfig::default(), ds.features.cols(), ds.labels.num_classes, ds.graph.n())?;
    let Network::Hmh(model) = &net else { unreachable!() };
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(seed));
    let g = Arc::new(ds.graph.clone());
    let prep = model.prepare(&params, g.clone(), None, &ds.features)?;
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.values().iter().map(|m| tape.constant(m.clone())).collect();
    let f = model.forward(&mut tape, &params, &vars, &prep, false, None)?;
    let mut acc = tape.value(f.projected[0]).clone();
    let mut out = vec![dirichlet_energy(&g, &acc)];
    for ell in 1..prep.depth() {
        let y = tape.value(f.projected[ell]);
        for (i, &p) in prep.ancestors[ell].iter().enumerate() {
            for (a, v) in acc.row_mut(i).iter_mut().zip(y.row(p)) {
                *a += v;
            }
        }
        out.push(dirichlet_energy(&g, &acc));
    }
    Ok(out)
}

pub fn run_depth(cfg: &DepthSuiteConfig) -> Result<SuiteReport> {
    let sbm = SbmConfig {
        seed: cfg.seed,
        ..cfg.sbm.clone()
    };
    let ds = gen_sbm(&sbm)?;
    let gcn = gcn_energy_by_depth(&ds.graph, &ds.features, cfg.gcn_depth)?;
    let hmh = hmh_energy_by_depth(&cfg.hmh, &ds, cfg.seed)?;
    let mut csv = String::from("model,depth,energy,ratio_to_first\n");
    for (k, e) in gcn.iter().enumerate() {
        csv.push_str(&format!("gcn,{},{},{}\n", k + 1, e, e / gcn[0]));
    }
    for (k, e) in hmh.iter().enumerate() {
        csv.push_str(&format!("hmh,{},{},{}\n", k + 1, e, e / hmh[0]));
    }
    let gcn_ratio = gcn[gcn.len() - 1] / gcn[0];
    let hmh_ratio = hmh[hmh.len() - 1] / hmh[0];
    let gcn_ok = gcn_ratio <= 1e-2;
    let hmh_ok = hmh_ratio >= 0.3;
    let summary = json!({
        "gcn_depth": cfg.gcn_depth,
        "gcn_energy_ratio": gcn_ratio,
        "hmh_levels": hmh.len(),
        "hmh_energy_ratio": hmh_ratio,
        "criteria": {"gcn_ratio_at_most_1e-2": gcn_ok, "hmh_ratio_at_least_0.3": hmh_ok},
        "passed": gcn_ok && hmh_ok,
    });
    Ok(SuiteReport {
        suite: "depth".into(),
        csv,
        summary,
        passed: gcn_ok && hmh_ok,
    })
}

// ------------------------------------------------------- squash

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SquashSuiteConfig {
    pub depths: Vec<usize>,
    pub tree: TreeMatchConfig,
    pub train: TrainConfig,
    pub hmh: HmhConfig,
    /// Hidden width of the GCN; it gets `depth + 1` layers and a root readout.
    pub gcn_hidden: usize,
}

impl Default for SquashSuiteConfig {
    fn default() -> Self {
        SquashSuiteConfig {
            depths: vec![4],
            tree: TreeMatchConfig::default(),
            train: TrainConfig {
                lr: 0.003,
                epochs: 150,
                patience: 40,
                refresh_every: 25,
                ..Default::default()
            },
            hmh: HmhConfig {
                hidden: 64,
                encoder_dims: vec![16],
                dropout: 0.0,
                hierarchy: HierarchyConfig {
                    coarsen_to_one: true,
                    ..Default::default()
                },
                ..Default::default()
            },
            gcn_hidden: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SquashResult {
    pub depth: usize,
    pub model: ModelKind,
    pub test_accuracy: f64,
    pub epochs_run: usize,
}

pub fn squash_depth(cfg: &SquashSuiteConfig, depth: usize, kind: ModelKind) -> Result<SquashResult> {
    let tree = TreeMatchConfig {
        depth,
        ..cfg.tree.clone()
    };
    let ds = gen_tree_neighborsmatch(&tree)?;
    let d = ds.graphs[0].features.cols();
    let n = ds.graphs[0].graph.n();
    let gcn = BaselineConfig {
        layers: depth + 1,
        hidden: cfg.gcn_hidden,
        dropout: 0.0,
        readout: Readout::Root,
        ..Default::default()
    };
    let net = Network::build(kind, &cfg.hmh, &gcn, d, tree.num_classes, n)?;
    let out = train_graphs(&net, &ds, &cfg.train, None)?;
    if let Some(e) = out.divergence {
        return Err(e);
    }
    let acc = evaluate_graphs(&net, &out.params, &ds, &ds.test, Metric::Accuracy, cfg.train.threads)?;
    Ok(SquashResult {
        depth,
        model: kind,
        test_accuracy: acc,
        epochs_run: out.history.len(),
    })
}

pub fn run_squash(cfg: &SquashSuiteConfig) -> Result<SuiteReport> {
    let mut rows = Vec::new();
    for &depth in &cfg.depths {
        rows.push(squash_depth(cfg, depth, ModelKind::Hmh)?);
        rows.push(squash_depth(cfg, depth, ModelKind::Gcn)?);
    }
    let mut csv = String::from("model,depth,test_accuracy,epochs\n");
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            serde_json::to_value(r.model).unwrap().as_str().unwrap(),
            r.depth,
            r.test_accuracy,
            r.epochs_run
        ));
    }
    let at4 = |k: ModelKind| rows.iter().find(|r| r.depth == 4 && r.model == k).map(|r| r.test_accuracy);
    let hmh_ok = at4(ModelKind::Hmh).map(|a| a >= 0.90);
    let gcn_ok = at4(ModelKind::Gcn).map(|a| a <= 0.70);
    let passed = hmh_ok == Some(true) && gcn_ok == Some(true);
    let summary = json!({
        "results": rows,
        "criteria": {"hmh_depth4_at_least_0.90": hmh_ok, "gcn_depth4_at_most_0.70": gcn_ok},
        "passed": passed,
    });
    Ok(SuiteReport {
        suite: "squash".into(),
        csv,
        summary,
        passed,
    })
}

// ------------------------------------------------------ scaling

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalingSuiteConfig {
    /// Target edge counts, ascending.
    pub edges: Vec<usize>,
    pub nodes: usize,
    pub blocks: usize,
    /// `p_in / p_out`.
    pub homophily_ratio: f64,
    pub d: usize,
    pub repeats: usize,
    pub hmh: HmhConfig,
    pub seed: u64,
}

impl Default for ScalingSuiteConfig {
    fn default() -> Self {
        ScalingSuiteConfig {
            edges: vec![100_000, 1_000_000],
            nodes: 3000,
            blocks: 2,
            homophily_ratio: 4.0,
            d: 16,
            repeats: 3,
            hmh: HmhConfig {
                hidden: 16,
                encoder_dims: vec![16],
                dropout: 0.0,
                hierarchy: HierarchyConfig {
                    ratio: 0.02,
                    h_t: 10,
                    affinity: Affinity::NegSqDistance,
                    ..Default::default()
                },
                ..Default::default()
            },
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingRow {
    pub target_edges: usize,
    pub edges: usize,
    pub nodes: usize,
    pub median_ms: f64,
    pub ms_per_medge: f64,
    pub samples_ms: Vec<f64>,
    pub level_sizes: Vec<usize>,
    pub basis_nnz: usize,
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// A prepared SBM instance ready to be timed.
pub struct ScalingCase {
    target: usize,
    edges: usize,
    nodes: usize,
    net: Network,
    params: ParamSet,
    prep: Prepared,
    targets: Vec<(usize, usize)>,
}

impl ScalingCase {
    /// Builds the SBM with `target` expected edges and its hierarchy; none of
    /// this is timed.
    pub fn build(cfg: &ScalingSuiteConfig, target: usize) -> Result<ScalingCase> {
        let sizes = vec![cfg.nodes / cfg.blocks; cfg.blocks];
        let (p_in, p_out) = sbm_probabilities(&sizes, target as f64, cfg.homophily_ratio)?;
        let ds = gen_sbm(&SbmConfig {
            sizes,
            p_in,
            p_out,
            d: cfg.d,
            seed: cfg.seed,
            ..Default::default()
        })?;
        let n = ds.graph.n();
        let net = Network::build(ModelKind::Hmh, &cfg.hmh, &BaselineConfig::default(), cfg.d, cfg.blocks, n)?;
        let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
        let g = Arc::new(ds.graph.clone());
        let structural = Some(Arc::new(structural_edge_scores(&g)));
        let prep = net.prepare(&params, g, structural, &ds.features, None)?;
        Ok(ScalingCase {
            target,
            edges: ds.graph.num_edges(),
            nodes: n,
            net,
            params,
            prep,
            targets: (0..n).map(|i| (i, ds.labels.labels[i])).collect(),
        })
    }

    /// One forward+backward pass over all nodes.
    pub fn pass(&self) -> Result<()> {
        let lambda = self.net.lambda_div();
        compute_gradients(&self.net, &self.params, &self.prep, &self.targets, false, lambda, None).map(|_| ())
    }

    pub fn time(&self, repeats: usize) -> Result<ScalingRow> {
        if repeats == 0 {
            return Err(HmhError::InvalidParameter("repeats must be at least 1".into()));
        }
        let mut samples = Vec::with_capacity(repeats);
        for _ in 0..repeats {
            let t = Instant::now();
            self.pass()?;
            samples.push(t.elapsed().as_secs_f64() * 1000.0);
        }
        let mut sorted = samples.clone();
        let med = median(&mut sorted);
        let (level_sizes, basis_nnz) = match &self.prep {
            Prepared::Hmh(p) => (p.tree.sizes(), p.bases.iter().map(|b| b.nnz()).sum()),
            Prepared::Baseline(_) => unreachable!("scaling cases are HMH"),
        };
        Ok(ScalingRow {
            target_edges: self.target,
            edges: self.edges,
            nodes: self.nodes,
            median_ms: med,
            ms_per_medge: med / (self.edges as f64 / 1e6),
            samples_ms: samples,
            level_sizes,
            basis_nnz,
        })
    }
}

/// Median time of one forward+backward pass on a single SBM size, after one
/// discarded warm-up pass.
pub fn time_epoch(cfg: &ScalingSuiteConfig, target: usize) -> Result<ScalingRow> {
    let case = ScalingCase::build(cfg, target)?;
    case.pass()?;
    case.time(cfg.repeats)
}

pub fn run_scaling(cfg: &ScalingSuiteConfig) -> Result<SuiteReport> {
    if cfg.edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HmhError::InvalidParameter("scaling sizes must be ascending".into()));
    }
    if cfg.repeats == 0 {
        return Err(HmhError::InvalidParameter("repeats must be at least 1".into()));
    }
    // every size is built and warmed up before any is timed, so all of them
    // run with the allocator already sized for the largest
    let cases: Vec<ScalingCase> = cfg.edges.iter().map(|&m| ScalingCase::build(cfg, m)).collect::<Result<_>>()?;
    for c in cases.iter().rev() {
        c.pass()?;
    }
    let rows: Vec<ScalingRow> = cases.iter().map(|c| c.time(cfg.repeats)).collect::<Result<_>>()?;
    let mut csv = String::from("target_edges,edges,nodes,median_ms,ms_per_medge\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{},{}\n", r.target_edges, r.edges, r.nodes, r.median_ms, r.ms_per_medge));
    }
    let hi = rows.iter().map(|r| r.ms_per_medge).fold(f64::NEG_INFINITY, f64::max);
    let lo = rows.iter().map(|r| r.ms_per_medge).fold(f64::INFINITY, f64::min);
    let spread = hi / lo;
    let passed = spread <= 2.0;
    let summary = json!({
        "rows": rows,
        "ms_per_medge_spread": spread,
        "criteria": {"spread_at_most_2": passed},
        "passed": passed,
    });
    Ok(SuiteReport {
        suite: "scaling".into(),
        csv,
        summary,
        passed,
    })
}

// ----------------------------------------------------- locality

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalitySuiteConfig {
    pub cliques: usize,
    pub clique_size: usize,
    /// Scale of the community indicator in the node features.
    pub signal: f64,
    pub noise: f64,
    pub max_hops: usize,
    pub hmh: HmhConfig,
    pub seed: u64,
}

impl Default for LocalitySuiteConfig {
    fn default() -> Self {
        LocalitySuiteConfig {
            cliques: 8,
            clique_size: 6,
            signal: 3.0,
            noise: 0.1,
            max_hops: 4,
            hmh: HmhConfig {
                hidden: 8,
                encoder_dims: vec![8],
                hierarchy: HierarchyConfig {
                    ratio: 1.0 / 6.0,
                    h_t: 2,
                    affinity: Affinity::NegSqDistance,
                    ..Default::default()
                },
                ..Default::default()
            },
            seed: 0,
        }
    }
}

/// Cliques of `size` arranged in a ring, clique `k` joined to clique `k+1`
/// by one edge from its last node to the next clique's first node.
pub fn ring_of_cliques(cliques: usize, size: usize) -> SparseGraph {
    let n = cliques * size;
    let mut edges = Vec::new();
    for k in 0..cliques {
        let base = k * size;
        for u in 0..size {
            for v in u + 1..size {
                edges.push(((base + u) as NodeId, (base + v) as NodeId));
            }
        }
        if cliques > 1 {
            edges.push(((base + size - 1) as NodeId, (((k + 1) % cliques) * size) as NodeId));
        }
    }
    SparseGraph::build(n, &edges, None).expect("ring edges are valid")
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ColumnLocality {
    pub level: usize,
    pub column: usize,
    pub kind: String,
    pub shells: Vec<f64>,
}

impl ColumnLocality {
    pub fn within(&self, hops: usize) -> f64 {
        self.shells[..=hops.min(self.shells.len() - 1)].iter().sum()
    }
}

fn kind_name(k: ColumnKind) -> String {
    match k {
        ColumnKind::Scaling => "scaling".into(),
        ColumnKind::Inter => "inter".into(),
        ColumnKind::Intra { cluster } => format!("intra{cluster}"),
    }
}

/// Hop-energy profile of every basis column, each on its own level graph.
pub fn basis_locality(graphs: &[Arc<SparseGraph>], bases: &[Arc<HaarBasis>], max_hops: usize) -> Result<Vec<ColumnLocality>> {
    let mut out = Vec::new();
    for (ell, b) in bases.iter().enumerate() {
        for c in 0..b.num_columns() {
            out.push(ColumnLocality {
                level: ell,
                column: c,
                kind: kind_name(b.kinds[c]),
                shells: hop_energy_profile(&graphs[ell], &b.column_dense(c), max_hops)?,
            });
        }
    }
    Ok(out)
}

/// Whether every intra-cluster column is supported inside its cluster.
pub fn intra_support_exact(basis: &HaarBasis, hard: &[usize]) -> bool {
    (0..basis.num_columns()).all(|c| match basis.kinds[c] {
        ColumnKind::Intra { cluster } => basis.column(c).all(|(i, _)| hard[i] == cluster),
        _ => true,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChebDensity {
    pub nodes: usize,
    pub anchor: usize,
    pub order: usize,
    /// Nonzero fraction of each orthonormalised column, orders `0..=order`.
    pub densities: Vec<f64>,
}

impl ChebDensity {
    pub fn top_order_density(&self) -> f64 {
        *self.densities.last().unwrap()
    }
}

/// Columns `T_r(L − I) e_anchor` for `r = 0..=order`, orthonormalised by
/// modified Gram–Schmidt; an entry counts as nonzero above `1e-8`.
pub fn chebyshev_density(g: &SparseGraph, anchor: usize, order: usize) -> Result<ChebDensity> {
    let n = g.n();
    if anchor >= n {
        return Err(HmhError::NodeOutOfRange { node: anchor as u64, n });
    }
    let lt = shifted_laplacian(g);
    let mut e = Matrix::zeros(n, 1);
    e.set(anchor, 0, 1.0);
    let mut cols: Vec<Matrix> = vec![e.clone()];
    if order >= 1 {
        cols.push(lt.spmm(&e));
    }
    for r in 2..=order {
        let mut next = lt.spmm(&cols[r - 1]).scale(2.0);
        next.axpy(-1.0, &cols[r - 2]);
        cols.push(next);
    }
    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut densities = Vec::new();
    for c in cols {
        let mut v = c.into_data();
        for b in &q {
            let p = crate::matrix::dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        let norm = crate::matrix::dot(&v, &v).sqrt();
        if norm < 1e-12 {
            return Err(HmhError::InvalidParameter("Chebyshev columns are linearly dependent".into()));
        }
        v.iter_mut().for_each(|x| *x /= norm);
        densities.push(v.iter().filter(|x| x.abs() > 1e-8).count() as f64 / n as f64);
        q.push(v);
    }
    Ok(ChebDensity {
        nodes: n,
        anchor,
        order,
        densities,
    })
}

/// The 28-node comparison graph: four 7-cliques in a ring, anchored at a
/// bridge node.
pub fn chebyshev_demo() -> Result<ChebDensity> {
    let g = ring_of_cliques(4, 7);
    chebyshev_density(&g, 6, 4)
}

pub fn locality_dataset(cfg: &LocalitySuiteConfig) -> Result<NodeDataset> {
    let g = ring_of_cliques(cfg.cliques, cfg.clique_size);
    let n = g.n();
    let labels: Vec<usize> = (0..n).map(|i| i / cfg.clique_size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut x = Matrix::zeros(n, cfg.cliques);
    use rand_distr::{Distribution, StandardNormal};
    for i in 0..n {
        for j in 0..cfg.cliques {
            let z: f64 = StandardNormal.sample(&mut rng);
            x.set(i, j, if labels[i] == j { cfg.signal } else { 0.0 } + cfg.noise * z);
        }
    }
    let all: Vec<usize> = (0..n).collect();
    let masks = Masks::from_indices(n, &all, &[], &[])?;
    NodeDataset::new(g, x, LabelVector::new(labels, cfg.cliques)?, masks)
}

pub fn run_locality(cfg: &LocalitySuiteConfig) -> Result<SuiteReport> {
    let ds = locality_dataset(cfg)?;
    let net = Network::build(ModelKind::Hmh, &cfg.hmh, &BaselineConfig::default(), ds.features.cols(), cfg.cliques, ds.graph.n())?;
    let params = net.init_params(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let prep = match net.prepare(&params, Arc::new(ds.graph.clone()), None, &ds.features, None)? {
        Prepared::Hmh(p) => p,
        Prepared::Baseline(_) => unreachable!(),
    };
    let cols = basis_locality(&prep.graphs, &prep.bases, cfg.max_hops)?;
    let mut header = String::from("level,column,kind");
    for h in 0..=cfg.max_hops {
        header.push_str(&format!(",hop{h}"));
    }
    header.push_str(",beyond\n");
    let mut csv = header;
    for c in &cols {
        csv.push_str(&format!("{},{},{}", c.level, c.column, c.kind));
        for s in &c.shells {
            csv.push_str(&format!(",{s}"));
        }
        csv.push('\n');
    }
    let level0: Vec<&ColumnLocality> = cols.iter().filter(|c| c.level == 0 && c.kind != "scaling").collect();
    let mean2 = level0.iter().map(|c| c.within(2)).sum::<f64>() / level0.len().max(1) as f64;
    let support_ok = prep
        .tree
        .levels
        .iter()
        .zip(&prep.bases)
        .all(|(lvl, b)| lvl.assignment.as_ref().is_none_or(|a| intra_support_exact(b, &a.hard)));
    let cheb = chebyshev_demo()?;
    let cheb_ok = cheb.top_order_density() >= 0.90;
    let passed = support_ok && mean2 >= 0.80 && cheb_ok;
    let summary = json!({
        "level_sizes": prep.tree.sizes(),
        "level0_wavelets": level0.len(),
        "level0_mean_energy_within_2_hops": mean2,
        "intra_support_exact": support_ok,
        "chebyshev": cheb,
        "criteria": {
            "intra_support_exact": support_ok,
            "mean_within_2_hops_at_least_0.80": mean2 >= 0.80,
            "chebyshev_density_at_least_0.90": cheb_ok,
        },
        "passed": passed,
    });
    Ok(SuiteReport {
        suite: "locality".into(),
        csv,
        summary,
        passed,
    })
}

// ---------------------------------------------------- sign flip

/// Random perfect matching on `2·pairs` nodes with random labels; every
/// degree is 1, so the signed propagation squares to the identity.
pub fn random_matching(pairs: usize, seed: u64) -> (SparseGraph, Vec<usize>) {
    use rand::seq::SliceRandom;
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = 2 * pairs;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let edges: Vec<(NodeId, NodeId)> = order.chunks(2).map(|p| (p[0] as NodeId, p[1] as NodeId)).collect();
    let labels = (0..n).map(|_| rng.random_range(0..2)).collect();
    (SparseGraph::build(n, &edges, None).expect("matching edges are valid"), labels)
}

/// `max |H^{k+2} − H^{k}|` for linear identity-weight signed propagation.
pub fn smp_two_step_residual(pairs: usize, d: usize, steps: usize, seed: u64) -> Result<f64> {
    let (g, labels) = random_matching(pairs, seed);
    let x = gaussian_matrix(g.n(), d, seed ^ 0xA5A5);
    let weights = vec![Matrix::identity(d); steps];
    let hs = smp_forward(&g, &x, &labels, &weights, true)?;
    let mut all = vec![x];
    all.extend(hs);
    let mut worst: f64 = 0.0;
    for k in 0..all.len().saturating_sub(2) {
        worst = worst.max(all[k + 2].max_abs_diff(&all[k]));
    }
    Ok(worst)
}

fn gaussian_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..rows * cols).map(|_| StandardNormal.sample(&mut rng)).collect();
    Matrix::from_vec(rows, cols, data).expect("shape matches")
}

/// `min_{s=±1} max |Z^{k+2} − s·Z^{k}|` for the linear adaptive encoder with
/// random square weights on a random connected graph, at layer `k = 1`.
pub fn encoder_two_step_residual(n: usize, d: usize, seed: u64) -> Result<f64> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges: Vec<(NodeId, NodeId)> = (1..n).map(|i| ((i - 1) as NodeId, i as NodeId)).collect();
    for _ in 0..n {
        let u = rng.random_range(0..n);
        let v = rng.random_range(0..n);
        if u != v {
            edges.push((u as NodeId, v as NodeId));
        }
    }
    let g = SparseGraph::build(n, &edges, None)?;
    let x = gaussian_matrix(n, d, seed ^ 0x5A5A);
    let layers: Vec<EncoderLayer> = (0..3)
        .map(|k| EncoderLayer {
            w_att: gaussian_matrix(1, 2 * d, seed.wrapping_add(10 + k)).into_data(),
            w: gaussian_matrix(d, d, seed.wrapping_add(20 + k)).scale(1.0 / (d as f64).sqrt()),
        })
        .collect();
    let structural = structural_edge_scores(&g);
    let run = |upto: usize| {
        let p = EncoderParams {
            layers: layers[..upto].to_vec(),
        };
        encoder_forward(&g, &x, &p, &structural, SimilarityNorm::Softmax, false).map(|o| o.z)
    };
    let z1 = run(1)?;
    let z3 = run(3)?;
    let plus = z3.max_abs_diff(&z1);
    let minus = z3.max_abs_diff(&z1.scale(-1.0));
    Ok(plus.min(minus))
}

/// Dirichlet energy sanity helper for external callers: the quadratic form
/// computed densely.
pub fn dense_dirichlet(g: &SparseGraph, h: &Matrix) -> f64 {
    let l = normalized_laplacian(g).to_dense();
    let lh = l.matmul(h);
    lh.data().iter().zip(h.data()).map(|(a, b)| a * b).sum::<f64>() / g.n() as f64
}
