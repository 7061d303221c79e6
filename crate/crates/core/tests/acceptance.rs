//! Acceptance criteria, one test each. Every test prints a single
//! `criterion N [PASS|FAIL]` line and then asserts it. Tests hold a shared
//! lock so that timings (and the scaling measurement in particular) are not
//! skewed by other criteria running concurrently.
//!
//! `cargo test -p hmh-core --test acceptance -- --nocapture` shows the lines.

mod common;

use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use hmh_core::autodiff::Tape;
use hmh_core::bench::{
    encoder_two_step_residual, hub_seed, hub_verdict, run_depth, run_locality, run_scaling, smp_two_step_residual,
    squash_depth, theorem_separation, DepthSuiteConfig, HubSpokeConfig, HubSuiteConfig, LocalitySuiteConfig,
    ScalingSuiteConfig, SeparationConfig, SquashSuiteConfig,
};
use hmh_core::config::{DataSpec, RunConfig, Task};
use hmh_core::hierarchy::{Affinity, HierarchyConfig};
use hmh_core::model::{
    cross_entropy, diversity_loss, loss_on_tape, total_loss, BaselineConfig, GainMode, HmhConfig, ModelKind, Network,
    Prepared,
};
use hmh_core::run::train_run;
use hmh_core::train::check_model_gradients;
use hmh_core::Matrix;
use rand::Rng;

use common::*;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

fn verdict(id: u32, name: &str, passed: bool, detail: String) {
    let tag = if passed { "PASS" } else { "FAIL" };
    println!("criterion {id:>2} [{tag}] {name}: {detail}");
    assert!(passed, "criterion {id} ({name}) failed: {detail}");
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

// ----------------------------------------------------- 1 and 2

const GRAM_TOL: f64 = 1e-10;
const RECON_TOL: f64 = 1e-10;
const ORTHO_GRAPHS: u64 = 50;
const ORTHO_RUNTIME_S: f64 = 60.0;

struct OrthoCase {
    n: usize,
    x: Matrix,
    bases: Vec<Arc<hmh_core::basis::HaarBasis>>,
}

/// Random connected graphs with `n ∈ [16, 512]`, reduction ratio 0.5 and
/// terminal size 4, each basis built under a randomly initialised encoder.
/// Affinities alternate: inner-product clustering tends to leave a few large
/// clusters (dense intra blocks), squared distance gives deep balanced trees.
fn ortho_suite() -> Vec<OrthoCase> {
    let mut r = rng(2024);
    let mut out = Vec::new();
    for s in 0..ORTHO_GRAPHS {
        let n = r.random_range(16..=512);
        let g = Arc::new(connected_random(n, 6.0 / n as f64, s));
        let x = gaussian(n, 6, 1000 + s);
        let cfg = HmhConfig {
            hidden: 8,
            encoder_dims: vec![8],
            hierarchy: HierarchyConfig {
                ratio: 0.5,
                h_t: 4,
                seed: s,
                affinity: if s % 2 == 0 { Affinity::InnerProduct } else { Affinity::NegSqDistance },
                ..Default::default()
            },
            ..Default::default()
        };
        let net = Network::build(ModelKind::Hmh, &cfg, &BaselineConfig::default(), 6, 2, n).unwrap();
        let params = net.init_params(&mut rng(s));
        let Prepared::Hmh(prep) = net.prepare(&params, g, None, &x, None).unwrap() else {
            unreachable!()
        };
        out.push(OrthoCase {
            n,
            x,
            bases: prep.bases.clone(),
        });
    }
    out
}

/// `max |UᵀU − I|` from the dense matrix by explicit column products.
fn dense_gram_residual(u: &Matrix) -> f64 {
    let n = u.rows();
    let mut worst: f64 = 0.0;
    for a in 0..n {
        for b in a..n {
            let dot: f64 = (0..n).map(|i| u.get(i, a) * u.get(i, b)).sum();
            let want = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((dot - want).abs());
        }
    }
    worst
}

#[test]
fn criterion_01_orthonormality() {
    let _g = serial();
    let t = Instant::now();
    let cases = ortho_suite();
    let mut worst: f64 = 0.0;
    let mut levels = 0;
    let deepest = cases.iter().map(|c| c.bases.len()).max().unwrap();
    for c in &cases {
        for b in &c.bases {
            worst = worst.max(dense_gram_residual(&b.to_dense()));
            levels += 1;
        }
    }
    let elapsed = secs(t.elapsed());
    verdict(
        1,
        "orthonormality",
        worst <= GRAM_TOL && elapsed < ORTHO_RUNTIME_S,
        format!(
            "{} graphs, {levels} levels (deepest tree {deepest}), max|UtU-I| = {worst:.3e} (tol {GRAM_TOL:e}), {elapsed:.1}s (limit {ORTHO_RUNTIME_S}s)",
            cases.len()
        ),
    );
}

#[test]
fn criterion_02_reconstruction() {
    let _g = serial();
    let cases = ortho_suite();
    let mut worst: f64 = 0.0;
    for c in &cases {
        // features live on level 0; coarser levels get their own random signal
        for (ell, b) in c.bases.iter().enumerate() {
            let n = b.num_columns();
            let x = if ell == 0 {
                c.x.clone()
            } else {
                gaussian(n, 3, (c.n * 31 + ell) as u64)
            };
            let y = b.filter(&vec![1.0; n], &x).unwrap();
            worst = worst.max(y.max_abs_diff(&x));
        }
    }
    verdict(
        2,
        "perfect reconstruction",
        worst <= RECON_TOL,
        format!("max|filter(X) - X| = {worst:.3e} (tol {RECON_TOL:e})"),
    );
}

// ------------------------------------------------------------- 3

const WITHIN_2_HOPS_MIN: f64 = 0.80;
const CHEB_DENSITY_MIN: f64 = 0.90;

#[test]
fn criterion_03_locality() {
    let _g = serial();
    let report = run_locality(&LocalitySuiteConfig::default()).unwrap();
    let s = &report.summary;
    let support = s["intra_support_exact"].as_bool().unwrap();
    let mean2 = s["level0_mean_energy_within_2_hops"].as_f64().unwrap();
    let dens = s["chebyshev"]["densities"].as_array().unwrap();
    let cheb = dens.last().unwrap().as_f64().unwrap();
    let nodes = s["chebyshev"]["nodes"].as_u64().unwrap();
    assert_eq!(nodes, 28);
    // rows of the hop-energy table are distributions
    for line in report.csv.lines().skip(1) {
        let total: f64 = line.split(',').skip(3).map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() <= 1e-9, "{line}");
    }
    verdict(
        3,
        "locality",
        support && mean2 >= WITHIN_2_HOPS_MIN && cheb >= CHEB_DENSITY_MIN,
        format!(
            "intra support exact = {support}, mean energy within 2 hops = {mean2:.3} (min {WITHIN_2_HOPS_MIN}), \
             Chebyshev order-4 density on {nodes} nodes = {cheb:.3} (min {CHEB_DENSITY_MIN})"
        ),
    );
}

// ------------------------------------------------------------- 4

const GRAD_H: f64 = 1e-5;
const GRAD_TOL: f64 = 1e-4;
const GRAD_RUNTIME_S: f64 = 30.0;

#[test]
fn criterion_04_gradient_check() {
    let _g = serial();
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    let mut blocks = 0;
    for seed in 0..3u64 {
        let g = Arc::new(ring_with_chords(12, 6, seed));
        let x = gaussian(12, 3, seed + 100);
        let targets: Vec<(usize, usize)> = (0..12).map(|i| (i, (i * 7 + seed as usize) % 2)).collect();
        let cfg = HmhConfig {
            hidden: 4,
            encoder_dims: vec![4, 3],
            gain_mode: GainMode::PerColumn,
            dropout: 0.0,
            lambda_div: 0.5,
            hierarchy: HierarchyConfig {
                ratio: 0.5,
                h_t: 6,
                ..Default::default()
            },
            ..Default::default()
        };
        let net = Network::build(ModelKind::Hmh, &cfg, &BaselineConfig::default(), 3, 2, 12).unwrap();
        let mut r = rng(seed);
        let mut params = net.init_params(&mut r);
        for k in 0..params.len() {
            let name = params.names()[k].clone();
            if name.starts_with("gain.") || name.ends_with(".b") {
                for v in params.values_mut()[k].data_mut() {
                    *v = r.random_range(-1.0..1.0);
                }
            }
        }
        let prep = net.prepare(&params, g, None, &x, None).unwrap();
        let Prepared::Hmh(p) = &prep else { unreachable!() };
        assert_eq!(p.tree.depth(), 2, "expected a 2-level tree");
        let report = check_model_gradients(&net, &params, &prep, &targets, false, GRAD_H, GRAD_TOL).unwrap();
        assert_eq!(report.blocks.len(), params.len());
        blocks = report.blocks.len();
        worst = worst.max(report.max_error);
    }
    let elapsed = secs(t.elapsed());
    verdict(
        4,
        "gradient check",
        worst <= GRAD_TOL && elapsed < GRAD_RUNTIME_S,
        format!("{blocks} parameter blocks, max rel error = {worst:.3e} (tol {GRAD_TOL:e}), {elapsed:.1}s (limit {GRAD_RUNTIME_S}s)"),
    );
}

// ------------------------------------------------------------- 5

const FLIP_TOL: f64 = 1e-6;
const FLIP_SEEDS: u64 = 10;
const FLIP_MIN_SEEDS: usize = 9;

#[test]
fn criterion_05_sign_flip() {
    let _g = serial();
    let mut smp_worst: f64 = 0.0;
    let mut escaped = 0;
    let mut enc_min = f64::INFINITY;
    for seed in 0..FLIP_SEEDS {
        smp_worst = smp_worst.max(smp_two_step_residual(20, 4, 6, seed).unwrap());
        let r = encoder_two_step_residual(24, 4, seed).unwrap();
        enc_min = enc_min.min(r);
        if r > FLIP_TOL {
            escaped += 1;
        }
    }
    verdict(
        5,
        "sign-flip contrast",
        smp_worst == 0.0 && escaped >= FLIP_MIN_SEEDS,
        format!(
            "SMP max|H(k+2) - H(k)| = {smp_worst:e} (exact), encoder escapes both signs on {escaped}/{FLIP_SEEDS} seeds \
             (min {FLIP_MIN_SEEDS}, smallest residual {enc_min:.3e})"
        ),
    );
}

// ------------------------------------------------------------- 6

const HUB_GAP_POINTS: f64 = 5.0;
const HUB_MIN_WINS: usize = 8;
const HUB_RUNTIME_S: f64 = 600.0;

#[test]
fn criterion_06_hub_domination() {
    let _g = serial();
    let t = Instant::now();
    let cfg = HubSuiteConfig::default();
    assert_eq!((cfg.generator.m, cfg.generator.a, cfg.generator.b, cfg.seeds), (200, 10, 10, 10));
    let mut rows = Vec::new();
    for s in 0..cfg.seeds as u64 {
        let seed = cfg.generator.seed + s;
        rows.push(hub_seed(&cfg, seed, ModelKind::Gcn).unwrap());
        rows.push(hub_seed(&cfg, seed, ModelKind::Hmh).unwrap());
    }
    let v = hub_verdict(&rows);
    let elapsed = secs(t.elapsed());
    verdict(
        6,
        "hub domination",
        v.gap_points >= HUB_GAP_POINTS && v.hmh_wins >= HUB_MIN_WINS && elapsed < HUB_RUNTIME_S,
        format!(
            "GCN hub - spoke = {:.1} points (min {HUB_GAP_POINTS}), HMH spoke >= GCN spoke on {}/{} seeds (min {HUB_MIN_WINS}), \
             spoke means HMH {:.3} / GCN {:.3}, {elapsed:.0}s (limit {HUB_RUNTIME_S}s)",
            v.gap_points, v.hmh_wins, v.seeds, v.hmh_spoke_mean, v.gcn_spoke_mean
        ),
    );
}

// ------------------------------------------------------------- 7

#[test]
fn criterion_07_separation_bound() {
    let _g = serial();
    let cfg = SeparationConfig::default();
    assert_eq!((cfg.kappa, cfg.m, cfg.a, cfg.b), (0.8, 100, 5, 5));
    let r = theorem_separation(&cfg).unwrap();
    verdict(
        7,
        "separation bound",
        r.ratio >= r.bound,
        format!("filtered ratio = {:.4} (input {:.4}), bound = {:.1}", r.ratio, r.input_ratio, r.bound),
    );
}

// ------------------------------------------------------------- 8

const GCN_ENERGY_MAX: f64 = 1e-2;
const HMH_ENERGY_MIN: f64 = 0.3;
const DEPTH_RUNTIME_S: f64 = 300.0;

#[test]
fn criterion_08_oversmoothing() {
    let _g = serial();
    let t = Instant::now();
    let cfg = DepthSuiteConfig::default();
    assert_eq!(cfg.sbm.sizes.iter().sum::<usize>(), 400);
    let s = run_depth(&cfg).unwrap().summary;
    let gcn = s["gcn_energy_ratio"].as_f64().unwrap();
    let hmh = s["hmh_energy_ratio"].as_f64().unwrap();
    let levels = s["hmh_levels"].as_u64().unwrap();
    let elapsed = secs(t.elapsed());
    verdict(
        8,
        "oversmoothing",
        gcn <= GCN_ENERGY_MAX && hmh >= HMH_ENERGY_MIN && elapsed < DEPTH_RUNTIME_S,
        format!(
            "GCN E(16)/E(1) = {gcn:.3e} (max {GCN_ENERGY_MAX:e}), HMH E(deepest of {levels})/E(0) = {hmh:.3} (min {HMH_ENERGY_MIN}), \
             {elapsed:.1}s (limit {DEPTH_RUNTIME_S}s)"
        ),
    );
}

// ------------------------------------------------------------- 9

const SQUASH_HMH_MIN: f64 = 0.90;
const SQUASH_GCN_MAX: f64 = 0.70;
const SQUASH_RUNTIME_S: f64 = 900.0;

#[test]
fn criterion_09_oversquashing() {
    let _g = serial();
    let t = Instant::now();
    let cfg = SquashSuiteConfig::default();
    assert_eq!((cfg.tree.depth, cfg.tree.samples), (4, 512));
    let hmh = squash_depth(&cfg, 4, ModelKind::Hmh).unwrap();
    let gcn = squash_depth(&cfg, 4, ModelKind::Gcn).unwrap();
    let elapsed = secs(t.elapsed());
    verdict(
        9,
        "oversquashing",
        hmh.test_accuracy >= SQUASH_HMH_MIN && gcn.test_accuracy <= SQUASH_GCN_MAX && elapsed < SQUASH_RUNTIME_S,
        format!(
            "depth 4, 512 samples: HMH test acc = {:.3} (min {SQUASH_HMH_MIN}), GCN test acc = {:.3} (max {SQUASH_GCN_MAX}), \
             {elapsed:.0}s (limit {SQUASH_RUNTIME_S}s)",
            hmh.test_accuracy, gcn.test_accuracy
        ),
    );
}

// ------------------------------------------------------------ 10

const SCALING_SPREAD_MAX: f64 = 2.0;

#[test]
fn criterion_10_scaling() {
    let _g = serial();
    let cfg = ScalingSuiteConfig::default();
    assert_eq!(cfg.edges, vec![100_000, 1_000_000]);
    let s = run_scaling(&cfg).unwrap().summary;
    let spread = s["ms_per_medge_spread"].as_f64().unwrap();
    let rows: Vec<String> = s["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| format!("{} edges: {:.1} ms/Medge", r["edges"], r["ms_per_medge"].as_f64().unwrap()))
        .collect();
    verdict(
        10,
        "scaling",
        spread <= SCALING_SPREAD_MAX,
        format!("{}, spread = {spread:.2}x (max {SCALING_SPREAD_MAX}x)", rows.join(", ")),
    );
}

// ------------------------------------------------------------ 11

const LOSS_TOL: f64 = 1e-9;

fn one_hot_rows(n: usize, k: usize) -> Matrix {
    let mut m = Matrix::zeros(n, k);
    for i in 0..n {
        m.set(i, (i * 5 + 1) % k, 1.0);
    }
    m
}

/// Mean `logsumexp(row) − row[label]`, written out directly.
fn ce_oracle(logits: &Matrix, labels: &[usize]) -> f64 {
    let n = logits.rows();
    (0..n)
        .map(|i| {
            let row = logits.row(i);
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            z.ln() - row[labels[i]]
        })
        .sum::<f64>()
        / n as f64
}

#[test]
fn criterion_11_loss_identities() {
    let _g = serial();
    let shapes = [(40, 20), (20, 10), (10, 5), (5, 2)];
    let one_hot: Vec<Matrix> = shapes.iter().map(|&(n, k)| one_hot_rows(n, k)).collect();
    let uniform: Vec<Matrix> = shapes.iter().map(|&(n, k)| Matrix::filled(n, k, 1.0 / k as f64)).collect();
    let want_uniform: f64 = shapes.iter().map(|&(_, k)| (k as f64).ln()).sum();
    let d_hot = diversity_loss(&one_hot);
    let d_uni = diversity_loss(&uniform);

    let logits = gaussian(40, 3, 7);
    let labels: Vec<usize> = (0..40).map(|i| i % 3).collect();
    let mask = vec![true; 40];
    let ce = cross_entropy(&logits, &labels, &mask).unwrap();
    let total0 = total_loss(&logits, &labels, &mask, &uniform, 0.0).unwrap();
    let oracle = ce_oracle(&logits, &labels);

    // the training path computes the same quantities on the tape
    let mut tape = Tape::new();
    let lv = tape.constant(logits.clone());
    let softs: Vec<_> = uniform.iter().map(|m| tape.constant(m.clone())).collect();
    let targets = Arc::new(labels.iter().copied().enumerate().collect::<Vec<_>>());
    let taped0 = loss_on_tape(&mut tape, lv, targets.clone(), &softs, 0.0);
    let taped0 = tape.value(taped0).get(0, 0);
    let taped_div = loss_on_tape(&mut tape, lv, targets, &softs, 0.25);
    let taped_div = tape.value(taped_div).get(0, 0);
    let want_div = oracle - 0.25 * want_uniform;

    let ok = d_hot.abs() <= LOSS_TOL
        && (d_uni - want_uniform).abs() <= LOSS_TOL
        && total0 == ce
        && (ce - oracle).abs() <= LOSS_TOL
        && (taped0 - oracle).abs() <= LOSS_TOL
        && (taped_div - want_div).abs() <= LOSS_TOL;
    verdict(
        11,
        "loss identities",
        ok,
        format!(
            "diversity(one-hot) = {d_hot:e}, diversity(uniform) - sum log K = {:.1e}, total(lambda=0) - CE = {:e}, \
             CE - oracle = {:.1e}, tape - oracle = {:.1e} (tol {LOSS_TOL:e})",
            d_uni - want_uniform,
            total0 - ce,
            ce - oracle,
            (taped_div - want_div).abs().max((taped0 - oracle).abs())
        ),
    );
}

// ------------------------------------------------------------ 12

fn determinism_config(model: ModelKind) -> RunConfig {
    let mut cfg = RunConfig::new(
        Task::Node,
        model,
        DataSpec::Hubspoke(HubSpokeConfig {
            a: 4,
            b: 4,
            m: 40,
            seed: 3,
            ..Default::default()
        }),
        "unused",
    );
    cfg.hmh = HmhConfig {
        hidden: 8,
        encoder_dims: vec![8],
        ..Default::default()
    };
    cfg.train.epochs = 15;
    cfg.train.patience = 15;
    cfg.train.refresh_every = 5;
    cfg.train.seed = 17;
    cfg.train.deterministic = true;
    cfg
}

#[test]
fn criterion_12_determinism() {
    let _g = serial();
    let mut identical = true;
    for model in [ModelKind::Hmh, ModelKind::Gcn] {
        let cfg = determinism_config(model);
        let a = train_run(&cfg).unwrap();
        let b = train_run(&cfg).unwrap();
        let ja = serde_json::to_string(a.checkpoint.as_ref().unwrap()).unwrap();
        let jb = serde_json::to_string(b.checkpoint.as_ref().unwrap()).unwrap();
        identical &= ja == jb && a.history_csv == b.history_csv && !a.history_csv.is_empty();
    }
    verdict(
        12,
        "determinism",
        identical,
        format!("HMH and GCN: checkpoint JSON and history CSV byte-identical across runs = {identical}"),
    );
}
