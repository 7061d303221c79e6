//! Models and losses.

pub mod baselines;
pub mod hmh;
pub mod params;

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{HmhError, Result};
use crate::graph::SparseGraph;
use crate::matrix::Matrix;

pub use baselines::{BaselineConfig, BaselineKind, BaselineModel, BaselinePrepared, Readout};
pub use hmh::{GainMode, HmhConfig, HmhModel, PreparedTree};
pub use params::{ParamSet, ParamsDocument, PARAMS_FORMAT_VERSION};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Hmh,
    Gcn,
    Smp,
    Cheb,
}

#[derive(Clone, Debug)]
pub enum Network {
    Hmh(HmhModel),
    Baseline(BaselineModel),
}

#[derive(Clone, Debug)]
pub enum Prepared {
    Hmh(Box<PreparedTree>),
    Baseline(BaselinePrepared),
}

/// Handles from one recorded forward pass.
pub struct ForwardOut {
    pub logits: Var,
    /// Representation the Dirichlet-energy trace is measured on.
    pub embedding: Var,
    pub softs: Vec<Var>,
}

impl Network {
    pub fn build(
        kind: ModelKind,
        hmh: &HmhConfig,
        baseline: &BaselineConfig,
        d_in: usize,
        num_classes: usize,
        max_nodes: usize,
    ) -> Result<Network> {
        Ok(match kind {
            ModelKind::Hmh => Network::Hmh(HmhModel::new(hmh.clone(), d_in, num_classes, max_nodes)?),
            ModelKind::Gcn => Network::Baseline(BaselineModel::new(BaselineKind::Gcn, baseline.clone(), d_in, num_classes)?),
            ModelKind::Smp => Network::Baseline(BaselineModel::new(BaselineKind::Smp, baseline.clone(), d_in, num_classes)?),
            ModelKind::Cheb => Network::Baseline(BaselineModel::new(BaselineKind::Cheb, baseline.clone(), d_in, num_classes)?),
        })
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        match self {
            Network::Hmh(m) => m.init_params(rng),
            Network::Baseline(m) => m.init_params(rng),
        }
    }

    pub fn lambda_div(&self) -> f64 {
        match self {
            Network::Hmh(m) => m.config.lambda_div,
            Network::Baseline(_) => 0.0,
        }
    }

    /// Whether `prepare` depends on the parameters (and so must be redone
    /// as training progresses).
    pub fn needs_refresh(&self) -> bool {
        matches!(self, Network::Hmh(_))
    }

    pub fn prepare(
        &self,
        params: &ParamSet,
        g: Arc<SparseGraph>,
        structural0: Option<Arc<Vec<f64>>>,
        x: &Matrix,
        labels: Option<&[usize]>,
    ) -> Result<Prepared> {
        Ok(match self {
            Network::Hmh(m) => Prepared::Hmh(Box::new(m.prepare(params, g, structural0, x)?)),
            Network::Baseline(m) => Prepared::Baseline(m.prepare(g, x, labels)?),
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        vars: &[Var],
        prep: &Prepared,
        graph_readout: bool,
        dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<ForwardOut> {
        match (self, prep) {
            (Network::Hmh(m), Prepared::Hmh(p)) => {
                let f = m.forward(tape, params, vars, p, graph_readout, dropout_rng)?;
                Ok(ForwardOut {
                    logits: f.logits,
                    embedding: f.fused,
                    softs: f.softs,
                })
            }
            (Network::Baseline(m), Prepared::Baseline(p)) => {
                let f = m.forward(tape, params, vars, p, graph_readout, dropout_rng)?;
                Ok(ForwardOut {
                    logits: f.logits,
                    embedding: f.embedding,
                    softs: Vec::new(),
                })
            }
            _ => Err(HmhError::InvalidParameter("prepared input does not match the model".into())),
        }
    }

    /// Logits without dropout.
    pub fn predict(&self, params: &ParamSet, prep: &Prepared, graph_readout: bool) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.values().iter().map(|m| tape.constant(m.clone())).collect();
        let f = self.forward(&mut tape, params, &vars, prep, graph_readout, None)?;
        Ok(tape.value(f.logits).clone())
    }

    pub fn describe(&self) -> serde_json::Value {
        match self {
            Network::Hmh(m) => m.describe(),
            Network::Baseline(m) => m.describe(),
        }
    }

    /// Rebuilds a network from `describe` output (checkpoint metadata).
    pub fn from_description(v: &serde_json::Value) -> Result<Network> {
        let bad = |what: &str| HmhError::Config(format!("checkpoint model description: {what}"));
        let kind: ModelKind = serde_json::from_value(v.get("kind").cloned().ok_or_else(|| bad("missing kind"))?)
            .map_err(|_| bad("unknown kind"))?;
        let d_in = v.get("d_in").and_then(|x| x.as_u64()).ok_or_else(|| bad("missing d_in"))? as usize;
        let num_classes = v.get("num_classes").and_then(|x| x.as_u64()).ok_or_else(|| bad("missing num_classes"))? as usize;
        let cfg = v.get("config").cloned().ok_or_else(|| bad("missing config"))?;
        match kind {
            ModelKind::Hmh => {
                let config: HmhConfig = serde_json::from_value(cfg).map_err(|e| bad(&e.to_string()))?;
                let sizes: Vec<usize> = serde_json::from_value(v.get("level_sizes").cloned().ok_or_else(|| bad("missing level_sizes"))?)
                    .map_err(|e| bad(&e.to_string()))?;
                let mut m = HmhModel::new(config, d_in, num_classes, sizes[0])?;
                m.level_sizes = sizes;
                Ok(Network::Hmh(m))
            }
            other => {
                let config: BaselineConfig = serde_json::from_value(cfg).map_err(|e| bad(&e.to_string()))?;
                let k = match other {
                    ModelKind::Gcn => BaselineKind::Gcn,
                    ModelKind::Smp => BaselineKind::Smp,
                    _ => BaselineKind::Cheb,
                };
                Ok(Network::Baseline(BaselineModel::new(k, config, d_in, num_classes)?))
            }
        }
    }
}

/// `CE − λ_div · Σ_ℓ mean_entropy(A_s^ℓ)` on the tape.
pub fn loss_on_tape(tape: &mut Tape, logits: Var, targets: Arc<Vec<(usize, usize)>>, softs: &[Var], lambda_div: f64) -> Var {
    let ce = tape.softmax_ce(logits, targets);
    if lambda_div == 0.0 || softs.is_empty() {
        return ce;
    }
    let mut div = tape.mean_entropy(softs[0]);
    for &s in &softs[1..] {
        let h = tape.mean_entropy(s);
        div = tape.add(div, h);
    }
    let scaled = tape.scale(div, -lambda_div);
    tape.add(ce, scaled)
}

/// Mean per-node entropy of each level's assignment, summed over levels.
pub fn diversity_loss(assignments: &[Matrix]) -> f64 {
    assignments
        .iter()
        .map(|a| {
            let h: f64 = a.data().iter().filter(|&&p| p > 0.0).map(|&p| -p * p.ln()).sum();
            h / a.rows().max(1) as f64
        })
        .sum()
}

/// Mean cross-entropy over the masked rows.
pub fn cross_entropy(logits: &Matrix, labels: &[usize], mask: &[bool]) -> Result<f64> {
    let rows: Vec<usize> = (0..logits.rows()).filter(|&i| mask[i]).collect();
    if rows.is_empty() {
        return Err(HmhError::EmptyMask("cross-entropy".into()));
    }
    let mut total = 0.0;
    for &i in &rows {
        let r = logits.row(i);
        let m = r.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - r[labels[i]];
    }
    Ok(total / rows.len() as f64)
}

pub fn total_loss(logits: &Matrix, labels: &[usize], mask: &[bool], assignments: &[Matrix], lambda_div: f64) -> Result<f64> {
    let ce = cross_entropy(logits, labels, mask)?;
    if lambda_div == 0.0 {
        return Ok(ce);
    }
    Ok(ce - lambda_div * diversity_loss(assignments))
}
