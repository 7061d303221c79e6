//! The multi-level Haar model: encode, coarsen, filter every level in its
//! own basis, project, and fuse each node with its ancestors' summaries.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{GainMap, Tape, Var};
use crate::basis::{assemble_basis, HaarBasis};
use crate::encoder::{EncoderLayer, EncoderParams, SimilarityNorm};
use crate::error::{HmhError, Result};
use crate::graph::SparseGraph;
use crate::hierarchy::{build_hierarchy_with, Affinity, HaarTree, HierarchyConfig};
use crate::matrix::Matrix;

use super::params::{glorot, ParamSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainMode {
    /// One gain per column kind per level: scaling, inter, intra.
    #[default]
    Tied,
    PerColumn,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HmhConfig {
    pub hidden: usize,
    /// Output width of each encoder layer.
    pub encoder_dims: Vec<usize>,
    pub share_encoder: bool,
    pub gain_mode: GainMode,
    pub soft_unpool: bool,
    pub dropout: f64,
    pub lambda_div: f64,
    /// Raw scaling-gain parameter at init; the gain is its logistic.
    pub theta_sc_init: f64,
    /// Raw wavelet-gain parameter at init; the gain is `1 + softplus`.
    pub theta_wav_init: f64,
    pub hierarchy: HierarchyConfig,
}

impl Default for HmhConfig {
    fn default() -> Self {
        HmhConfig {
            hidden: 64,
            encoder_dims: vec![64, 64],
            share_encoder: true,
            gain_mode: GainMode::Tied,
            soft_unpool: false,
            dropout: 0.1,
            lambda_div: 0.5,
            theta_sc_init: 0.0,
            theta_wav_init: 0.0,
            hierarchy: HierarchyConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct HmhModel {
    pub config: HmhConfig,
    pub d_in: usize,
    pub num_classes: usize,
    /// Nominal size of every level for the largest input the model serves.
    pub level_sizes: Vec<usize>,
}

/// A tree and everything derived from it that stays fixed between refreshes.
#[derive(Clone, Debug)]
pub struct PreparedTree {
    pub tree: HaarTree,
    pub bases: Vec<Arc<HaarBasis>>,
    pub graphs: Vec<Arc<SparseGraph>>,
    pub structural: Vec<Arc<Vec<f64>>>,
    /// Level-`ℓ` cluster of every level-0 node.
    pub ancestors: Vec<Arc<Vec<usize>>>,
    pub gain_maps: Vec<Arc<Vec<(usize, GainMap)>>>,
}

impl PreparedTree {
    pub fn depth(&self) -> usize {
        self.bases.len()
    }
}

/// Tape handles produced by one forward pass.
pub struct HmhForward {
    pub logits: Var,
    /// Fused per-node (or per-graph) embedding before activation and head.
    pub fused: Var,
    pub softs: Vec<Var>,
    pub filtered: Vec<Var>,
    pub projected: Vec<Var>,
    pub scores: Vec<Var>,
}

fn enc_name(set: usize, layer: usize, what: &str) -> String {
    format!("enc.{set}.{layer}.{what}")
}

impl HmhModel {
    /// `max_nodes` is the largest graph the model will see; it fixes how many
    /// levels carry parameters.
    pub fn new(config: HmhConfig, d_in: usize, num_classes: usize, max_nodes: usize) -> Result<Self> {
        config.hierarchy.validate()?;
        if config.encoder_dims.is_empty() {
            return Err(HmhError::Config("encoder_dims must name at least one layer".into()));
        }
        if !(0.0..1.0).contains(&config.dropout) {
            return Err(HmhError::Config(format!("dropout must lie in [0,1), got {}", config.dropout)));
        }
        let level_sizes = config.hierarchy.nominal_sizes(max_nodes);
        Ok(HmhModel {
            config,
            d_in,
            num_classes,
            level_sizes,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.level_sizes.len()
    }

    fn num_encoder_sets(&self) -> usize {
        if self.config.share_encoder {
            1
        } else {
            (self.num_levels() - 1).max(1)
        }
    }

    pub fn init_params(&self, rng: &mut impl Rng) -> ParamSet {
        let mut p = ParamSet::new();
        for s in 0..self.num_encoder_sets() {
            let mut d = self.d_in;
            for (k, &out) in self.config.encoder_dims.iter().enumerate() {
                p.insert(enc_name(s, k, "w_att"), glorot(2 * d, 1, rng));
                p.insert(enc_name(s, k, "w"), glorot(d, out, rng));
                d = out;
            }
        }
        for (ell, &n) in self.level_sizes.iter().enumerate() {
            let theta = match self.config.gain_mode {
                GainMode::Tied => Matrix::column(&[
                    self.config.theta_sc_init,
                    self.config.theta_wav_init,
                    self.config.theta_wav_init,
                ]),
                GainMode::PerColumn => {
                    let mut v = vec![self.config.theta_wav_init; n];
                    v[0] = self.config.theta_sc_init;
                    Matrix::column(&v)
                }
            };
            p.insert(format!("gain.{ell}"), theta);
        }
        for ell in 0..self.num_levels() {
            p.insert(format!("proj.{ell}"), glorot(self.d_in, self.config.hidden, rng));
        }
        p.insert("head.w", glorot(self.config.hidden, self.num_classes, rng));
        p.insert("head.b", Matrix::zeros(1, self.num_classes));
        p
    }

    /// Plain encoder parameters for tree level `ell`.
    pub fn encoder_params(&self, params: &ParamSet, ell: usize) -> EncoderParams {
        let s = if self.config.share_encoder { 0 } else { ell.min(self.num_encoder_sets() - 1) };
        let layers = (0..self.config.encoder_dims.len())
            .map(|k| EncoderLayer {
                w_att: params.get(&enc_name(s, k, "w_att")).expect("w_att").data().to_vec(),
                w: params.get(&enc_name(s, k, "w")).expect("w").clone(),
            })
            .collect();
        EncoderParams { layers }
    }

    /// Builds the Haar tree for `x` on `g` from the current encoder weights.
    pub fn prepare(
        &self,
        params: &ParamSet,
        g: Arc<SparseGraph>,
        structural0: Option<Arc<Vec<f64>>>,
        x: &Matrix,
    ) -> Result<PreparedTree> {
        if x.cols() != self.d_in {
            return Err(HmhError::dim("model input dim", self.d_in, x.cols()));
        }
        let encoders: Vec<EncoderParams> = (0..self.num_encoder_sets())
            .map(|s| self.encoder_params(params, s))
            .collect();
        let tree = build_hierarchy_with(g, structural0, x, &encoders, &self.config.hierarchy)?;
        if tree.depth() > self.num_levels() {
            return Err(HmhError::InvalidParameter(format!(
                "input needs {} levels but the model has parameters for {}",
                tree.depth(),
                self.num_levels()
            )));
        }
        let bases: Vec<Arc<HaarBasis>> = assemble_basis(&tree)?.into_iter().map(Arc::new).collect();
        let mut gain_maps = Vec::with_capacity(bases.len());
        for (ell, b) in bases.iter().enumerate() {
            let map: Vec<(usize, GainMap)> = b
                .kinds
                .iter()
                .enumerate()
                .map(|(c, k)| {
                    let f = if k.slot() == 0 { GainMap::Logistic } else { GainMap::OnePlusSoftplus };
                    match self.config.gain_mode {
                        GainMode::Tied => (k.slot(), f),
                        GainMode::PerColumn => (c, f),
                    }
                })
                .collect();
            if self.config.gain_mode == GainMode::PerColumn && b.num_columns() > self.level_sizes[ell] {
                return Err(HmhError::InvalidParameter(format!(
                    "level {ell} has {} columns but only {} per-column gains",
                    b.num_columns(),
                    self.level_sizes[ell]
                )));
            }
            gain_maps.push(Arc::new(map));
        }
        let ancestors = tree.ancestors().into_iter().map(Arc::new).collect();
        Ok(PreparedTree {
            graphs: tree.levels.iter().map(|l| l.graph.clone()).collect(),
            structural: tree.levels.iter().map(|l| l.structural.clone()).collect(),
            tree,
            bases,
            ancestors,
            gain_maps,
        })
    }

    /// Records the encoder for level `ell` on the tape.
    fn encoder_tape(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        vars: &[Var],
        prep: &PreparedTree,
        ell: usize,
        x: Var,
    ) -> Var {
        let s = if self.config.share_encoder { 0 } else { ell.min(self.num_encoder_sets() - 1) };
        let g = prep.graphs[ell].clone();
        let structural = tape.constant(Matrix::column(&prep.structural[ell]));
        let mut z = x;
        for k in 0..self.config.encoder_dims.len() {
            let w_att = vars[params.index_of(&enc_name(s, k, "w_att")).unwrap()];
            let w = vars[params.index_of(&enc_name(s, k, "w")).unwrap()];
            let d = tape.value(z).cols();
            let wa = tape.gather_rows(Arc::new((0..d).collect()), w_att);
            let wb = tape.gather_rows(Arc::new((d..2 * d).collect()), w_att);
            let a = tape.matmul(z, wa);
            let b = tape.matmul(z, wb);
            let e = tape.edge_scores(g.clone(), a, b);
            let att = tape.logistic(e);
            let raw = tape.add(att, structural);
            let sim = match self.config.hierarchy.similarity_norm {
                SimilarityNorm::Softmax => tape.edge_softmax(g.clone(), raw),
                SimilarityNorm::Sigmoid => tape.logistic(raw),
            };
            let two = tape.scale(sim, 2.0);
            let signed = tape.add_scalar(two, -1.0);
            let zw = tape.matmul(z, w);
            let prop = tape.spmm_edge(g.clone(), signed, zw);
            z = tape.relu(prop);
        }
        z
    }

    /// Soft assignment of level `ell` against its fixed prototypes.
    fn soft_tape(&self, tape: &mut Tape, prep: &PreparedTree, ell: usize, z: Var) -> Var {
        let a = prep.tree.levels[ell].assignment.as_ref().expect("assignment");
        let tau = a.tau;
        let omega = match self.config.hierarchy.affinity {
            Affinity::InnerProduct => {
                let pt = tape.constant(a.prototypes.transpose());
                tape.matmul(z, pt)
            }
            Affinity::NegSqDistance => {
                // −‖z‖² is constant along each row and drops out of the softmax
                let pt = tape.constant(a.prototypes.transpose().scale(2.0));
                let cross = tape.matmul(z, pt);
                let norms: Vec<f64> = (0..a.prototypes.rows())
                    .map(|k| -a.prototypes.row(k).iter().map(|v| v * v).sum::<f64>())
                    .collect();
                let bias = tape.constant(Matrix::from_vec(1, norms.len(), norms).unwrap());
                tape.add_bias(cross, bias)
            }
        };
        let scaled = tape.scale(omega, 1.0 / tau);
        tape.row_softmax(scaled)
    }

    /// Records the full forward pass. `dropout_rng` enables dropout.
    pub fn forward(
        &self,
        tape: &mut Tape,
        params: &ParamSet,
        vars: &[Var],
        prep: &PreparedTree,
        graph_readout: bool,
        dropout_rng: Option<&mut dyn rand::RngCore>,
    ) -> Result<HmhForward> {
        let depth = prep.depth();
        let mut x = tape.constant(prep.tree.levels[0].features.clone());
        let mut softs = Vec::new();
        let mut filtered = Vec::new();
        let mut projected = Vec::new();
        let mut scores = Vec::new();
        for ell in 0..depth {
            let theta = vars[params.index_of(&format!("gain.{ell}")).unwrap()];
            let lam = tape.gain_expand(theta, prep.gain_maps[ell].clone());
            let h = tape.haar_filter(prep.bases[ell].clone(), x, lam);
            let proj = vars[params.index_of(&format!("proj.{ell}")).unwrap()];
            let y = tape.matmul(h, proj);
            filtered.push(h);
            projected.push(y);
            if ell + 1 < depth {
                let z = self.encoder_tape(tape, params, vars, prep, ell, x);
                let s = self.soft_tape(tape, prep, ell, z);
                scores.push(z);
                softs.push(s);
                x = tape.matmul_tn(s, x);
            }
        }
        let fused = if graph_readout {
            if prep.graphs[depth - 1].n() != 1 {
                return Err(HmhError::InvalidParameter(
                    "graph readout needs a tree coarsened to one node".into(),
                ));
            }
            projected[depth - 1]
        } else if self.config.soft_unpool {
            let mut acc = projected[0];
            let mut path: Option<Var> = None;
            for ell in 1..depth {
                let m = match path {
                    None => softs[0],
                    Some(p) => tape.matmul(p, softs[ell - 1]),
                };
                path = Some(m);
                let up = tape.matmul(m, projected[ell]);
                acc = tape.add(acc, up);
            }
            acc
        } else {
            let mut acc = projected[0];
            for ell in 1..depth {
                let up = tape.gather_rows(prep.ancestors[ell].clone(), projected[ell]);
                acc = tape.add(acc, up);
            }
            acc
        };
        let mut act = tape.relu(fused);
        if let Some(rng) = dropout_rng {
            act = super::baselines::dropout(tape, act, self.config.dropout, rng);
        }
        let hw = vars[params.index_of("head.w").unwrap()];
        let hb = vars[params.index_of("head.b").unwrap()];
        let lin = tape.matmul(act, hw);
        let logits = tape.add_bias(lin, hb);
        Ok(HmhForward {
            logits,
            fused,
            softs,
            filtered,
            projected,
            scores,
        })
    }

    /// Values of a dropout-free forward pass.
    pub fn forward_values(&self, params: &ParamSet, prep: &PreparedTree, graph_readout: bool) -> Result<HmhValues> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = params.values().iter().map(|m| tape.constant(m.clone())).collect();
        let f = self.forward(&mut tape, params, &vars, prep, graph_readout, None)?;
        Ok(HmhValues {
            logits: tape.value(f.logits).clone(),
            fused: tape.value(f.fused).clone(),
            filtered: f.filtered.iter().map(|&v| tape.value(v).clone()).collect(),
            softs: f.softs.iter().map(|&v| tape.value(v).clone()).collect(),
        })
    }

    pub fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "hmh",
            "d_in": self.d_in,
            "num_classes": self.num_classes,
            "level_sizes": self.level_sizes,
            "config": self.config,
        })
    }
}

#[derive(Clone, Debug)]
pub struct HmhValues {
    pub logits: Matrix,
    pub fused: Matrix,
    pub filtered: Vec<Matrix>,
    pub softs: Vec<Matrix>,
}
