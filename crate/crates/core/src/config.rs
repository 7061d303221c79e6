//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::{HubSpokeConfig, SbmConfig, TreeMatchConfig};
use crate::error::{HmhError, Result};
use crate::io::NodeDataPaths;
use crate::model::{BaselineConfig, HmhConfig, ModelKind};
use crate::train::TrainConfig;

pub const RUN_FORMAT_VERSION: u32 = 1;

/// Environment variable that replaces `train.seed`.
pub const SEED_ENV: &str = "HMH_SEED";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Node,
    Graph,
}

/// Where the data comes from: files on disk or a seeded generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSpec {
    /// Directory in the standard layout (node or graph).
    Dir(PathBuf),
    /// Explicit node-dataset files.
    Files(NodeDataPaths),
    Hubspoke(HubSpokeConfig),
    Sbm(SbmConfig),
    Tree(TreeMatchConfig),
}

impl DataSpec {
    fn task_ok(&self, task: Task) -> bool {
        match self {
            DataSpec::Dir(_) => true,
            DataSpec::Files(_) | DataSpec::Hubspoke(_) | DataSpec::Sbm(_) => task == Task::Node,
            DataSpec::Tree(_) => task == Task::Graph,
        }
    }

    /// Resolves relative paths against `base`.
    pub fn resolve(&self, base: &Path) -> DataSpec {
        match self {
            DataSpec::Dir(d) => DataSpec::Dir(base.join(d)),
            DataSpec::Files(p) => DataSpec::Files(p.resolve(base)),
            other => other.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub format_version: u32,
    pub task: Task,
    pub model: ModelKind,
    pub data: DataSpec,
    #[serde(default)]
    pub hmh: HmhConfig,
    #[serde(default)]
    pub baseline: BaselineConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub outdir: PathBuf,
}

impl RunConfig {
    pub fn new(task: Task, model: ModelKind, data: DataSpec, outdir: impl Into<PathBuf>) -> Self {
        RunConfig {
            format_version: RUN_FORMAT_VERSION,
            task,
            model,
            data,
            hmh: HmhConfig::default(),
            baseline: BaselineConfig::default(),
            train: TrainConfig::default(),
            outdir: outdir.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != RUN_FORMAT_VERSION {
            return Err(HmhError::VersionMismatch {
                expected: RUN_FORMAT_VERSION,
                found: self.format_version,
            });
        }
        if !self.data.task_ok(self.task) {
            return Err(HmhError::Config(format!("data source does not fit a {:?} task", self.task)));
        }
        self.train.validate()?;
        self.hmh.hierarchy.validate()?;
        if !(0.0..1.0).contains(&self.hmh.dropout) || !(0.0..1.0).contains(&self.baseline.dropout) {
            return Err(HmhError::Config("dropout must lie in [0, 1)".into()));
        }
        if self.hmh.lambda_div < 0.0 || self.train.lambda_div.is_some_and(|l| l < 0.0) {
            return Err(HmhError::Config("lambda_div must be non-negative".into()));
        }
        if self.task == Task::Graph && self.model == ModelKind::Hmh && !self.hmh.hierarchy.coarsen_to_one {
            return Err(HmhError::Config("graph tasks need hmh.hierarchy.coarsen_to_one".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str, context: &str) -> Result<RunConfig> {
        let json_err = |e| HmhError::Json {
            context: context.to_string(),
            source: e,
        };
        let probe: serde_json::Value = serde_json::from_str(text).map_err(json_err)?;
        match probe.get("format_version").and_then(|v| v.as_u64()) {
            None => return Err(HmhError::Config(format!("{context}: missing format_version"))),
            Some(v) if v as u32 != RUN_FORMAT_VERSION => {
                return Err(HmhError::VersionMismatch {
                    expected: RUN_FORMAT_VERSION,
                    found: v as u32,
                })
            }
            _ => {}
        }
        let cfg: RunConfig = serde_json::from_value(probe).map_err(json_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads, validates, resolves paths relative to the file and applies the
    /// seed override from the environment.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| HmhError::io(path, e))?;
        let mut cfg = RunConfig::from_json(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.data = cfg.data.resolve(base);
        if cfg.outdir.is_relative() {
            cfg.outdir = base.join(&cfg.outdir);
        }
        cfg.apply_seed_env(std::env::var(SEED_ENV).ok().as_deref())?;
        Ok(cfg)
    }

    pub fn apply_seed_env(&mut self, value: Option<&str>) -> Result<()> {
        if let Some(v) = value {
            self.train.seed = v
                .trim()
                .parse()
                .map_err(|_| HmhError::Config(format!("{SEED_ENV}={v:?} is not an unsigned integer")))?;
        }
        Ok(())
    }
}
