//! Named parameter blocks and their versioned JSON form.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HmhError, Result};
use crate::matrix::Matrix;

pub const PARAMS_FORMAT_VERSION: u32 = 1;

/// Ordered name → matrix map. Order is insertion order and is preserved
/// through serialization, which keeps checkpoints byte-stable.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    names: Vec<String>,
    values: Vec<Matrix>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) {
        let name = name.into();
        assert!(self.index_of(&name).is_none(), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Matrix> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix> {
        self.index_of(name).map(move |i| &mut self.values[i])
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Matrix] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Matrix] {
        &mut self.values
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        ParamSet {
            names: self.names.clone(),
            values: self.values.iter().map(|m| Matrix::zeros(m.rows(), m.cols())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::all_finite)
    }

    pub fn to_document(&self, model: serde_json::Value) -> ParamsDocument {
        ParamsDocument {
            format_version: PARAMS_FORMAT_VERSION,
            model,
            params: self
                .iter()
                .map(|(n, m)| ParamEntry {
                    name: n.to_string(),
                    shape: [m.rows(), m.cols()],
                    data: m.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &ParamsDocument) -> Result<ParamSet> {
        if doc.format_version != PARAMS_FORMAT_VERSION {
            return Err(HmhError::VersionMismatch {
                expected: PARAMS_FORMAT_VERSION,
                found: doc.format_version,
            });
        }
        let mut out = ParamSet::new();
        for e in &doc.params {
            let m = Matrix::from_vec(e.shape[0], e.shape[1], e.data.clone())
                .map_err(|_| HmhError::dim(format!("parameter {}", e.name), e.shape[0] * e.shape[1], e.data.len()))?;
            if !m.all_finite() {
                return Err(HmhError::NonFinite(format!("parameter {}", e.name)));
            }
            out.insert(e.name.clone(), m);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Checkpoint document: parameters plus the model description needed to
/// rebuild the network around them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsDocument {
    pub format_version: u32,
    pub model: serde_json::Value,
    pub params: Vec<ParamEntry>,
}

impl ParamsDocument {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| HmhError::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        std::fs::write(path, text).map_err(|e| HmhError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ParamsDocument> {
        let text = std::fs::read_to_string(path).map_err(|e| HmhError::io(path, e))?;
        // check the version before the full schema so old files get a clear error
        let probe: serde_json::Value = serde_json::from_str(&text).map_err(|e| HmhError::Json {
            context: path.display().to_string(),
            source: e,
        })?;
        if let Some(v) = probe.get("format_version").and_then(|v| v.as_u64()) {
            if v as u32 != PARAMS_FORMAT_VERSION {
                return Err(HmhError::VersionMismatch {
                    expected: PARAMS_FORMAT_VERSION,
                    found: v as u32,
                });
            }
        }
        serde_json::from_value(probe).map_err(|e| HmhError::Json {
            context: path.display().to_string(),
            source: e,
        })
    }
}

/// Glorot-uniform `rows × cols` matrix.
pub fn glorot(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let limit = (6.0 / (rows + cols).max(1) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-limit..limit)).collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}
