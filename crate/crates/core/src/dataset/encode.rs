use serde::{Deserialize, Serialize};

use super::{CovariateColumn, CovariateKind, CovariateSchema, Dataset};
use crate::error::{ActeError, Result};

/// One-hot / pass-through encoding of a dataset's covariates. Categorical
/// covariates drop their first (sorted) level as the reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignEncoder {
    schema: CovariateSchema,
    /// Per schema entry: sorted levels for categoricals, empty for numerics.
    levels: Vec<Vec<String>>,
}

/// Row-major encoded covariates.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    pub names: Vec<String>,
    pub rows: usize,
    pub data: Vec<f64>,
}

impl DesignMatrix {
    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }
}

impl DesignEncoder {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let levels = ds
            .schema()
            .iter()
            .map(|d| match d.kind {
                CovariateKind::Categorical => ds.vocabulary().get(&d.name).cloned().unwrap_or_default(),
                CovariateKind::Numeric => Vec::new(),
            })
            .collect();
        DesignEncoder {
            schema: ds.schema().clone(),
            levels,
        }
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    /// Encoded column names: `name=level` for non-reference levels, `name`
    /// for numerics.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (def, levels) in self.schema.iter().zip(&self.levels) {
            match def.kind {
                CovariateKind::Categorical => {
                    names.extend(levels.iter().skip(1).map(|l| format!("{}={}", def.name, l)));
                }
                CovariateKind::Numeric => names.push(def.name.clone()),
            }
        }
        names
    }

    pub fn width(&self) -> usize {
        self.schema
            .iter()
            .zip(&self.levels)
            .map(|(d, l)| match d.kind {
                CovariateKind::Categorical => l.len().saturating_sub(1),
                CovariateKind::Numeric => 1,
            })
            .sum()
    }

    pub fn encode(&self, ds: &Dataset) -> Result<DesignMatrix> {
        if ds.schema() != &self.schema {
            return Err(ActeError::Schema("dataset covariates differ from the encoder's schema".into()));
        }
        let width = self.width();
        let n = ds.len();
        let mut data = vec![0.0; n * width];
        let mut offset = 0;
        for ((def, levels), col) in self.schema.iter().zip(&self.levels).zip(ds.covariate_columns()) {
            match col {
                CovariateColumn::Categorical(values) => {
                    for (i, v) in values.iter().enumerate() {
                        let pos = levels.binary_search(v).map_err(|_| ActeError::Encoding {
                            covariate: def.name.clone(),
                            level: v.clone(),
                        })?;
                        if pos > 0 {
                            data[i * width + offset + pos - 1] = 1.0;
                        }
                    }
                    offset += levels.len().saturating_sub(1);
                }
                CovariateColumn::Numeric(values) => {
                    for (i, v) in values.iter().enumerate() {
                        data[i * width + offset] = *v;
                    }
                    offset += 1;
                }
            }
        }
        Ok(DesignMatrix {
            names: self.column_names(),
            rows: n,
            data,
        })
    }
}

/// Encodes `ds` with its own vocabulary.
pub fn encode_fixed_effects(ds: &Dataset) -> Result<DesignMatrix> {
    DesignEncoder::from_dataset(ds).encode(ds)
}
