//! Static (per-stay) feature schema: inferred on training stays, then fixed.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::events::ValueKind;
use super::scaling::FeatureScale;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum StaticColumn {
    Continuous { name: String, scale: FeatureScale },
    Binary { name: String },
    Categorical { name: String, categories: Vec<String> },
}

impl StaticColumn {
    pub fn name(&self) -> &str {
        match self {
            StaticColumn::Continuous { name, .. }
            | StaticColumn::Binary { name }
            | StaticColumn::Categorical { name, .. } => name,
        }
    }

    /// Output column names after one-hot expansion.
    pub fn output_names(&self) -> Vec<String> {
        match self {
            StaticColumn::Categorical { name, categories } => {
                categories.iter().map(|c| format!("{name}={c}")).collect()
            }
            other => vec![other.name().to_string()],
        }
    }

    fn encode_into(&self, raw: &str, out: &mut Vec<f64>) {
        let raw = raw.trim();
        match self {
            StaticColumn::Continuous { scale, .. } => out.push(match raw.parse::<f64>() {
                Ok(v) if v.is_finite() => scale.scale(v),
                _ => scale.scaled_mean(),
            }),
            StaticColumn::Binary { .. } => out.push(match raw.parse::<f64>() {
                Ok(v) if v == 1.0 => 1.0,
                _ => 0.0,
            }),
            // Unseen categories encode as all zeros.
            StaticColumn::Categorical { categories, .. } => {
                out.extend(categories.iter().map(|c| if c == raw { 1.0 } else { 0.0 }))
            }
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StaticSchema {
    pub columns: Vec<StaticColumn>,
}

impl StaticSchema {
    /// Infers column types from training rows (`rows[i][j]` is column `j`).
    ///
    /// All values in {0, 1}: binary. All numeric: continuous, scaled like a
    /// time series. Otherwise categorical with sorted categories.
    pub fn fit(names: &[String], rows: &[Vec<String>]) -> StaticSchema {
        let columns = names
            .iter()
            .enumerate()
            .map(|(j, name)| {
                let cells: Vec<&str> = rows
                    .iter()
                    .map(|r| r[j].trim())
                    .filter(|c| !c.is_empty())
                    .collect();
                let numeric: Option<Vec<f64>> = cells
                    .iter()
                    .map(|c| c.parse::<f64>().ok().filter(|v| v.is_finite()))
                    .collect();
                match numeric {
                    Some(v) if !v.is_empty() && v.iter().all(|x| *x == 0.0 || *x == 1.0) => {
                        StaticColumn::Binary { name: name.clone() }
                    }
                    Some(v) if !v.is_empty() => StaticColumn::Continuous {
                        name: name.clone(),
                        scale: FeatureScale::fit(&v, ValueKind::Continuous).expect("non-empty"),
                    },
                    _ => StaticColumn::Categorical {
                        name: name.clone(),
                        categories: cells
                            .iter()
                            .map(|c| c.to_string())
                            .collect::<BTreeSet<_>>()
                            .into_iter()
                            .collect(),
                    },
                }
            })
            .collect();
        StaticSchema { columns }
    }

    pub fn output_names(&self) -> Vec<String> {
        self.columns.iter().flat_map(StaticColumn::output_names).collect()
    }

    pub fn width(&self) -> usize {
        self.output_names().len()
    }

    /// Encodes one stay's raw cells, given in schema column order.
    pub fn encode(&self, raw: &[String]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.width());
        for (col, cell) in self.columns.iter().zip(raw) {
            col.encode_into(cell, &mut out);
        }
        out
    }
}
