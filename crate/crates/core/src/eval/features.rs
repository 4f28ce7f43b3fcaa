//! Predictor inputs: one-hot discrete columns, z-scored continuous columns.

use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, Table, TaskKind};
use crate::error::{Error, Result};
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum FeatureColumn {
    Numeric { name: String, mean: f64, std: f64 },
    OneHot { name: String, categories: Vec<String> },
}

impl FeatureColumn {
    pub fn width(&self) -> usize {
        match self {
            FeatureColumn::Numeric { .. } => 1,
            FeatureColumn::OneHot { categories, .. } => categories.len(),
        }
    }

    fn name(&self) -> &str {
        match self {
            FeatureColumn::Numeric { name, .. } | FeatureColumn::OneHot { name, .. } => name,
        }
    }
}

/// Statistics are taken from the table the predictors train on. Other tables
/// are matched by column and category name; unseen categories encode as zeros.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoder {
    pub columns: Vec<FeatureColumn>,
}

impl FeatureEncoder {
    /// Uses every column except `exclude` (the target).
    pub fn fit(table: &Table, exclude: Option<usize>) -> Result<Self> {
        let schema = table.schema();
        let mut columns = Vec::new();
        for (j, spec) in schema.columns.iter().enumerate() {
            if Some(j) == exclude {
                continue;
            }
            columns.push(match table.column(j) {
                ColumnData::Continuous(v) => {
                    let n = v.len().max(1) as f64;
                    let mean = v.iter().sum::<f64>() / n;
                    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                    let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
                    FeatureColumn::Numeric {
                        name: spec.name.clone(),
                        mean,
                        std,
                    }
                }
                ColumnData::Discrete(_) => FeatureColumn::OneHot {
                    name: spec.name.clone(),
                    categories: spec.categories().to_vec(),
                },
            });
        }
        Ok(FeatureEncoder { columns })
    }

    pub fn width(&self) -> usize {
        self.columns.iter().map(FeatureColumn::width).sum()
    }

    pub fn encode(&self, table: &Table) -> Result<Matrix> {
        let n = table.n_rows();
        let mut out = Matrix::zeros(n, self.width());
        let mut offset = 0;
        for fc in &self.columns {
            let j = table
                .schema()
                .index_of(fc.name())
                .ok_or_else(|| Error::Schema(format!("column `{}` is missing", fc.name())))?;
            match (fc, table.column(j)) {
                (FeatureColumn::Numeric { mean, std, .. }, ColumnData::Continuous(v)) => {
                    for (r, x) in v.iter().enumerate() {
                        out.set(r, offset, (x - mean) / std);
                    }
                }
                (FeatureColumn::OneHot { categories, .. }, ColumnData::Discrete(v)) => {
                    let src = table.schema().columns[j].categories();
                    let map: Vec<Option<usize>> = src
                        .iter()
                        .map(|s| categories.iter().position(|c| c == s))
                        .collect();
                    for (r, &c) in v.iter().enumerate() {
                        if let Some(k) = map[c as usize] {
                            out.set(r, offset + k, 1.0);
                        }
                    }
                }
                _ => {
                    return Err(Error::Schema(format!("column `{}` changed kind", fc.name())));
                }
            }
            offset += fc.width();
        }
        Ok(out)
    }
}

/// Target values in predictor space.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes { labels: Vec<usize>, names: Vec<String> },
    Values(Vec<f64>),
}

impl Labels {
    pub fn task(&self) -> TaskKind {
        match self {
            Labels::Classes { .. } => TaskKind::Classification,
            Labels::Values(_) => TaskKind::Regression,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Labels::Classes { labels, .. } => labels.len(),
            Labels::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, idx: &[usize]) -> Labels {
        match self {
            Labels::Classes { labels, names } => Labels::Classes {
                labels: idx.iter().map(|&i| labels[i]).collect(),
                names: names.clone(),
            },
            Labels::Values(v) => Labels::Values(idx.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Reads the column named `target` from `table`. Class names are looked up in
/// `names`, which grows when the table holds a category not yet listed.
pub fn extract_labels(table: &Table, target: &str, names: &mut Vec<String>) -> Result<Labels> {
    let j = table
        .schema()
        .index_of(target)
        .ok_or_else(|| Error::Schema(format!("target column `{target}` is missing")))?;
    match table.column(j) {
        ColumnData::Continuous(v) => Ok(Labels::Values(v.clone())),
        ColumnData::Discrete(v) => {
            let src = table.schema().columns[j].categories();
            let mut map = Vec::with_capacity(src.len());
            for s in src {
                let k = match names.iter().position(|c| c == s) {
                    Some(k) => k,
                    None => {
                        names.push(s.clone());
                        names.len() - 1
                    }
                };
                map.push(k);
            }
            Ok(Labels::Classes {
                labels: v.iter().map(|&c| map[c as usize]).collect(),
                names: names.clone(),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Cell, ColumnSpec, Schema};

    #[test]
    fn encodes_by_name_with_train_statistics() {
        let s = Schema::new(vec![
            ColumnSpec::continuous("x"),
            ColumnSpec::discrete("c", vec!["a".into(), "b".into()]),
        ])
        .unwrap();
        let train = Table::from_rows(
            s,
            &[
                vec![Cell::Num(1.0), Cell::Cat("a".into())],
                vec![Cell::Num(3.0), Cell::Cat("b".into())],
            ],
        )
        .unwrap();
        let enc = FeatureEncoder::fit(&train, None).unwrap();
        assert_eq!(enc.width(), 3);
        // category order differs and includes an unseen value
        let s2 = Schema::new(vec![
            ColumnSpec::continuous("x"),
            ColumnSpec::discrete("c", vec!["z".into(), "b".into()]),
        ])
        .unwrap();
        let other = Table::from_rows(
            s2,
            &[
                vec![Cell::Num(2.0), Cell::Cat("b".into())],
                vec![Cell::Num(5.0), Cell::Cat("z".into())],
            ],
        )
        .unwrap();
        let m = enc.encode(&other).unwrap();
        assert_eq!(m.row(0), &[0.0, 0.0, 1.0]);
        assert_eq!(m.row(1), &[3.0, 0.0, 0.0]);
    }
}
