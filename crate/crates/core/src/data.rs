//! Table schema and column-major table storage.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Continuous,
    Discrete,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Accuracy,
    F1,
    MacroF1,
    MicroF1,
    R2,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Accuracy => "accuracy",
            Metric::F1 => "f1",
            Metric::MacroF1 => "macro_f1",
            Metric::MicroF1 => "micro_f1",
            Metric::R2 => "r2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub target: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub metrics: Vec<Metric>,
}

impl ColumnSpec {
    pub fn continuous(name: impl Into<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Continuous,
            categories: None,
            target: false,
            task: None,
            metrics: Vec::new(),
        }
    }

    pub fn discrete(name: impl Into<String>, categories: Vec<String>) -> Self {
        ColumnSpec {
            name: name.into(),
            kind: ColumnKind::Discrete,
            categories: Some(categories),
            target: false,
            task: None,
            metrics: Vec::new(),
        }
    }

    /// Marks the column as the prediction target of a real dataset.
    pub fn as_target(mut self, task: TaskKind, metrics: Vec<Metric>) -> Self {
        self.target = true;
        self.task = Some(task);
        self.metrics = metrics;
        self
    }

    pub fn is_discrete(&self) -> bool {
        self.kind == ColumnKind::Discrete
    }

    pub fn categories(&self) -> &[String] {
        self.categories.as_deref().unwrap_or(&[])
    }
}

/// Column metadata; the on-disk schema file is this struct as JSON.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let s = Schema { columns };
        s.validate()?;
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Schema = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashMap::new();
        for (i, c) in self.columns.iter().enumerate() {
            if let Some(prev) = seen.insert(c.name.as_str(), i) {
                return Err(Error::Schema(format!(
                    "column name `{}` used at positions {prev} and {i}",
                    c.name
                )));
            }
            if let Some(cats) = &c.categories {
                if c.kind == ColumnKind::Continuous {
                    return Err(Error::Schema(format!(
                        "continuous column `{}` lists categories",
                        c.name
                    )));
                }
                let mut uniq = std::collections::HashSet::new();
                for cat in cats {
                    if !uniq.insert(cat) {
                        return Err(Error::Schema(format!(
                            "category `{cat}` repeated in column `{}`",
                            c.name
                        )));
                    }
                }
            }
            if c.target && c.task.is_none() {
                return Err(Error::Schema(format!(
                    "target column `{}` needs a task kind",
                    c.name
                )));
            }
            if c.task == Some(TaskKind::Classification) && c.kind != ColumnKind::Discrete {
                return Err(Error::Schema(format!(
                    "classification target `{}` must be discrete",
                    c.name
                )));
            }
        }
        if self.columns.iter().filter(|c| c.target).count() > 1 {
            return Err(Error::Schema("more than one target column".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.columns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.columns.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    pub fn target(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.target)
    }

    pub fn discrete_columns(&self) -> Vec<usize> {
        (0..self.columns.len())
            .filter(|&i| self.columns[i].is_discrete())
            .collect()
    }

    /// Same column names and kinds, in the same order.
    pub fn compatible_with(&self, other: &Schema) -> bool {
        self.columns.len() == other.columns.len()
            && self
                .columns
                .iter()
                .zip(&other.columns)
                .all(|(a, b)| a.name == b.name && a.kind == b.kind)
    }
}

/// A single cell in row-oriented APIs.
#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Num(f64),
    Cat(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum ColumnData {
    Continuous(Vec<f64>),
    /// Indices into the schema's category list.
    Discrete(Vec<u32>),
}

impl ColumnData {
    pub fn len(&self) -> usize {
        match self {
            ColumnData::Continuous(v) => v.len(),
            ColumnData::Discrete(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Column-major table whose discrete cells index into the schema's categories.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    schema: Schema,
    columns: Vec<ColumnData>,
    n_rows: usize,
}

impl Table {
    /// Every discrete column of `schema` must list its categories.
    pub fn new(schema: Schema, columns: Vec<ColumnData>) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(Error::Schema(format!(
                "{} columns supplied for a {}-column schema",
                columns.len(),
                schema.len()
            )));
        }
        let n_rows = columns.first().map_or(0, ColumnData::len);
        for (spec, col) in schema.columns.iter().zip(&columns) {
            if col.len() != n_rows {
                return Err(Error::Schema(format!("column `{}` has ragged length", spec.name)));
            }
            match (spec.kind, col) {
                (ColumnKind::Continuous, ColumnData::Continuous(v)) => {
                    if v.iter().any(|x| !x.is_finite()) {
                        return Err(Error::NonFinite(format!("column `{}`", spec.name)));
                    }
                }
                (ColumnKind::Discrete, ColumnData::Discrete(v)) => {
                    let k = spec
                        .categories
                        .as_ref()
                        .ok_or_else(|| Error::Schema(format!("column `{}` has no category list", spec.name)))?
                        .len();
                    if v.iter().any(|&c| c as usize >= k) {
                        return Err(Error::Schema(format!(
                            "column `{}` references a category outside its list",
                            spec.name
                        )));
                    }
                }
                _ => {
                    return Err(Error::Schema(format!(
                        "column `{}` data does not match its kind",
                        spec.name
                    )))
                }
            }
        }
        Ok(Table {
            schema,
            columns,
            n_rows,
        })
    }

    pub fn empty(schema: Schema) -> Result<Self> {
        let columns = schema
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Continuous => ColumnData::Continuous(Vec::new()),
                ColumnKind::Discrete => ColumnData::Discrete(Vec::new()),
            })
            .collect();
        Table::new(schema, columns)
    }

    /// Builds a table from rows; discrete cells must name known categories.
    pub fn from_rows(schema: Schema, rows: &[Vec<Cell>]) -> Result<Self> {
        let mut columns: Vec<ColumnData> = schema
            .columns
            .iter()
            .map(|c| match c.kind {
                ColumnKind::Continuous => ColumnData::Continuous(Vec::with_capacity(rows.len())),
                ColumnKind::Discrete => ColumnData::Discrete(Vec::with_capacity(rows.len())),
            })
            .collect();
        let lookups: Vec<HashMap<&str, u32>> = schema
            .columns
            .iter()
            .map(|c| {
                c.categories()
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (s.as_str(), i as u32))
                    .collect()
            })
            .collect();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != schema.len() {
                return Err(Error::Shape(format!("row {r} has {} cells", row.len())));
            }
            for (j, cell) in row.iter().enumerate() {
                match (&mut columns[j], cell) {
                    (ColumnData::Continuous(v), Cell::Num(x)) => v.push(*x),
                    (ColumnData::Discrete(v), Cell::Cat(s)) => {
                        let idx = lookups[j].get(s.as_str()).ok_or_else(|| {
                            Error::Schema(format!(
                                "unknown category `{s}` in column `{}`",
                                schema.columns[j].name
                            ))
                        })?;
                        v.push(*idx);
                    }
                    _ => {
                        return Err(Error::Schema(format!(
                            "row {r}, column `{}`: cell kind mismatch",
                            schema.columns[j].name
                        )))
                    }
                }
            }
        }
        Table::new(schema, columns)
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &ColumnData {
        &self.columns[j]
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn continuous(&self, j: usize) -> Result<&[f64]> {
        match &self.columns[j] {
            ColumnData::Continuous(v) => Ok(v),
            _ => Err(Error::Schema(format!("column {j} is not continuous"))),
        }
    }

    pub fn discrete(&self, j: usize) -> Result<&[u32]> {
        match &self.columns[j] {
            ColumnData::Discrete(v) => Ok(v),
            _ => Err(Error::Schema(format!("column {j} is not discrete"))),
        }
    }

    pub fn cell(&self, r: usize, j: usize) -> Cell {
        match &self.columns[j] {
            ColumnData::Continuous(v) => Cell::Num(v[r]),
            ColumnData::Discrete(v) => Cell::Cat(self.schema.columns[j].categories()[v[r] as usize].clone()),
        }
    }

    pub fn row(&self, r: usize) -> Vec<Cell> {
        (0..self.n_cols()).map(|j| self.cell(r, j)).collect()
    }

    pub fn select_rows(&self, idx: &[usize]) -> Table {
        let columns = self
            .columns
            .iter()
            .map(|c| match c {
                ColumnData::Continuous(v) => ColumnData::Continuous(idx.iter().map(|&i| v[i]).collect()),
                ColumnData::Discrete(v) => ColumnData::Discrete(idx.iter().map(|&i| v[i]).collect()),
            })
            .collect();
        Table {
            schema: self.schema.clone(),
            columns,
            n_rows: idx.len(),
        }
    }

    /// Occurrences of each category of discrete column `j`.
    pub fn category_counts(&self, j: usize) -> Result<Vec<usize>> {
        let k = self.schema.columns[j].categories().len();
        let mut counts = vec![0; k];
        for &c in self.discrete(j)? {
            counts[c as usize] += 1;
        }
        Ok(counts)
    }

    /// Re-expresses this table's cells under `schema`, mapping discrete cells by
    /// category name. Fails if a name is absent from the target schema.
    pub fn conform_to(&self, schema: &Schema) -> Result<Table> {
        if !self.schema.compatible_with(schema) {
            return Err(Error::Schema("tables have different columns".into()));
        }
        let mut columns = Vec::with_capacity(self.columns.len());
        for (j, col) in self.columns.iter().enumerate() {
            columns.push(match col {
                ColumnData::Continuous(v) => ColumnData::Continuous(v.clone()),
                ColumnData::Discrete(v) => {
                    let src = self.schema.columns[j].categories();
                    let dst: HashMap<&str, u32> = schema.columns[j]
                        .categories()
                        .iter()
                        .enumerate()
                        .map(|(i, s)| (s.as_str(), i as u32))
                        .collect();
                    let map: Vec<Option<u32>> = src.iter().map(|s| dst.get(s.as_str()).copied()).collect();
                    let mut out = Vec::with_capacity(v.len());
                    for &c in v {
                        out.push(map[c as usize].ok_or_else(|| {
                            Error::Schema(format!(
                                "category `{}` of column `{}` is unknown to the target schema",
                                src[c as usize], schema.columns[j].name
                            ))
                        })?);
                    }
                    ColumnData::Discrete(out)
                }
            });
        }
        Table::new(schema.clone(), columns)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_schema() -> Schema {
        Schema::new(vec![
            ColumnSpec::continuous("x"),
            ColumnSpec::discrete("c", vec!["a".into(), "b".into()]),
        ])
        .unwrap()
    }

    #[test]
    fn from_rows_rejects_unknown_category() {
        let rows = vec![vec![Cell::Num(1.0), Cell::Cat("z".into())]];
        assert!(Table::from_rows(toy_schema(), &rows).is_err());
    }

    #[test]
    fn rows_round_trip() {
        let rows = vec![
            vec![Cell::Num(1.5), Cell::Cat("b".into())],
            vec![Cell::Num(-2.0), Cell::Cat("a".into())],
        ];
        let t = Table::from_rows(toy_schema(), &rows).unwrap();
        assert_eq!(t.n_rows(), 2);
        assert_eq!(t.row(0), rows[0]);
        assert_eq!(t.category_counts(1).unwrap(), vec![1, 1]);
    }

    #[test]
    fn schema_validation() {
        let dup = Schema::new(vec![ColumnSpec::continuous("x"), ColumnSpec::continuous("x")]);
        assert!(dup.is_err());
        let bad_target = r#"{"columns":[{"name":"y","kind":"continuous","target":true,"task":"classification"}]}"#;
        assert!(Schema::from_json(bad_target).is_err());
        let ok = r#"{"columns":[{"name":"y","kind":"discrete","target":true,"task":"classification","metrics":["f1","macro_f1"]}]}"#;
        let s = Schema::from_json(ok).unwrap();
        assert_eq!(s.target(), Some(0));
        assert_eq!(s.columns[0].metrics, vec![Metric::F1, Metric::MacroF1]);
    }

    #[test]
    fn conform_maps_by_name() {
        let t = Table::from_rows(toy_schema(), &[vec![Cell::Num(0.0), Cell::Cat("b".into())]]).unwrap();
        let other = Schema::new(vec![
            ColumnSpec::continuous("x"),
            ColumnSpec::discrete("c", vec!["b".into(), "a".into()]),
        ])
        .unwrap();
        let c = t.conform_to(&other).unwrap();
        assert_eq!(c.discrete(1).unwrap(), &[0]);
    }
}
