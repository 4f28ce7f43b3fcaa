//! Mode-specific normalization of continuous columns, one-hot encoding of
//! discrete columns, and the row layout that joins them.

mod mixture;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use mixture::{fit_em, fit_vgm, Mode, VgmConfig, STD_FLOOR};

use crate::data::{Cell, ColumnData, ColumnKind, Schema, Table};
use crate::error::{Error, Result};
use crate::tensor::{argmax, Matrix};

/// How continuous columns are normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Normalization {
    #[default]
    Vgm,
    Gmm5,
    Gmm10,
    MinMax,
}

impl std::str::FromStr for Normalization {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vgm" => Ok(Normalization::Vgm),
            "gmm5" => Ok(Normalization::Gmm5),
            "gmm10" => Ok(Normalization::Gmm10),
            "minmax" => Ok(Normalization::MinMax),
            _ => Err(Error::InvalidArgument(format!("unknown normalization `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContinuousTransform {
    pub column: usize,
    pub kind: Normalization,
    pub modes: Vec<Mode>,
}

impl ContinuousTransform {
    pub fn fit<R: Rng + ?Sized>(column: usize, values: &[f64], kind: Normalization, rng: &mut R) -> Result<Self> {
        let modes = match kind {
            Normalization::Vgm => fit_vgm(values, &VgmConfig::default(), rng)?,
            Normalization::Gmm5 => fit_em(values, 5, rng)?,
            Normalization::Gmm10 => fit_em(values, 10, rng)?,
            Normalization::MinMax => {
                mixture::check_column(values)?;
                let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                vec![Mode {
                    mean: 0.5 * (lo + hi),
                    std: ((hi - lo) / 8.0).max(STD_FLOOR),
                    weight: 1.0,
                }]
            }
        };
        Ok(ContinuousTransform { column, kind, modes })
    }

    pub fn from_modes(column: usize, kind: Normalization, modes: Vec<Mode>) -> Result<Self> {
        if modes.is_empty() || modes.iter().any(|m| !(m.std > 0.0) || !m.mean.is_finite() || !(m.weight >= 0.0)) {
            return Err(Error::InvalidArgument("invalid mixture modes".into()));
        }
        Ok(ContinuousTransform { column, kind, modes })
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    /// Normalized ρ_k ∝ μ_k N(value; η_k, φ_k).
    pub fn mode_probabilities(&self, value: f64) -> Vec<f64> {
        let logs: Vec<f64> = self
            .modes
            .iter()
            .map(|m| m.weight.ln() + mixture::log_normal(value, m.mean, m.std))
            .collect();
        let lse = crate::tensor::log_sum_exp(&logs);
        logs.iter().map(|l| (l - lse).exp()).collect()
    }

    /// α under a given mode, clipped to [-1, 1].
    pub fn alpha(&self, value: f64, mode: usize) -> f64 {
        let m = &self.modes[mode];
        ((value - m.mean) / (4.0 * m.std)).clamp(-1.0, 1.0)
    }

    /// Samples a mode from ρ and returns (α, mode index).
    pub fn encode<R: Rng + ?Sized>(&self, value: f64, rng: &mut R) -> Result<(f64, usize)> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("value in column {}", self.column)));
        }
        let probs = self.mode_probabilities(value);
        let mut u: f64 = rng.gen();
        let mut k = probs.len() - 1;
        for (i, p) in probs.iter().enumerate() {
            if u < *p {
                k = i;
                break;
            }
            u -= p;
        }
        Ok((self.alpha(value, k), k))
    }

    /// Inverse of [`encode`](Self::encode); the mode is the argmax of `beta`.
    pub fn decode(&self, alpha: f64, beta: &[f64]) -> f64 {
        let m = &self.modes[argmax(beta)];
        alpha * 4.0 * m.std + m.mean
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscreteTransform {
    pub column: usize,
    pub categories: Vec<String>,
    pub counts: Vec<usize>,
}

impl DiscreteTransform {
    pub fn index_of(&self, category: &str) -> Option<usize> {
        self.categories.iter().position(|c| c == category)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ColumnTransform {
    Continuous(ContinuousTransform),
    Discrete(DiscreteTransform),
}

impl ColumnTransform {
    /// Number of encoded entries this column occupies.
    pub fn width(&self) -> usize {
        match self {
            ColumnTransform::Continuous(t) => 1 + t.mode_count(),
            ColumnTransform::Discrete(t) => t.categories.len(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Softmax,
}

/// A contiguous block of the encoded row and the output activation it uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub width: usize,
    pub activation: Activation,
    pub column: usize,
}

impl Span {
    pub fn end(&self) -> usize {
        self.start + self.width
    }
}

/// Fitted per-column transforms for a whole table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataTransformer {
    schema: Schema,
    columns: Vec<ColumnTransform>,
    offsets: Vec<usize>,
    width: usize,
}

impl DataTransformer {
    pub fn fit<R: Rng + ?Sized>(table: &Table, kind: Normalization, rng: &mut R) -> Result<Self> {
        let mut columns = Vec::with_capacity(table.n_cols());
        for (j, col) in table.columns().iter().enumerate() {
            columns.push(match col {
                ColumnData::Continuous(v) => {
                    ColumnTransform::Continuous(ContinuousTransform::fit(j, v, kind, rng)?)
                }
                ColumnData::Discrete(_) => ColumnTransform::Discrete(DiscreteTransform {
                    column: j,
                    categories: table.schema().columns[j].categories().to_vec(),
                    counts: table.category_counts(j)?,
                }),
            });
        }
        Self::from_columns(table.schema().clone(), columns)
    }

    pub fn from_columns(schema: Schema, columns: Vec<ColumnTransform>) -> Result<Self> {
        if columns.len() != schema.len() {
            return Err(Error::Schema("one transform per column required".into()));
        }
        let mut offsets = Vec::with_capacity(columns.len());
        let mut width = 0;
        for c in &columns {
            offsets.push(width);
            width += c.width();
        }
        Ok(DataTransformer {
            schema,
            columns,
            offsets,
            width,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn columns(&self) -> &[ColumnTransform] {
        &self.columns
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn offset(&self, column: usize) -> usize {
        self.offsets[column]
    }

    /// Output blocks in row order: α (tanh) and β (softmax) per continuous
    /// column, one softmax block per discrete column.
    pub fn spans(&self) -> Vec<Span> {
        let mut out = Vec::new();
        for (j, c) in self.columns.iter().enumerate() {
            let o = self.offsets[j];
            match c {
                ColumnTransform::Continuous(t) => {
                    out.push(Span {
                        start: o,
                        width: 1,
                        activation: Activation::Tanh,
                        column: j,
                    });
                    out.push(Span {
                        start: o + 1,
                        width: t.mode_count(),
                        activation: Activation::Softmax,
                        column: j,
                    });
                }
                ColumnTransform::Discrete(t) => out.push(Span {
                    start: o,
                    width: t.categories.len(),
                    activation: Activation::Softmax,
                    column: j,
                }),
            }
        }
        out
    }

    /// Discrete transforms in schema order, with their column index.
    pub fn discrete(&self) -> Vec<&DiscreteTransform> {
        self.columns
            .iter()
            .filter_map(|c| match c {
                ColumnTransform::Discrete(t) => Some(t),
                _ => None,
            })
            .collect()
    }

    /// Hard-encodes every row of `table`, sampling continuous modes.
    pub fn encode_table<R: Rng + ?Sized>(&self, table: &Table, rng: &mut R) -> Result<Matrix> {
        if !table.schema().compatible_with(&self.schema) {
            return Err(Error::Schema("table does not match the fitted schema".into()));
        }
        let table = if table.schema() == &self.schema {
            std::borrow::Cow::Borrowed(table)
        } else {
            std::borrow::Cow::Owned(table.conform_to(&self.schema)?)
        };
        let n = table.n_rows();
        let mut out = Matrix::zeros(n, self.width);
        for (j, c) in self.columns.iter().enumerate() {
            let o = self.offsets[j];
            match (c, table.column(j)) {
                (ColumnTransform::Continuous(t), ColumnData::Continuous(v)) => {
                    for (r, &x) in v.iter().enumerate() {
                        let (a, k) = t.encode(x, rng)?;
                        let row = out.row_mut(r);
                        row[o] = a;
                        row[o + 1 + k] = 1.0;
                    }
                }
                (ColumnTransform::Discrete(_), ColumnData::Discrete(v)) => {
                    for (r, &k) in v.iter().enumerate() {
                        out.row_mut(r)[o + k as usize] = 1.0;
                    }
                }
                _ => return Err(Error::Schema(format!("column {j} kind changed"))),
            }
        }
        Ok(out)
    }

    /// Encodes one row given as cells; also returns the sampled mode of each
    /// continuous column (`None` for discrete columns).
    pub fn encode_row<R: Rng + ?Sized>(&self, row: &[Cell], rng: &mut R) -> Result<(Vec<f64>, Vec<Option<usize>>)> {
        if row.len() != self.columns.len() {
            return Err(Error::Shape(format!(
                "row has {} cells, schema has {} columns",
                row.len(),
                self.columns.len()
            )));
        }
        let mut out = vec![0.0; self.width];
        let mut modes = Vec::with_capacity(row.len());
        for (j, (c, cell)) in self.columns.iter().zip(row).enumerate() {
            let o = self.offsets[j];
            match (c, cell) {
                (ColumnTransform::Continuous(t), Cell::Num(x)) => {
                    let (a, k) = t.encode(*x, rng)?;
                    out[o] = a;
                    out[o + 1 + k] = 1.0;
                    modes.push(Some(k));
                }
                (ColumnTransform::Discrete(t), Cell::Cat(s)) => {
                    let k = t.index_of(s).ok_or_else(|| {
                        Error::Schema(format!(
                            "unknown category `{s}` in column `{}`",
                            self.schema.columns[j].name
                        ))
                    })?;
                    out[o + k] = 1.0;
                    modes.push(None);
                }
                _ => return Err(Error::Schema(format!("cell kind mismatch in column {j}"))),
            }
        }
        Ok((out, modes))
    }

    pub fn decode_row(&self, encoded: &[f64]) -> Result<Vec<Cell>> {
        if encoded.len() != self.width {
            return Err(Error::Shape(format!(
                "encoded row has width {}, expected {}",
                encoded.len(),
                self.width
            )));
        }
        Ok(self
            .columns
            .iter()
            .zip(&self.offsets)
            .map(|(c, &o)| match c {
                ColumnTransform::Continuous(t) => {
                    Cell::Num(t.decode(encoded[o], &encoded[o + 1..o + 1 + t.mode_count()]))
                }
                ColumnTransform::Discrete(t) => {
                    Cell::Cat(t.categories[argmax(&encoded[o..o + t.categories.len()])].clone())
                }
            })
            .collect())
    }

    /// Decodes each row of `m` (soft blocks resolved by argmax).
    pub fn decode_matrix(&self, m: &Matrix) -> Result<Table> {
        if m.cols() != self.width {
            return Err(Error::Shape(format!(
                "encoded matrix has width {}, expected {}",
                m.cols(),
                self.width
            )));
        }
        let n = m.rows();
        let mut columns = Vec::with_capacity(self.columns.len());
        for (c, &o) in self.columns.iter().zip(&self.offsets) {
            columns.push(match c {
                ColumnTransform::Continuous(t) => ColumnData::Continuous(
                    (0..n)
                        .map(|r| {
                            let row = m.row(r);
                            t.decode(row[o], &row[o + 1..o + 1 + t.mode_count()])
                        })
                        .collect(),
                ),
                ColumnTransform::Discrete(t) => ColumnData::Discrete(
                    (0..n)
                        .map(|r| argmax(&m.row(r)[o..o + t.categories.len()]) as u32)
                        .collect(),
                ),
            });
        }
        Table::new(self.schema.clone(), columns)
    }

    pub fn is_continuous(&self, column: usize) -> bool {
        self.schema.columns[column].kind == ColumnKind::Continuous
    }
}
