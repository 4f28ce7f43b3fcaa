//! Chow-Liu tree Bayesian network over discretized columns.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{ColumnData, Table};
use crate::error::{Error, Result};

/// How a sampled bin becomes a continuous value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinValue {
    /// Bin midpoint.
    #[default]
    Center,
    /// Uniform draw inside the bin.
    Uniform,
}

impl std::str::FromStr for BinValue {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "center" => Ok(BinValue::Center),
            "uniform" => Ok(BinValue::Uniform),
            _ => Err(Error::InvalidArgument(format!("unknown bin value `{s}` (expected center or uniform)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClbnConfig {
    /// Equal-width bins per continuous column.
    pub bins: usize,
    /// Pseudo-count added to every cell of the joint and conditional tables.
    pub smoothing: f64,
    #[serde(default)]
    pub bin_value: BinValue,
}

impl Default for ClbnConfig {
    fn default() -> Self {
        ClbnConfig {
            bins: 15,
            smoothing: 0.1,
            bin_value: BinValue::Center,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Discretizer {
    Continuous { min: f64, max: f64, bins: usize },
    Discrete { categories: usize },
}

impl Discretizer {
    pub fn states(&self) -> usize {
        match self {
            Discretizer::Continuous { bins, .. } => *bins,
            Discretizer::Discrete { categories } => *categories,
        }
    }

    fn bin(&self, x: f64) -> usize {
        match *self {
            Discretizer::Continuous { min, max, bins } => {
                if max <= min {
                    return 0;
                }
                let b = ((x - min) / (max - min) * bins as f64).floor();
                (b.max(0.0) as usize).min(bins - 1)
            }
            Discretizer::Discrete { .. } => x as usize,
        }
    }

    fn value<R: Rng + ?Sized>(&self, b: usize, how: BinValue, rng: &mut R) -> f64 {
        match *self {
            Discretizer::Continuous { min, max, bins } => {
                if max <= min {
                    return min;
                }
                let w = (max - min) / bins as f64;
                let lo = min + w * b as f64;
                let hi = if b + 1 == bins { max } else { lo + w };
                let t = match how {
                    BinValue::Center => 0.5,
                    BinValue::Uniform => rng.gen::<f64>(),
                };
                (lo + t * (hi - lo)).clamp(min, max)
            }
            Discretizer::Discrete { .. } => b as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClbnModel {
    pub schema: crate::data::Schema,
    pub config: ClbnConfig,
    pub discretizers: Vec<Discretizer>,
    /// Parent of each column; the root (column 0) has none.
    pub parents: Vec<Option<usize>>,
    /// Sampling order (root first, every parent before its children).
    pub order: Vec<usize>,
    /// Per column: rows indexed by parent state (a single row for the root).
    pub tables: Vec<Vec<Vec<f64>>>,
}

fn discretize(table: &Table, bins: usize) -> Result<(Vec<Discretizer>, Vec<Vec<usize>>)> {
    let mut ds = Vec::with_capacity(table.n_cols());
    let mut codes = Vec::with_capacity(table.n_cols());
    for (j, col) in table.columns().iter().enumerate() {
        match col {
            ColumnData::Continuous(v) => {
                let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
                let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let d = Discretizer::Continuous { min, max, bins };
                codes.push(v.iter().map(|&x| d.bin(x)).collect());
                ds.push(d);
            }
            ColumnData::Discrete(v) => {
                let k = table.schema().columns[j].categories().len();
                codes.push(v.iter().map(|&c| c as usize).collect());
                ds.push(Discretizer::Discrete { categories: k });
            }
        }
    }
    Ok((ds, codes))
}

fn joint(a: &[usize], ka: usize, b: &[usize], kb: usize, smoothing: f64) -> Vec<f64> {
    let mut c = vec![smoothing; ka * kb];
    for (&x, &y) in a.iter().zip(b) {
        c[x * kb + y] += 1.0;
    }
    c
}

/// Mutual information (nats) of the smoothed empirical joint of two coded columns.
pub fn mutual_information(a: &[usize], ka: usize, b: &[usize], kb: usize, smoothing: f64) -> f64 {
    let c = joint(a, ka, b, kb, smoothing);
    let total: f64 = c.iter().sum();
    if total <= 0.0 {
        return 0.0;
    }
    let mut pa = vec![0.0; ka];
    let mut pb = vec![0.0; kb];
    for x in 0..ka {
        for y in 0..kb {
            let p = c[x * kb + y] / total;
            pa[x] += p;
            pb[y] += p;
        }
    }
    let mut mi = 0.0;
    for x in 0..ka {
        for y in 0..kb {
            let p = c[x * kb + y] / total;
            if p > 0.0 {
                mi += p * (p / (pa[x] * pb[y])).ln();
            }
        }
    }
    mi.max(0.0)
}

impl ClbnModel {
    pub fn fit(table: &Table, config: ClbnConfig) -> Result<Self> {
        if table.n_rows() == 0 {
            return Err(Error::InvalidArgument("cannot fit on an empty table".into()));
        }
        if table.n_cols() == 0 {
            return Err(Error::InvalidArgument("table has no columns".into()));
        }
        if config.bins == 0 || !(config.smoothing >= 0.0) {
            return Err(Error::InvalidArgument("bins must be positive and smoothing non-negative".into()));
        }
        let (discretizers, codes) = discretize(table, config.bins)?;
        let m = codes.len();
        let k: Vec<usize> = discretizers.iter().map(Discretizer::states).collect();
        let mut mi = vec![0.0; m * m];
        for i in 0..m {
            for j in i + 1..m {
                let v = mutual_information(&codes[i], k[i], &codes[j], k[j], config.smoothing);
                mi[i * m + j] = v;
                mi[j * m + i] = v;
            }
        }
        // Prim's maximum spanning tree grown from column 0.
        let mut in_tree = vec![false; m];
        let mut best = vec![f64::NEG_INFINITY; m];
        let mut link: Vec<Option<usize>> = vec![None; m];
        let mut parents = vec![None; m];
        let mut order = Vec::with_capacity(m);
        in_tree[0] = true;
        order.push(0);
        for j in 1..m {
            best[j] = mi[j];
            link[j] = Some(0);
        }
        for _ in 1..m {
            let next = (0..m)
                .filter(|&j| !in_tree[j])
                .fold(None, |acc: Option<usize>, j| match acc {
                    Some(a) if best[a] >= best[j] => Some(a),
                    _ => Some(j),
                })
                .expect("nodes remain");
            in_tree[next] = true;
            parents[next] = link[next];
            order.push(next);
            for j in 0..m {
                if !in_tree[j] && mi[next * m + j] > best[j] {
                    best[j] = mi[next * m + j];
                    link[j] = Some(next);
                }
            }
        }
        let mut tables = Vec::with_capacity(m);
        for i in 0..m {
            let t = match parents[i] {
                None => {
                    let mut row = vec![config.smoothing; k[i]];
                    for &c in &codes[i] {
                        row[c] += 1.0;
                    }
                    vec![normalized(row)]
                }
                Some(p) => {
                    let c = joint(&codes[p], k[p], &codes[i], k[i], config.smoothing);
                    c.chunks(k[i]).map(|r| normalized(r.to_vec())).collect()
                }
            };
            tables.push(t);
        }
        Ok(ClbnModel {
            schema: table.schema().clone(),
            config,
            discretizers,
            parents,
            order,
            tables,
        })
    }

    /// Undirected edges `(min, max)`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut e: Vec<(usize, usize)> = self
            .parents
            .iter()
            .enumerate()
            .filter_map(|(c, p)| p.map(|p| (p.min(c), p.max(c))))
            .collect();
        e.sort_unstable();
        e
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Table> {
        let m = self.parents.len();
        let mut states = vec![vec![0usize; n]; m];
        for r in 0..n {
            for &i in &self.order {
                let row = match self.parents[i] {
                    None => &self.tables[i][0],
                    Some(p) => &self.tables[i][states[p][r]],
                };
                states[i][r] = draw(row, rng);
            }
        }
        let mut cols = Vec::with_capacity(m);
        for (i, d) in self.discretizers.iter().enumerate() {
            cols.push(match d {
                Discretizer::Continuous { .. } => {
                    ColumnData::Continuous(states[i].iter().map(|&b| d.value(b, self.config.bin_value, rng)).collect())
                }
                Discretizer::Discrete { .. } => ColumnData::Discrete(states[i].iter().map(|&b| b as u32).collect()),
            });
        }
        Table::new(self.schema.clone(), cols)
    }
}

fn normalized(mut row: Vec<f64>) -> Vec<f64> {
    let s: f64 = row.iter().sum();
    if s <= 0.0 {
        let u = 1.0 / row.len() as f64;
        row.iter_mut().for_each(|v| *v = u);
    } else {
        row.iter_mut().for_each(|v| *v /= s);
    }
    row
}

fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let mut u: f64 = rng.gen();
    for (i, &w) in p.iter().enumerate() {
        if u < w {
            return i;
        }
        u -= w;
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}
