//! Discrete Bayesian networks: ancestral sampling, likelihood, refitting.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::bif::{BifDocument, BifProbability, BifVariable};
use crate::data::{ColumnData, ColumnSpec, Schema, Table};
use crate::error::{Error, Result};

/// Log-probability assigned to impossible observations.
pub const LOG_ZERO: f64 = -1e9;
/// Pseudo-count added to every CPT cell when refitting.
pub const REFIT_SMOOTHING: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BnNode {
    pub name: String,
    pub states: Vec<String>,
    pub parents: Vec<usize>,
    /// Row per parent configuration (last parent fastest).
    pub cpt: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BayesNet {
    pub nodes: Vec<BnNode>,
    order: Vec<usize>,
}

fn normalize_row(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    for v in row {
        *v /= s;
    }
}

impl BayesNet {
    /// Validates acyclicity and CPT shapes; rows are renormalized exactly.
    pub fn new(mut nodes: Vec<BnNode>) -> Result<Self> {
        let n = nodes.len();
        for (i, node) in nodes.iter_mut().enumerate() {
            if node.states.is_empty() {
                return Err(Error::InvalidArgument(format!("node `{}` has no states", node.name)));
            }
            if node.parents.iter().any(|&p| p >= n || p == i) {
                return Err(Error::InvalidArgument(format!("node `{}` has an invalid parent", node.name)));
            }
            for row in &mut node.cpt {
                if row.len() != node.states.len() || row.iter().any(|v| !(*v >= 0.0)) || row.iter().sum::<f64>() <= 0.0 {
                    return Err(Error::InvalidArgument(format!("bad CPT row for `{}`", node.name)));
                }
                normalize_row(row);
            }
        }
        for i in 0..n {
            let cfg: usize = nodes[i].parents.iter().map(|&p| nodes[p].states.len()).product();
            if nodes[i].cpt.len() != cfg {
                return Err(Error::InvalidArgument(format!(
                    "node `{}` has {} CPT rows, expected {cfg}",
                    nodes[i].name,
                    nodes[i].cpt.len()
                )));
            }
        }
        // Kahn's algorithm, preferring declaration order among ready nodes.
        let mut indeg: Vec<usize> = nodes.iter().map(|x| x.parents.len()).collect();
        let mut children = vec![Vec::new(); n];
        for (i, node) in nodes.iter().enumerate() {
            for &p in &node.parents {
                children[p].push(i);
            }
        }
        let mut ready: std::collections::BTreeSet<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(&i) = ready.iter().next() {
            ready.remove(&i);
            order.push(i);
            for &c in &children[i] {
                indeg[c] -= 1;
                if indeg[c] == 0 {
                    ready.insert(c);
                }
            }
        }
        if order.len() != n {
            return Err(Error::InvalidArgument("network contains a cycle".into()));
        }
        Ok(BayesNet { nodes, order })
    }

    pub fn from_document(doc: &BifDocument) -> Result<Self> {
        let index: HashMap<&str, usize> =
            doc.variables.iter().enumerate().map(|(i, v)| (v.name.as_str(), i)).collect();
        let mut nodes: Vec<BnNode> = doc
            .variables
            .iter()
            .map(|v| BnNode {
                name: v.name.clone(),
                states: v.states.clone(),
                parents: Vec::new(),
                cpt: Vec::new(),
            })
            .collect();
        for p in &doc.probabilities {
            let c = *index
                .get(p.child.as_str())
                .ok_or_else(|| Error::InvalidArgument(format!("unknown variable `{}`", p.child)))?;
            nodes[c].parents = p
                .parents
                .iter()
                .map(|q| {
                    index
                        .get(q.as_str())
                        .copied()
                        .ok_or_else(|| Error::InvalidArgument(format!("unknown variable `{q}`")))
                })
                .collect::<Result<_>>()?;
            nodes[c].cpt = p.rows.clone();
        }
        BayesNet::new(nodes)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_document(&super::bif::parse_bif(&text)?)
    }

    pub fn to_document(&self, name: &str) -> BifDocument {
        BifDocument {
            name: name.to_string(),
            variables: self
                .nodes
                .iter()
                .map(|n| BifVariable {
                    name: n.name.clone(),
                    states: n.states.clone(),
                })
                .collect(),
            probabilities: self
                .order
                .iter()
                .map(|&i| BifProbability {
                    child: self.nodes[i].name.clone(),
                    parents: self.nodes[i].parents.iter().map(|&p| self.nodes[p].name.clone()).collect(),
                    rows: self.nodes[i].cpt.clone(),
                })
                .collect(),
        }
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    pub fn schema(&self) -> Schema {
        Schema {
            columns: self
                .nodes
                .iter()
                .map(|n| ColumnSpec::discrete(n.name.clone(), n.states.clone()))
                .collect(),
        }
    }

    fn config(&self, node: usize, states: impl Fn(usize) -> usize) -> usize {
        self.nodes[node]
            .parents
            .iter()
            .fold(0, |k, &p| k * self.nodes[p].states.len() + states(p))
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Table {
        let mut cols = vec![vec![0u32; n]; self.nodes.len()];
        let mut current = vec![0usize; self.nodes.len()];
        for r in 0..n {
            for &i in &self.order {
                let row = &self.nodes[i].cpt[self.config(i, |p| current[p])];
                let mut u: f64 = rng.gen();
                let mut pick = row.len() - 1;
                for (s, &p) in row.iter().enumerate() {
                    if u < p {
                        pick = s;
                        break;
                    }
                    u -= p;
                }
                // Never land on a zero-probability state through round-off.
                if row[pick] == 0.0 {
                    pick = row.iter().rposition(|&p| p > 0.0).expect("normalized row");
                }
                current[i] = pick;
                cols[i][r] = pick as u32;
            }
        }
        Table::new(self.schema(), cols.into_iter().map(ColumnData::Discrete).collect())
            .expect("sampled states are in range")
    }

    /// Maps the table's columns and categories onto nodes and states by name;
    /// unknown states map to `None`.
    fn align(&self, table: &Table) -> Result<Vec<Vec<Option<usize>>>> {
        let schema = table.schema();
        let mut out = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let j = schema
                .index_of(&node.name)
                .ok_or_else(|| Error::Schema(format!("table lacks column `{}`", node.name)))?;
            let codes = table.discrete(j)?;
            let map: Vec<Option<usize>> = schema.columns[j]
                .categories()
                .iter()
                .map(|c| node.states.iter().position(|s| s == c))
                .collect();
            out.push(codes.iter().map(|&c| map[c as usize]).collect());
        }
        Ok(out)
    }

    /// Mean log-likelihood per row; impossible cells contribute [`LOG_ZERO`].
    pub fn log_likelihood(&self, table: &Table) -> Result<f64> {
        let n = table.n_rows();
        if n == 0 {
            return Err(Error::InvalidArgument("log-likelihood of an empty table".into()));
        }
        let cols = self.align(table)?;
        let mut total = 0.0;
        for r in 0..n {
            for i in 0..self.nodes.len() {
                let Some(s) = cols[i][r] else {
                    total += LOG_ZERO;
                    continue;
                };
                if self.nodes[i].parents.iter().any(|&p| cols[p][r].is_none()) {
                    total += LOG_ZERO;
                    continue;
                }
                let k = self.config(i, |p| cols[p][r].expect("checked"));
                let p = self.nodes[i].cpt[k][s];
                total += if p > 0.0 { p.ln() } else { LOG_ZERO };
            }
        }
        Ok(total / n as f64)
    }

    /// Same structure, CPTs re-estimated from `table` with additive smoothing.
    pub fn refit(&self, table: &Table, smoothing: f64) -> Result<BayesNet> {
        let cols = self.align(table)?;
        let mut nodes = self.nodes.clone();
        for (i, node) in nodes.iter_mut().enumerate() {
            for row in &mut node.cpt {
                row.iter_mut().for_each(|v| *v = smoothing);
            }
            'rows: for r in 0..table.n_rows() {
                let Some(s) = cols[i][r] else { continue };
                let mut k = 0;
                for &p in &self.nodes[i].parents {
                    let Some(ps) = cols[p][r] else { continue 'rows };
                    k = k * self.nodes[p].states.len() + ps;
                }
                node.cpt[k][s] += 1.0;
            }
            for row in &mut node.cpt {
                if row.iter().sum::<f64>() <= 0.0 {
                    row.iter_mut().for_each(|v| *v = 1.0);
                }
            }
        }
        BayesNet::new(nodes)
    }

    /// Exact entropy (nats) by enumerating the joint; refuses huge state spaces.
    pub fn entropy(&self) -> Result<f64> {
        let states: f64 = self.nodes.iter().map(|n| n.states.len() as f64).product();
        if states > (1u64 << 24) as f64 {
            return Err(Error::Unsupported(format!("enumerating {states} joint states")));
        }
        let mut h = 0.0;
        let mut assign = vec![0usize; self.nodes.len()];
        self.enumerate(0, 0.0, &mut assign, &mut h);
        Ok(h)
    }

    fn enumerate(&self, depth: usize, logp: f64, assign: &mut [usize], h: &mut f64) {
        if depth == self.order.len() {
            *h -= logp.exp() * logp;
            return;
        }
        let i = self.order[depth];
        let k = self.config(i, |p| assign[p]);
        for s in 0..self.nodes[i].states.len() {
            let p = self.nodes[i].cpt[k][s];
            if p > 0.0 {
                assign[i] = s;
                self.enumerate(depth + 1, logp + p.ln(), assign, h);
            }
        }
    }

    pub fn edge_count(&self) -> usize {
        self.nodes.iter().map(|n| n.parents.len()).sum()
    }
}
