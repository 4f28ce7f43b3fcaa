//! Likelihood fitness on simulated data and machine-learning efficacy on real data.

pub mod features;
pub mod metrics;
pub mod models;
pub mod tree;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use features::{extract_labels, FeatureEncoder, Labels};
pub use models::{LinearModel, Mlp, MlpConfig};
pub use tree::DecisionTree;

use crate::data::{Metric, Table, TaskKind};
use crate::error::{Error, Result};
use crate::oracle::Oracle;
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PredictorKind {
    Tree { max_depth: usize },
    Logistic,
    Linear,
    Mlp { hidden: usize },
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PredictorKind::Tree { max_depth } => write!(f, "tree({max_depth})"),
            PredictorKind::Logistic => f.write_str("logistic"),
            PredictorKind::Linear => f.write_str("linear"),
            PredictorKind::Mlp { hidden } => write!(f, "mlp({hidden})"),
        }
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    /// `tree(D)`, `logistic`, `linear`, `mlp(H)`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let arg = |prefix: &str| -> Option<Result<usize>> {
            let inner = s.strip_prefix(prefix)?.strip_prefix('(')?.strip_suffix(')')?;
            Some(
                inner
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad argument in `{s}`"))),
            )
        };
        if let Some(d) = arg("tree") {
            return Ok(PredictorKind::Tree { max_depth: d? });
        }
        if let Some(h) = arg("mlp") {
            return Ok(PredictorKind::Mlp { hidden: h? });
        }
        match s {
            "logistic" => Ok(PredictorKind::Logistic),
            "linear" => Ok(PredictorKind::Linear),
            _ => Err(Error::InvalidArgument(format!(
                "unknown predictor `{s}` (expected tree(D), logistic, linear or mlp(H))"
            ))),
        }
    }
}

impl TryFrom<String> for PredictorKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<PredictorKind> for String {
    fn from(k: PredictorKind) -> String {
        k.to_string()
    }
}

impl PredictorKind {
    /// Predictor set used when none is configured.
    pub fn defaults(task: TaskKind) -> Vec<PredictorKind> {
        match task {
            TaskKind::Classification => vec![
                PredictorKind::Tree { max_depth: 20 },
                PredictorKind::Logistic,
                PredictorKind::Mlp { hidden: 50 },
            ],
            TaskKind::Regression => vec![PredictorKind::Linear, PredictorKind::Mlp { hidden: 100 }],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Predictor {
    Tree(DecisionTree),
    Linear(LinearModel),
    Mlp(Mlp),
}

impl Predictor {
    pub fn fit<R: Rng + ?Sized>(kind: PredictorKind, x: &Matrix, y: &Labels, rng: &mut R) -> Result<Self> {
        match (kind, y.task()) {
            (PredictorKind::Logistic, TaskKind::Regression) => {
                Err(Error::InvalidArgument("logistic regression needs a class target".into()))
            }
            (PredictorKind::Linear, TaskKind::Classification) => {
                Err(Error::InvalidArgument("linear regression needs a numeric target".into()))
            }
            (PredictorKind::Tree { max_depth }, _) => Ok(Predictor::Tree(DecisionTree::fit(x, y, max_depth)?)),
            (PredictorKind::Logistic | PredictorKind::Linear, _) => Ok(Predictor::Linear(LinearModel::fit(x, y)?)),
            (PredictorKind::Mlp { hidden }, _) => Ok(Predictor::Mlp(Mlp::fit(x, y, MlpConfig::new(hidden), rng)?)),
        }
    }

    /// Class indices (as f64) or values.
    pub fn predict(&self, x: &Matrix) -> Result<Vec<f64>> {
        match self {
            Predictor::Tree(t) => Ok(t.predict(x)),
            Predictor::Linear(m) => m.predict(x),
            Predictor::Mlp(m) => m.predict(x),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodReport {
    pub l_syn: f64,
    pub l_test: f64,
}

/// `l_syn`: mean log-likelihood of `t_syn` under the oracle. `l_test`: mean
/// log-likelihood of `t_test` under the oracle structure refit on `t_syn`.
pub fn likelihood_fitness<R: Rng + ?Sized>(
    oracle: &Oracle,
    t_syn: &Table,
    t_test: &Table,
    rng: &mut R,
) -> Result<LikelihoodReport> {
    let schema = oracle.schema();
    for t in [t_syn, t_test] {
        for c in &schema.columns {
            let j = t
                .schema()
                .index_of(&c.name)
                .ok_or_else(|| Error::Schema(format!("column `{}` is missing", c.name)))?;
            if t.schema().columns[j].kind != c.kind {
                return Err(Error::Schema(format!("column `{}` has the wrong kind", c.name)));
            }
        }
    }
    let l_syn = oracle.log_likelihood(t_syn)?;
    let refit = oracle.refit(t_syn, rng)?;
    let l_test = refit.log_likelihood(t_test)?;
    Ok(LikelihoodReport { l_syn, l_test })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficacyConfig {
    pub predictors: Vec<PredictorKind>,
    pub seed: u64,
    /// Positive class for F1. Defaults to the least frequent class of the
    /// test table (ties: first listed).
    pub positive: Option<String>,
}

impl EfficacyConfig {
    pub fn new(predictors: Vec<PredictorKind>, seed: u64) -> Self {
        EfficacyConfig {
            predictors,
            seed,
            positive: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorScore {
    pub predictor: PredictorKind,
    pub scores: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EfficacyReport {
    pub target: String,
    pub task: TaskKind,
    pub metrics: Vec<Metric>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive: Option<String>,
    pub per_predictor: Vec<PredictorScore>,
    /// Mean over predictors, per metric.
    pub mean: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

impl EfficacyReport {
    /// Mean of the first configured metric.
    pub fn primary(&self) -> f64 {
        self.mean[self.metrics[0].name()]
    }

    /// `predictor,metric,score` rows; means use predictor `mean`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("predictor,metric,score\n");
        for p in &self.per_predictor {
            for m in &self.metrics {
                s.push_str(&format!("{},{},{}\n", p.predictor, m.name(), p.scores[m.name()]));
            }
        }
        for m in &self.metrics {
            s.push_str(&format!("mean,{},{}\n", m.name(), self.mean[m.name()]));
        }
        s
    }
}

/// Row order that depends only on row contents.
fn canonical_order(x: &Matrix, y: &Labels) -> Vec<usize> {
    let key = |i: usize| -> f64 {
        match y {
            Labels::Classes { labels, .. } => labels[i] as f64,
            Labels::Values(v) => v[i],
        }
    };
    let mut idx: Vec<usize> = (0..x.rows()).collect();
    idx.sort_by(|&a, &b| {
        x.row(a)
            .iter()
            .zip(x.row(b))
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(key(a).total_cmp(&key(b)))
    });
    idx
}

/// Fits each configured predictor on `t_syn` and scores it on `t_test`. The
/// target column and its metrics come from the schema of `t_test`.
pub fn ml_efficacy(t_syn: &Table, t_test: &Table, config: &EfficacyConfig) -> Result<EfficacyReport> {
    let schema = t_test.schema();
    let tj = schema
        .target()
        .ok_or_else(|| Error::Schema("the test schema declares no target column".into()))?;
    let spec = &schema.columns[tj];
    let task = spec
        .task
        .ok_or_else(|| Error::Schema(format!("target `{}` has no task", spec.name)))?;
    let sj = t_syn
        .schema()
        .index_of(&spec.name)
        .ok_or_else(|| Error::Schema(format!("target column `{}` is missing from the synthetic table", spec.name)))?;
    if t_syn.n_rows() == 0 || t_test.n_rows() == 0 {
        return Err(Error::InvalidArgument("efficacy needs non-empty tables".into()));
    }
    if config.predictors.is_empty() {
        return Err(Error::InvalidArgument("no predictors configured".into()));
    }
    let metrics = if spec.metrics.is_empty() {
        match task {
            TaskKind::Regression => vec![Metric::R2],
            TaskKind::Classification if spec.categories().len() == 2 => vec![Metric::F1, Metric::Accuracy],
            TaskKind::Classification => vec![Metric::MacroF1, Metric::Accuracy],
        }
    } else {
        spec.metrics.clone()
    };
    if task == TaskKind::Classification && metrics.contains(&Metric::R2) {
        return Err(Error::Schema("r2 is a regression metric".into()));
    }
    if task == TaskKind::Regression && metrics.iter().any(|&m| m != Metric::R2) {
        return Err(Error::Schema("a regression target only supports r2".into()));
    }

    let encoder = FeatureEncoder::fit(t_syn, Some(sj))?;
    let x_syn = encoder.encode(t_syn)?;
    let x_test = encoder.encode(t_test)?;
    let mut names: Vec<String> = t_syn.schema().columns[sj].categories().to_vec();
    let y_syn = extract_labels(t_syn, &spec.name, &mut names)?;
    let y_test = extract_labels(t_test, &spec.name, &mut names)?;
    let y_syn = match y_syn {
        Labels::Classes { labels, .. } => Labels::Classes {
            labels,
            names: names.clone(),
        },
        v => v,
    };

    let mut notes = Vec::new();
    let mut positive = None;
    let mut positive_idx = 0;
    if let Labels::Classes { labels, .. } = &y_test {
        positive_idx = match &config.positive {
            Some(p) => names
                .iter()
                .position(|n| n == p)
                .ok_or_else(|| Error::InvalidArgument(format!("positive class `{p}` is not a target category")))?,
            None => {
                let mut counts = vec![0usize; names.len()];
                for &l in labels {
                    counts[l] += 1;
                }
                let present: Vec<usize> = (0..names.len()).filter(|&c| counts[c] > 0).collect();
                *present.iter().min_by_key(|&&c| counts[c]).unwrap_or(&0)
            }
        };
        positive = Some(names[positive_idx].clone());
    }

    let mut order = canonical_order(&x_syn, &y_syn);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    order.shuffle(&mut rng);
    let x_train = x_syn.select_rows(&order);
    let y_train = y_syn.select(&order);

    let single_class = match &y_train {
        Labels::Classes { labels, .. } => labels.iter().all(|&l| l == labels[0]),
        Labels::Values(_) => false,
    };
    if single_class {
        notes.push("training target has a single class; predictors output it and F1 is defined as 0".into());
    }

    let mut per_predictor = Vec::new();
    for (pi, &kind) in config.predictors.iter().enumerate() {
        let mut prng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1 + pi as u64));
        let pred = if single_class {
            let Labels::Classes { labels, .. } = &y_train else { unreachable!() };
            vec![labels[0] as f64; x_test.rows()]
        } else {
            Predictor::fit(kind, &x_train, &y_train, &mut prng)?.predict(&x_test)?
        };
        let mut scores = BTreeMap::new();
        for &m in &metrics {
            let v = match &y_test {
                Labels::Values(truth) => metrics::r2(&pred, truth)?,
                Labels::Classes { labels, .. } => {
                    if single_class && m == Metric::F1 {
                        0.0
                    } else {
                        let p: Vec<usize> = pred.iter().map(|&v| v as usize).collect();
                        metrics::classification_score(m, &p, labels, positive_idx)?
                    }
                }
            };
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("{} score of {kind}", m.name())));
            }
            scores.insert(m.name().to_string(), v);
        }
        per_predictor.push(PredictorScore { predictor: kind, scores });
    }
    let mean = metrics
        .iter()
        .map(|m| {
            let k = m.name().to_string();
            let v = per_predictor.iter().map(|p: &PredictorScore| p.scores[&k]).sum::<f64>() / per_predictor.len() as f64;
            (k, v)
        })
        .collect();
    Ok(EfficacyReport {
        target: spec.name.clone(),
        task,
        metrics,
        positive,
        per_predictor,
        mean,
        notes,
    })
}
