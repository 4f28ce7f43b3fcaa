//! Benchmark runner: a dataset × method × seed grid, scored by likelihood
//! fitness (simulated data) or ML efficacy (real data).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clbn::{BinValue, ClbnConfig, ClbnModel};
use crate::ctgan::{CtganConfig, CtganModel, LossKind};
use crate::data::{Schema, Table};
use crate::error::{Error, Result};
use crate::eval::{likelihood_fitness, ml_efficacy, EfficacyConfig, PredictorKind};
use crate::io::load_csv;
use crate::model::Model;
use crate::oracle::Oracle;
use crate::sampler::CondMode;
use crate::transform::Normalization;
use crate::tvae::{TvaeConfig, TvaeModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ctgan,
    Tvae,
    Clbn,
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ctgan" => Ok(ModelKind::Ctgan),
            "tvae" => Ok(ModelKind::Tvae),
            "clbn" => Ok(ModelKind::Clbn),
            _ => Err(Error::InvalidArgument(format!("unknown model `{s}` (expected ctgan, tvae or clbn)"))),
        }
    }
}

/// Training overrides; unset fields keep the model's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitOptions {
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub batch_size: Option<usize>,
    #[serde(default)]
    pub normalization: Option<Normalization>,
    #[serde(default)]
    pub cond: Option<CondMode>,
    #[serde(default)]
    pub loss: Option<LossKind>,
    #[serde(default)]
    pub pac: Option<usize>,
    /// Continuous-column bins (clbn only).
    #[serde(default)]
    pub bins: Option<usize>,
    #[serde(default)]
    pub bin_value: Option<BinValue>,
}

impl FitOptions {
    pub fn ctgan_config(&self) -> CtganConfig {
        let mut c = CtganConfig::default();
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.normalization {
            c.normalization = v;
        }
        if let Some(v) = self.cond {
            c.cond = v;
        }
        if let Some(v) = self.loss {
            c.loss = v;
        }
        if let Some(v) = self.pac {
            c.pac = v;
        }
        c
    }

    pub fn tvae_config(&self) -> Result<TvaeConfig> {
        if self.cond.is_some() || self.loss.is_some() || self.pac.is_some() {
            return Err(Error::InvalidArgument("cond, loss and pac only apply to ctgan".into()));
        }
        let mut c = TvaeConfig::default();
        if let Some(v) = self.epochs {
            c.epochs = v;
        }
        if let Some(v) = self.batch_size {
            c.batch_size = v;
        }
        if let Some(v) = self.normalization {
            c.normalization = v;
        }
        Ok(c)
    }

    pub fn clbn_config(&self) -> Result<ClbnConfig> {
        let network = FitOptions {
            bins: None,
            bin_value: None,
            ..self.clone()
        };
        if network != FitOptions::default() {
            return Err(Error::InvalidArgument("clbn only takes bins and bin_value".into()));
        }
        let mut c = ClbnConfig::default();
        if let Some(v) = self.bins {
            c.bins = v;
        }
        if let Some(v) = self.bin_value {
            c.bin_value = v;
        }
        Ok(c)
    }

    fn has_clbn_options(&self) -> bool {
        self.bins.is_some() || self.bin_value.is_some()
    }
}

/// Trains a model of `kind` on `table`.
pub fn fit_model(kind: ModelKind, table: &Table, options: &FitOptions, seed: u64) -> Result<Model> {
    match kind {
        _ if kind != ModelKind::Clbn && options.has_clbn_options() => {
            Err(Error::InvalidArgument("bins and bin_value only apply to clbn".into()))
        }
        ModelKind::Ctgan => Ok(Model::Ctgan(CtganModel::fit(table, options.ctgan_config(), seed)?)),
        ModelKind::Tvae => Ok(Model::Tvae(TvaeModel::fit(table, options.tvae_config()?, seed)?)),
        ModelKind::Clbn => Ok(Model::Clbn(ClbnModel::fit(table, options.clbn_config()?)?)),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub name: String,
    /// `grid`, `gridr`, `ring` or `bif:PATH`; makes this a simulated dataset.
    #[serde(default)]
    pub oracle: Option<String>,
    #[serde(default = "default_rows")]
    pub train_rows: usize,
    #[serde(default = "default_rows")]
    pub test_rows: usize,
    /// Real datasets: CSV files and schema.
    #[serde(default)]
    pub train: Option<PathBuf>,
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub schema: Option<PathBuf>,
    /// Defaults depend on the target's task.
    #[serde(default)]
    pub predictors: Option<Vec<PredictorKind>>,
}

fn default_rows() -> usize {
    10_000
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "type")]
pub enum MethodKind {
    /// The training table itself.
    Identity,
    Ctgan {
        #[serde(default, flatten)]
        options: FitOptions,
    },
    Tvae {
        #[serde(default, flatten)]
        options: FitOptions,
    },
    Clbn {
        #[serde(default, flatten)]
        options: FitOptions,
    },
    /// Pre-generated synthetic tables keyed by dataset name. Paths may hold
    /// a `{seed}` placeholder.
    External { files: BTreeMap<String, PathBuf> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: MethodKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Suite {
    pub datasets: Vec<DatasetSpec>,
    pub methods: Vec<MethodSpec>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_workers")]
    pub workers: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

fn default_workers() -> usize {
    1
}

impl Suite {
    /// Reads a suite file; relative paths are resolved against its directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let mut suite: Suite = serde_json::from_str(&fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for d in &mut suite.datasets {
            d.train.iter_mut().for_each(fix);
            d.test.iter_mut().for_each(fix);
            d.schema.iter_mut().for_each(fix);
            if let Some(o) = &mut d.oracle {
                if let Some(p) = o.strip_prefix("bif:") {
                    if Path::new(p).is_relative() {
                        *o = format!("bif:{}", base.join(p).display());
                    }
                }
            }
        }
        for m in &mut suite.methods {
            if let MethodKind::External { files } = &mut m.kind {
                files.values_mut().for_each(fix);
            }
        }
        suite.validate()?;
        Ok(suite)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.methods.is_empty() || self.seeds.is_empty() {
            return Err(Error::InvalidArgument("suite needs datasets, methods and seeds".into()));
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.datasets.len() {
            return Err(Error::InvalidArgument("dataset names must be unique".into()));
        }
        let mut m: Vec<&str> = self.methods.iter().map(|d| d.name.as_str()).collect();
        m.sort_unstable();
        m.dedup();
        if m.len() != self.methods.len() {
            return Err(Error::InvalidArgument("method names must be unique".into()));
        }
        for d in &self.datasets {
            let real = d.train.is_some() && d.test.is_some() && d.schema.is_some();
            if d.oracle.is_some() == real {
                return Err(Error::InvalidArgument(format!(
                    "dataset `{}` needs either an oracle or train/test/schema files",
                    d.name
                )));
            }
        }
        for m in &self.methods {
            if let MethodKind::External { files } = &m.kind {
                if let Some(d) = self.datasets.iter().find(|d| !files.contains_key(&d.name)) {
                    return Err(Error::InvalidArgument(format!(
                        "external method `{}` has no file for dataset `{}`",
                        m.name, d.name
                    )));
                }
            }
        }
        if self.workers == 0 {
            return Err(Error::InvalidArgument("workers must be positive".into()));
        }
        Ok(())
    }
}

/// Scores of one (dataset, method, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub dataset: String,
    pub method: String,
    pub seed: u64,
    /// Metric name to value, in report order.
    pub metrics: Vec<(String, f64)>,
}

/// Train and test tables of one dataset for one seed.
pub struct Split {
    pub train: Table,
    pub test: Table,
    pub oracle: Option<Oracle>,
}

/// Simulated datasets sample fresh tables per seed; real ones read files.
pub fn load_split(d: &DatasetSpec, seed: u64) -> Result<Split> {
    if let Some(spec) = &d.oracle {
        let oracle = Oracle::from_spec(spec, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_da7a);
        let train = oracle.sample(d.train_rows, &mut rng);
        let test = oracle.sample(d.test_rows, &mut rng);
        return Ok(Split {
            train,
            test,
            oracle: Some(oracle),
        });
    }
    let (Some(tr), Some(te), Some(sc)) = (&d.train, &d.test, &d.schema) else {
        return Err(Error::InvalidArgument(format!("dataset `{}` is incomplete", d.name)));
    };
    let schema = Schema::load(sc)?;
    let train = load_csv(tr, &schema)?;
    let test = load_csv(te, &schema)?;
    Ok(Split {
        train,
        test,
        oracle: None,
    })
}

/// Synthesizes a table the size of the training split.
pub fn synthesize(method: &MethodSpec, dataset: &DatasetSpec, split: &Split, seed: u64) -> Result<Table> {
    let n = split.train.n_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 1);
    let model = match &method.kind {
        MethodKind::Identity => return Ok(split.train.clone()),
        MethodKind::External { files } => {
            let p = files[&dataset.name].to_string_lossy().replace("{seed}", &seed.to_string());
            return load_csv(p, split.train.schema());
        }
        MethodKind::Ctgan { options } => fit_model(ModelKind::Ctgan, &split.train, options, seed)?,
        MethodKind::Tvae { options } => fit_model(ModelKind::Tvae, &split.train, options, seed)?,
        MethodKind::Clbn { options } => fit_model(ModelKind::Clbn, &split.train, options, seed)?,
    };
    model.sample(n, None, &mut rng)
}

pub fn score(dataset: &DatasetSpec, split: &Split, syn: &Table, seed: u64) -> Result<Vec<(String, f64)>> {
    match &split.oracle {
        Some(o) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0ddb_a11);
            let r = likelihood_fitness(o, syn, &split.test, &mut rng)?;
            Ok(vec![("l_syn".into(), r.l_syn), ("l_test".into(), r.l_test)])
        }
        None => {
            let task = split
                .test
                .schema()
                .target()
                .and_then(|t| split.test.schema().columns[t].task)
                .ok_or_else(|| Error::Schema(format!("dataset `{}` has no target task", dataset.name)))?;
            let predictors = dataset
                .predictors
                .clone()
                .unwrap_or_else(|| PredictorKind::defaults(task));
            let r = ml_efficacy(syn, &split.test, &EfficacyConfig::new(predictors, seed))?;
            Ok(r.metrics.iter().map(|m| (m.name().to_string(), r.mean[m.name()])).collect())
        }
    }
}

pub fn run_cell(suite: &Suite, d: usize, m: usize, seed: u64) -> Result<CellResult> {
    let dataset = &suite.datasets[d];
    let method = &suite.methods[m];
    let split = load_split(dataset, seed)?;
    let syn = synthesize(method, dataset, &split, seed)?;
    Ok(CellResult {
        dataset: dataset.name.clone(),
        method: method.name.clone(),
        seed,
        metrics: score(dataset, &split, &syn, seed)?,
    })
}

fn cell_file(dir: &Path, c: &CellResult) -> PathBuf {
    dir.join(format!("{}__{}__{}.json", c.dataset, c.method, c.seed))
}

/// Runs every cell on a pool of `suite.workers` threads, writes one JSON file
/// per cell under `out/cells/`, then merges them into `out/results.csv`
/// (mean and standard deviation over seeds per dataset, method and metric).
/// Returns the merged rows.
pub fn run_suite(suite: &Suite, out: &Path) -> Result<Vec<SummaryRow>> {
    suite.validate()?;
    let cells_dir = out.join("cells");
    fs::create_dir_all(&cells_dir)?;
    let mut jobs = Vec::new();
    for d in 0..suite.datasets.len() {
        for m in 0..suite.methods.len() {
            for &s in &suite.seeds {
                jobs.push((d, m, s));
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(suite.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    let results: Vec<Result<CellResult>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(d, m, s)| {
                let c = run_cell(suite, d, m, s).map_err(|e| {
                    Error::InvalidArgument(format!(
                        "{} / {} / seed {s}: {e}",
                        suite.datasets[d].name, suite.methods[m].name
                    ))
                })?;
                fs::write(cell_file(&cells_dir, &c), serde_json::to_string_pretty(&c)?)?;
                Ok(c)
            })
            .collect()
    });
    let cells = results.into_iter().collect::<Result<Vec<_>>>()?;
    let rows = summarize(&cells);
    fs::write(out.join("results.csv"), summary_csv(&rows))?;
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub dataset: String,
    pub method: String,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
}

/// Groups cells in first-seen order and averages over seeds.
pub fn summarize(cells: &[CellResult]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String, String)> = Vec::new();
    let mut values: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    for c in cells {
        for (metric, v) in &c.metrics {
            let k = (c.dataset.clone(), c.method.clone(), metric.clone());
            if !values.contains_key(&k) {
                keys.push(k.clone());
            }
            values.entry(k).or_default().push(*v);
        }
    }
    keys.into_iter()
        .map(|k| {
            let v = &values[&k];
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let std = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            SummaryRow {
                dataset: k.0,
                method: k.1,
                metric: k.2,
                mean,
                std,
                seeds: v.len(),
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("dataset,method,metric,mean,std,seeds\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.dataset, r.method, r.metric, r.mean, r.std, r.seeds
        ));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_json_parses_with_defaults() {
        let text = r#"{
            "datasets": [{"name": "ring", "oracle": "ring", "train_rows": 200, "test_rows": 100}],
            "methods": [
                {"name": "identity", "type": "identity"},
                {"name": "gan", "type": "ctgan", "epochs": 1, "pac": 1, "loss": "vanilla"},
                {"name": "clbn", "type": "clbn"}
            ],
            "seeds": [0, 1]
        }"#;
        let s: Suite = serde_json::from_str(text).unwrap();
        s.validate().unwrap();
        assert_eq!(s.workers, 1);
        let MethodKind::Ctgan { options } = &s.methods[1].kind else { panic!() };
        let c = options.ctgan_config();
        assert_eq!((c.epochs, c.pac, c.loss, c.batch_size), (1, 1, LossKind::Vanilla, 500));
        assert!(serde_json::from_str::<Suite>(r#"{"datasets": [], "methods": [], "bogus": 1}"#).is_err());
    }

    #[test]
    fn summary_keeps_order_and_averages() {
        let cell = |m: &str, s: u64, v: f64| CellResult {
            dataset: "d".into(),
            method: m.into(),
            seed: s,
            metrics: vec![("l_syn".into(), v), ("l_test".into(), v - 1.0)],
        };
        let rows = summarize(&[cell("b", 0, 1.0), cell("a", 0, 2.0), cell("b", 1, 3.0)]);
        assert_eq!(rows.len(), 4);
        assert_eq!((rows[0].method.as_str(), rows[0].metric.as_str()), ("b", "l_syn"));
        assert_eq!((rows[0].mean, rows[0].std, rows[0].seeds), (2.0, 1.0, 2));
    }
}
