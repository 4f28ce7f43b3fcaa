//! Acceptance harness: one PASS/FAIL line per criterion.
//!
//! `ACCEPTANCE_ONLY=3,7` runs a subset. Failures are reported but the process
//! exits 0 unless `ACCEPTANCE_STRICT=1`, so `cargo test` stays usable while a
//! criterion is known to be out of reach.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tabsyn::bench::{fit_model, FitOptions, ModelKind};
use tabsyn::clbn::{ClbnConfig, ClbnModel};
use tabsyn::data::{Cell, ColumnSpec, Metric, Schema, Table, TaskKind};
use tabsyn::eval::{likelihood_fitness, metrics, ml_efficacy, EfficacyConfig, PredictorKind};
use tabsyn::io::load_csv;
use tabsyn::model::Model;
use tabsyn::oracle::{BayesNet, GmmKind, GmmOracle, Oracle};
use tabsyn::sampler::{CondLayout, CondMode, CondSampler};
use tabsyn::transform::Normalization;
use tabsyn::tvae::{TvaeConfig, TvaeModel};

const GRID_SEEDS: [u64; 3] = [0, 1, 2];
const GRID_ROWS: usize = 10_000;
// Tie tolerances for the dominance check.
const LL_TIE: f64 = 0.1;
const F1_TIE: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Results shared between criteria so expensive fits run once.
#[derive(Default)]
struct Cache {
    ctgan_grid: Option<Vec<f64>>,
    tvae_grid: Option<(Vec<f64>, Vec<f64>)>,
    clbn_grid: Option<f64>,
}

fn grid_split(seed: u64) -> (Oracle, Table, Table) {
    let o = Oracle::Gmm(GmmOracle::new(GmmKind::Grid, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let train = o.sample(GRID_ROWS, &mut rng);
    let test = o.sample(GRID_ROWS, &mut rng);
    (o, train, test)
}

fn l_test_of(model: &Model, o: &Oracle, test: &Table, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    let syn = model.sample(GRID_ROWS, None, &mut rng).unwrap();
    likelihood_fitness(o, &syn, test, &mut rng).unwrap().l_test
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn fmt(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.3}")).collect::<Vec<_>>().join(", ")
}

impl Cache {
    fn ctgan_grid(&mut self) -> Vec<f64> {
        self.ctgan_grid
            .get_or_insert_with(|| {
                GRID_SEEDS
                    .iter()
                    .map(|&s| {
                        let (o, train, test) = grid_split(s);
                        let m = fit_model(ModelKind::Ctgan, &train, &FitOptions::default(), s).unwrap();
                        l_test_of(&m, &o, &test, s)
                    })
                    .collect()
            })
            .clone()
    }

    /// Per-seed L_test and the first-seed ELBO history.
    fn tvae_grid(&mut self) -> (Vec<f64>, Vec<f64>) {
        self.tvae_grid
            .get_or_insert_with(|| {
                let mut history = Vec::new();
                let scores = GRID_SEEDS
                    .iter()
                    .map(|&s| {
                        let (o, train, test) = grid_split(s);
                        let m = TvaeModel::fit(&train, TvaeConfig::default(), s).unwrap();
                        if history.is_empty() {
                            history = m.history.clone();
                        }
                        l_test_of(&Model::Tvae(m), &o, &test, s)
                    })
                    .collect();
                (scores, history)
            })
            .clone()
    }

    fn clbn_grid(&mut self) -> f64 {
        *self.clbn_grid.get_or_insert_with(|| {
            let l: Vec<f64> = GRID_SEEDS
                .iter()
                .map(|&s| {
                    let (o, train, test) = grid_split(s);
                    let m = Model::Clbn(ClbnModel::fit(&train, ClbnConfig::default()).unwrap());
                    l_test_of(&m, &o, &test, s)
                })
                .collect();
            mean(&l)
        })
    }
}

fn gradients(_: &mut Cache) -> Outcome {
    let mut nets = common::FdReport::default();
    for seed in 0..50 {
        nets = nets.merge(common::generator_fd(seed)).merge(common::critic_fd(1000 + seed));
    }
    let mut gp = common::FdReport::default();
    for seed in 0..10 {
        gp = gp.merge(common::penalty_fd(seed));
    }
    outcome(
        nets.max_rel_err < 1e-4 && gp.max_rel_err < 1e-3 && nets.checked > 0 && gp.checked > 0,
        format!(
            "nets max rel err {:.2e} over {} coords ({} kinks skipped); penalty {:.2e} over {}",
            nets.max_rel_err, nets.checked, nets.skipped, gp.max_rel_err, gp.checked
        ),
    )
}

fn identity_likelihoods(_: &mut Cache) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut pass = true;
    let mut parts = Vec::new();
    let asia = BayesNet::load(common::data_dir().join("bif/asia.bif")).unwrap();
    let cases = [
        ("grid", Oracle::Gmm(GmmOracle::new(GmmKind::Grid, 0)), -3.06),
        ("ring", Oracle::Gmm(GmmOracle::new(GmmKind::Ring, 0)), -1.70),
        ("asia", Oracle::Bn(asia.clone()), -2.23),
    ];
    for (name, o, expected) in cases {
        let train = o.sample(GRID_ROWS, &mut rng);
        let test = o.sample(GRID_ROWS, &mut rng);
        let r = likelihood_fitness(&o, &train, &test, &mut rng).unwrap();
        pass &= (r.l_syn - expected).abs() <= 0.15;
        parts.push(format!("{name} L_syn {:.3} (target {expected})", r.l_syn));
    }
    let exact = asia.entropy().unwrap();
    let mc = -asia.log_likelihood(&asia.sample(50_000, &mut rng)).unwrap();
    pass &= (exact - mc).abs() <= 0.05;
    parts.push(format!("asia entropy {exact:.4} vs MC {mc:.4}"));
    outcome(pass, parts.join("; "))
}

fn ctgan_grid(cache: &mut Cache) -> Outcome {
    let scores = cache.ctgan_grid();
    let avg = mean(&scores);
    let (o, _, test) = grid_split(0);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let collapsed = common::collapsed_grid(GRID_ROWS, &mut rng);
    let collapse = likelihood_fitness(&o, &collapsed, &test, &mut rng).unwrap().l_test;
    let clbn = cache.clbn_grid();
    outcome(
        avg >= -6.0 && avg - collapse >= 5.0 && clbn <= -6.0,
        format!("CTGAN L_test [{}] mean {avg:.3}; collapse {collapse:.3}; CLBN {clbn:.3}", fmt(&scores)),
    )
}

/// Three modes; the label is the sign of the offset within the mode.
fn three_mode_table(n: usize, seed: u64) -> Table {
    let schema = Schema::new(vec![
        ColumnSpec::continuous("x"),
        ColumnSpec::discrete("y", vec!["0".into(), "1".into()]).as_target(TaskKind::Classification, vec![Metric::F1]),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<Cell>> = (0..n)
        .map(|_| {
            let c = [-10.0, 0.0, 10.0][rng.gen_range(0..3)];
            let u: f64 = rng.sample(StandardNormal);
            vec![Cell::Num(c + u), Cell::Cat(if u > 0.0 { "1" } else { "0" }.into())]
        })
        .collect();
    Table::from_rows(schema, &rows).unwrap()
}

fn normalization_ablation(_: &mut Cache) -> Outcome {
    let mut margins = Vec::new();
    let mut parts = Vec::new();
    for seed in GRID_SEEDS {
        let train = three_mode_table(5_000, 100 + seed);
        let test = three_mode_table(5_000, 200 + seed);
        let score = |norm: Normalization| {
            let opts = FitOptions { epochs: Some(100), normalization: Some(norm), ..Default::default() };
            let m = fit_model(ModelKind::Ctgan, &train, &opts, seed).unwrap();
            let syn = m.sample(train.n_rows(), None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            let cfg = EfficacyConfig::new(PredictorKind::defaults(TaskKind::Classification), seed);
            ml_efficacy(&syn, &test, &cfg).unwrap().primary()
        };
        let vgm = score(Normalization::Vgm);
        let minmax = score(Normalization::MinMax);
        margins.push(vgm - minmax);
        parts.push(format!("seed {seed}: vgm {vgm:.3} minmax {minmax:.3}"));
    }
    let wins = margins.iter().filter(|&&m| m > 0.0).count();
    outcome(
        mean(&margins) > 0.0 && wins >= 2,
        format!("{}; mean margin {:.3}, {wins}/3 seeds positive", parts.join("; "), mean(&margins)),
    )
}

/// A 1% category that always comes with `e = z` and a shifted `x`.
fn rare_table(n: usize, seed: u64) -> Table {
    let schema = Schema::new(vec![
        ColumnSpec::continuous("x"),
        ColumnSpec::discrete("d", vec!["common".into(), "rare".into()]),
        ColumnSpec::discrete("e", vec!["a".into(), "b".into(), "z".into()]),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows: Vec<Vec<Cell>> = (0..n)
        .map(|i| {
            let u: f64 = rng.sample(StandardNormal);
            if i < n / 100 {
                vec![Cell::Num(10.0 + 0.5 * u), Cell::Cat("rare".into()), Cell::Cat("z".into())]
            } else {
                let e = if rng.gen::<bool>() { "a" } else { "b" };
                vec![Cell::Num(u), Cell::Cat("common".into()), Cell::Cat(e.into())]
            }
        })
        .collect();
    rows.shuffle(&mut rng);
    Table::from_rows(schema, &rows).unwrap()
}

fn share(t: &Table, col: usize, cat: u32) -> f64 {
    let c = t.discrete(col).unwrap();
    c.iter().filter(|&&v| v == cat).count() as f64 / c.len().max(1) as f64
}

fn conditional_generation(_: &mut Cache) -> Outcome {
    let train = rare_table(5_000, 7);
    let n = 5_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let opts = FitOptions { epochs: Some(100), ..Default::default() };
    let cond = fit_model(ModelKind::Ctgan, &train, &opts, 0).unwrap();
    let forced = cond.sample(n, Some(("d", "rare")), &mut rng).unwrap();
    let compliance = share(&forced, 1, 1);
    let pattern = share(&forced, 2, 2);
    let free = share(&cond.sample(n, None, &mut rng).unwrap(), 1, 1);
    let none_opts = FitOptions { epochs: Some(100), cond: Some(CondMode::None), ..Default::default() };
    let plain = fit_model(ModelKind::Ctgan, &train, &none_opts, 0).unwrap();
    let refused = plain.sample(n, Some(("d", "rare")), &mut rng).is_err();
    let without = share(&plain.sample(n, None, &mut rng).unwrap(), 1, 1);
    outcome(
        compliance >= 0.95 && refused && compliance - without >= 0.5,
        format!(
            "compliance {compliance:.3} (e=z in {pattern:.3}); unconditioned rare share {free:.4}; \
             cond=none rare share {without:.4} (condition refused: {refused})"
        ),
    )
}

fn sampler_distribution(_: &mut Cache) -> Outcome {
    let counts = vec![vec![5000, 3000, 1500, 400, 100], vec![9000, 1000], vec![2500; 4]];
    let sizes: Vec<usize> = counts.iter().map(Vec::len).collect();
    let layout = CondLayout::from_sizes((0..sizes.len()).collect(), sizes);
    let s = CondSampler::new(layout, counts.clone(), CondMode::LogFreq).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let draws = 200_000;
    let mut seen: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for _ in 0..draws {
        let m = s.sample_training(&mut rng).unwrap();
        *seen.entry((m.slot, m.category)).or_default() += 1;
    }
    let mut tv = 0.0;
    for (slot, col) in counts.iter().enumerate() {
        let total: f64 = col.iter().map(|&c| (1.0 + c as f64).ln()).sum();
        for (k, &c) in col.iter().enumerate() {
            let p = (1.0 + c as f64).ln() / total / counts.len() as f64;
            let q = *seen.get(&(slot, k)).unwrap_or(&0) as f64 / draws as f64;
            tv += 0.5 * (p - q).abs();
        }
    }
    outcome(tv < 0.01, format!("TV {tv:.5} over {draws} draws"))
}

fn tvae_grid(cache: &mut Cache) -> Outcome {
    let (scores, history) = cache.tvae_grid();
    let avg = mean(&scores);
    let steps = 20 * GRID_ROWS.div_ceil(500);
    let windows: Vec<f64> = history[..steps.min(history.len())].chunks(10).map(mean).collect();
    let rises: Vec<usize> = (1..windows.len()).filter(|&i| windows[i] > windows[i - 1]).collect();
    outcome(
        avg >= -7.0 && rises.is_empty(),
        format!(
            "L_test [{}] mean {avg:.3}; {} smoothed windows, ELBO first {:.3} last {:.3}, increases at {:?}",
            fmt(&scores),
            windows.len(),
            windows[0],
            windows[windows.len() - 1],
            rises
        ),
    )
}

fn adult() -> (Table, Table) {
    let dir = common::data_dir().join("adult");
    let schema = Schema::load(dir.join("schema.json")).unwrap();
    let train = load_csv(dir.join("train.csv"), &schema).unwrap();
    // Efficacy matches columns and categories by name, so each split keeps
    // its own discovered category order.
    let test = load_csv(dir.join("test.csv"), &schema).unwrap();
    (train, test)
}

fn adult_efficacy(test: &Table, syn: &Table) -> f64 {
    let cfg = EfficacyConfig::new(PredictorKind::defaults(TaskKind::Classification), 0);
    ml_efficacy(syn, test, &cfg).unwrap().primary()
}

fn efficacy_harness(_: &mut Cache) -> Outcome {
    let (train, test) = adult();
    let f1 = adult_efficacy(&test, &train);
    let tj = test.schema().target().unwrap();
    let truth: Vec<usize> = test.discrete(tj).unwrap().iter().map(|&v| v as usize).collect();
    let counts = test.category_counts(tj).unwrap();
    let majority = (0..counts.len()).max_by_key(|&k| counts[k]).unwrap();
    let minority = (0..counts.len()).min_by_key(|&k| counts[k]).unwrap();
    let baseline = metrics::f1(&vec![majority; truth.len()], &truth, minority).unwrap();
    outcome(
        (0.60..=0.72).contains(&f1) && baseline < f1,
        format!("Identity mean F1 {f1:.3} on {}/{} rows; majority baseline F1 {baseline:.3}", train.n_rows(), test.n_rows()),
    )
}

fn undirected(edges: &[(usize, usize)]) -> BTreeSet<(usize, usize)> {
    edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect()
}

fn structure_recovery(_: &mut Cache) -> Outcome {
    let seeds = 20;
    let mut hits = 0;
    for seed in 0..seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(500 + seed);
        let (net, edges) = common::random_tree_net(6, 0.8, &mut rng);
        let data = net.sample(10_000, &mut rng);
        let m = ClbnModel::fit(&data, ClbnConfig::default()).unwrap();
        hits += usize::from(undirected(&m.edges()) == undirected(&edges));
    }
    let rate = hits as f64 / seeds as f64;
    outcome(rate >= 0.95, format!("{hits}/{seeds} trees recovered"))
}

fn dominates(identity: f64, others: &[(&str, f64)], tie: f64) -> (bool, String) {
    let ok = others.iter().all(|&(_, v)| identity >= v - tie);
    let text = others.iter().map(|(n, v)| format!("{n} {v:.3}")).collect::<Vec<_>>().join(" ");
    (ok, format!("Identity {identity:.3} vs {text}"))
}

fn identity_dominance(cache: &mut Cache) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();

    let identity: Vec<f64> = GRID_SEEDS
        .iter()
        .map(|&s| {
            let (o, train, test) = grid_split(s);
            likelihood_fitness(&o, &train, &test, &mut ChaCha8Rng::seed_from_u64(s)).unwrap().l_test
        })
        .collect();
    let (ok, text) = dominates(
        mean(&identity),
        &[("CTGAN", mean(&cache.ctgan_grid())), ("TVAE", mean(&cache.tvae_grid().0)), ("CLBN", cache.clbn_grid())],
        LL_TIE,
    );
    pass &= ok;
    parts.push(format!("grid L_test: {text}"));

    let asia = Oracle::Bn(BayesNet::load(common::data_dir().join("bif/asia.bif")).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let train = asia.sample(GRID_ROWS, &mut rng);
    let test = asia.sample(GRID_ROWS, &mut rng);
    let opts = FitOptions { epochs: Some(50), ..Default::default() };
    let asia_score = |m: &Model| l_test_of(m, &asia, &test, 21);
    let id = likelihood_fitness(&asia, &train, &test, &mut rng).unwrap().l_test;
    let others = [
        ("CTGAN", asia_score(&fit_model(ModelKind::Ctgan, &train, &opts, 0).unwrap())),
        ("TVAE", asia_score(&fit_model(ModelKind::Tvae, &train, &opts, 0).unwrap())),
        ("CLBN", asia_score(&fit_model(ModelKind::Clbn, &train, &FitOptions::default(), 0).unwrap())),
    ];
    let (ok, text) = dominates(id, &others, LL_TIE);
    pass &= ok;
    parts.push(format!("asia L_test: {text}"));

    let (train, test) = adult();
    let opts = FitOptions { epochs: Some(ADULT_EPOCHS), ..Default::default() };
    let adult_score = |m: Model| {
        let syn = m.sample(train.n_rows(), None, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        adult_efficacy(&test, &syn)
    };
    let id = adult_efficacy(&test, &train);
    let others = [
        ("CTGAN", adult_score(fit_model(ModelKind::Ctgan, &train, &opts, 0).unwrap())),
        ("TVAE", adult_score(fit_model(ModelKind::Tvae, &train, &opts, 0).unwrap())),
        ("CLBN", adult_score(fit_model(ModelKind::Clbn, &train, &FitOptions::default(), 0).unwrap())),
    ];
    let (ok, text) = dominates(id, &others, F1_TIE);
    pass &= ok;
    parts.push(format!("adult F1 ({ADULT_EPOCHS} epochs): {text}"));
    outcome(pass, parts.join("; "))
}

const ADULT_EPOCHS: usize = 20;

type Criterion = (usize, &'static str, fn(&mut Cache) -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "gradient correctness", gradients),
        (2, "identity likelihoods", identity_likelihoods),
        (3, "ctgan on grid", ctgan_grid),
        (4, "normalization ablation", normalization_ablation),
        (5, "conditional generation", conditional_generation),
        (6, "training-by-sampling pmf", sampler_distribution),
        (7, "tvae on grid", tvae_grid),
        (8, "efficacy harness", efficacy_harness),
        (9, "chow-liu recovery", structure_recovery),
        (10, "identity dominance", identity_dominance),
    ];
    let only: Option<BTreeSet<usize>> = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|p| p.trim().parse().ok()).collect());
    // libtest flags such as --quiet are passed through by cargo and ignored here.
    let mut cache = Cache::default();
    let mut failed = 0;
    for (id, name, run) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let t0 = Instant::now();
        let r = run(&mut cache);
        failed += usize::from(!r.pass);
        println!(
            "{} {id:>2} {name}: {} [{:.1}s]",
            if r.pass { "PASS" } else { "FAIL" },
            r.detail,
            t0.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} failed");
    if failed > 0 && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}
