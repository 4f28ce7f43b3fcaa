//! Shared fixtures for the integration tests and the acceptance harness.
#![allow(dead_code)]

use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use tabsyn::ctgan::{cross_entropy, Critic, Generator};
use tabsyn::data::{Cell, ColumnData, ColumnSpec, Schema, Table};
use tabsyn::oracle::{BayesNet, BnNode, GmmOracle};
use tabsyn::tensor::{Matrix, Params, Tape};
use tabsyn::transform::{Activation, Span};

pub fn data_dir() -> PathBuf {
    PathBuf::from(concat!(env!("CARGO_MANIFEST_DIR"), "/../../data"))
}

pub fn gaussian(n: usize, d: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(n, d, (0..n * d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Debug, Default, Clone, Copy)]
pub struct FdReport {
    pub max_rel_err: f64,
    pub checked: usize,
    /// Coordinates where two step sizes disagree, i.e. the loss has a kink
    /// (ReLU boundary) within the step.
    pub skipped: usize,
}

impl FdReport {
    pub fn merge(self, o: FdReport) -> FdReport {
        FdReport {
            max_rel_err: self.max_rel_err.max(o.max_rel_err),
            checked: self.checked + o.checked,
            skipped: self.skipped + o.skipped,
        }
    }
}

/// Compares `grads` with central differences of `loss` on up to `per_param`
/// random coordinates of every parameter.
pub fn fd_check(
    params: &Params,
    grads: &[Option<Matrix>],
    per_param: usize,
    h: f64,
    rng: &mut impl Rng,
    mut loss: impl FnMut(&Params) -> f64,
) -> FdReport {
    let mut rep = FdReport::default();
    let mut p = params.clone();
    for i in 0..params.len() {
        let n = params.value(i).data().len();
        for _ in 0..per_param.min(n) {
            let k = rng.gen_range(0..n);
            let base = params.value(i).data()[k];
            let mut central = |step: f64| {
                p.value_mut(i).data_mut()[k] = base + step;
                let up = loss(&p);
                p.value_mut(i).data_mut()[k] = base - step;
                let down = loss(&p);
                p.value_mut(i).data_mut()[k] = base;
                (up - down) / (2.0 * step)
            };
            let n1 = central(h);
            let n2 = central(h * 0.5);
            let analytic = grads[i].as_ref().map_or(0.0, |g| g.data()[k]);
            let scale = n1.abs().max(analytic.abs()).max(1e-6);
            if (n1 - n2).abs() > 1e-6 * scale.max(1.0) {
                rep.skipped += 1;
                continue;
            }
            rep.checked += 1;
            // Round-off in the difference quotient is ~1e-10 here, so gradients
            // that are structurally zero are compared against a 1e-5 floor.
            let denom = n1.abs().max(analytic.abs()).max(1e-5);
            rep.max_rel_err = rep.max_rel_err.max((analytic - n1).abs() / denom);
        }
    }
    rep
}

/// A generator shaped like the real one (skip-concat hidden layers with batch
/// norm, tanh and gumbel-softmax heads, condition input) with random sizes.
/// Loss: weighted sum of the outputs plus the condition cross-entropy.
pub fn generator_fd(seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z_dim = rng.gen_range(2..6);
    let modes = rng.gen_range(1..4);
    let cats = rng.gen_range(2..5);
    let spans = vec![
        Span { start: 0, width: 1, activation: Activation::Tanh, column: 0 },
        Span { start: 1, width: modes, activation: Activation::Softmax, column: 0 },
        Span { start: 1 + modes, width: cats, activation: Activation::Softmax, column: 1 },
    ];
    let cond_spans = vec![spans[2]];
    let dims = [rng.gen_range(3..7), rng.gen_range(3..7)];
    let g = Generator::new(z_dim, cats, &dims, spans, cond_spans, &mut rng);
    let n = 6;
    let z = gaussian(n, z_dim, &mut rng);
    let mut cond = Matrix::zeros(n, cats);
    for r in 0..n {
        cond.set(r, rng.gen_range(0..cats), 1.0);
    }
    let weights = gaussian(n, g.output_width(), &mut rng);
    let noise_seed: u64 = rng.gen();
    let run = |params: &Params, grad: bool| -> (f64, Option<Vec<Option<Matrix>>>) {
        let mut g2 = g.clone();
        g2.params = params.clone();
        let mut tape = Tape::new();
        let vars = g2.params.bind(&mut tape).unwrap();
        let zv = tape.constant(z.clone()).unwrap();
        let mut noise = ChaCha8Rng::seed_from_u64(noise_seed);
        let out = g2.forward(&mut tape, &vars, zv, Some(&cond), true, &mut noise).unwrap();
        let w = tape.mul_const(out.rows, weights.clone()).unwrap();
        let w = tape.sum(w).unwrap();
        let ce = cross_entropy(&mut tape, out.cond_log_probs.unwrap(), cond.clone()).unwrap();
        let loss = tape.add(w, ce).unwrap();
        let v = tape.value(loss).item();
        let grads = grad.then(|| {
            let mut gr = tape.backward(loss).unwrap();
            params.collect_grads(&vars, &mut gr)
        });
        (v, grads)
    };
    let (_, grads) = run(&g.params, true);
    fd_check(&g.params, &grads.unwrap(), 4, 1e-5, &mut rng, |p| run(p, false).0)
}

/// A PacGAN critic with condition input and dropout under a fixed mask.
pub fn critic_fd(seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = rng.gen_range(2..6);
    let condw = rng.gen_range(0..3);
    let pac = rng.gen_range(1..4);
    let dims = [rng.gen_range(3..8), rng.gen_range(3..8)];
    let c = Critic::new(row, condw, pac, &dims, 0.5, &mut rng);
    let groups = 4;
    let x = gaussian(groups, pac * row, &mut rng);
    let cond = (condw > 0).then(|| gaussian(groups, pac * condw, &mut rng));
    let w = gaussian(groups, 1, &mut rng);
    let mask_seed: u64 = rng.gen();
    let run = |params: &Params, grad: bool| {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape).unwrap();
        let xv = tape.constant(x.clone()).unwrap();
        let mut mask = ChaCha8Rng::seed_from_u64(mask_seed);
        let s = c.forward(&mut tape, &vars, xv, cond.as_ref(), Some(&mut mask)).unwrap();
        let l = tape.mul_const(s, w.clone()).unwrap();
        let l = tape.sum(l).unwrap();
        let v = tape.value(l).item();
        let grads = grad.then(|| {
            let mut gr = tape.backward(l).unwrap();
            params.collect_grads(&vars, &mut gr)
        });
        (v, grads)
    };
    let (_, grads) = run(&c.params, true);
    fd_check(&c.params, &grads.unwrap(), 4, 1e-5, &mut rng, |p| run(p, false).0)
}

/// Gradient of the gradient penalty with respect to critic parameters
/// (double backward) against differences of the penalty value.
pub fn penalty_fd(seed: u64) -> FdReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let row = rng.gen_range(2..5);
    let pac = rng.gen_range(1..3);
    let c = Critic::new(row, 1, pac, &[6, 6], 0.0, &mut rng);
    let pts = gaussian(5, pac * row, &mut rng);
    let cond = gaussian(5, pac, &mut rng);
    let run = |params: &Params, grad: bool| {
        let mut tape = Tape::new();
        let vars = params.bind(&mut tape).unwrap();
        let gp = c.penalty_at(&mut tape, &vars, pts.clone(), Some(&cond), None).unwrap();
        let v = tape.value(gp).item();
        let grads = grad.then(|| {
            let mut gr = tape.backward(gp).unwrap();
            params.collect_grads(&vars, &mut gr)
        });
        (v, grads)
    };
    let (_, grads) = run(&c.params, true);
    fd_check(&c.params, &grads.unwrap(), 6, 1e-5, &mut rng, |p| run(p, false).0)
}

/// Grid oracle samples that all come from a single mode.
pub fn collapsed_grid(n: usize, rng: &mut impl Rng) -> Table {
    let g = GmmOracle::new(tabsyn::oracle::GmmKind::Grid, 0);
    let c = g.components[12];
    let sd = c.cov[0].sqrt();
    let xs = (0..n).map(|_| c.mean[0] + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    let ys = (0..n).map(|_| c.mean[1] + sd * rng.sample::<f64, _>(StandardNormal)).collect();
    Table::new(GmmOracle::schema(), vec![ColumnData::Continuous(xs), ColumnData::Continuous(ys)]).unwrap()
}

/// A random tree-structured network over `n` three-state variables. Each CPT
/// row puts `peak` on a state given by a random permutation of the parent
/// state, so every edge carries strong dependence. Returns the net and its
/// undirected edges (sorted pairs).
pub fn random_tree_net(n: usize, peak: f64, rng: &mut impl Rng) -> (BayesNet, Vec<(usize, usize)>) {
    let k = 3;
    let states: Vec<String> = (0..k).map(|s| format!("s{s}")).collect();
    let mut nodes = Vec::new();
    let mut edges = Vec::new();
    for i in 0..n {
        if i == 0 {
            nodes.push(BnNode {
                name: format!("v{i}"),
                states: states.clone(),
                parents: vec![],
                cpt: vec![vec![1.0 / k as f64; k]],
            });
            continue;
        }
        let parent = rng.gen_range(0..i);
        edges.push((parent, i));
        let mut perm: Vec<usize> = (0..k).collect();
        for a in (1..k).rev() {
            perm.swap(a, rng.gen_range(0..=a));
        }
        let cpt = (0..k)
            .map(|ps| {
                (0..k)
                    .map(|s| if s == perm[ps] { peak } else { (1.0 - peak) / (k - 1) as f64 })
                    .collect()
            })
            .collect();
        nodes.push(BnNode {
            name: format!("v{i}"),
            states: states.clone(),
            parents: vec![parent],
            cpt,
        });
    }
    edges.sort_unstable();
    (BayesNet::new(nodes).unwrap(), edges)
}

/// Mixed toy table: a bimodal continuous column and a three-way category.
pub fn toy_table(n: usize, seed: u64) -> Table {
    let schema = Schema::new(vec![
        ColumnSpec::continuous("x"),
        ColumnSpec::discrete("c", vec!["a".into(), "b".into(), "c".into()]),
    ])
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<Vec<Cell>> = (0..n)
        .map(|_| {
            let k = rng.gen_range(0..3);
            let x = if k == 2 { 8.0 } else { 0.0 } + rng.sample::<f64, _>(StandardNormal);
            vec![Cell::Num(x), Cell::Cat(["a", "b", "c"][k].into())]
        })
        .collect();
    Table::from_rows(schema, &rows).unwrap()
}
