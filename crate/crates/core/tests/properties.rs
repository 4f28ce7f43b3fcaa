mod common;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tabsyn::clbn::{ClbnConfig, ClbnModel};
use tabsyn::ctgan::{cross_entropy, Generator};
use tabsyn::data::{Cell, ColumnData, ColumnSpec, Schema, Table};
use tabsyn::eval::metrics;
use tabsyn::oracle::BayesNet;
use tabsyn::sampler::{CategoryIndex, CondLayout, MaskSet};
use tabsyn::tensor::{Matrix, Tape};
use tabsyn::transform::{
    fit_vgm, Activation, ContinuousTransform, DataTransformer, Mode, Normalization, Span, VgmConfig,
};
use tabsyn::tvae::Decoder;

use common::{gaussian, toy_table};

fn modes_strategy() -> impl Strategy<Value = Vec<Mode>> {
    prop::collection::vec((-10.0..10.0f64, 0.1..3.0f64, 0.05..1.0f64), 1..5).prop_map(|raw| {
        let total: f64 = raw.iter().map(|r| r.2).sum();
        raw.into_iter()
            .map(|(mean, std, w)| Mode { mean, std, weight: w / total })
            .collect()
    })
}

fn discrete_table(cards: &[usize], n: usize, seed: u64) -> Table {
    let cols = cards
        .iter()
        .enumerate()
        .map(|(j, &k)| ColumnSpec::discrete(format!("c{j}"), (0..k).map(|i| format!("s{i}")).collect()))
        .collect();
    let schema = Schema::new(cols).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = cards
        .iter()
        .map(|&k| ColumnData::Discrete((0..n).map(|_| rng.gen_range(0..k as u32)).collect()))
        .collect();
    Table::new(schema, data).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn continuous_encode_decode_round_trip(modes in modes_strategy(), x in -12.0..12.0f64, seed in any::<u64>()) {
        let t = ContinuousTransform::from_modes(0, Normalization::Vgm, modes).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (alpha, k) = t.encode(x, &mut rng).unwrap();
        prop_assert!((-1.0..=1.0).contains(&alpha));
        let mut beta = vec![0.0; t.mode_count()];
        beta[k] = 1.0;
        let back = t.decode(alpha, &beta);
        if alpha.abs() < 1.0 {
            prop_assert!((back - x).abs() < 1e-9 * (1.0 + x.abs()));
        }
    }

    #[test]
    fn mode_probabilities_are_a_distribution(modes in modes_strategy(), x in -50.0..50.0f64) {
        let t = ContinuousTransform::from_modes(0, Normalization::Vgm, modes).unwrap();
        let p = t.mode_probabilities(x);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cond_vector_has_single_one(sizes in prop::collection::vec(1usize..6, 1..5), pick in any::<prop::sample::Index>(), cat in any::<prop::sample::Index>()) {
        let layout = CondLayout::from_sizes((0..sizes.len()).collect(), sizes.clone());
        let slot = pick.index(sizes.len());
        let category = cat.index(sizes[slot]);
        let v = layout.cond_vector(MaskSet { slot, category }).unwrap();
        prop_assert_eq!(v.len(), sizes.iter().sum::<usize>());
        prop_assert_eq!(v.iter().filter(|&&x| x == 1.0).count(), 1);
        prop_assert_eq!(v.iter().filter(|&&x| x != 0.0).count(), 1);
        prop_assert_eq!(v[layout.offsets[slot] + category], 1.0);
    }

    #[test]
    fn sampled_row_matches_condition(cards in prop::collection::vec(2usize..5, 1..4), seed in any::<u64>()) {
        let table = discrete_table(&cards, 60, seed);
        let layout = CondLayout::from_sizes((0..cards.len()).collect(), cards.clone());
        let index = CategoryIndex::build(&table, &layout).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for slot in 0..cards.len() {
            let col = table.discrete(slot).unwrap();
            for category in 0..cards[slot] {
                let m = MaskSet { slot, category };
                if index.rows(m).is_empty() {
                    prop_assert!(index.sample_row(m, &mut rng).is_err());
                    continue;
                }
                for _ in 0..5 {
                    let r = index.sample_row(m, &mut rng).unwrap();
                    prop_assert_eq!(col[r] as usize, category);
                }
            }
        }
    }

    #[test]
    fn generator_outputs_are_in_range(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = rng.gen_range(1..4);
        let cats = rng.gen_range(2..5);
        let spans = vec![
            Span { start: 0, width: 1, activation: Activation::Tanh, column: 0 },
            Span { start: 1, width: modes, activation: Activation::Softmax, column: 0 },
            Span { start: 1 + modes, width: cats, activation: Activation::Softmax, column: 1 },
        ];
        let mut g = Generator::new(8, cats, &[16, 16], spans.clone(), vec![spans[2]], &mut rng);
        // Large weights push the tanh toward saturation.
        for v in g.params.value_mut(g.head.weight).data_mut() {
            *v *= 20.0;
        }
        let n = 32;
        let mut cond = Matrix::zeros(n, cats);
        for r in 0..n {
            cond.set(r, rng.gen_range(0..cats), 1.0);
        }
        for train in [true, false] {
            let mut tape = Tape::new();
            let vars = g.params.bind(&mut tape).unwrap();
            let z = tape.constant(gaussian(n, 8, &mut rng)).unwrap();
            let out = g.forward(&mut tape, &vars, z, Some(&cond), train, &mut rng).unwrap();
            let rows = tape.value(out.rows).clone();
            for r in 0..n {
                let row = rows.row(r);
                prop_assert!(row[0] >= -1.0 && row[0] <= 1.0);
                for s in &spans[1..] {
                    let block = &row[s.start..s.end()];
                    prop_assert!(block.iter().all(|&v| v >= 0.0));
                    prop_assert!((block.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                }
            }
            let ce = cross_entropy(&mut tape, out.cond_log_probs.unwrap(), cond.clone()).unwrap();
            prop_assert!(tape.value(ce).item() >= 0.0);
        }
    }

    #[test]
    fn classification_metric_bounds(pairs in prop::collection::vec((0usize..4, 0usize..4), 1..80), positive in 0usize..4) {
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        let acc = metrics::accuracy(&pred, &truth).unwrap();
        let f1 = metrics::f1(&pred, &truth, positive).unwrap();
        let macro_f1 = metrics::macro_f1(&pred, &truth).unwrap();
        let micro = metrics::micro_f1(&pred, &truth).unwrap();
        for v in [acc, f1, macro_f1, micro] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        prop_assert!((micro - acc).abs() < 1e-12);
        prop_assert_eq!(metrics::accuracy(&truth, &truth).unwrap(), 1.0);
    }

    #[test]
    fn r2_is_at_most_one(pairs in prop::collection::vec((-5.0..5.0f64, -5.0..5.0f64), 2..60)) {
        let pred: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let truth: Vec<f64> = pairs.iter().map(|p| p.1).collect();
        prop_assert!(metrics::r2(&pred, &truth).unwrap() <= 1.0);
        prop_assert!((metrics::r2(&truth, &truth).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn decoder_nll_is_permutation_invariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes = rng.gen_range(1..4);
        let cats = rng.gen_range(2..5);
        let spans = vec![
            Span { start: 0, width: 1, activation: Activation::Tanh, column: 0 },
            Span { start: 1, width: modes, activation: Activation::Softmax, column: 0 },
            Span { start: 1 + modes, width: cats, activation: Activation::Softmax, column: 1 },
        ];
        let width = 1 + modes + cats;
        let dec = Decoder::new(4, &[8], spans, &mut rng);
        let n = 12;
        let mut batch = Matrix::zeros(n, width);
        for r in 0..n {
            batch.set(r, 0, rng.gen_range(-1.0..1.0));
            batch.set(r, 1 + rng.gen_range(0..modes), 1.0);
            batch.set(r, 1 + modes + rng.gen_range(0..cats), 1.0);
        }
        let z = gaussian(n, 4, &mut rng);
        let nll = |z: &Matrix, b: &Matrix| {
            let mut tape = Tape::new();
            let vars = dec.params.bind(&mut tape).unwrap();
            let zv = tape.constant(z.clone()).unwrap();
            let v = dec.neg_log_likelihood(&mut tape, &vars, zv, b).unwrap();
            tape.value(v).item()
        };
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let a = nll(&z, &batch);
        let b = nll(&z.select_rows(&perm), &batch.select_rows(&perm));
        prop_assert!(a.is_finite());
        prop_assert!((a - b).abs() < 1e-10 * (1.0 + a.abs()));
    }

    #[test]
    fn clbn_is_a_spanning_tree(cards in prop::collection::vec(2usize..5, 2..6), seed in any::<u64>()) {
        let table = discrete_table(&cards, 200, seed);
        let m = ClbnModel::fit(&table, ClbnConfig::default()).unwrap();
        prop_assert_eq!(m.edges().len(), cards.len() - 1);
        prop_assert_eq!(m.parents.iter().filter(|p| p.is_none()).count(), 1);
        for rows in &m.tables {
            for row in rows {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn fitted_mixture_weights_sum_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..8 {
        let centers: Vec<f64> = (0..1 + case % 4).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let values: Vec<f64> = (0..400)
            .map(|i| centers[i % centers.len()] + rng.gen_range(-1.0..1.0))
            .collect();
        let modes = fit_vgm(&values, &VgmConfig::default(), &mut rng).unwrap();
        assert!(!modes.is_empty() && modes.len() <= 10);
        let total: f64 = modes.iter().map(|m| m.weight).sum();
        assert!((total - 1.0).abs() < 1e-9, "weights sum to {total}");
        assert!(modes.iter().all(|m| m.weight > 0.0 && m.std > 0.0));
    }
}

#[test]
fn sampled_modes_follow_responsibilities() {
    let modes = vec![
        Mode { mean: 0.0, std: 1.0, weight: 0.5 },
        Mode { mean: 1.5, std: 0.7, weight: 0.3 },
        Mode { mean: -1.0, std: 2.0, weight: 0.2 },
    ];
    let t = ContinuousTransform::from_modes(0, Normalization::Vgm, modes).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let draws = 100_000;
    for x in [-1.0, 0.4, 1.2] {
        let p = t.mode_probabilities(x);
        let mut counts = [0usize; 3];
        for _ in 0..draws {
            counts[t.encode(x, &mut rng).unwrap().1] += 1;
        }
        let tv: f64 = 0.5
            * counts
                .iter()
                .zip(&p)
                .map(|(&c, &q)| (c as f64 / draws as f64 - q).abs())
                .sum::<f64>();
        assert!(tv < 0.02, "tv {tv} at {x}");
    }
}

#[test]
fn encoded_blocks_are_one_hot() {
    let table = toy_table(500, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let t = DataTransformer::fit(&table, Normalization::Vgm, &mut rng).unwrap();
    let m = t.encode_table(&table, &mut rng).unwrap();
    assert_eq!(m.cols(), t.width());
    for r in 0..m.rows() {
        for s in t.spans() {
            let block = &m.row(r)[s.start..s.end()];
            match s.activation {
                Activation::Softmax => {
                    assert_eq!(block.iter().filter(|&&v| v == 1.0).count(), 1);
                    assert_eq!(block.iter().filter(|&&v| v == 0.0).count(), s.width - 1);
                }
                Activation::Tanh => assert!((-1.0..=1.0).contains(&block[0])),
            }
        }
    }
    let back = t.decode_matrix(&m).unwrap();
    assert_eq!(back.column(1), table.column(1));
    for r in 0..table.n_rows() {
        let (Cell::Num(a), Cell::Num(b)) = (table.cell(r, 0), back.cell(r, 0)) else {
            panic!("kind changed")
        };
        assert!((a - b).abs() < 1e-9 || m.get(r, 0).abs() == 1.0);
    }
}

#[test]
fn bundled_network_cpts_are_normalized() {
    for name in ["asia", "alarm", "child", "insurance"] {
        let bn = BayesNet::load(common::data_dir().join(format!("bif/{name}.bif"))).unwrap();
        for node in &bn.nodes {
            for row in &node.cpt {
                assert_eq!(row.len(), node.states.len());
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6, "{name}/{}", node.name);
            }
        }
    }
}
