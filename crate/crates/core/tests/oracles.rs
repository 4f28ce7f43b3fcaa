mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tabsyn::clbn::{BinValue, ClbnConfig, ClbnModel};
use tabsyn::eval::likelihood_fitness;
use tabsyn::oracle::{parse_bif, write_bif, BayesNet, GmmKind, GmmOracle, Oracle};

fn bif(name: &str) -> BayesNet {
    BayesNet::load(common::data_dir().join(format!("bif/{name}.bif"))).unwrap()
}

#[test]
fn bundled_networks_have_expected_sizes() {
    for (name, vars) in [("asia", 8), ("alarm", 37), ("child", 20), ("insurance", 27)] {
        let net = bif(name);
        assert_eq!(net.nodes.len(), vars, "{name}");
        let text = std::fs::read_to_string(common::data_dir().join(format!("bif/{name}.bif"))).unwrap();
        let doc = parse_bif(&text).unwrap();
        assert_eq!(parse_bif(&write_bif(&doc)).unwrap(), doc, "{name}");
    }
    assert_eq!(bif("asia").edge_count(), 8);
}

#[test]
fn asia_entropy_matches_monte_carlo() {
    let net = bif("asia");
    let exact = net.entropy().unwrap();
    let sample = net.sample(50_000, &mut ChaCha8Rng::seed_from_u64(1));
    let mc = -net.log_likelihood(&sample).unwrap();
    assert!((exact - mc).abs() < 0.05, "{exact} vs {mc}");
}

#[test]
fn identity_grid_and_ring_likelihoods() {
    for (kind, expected) in [(GmmKind::Grid, -3.06), (GmmKind::Ring, -1.70)] {
        let o = Oracle::Gmm(GmmOracle::new(kind, 0));
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let train = o.sample(10_000, &mut rng);
        let test = o.sample(10_000, &mut rng);
        let r = likelihood_fitness(&o, &train, &test, &mut rng).unwrap();
        assert!((r.l_syn - expected).abs() < 0.1, "{kind:?} {r:?}");
        assert!((r.l_test - expected).abs() < 0.15, "{kind:?} {r:?}");
    }
}

#[test]
fn mode_collapse_costs_many_nats() {
    let o = Oracle::Gmm(GmmOracle::new(GmmKind::Grid, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train = o.sample(5_000, &mut rng);
    let test = o.sample(5_000, &mut rng);
    let good = likelihood_fitness(&o, &train, &test, &mut rng).unwrap();
    let bad = likelihood_fitness(&o, &common::collapsed_grid(5_000, &mut rng), &test, &mut rng).unwrap();
    assert!(good.l_test - bad.l_test >= 5.0, "{good:?} {bad:?}");
}

#[test]
fn gridr_offsets_depend_on_seed_only() {
    let a = GmmOracle::new(GmmKind::GridR, 1);
    assert_eq!(a, GmmOracle::new(GmmKind::GridR, 1));
    assert_ne!(a, GmmOracle::new(GmmKind::GridR, 2));
    for (c, g) in a.components.iter().zip(&GmmOracle::new(GmmKind::Grid, 0).components) {
        assert!((c.mean[0] - g.mean[0]).abs() <= 0.2 && (c.mean[1] - g.mean[1]).abs() <= 0.2);
    }
}

#[test]
fn chow_liu_recovers_a_strong_tree() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (net, edges) = common::random_tree_net(6, 0.8, &mut rng);
    let data = net.sample(5_000, &mut rng);
    let m = ClbnModel::fit(&data, ClbnConfig::default()).unwrap();
    assert_eq!(m.edges(), edges);
}

#[test]
fn clbn_on_grid_loses_likelihood() {
    let o = Oracle::Gmm(GmmOracle::new(GmmKind::Grid, 0));
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let train = o.sample(5_000, &mut rng);
    let test = o.sample(5_000, &mut rng);
    let m = ClbnModel::fit(&train, ClbnConfig::default()).unwrap();
    let syn = m.sample(5_000, &mut rng).unwrap();
    let r = likelihood_fitness(&o, &syn, &test, &mut rng).unwrap();
    assert!((r.l_syn + 3.68).abs() < 0.3 && r.l_test <= -6.0, "{r:?}");
    // Spreading samples over the bin hides the lattice from the refit.
    let cfg = ClbnConfig { bin_value: BinValue::Uniform, ..ClbnConfig::default() };
    let syn = ClbnModel::fit(&train, cfg).unwrap().sample(5_000, &mut rng).unwrap();
    let u = likelihood_fitness(&o, &syn, &test, &mut rng).unwrap();
    assert!(u.l_test > r.l_test, "{u:?} vs {r:?}");
}
