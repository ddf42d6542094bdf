mod common;

use fedgauntlet::aggregation::{bagging_merge, fedavg, merge_tree_updates, ClientUpdate, UpdatePayload};
use fedgauntlet::dataset::partition_iid;
use fedgauntlet::defense::ClientReport;
use fedgauntlet::models::{
    build_model, train_tree_round, ModelKind, ParamSpec, ParamVector, Tree, TreeEnsemble, TreeSpec,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn update(id: usize, n: usize, values: Vec<f64>) -> ClientUpdate {
    let len = values.len();
    ClientUpdate {
        client_id: id,
        payload: UpdatePayload::Params(ParamVector::new(values, vec![ParamSpec::new("w", &[len])]).unwrap()),
        sample_count: n,
        report: ClientReport {
            client_id: id,
            round: 1,
            per_class: vec![],
            loss: 0.0,
        },
    }
}

fn random_instance(rng: &mut ChaCha8Rng) -> Vec<ClientUpdate> {
    let clients = rng.gen_range(1..=12);
    let dims = rng.gen_range(1..=8);
    (0..clients)
        .map(|k| {
            let values = (0..dims).map(|_| rng.gen_range(-10.0..10.0)).collect();
            update(k * 3 + 1, rng.gen_range(1..=500), values)
        })
        .collect()
}

/// Plain two-pass weighted mean, one coordinate at a time.
fn oracle(updates: &[ClientUpdate]) -> Vec<f64> {
    let dims = match &updates[0].payload {
        UpdatePayload::Params(p) => p.len(),
        UpdatePayload::Trees(_) => unreachable!(),
    };
    let total: f64 = updates.iter().map(|u| u.sample_count as f64).sum();
    (0..dims)
        .map(|j| {
            updates
                .iter()
                .map(|u| match &u.payload {
                    UpdatePayload::Params(p) => u.sample_count as f64 / total * p.values[j],
                    UpdatePayload::Trees(_) => unreachable!(),
                })
                .sum()
        })
        .collect()
}

#[test]
fn fedavg_matches_weighted_mean_oracle_on_1000_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let updates = random_instance(&mut rng);
        let got = fedavg(&updates).unwrap().values;
        for (g, w) in got.iter().zip(oracle(&updates)) {
            worst = worst.max((g - w).abs());
        }
    }
    assert!(worst < 1e-12, "max coordinate error {worst:e}");
}

#[test]
fn three_client_weighted_example() {
    let (a, b, c) = (0.3, -1.7, 4.25);
    let out = fedavg(&[update(0, 1, vec![a]), update(1, 2, vec![b]), update(2, 3, vec![c])]).unwrap();
    assert!((out.values[0] - (a + 2.0 * b + 3.0 * c) / 6.0).abs() < 1e-15);
}

#[test]
fn fedavg_is_byte_identical_under_permutation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..200 {
        let mut updates = random_instance(&mut rng);
        let reference = fedavg(&updates).unwrap().to_bytes();
        updates.shuffle(&mut rng);
        assert_eq!(fedavg(&updates).unwrap().to_bytes(), reference);
    }
}

#[test]
fn fedavg_stays_inside_the_coordinate_hull() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..200 {
        let updates = random_instance(&mut rng);
        let out = fedavg(&updates).unwrap();
        for (j, v) in out.values.iter().enumerate() {
            let coords: Vec<f64> = updates
                .iter()
                .map(|u| match &u.payload {
                    UpdatePayload::Params(p) => p.values[j],
                    UpdatePayload::Trees(_) => unreachable!(),
                })
                .collect();
            let lo = coords.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = coords.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((lo..=hi).contains(v));
        }
    }
}

#[test]
fn fedavg_of_equal_updates_is_that_update() {
    let w = vec![0.1, 0.7, -3.3];
    let updates: Vec<ClientUpdate> = (0..5).map(|k| update(k, k + 3, w.clone())).collect();
    assert_eq!(fedavg(&updates).unwrap().values, w);
}

fn ensemble(classes: usize, values: &[f64]) -> TreeEnsemble {
    let mut e = TreeEnsemble::new(classes);
    for (i, &v) in values.iter().enumerate() {
        e.trees.push(Tree::constant(i % classes, v));
    }
    e
}

#[test]
fn bagging_merge_is_associative_in_round_order() {
    let g = ensemble(3, &[0.5]);
    let rounds: Vec<Vec<TreeEnsemble>> = (0..4)
        .map(|r| {
            (0..3)
                .map(|k| ensemble(3, &[r as f64 + 0.1 * k as f64, -(k as f64)]))
                .collect()
        })
        .collect();
    let mut stepwise = g.clone();
    for round in &rounds {
        stepwise = bagging_merge(&stepwise, &round.iter().collect::<Vec<_>>()).unwrap();
    }
    let all: Vec<&TreeEnsemble> = rounds.iter().flatten().collect();
    assert_eq!(stepwise, bagging_merge(&g, &all).unwrap());
}

#[test]
fn merge_tree_updates_ignores_arrival_order() {
    let g = TreeEnsemble::new(2);
    let mk = |id: usize, v: f64| ClientUpdate {
        client_id: id,
        payload: UpdatePayload::Trees(ensemble(2, &[v, -v])),
        sample_count: 1,
        report: ClientReport {
            client_id: id,
            round: 1,
            per_class: vec![],
            loss: 0.0,
        },
    };
    let forward = merge_tree_updates(&g, &[mk(0, 1.0), mk(1, 2.0), mk(2, 3.0)]).unwrap();
    let shuffled = merge_tree_updates(&g, &[mk(2, 3.0), mk(0, 1.0), mk(1, 2.0)]).unwrap();
    assert_eq!(forward, shuffled);
}

#[test]
fn bagging_grows_m_times_r_times_n_trees() {
    let data = common::bundle();
    let spec = TreeSpec {
        boosting_rounds: 1,
        max_depth: 3,
        ..TreeSpec::default()
    };
    let (m, r) = (5usize, 10usize);
    let shards = partition_iid(&data.train, m, 3).unwrap();
    let mut global = build_model(ModelKind::Tree, &common::config(ModelKind::Tree).arch, 1)
        .unwrap()
        .ensemble()
        .unwrap()
        .clone();
    for round in 0..r {
        let updates: Vec<ClientUpdate> = shards
            .iter()
            .map(|p| {
                let grown = train_tree_round(
                    &global,
                    &data.train.subset(&p.indices),
                    &spec,
                    (round * m + p.client_id) as u64,
                )
                .unwrap();
                ClientUpdate {
                    client_id: p.client_id,
                    payload: UpdatePayload::Trees(grown.tail(global.len())),
                    sample_count: p.indices.len(),
                    report: ClientReport {
                        client_id: p.client_id,
                        round,
                        per_class: vec![],
                        loss: 0.0,
                    },
                }
            })
            .collect();
        global = merge_tree_updates(&global, &updates).unwrap();
        assert_eq!(global.len(), m * (round + 1) * 10);
    }
    assert_eq!(global.len(), m * r * 10);
}
