mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;
use simg::active_learning::*;
use simg::chem_io::{structure_hash, Molecule};
use simg::graph::{ExtendedGraph, SimgGraph};
use simg::models::*;
use simg::synth::{dataset, SynthConfig};
use simg::tensor::Tensor;

fn tiny_model_config() -> MultitaskModelConfig {
    MultitaskModelConfig {
        encoder_blocks: 1,
        head_dim: 4,
        embed: 8,
        hidden: 4,
        evolver_blocks: 1,
        evolver_width: 8,
        head_width: 8,
        ..MultitaskModelConfig::default()
    }
}

fn tiny_config(seed: u64) -> AcquisitionConfig {
    AcquisitionConfig {
        ensemble_size: 2,
        k: 2,
        per_part: 5,
        initial: 10,
        seed,
        lp_model: LonePairModelConfig {
            layers: 1,
            hidden: 8,
            ..LonePairModelConfig::default()
        },
        lp_train: TrainConfig {
            epochs: 1,
            batch_size: 8,
            ..TrainConfig::default()
        },
        mt_model: tiny_model_config(),
        mt_train: MultitaskTrainConfig {
            epochs: 1,
            batch_size: 8,
            ..MultitaskTrainConfig::default()
        },
        jobs: 2,
        ..AcquisitionConfig::default()
    }
}

fn water_graphs() -> Vec<(String, ExtendedGraph)> {
    let w = common::water();
    vec![(structure_hash(&w), synth_simg(&w, &OracleRules::default()).unwrap().graph)]
}

/// A model whose node head outputs only the scaler means.
fn constant_charge_model(charge: f64) -> MultitaskModel {
    let mut m = MultitaskModel::new(tiny_model_config(), 1).unwrap();
    for name in ["head.node.1.w", "head.node.1.b"] {
        let id = m.store.id(name).unwrap();
        let t = m.store.get_mut(id);
        *t = Tensor::zeros(t.rows(), t.cols());
    }
    let mut s = m.scaler();
    s.mean[0] = charge;
    m.set_scaler(&s);
    m
}

fn pool_and_held_out(seed: u64) -> (Pool, Vec<(Molecule, SimgGraph)>) {
    let rules = OracleRules::default();
    let mols = dataset(seed, 36, &SynthConfig { min_heavy: 2, max_heavy: 5, ..SynthConfig::default() });
    let held: Vec<(Molecule, SimgGraph)> = mols[30..].iter().map(|m| (m.clone(), synth_simg(m, &rules).unwrap())).collect();
    (Pool::new(mols[..30].to_vec(), 2), held)
}

/// Top-k membership by counting strictly better molecules.
fn acquire_oracle(table: &VarianceTable, targets: &[String], k: usize) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for t in targets {
        let Some(c) = table.targets.iter().position(|x| x == t) else { continue };
        for (i, h) in table.molecules.iter().enumerate() {
            let v = table.values[i][c];
            let better = (0..table.molecules.len())
                .filter(|&j| table.values[j][c] > v || (table.values[j][c] == v && table.molecules[j] < *h))
                .count();
            if better < k {
                out.insert(h.clone());
            }
        }
    }
    out
}

#[test]
fn two_member_variance_of_one_and_three_is_one() {
    let (a, b) = (constant_charge_model(1.0), constant_charge_model(3.0));
    let table = ensemble_variance(&[&a, &b], &water_graphs(), 0).unwrap();
    let col = table.targets.iter().position(|t| t == "npa.charge").unwrap();
    assert!((table.values[0][col] - 1.0).abs() < 1e-12, "{}", table.values[0][col]);
}

#[test]
fn identical_members_have_zero_variance() {
    let a = MultitaskModel::new(tiny_model_config(), 5).unwrap();
    let b = MultitaskModel::new(tiny_model_config(), 5).unwrap();
    let table = ensemble_variance(&[&a, &b], &water_graphs(), 3).unwrap();
    assert!(table.values[0].iter().all(|&v| v == 0.0), "{:?}", table.values);
}

#[test]
fn variance_ignores_member_order() {
    let rules = OracleRules::default();
    let graphs: Vec<(String, ExtendedGraph)> = dataset(60, 8, &SynthConfig::default())
        .iter()
        .map(|m| (structure_hash(m), synth_simg(m, &rules).unwrap().graph))
        .collect();
    let ms: Vec<MultitaskModel> = (0..3).map(|s| MultitaskModel::new(tiny_model_config(), 10 + s).unwrap()).collect();
    let fwd = ensemble_variance(&[&ms[0], &ms[1], &ms[2]], &graphs, 1).unwrap();
    let rev = ensemble_variance(&[&ms[2], &ms[0], &ms[1]], &graphs, 1).unwrap();
    for (a, b) in fwd.values.iter().flatten().zip(rev.values.iter().flatten()) {
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }
    assert!(fwd.values.iter().flatten().any(|&v| v > 0.0));
}

#[test]
fn mismatched_members_are_rejected() {
    let a = MultitaskModel::new(tiny_model_config(), 1).unwrap();
    let b = MultitaskModel::new(MultitaskModelConfig { hidden: 6, ..tiny_model_config() }, 1).unwrap();
    assert!(matches!(ensemble_variance(&[&a, &b], &water_graphs(), 0), Err(AlError::ConfigMismatch)));
}

#[test]
fn config_validation() {
    assert!(AcquisitionConfig::default().validate().is_ok());
    assert!(AcquisitionConfig { ensemble_size: 1, ..AcquisitionConfig::default() }.validate().is_err());
    assert!(AcquisitionConfig { k: 0, ..AcquisitionConfig::default() }.validate().is_err());
    assert!(AcquisitionConfig { targets: vec!["npa.spin".into()], ..AcquisitionConfig::default() }.validate().is_err());
}

#[test]
fn pool_save_and_load_round_trip() {
    let (mut pool, _) = pool_and_held_out(61);
    let rules = OracleRules::default();
    let hashes: Vec<String> = pool.molecules.keys().take(7).cloned().collect();
    for (r, h) in hashes.iter().enumerate() {
        pool.label(h, &rules, r % 3).unwrap();
    }
    let dir = tempfile::tempdir().unwrap();
    pool.save(dir.path()).unwrap();
    assert_eq!(Pool::load(dir.path()).unwrap(), pool);
    pool.label(&hashes[0], &rules, 9).unwrap();
    assert_eq!(pool.labels[&hashes[0]].round, 0);
    assert_eq!(pool.labeled().len() + pool.unlabeled().len(), pool.len());
    let parts = pool.partition();
    assert_eq!(parts.len(), 2);
    assert_eq!(parts.iter().map(Vec::len).sum::<usize>(), pool.unlabeled().len());
}

#[test]
fn oracle_is_idempotent() {
    let rules = OracleRules::default();
    for m in dataset(62, 50, &SynthConfig::default()) {
        assert_eq!(synth_label(&m, &rules).unwrap(), synth_label(&m, &rules).unwrap());
        assert_eq!(synth_simg(&m, &rules).unwrap(), synth_simg(&m, &rules).unwrap());
    }
}

#[test]
fn zero_rounds_records_only_the_initial_state() {
    let (mut pool, held) = pool_and_held_out(63);
    let cfg = tiny_config(1);
    let h = al_loop(&mut pool, &cfg, &OracleRules::default(), 0, &held, None).unwrap();
    assert_eq!(h.rounds.len(), 1);
    assert!(h.rounds[0].selection.is_empty());
    assert_eq!(h.rounds[0].metrics.labeled, cfg.initial);
    assert_eq!(pool.labels.len(), cfg.initial);
}

#[test]
fn histories_are_deterministic_and_skip_labeled_molecules() {
    let run = || {
        let (mut pool, held) = pool_and_held_out(64);
        let dir = tempfile::tempdir().unwrap();
        let h = al_loop(&mut pool, &tiny_config(2), &OracleRules::default(), 2, &held, Some(dir.path())).unwrap();
        assert_eq!(Pool::load(dir.path()).unwrap(), pool);
        (h, pool)
    };
    let (a, pool) = run();
    let (b, _) = run();
    assert_eq!(a, b);
    assert_eq!(a.to_text(), b.to_text());
    assert_eq!(a.rounds.len(), 3);
    let mut seen: BTreeSet<String> = BTreeSet::new();
    for r in &a.rounds[1..] {
        assert!(!r.selection.is_empty() && r.selection.len() <= 2 * TARGET_NAMES.len());
        for h in &r.selection {
            assert!(seen.insert(h.clone()), "{h} selected twice");
            assert_eq!(pool.labels[h].round, r.round);
        }
    }
}

#[test]
fn select_round_draws_only_unlabeled_candidates() {
    let (mut pool, _) = pool_and_held_out(65);
    let rules = OracleRules::default();
    for h in pool.molecules.keys().step_by(2).cloned().collect::<Vec<_>>() {
        pool.label(&h, &rules, 0).unwrap();
    }
    let cfg = tiny_config(3);
    let ens = train_ensemble(&pool, &cfg, 0).unwrap();
    assert_eq!(ens.members.len(), 2);
    let (sel, cands) = select_round(&pool, &ens, &cfg, 1).unwrap();
    assert_eq!(cands.len(), 10);
    assert!(cands.iter().chain(&sel).all(|h| !pool.is_labeled(h)));
    assert!(sel.iter().all(|h| cands.contains(h)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn acquire_selects_the_top_k_per_target(
        rows in proptest::collection::vec(proptest::collection::vec(0u8..6, 3), 0..25),
        k in 1usize..6,
        picked in proptest::collection::btree_set(0usize..3, 1..=3),
    ) {
        let names = ["npa.charge", "lp.s", "bond.occupancy"];
        let table = VarianceTable {
            molecules: (0..rows.len()).map(|i| format!("{:04x}", (i * 7919) % 65_536)).collect(),
            targets: names.iter().map(|s| s.to_string()).collect(),
            values: rows.iter().map(|r| r.iter().map(|&v| f64::from(v) / 4.0).collect()).collect(),
        };
        let targets: Vec<String> = picked.iter().map(|&i| names[i].to_string()).collect();
        let got = acquire(&table, &targets, k);
        prop_assert_eq!(&got, &acquire_oracle(&table, &targets, k));
        prop_assert!(got.len() <= k * targets.len());
        prop_assert!(got.len() >= k.min(rows.len()));
        prop_assert!(got.iter().all(|h| table.molecules.contains(h)));
    }
}
