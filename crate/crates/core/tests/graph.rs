mod common;

use std::collections::VecDeque;

use proptest::prelude::*;
use simg::active_learning::{oracle_lp_counts, synth_label, synth_simg, OracleRules};
use simg::chem_io::{distance, Molecule, OrbitalKind, OrbitalRef};
use simg::graph::*;
use simg::synth::{dataset, item_rng, peptide_chain, SynthConfig};

/// Hop counts from `src` by breadth-first search over the extended graph's
/// atom skeleton, with lone pairs and bond nodes attached to their atoms.
fn bfs_atoms(m: &Molecule, src: usize) -> Vec<u32> {
    let adj = m.adjacency();
    let mut d = vec![u32::MAX; m.atoms.len()];
    d[src] = 0;
    let mut q = VecDeque::from([src]);
    while let Some(u) = q.pop_front() {
        for &(v, _) in &adj[u] {
            if d[v] == u32::MAX {
                d[v] = d[u] + 1;
                q.push_back(v);
            }
        }
    }
    d
}

fn anchor_atoms(g: &ExtendedGraph, r: NodeRef) -> Vec<usize> {
    match r.kind {
        NodeKind::Atom => vec![r.index],
        NodeKind::LonePair => vec![g.lp_nodes[r.index].owner],
        NodeKind::BondPair => vec![g.bond_nodes[r.index].atom_i, g.bond_nodes[r.index].atom_j],
    }
}

fn all_nodes(g: &ExtendedGraph) -> Vec<NodeRef> {
    (0..g.atoms.len())
        .map(NodeRef::atom)
        .chain((0..g.lp_nodes.len()).map(NodeRef::lone_pair))
        .chain((0..g.bond_nodes.len()).map(NodeRef::bond))
        .collect()
}

fn extended(m: &Molecule) -> ExtendedGraph {
    build_extended_graph(&build_molecular_graph(m), &oracle_lp_counts(m, &OracleRules::default()).unwrap()).unwrap()
}

#[test]
fn water_extension() {
    let w = common::water();
    let g = build_molecular_graph(&w);
    assert_eq!((g.atoms.len(), g.atom_edges.len()), (3, 2));
    let eg = extended(&w);
    assert_eq!(eg.lp_nodes.len(), 2);
    assert_eq!(eg.bond_nodes.len(), 2);
    assert!(eg.bond_nodes.iter().all(|b| b.kind == OrbitalKind::Sigma));
    assert_eq!(graph_distance(&eg, NodeRef::atom(1), NodeRef::atom(2)).unwrap(), 2);
    assert_eq!(graph_distance(&eg, NodeRef::atom(0), NodeRef::atom(1)).unwrap(), 1);
    assert_eq!(graph_distance(&eg, NodeRef::lone_pair(1), NodeRef::lone_pair(1)).unwrap(), 0);
    assert!(graph_distance(&eg, NodeRef::atom(0), NodeRef::atom(7)).is_err());
}

#[test]
fn ethylene_double_bond_has_sigma_and_pi() {
    let eg = extended(&common::ethylene());
    let cc: Vec<_> = eg.bond_nodes.iter().filter(|b| (b.atom_i, b.atom_j) == (0, 1)).map(|b| b.kind).collect();
    assert_eq!(cc, vec![OrbitalKind::Sigma, OrbitalKind::Pi]);
    assert_eq!(eg.bond_nodes.len(), 6);
}

#[test]
fn water_simg_table_shapes() {
    let s = synth_simg(&common::water(), &OracleRules::default()).unwrap();
    assert_eq!(s.atom_targets.len(), 3);
    assert_eq!(s.lp_targets.len(), 2);
    assert_eq!(s.bond_targets.len(), 2);
    assert_eq!(s.atom_targets[0].to_array().len(), 4);
    assert_eq!(s.bond_targets[0].to_array(OrbitalKind::Sigma).len(), 26);
    s.validate().unwrap();
}

#[test]
fn record_lone_pair_mismatch_is_rejected() {
    let w = common::water();
    let mut rec = synth_label(&w, &OracleRules::default()).unwrap();
    rec.lone_pairs.push(rec.lone_pairs[0]);
    assert!(build_simg(&extended(&w), &rec).is_err());
}

#[test]
fn sigma_donor_references_resolve_to_bond_nodes() {
    let rules = OracleRules::default();
    let mut seen = 0;
    for m in dataset(21, 40, &SynthConfig::default()) {
        let rec = synth_label(&m, &rules).unwrap();
        let s = simg_from_record(&m, &rec).unwrap();
        for (x, e) in rec.interactions.iter().zip(&s.interactions) {
            if let OrbitalRef::Bonding(_) = x.donor {
                assert_eq!(e.donor.kind, NodeKind::BondPair);
                seen += 1;
            }
            assert_eq!(e.acceptor.kind, NodeKind::BondPair);
        }
    }
    assert!(seen > 0);
}

#[test]
fn edge_lengths_match_recomputed_distances() {
    for m in dataset(22, 100, &SynthConfig::default()) {
        let g = build_molecular_graph(&m);
        for e in &g.atom_edges {
            let d = distance(&m.atoms[e.i].position, &m.atoms[e.j].position);
            assert!((e.length - d).abs() < 1e-12);
        }
    }
}

#[test]
fn node_count_law() {
    for m in dataset(23, 200, &SynthConfig::default()) {
        let eg = extended(&m);
        let orders: usize = m.bonds.iter().map(|b| usize::from(b.order)).sum();
        assert_eq!(eg.bond_nodes.len(), orders);
        let lps: usize = oracle_lp_counts(&m, &OracleRules::default()).unwrap().iter().map(|c| usize::from(c.total)).sum();
        assert_eq!(eg.lp_nodes.len(), lps);
        assert_eq!(eg.node_count(), m.atoms.len() + lps + orders);
        eg.validate().unwrap();
    }
}

#[test]
fn graph_distance_agrees_with_breadth_first_search() {
    let mut checked = 0;
    for (k, m) in dataset(24, 1000, &SynthConfig::default()).iter().enumerate() {
        let eg = extended(m);
        let oracle: Vec<Vec<u32>> = (0..m.atoms.len()).map(|a| bfs_atoms(m, a)).collect();
        let dist = AtomDistances::new(&eg);
        let nodes = all_nodes(&eg);
        let mut rng = item_rng(24, "pairs", k as u64);
        for _ in 0..20 {
            use rand::seq::IndexedRandom;
            let (a, b, c) = (*nodes.choose(&mut rng).unwrap(), *nodes.choose(&mut rng).unwrap(), *nodes.choose(&mut rng).unwrap());
            let expect = anchor_atoms(&eg, a)
                .iter()
                .flat_map(|&x| anchor_atoms(&eg, b).into_iter().map(move |y| (x, y)))
                .map(|(x, y)| oracle[x][y])
                .min()
                .unwrap();
            let ab = dist.between(&eg, a, b).unwrap();
            assert_eq!(ab, expect);
            assert_eq!(ab, dist.between(&eg, b, a).unwrap());
            if a.kind != NodeKind::BondPair && b.kind != NodeKind::BondPair && c.kind != NodeKind::BondPair {
                let (bc, ac) = (dist.between(&eg, b, c).unwrap(), dist.between(&eg, a, c).unwrap());
                assert!(ac <= ab + bc);
            }
            checked += 1;
        }
    }
    assert_eq!(checked, 20_000);
}

#[test]
fn canonical_graphs_are_deterministic() {
    for m in dataset(25, 50, &SynthConfig::default()) {
        assert_eq!(extended(&m), extended(&m));
    }
}

#[test]
fn ground_truth_counts_reconstruct_the_record() {
    let rules = OracleRules::default();
    for m in dataset(26, 200, &SynthConfig::default()) {
        let rec = synth_label(&m, &rules).unwrap();
        let counts = lp_counts_from_record(m.atoms.len(), &rec).unwrap();
        let eg = build_extended_graph(&build_molecular_graph(&m), &counts).unwrap();
        let s = build_simg(&eg, &rec).unwrap();
        s.validate().unwrap();
        let back = s.to_record();
        assert_eq!(back.atom_npa, rec.atom_npa);
        assert_eq!(back.bond_orbitals.len(), rec.bond_orbitals.len());
        assert_eq!(back.interactions.len(), rec.interactions.len());
        let key = |l: &simg::chem_io::LonePairRecord| (l.owner, (l.occupancy * 1e9) as i64);
        let mut a: Vec<_> = back.lone_pairs.iter().map(key).collect();
        let mut b: Vec<_> = rec.lone_pairs.iter().map(key).collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
        assert_eq!(simg_from_record(&m, &back).unwrap(), s);
    }
}

#[test]
fn long_chains_build() {
    let mut rng = item_rng(27, "chain", 0);
    let chain = peptide_chain(&mut rng, 50, 200);
    let heavy = chain.molecule.heavy_atom_count();
    assert!((50..=200).contains(&heavy), "{heavy}");
    let s = synth_simg(&chain.molecule, &OracleRules::default()).unwrap();
    s.validate().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn lp_type_is_the_strict_p_minus_s_threshold(s in 0.0f64..100.0, p in 0.0f64..100.0) {
        prop_assert_eq!(lp_type(s, p), u8::from(p - s > 80.0));
    }

    #[test]
    fn random_counts_obey_the_node_count_law(seed in 0u64..5_000, extra in proptest::collection::vec((0u8..=4, 0u8..=4), 12..40)) {
        let m = dataset(seed, 1, &SynthConfig::default()).remove(0);
        let counts: Vec<LpCount> = (0..m.atoms.len()).map(|i| {
            let (t, k) = extra[i % extra.len()];
            LpCount { total: t, type1: k.min(t) }
        }).collect();
        let eg = build_extended_graph(&build_molecular_graph(&m), &counts).unwrap();
        prop_assert_eq!(eg.lp_nodes.len(), counts.iter().map(|c| usize::from(c.total)).sum::<usize>());
        prop_assert_eq!(eg.lp_counts(), counts);
        prop_assert!(eg.validate().is_ok());
    }
}
