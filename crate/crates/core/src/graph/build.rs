use std::collections::HashMap;

use super::{
    AtomEdge, BondNode, BondTargets, ExtendedGraph, GraphAtom, GraphError, InteractionEdge, LpNode, LpTarget, NodeKind,
    NodeRef, SimgGraph,
};
use crate::chem_io::{Molecule, NboRecord, OrbitalKind, OrbitalRef};

pub const MAX_LONE_PAIRS: u8 = 4;

/// Lone-pair counts for one atom.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub struct LpCount {
    pub total: u8,
    pub type1: u8,
}

/// 1 iff the p character exceeds the s character by more than 80 points.
pub fn lp_type(s_char: f64, p_char: f64) -> u8 {
    u8::from(p_char - s_char > 80.0)
}

pub fn build_molecular_graph(m: &Molecule) -> ExtendedGraph {
    let atoms = m
        .atoms
        .iter()
        .map(|a| GraphAtom {
            element: a.element,
            position: a.position,
        })
        .collect();
    let atom_edges = m
        .bonds
        .iter()
        .map(|b| AtomEdge {
            i: b.i,
            j: b.j,
            order: b.order,
            length: m.distance(b.i, b.j),
        })
        .collect();
    ExtendedGraph {
        atoms,
        charge: m.charge,
        atom_edges,
        lp_nodes: Vec::new(),
        bond_nodes: Vec::new(),
        atom_bond_edges: Vec::new(),
        atom_lp_edges: Vec::new(),
    }
}

/// Per-atom lone-pair counts implied by a label record.
pub fn lp_counts_from_record(atoms: usize, r: &NboRecord) -> Result<Vec<LpCount>, GraphError> {
    let mut counts = vec![LpCount::default(); atoms];
    for lp in &r.lone_pairs {
        let c = counts.get_mut(lp.owner).ok_or_else(|| GraphError::Reference(format!("lone pair owner {} out of range", lp.owner)))?;
        c.total += 1;
        c.type1 += lp_type(lp.character.s, lp.character.p);
    }
    Ok(counts)
}

/// Molecule plus label record → SIMG.
pub fn simg_from_record(m: &Molecule, r: &NboRecord) -> Result<SimgGraph, GraphError> {
    let g = build_molecular_graph(m);
    let eg = build_extended_graph(&g, &lp_counts_from_record(g.atoms.len(), r)?)?;
    build_simg(&eg, r)
}

/// Adds lone-pair and bond-orbital nodes to a molecular graph. Existing
/// lp/bond nodes in `g` are replaced.
pub fn build_extended_graph(g: &ExtendedGraph, lp_counts: &[LpCount]) -> Result<ExtendedGraph, GraphError> {
    if lp_counts.len() != g.atoms.len() {
        return Err(GraphError::Mismatch(format!(
            "{} lone-pair counts for {} atoms",
            lp_counts.len(),
            g.atoms.len()
        )));
    }
    let mut lp_nodes = Vec::new();
    for (atom, c) in lp_counts.iter().enumerate() {
        if c.type1 > c.total || c.total > MAX_LONE_PAIRS {
            return Err(GraphError::CountRange {
                atom,
                total: c.total,
                type1: c.type1,
            });
        }
        for k in 0..c.total {
            lp_nodes.push(LpNode {
                owner: atom,
                lp_type: u8::from(k >= c.total - c.type1),
            });
        }
    }

    let mut bond_nodes = Vec::new();
    for e in &g.atom_edges {
        bond_nodes.push(BondNode {
            atom_i: e.i,
            atom_j: e.j,
            kind: OrbitalKind::Sigma,
            pi_rank: 0,
        });
        for r in 0..e.order.saturating_sub(1) {
            bond_nodes.push(BondNode {
                atom_i: e.i,
                atom_j: e.j,
                kind: OrbitalKind::Pi,
                pi_rank: r,
            });
        }
    }
    bond_nodes.sort_by_key(|b| (b.atom_i, b.atom_j, b.kind, b.pi_rank));

    let atom_bond_edges = bond_nodes
        .iter()
        .enumerate()
        .flat_map(|(k, b)| [(b.atom_i, k), (b.atom_j, k)])
        .collect();
    let atom_lp_edges = lp_nodes.iter().enumerate().map(|(k, lp)| (lp.owner, k)).collect();

    Ok(ExtendedGraph {
        atoms: g.atoms.clone(),
        charge: g.charge,
        atom_edges: g.atom_edges.clone(),
        lp_nodes,
        bond_nodes,
        atom_bond_edges,
        atom_lp_edges,
    })
}

/// Attaches a label record to an extended graph.
///
/// Lone-pair records are matched to nodes with the same owner and type;
/// within a group the record with the highest occupancy goes to the first
/// node. Bond-orbital records are matched by atom pair and kind, π records in
/// record order.
pub fn build_simg(eg: &ExtendedGraph, r: &NboRecord) -> Result<SimgGraph, GraphError> {
    if r.atom_npa.len() != eg.atoms.len() {
        return Err(GraphError::Mismatch(format!(
            "record has {} NPA entries for {} atoms",
            r.atom_npa.len(),
            eg.atoms.len()
        )));
    }

    let mut lp_groups: HashMap<(usize, u8), Vec<usize>> = HashMap::new();
    for (k, lp) in r.lone_pairs.iter().enumerate() {
        lp_groups
            .entry((lp.owner, lp_type(lp.character.s, lp.character.p)))
            .or_default()
            .push(k);
    }
    for members in lp_groups.values_mut() {
        members.sort_by(|&a, &b| r.lone_pairs[b].occupancy.total_cmp(&r.lone_pairs[a].occupancy).then(a.cmp(&b)));
    }
    let mut node_groups: HashMap<(usize, u8), Vec<usize>> = HashMap::new();
    for (k, n) in eg.lp_nodes.iter().enumerate() {
        node_groups.entry((n.owner, n.lp_type)).or_default().push(k);
    }
    let mut lp_map = vec![usize::MAX; r.lone_pairs.len()];
    let mut lp_targets = vec![None; eg.lp_nodes.len()];
    for (key, nodes) in &node_groups {
        let records = lp_groups.get(key).map(Vec::as_slice).unwrap_or(&[]);
        if records.len() != nodes.len() {
            return Err(GraphError::Mismatch(format!(
                "atom {} has {} type-{} lone pairs in the record but {} in the graph",
                key.0,
                records.len(),
                key.1,
                nodes.len()
            )));
        }
        for (&rec, &node) in records.iter().zip(nodes) {
            lp_map[rec] = node;
            let lp = &r.lone_pairs[rec];
            lp_targets[node] = Some(LpTarget {
                character: lp.character,
                occupancy: lp.occupancy,
            });
        }
    }
    if let Some(rec) = lp_map.iter().position(|&n| n == usize::MAX) {
        let lp = &r.lone_pairs[rec];
        return Err(GraphError::Mismatch(format!(
            "lone pair {rec} on atom {} has no matching node",
            lp.owner
        )));
    }

    let mut bond_slots: HashMap<(usize, usize, OrbitalKind), Vec<usize>> = HashMap::new();
    for (k, b) in eg.bond_nodes.iter().enumerate() {
        bond_slots.entry((b.atom_i, b.atom_j, b.kind)).or_default().push(k);
    }
    for slots in bond_slots.values_mut() {
        slots.sort_by_key(|&k| eg.bond_nodes[k].pi_rank);
        slots.reverse();
    }
    let mut bond_map = vec![0; r.bond_orbitals.len()];
    let mut bond_targets = vec![None; eg.bond_nodes.len()];
    for (k, b) in r.bond_orbitals.iter().enumerate() {
        let b = if b.atom_i > b.atom_j { b.swapped() } else { *b };
        let node = bond_slots
            .get_mut(&(b.atom_i, b.atom_j, b.kind))
            .and_then(Vec::pop)
            .ok_or_else(|| {
                GraphError::Mismatch(format!(
                    "bond orbital {k} ({} {}-{}) has no matching node",
                    b.kind.name(),
                    b.atom_i,
                    b.atom_j
                ))
            })?;
        bond_map[k] = node;
        bond_targets[node] = Some(BondTargets {
            bonding: b.bonding,
            antibonding: b.antibonding,
        });
    }
    if let Some(node) = bond_targets.iter().position(Option::is_none) {
        let b = eg.bond_nodes[node];
        return Err(GraphError::Mismatch(format!(
            "bond node {node} ({} {}-{}) has no record",
            b.kind.name(),
            b.atom_i,
            b.atom_j
        )));
    }

    let resolve = |o: OrbitalRef| -> Result<NodeRef, GraphError> {
        match o {
            OrbitalRef::LonePair(i) => lp_map.get(i).map(|&n| NodeRef::lone_pair(n)),
            OrbitalRef::Bonding(i) | OrbitalRef::Antibonding(i) => bond_map.get(i).map(|&n| NodeRef::bond(n)),
        }
        .ok_or_else(|| GraphError::Reference(o.label()))
    };
    let mut interactions = Vec::with_capacity(r.interactions.len());
    for x in &r.interactions {
        if !x.donor.is_donor_kind() || !x.acceptor.is_acceptor_kind() {
            return Err(GraphError::Reference(format!(
                "{} -> {} has invalid roles",
                x.donor.label(),
                x.acceptor.label()
            )));
        }
        let donor = resolve(x.donor)?;
        let acceptor = resolve(x.acceptor)?;
        if donor == acceptor {
            return Err(GraphError::Reference(format!("{} donates to itself", x.donor.label())));
        }
        interactions.push(InteractionEdge {
            donor,
            acceptor,
            e2: x.e2,
            energy_gap: x.energy_gap,
            fock_element: x.fock_element,
        });
    }
    interactions.sort_by_key(|x| (x.donor, x.acceptor));

    let simg = SimgGraph {
        graph: eg.clone(),
        atom_targets: r.atom_npa.clone(),
        lp_targets: lp_targets.into_iter().map(Option::unwrap).collect(),
        bond_targets: bond_targets.into_iter().map(Option::unwrap).collect(),
        interactions,
    };
    debug_assert!(simg.interactions.iter().all(|x| x.acceptor.kind == NodeKind::BondPair));
    Ok(simg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem_io::{Atom, Bond};
    use crate::element::Element;

    fn water() -> Molecule {
        Molecule::new(
            vec![
                Atom {
                    element: Element::O,
                    position: [0.0, 0.0, 0.1173],
                },
                Atom {
                    element: Element::H,
                    position: [0.0, 0.7572, -0.4692],
                },
                Atom {
                    element: Element::H,
                    position: [0.0, -0.7572, -0.4692],
                },
            ],
            vec![Bond { i: 0, j: 1, order: 1 }, Bond { i: 0, j: 2, order: 1 }],
            0,
        )
        .unwrap()
    }

    #[test]
    fn lp_type_threshold() {
        assert_eq!(lp_type(0.5, 99.5), 1);
        assert_eq!(lp_type(25.0, 75.0), 0);
        assert_eq!(lp_type(10.0, 90.0), 0);
    }

    #[test]
    fn h2_graph() {
        let m = Molecule::new(
            vec![
                Atom {
                    element: Element::H,
                    position: [0.0; 3],
                },
                Atom {
                    element: Element::H,
                    position: [0.74, 0.0, 0.0],
                },
            ],
            vec![Bond { i: 0, j: 1, order: 1 }],
            0,
        )
        .unwrap();
        let g = build_molecular_graph(&m);
        assert_eq!(g.atom_edges.len(), 1);
        assert!((g.atom_edges[0].length - 0.74).abs() < 1e-12);
        let eg = build_extended_graph(&g, &[LpCount::default(); 2]).unwrap();
        assert_eq!(eg.bond_nodes.len(), 1);
        assert!(eg.lp_nodes.is_empty());
        eg.validate().unwrap();
    }

    #[test]
    fn water_nodes() {
        let g = build_molecular_graph(&water());
        let counts = [LpCount { total: 2, type1: 0 }, LpCount::default(), LpCount::default()];
        let eg = build_extended_graph(&g, &counts).unwrap();
        assert_eq!(eg.lp_nodes.len(), 2);
        assert_eq!(eg.bond_nodes.len(), 2);
        assert_eq!(eg.atom_lp_edges, vec![(0, 0), (0, 1)]);
        assert_eq!(eg.atom_bond_edges, vec![(0, 0), (1, 0), (0, 1), (2, 1)]);
    }

    #[test]
    fn double_and_triple_bonds() {
        let m = Molecule::new(
            vec![
                Atom {
                    element: Element::N,
                    position: [0.0; 3],
                },
                Atom {
                    element: Element::C,
                    position: [1.16, 0.0, 0.0],
                },
                Atom {
                    element: Element::O,
                    position: [2.4, 0.0, 0.0],
                },
            ],
            vec![Bond { i: 1, j: 0, order: 3 }, Bond { i: 1, j: 2, order: 2 }],
            0,
        )
        .unwrap();
        let eg = build_extended_graph(&build_molecular_graph(&m), &[LpCount::default(); 3]).unwrap();
        let kinds: Vec<_> = eg.bond_nodes.iter().map(|b| (b.atom_i, b.atom_j, b.kind, b.pi_rank)).collect();
        assert_eq!(
            kinds,
            vec![
                (0, 1, OrbitalKind::Sigma, 0),
                (0, 1, OrbitalKind::Pi, 0),
                (0, 1, OrbitalKind::Pi, 1),
                (1, 2, OrbitalKind::Sigma, 0),
                (1, 2, OrbitalKind::Pi, 0),
            ]
        );
        eg.validate().unwrap();
    }

    #[test]
    fn count_range_rejected() {
        let g = build_molecular_graph(&water());
        let bad = [LpCount { total: 1, type1: 2 }, LpCount::default(), LpCount::default()];
        assert!(matches!(build_extended_graph(&g, &bad), Err(GraphError::CountRange { atom: 0, .. })));
        let bad = [LpCount { total: 5, type1: 0 }, LpCount::default(), LpCount::default()];
        assert!(build_extended_graph(&g, &bad).is_err());
    }

    #[test]
    fn type1_nodes_follow_type0() {
        let g = build_molecular_graph(&water());
        let counts = [LpCount { total: 3, type1: 1 }, LpCount::default(), LpCount::default()];
        let eg = build_extended_graph(&g, &counts).unwrap();
        let types: Vec<u8> = eg.lp_nodes.iter().map(|n| n.lp_type).collect();
        assert_eq!(types, vec![0, 0, 1]);
    }
}
