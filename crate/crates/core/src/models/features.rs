//! Model inputs derived from graphs, and batching.

use std::collections::HashMap;

use sha2::{Digest, Sha256};

use crate::chem_io::{distance, OrbitalKind};
use crate::element::Element;
use crate::graph::{AtomDistances, ExtendedGraph, NodeKind, NodeRef};
use crate::tensor::Tensor;

pub const NODE_FEATURES: usize = 3 + Element::COUNT + 3;
pub const EDGE_FEATURES: usize = 6;
/// Distance, graph distance and orbital kinds, then radial and graph-distance expansions.
pub const PAIR_FEATURES: usize = 7 + DISTANCE_BASIS + HOP_BASIS;
const DISTANCE_BASIS: usize = 13;
const HOP_BASIS: usize = 8;
/// Input width of the lone-pair model's atoms.
pub const ATOM_FEATURES: usize = Element::COUNT + 1;
pub const BOND_EDGE_FEATURES: usize = 4;

/// Candidate link pairs lie within this many bonds...
pub const CANDIDATE_GRAPH_DISTANCE: u32 = 6;
/// ... or within this distance (Å).
pub const CANDIDATE_DISTANCE: f64 = 4.0;
pub const GRAPH_DISTANCE_CAP: u32 = 8;

/// Stable 64-bit identity of a graph's structure and lone-pair table.
pub fn graph_key(g: &ExtendedGraph) -> u64 {
    let mut h = Sha256::new();
    for a in &g.atoms {
        h.update([a.element.index() as u8]);
        for c in a.position {
            h.update(c.to_le_bytes());
        }
    }
    for e in &g.atom_edges {
        h.update((e.i as u64).to_le_bytes());
        h.update((e.j as u64).to_le_bytes());
        h.update([e.order]);
    }
    for lp in &g.lp_nodes {
        h.update((lp.owner as u64).to_le_bytes());
        h.update([lp.lp_type]);
    }
    h.update(g.charge.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

/// Per-node input features: kind one-hot, element one-hot and net charge on
/// atoms, lp type on lone pairs, π flag on bond nodes.
fn node_features(g: &ExtendedGraph) -> Vec<[f64; NODE_FEATURES]> {
    let mut rows = Vec::with_capacity(g.node_count());
    for a in &g.atoms {
        let mut f = [0.0; NODE_FEATURES];
        f[0] = 1.0;
        f[3 + a.element.index()] = 1.0;
        f[3 + Element::COUNT] = f64::from(g.charge);
        rows.push(f);
    }
    for lp in &g.lp_nodes {
        let mut f = [0.0; NODE_FEATURES];
        f[1] = 1.0;
        f[4 + Element::COUNT] = f64::from(lp.lp_type);
        rows.push(f);
    }
    for b in &g.bond_nodes {
        let mut f = [0.0; NODE_FEATURES];
        f[2] = 1.0;
        f[5 + Element::COUNT] = f64::from(u8::from(b.kind == OrbitalKind::Pi));
        rows.push(f);
    }
    rows
}

/// A candidate donor→acceptor pair, in orbital-index space (lone pairs
/// first, then bond nodes).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Candidate {
    pub donor: usize,
    pub acceptor: usize,
    pub features: [f64; PAIR_FEATURES],
    pub distance: f64,
    pub graph_distance: u32,
}

/// Everything the models need from one extended graph, precomputed.
#[derive(Clone, Debug)]
pub struct GraphInputs {
    pub key: u64,
    pub n_atoms: usize,
    pub n_lp: usize,
    pub n_bond: usize,
    pub x: Vec<[f64; NODE_FEATURES]>,
    /// Directed (src, dst, features), self loops included, local flat indices.
    pub edges: Vec<(usize, usize, [f64; EDGE_FEATURES])>,
    /// (atom, bond orbital index) per atom-bond side.
    pub atom_bond: Vec<(usize, usize)>,
    /// Owning atom of each lone pair.
    pub lp_owner: Vec<usize>,
    pub candidates: Vec<Candidate>,
    pub candidate_index: HashMap<(usize, usize), usize>,
}

impl GraphInputs {
    pub fn new(g: &ExtendedGraph) -> Self {
        let n_atoms = g.atoms.len();
        let n_lp = g.lp_nodes.len();
        let n_bond = g.bond_nodes.len();
        let mut edges = Vec::new();
        for e in &g.atom_edges {
            let f = [1.0, 0.0, 0.0, 0.0, f64::from(e.order) / 3.0, e.length];
            edges.push((e.i, e.j, f));
            edges.push((e.j, e.i, f));
        }
        for &(a, k) in &g.atom_lp_edges {
            let f = [0.0, 1.0, 0.0, 0.0, 0.0, 0.0];
            edges.push((a, n_atoms + k, f));
            edges.push((n_atoms + k, a, f));
        }
        for &(a, k) in &g.atom_bond_edges {
            let f = [0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
            edges.push((a, n_atoms + n_lp + k, f));
            edges.push((n_atoms + n_lp + k, a, f));
        }
        for v in 0..g.node_count() {
            edges.push((v, v, [0.0, 0.0, 0.0, 1.0, 0.0, 0.0]));
        }

        let hops = AtomDistances::new(g);
        let orbitals: Vec<NodeRef> = (0..n_lp).map(NodeRef::lone_pair).chain((0..n_bond).map(NodeRef::bond)).collect();
        let anchors: Vec<[f64; 3]> = orbitals.iter().map(|&r| g.anchor(r)).collect();
        let mut candidates = Vec::new();
        for (d, &dr) in orbitals.iter().enumerate() {
            for a in n_lp..orbitals.len() {
                if a == d {
                    continue;
                }
                let ar = orbitals[a];
                let r = distance(&anchors[d], &anchors[a]);
                let gd = hops.between(g, dr, ar).expect("nodes of g");
                if gd > CANDIDATE_GRAPH_DISTANCE && r > CANDIDATE_DISTANCE {
                    continue;
                }
                let mut f = [0.0; PAIR_FEATURES];
                f[0] = r / 4.0;
                f[1] = f64::from(gd.min(GRAPH_DISTANCE_CAP)) / f64::from(GRAPH_DISTANCE_CAP);
                match dr.kind {
                    NodeKind::LonePair => f[2] = 1.0,
                    _ if g.bond_nodes[dr.index].kind == OrbitalKind::Sigma => f[3] = 1.0,
                    _ => f[4] = 1.0,
                }
                if g.bond_nodes[ar.index].kind == OrbitalKind::Sigma {
                    f[5] = 1.0;
                } else {
                    f[6] = 1.0;
                }
                for (k, v) in f[7..7 + DISTANCE_BASIS].iter_mut().enumerate() {
                    let c = 1.0 + 0.25 * k as f64;
                    *v = (-((r - c) / 0.25).powi(2)).exp();
                }
                f[7 + DISTANCE_BASIS + (gd as usize).min(HOP_BASIS - 1)] = 1.0;
                candidates.push(Candidate {
                    donor: d,
                    acceptor: a,
                    features: f,
                    distance: r,
                    graph_distance: gd,
                });
            }
        }
        let candidate_index = candidates.iter().enumerate().map(|(k, c)| ((c.donor, c.acceptor), k)).collect();

        GraphInputs {
            key: graph_key(g),
            n_atoms,
            n_lp,
            n_bond,
            x: node_features(g),
            edges,
            atom_bond: g.atom_bond_edges.clone(),
            lp_owner: g.lp_nodes.iter().map(|l| l.owner).collect(),
            candidates,
            candidate_index,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_atoms + self.n_lp + self.n_bond
    }

    pub fn n_orbitals(&self) -> usize {
        self.n_lp + self.n_bond
    }

    /// Orbital index of an lp or bond node.
    pub fn orbital(&self, r: NodeRef) -> usize {
        match r.kind {
            NodeKind::LonePair => r.index,
            NodeKind::BondPair => self.n_lp + r.index,
            NodeKind::Atom => panic!("atoms are not orbitals"),
        }
    }

    pub fn orbital_ref(&self, k: usize) -> NodeRef {
        if k < self.n_lp {
            NodeRef::lone_pair(k)
        } else {
            NodeRef::bond(k - self.n_lp)
        }
    }
}

/// Lone-pair model inputs: atoms and covalent bonds only.
#[derive(Clone, Debug)]
pub struct MolInputs {
    pub x: Vec<[f64; ATOM_FEATURES]>,
    pub edges: Vec<(usize, usize, [f64; BOND_EDGE_FEATURES])>,
}

impl MolInputs {
    pub fn new(g: &ExtendedGraph) -> Self {
        let x = g
            .atoms
            .iter()
            .map(|a| {
                let mut f = [0.0; ATOM_FEATURES];
                f[a.element.index()] = 1.0;
                f[Element::COUNT] = f64::from(g.charge);
                f
            })
            .collect();
        let mut edges = Vec::new();
        for e in &g.atom_edges {
            let mut f = [0.0; BOND_EDGE_FEATURES];
            f[usize::from(e.order - 1)] = 1.0;
            f[3] = e.length;
            edges.push((e.i, e.j, f));
            edges.push((e.j, e.i, f));
        }
        MolInputs { x, edges }
    }
}

/// Several graphs laid out as one disconnected graph. Nodes of graph `g`
/// occupy a contiguous block ordered atoms, lone pairs, bonds; orbital rows
/// (lone pairs and bonds) are contiguous per graph as well.
pub struct Batch {
    pub graphs: usize,
    pub keys: Vec<u64>,
    pub x: Tensor,
    pub edge_src: Vec<usize>,
    pub edge_dst: Vec<usize>,
    pub edge_x: Tensor,
    pub n_nodes: usize,
    /// Flat node index of each atom / orbital.
    pub atom_nodes: Vec<usize>,
    pub orbital_nodes: Vec<usize>,
    /// Orbital-row ranges per graph.
    pub orbital_ranges: Vec<(usize, usize)>,
    pub atom_ranges: Vec<(usize, usize)>,
    /// Orbital rows that are lone pairs / bonds.
    pub lp_rows: Vec<usize>,
    pub bond_rows: Vec<usize>,
    /// (batch atom index, orbital row) per atom-bond side.
    pub atom_bond: Vec<(usize, usize)>,
    /// Lone-pair groups (indices into `lp_rows`) sharing an owner, at
    /// least two members each.
    pub lp_groups: Vec<Vec<usize>>,
    /// Graph of each lone pair.
    pub lp_graph: Vec<usize>,
    /// (donor row, acceptor row) for every candidate pair.
    pub cand_donor: Vec<usize>,
    pub cand_acceptor: Vec<usize>,
    pub cand_x: Tensor,
    /// Candidate offset of each graph.
    pub cand_ranges: Vec<(usize, usize)>,
    pub cand_lookup: HashMap<(usize, usize), usize>,
}

impl Batch {
    pub fn new(items: &[&GraphInputs]) -> Self {
        let mut x = Vec::new();
        let (mut edge_src, mut edge_dst, mut edge_x) = (Vec::new(), Vec::new(), Vec::new());
        let (mut atom_nodes, mut orbital_nodes) = (Vec::new(), Vec::new());
        let (mut orbital_ranges, mut atom_ranges) = (Vec::new(), Vec::new());
        let (mut lp_rows, mut bond_rows, mut atom_bond, mut lp_groups) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut cand_donor, mut cand_acceptor, mut cand_x, mut cand_ranges) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut lp_graph = Vec::new();
        let mut node_off = 0;
        for (gi, g) in items.iter().enumerate() {
            let atom_off = atom_nodes.len();
            let orb_off = orbital_nodes.len();
            let lp_off = lp_rows.len();
            lp_graph.extend(std::iter::repeat_n(gi, g.n_lp));
            for f in &g.x {
                x.extend_from_slice(f);
            }
            for (s, d, f) in &g.edges {
                edge_src.push(node_off + s);
                edge_dst.push(node_off + d);
                edge_x.extend_from_slice(f);
            }
            atom_nodes.extend((0..g.n_atoms).map(|a| node_off + a));
            orbital_nodes.extend((0..g.n_orbitals()).map(|k| node_off + g.n_atoms + k));
            atom_ranges.push((atom_off, g.n_atoms));
            orbital_ranges.push((orb_off, g.n_orbitals()));
            lp_rows.extend((0..g.n_lp).map(|k| orb_off + k));
            bond_rows.extend((0..g.n_bond).map(|k| orb_off + g.n_lp + k));
            atom_bond.extend(g.atom_bond.iter().map(|&(a, b)| (atom_off + a, orb_off + g.n_lp + b)));
            let mut k = 0;
            while k < g.n_lp {
                let mut end = k + 1;
                while end < g.n_lp && g.lp_owner[end] == g.lp_owner[k] {
                    end += 1;
                }
                if end - k >= 2 {
                    lp_groups.push((k..end).map(|i| lp_off + i).collect());
                }
                k = end;
            }
            cand_ranges.push((cand_donor.len(), g.candidates.len()));
            for c in &g.candidates {
                cand_donor.push(orb_off + c.donor);
                cand_acceptor.push(orb_off + c.acceptor);
                cand_x.extend_from_slice(&c.features);
            }
            node_off += g.n_nodes();
        }
        let cand_lookup = cand_donor.iter().zip(&cand_acceptor).enumerate().map(|(k, (&d, &a))| ((d, a), k)).collect();
        let n_edges = edge_src.len();
        let n_cand = cand_donor.len();
        Batch {
            graphs: items.len(),
            keys: items.iter().map(|g| g.key).collect(),
            x: Tensor::new(node_off, NODE_FEATURES, x).unwrap(),
            edge_src,
            edge_dst,
            edge_x: Tensor::new(n_edges, EDGE_FEATURES, edge_x).unwrap(),
            n_nodes: node_off,
            atom_nodes,
            orbital_nodes,
            orbital_ranges,
            atom_ranges,
            lp_rows,
            bond_rows,
            atom_bond,
            lp_groups,
            lp_graph,
            cand_donor,
            cand_acceptor,
            cand_x: Tensor::new(n_cand, PAIR_FEATURES, cand_x).unwrap(),
            cand_ranges,
            cand_lookup,
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.atom_nodes.len()
    }

    pub fn n_orbitals(&self) -> usize {
        self.orbital_nodes.len()
    }

    pub fn n_candidates(&self) -> usize {
        self.cand_donor.len()
    }
}
