//! Heterogeneous molecular graphs.
//!
//! A molecular graph (atoms and covalent edges) is extended with lone-pair
//! nodes and one node per σ or π bond-orbital pair. Attaching label targets
//! and donor→acceptor interaction edges yields a [`SimgGraph`].

mod build;
mod distance;

pub use build::{build_extended_graph, build_molecular_graph, build_simg, lp_counts_from_record, lp_type, simg_from_record, LpCount, MAX_LONE_PAIRS};
pub use distance::{graph_distance, AtomDistances, DISCONNECTED};

use crate::chem_io::{AtomContribution, BondOrbitalRecord, Hybrid, InteractionRecord, NboRecord, NpaEntry, OrbitalKind, OrbitalRef, OrbitalSide};
use crate::element::Element;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum NodeKind {
    Atom,
    LonePair,
    BondPair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeRef {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeRef {
    pub fn atom(index: usize) -> Self {
        NodeRef {
            kind: NodeKind::Atom,
            index,
        }
    }

    pub fn lone_pair(index: usize) -> Self {
        NodeRef {
            kind: NodeKind::LonePair,
            index,
        }
    }

    pub fn bond(index: usize) -> Self {
        NodeRef {
            kind: NodeKind::BondPair,
            index,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphAtom {
    pub element: Element,
    pub position: [f64; 3],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LpNode {
    pub owner: usize,
    /// 1 when the lone pair is p-rich (likely conjugated), else 0.
    pub lp_type: u8,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BondNode {
    /// Always `atom_i < atom_j`.
    pub atom_i: usize,
    pub atom_j: usize,
    pub kind: OrbitalKind,
    pub pi_rank: u8,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtomEdge {
    pub i: usize,
    pub j: usize,
    pub order: u8,
    /// Interatomic distance in Å.
    pub length: f64,
}

/// Molecular graph extended with lone-pair and bond-orbital nodes. Holds
/// topology and model inputs only.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtendedGraph {
    pub atoms: Vec<GraphAtom>,
    pub charge: i32,
    pub atom_edges: Vec<AtomEdge>,
    pub lp_nodes: Vec<LpNode>,
    pub bond_nodes: Vec<BondNode>,
    /// (atom, bond node); two entries per bond node, `atom_i` first.
    pub atom_bond_edges: Vec<(usize, usize)>,
    /// (atom, lone-pair node).
    pub atom_lp_edges: Vec<(usize, usize)>,
}

impl ExtendedGraph {
    pub fn node_count(&self) -> usize {
        self.atoms.len() + self.lp_nodes.len() + self.bond_nodes.len()
    }

    /// Position of a node in the flat ordering atoms, lone pairs, bonds.
    pub fn flat_index(&self, r: NodeRef) -> usize {
        match r.kind {
            NodeKind::Atom => r.index,
            NodeKind::LonePair => self.atoms.len() + r.index,
            NodeKind::BondPair => self.atoms.len() + self.lp_nodes.len() + r.index,
        }
    }

    pub fn contains(&self, r: NodeRef) -> bool {
        r.index
            < match r.kind {
                NodeKind::Atom => self.atoms.len(),
                NodeKind::LonePair => self.lp_nodes.len(),
                NodeKind::BondPair => self.bond_nodes.len(),
            }
    }

    /// Spatial anchor: atoms and lone pairs sit on their atom, bond nodes at
    /// the bond midpoint.
    pub fn anchor(&self, r: NodeRef) -> [f64; 3] {
        match r.kind {
            NodeKind::Atom => self.atoms[r.index].position,
            NodeKind::LonePair => self.atoms[self.lp_nodes[r.index].owner].position,
            NodeKind::BondPair => {
                let b = self.bond_nodes[r.index];
                let (p, q) = (self.atoms[b.atom_i].position, self.atoms[b.atom_j].position);
                [(p[0] + q[0]) / 2.0, (p[1] + q[1]) / 2.0, (p[2] + q[2]) / 2.0]
            }
        }
    }

    /// Atoms a node projects onto for graph distances.
    pub fn anchor_atoms(&self, r: NodeRef) -> ([usize; 2], usize) {
        match r.kind {
            NodeKind::Atom => ([r.index, r.index], 1),
            NodeKind::LonePair => {
                let o = self.lp_nodes[r.index].owner;
                ([o, o], 1)
            }
            NodeKind::BondPair => {
                let b = self.bond_nodes[r.index];
                ([b.atom_i, b.atom_j], 2)
            }
        }
    }

    /// Per-atom (total, p-rich) lone-pair counts implied by the lp nodes.
    pub fn lp_counts(&self) -> Vec<LpCount> {
        let mut counts = vec![LpCount::default(); self.atoms.len()];
        for lp in &self.lp_nodes {
            counts[lp.owner].total += 1;
            counts[lp.owner].type1 += lp.lp_type;
        }
        counts
    }

    /// Lone-pair node indices grouped by owning atom (only non-empty groups,
    /// in atom order).
    pub fn lp_groups(&self) -> Vec<(usize, Vec<usize>)> {
        let mut groups: Vec<(usize, Vec<usize>)> = Vec::new();
        for (k, lp) in self.lp_nodes.iter().enumerate() {
            match groups.last_mut() {
                Some((owner, members)) if *owner == lp.owner => members.push(k),
                _ => groups.push((lp.owner, vec![k])),
            }
        }
        groups
    }

    /// Structural invariants; returns the first violation.
    pub fn validate(&self) -> Result<(), GraphError> {
        let n = self.atoms.len();
        let mut bonded = std::collections::HashMap::new();
        for e in &self.atom_edges {
            if e.i >= e.j || e.j >= n {
                return Err(GraphError::Invalid(format!("atom edge ({}, {}) malformed", e.i, e.j)));
            }
            let d = crate::chem_io::distance(&self.atoms[e.i].position, &self.atoms[e.j].position);
            if (d - e.length).abs() > 1e-9 {
                return Err(GraphError::Invalid(format!("edge ({}, {}) length {} != {}", e.i, e.j, e.length, d)));
            }
            bonded.insert((e.i, e.j), e.order);
        }
        for lp in &self.lp_nodes {
            if lp.owner >= n || lp.lp_type > 1 {
                return Err(GraphError::Invalid("lone-pair node malformed".into()));
            }
        }
        for w in self.lp_nodes.windows(2) {
            if (w[0].owner, w[0].lp_type) > (w[1].owner, w[1].lp_type) {
                return Err(GraphError::Invalid("lone-pair nodes not in canonical order".into()));
            }
        }
        for (k, b) in self.bond_nodes.iter().enumerate() {
            let Some(&order) = bonded.get(&(b.atom_i, b.atom_j)) else {
                return Err(GraphError::Invalid(format!("bond node {k} joins non-bonded atoms")));
            };
            if b.kind == OrbitalKind::Pi && b.pi_rank + 1 >= order {
                return Err(GraphError::Invalid(format!("bond node {k} has π rank beyond bond order")));
            }
        }
        let sigma: usize = self.bond_nodes.iter().filter(|b| b.kind == OrbitalKind::Sigma).count();
        let total: usize = self.atom_edges.iter().map(|e| e.order as usize).sum();
        if sigma != self.atom_edges.len() || self.bond_nodes.len() != total {
            return Err(GraphError::Invalid("bond-node counts do not match bond orders".into()));
        }
        let key = |b: &BondNode| (b.atom_i, b.atom_j, b.kind, b.pi_rank);
        if self.bond_nodes.windows(2).any(|w| key(&w[0]) >= key(&w[1])) {
            return Err(GraphError::Invalid("bond nodes not in canonical order".into()));
        }
        Ok(())
    }
}

/// Target values for one lone-pair node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LpTarget {
    pub character: Hybrid,
    pub occupancy: f64,
}

/// Targets for one bond-orbital pair node, oriented `atom_i`, `atom_j`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BondTargets {
    pub bonding: OrbitalSide,
    pub antibonding: OrbitalSide,
}

impl BondTargets {
    pub fn to_array(&self, kind: OrbitalKind) -> [f64; BondOrbitalRecord::TARGETS] {
        self.as_record(0, 1, kind).to_array()
    }

    fn as_record(&self, atom_i: usize, atom_j: usize, kind: OrbitalKind) -> BondOrbitalRecord {
        BondOrbitalRecord {
            atom_i,
            atom_j,
            kind,
            bonding: self.bonding,
            antibonding: self.antibonding,
        }
    }
}

/// Directed donor→acceptor interaction. A bond-pair donor donates from its
/// bonding orbital; the acceptor always receives into its antibonding orbital.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InteractionEdge {
    pub donor: NodeRef,
    pub acceptor: NodeRef,
    pub e2: f64,
    pub energy_gap: f64,
    pub fock_element: f64,
}

impl InteractionEdge {
    pub fn targets(&self) -> [f64; 3] {
        [self.e2, self.energy_gap, self.fock_element]
    }
}

/// Extended graph with every label target attached.
#[derive(Clone, Debug, PartialEq)]
pub struct SimgGraph {
    pub graph: ExtendedGraph,
    pub atom_targets: Vec<NpaEntry>,
    pub lp_targets: Vec<LpTarget>,
    pub bond_targets: Vec<BondTargets>,
    /// Sorted by (donor, acceptor).
    pub interactions: Vec<InteractionEdge>,
}

impl SimgGraph {
    pub const ATOM_FEATURES: usize = 4;
    pub const LP_FEATURES: usize = 5;
    pub const BOND_FEATURES: usize = 26;
    pub const INTERACTION_FEATURES: usize = 3;

    /// Per atom-bond edge: (bonding, antibonding) contribution of that atom.
    pub fn atom_bond_edge_targets(&self) -> Vec<[AtomContribution; 2]> {
        self.graph
            .atom_bond_edges
            .iter()
            .map(|&(atom, k)| {
                let side = usize::from(self.graph.bond_nodes[k].atom_j == atom);
                let t = &self.bond_targets[k];
                [t.bonding.atoms[side], t.antibonding.atoms[side]]
            })
            .collect()
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        self.graph.validate()?;
        let g = &self.graph;
        if self.atom_targets.len() != g.atoms.len()
            || self.lp_targets.len() != g.lp_nodes.len()
            || self.bond_targets.len() != g.bond_nodes.len()
        {
            return Err(GraphError::Mismatch("target arrays do not match node tables".into()));
        }
        for x in &self.interactions {
            if !g.contains(x.donor) || !g.contains(x.acceptor) {
                return Err(GraphError::InvalidNode(x.donor));
            }
            if x.donor.kind == NodeKind::Atom || x.acceptor.kind != NodeKind::BondPair || x.donor == x.acceptor {
                return Err(GraphError::Invalid("interaction endpoints have invalid kinds".into()));
            }
        }
        Ok(())
    }

    /// The label record this graph encodes, in canonical node order.
    pub fn to_record(&self) -> NboRecord {
        let g = &self.graph;
        let lone_pairs = g
            .lp_nodes
            .iter()
            .zip(&self.lp_targets)
            .map(|(n, t)| crate::chem_io::LonePairRecord {
                owner: n.owner,
                character: t.character,
                occupancy: t.occupancy,
            })
            .collect();
        let bond_orbitals = g
            .bond_nodes
            .iter()
            .zip(&self.bond_targets)
            .map(|(n, t)| t.as_record(n.atom_i, n.atom_j, n.kind))
            .collect();
        let to_ref = |r: NodeRef, donor: bool| match (r.kind, donor) {
            (NodeKind::LonePair, _) => OrbitalRef::LonePair(r.index),
            (_, true) => OrbitalRef::Bonding(r.index),
            (_, false) => OrbitalRef::Antibonding(r.index),
        };
        let interactions = self
            .interactions
            .iter()
            .map(|x| InteractionRecord {
                donor: to_ref(x.donor, true),
                acceptor: to_ref(x.acceptor, false),
                e2: x.e2,
                energy_gap: x.energy_gap,
                fock_element: x.fock_element,
            })
            .collect();
        NboRecord {
            atom_npa: self.atom_targets.clone(),
            lone_pairs,
            bond_orbitals,
            interactions,
        }
    }
}

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("atom {atom}: lone-pair counts (total {total}, p-rich {type1}) outside 0 <= p-rich <= total <= {max}", max = MAX_LONE_PAIRS)]
    CountRange { atom: usize, total: u8, type1: u8 },
    #[error("label record does not match the graph: {0}")]
    Mismatch(String),
    #[error("unresolvable reference: {0}")]
    Reference(String),
    #[error("node {0:?} is not part of the graph")]
    InvalidNode(NodeRef),
    #[error("invalid graph: {0}")]
    Invalid(String),
}
