use petgraph::algo::dijkstra;
use petgraph::graph::{NodeIndex, UnGraph};

use super::{ExtendedGraph, GraphError, NodeRef};

/// Distance between disconnected nodes.
pub const DISCONNECTED: u32 = u32::MAX;

/// All-pairs hop counts over the atom-atom skeleton.
#[derive(Clone, Debug)]
pub struct AtomDistances {
    n: usize,
    hops: Vec<u32>,
}

impl AtomDistances {
    pub fn new(g: &ExtendedGraph) -> Self {
        let n = g.atoms.len();
        let mut skeleton = UnGraph::<(), u32>::with_capacity(n, g.atom_edges.len());
        for _ in 0..n {
            skeleton.add_node(());
        }
        for e in &g.atom_edges {
            skeleton.add_edge(NodeIndex::new(e.i), NodeIndex::new(e.j), 1);
        }
        let mut hops = vec![DISCONNECTED; n * n];
        for src in 0..n {
            for (node, d) in dijkstra(&skeleton, NodeIndex::new(src), None, |e| *e.weight()) {
                hops[src * n + node.index()] = d;
            }
        }
        AtomDistances { n, hops }
    }

    pub fn atoms(&self, a: usize, b: usize) -> u32 {
        self.hops[a * self.n + b]
    }

    /// Hop count between two nodes. Lone pairs sit on their owner atom; a
    /// bond node takes whichever endpoint is nearer the other node.
    pub fn between(&self, g: &ExtendedGraph, a: NodeRef, b: NodeRef) -> Result<u32, GraphError> {
        for r in [a, b] {
            if !g.contains(r) {
                return Err(GraphError::InvalidNode(r));
            }
        }
        let (aa, na) = g.anchor_atoms(a);
        let (ba, nb) = g.anchor_atoms(b);
        let mut best = DISCONNECTED;
        for &x in &aa[..na] {
            for &y in &ba[..nb] {
                best = best.min(self.atoms(x, y));
            }
        }
        Ok(best)
    }
}

/// Hop count between two nodes of `g`; see [`AtomDistances::between`].
/// Build an [`AtomDistances`] once when querying many pairs.
pub fn graph_distance(g: &ExtendedGraph, a: NodeRef, b: NodeRef) -> Result<u32, GraphError> {
    AtomDistances::new(g).between(g, a, b)
}
