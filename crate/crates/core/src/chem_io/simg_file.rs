//! SIMG files: a molecule, its lone-pair node table and the label record in
//! canonical node order, followed by a SHA-256 checksum of everything before
//! the checksum line.
//!
//! The document is a superset of both MOLJ and NBOJ, so either parser can
//! read it.

use sha2::{Digest, Sha256};

use super::error::{decode_utf8, LineIndex, ParseError, ParseErrorKind, RangeCheck, Validation};
use super::json::{self, quote, write_array, Reader};
use super::molecule::{Atom, Bond, Molecule};
use super::molj::{read_molecule, write_molecule_fields};
use super::nbo::OrbitalRef;
use super::nboj::{read_record, write_record_fields};
use crate::graph::{
    build_extended_graph, build_molecular_graph, BondTargets, InteractionEdge, LpCount, LpNode, LpTarget, NodeRef,
    SimgGraph,
};

pub const SIMG_FORMAT: &str = "SIMG1";

pub fn serialize_simg(g: &SimgGraph) -> String {
    let eg = &g.graph;
    let m = Molecule {
        atoms: eg
            .atoms
            .iter()
            .map(|a| Atom {
                element: a.element,
                position: a.position,
            })
            .collect(),
        bonds: eg
            .atom_edges
            .iter()
            .map(|e| Bond {
                i: e.i,
                j: e.j,
                order: e.order,
            })
            .collect(),
        charge: eg.charge,
    };
    let mut out = String::from("{\n");
    out.push_str(&format!("  \"format\": {},\n", quote(SIMG_FORMAT)));
    write_molecule_fields(&mut out, &m, false);
    out.push_str(&format!("  \"charge\": {},\n", eg.charge));
    let lps: Vec<String> = eg
        .lp_nodes
        .iter()
        .map(|n| format!("{{\"atom\": {}, \"type\": {}}}", n.owner, n.lp_type))
        .collect();
    write_array(&mut out, "lp_nodes", &lps, false);
    write_record_fields(&mut out, &g.to_record(), false);
    let digest = hex::encode(Sha256::digest(out.as_bytes()));
    out.push_str(&format!("  \"checksum\": {}\n}}\n", quote(&digest)));
    out
}

pub fn parse_simg(text: &str) -> Result<SimgGraph, ParseError> {
    let index = LineIndex::new(text);
    let root = json::parse(text, &index)?;
    let r = Reader { index: &index };

    if let Some(n) = r.optional(&root, "checksum")? {
        let expected = r.string(n, "checksum")?;
        let line_start = text[..n.offset].rfind('\n').map_or(0, |p| p + 1);
        let actual = hex::encode(Sha256::digest(&text.as_bytes()[..line_start]));
        if !actual.eq_ignore_ascii_case(expected) {
            return Err(index.error(n.offset, ParseErrorKind::Checksum, format!("checksum mismatch: content hashes to {actual}")));
        }
    }
    if let Some(n) = r.optional(&root, "format")? {
        let f = r.string(n, "format")?;
        if f != SIMG_FORMAT {
            return Err(index.error(n.offset, ParseErrorKind::Syntax, format!("unsupported format {f:?}")));
        }
    }

    let molecule = read_molecule(&root, &r)?;
    let n_atoms = molecule.atoms.len();
    let mut lp_nodes = Vec::new();
    let mut counts = vec![LpCount::default(); n_atoms];
    for n in r.optional_array(&root, "lp_nodes")? {
        r.object(n, "lp node")?;
        let (owner, off) = r.index_field(n, "atom")?;
        if owner >= n_atoms {
            return Err(index.error(off, ParseErrorKind::Reference, format!("lp node on missing atom {owner}")));
        }
        let t = r.field(n, "type")?;
        let lp_type = match r.integer(t, "type")? {
            0 => 0,
            1 => 1,
            v => return Err(index.error(t.offset, ParseErrorKind::Range, format!("lp type {v} is not 0 or 1"))),
        };
        counts[owner].total = counts[owner].total.saturating_add(1);
        counts[owner].type1 += lp_type;
        lp_nodes.push((LpNode { owner, lp_type }, n.offset));
    }
    let eg = build_extended_graph(&build_molecular_graph(&molecule), &counts)
        .map_err(|e| index.error(root.offset, ParseErrorKind::Range, e.to_string()))?;
    for (k, (node, off)) in lp_nodes.iter().enumerate() {
        if eg.lp_nodes[k] != *node {
            return Err(index.error(*off, ParseErrorKind::Syntax, "lp nodes are not in canonical order"));
        }
    }

    let mut check = RangeCheck::new(&index, Validation::Strict);
    let rec = read_record(&root, &r, &mut check)?;
    let whole = |what: &str, have: usize, want: usize| -> Result<(), ParseError> {
        if have == want {
            Ok(())
        } else {
            Err(index.error(root.offset, ParseErrorKind::Reference, format!("{have} {what} for {want} nodes")))
        }
    };
    whole("npa entries", rec.atom_npa.len(), n_atoms)?;
    whole("lone pairs", rec.lone_pairs.len(), eg.lp_nodes.len())?;
    whole("bond orbitals", rec.bond_orbitals.len(), eg.bond_nodes.len())?;
    for (k, lp) in rec.lone_pairs.iter().enumerate() {
        if lp.owner != eg.lp_nodes[k].owner {
            return Err(index.error(root.offset, ParseErrorKind::Reference, format!("lone pair {k} is not on its node's atom")));
        }
    }
    for (k, b) in rec.bond_orbitals.iter().enumerate() {
        let n = eg.bond_nodes[k];
        if (b.atom_i, b.atom_j, b.kind) != (n.atom_i, n.atom_j, n.kind) {
            return Err(index.error(root.offset, ParseErrorKind::Reference, format!("bond orbital {k} does not match bond node {k}")));
        }
    }
    let to_node = |o: OrbitalRef| match o {
        OrbitalRef::LonePair(i) => NodeRef::lone_pair(i),
        OrbitalRef::Bonding(i) | OrbitalRef::Antibonding(i) => NodeRef::bond(i),
    };
    let mut interactions: Vec<InteractionEdge> = rec
        .interactions
        .iter()
        .map(|x| InteractionEdge {
            donor: to_node(x.donor),
            acceptor: to_node(x.acceptor),
            e2: x.e2,
            energy_gap: x.energy_gap,
            fock_element: x.fock_element,
        })
        .collect();
    if interactions.iter().any(|x| x.donor == x.acceptor) {
        return Err(index.error(root.offset, ParseErrorKind::Reference, "interaction donates to itself"));
    }
    interactions.sort_by_key(|x| (x.donor, x.acceptor));

    Ok(SimgGraph {
        graph: eg,
        atom_targets: rec.atom_npa,
        lp_targets: rec
            .lone_pairs
            .iter()
            .map(|lp| LpTarget {
                character: lp.character,
                occupancy: lp.occupancy,
            })
            .collect(),
        bond_targets: rec
            .bond_orbitals
            .iter()
            .map(|b| BondTargets {
                bonding: b.bonding,
                antibonding: b.antibonding,
            })
            .collect(),
        interactions,
    })
}

pub fn parse_simg_bytes(bytes: &[u8]) -> Result<SimgGraph, ParseError> {
    parse_simg(decode_utf8(bytes)?)
}
