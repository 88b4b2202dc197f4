//! MOLJ: one molecule per file.
//!
//! ```text
//! {
//!   "atoms": [
//!     {"el": "O", "xyz": [0, 0, 0.117]},
//!     ...
//!   ],
//!   "bonds": [
//!     {"i": 0, "j": 1, "order": 1}
//!   ],
//!   "charge": 0
//! }
//! ```
//!
//! Unknown top-level keys are ignored so that richer documents (SIMG files)
//! can be read as plain molecules.

use super::error::{decode_utf8, LineIndex, ParseError, ParseErrorKind};
use super::json::{self, format_f64, quote, write_array, Node, Reader};
use super::molecule::{Atom, Bond, Molecule};
use crate::element::Element;

pub fn parse_molecule(text: &str) -> Result<Molecule, ParseError> {
    let index = LineIndex::new(text);
    let root = json::parse(text, &index)?;
    read_molecule(&root, &Reader { index: &index })
}

pub fn parse_molecule_bytes(bytes: &[u8]) -> Result<Molecule, ParseError> {
    parse_molecule(decode_utf8(bytes)?)
}

pub(crate) fn read_molecule(root: &Node, r: &Reader<'_, '_>) -> Result<Molecule, ParseError> {
    r.object(root, "document")?;
    let atom_nodes = r.array(r.field(root, "atoms")?, "atoms")?;
    let mut atoms = Vec::with_capacity(atom_nodes.len());
    for a in atom_nodes {
        r.object(a, "atom")?;
        let el_node = r.field(a, "el")?;
        let symbol = r.string(el_node, "el")?;
        let element: Element = symbol
            .parse()
            .map_err(|e: crate::element::UnknownElement| r.index.error(el_node.offset, ParseErrorKind::Range, e.to_string()))?;
        let xyz_node = r.field(a, "xyz")?;
        let xyz = r.array(xyz_node, "xyz")?;
        if xyz.len() != 3 {
            return Err(r.syntax(xyz_node, "xyz must have three components"));
        }
        let mut position = [0.0; 3];
        for (p, n) in position.iter_mut().zip(xyz) {
            *p = r.number(n, "coordinate")?;
        }
        atoms.push(Atom { element, position });
    }

    let mut bonds = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for b in r.optional_array(root, "bonds")? {
        r.object(b, "bond")?;
        let (i, i_off) = r.index_field(b, "i")?;
        let (j, j_off) = r.index_field(b, "j")?;
        for (v, off) in [(i, i_off), (j, j_off)] {
            if v >= atoms.len() {
                return Err(r.index.error(
                    off,
                    ParseErrorKind::Reference,
                    format!("bond references atom {v} but only {} atoms exist", atoms.len()),
                ));
            }
        }
        if i == j {
            return Err(r.index.error(j_off, ParseErrorKind::Reference, "bond connects an atom to itself"));
        }
        let order_node = r.field(b, "order")?;
        let order = r.integer(order_node, "order")?;
        if !(1..=3).contains(&order) {
            return Err(r.index.error(order_node.offset, ParseErrorKind::Range, format!("bond order {order} outside 1..3")));
        }
        if !seen.insert((i.min(j), i.max(j))) {
            return Err(r.index.error(b.offset, ParseErrorKind::Reference, "duplicate bond"));
        }
        bonds.push(Bond { i, j, order: order as u8 });
    }

    let charge = match r.optional(root, "charge")? {
        None => 0,
        Some(n) => {
            let c = r.integer(n, "charge")?;
            i32::try_from(c).map_err(|_| r.index.error(n.offset, ParseErrorKind::Range, "charge out of range"))?
        }
    };
    Molecule::new(atoms, bonds, charge).map_err(|e| r.index.error(root.offset, ParseErrorKind::Range, e.to_string()))
}

pub fn serialize_molecule(m: &Molecule) -> String {
    let mut out = String::from("{\n");
    write_molecule_fields(&mut out, m, false);
    out.push_str(&format!("  \"charge\": {}\n}}\n", m.charge));
    out
}

pub(crate) fn write_molecule_fields(out: &mut String, m: &Molecule, last: bool) {
    let atoms: Vec<String> = m
        .atoms
        .iter()
        .map(|a| {
            format!(
                "{{\"el\": {}, \"xyz\": [{}, {}, {}]}}",
                quote(a.element.symbol()),
                format_f64(a.position[0]),
                format_f64(a.position[1]),
                format_f64(a.position[2])
            )
        })
        .collect();
    write_array(out, "atoms", &atoms, false);
    let bonds: Vec<String> = m
        .bonds
        .iter()
        .map(|b| format!("{{\"i\": {}, \"j\": {}, \"order\": {}}}", b.i, b.j, b.order))
        .collect();
    write_array(out, "bonds", &bonds, last);
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const WATER: &str = r#"{
  "atoms": [
    {"el": "O", "xyz": [0, 0, 0.1173]},
    {"el": "H", "xyz": [0, 0.7572, -0.4692]},
    {"el": "H", "xyz": [0, -0.7572, -0.4692]}
  ],
  "bonds": [
    {"i": 0, "j": 1, "order": 1},
    {"i": 0, "j": 2, "order": 1}
  ],
  "charge": 0
}
"#;

    #[test]
    fn parses_water() {
        let m = parse_molecule(WATER).unwrap();
        assert_eq!(m.atoms.len(), 3);
        assert_eq!(m.bonds.len(), 2);
        assert_eq!(m.atoms[0].element, Element::O);
        assert_eq!(m.charge, 0);
    }

    #[test]
    fn canonical_text_is_a_fixed_point() {
        let m = parse_molecule(WATER).unwrap();
        assert_eq!(serialize_molecule(&m), WATER);
    }

    #[test]
    fn dangling_bond_is_a_reference_error() {
        let text = WATER.replace("\"j\": 2", "\"j\": 99");
        let e = parse_molecule(&text).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Reference);
        assert_eq!(e.line, 9);
    }

    #[test]
    fn bad_order_and_element() {
        let e = parse_molecule(&WATER.replacen("\"order\": 1", "\"order\": 4", 1)).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Range);
        let e = parse_molecule(&WATER.replacen("\"O\"", "\"Xe\"", 1)).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Range);
        assert_eq!((e.line, e.column), (3, 12));
        let e = parse_molecule("{\"atoms\": [}").unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Syntax);
    }
}
