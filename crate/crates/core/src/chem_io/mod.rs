//! Molecule and label-record file formats.
//!
//! * MOLJ: one molecule per JSON document.
//! * NBOJ: one label record per JSON document.
//! * NBOTXT: the same record as a line-oriented text block.
//! * SIMG: a molecule with its full graph labels and a checksum.
//!
//! All serializers are canonical: fixed key order, fixed layout and floats
//! rounded to nine significant digits.

mod error;
mod json;
mod molecule;
mod molj;
mod nbo;
mod nboj;
mod nbotxt;
mod simg_file;

use sha2::{Digest, Sha256};

pub use error::{ParseError, ParseErrorKind, ParseWarning, Validation};
pub use json::{canonical_f64, format_f64};
pub use molecule::{distance, Atom, Bond, Molecule, MoleculeError};
pub use molj::{parse_molecule, parse_molecule_bytes, serialize_molecule};
pub use nbo::{
    record_violations, AtomContribution, BondOrbitalRecord, Hybrid, InteractionRecord, LonePairRecord, NboRecord,
    NpaEntry, OrbitalKind, OrbitalRef, OrbitalSide,
};
pub use nboj::{parse_nbo_json, parse_nbo_record, parse_nbo_record_bytes, serialize_nbo_json, ParsedRecord};
pub use nbotxt::{parse_nbo_text, serialize_nbo_text};
pub use simg_file::{parse_simg, parse_simg_bytes, serialize_simg, SIMG_FORMAT};

/// Hex SHA-256 of the canonical MOLJ text; identifies a structure.
pub fn structure_hash(m: &Molecule) -> String {
    hex::encode(Sha256::digest(serialize_molecule(m).as_bytes()))
}
