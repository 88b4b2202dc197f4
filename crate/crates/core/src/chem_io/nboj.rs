//! NBOJ: structured label records.
//!
//! Top-level keys `npa`, `lone_pairs`, `bond_orbitals` and `interactions`;
//! every section is optional and unknown keys are ignored. Atom indices are
//! 0-based integers; orbital references use the `LP<n>` / `BD<n>` / `BD*<n>`
//! labels (1-based) shared with NBOTXT.

use super::error::{decode_utf8, LineIndex, ParseError, ParseErrorKind, ParseWarning, RangeCheck, Validation};
use super::json::{self, format_f64, quote, write_array, Node, Reader};
use super::nbo::*;

/// A parsed label record together with any lenient-mode diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct ParsedRecord {
    pub record: NboRecord,
    pub warnings: Vec<ParseWarning>,
}

pub fn parse_nbo_json(text: &str, mode: Validation) -> Result<ParsedRecord, ParseError> {
    let index = LineIndex::new(text);
    let root = json::parse(text, &index)?;
    let r = Reader { index: &index };
    let mut check = RangeCheck::new(&index, mode);
    let record = read_record(&root, &r, &mut check)?;
    Ok(ParsedRecord {
        record,
        warnings: check.warnings,
    })
}

/// Parses either label format; a document starting with `{` is NBOJ,
/// anything else is read as NBOTXT.
pub fn parse_nbo_record(text: &str, mode: Validation) -> Result<ParsedRecord, ParseError> {
    if text.trim_start().starts_with('{') {
        parse_nbo_json(text, mode)
    } else {
        super::nbotxt::parse_nbo_text(text, mode)
    }
}

pub fn parse_nbo_record_bytes(bytes: &[u8], mode: Validation) -> Result<ParsedRecord, ParseError> {
    parse_nbo_record(decode_utf8(bytes)?, mode)
}

fn hybrid(r: &Reader<'_, '_>, obj: &Node, check: &mut RangeCheck<'_, '_>) -> Result<Hybrid, ParseError> {
    let mut v = [0.0; 4];
    for (slot, key) in v.iter_mut().zip(["s", "p", "d", "f"]) {
        let n = r.field(obj, key)?;
        *slot = r.number(n, key)?;
        check.check(valid_percent(*slot), n.offset, || format!("{key} character {} outside [0, 100]", *slot))?;
    }
    Ok(Hybrid::from_array(v))
}

fn side(r: &Reader<'_, '_>, node: &Node, check: &mut RangeCheck<'_, '_>) -> Result<OrbitalSide, ParseError> {
    r.object(node, "orbital side")?;
    let mut atoms = [AtomContribution::from_array([0.0; 6]); 2];
    for (slot, key) in atoms.iter_mut().zip(["a1", "a2"]) {
        let a = r.field(node, key)?;
        r.object(a, key)?;
        *slot = AtomContribution {
            character: hybrid(r, a, check)?,
            polarization: r.num_field(a, "pol")?,
            coefficient: r.num_field(a, "coef")?,
        };
    }
    let pol = atoms[0].polarization + atoms[1].polarization;
    check.check(in_percent_band(pol), node.offset, || format!("polarizations sum to {pol}, expected 99..101"))?;
    let occ_node = r.field(node, "occ")?;
    let occupancy = r.number(occ_node, "occ")?;
    check.check((0.0..=2.0).contains(&occupancy), occ_node.offset, || {
        format!("orbital occupancy {occupancy} outside [0, 2]")
    })?;
    Ok(OrbitalSide { atoms, occupancy })
}

fn orbital_ref(r: &Reader<'_, '_>, obj: &Node, key: &str) -> Result<(OrbitalRef, usize), ParseError> {
    let n = r.field(obj, key)?;
    let s = r.string(n, key)?;
    let parsed = OrbitalRef::from_label(s).ok_or_else(|| r.syntax(n, format!("invalid orbital reference `{s}`")))?;
    Ok((parsed, n.offset))
}

pub(crate) fn read_record(root: &Node, r: &Reader<'_, '_>, check: &mut RangeCheck<'_, '_>) -> Result<NboRecord, ParseError> {
    r.object(root, "document")?;
    let mut rec = NboRecord::default();
    for n in r.optional_array(root, "npa")? {
        r.object(n, "npa entry")?;
        rec.atom_npa.push(NpaEntry {
            charge: r.num_field(n, "q")?,
            core: r.num_field(n, "core")?,
            valence: r.num_field(n, "val")?,
            total: r.num_field(n, "tot")?,
        });
    }
    let atoms = rec.atom_npa.len();
    let atom_ref = |v: usize, off: usize| -> Result<usize, ParseError> {
        if atoms > 0 && v >= atoms {
            Err(r.index.error(off, ParseErrorKind::Reference, format!("atom {v} out of range ({atoms} atoms)")))
        } else {
            Ok(v)
        }
    };
    for n in r.optional_array(root, "lone_pairs")? {
        r.object(n, "lone pair")?;
        let (owner, off) = r.index_field(n, "atom")?;
        let owner = atom_ref(owner, off)?;
        let character = hybrid(r, n, check)?;
        check.check(in_percent_band(character.sum()), n.offset, || {
            format!("lone-pair characters sum to {}, expected 99..101", character.sum())
        })?;
        let occ_node = r.field(n, "occ")?;
        let occupancy = r.number(occ_node, "occ")?;
        check.check(occupancy > 0.0 && occupancy <= 2.0, occ_node.offset, || {
            format!("lone-pair occupancy {occupancy} outside (0, 2]")
        })?;
        rec.lone_pairs.push(LonePairRecord {
            owner,
            character,
            occupancy,
        });
    }
    for n in r.optional_array(root, "bond_orbitals")? {
        r.object(n, "bond orbital")?;
        let (i, i_off) = r.index_field(n, "i")?;
        let (j, j_off) = r.index_field(n, "j")?;
        let atom_i = atom_ref(i, i_off)?;
        let atom_j = atom_ref(j, j_off)?;
        if atom_i == atom_j {
            return Err(r.index.error(j_off, ParseErrorKind::Reference, "bond orbital joins an atom to itself"));
        }
        let kind_node = r.field(n, "kind")?;
        let kind_s = r.string(kind_node, "kind")?;
        let kind = OrbitalKind::from_name(kind_s)
            .ok_or_else(|| r.syntax(kind_node, format!("unknown bond kind `{kind_s}`")))?;
        rec.bond_orbitals.push(BondOrbitalRecord {
            atom_i,
            atom_j,
            kind,
            bonding: side(r, r.field(n, "bonding")?, check)?,
            antibonding: side(r, r.field(n, "antibonding")?, check)?,
        });
    }
    for n in r.optional_array(root, "interactions")? {
        r.object(n, "interaction")?;
        let (donor, d_off) = orbital_ref(r, n, "donor")?;
        let (acceptor, a_off) = orbital_ref(r, n, "acceptor")?;
        resolve_ref(&rec, donor, d_off, true, r.index)?;
        resolve_ref(&rec, acceptor, a_off, false, r.index)?;
        let e2_node = r.field(n, "e2")?;
        let e2 = r.number(e2_node, "e2")?;
        check.check(e2 >= 0.0, e2_node.offset, || format!("negative e2 {e2}"))?;
        rec.interactions.push(InteractionRecord {
            donor,
            acceptor,
            e2,
            energy_gap: r.num_field(n, "de")?,
            fock_element: r.num_field(n, "fij")?,
        });
    }
    Ok(rec)
}

/// Checks that an orbital reference exists and has an admissible role.
pub(crate) fn resolve_ref(
    rec: &NboRecord,
    o: OrbitalRef,
    offset: usize,
    donor: bool,
    index: &LineIndex<'_>,
) -> Result<(), ParseError> {
    let exists = match o {
        OrbitalRef::LonePair(i) => i < rec.lone_pairs.len(),
        OrbitalRef::Bonding(i) | OrbitalRef::Antibonding(i) => i < rec.bond_orbitals.len(),
    };
    if !exists {
        return Err(index.error(offset, ParseErrorKind::Reference, format!("unresolved orbital {}", o.label())));
    }
    if donor && !o.is_donor_kind() {
        return Err(index.error(offset, ParseErrorKind::Reference, format!("{} cannot donate", o.label())));
    }
    if !donor && !o.is_acceptor_kind() {
        return Err(index.error(offset, ParseErrorKind::Reference, format!("{} cannot accept", o.label())));
    }
    Ok(())
}

fn hybrid_fields(h: &Hybrid) -> String {
    format!(
        "\"s\": {}, \"p\": {}, \"d\": {}, \"f\": {}",
        format_f64(h.s),
        format_f64(h.p),
        format_f64(h.d),
        format_f64(h.f)
    )
}

fn side_json(s: &OrbitalSide) -> String {
    let atom = |a: &AtomContribution| {
        format!(
            "{{{}, \"pol\": {}, \"coef\": {}}}",
            hybrid_fields(&a.character),
            format_f64(a.polarization),
            format_f64(a.coefficient)
        )
    };
    format!(
        "{{\"occ\": {}, \"a1\": {}, \"a2\": {}}}",
        format_f64(s.occupancy),
        atom(&s.atoms[0]),
        atom(&s.atoms[1])
    )
}

pub(crate) fn write_record_fields(out: &mut String, rec: &NboRecord, last: bool) {
    let npa: Vec<String> = rec
        .atom_npa
        .iter()
        .map(|n| {
            format!(
                "{{\"q\": {}, \"core\": {}, \"val\": {}, \"tot\": {}}}",
                format_f64(n.charge),
                format_f64(n.core),
                format_f64(n.valence),
                format_f64(n.total)
            )
        })
        .collect();
    write_array(out, "npa", &npa, false);
    let lps: Vec<String> = rec
        .lone_pairs
        .iter()
        .map(|lp| {
            format!(
                "{{\"atom\": {}, {}, \"occ\": {}}}",
                lp.owner,
                hybrid_fields(&lp.character),
                format_f64(lp.occupancy)
            )
        })
        .collect();
    write_array(out, "lone_pairs", &lps, false);
    let bonds: Vec<String> = rec
        .bond_orbitals
        .iter()
        .map(|b| {
            format!(
                "{{\"i\": {}, \"j\": {}, \"kind\": {}, \"bonding\": {}, \"antibonding\": {}}}",
                b.atom_i,
                b.atom_j,
                quote(b.kind.name()),
                side_json(&b.bonding),
                side_json(&b.antibonding)
            )
        })
        .collect();
    write_array(out, "bond_orbitals", &bonds, false);
    let ints: Vec<String> = rec
        .interactions
        .iter()
        .map(|x| {
            format!(
                "{{\"donor\": {}, \"acceptor\": {}, \"e2\": {}, \"de\": {}, \"fij\": {}}}",
                quote(&x.donor.label()),
                quote(&x.acceptor.label()),
                format_f64(x.e2),
                format_f64(x.energy_gap),
                format_f64(x.fock_element)
            )
        })
        .collect();
    write_array(out, "interactions", &ints, last);
}

pub fn serialize_nbo_json(rec: &NboRecord) -> String {
    let mut out = String::from("{\n");
    write_record_fields(&mut out, rec, true);
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem_io::canonical_f64;

    fn contribution(s: f64, pol: f64) -> AtomContribution {
        AtomContribution {
            character: Hybrid {
                s,
                p: canonical_f64(100.0 - s),
                d: 0.0,
                f: 0.0,
            },
            polarization: pol,
            coefficient: canonical_f64((pol / 100.0).sqrt()),
        }
    }

    pub(crate) fn sample() -> NboRecord {
        let bonding = OrbitalSide {
            atoms: [contribution(20.0, 70.0), contribution(99.9, 30.0)],
            occupancy: 1.99,
        };
        let anti = OrbitalSide {
            atoms: [contribution(20.0, 30.0), contribution(99.9, 70.0)],
            occupancy: 0.01,
        };
        NboRecord {
            atom_npa: vec![
                NpaEntry {
                    charge: -0.9,
                    core: 2.0,
                    valence: 6.9,
                    total: 8.9,
                },
                NpaEntry {
                    charge: 0.45,
                    core: 0.0,
                    valence: 0.55,
                    total: 0.55,
                },
                NpaEntry {
                    charge: 0.45,
                    core: 0.0,
                    valence: 0.55,
                    total: 0.55,
                },
            ],
            lone_pairs: vec![LonePairRecord {
                owner: 0,
                character: Hybrid {
                    s: 0.5,
                    p: 99.5,
                    d: 0.0,
                    f: 0.0,
                },
                occupancy: 1.978,
            }],
            bond_orbitals: vec![
                BondOrbitalRecord {
                    atom_i: 0,
                    atom_j: 1,
                    kind: OrbitalKind::Sigma,
                    bonding,
                    antibonding: anti,
                },
                BondOrbitalRecord {
                    atom_i: 0,
                    atom_j: 2,
                    kind: OrbitalKind::Sigma,
                    bonding,
                    antibonding: anti,
                },
            ],
            interactions: vec![InteractionRecord {
                donor: OrbitalRef::LonePair(0),
                acceptor: OrbitalRef::Antibonding(1),
                e2: 1.25,
                energy_gap: 0.9,
                fock_element: 0.03,
            }],
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let rec = sample();
        let text = serialize_nbo_json(&rec);
        let back = parse_nbo_json(&text, Validation::Strict).unwrap();
        assert!(back.warnings.is_empty());
        assert_eq!(back.record, rec);
        assert_eq!(serialize_nbo_json(&back.record), text);
    }

    #[test]
    fn missing_sections_are_empty() {
        let parsed = parse_nbo_record("{}", Validation::Strict).unwrap();
        assert_eq!(parsed.record, NboRecord::default());
    }

    #[test]
    fn strict_rejects_and_lenient_warns() {
        let text = serialize_nbo_json(&sample()).replace("\"occ\": 1.978", "\"occ\": 2.3");
        let e = parse_nbo_json(&text, Validation::Strict).unwrap_err();
        assert_eq!(e.kind, ParseErrorKind::Range);
        let ok = parse_nbo_json(&text, Validation::Lenient).unwrap();
        assert_eq!(ok.warnings.len(), 1);
        assert_eq!(ok.record.lone_pairs[0].occupancy, 2.3);
    }

    #[test]
    fn bad_references() {
        let text = serialize_nbo_json(&sample()).replace("\"BD*2\"", "\"BD*9\"");
        assert_eq!(parse_nbo_json(&text, Validation::Strict).unwrap_err().kind, ParseErrorKind::Reference);
        let text = serialize_nbo_json(&sample()).replace("\"BD*2\"", "\"BD2\"");
        assert_eq!(parse_nbo_json(&text, Validation::Strict).unwrap_err().kind, ParseErrorKind::Reference);
        let text = serialize_nbo_json(&sample()).replace("{\"atom\": 0", "{\"atom\": 7");
        assert_eq!(parse_nbo_json(&text, Validation::Strict).unwrap_err().kind, ParseErrorKind::Reference);
    }
}
