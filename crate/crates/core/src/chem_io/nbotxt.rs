//! NBOTXT: a line-oriented label format.
//!
//! ```text
//! NPA <atom> q=<f> core=<f> val=<f> tot=<f>
//! LP <atom> s=<f> p=<f> d=<f> f=<f> occ=<f>
//! BD <sigma|pi> <i>-<j> SIDE=<bond|anti> A1 s= p= d= f= pol= coef= A2 s= p= d= f= pol= coef= occ=<f>
//! E2 <donor> -> <acceptor> e2=<f> de=<f> fij=<f>
//! ```
//!
//! Atom references are 1-based and may carry an element prefix (`O1`).
//! Orbital references are `LP<n>` (n-th LP line), `BD<n>` / `BD*<n>` (bonding
//! or antibonding orbital of the n-th bond-orbital pair, numbered by first
//! appearance). The n-th `SIDE=bond` line of a given kind and atom pair is
//! matched with the n-th `SIDE=anti` line. `#` starts a comment.

use std::collections::HashMap;

use super::error::{LineIndex, ParseError, ParseErrorKind, RangeCheck, Validation};
use super::json::format_f64;
use super::nbo::*;
use super::nboj::{resolve_ref, ParsedRecord};

#[derive(Clone, Copy)]
struct Tok<'a> {
    text: &'a str,
    offset: usize,
}

struct Line<'a> {
    toks: Vec<Tok<'a>>,
    pos: usize,
    end_offset: usize,
}

impl<'a> Line<'a> {
    fn next(&mut self, index: &LineIndex<'_>, what: &str) -> Result<Tok<'a>, ParseError> {
        let t = self.toks.get(self.pos).copied().ok_or_else(|| {
            index.error(self.end_offset, ParseErrorKind::Syntax, format!("expected {what} before end of line"))
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn keyword(&mut self, index: &LineIndex<'_>, kw: &str) -> Result<Tok<'a>, ParseError> {
        let t = self.next(index, kw)?;
        if t.text != kw {
            return Err(index.error(t.offset, ParseErrorKind::Syntax, format!("expected `{kw}`, found `{}`", t.text)));
        }
        Ok(t)
    }

    /// `key=value` or `key= value`.
    fn value(&mut self, index: &LineIndex<'_>, key: &str) -> Result<(Tok<'a>, usize), ParseError> {
        let t = self.next(index, &format!("`{key}=`"))?;
        let Some(rest) = t.text.strip_prefix(key).and_then(|r| r.strip_prefix('=')) else {
            return Err(index.error(t.offset, ParseErrorKind::Syntax, format!("expected `{key}=`, found `{}`", t.text)));
        };
        if rest.is_empty() {
            let v = self.next(index, &format!("value for `{key}`"))?;
            Ok((v, v.offset))
        } else {
            let off = t.offset + key.len() + 1;
            Ok((Tok { text: rest, offset: off }, off))
        }
    }

    fn float(&mut self, index: &LineIndex<'_>, key: &str) -> Result<(f64, usize), ParseError> {
        let (t, off) = self.value(index, key)?;
        let v: f64 = t
            .text
            .parse()
            .map_err(|_| index.error(off, ParseErrorKind::Syntax, format!("`{}` is not a number", t.text)))?;
        if !v.is_finite() {
            return Err(index.error(off, ParseErrorKind::Range, format!("non-finite value for `{key}`")));
        }
        Ok((v, off))
    }

    fn finish(&self, index: &LineIndex<'_>) -> Result<(), ParseError> {
        match self.toks.get(self.pos) {
            None => Ok(()),
            Some(t) => Err(index.error(t.offset, ParseErrorKind::Syntax, format!("unexpected token `{}`", t.text))),
        }
    }
}

fn atom_number(index: &LineIndex<'_>, t: &str, offset: usize) -> Result<usize, ParseError> {
    let digits = t.trim_start_matches(|c: char| c.is_ascii_alphabetic());
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return Err(index.error(offset, ParseErrorKind::Syntax, format!("invalid atom reference `{t}`")));
    }
    let n: usize = digits
        .parse()
        .map_err(|_| index.error(offset, ParseErrorKind::Range, format!("atom reference `{t}` too large")))?;
    n.checked_sub(1)
        .ok_or_else(|| index.error(offset, ParseErrorKind::Reference, "atom references are 1-based"))
}

fn split_lines(text: &str) -> impl Iterator<Item = Line<'_>> {
    let mut offset = 0;
    text.split_inclusive('\n').map(move |raw| {
        let start = offset;
        offset += raw.len();
        let content = raw.split('#').next().unwrap_or("");
        let mut toks = Vec::new();
        let mut i = 0;
        let bytes = content.as_bytes();
        while i < bytes.len() {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            let s = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if s < i {
                toks.push(Tok {
                    text: &content[s..i],
                    offset: start + s,
                });
            }
        }
        Line {
            toks,
            pos: 0,
            end_offset: start + content.trim_end().len(),
        }
    })
}

struct PendingBond {
    atom_i: usize,
    atom_j: usize,
    kind: OrbitalKind,
    bonding: Option<OrbitalSide>,
    antibonding: Option<OrbitalSide>,
    offset: usize,
}

pub fn parse_nbo_text(text: &str, mode: Validation) -> Result<ParsedRecord, ParseError> {
    let index = LineIndex::new(text);
    let mut check = RangeCheck::new(&index, mode);
    let mut npa: Vec<(usize, NpaEntry, usize)> = Vec::new();
    let mut lone_pairs: Vec<(LonePairRecord, usize)> = Vec::new();
    let mut bonds: Vec<PendingBond> = Vec::new();
    // (kind, lo, hi) -> indices into `bonds`, separately for each side
    let mut by_side: HashMap<(OrbitalKind, usize, usize, bool), usize> = HashMap::new();
    let mut groups: HashMap<(OrbitalKind, usize, usize), Vec<usize>> = HashMap::new();
    let mut e2_lines: Vec<(OrbitalRef, usize, OrbitalRef, usize, [f64; 3], usize)> = Vec::new();

    for mut line in split_lines(text) {
        let Some(head) = line.toks.first().copied() else { continue };
        line.pos = 1;
        match head.text {
            "NPA" => {
                let a = line.next(&index, "atom")?;
                let atom = atom_number(&index, a.text, a.offset)?;
                let (charge, _) = line.float(&index, "q")?;
                let (core, _) = line.float(&index, "core")?;
                let (valence, _) = line.float(&index, "val")?;
                let (total, _) = line.float(&index, "tot")?;
                line.finish(&index)?;
                npa.push((
                    atom,
                    NpaEntry {
                        charge,
                        core,
                        valence,
                        total,
                    },
                    a.offset,
                ));
            }
            "LP" => {
                let a = line.next(&index, "atom")?;
                let owner = atom_number(&index, a.text, a.offset)?;
                let character = read_hybrid(&mut line, &index, &mut check)?;
                check.check(in_percent_band(character.sum()), head.offset, || {
                    format!("lone-pair characters sum to {}, expected 99..101", character.sum())
                })?;
                let (occupancy, occ_off) = line.float(&index, "occ")?;
                check.check(occupancy > 0.0 && occupancy <= 2.0, occ_off, || {
                    format!("lone-pair occupancy {occupancy} outside (0, 2]")
                })?;
                line.finish(&index)?;
                lone_pairs.push((
                    LonePairRecord {
                        owner,
                        character,
                        occupancy,
                    },
                    a.offset,
                ));
            }
            "BD" => {
                let k = line.next(&index, "bond kind")?;
                let kind = OrbitalKind::from_name(k.text).ok_or_else(|| {
                    index.error(k.offset, ParseErrorKind::Syntax, format!("unknown bond kind `{}`", k.text))
                })?;
                let pair = line.next(&index, "atom pair")?;
                let (lhs, rhs) = pair.text.split_once('-').ok_or_else(|| {
                    index.error(pair.offset, ParseErrorKind::Syntax, format!("expected `<i>-<j>`, found `{}`", pair.text))
                })?;
                let atom_i = atom_number(&index, lhs, pair.offset)?;
                let atom_j = atom_number(&index, rhs, pair.offset + lhs.len() + 1)?;
                if atom_i == atom_j {
                    return Err(index.error(pair.offset, ParseErrorKind::Reference, "bond orbital joins an atom to itself"));
                }
                let (side_tok, side_off) = line.value(&index, "SIDE")?;
                let bonding = match side_tok.text {
                    "bond" => true,
                    "anti" => false,
                    other => {
                        return Err(index.error(side_off, ParseErrorKind::Syntax, format!("SIDE must be bond or anti, found `{other}`")))
                    }
                };
                let mut atoms = [AtomContribution::from_array([0.0; 6]); 2];
                for (slot, tag) in atoms.iter_mut().zip(["A1", "A2"]) {
                    line.keyword(&index, tag)?;
                    let character = read_hybrid(&mut line, &index, &mut check)?;
                    let (polarization, _) = line.float(&index, "pol")?;
                    let (coefficient, _) = line.float(&index, "coef")?;
                    *slot = AtomContribution {
                        character,
                        polarization,
                        coefficient,
                    };
                }
                let pol = atoms[0].polarization + atoms[1].polarization;
                check.check(in_percent_band(pol), head.offset, || format!("polarizations sum to {pol}, expected 99..101"))?;
                let (occupancy, occ_off) = line.float(&index, "occ")?;
                check.check((0.0..=2.0).contains(&occupancy), occ_off, || {
                    format!("orbital occupancy {occupancy} outside [0, 2]")
                })?;
                line.finish(&index)?;

                let (lo, hi) = (atom_i.min(atom_j), atom_i.max(atom_j));
                let nth = by_side.entry((kind, lo, hi, bonding)).or_insert(0);
                let group = groups.entry((kind, lo, hi)).or_default();
                let slot = if *nth < group.len() {
                    group[*nth]
                } else {
                    bonds.push(PendingBond {
                        atom_i,
                        atom_j,
                        kind,
                        bonding: None,
                        antibonding: None,
                        offset: head.offset,
                    });
                    group.push(bonds.len() - 1);
                    bonds.len() - 1
                };
                *nth += 1;
                let target = &mut bonds[slot];
                let side = if target.atom_i == atom_i {
                    OrbitalSide { atoms, occupancy }
                } else {
                    OrbitalSide {
                        atoms: [atoms[1], atoms[0]],
                        occupancy,
                    }
                };
                if bonding {
                    target.bonding = Some(side);
                } else {
                    target.antibonding = Some(side);
                }
            }
            "E2" => {
                let d = line.next(&index, "donor")?;
                let donor = OrbitalRef::from_label(d.text).ok_or_else(|| {
                    index.error(d.offset, ParseErrorKind::Syntax, format!("invalid orbital reference `{}`", d.text))
                })?;
                line.keyword(&index, "->")?;
                let a = line.next(&index, "acceptor")?;
                let acceptor = OrbitalRef::from_label(a.text).ok_or_else(|| {
                    index.error(a.offset, ParseErrorKind::Syntax, format!("invalid orbital reference `{}`", a.text))
                })?;
                let (e2, e2_off) = line.float(&index, "e2")?;
                check.check(e2 >= 0.0, e2_off, || format!("negative e2 {e2}"))?;
                let (de, _) = line.float(&index, "de")?;
                let (fij, _) = line.float(&index, "fij")?;
                line.finish(&index)?;
                e2_lines.push((donor, d.offset, acceptor, a.offset, [e2, de, fij], head.offset));
            }
            other => {
                return Err(index.error(head.offset, ParseErrorKind::Syntax, format!("unknown record type `{other}`")));
            }
        }
    }

    let mut rec = NboRecord::default();
    npa.sort_by_key(|(a, _, _)| *a);
    for (k, (atom, entry, off)) in npa.iter().enumerate() {
        if *atom != k {
            return Err(index.error(*off, ParseErrorKind::Reference, format!("NPA entries must cover atoms 1..n exactly once (atom {})", atom + 1)));
        }
        rec.atom_npa.push(*entry);
    }
    let atoms = rec.atom_npa.len();
    let atom_ok = |a: usize, off: usize| -> Result<(), ParseError> {
        if atoms > 0 && a >= atoms {
            Err(index.error(off, ParseErrorKind::Reference, format!("atom {} out of range ({atoms} atoms)", a + 1)))
        } else {
            Ok(())
        }
    };
    for (lp, off) in lone_pairs {
        atom_ok(lp.owner, off)?;
        rec.lone_pairs.push(lp);
    }
    for b in bonds {
        atom_ok(b.atom_i, b.offset)?;
        atom_ok(b.atom_j, b.offset)?;
        let (Some(bonding), Some(antibonding)) = (b.bonding, b.antibonding) else {
            return Err(index.error(b.offset, ParseErrorKind::Reference, "bond orbital is missing its bonding or antibonding line"));
        };
        rec.bond_orbitals.push(BondOrbitalRecord {
            atom_i: b.atom_i,
            atom_j: b.atom_j,
            kind: b.kind,
            bonding,
            antibonding,
        });
    }
    for (donor, d_off, acceptor, a_off, [e2, energy_gap, fock_element], _) in e2_lines {
        resolve_ref(&rec, donor, d_off, true, &index)?;
        resolve_ref(&rec, acceptor, a_off, false, &index)?;
        rec.interactions.push(InteractionRecord {
            donor,
            acceptor,
            e2,
            energy_gap,
            fock_element,
        });
    }
    Ok(ParsedRecord {
        record: rec,
        warnings: check.warnings,
    })
}

fn read_hybrid(line: &mut Line<'_>, index: &LineIndex<'_>, check: &mut RangeCheck<'_, '_>) -> Result<Hybrid, ParseError> {
    let mut v = [0.0; 4];
    for (slot, key) in v.iter_mut().zip(["s", "p", "d", "f"]) {
        let (x, off) = line.float(index, key)?;
        check.check(valid_percent(x), off, || format!("{key} character {x} outside [0, 100]"))?;
        *slot = x;
    }
    Ok(Hybrid::from_array(v))
}

fn hybrid_text(h: &Hybrid) -> String {
    format!(
        "s={} p={} d={} f={}",
        format_f64(h.s),
        format_f64(h.p),
        format_f64(h.d),
        format_f64(h.f)
    )
}

pub fn serialize_nbo_text(rec: &NboRecord) -> String {
    let mut out = String::new();
    for (k, n) in rec.atom_npa.iter().enumerate() {
        out.push_str(&format!(
            "NPA {} q={} core={} val={} tot={}\n",
            k + 1,
            format_f64(n.charge),
            format_f64(n.core),
            format_f64(n.valence),
            format_f64(n.total)
        ));
    }
    for lp in &rec.lone_pairs {
        out.push_str(&format!(
            "LP {} {} occ={}\n",
            lp.owner + 1,
            hybrid_text(&lp.character),
            format_f64(lp.occupancy)
        ));
    }
    for b in &rec.bond_orbitals {
        for (side_name, side) in [("bond", &b.bonding), ("anti", &b.antibonding)] {
            let atom = |a: &AtomContribution| {
                format!(
                    "{} pol={} coef={}",
                    hybrid_text(&a.character),
                    format_f64(a.polarization),
                    format_f64(a.coefficient)
                )
            };
            out.push_str(&format!(
                "BD {} {}-{} SIDE={} A1 {} A2 {} occ={}\n",
                b.kind.name(),
                b.atom_i + 1,
                b.atom_j + 1,
                side_name,
                atom(&side.atoms[0]),
                atom(&side.atoms[1]),
                format_f64(side.occupancy)
            ));
        }
    }
    for x in &rec.interactions {
        out.push_str(&format!(
            "E2 {} -> {} e2={} de={} fij={}\n",
            x.donor.label(),
            x.acceptor.label(),
            format_f64(x.e2),
            format_f64(x.energy_gap),
            format_f64(x.fock_element)
        ));
    }
    out
}
