//! Deterministic stand-in for quantum-chemical orbital analysis.
//!
//! Every label is a smooth function of the local environment: neighbor
//! electronegativities, bond orders, bond lengths and through-space
//! distances between orbital anchors.

use crate::chem_io::{
    canonical_f64, distance, AtomContribution, BondOrbitalRecord, Hybrid, InteractionRecord, LonePairRecord, Molecule, NboRecord,
    NpaEntry, OrbitalKind, OrbitalRef, OrbitalSide,
};
use crate::element::Element;
use crate::graph::{build_extended_graph, build_molecular_graph, build_simg, AtomDistances, LpCount, SimgGraph};

#[derive(Clone, Debug, PartialEq)]
pub struct OracleRules {
    /// Lone pairs per element.
    pub lone_pairs: Vec<(Element, u8)>,
    /// Charge transfer per unit electronegativity difference, first and
    /// second neighbors.
    pub charge_scale: (f64, f64),
    /// Interactions require an anchor distance below this (Å).
    pub max_distance: f64,
    /// ... and a graph distance at most this.
    pub max_graph_distance: u32,
    /// e2 = amplitude · exp(−r / range) · factors (kcal/mol, Å).
    pub e2_amplitude: f64,
    pub e2_range: f64,
}

impl Default for OracleRules {
    fn default() -> Self {
        OracleRules {
            lone_pairs: vec![
                (Element::H, 0),
                (Element::B, 0),
                (Element::C, 0),
                (Element::Si, 0),
                (Element::N, 1),
                (Element::P, 1),
                (Element::O, 2),
                (Element::S, 2),
                (Element::F, 3),
                (Element::Cl, 3),
                (Element::Br, 3),
                (Element::I, 3),
            ],
            charge_scale: (0.36, 0.05),
            max_distance: 2.8,
            max_graph_distance: 4,
            e2_amplitude: 40.0,
            e2_range: 0.6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("no oracle rule covers element {0}")]
    UncoveredElement(Element),
}

/// Donor orbital classes; the acceptor class follows from the bond kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Donor {
    LonePair,
    Sigma,
    Pi,
}

struct Env {
    chi: Vec<f64>,
    pi_bonds: Vec<u8>,
    heavy_neighbors: Vec<usize>,
    neighbor_chi: Vec<f64>,
}

impl Env {
    fn new(m: &Molecule) -> Self {
        let adj = m.adjacency();
        let chi: Vec<f64> = m.atoms.iter().map(|a| a.element.electronegativity()).collect();
        let pi_bonds = adj.iter().map(|n| n.iter().map(|&(_, o)| o - 1).sum()).collect();
        let heavy_neighbors = adj
            .iter()
            .map(|n| n.iter().filter(|&&(j, _)| m.atoms[j].element != Element::H).count())
            .collect();
        let neighbor_chi = adj.iter().map(|n| n.iter().map(|&(j, _)| chi[j] - 2.5).sum()).collect();
        Env {
            chi,
            pi_bonds,
            heavy_neighbors,
            neighbor_chi,
        }
    }
}

/// Per-atom lone-pair counts the oracle assigns to `m`.
pub fn oracle_lp_counts(m: &Molecule, rules: &OracleRules) -> Result<Vec<LpCount>, OracleError> {
    let adj = m.adjacency();
    let env = Env::new(m);
    m.atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let total = rules
                .lone_pairs
                .iter()
                .find(|(e, _)| *e == a.element)
                .map(|&(_, n)| n)
                .ok_or(OracleError::UncoveredElement(a.element))?;
            let type1 = match a.element {
                _ if total == 0 => 0,
                Element::N => {
                    let conjugated = env.pi_bonds[i] == 0 && adj[i].iter().any(|&(j, _)| env.pi_bonds[j] > 0);
                    u8::from(conjugated)
                }
                Element::P => 0,
                _ => total - 1,
            };
            Ok(LpCount { total, type1 })
        })
        .collect()
}

fn hybrid(s: f64, d: f64, f: f64) -> Hybrid {
    let s = canonical_f64(s);
    let d = canonical_f64(d);
    let f = canonical_f64(f);
    Hybrid {
        s,
        p: canonical_f64(100.0 - s - d - f),
        d,
        f,
    }
}

fn row_d(e: Element) -> f64 {
    match e.period() {
        1 => 0.0,
        2 => 0.12,
        _ => 0.6,
    }
}

/// Labels `m` and returns the record in canonical graph order.
pub fn synth_label(m: &Molecule, rules: &OracleRules) -> Result<NboRecord, OracleError> {
    Ok(synth_simg(m, rules)?.to_record())
}

/// Labels `m` and attaches the labels to its ground-truth extended graph.
pub fn synth_simg(m: &Molecule, rules: &OracleRules) -> Result<SimgGraph, OracleError> {
    let counts = oracle_lp_counts(m, rules)?;
    let eg = build_extended_graph(&build_molecular_graph(m), &counts).expect("oracle counts are in range");
    let env = Env::new(m);
    let hops = AtomDistances::new(&eg);

    struct LpDraft {
        owner: usize,
        lp_type: u8,
        rank: usize,
    }
    let lps: Vec<LpDraft> = eg
        .lp_groups()
        .into_iter()
        .flat_map(|(owner, members)| {
            let eg = &eg;
            members.into_iter().scan(0usize, move |rank1, k| {
                let lp_type = eg.lp_nodes[k].lp_type;
                let rank = if lp_type == 1 {
                    *rank1 += 1;
                    *rank1 - 1
                } else {
                    0
                };
                Some(LpDraft { owner, lp_type, rank })
            })
        })
        .collect();

    let bond_polarity = |k: usize| {
        let b = eg.bond_nodes[k];
        (env.chi[b.atom_i] - env.chi[b.atom_j]).abs()
    };
    let anchor = |d: Option<usize>, k: usize| match d {
        Some(lp) => m.atoms[lps[lp].owner].position,
        None => eg.anchor(crate::graph::NodeRef::bond(k)),
    };

    let mut interactions = Vec::new();
    let mut donated_lp = vec![0.0; lps.len()];
    let mut donated_bond = vec![0.0; eg.bond_nodes.len()];
    let mut accepted = vec![0.0; eg.bond_nodes.len()];
    let donors = (0..lps.len())
        .map(|k| (Donor::LonePair, k))
        .chain(eg.bond_nodes.iter().enumerate().map(|(k, b)| {
            (
                match b.kind {
                    OrbitalKind::Sigma => Donor::Sigma,
                    OrbitalKind::Pi => Donor::Pi,
                },
                k,
            )
        }));
    for (dkind, d) in donors {
        let (d_atoms, d_pos) = match dkind {
            Donor::LonePair => ([lps[d].owner, lps[d].owner], anchor(Some(d), 0)),
            _ => {
                let b = eg.bond_nodes[d];
                ([b.atom_i, b.atom_j], anchor(None, d))
            }
        };
        for (a, acc) in eg.bond_nodes.iter().enumerate() {
            if dkind != Donor::LonePair && a == d {
                continue;
            }
            let shares = d_atoms.contains(&acc.atom_i) || d_atoms.contains(&acc.atom_j);
            let polar = bond_polarity(a) >= 0.4;
            let pi_acc = acc.kind == OrbitalKind::Pi;
            let (compatible, factor, gap) = match (dkind, pi_acc) {
                (Donor::LonePair, true) => (!shares, 6.0, 0.40),
                (Donor::LonePair, false) => (!shares, 1.5, 0.85),
                (Donor::Pi, true) => {
                    let db = eg.bond_nodes[d];
                    ((db.atom_i, db.atom_j) != (acc.atom_i, acc.atom_j), 4.0, 0.30)
                }
                (Donor::Pi, false) => (!shares && polar, 1.2, 0.80),
                (Donor::Sigma, true) => (!shares, 1.2, 0.75),
                (Donor::Sigma, false) => (!shares && polar, 1.0, 1.15),
            };
            if !compatible {
                continue;
            }
            let r = distance(&d_pos, &anchor(None, a));
            let g = d_atoms
                .iter()
                .flat_map(|&x| [acc.atom_i, acc.atom_j].map(|y| hops.atoms(x, y)))
                .min()
                .unwrap();
            if r >= rules.max_distance || g > rules.max_graph_distance {
                continue;
            }
            let lp_factor = match dkind {
                Donor::LonePair if lps[d].lp_type == 1 => 1.6 * 0.8f64.powi(lps[d].rank as i32),
                _ => 1.0,
            };
            let e2 = rules.e2_amplitude * (-r / rules.e2_range).exp() * factor * (1.0 + bond_polarity(a)) * lp_factor;
            let donor_chi = d_atoms.iter().map(|&x| env.chi[x]).sum::<f64>() / 2.0;
            let de = gap + 0.05 * (donor_chi - 2.5) + 0.03 * (r - 2.2);
            let e2 = canonical_f64(e2);
            let de = canonical_f64(de);
            let fock = canonical_f64((e2 / 627.5 * de / 2.0).sqrt());
            match dkind {
                Donor::LonePair => donated_lp[d] += e2,
                _ => donated_bond[d] += e2,
            }
            accepted[a] += e2;
            interactions.push(InteractionRecord {
                donor: match dkind {
                    Donor::LonePair => OrbitalRef::LonePair(d),
                    _ => OrbitalRef::Bonding(d),
                },
                acceptor: OrbitalRef::Antibonding(a),
                e2,
                energy_gap: de,
                fock_element: fock,
            });
        }
    }

    let adj = m.adjacency();
    let atom_npa = (0..m.atoms.len())
        .map(|i| {
            let mut q = 0.0;
            for &(j, order) in &adj[i] {
                q += rules.charge_scale.0 * (env.chi[j] - env.chi[i]) * (1.0 + 0.15 * f64::from(order - 1));
            }
            for k in 0..m.atoms.len() {
                if hops.atoms(i, k) == 2 {
                    q += rules.charge_scale.1 * (env.chi[k] - env.chi[i]);
                }
            }
            let e = m.atoms[i].element;
            let q = canonical_f64(q);
            let z = f64::from(e.atomic_number());
            let core = f64::from(e.core_electrons());
            let total = canonical_f64(z - q);
            NpaEntry {
                charge: q,
                core,
                valence: canonical_f64(total - core),
                total,
            }
        })
        .collect();

    let lone_pairs = lps
        .iter()
        .enumerate()
        .map(|(k, lp)| {
            let i = lp.owner;
            let e = m.atoms[i].element;
            let nb = env.neighbor_chi[i];
            let n_heavy = env.heavy_neighbors[i] as f64;
            let (character, base) = if lp.lp_type == 1 {
                let s = 0.25 + 0.2 / (1.0 + (-nb).exp()) + 0.1 * lp.rank as f64;
                (hybrid(s, 0.08 + 0.03 * n_heavy + row_d(e) * 0.2, 0.01), 1.93 - 0.03 * env.pi_bonds[i] as f64 - 0.015 * lp.rank as f64)
            } else {
                let s = match e {
                    Element::N => 28.0 + 9.0 * f64::from(u8::from(env.pi_bonds[i] > 0)) + 4.0 * nb.tanh(),
                    Element::O => 45.0 + 8.0 * f64::from(env.pi_bonds[i]) + 5.0 * nb.tanh(),
                    Element::S | Element::P => 58.0 + 5.0 * nb.tanh(),
                    _ => 78.0 + 5.0 * nb.tanh(),
                };
                (hybrid(s, 0.05 + 0.02 * n_heavy + row_d(e) * 0.1, 0.005), 1.985 - 0.004 * n_heavy)
            };
            LonePairRecord {
                owner: i,
                character,
                occupancy: canonical_f64((base - 0.002 * donated_lp[k]).max(1.5)),
            }
        })
        .collect();

    let bond_orbitals = eg
        .bond_nodes
        .iter()
        .enumerate()
        .map(|(k, b)| {
            let (i, j) = (b.atom_i, b.atom_j);
            let dchi = env.chi[i] - env.chi[j];
            let length = m.distance(i, j);
            let contribution = |x: usize, y: usize, pol: f64, sign: f64| {
                let e = m.atoms[x].element;
                let character = match b.kind {
                    OrbitalKind::Pi => hybrid(0.05, 0.1 + row_d(e), 0.02),
                    OrbitalKind::Sigma if e == Element::H => hybrid(99.8 - 0.1 * (env.chi[y] - 2.5), 0.0, 0.0),
                    OrbitalKind::Sigma => {
                        let base = match (env.pi_bonds[x], e) {
                            (0, Element::B) => 33.0,
                            (0, _) => 25.0,
                            (1, _) => 33.0,
                            _ => 50.0,
                        };
                        let bent = -5.0 * (env.chi[x] - env.chi[y]).tanh();
                        let stretch = 4.0 * (length / bond_ref(m.atoms[x].element, m.atoms[y].element) - 1.0);
                        hybrid(base + bent + stretch, 0.1 + row_d(e), 0.01)
                    }
                };
                let pol = canonical_f64(pol);
                AtomContribution {
                    character,
                    polarization: pol,
                    coefficient: canonical_f64(sign * (pol / 100.0).sqrt()),
                }
            };
            let spread = match b.kind {
                OrbitalKind::Sigma => 35.0,
                OrbitalKind::Pi => 25.0,
            };
            let pol_i = canonical_f64(50.0 + spread * (0.9 * dchi).tanh());
            let pol_j = canonical_f64(100.0 - pol_i);
            let bonding_base = match b.kind {
                OrbitalKind::Sigma => 1.995 - 0.003 * dchi.abs(),
                OrbitalKind::Pi => 1.97,
            };
            BondOrbitalRecord {
                atom_i: i,
                atom_j: j,
                kind: b.kind,
                bonding: OrbitalSide {
                    atoms: [contribution(i, j, pol_i, 1.0), contribution(j, i, pol_j, 1.0)],
                    occupancy: canonical_f64((bonding_base - 0.002 * donated_bond[k]).max(1.5)),
                },
                antibonding: OrbitalSide {
                    atoms: [contribution(i, j, pol_j, 1.0), contribution(j, i, pol_i, -1.0)],
                    occupancy: canonical_f64((0.01 * dchi.abs() + 0.002 * accepted[k]).min(0.5)),
                },
            }
        })
        .collect();

    let record = NboRecord {
        atom_npa,
        lone_pairs,
        bond_orbitals,
        interactions,
    };
    Ok(build_simg(&eg, &record).expect("oracle record matches its own graph"))
}

fn bond_ref(a: Element, b: Element) -> f64 {
    a.covalent_radius() + b.covalent_radius()
}
