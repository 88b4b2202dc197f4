//! Label records produced by natural bond orbital analysis (or by the
//! synthetic oracle standing in for it).

/// Natural population analysis values for one atom.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NpaEntry {
    /// Natural charge (e).
    pub charge: f64,
    pub core: f64,
    pub valence: f64,
    pub total: f64,
}

impl NpaEntry {
    pub fn to_array(&self) -> [f64; 4] {
        [self.charge, self.core, self.valence, self.total]
    }
}

/// s/p/d/f composition in percent.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hybrid {
    pub s: f64,
    pub p: f64,
    pub d: f64,
    pub f: f64,
}

impl Hybrid {
    pub fn to_array(&self) -> [f64; 4] {
        [self.s, self.p, self.d, self.f]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Hybrid {
            s: a[0],
            p: a[1],
            d: a[2],
            f: a[3],
        }
    }

    pub fn sum(&self) -> f64 {
        self.s + self.p + self.d + self.f
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LonePairRecord {
    pub owner: usize,
    pub character: Hybrid,
    pub occupancy: f64,
}

/// One atom's share of a bonding or antibonding orbital.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AtomContribution {
    pub character: Hybrid,
    /// Percent of the orbital density on this atom.
    pub polarization: f64,
    pub coefficient: f64,
}

impl AtomContribution {
    pub fn to_array(&self) -> [f64; 6] {
        let h = self.character;
        [h.s, h.p, h.d, h.f, self.polarization, self.coefficient]
    }

    pub fn from_array(a: [f64; 6]) -> Self {
        AtomContribution {
            character: Hybrid::from_array([a[0], a[1], a[2], a[3]]),
            polarization: a[4],
            coefficient: a[5],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OrbitalSide {
    /// Contributions of `atom_i` and `atom_j`, in that order.
    pub atoms: [AtomContribution; 2],
    pub occupancy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrbitalKind {
    Sigma,
    Pi,
}

impl OrbitalKind {
    pub fn name(self) -> &'static str {
        match self {
            OrbitalKind::Sigma => "sigma",
            OrbitalKind::Pi => "pi",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "sigma" => Some(OrbitalKind::Sigma),
            "pi" => Some(OrbitalKind::Pi),
            _ => None,
        }
    }
}

/// A bonding/antibonding orbital pair between two atoms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BondOrbitalRecord {
    pub atom_i: usize,
    pub atom_j: usize,
    pub kind: OrbitalKind,
    pub bonding: OrbitalSide,
    pub antibonding: OrbitalSide,
}

impl BondOrbitalRecord {
    /// Number of scalar targets carried by one bond-orbital pair.
    pub const TARGETS: usize = 26;

    /// Flattened targets: per side, both atoms' (s, p, d, f, pol, coef) then
    /// the side occupancy; bonding side first.
    pub fn to_array(&self) -> [f64; Self::TARGETS] {
        let mut out = [0.0; Self::TARGETS];
        let mut k = 0;
        for side in [&self.bonding, &self.antibonding] {
            for a in &side.atoms {
                for v in a.to_array() {
                    out[k] = v;
                    k += 1;
                }
            }
            out[k] = side.occupancy;
            k += 1;
        }
        out
    }

    /// Same orbital pair described with the two atoms swapped.
    pub fn swapped(&self) -> Self {
        let flip = |s: &OrbitalSide| OrbitalSide {
            atoms: [s.atoms[1], s.atoms[0]],
            occupancy: s.occupancy,
        };
        BondOrbitalRecord {
            atom_i: self.atom_j,
            atom_j: self.atom_i,
            kind: self.kind,
            bonding: flip(&self.bonding),
            antibonding: flip(&self.antibonding),
        }
    }
}

/// Reference to an orbital inside an [`NboRecord`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrbitalRef {
    LonePair(usize),
    /// Bonding orbital of the given bond-orbital pair.
    Bonding(usize),
    /// Antibonding orbital of the given bond-orbital pair.
    Antibonding(usize),
}

impl OrbitalRef {
    /// Text form used by NBOTXT (1-based).
    pub fn label(self) -> String {
        match self {
            OrbitalRef::LonePair(i) => format!("LP{}", i + 1),
            OrbitalRef::Bonding(i) => format!("BD{}", i + 1),
            OrbitalRef::Antibonding(i) => format!("BD*{}", i + 1),
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        let (ctor, rest): (fn(usize) -> OrbitalRef, &str) = if let Some(r) = s.strip_prefix("BD*") {
            (OrbitalRef::Antibonding, r)
        } else if let Some(r) = s.strip_prefix("BD") {
            (OrbitalRef::Bonding, r)
        } else if let Some(r) = s.strip_prefix("LP") {
            (OrbitalRef::LonePair, r)
        } else {
            return None;
        };
        if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let n: usize = rest.parse().ok()?;
        n.checked_sub(1).map(ctor)
    }

    pub fn is_donor_kind(self) -> bool {
        !matches!(self, OrbitalRef::Antibonding(_))
    }

    pub fn is_acceptor_kind(self) -> bool {
        matches!(self, OrbitalRef::Antibonding(_))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InteractionRecord {
    pub donor: OrbitalRef,
    pub acceptor: OrbitalRef,
    /// Second-order perturbation energy, kcal/mol.
    pub e2: f64,
    /// Donor/acceptor energy difference, hartree.
    pub energy_gap: f64,
    /// Fock matrix element, hartree.
    pub fock_element: f64,
}

impl InteractionRecord {
    pub fn targets(&self) -> [f64; 3] {
        [self.e2, self.energy_gap, self.fock_element]
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct NboRecord {
    pub atom_npa: Vec<NpaEntry>,
    pub lone_pairs: Vec<LonePairRecord>,
    pub bond_orbitals: Vec<BondOrbitalRecord>,
    pub interactions: Vec<InteractionRecord>,
}

pub(crate) fn in_percent_band(x: f64) -> bool {
    (99.0..=101.0).contains(&x)
}

pub(crate) fn valid_percent(x: f64) -> bool {
    (0.0..=100.0).contains(&x)
}

/// Every invariant violation of a record, as human-readable messages.
pub fn record_violations(r: &NboRecord) -> Vec<String> {
    let mut out = Vec::new();
    let atoms = r.atom_npa.len();
    for (k, lp) in r.lone_pairs.iter().enumerate() {
        if !in_percent_band(lp.character.sum()) {
            out.push(format!("lone pair {k}: characters sum to {}", lp.character.sum()));
        }
        if !(lp.occupancy > 0.0 && lp.occupancy <= 2.0) {
            out.push(format!("lone pair {k}: occupancy {} outside (0, 2]", lp.occupancy));
        }
        if atoms > 0 && lp.owner >= atoms {
            out.push(format!("lone pair {k}: owner {} out of range", lp.owner));
        }
    }
    for (k, b) in r.bond_orbitals.iter().enumerate() {
        for (name, side) in [("bonding", &b.bonding), ("antibonding", &b.antibonding)] {
            let pol = side.atoms[0].polarization + side.atoms[1].polarization;
            if !in_percent_band(pol) {
                out.push(format!("bond orbital {k} {name}: polarizations sum to {pol}"));
            }
            if !(0.0..=2.0).contains(&side.occupancy) {
                out.push(format!("bond orbital {k} {name}: occupancy {} outside [0, 2]", side.occupancy));
            }
        }
        if b.atom_i == b.atom_j {
            out.push(format!("bond orbital {k}: both atoms are {}", b.atom_i));
        }
    }
    for (k, x) in r.interactions.iter().enumerate() {
        if x.e2 < 0.0 {
            out.push(format!("interaction {k}: negative e2"));
        }
        if !x.donor.is_donor_kind() || !x.acceptor.is_acceptor_kind() {
            out.push(format!("interaction {k}: invalid donor/acceptor kinds"));
        }
    }
    out
}
