use crate::element::Element;

#[derive(Clone, Debug, PartialEq)]
pub struct Atom {
    pub element: Element,
    /// Cartesian position in Å.
    pub position: [f64; 3],
}

/// Covalent bond; always stored with `i < j`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Bond {
    pub i: usize,
    pub j: usize,
    pub order: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Molecule {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    pub charge: i32,
}

#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
pub enum MoleculeError {
    #[error("bond {bond} references atom {atom} but the molecule has {count} atoms")]
    DanglingBond { bond: usize, atom: usize, count: usize },
    #[error("bond {bond} connects atom {atom} to itself")]
    SelfBond { bond: usize, atom: usize },
    #[error("bond {bond} has order {order}, expected 1..=3")]
    BadOrder { bond: usize, order: u8 },
    #[error("bond {bond} duplicates the pair ({i}, {j})")]
    Duplicate { bond: usize, i: usize, j: usize },
    #[error("atom {atom} has a non-finite coordinate")]
    NonFinite { atom: usize },
}

impl Molecule {
    /// Validates the invariants and normalizes every bond to `i < j`.
    pub fn new(atoms: Vec<Atom>, bonds: Vec<Bond>, charge: i32) -> Result<Self, MoleculeError> {
        for (a, atom) in atoms.iter().enumerate() {
            if atom.position.iter().any(|c| !c.is_finite()) {
                return Err(MoleculeError::NonFinite { atom: a });
            }
        }
        let mut seen = std::collections::HashSet::new();
        let mut normalized = Vec::with_capacity(bonds.len());
        for (b, bond) in bonds.into_iter().enumerate() {
            for atom in [bond.i, bond.j] {
                if atom >= atoms.len() {
                    return Err(MoleculeError::DanglingBond {
                        bond: b,
                        atom,
                        count: atoms.len(),
                    });
                }
            }
            if bond.i == bond.j {
                return Err(MoleculeError::SelfBond { bond: b, atom: bond.i });
            }
            if !(1..=3).contains(&bond.order) {
                return Err(MoleculeError::BadOrder { bond: b, order: bond.order });
            }
            let (i, j) = (bond.i.min(bond.j), bond.i.max(bond.j));
            if !seen.insert((i, j)) {
                return Err(MoleculeError::Duplicate { bond: b, i, j });
            }
            normalized.push(Bond { i, j, order: bond.order });
        }
        Ok(Molecule {
            atoms,
            bonds: normalized,
            charge,
        })
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        distance(&self.atoms[a].position, &self.atoms[b].position)
    }

    /// Neighbor lists (atom index, bond order) in bond order of appearance.
    pub fn adjacency(&self) -> Vec<Vec<(usize, u8)>> {
        let mut adj = vec![Vec::new(); self.atoms.len()];
        for b in &self.bonds {
            adj[b.i].push((b.j, b.order));
            adj[b.j].push((b.i, b.order));
        }
        adj
    }

    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| a.element != Element::H).count()
    }

    pub fn contains(&self, e: Element) -> bool {
        self.atoms.iter().any(|a| a.element == e)
    }
}

pub fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}
