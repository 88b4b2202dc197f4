//! Supported chemical elements and the per-element constants the rest of the
//! crate relies on (valence, radii, electronegativity, core shells).

use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    H,
    B,
    C,
    N,
    O,
    F,
    Si,
    P,
    S,
    Cl,
    Br,
    I,
}

/// Unknown chemical symbol.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("unsupported element symbol `{0}`")]
pub struct UnknownElement(pub String);

impl Element {
    pub const ALL: [Element; 12] = [
        Element::H,
        Element::B,
        Element::C,
        Element::N,
        Element::O,
        Element::F,
        Element::Si,
        Element::P,
        Element::S,
        Element::Cl,
        Element::Br,
        Element::I,
    ];

    /// Width of the element one-hot encoding.
    pub const COUNT: usize = Self::ALL.len();

    pub fn symbol(self) -> &'static str {
        match self {
            Element::H => "H",
            Element::B => "B",
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::F => "F",
            Element::Si => "Si",
            Element::P => "P",
            Element::S => "S",
            Element::Cl => "Cl",
            Element::Br => "Br",
            Element::I => "I",
        }
    }

    /// Position in the one-hot table.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn atomic_number(self) -> u32 {
        match self {
            Element::H => 1,
            Element::B => 5,
            Element::C => 6,
            Element::N => 7,
            Element::O => 8,
            Element::F => 9,
            Element::Si => 14,
            Element::P => 15,
            Element::S => 16,
            Element::Cl => 17,
            Element::Br => 35,
            Element::I => 53,
        }
    }

    /// Electrons in closed inner shells.
    pub fn core_electrons(self) -> u32 {
        match self {
            Element::H => 0,
            Element::B | Element::C | Element::N | Element::O | Element::F => 2,
            Element::Si | Element::P | Element::S | Element::Cl => 10,
            Element::Br => 28,
            Element::I => 46,
        }
    }

    /// Conventional neutral valence (number of covalent bonds).
    pub fn valence(self) -> u8 {
        match self {
            Element::H | Element::F | Element::Cl | Element::Br | Element::I => 1,
            Element::O | Element::S => 2,
            Element::B | Element::N | Element::P => 3,
            Element::C | Element::Si => 4,
        }
    }

    /// Single-bond covalent radius in Å.
    pub fn covalent_radius(self) -> f64 {
        match self {
            Element::H => 0.31,
            Element::B => 0.84,
            Element::C => 0.76,
            Element::N => 0.71,
            Element::O => 0.66,
            Element::F => 0.57,
            Element::Si => 1.11,
            Element::P => 1.07,
            Element::S => 1.05,
            Element::Cl => 1.02,
            Element::Br => 1.20,
            Element::I => 1.39,
        }
    }

    /// Pauling electronegativity.
    pub fn electronegativity(self) -> f64 {
        match self {
            Element::H => 2.20,
            Element::B => 2.04,
            Element::C => 2.55,
            Element::N => 3.04,
            Element::O => 3.44,
            Element::F => 3.98,
            Element::Si => 1.90,
            Element::P => 2.19,
            Element::S => 2.58,
            Element::Cl => 3.16,
            Element::Br => 2.96,
            Element::I => 2.66,
        }
    }

    /// Periodic-table row.
    pub fn period(self) -> u32 {
        match self {
            Element::H => 1,
            Element::B | Element::C | Element::N | Element::O | Element::F => 2,
            Element::Si | Element::P | Element::S | Element::Cl => 3,
            Element::Br => 4,
            Element::I => 5,
        }
    }

    pub fn is_halogen(self) -> bool {
        matches!(self, Element::F | Element::Cl | Element::Br | Element::I)
    }
}

impl FromStr for Element {
    type Err = UnknownElement;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::ALL
            .iter()
            .copied()
            .find(|e| e.symbol() == s)
            .ok_or_else(|| UnknownElement(s.to_string()))
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}
