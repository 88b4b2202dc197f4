#![allow(dead_code)]

use simg::chem_io::{Atom, Bond, Molecule};
use simg::element::Element;

pub fn molecule(atoms: &[(Element, [f64; 3])], bonds: &[(usize, usize, u8)]) -> Molecule {
    Molecule::new(
        atoms.iter().map(|&(element, position)| Atom { element, position }).collect(),
        bonds.iter().map(|&(i, j, order)| Bond { i, j, order }).collect(),
        0,
    )
    .unwrap()
}

pub fn water() -> Molecule {
    molecule(
        &[(Element::O, [0.0, 0.0, 0.1173]), (Element::H, [0.0, 0.7572, -0.4692]), (Element::H, [0.0, -0.7572, -0.4692])],
        &[(0, 1, 1), (0, 2, 1)],
    )
}

pub fn hydrogen() -> Molecule {
    molecule(&[(Element::H, [0.0; 3]), (Element::H, [0.74, 0.0, 0.0])], &[(0, 1, 1)])
}

pub fn ethylene() -> Molecule {
    molecule(
        &[
            (Element::C, [0.0, 0.0, 0.0]),
            (Element::C, [1.33, 0.0, 0.0]),
            (Element::H, [-0.57, 0.92, 0.0]),
            (Element::H, [-0.57, -0.92, 0.0]),
            (Element::H, [1.90, 0.92, 0.0]),
            (Element::H, [1.90, -0.92, 0.0]),
        ],
        &[(0, 1, 2), (0, 2, 1), (0, 3, 1), (1, 4, 1), (1, 5, 1)],
    )
}
