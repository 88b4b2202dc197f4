//! Random molecules with plausible 3D geometry: small acyclic trees and
//! peptide-like chains with chosen backbone dihedrals.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::chem_io::{canonical_f64, Atom, Bond, Molecule};
use crate::element::Element;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub min_heavy: usize,
    pub max_heavy: usize,
    /// Relative sampling weight per heavy element.
    pub elements: Vec<(Element, f64)>,
    /// Probability that a new bond between eligible atoms is multiple.
    pub multiple_bond_rate: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            min_heavy: 5,
            max_heavy: 12,
            elements: vec![
                (Element::C, 0.62),
                (Element::N, 0.12),
                (Element::O, 0.14),
                (Element::F, 0.04),
                (Element::S, 0.03),
                (Element::Cl, 0.03),
                (Element::Br, 0.01),
                (Element::P, 0.01),
            ],
            multiple_bond_rate: 0.25,
        }
    }
}

impl SynthConfig {
    pub fn with_element(mut self, e: Element, weight: f64) -> Self {
        match self.elements.iter_mut().find(|(x, _)| *x == e) {
            Some(slot) => slot.1 = weight,
            None => self.elements.push((e, weight)),
        }
        self
    }

    /// Drops an element from the sampling table.
    pub fn without(mut self, e: Element) -> Self {
        self.elements.retain(|(x, _)| *x != e);
        self
    }
}

/// Deterministic RNG for item `index` of a stream identified by `seed` and
/// `stream`.
pub fn item_rng(seed: u64, stream: &str, index: u64) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(stream.as_bytes());
    h.update(index.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// `count` molecules; molecule `k` depends only on (`seed`, `k`, `cfg`).
pub fn dataset(seed: u64, count: usize, cfg: &SynthConfig) -> Vec<Molecule> {
    (0..count)
        .map(|k| random_molecule(&mut item_rng(seed, "molecule", k as u64), cfg))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Hybridization {
    Sp,
    Sp2,
    Sp3,
}

impl Hybridization {
    fn angle(self) -> f64 {
        match self {
            Hybridization::Sp => 180.0,
            Hybridization::Sp2 => 120.0,
            Hybridization::Sp3 => 109.47,
        }
    }

    fn slots(self) -> usize {
        match self {
            Hybridization::Sp => 1,
            Hybridization::Sp2 => 2,
            Hybridization::Sp3 => 3,
        }
    }
}

/// Rooted spanning tree of a molecule used to place atoms.
struct Tree {
    elements: Vec<Element>,
    parent: Vec<Option<usize>>,
    order: Vec<u8>,
    children: Vec<Vec<usize>>,
    /// Torsion of the first child of each atom (degrees); random if `None`.
    torsion: Vec<Option<f64>>,
    hybrid: Vec<Option<Hybridization>>,
}

impl Tree {
    fn new() -> Self {
        Tree {
            elements: Vec::new(),
            parent: Vec::new(),
            order: Vec::new(),
            children: Vec::new(),
            torsion: Vec::new(),
            hybrid: Vec::new(),
        }
    }

    fn add(&mut self, element: Element, parent: Option<usize>, order: u8) -> usize {
        let k = self.elements.len();
        self.elements.push(element);
        self.parent.push(parent);
        self.order.push(order);
        self.children.push(Vec::new());
        self.torsion.push(None);
        self.hybrid.push(None);
        if let Some(p) = parent {
            self.children[p].push(k);
        }
        k
    }

    fn used_valence(&self, a: usize) -> u8 {
        let up = if self.parent[a].is_some() { self.order[a] } else { 0 };
        up + self.children[a].iter().map(|&c| self.order[c]).sum::<u8>()
    }

    fn free(&self, a: usize) -> u8 {
        self.elements[a].valence().saturating_sub(self.used_valence(a))
    }

    fn fill_hydrogens(&mut self) {
        for a in 0..self.elements.len() {
            if self.elements[a] == Element::H {
                continue;
            }
            for _ in 0..self.free(a) {
                self.add(Element::H, Some(a), 1);
            }
        }
    }

    fn hybridization(&self, a: usize) -> Hybridization {
        if let Some(h) = self.hybrid[a] {
            return h;
        }
        let mut orders: Vec<u8> = self.children[a].iter().map(|&c| self.order[c]).collect();
        if self.parent[a].is_some() {
            orders.push(self.order[a]);
        }
        let pi: u8 = orders.iter().map(|o| o - 1).sum();
        match (pi, self.elements[a]) {
            (0, Element::B) => Hybridization::Sp2,
            (0, _) => Hybridization::Sp3,
            (1, _) => Hybridization::Sp2,
            _ => Hybridization::Sp,
        }
    }

    fn bonds(&self) -> Vec<Bond> {
        (0..self.elements.len())
            .filter_map(|k| {
                self.parent[k].map(|p| Bond {
                    i: p.min(k),
                    j: p.max(k),
                    order: self.order[k],
                })
            })
            .collect()
    }
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn unit(a: [f64; 3]) -> [f64; 3] {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Places `d` so that |cd| = `bond`, angle bcd = `angle` and torsion abcd =
/// `torsion` (both in degrees).
fn place(a: [f64; 3], b: [f64; 3], c: [f64; 3], bond: f64, angle: f64, torsion: f64) -> [f64; 3] {
    let bc = unit(sub(c, b));
    let mut n = cross(sub(b, a), bc);
    if norm(n) < 1e-6 {
        let helper = if bc[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        n = cross(helper, bc);
    }
    let n = unit(n);
    let m = cross(n, bc);
    let (th, ph) = (angle.to_radians(), torsion.to_radians());
    let local = [-bond * th.cos(), bond * th.sin() * ph.cos(), bond * th.sin() * ph.sin()];
    [
        c[0] + local[0] * bc[0] + local[1] * m[0] + local[2] * n[0],
        c[1] + local[0] * bc[1] + local[1] * m[1] + local[2] * n[1],
        c[2] + local[0] * bc[2] + local[1] * m[2] + local[2] * n[2],
    ]
}

fn bond_length(a: Element, b: Element, order: u8) -> f64 {
    let f = match order {
        1 => 1.0,
        2 => 0.87,
        _ => 0.78,
    };
    (a.covalent_radius() + b.covalent_radius()) * f
}

/// Breadth-first placement; `None` when no clash-free conformation is found.
fn embed<R: Rng>(t: &Tree, rng: &mut R, attempts: usize) -> Option<Vec<[f64; 3]>> {
    let n = t.elements.len();
    for _ in 0..attempts {
        let mut pos = vec![[f64::NAN; 3]; n];
        pos[0] = [0.0; 3];
        let mut queue = std::collections::VecDeque::from([0usize]);
        while let Some(c) = queue.pop_front() {
            let kids = &t.children[c];
            if kids.is_empty() {
                continue;
            }
            let hyb = t.hybridization(c);
            let (b, a, todo): ([f64; 3], [f64; 3], &[usize]) = match t.parent[c] {
                Some(p) => {
                    let a = match t.parent[p] {
                        Some(g) => pos[g],
                        None => match t.children[p].iter().find(|&&s| s != c) {
                            Some(&s) if !pos[s][0].is_nan() => pos[s],
                            _ => [pos[p][0], pos[p][1] + 1.0, pos[p][2] + 0.3],
                        },
                    };
                    (pos[p], a, kids.as_slice())
                }
                None => {
                    let f = kids[0];
                    let l = bond_length(t.elements[c], t.elements[f], t.order[f]) + rng.random_range(-0.02..0.02);
                    pos[f] = [l, 0.0, 0.0];
                    queue.push_back(f);
                    (pos[f], [l, 1.0, 0.0], &kids[1..])
                }
            };
            let slots = hyb.slots();
            let base = t.torsion[c].unwrap_or_else(|| match hyb {
                Hybridization::Sp2 => *[0.0, 180.0].choose(rng).unwrap() + rng.random_range(-5.0..5.0),
                _ => rng.random_range(0.0..360.0),
            });
            for (k, &d) in todo.iter().enumerate() {
                let l = bond_length(t.elements[c], t.elements[d], t.order[d]) + rng.random_range(-0.02..0.02);
                let angle = hyb.angle() + if hyb == Hybridization::Sp { 0.0 } else { rng.random_range(-2.0..2.0) };
                let torsion = base + 360.0 * (k % slots) as f64 / slots as f64;
                pos[d] = place(a, b, pos[c], l, angle, torsion);
                queue.push_back(d);
            }
        }
        if !clashes(t, &pos) {
            return Some(pos);
        }
    }
    None
}

fn clashes(t: &Tree, pos: &[[f64; 3]]) -> bool {
    let n = pos.len();
    let mut near = vec![Vec::new(); n];
    for k in 0..n {
        if let Some(p) = t.parent[k] {
            near[k].push(p);
            near[p].push(k);
        }
    }
    for i in 0..n {
        if pos[i].iter().any(|x| !x.is_finite()) {
            return true;
        }
        for j in (i + 1)..n {
            let bonded_or_13 = near[i].contains(&j) || near[i].iter().any(|&m| near[m].contains(&j));
            if bonded_or_13 {
                continue;
            }
            let limit = match (t.elements[i] == Element::H, t.elements[j] == Element::H) {
                (true, true) => 1.5,
                (true, false) | (false, true) => 1.7,
                (false, false) => 2.2,
            };
            if norm(sub(pos[i], pos[j])) < limit {
                return true;
            }
        }
    }
    false
}

fn finish(t: &Tree, pos: Vec<[f64; 3]>) -> Molecule {
    let atoms = t
        .elements
        .iter()
        .zip(pos)
        .map(|(&element, p)| Atom {
            element,
            position: [canonical_f64(p[0]), canonical_f64(p[1]), canonical_f64(p[2])],
        })
        .collect();
    Molecule::new(atoms, t.bonds(), 0).expect("generated molecule is valid")
}

fn sample_element<R: Rng>(rng: &mut R, table: &[(Element, f64)], multivalent: bool) -> Element {
    let pool: Vec<&(Element, f64)> = table.iter().filter(|(e, _)| !multivalent || e.valence() > 1).collect();
    pool.choose_weighted(rng, |(_, w)| *w).map(|(e, _)| *e).unwrap_or(Element::C)
}

fn try_multiple(e: Element) -> u8 {
    match e {
        Element::C | Element::N => 3,
        Element::O | Element::S => 2,
        _ => 1,
    }
}

/// A random acyclic molecule (hydrogens filled to valence).
pub fn random_molecule<R: Rng>(rng: &mut R, cfg: &SynthConfig) -> Molecule {
    loop {
        let n = rng.random_range(cfg.min_heavy..=cfg.max_heavy.max(cfg.min_heavy));
        let mut t = Tree::new();
        t.add(sample_element(rng, &cfg.elements, n > 1), None, 1);
        let mut stuck = false;
        for k in 1..n {
            let open: Vec<usize> = (0..t.elements.len()).filter(|&a| t.free(a) > 0).collect();
            let total_free: u32 = open.iter().map(|&a| u32::from(t.free(a))).sum();
            let Some(&parent) = open.choose(rng) else {
                stuck = true;
                break;
            };
            let need_branch = total_free <= 1 && k + 1 < n;
            let e = sample_element(rng, &cfg.elements, need_branch);
            let mut order = 1;
            if rng.random_bool(cfg.multiple_bond_rate.clamp(0.0, 1.0)) {
                let cap = try_multiple(t.elements[parent]).min(try_multiple(e)).min(t.free(parent));
                let cap = cap.min(e.valence() - u8::from(need_branch));
                if cap >= 2 {
                    order = if cap >= 3 && rng.random_bool(0.2) { 3 } else { 2 };
                }
            }
            t.add(e, Some(parent), order);
        }
        if stuck {
            continue;
        }
        t.fill_hydrogens();
        if let Some(pos) = embed(&t, rng, 40) {
            return finish(&t, pos);
        }
    }
}

/// Backbone atoms of one residue.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Residue {
    pub n: usize,
    pub ca: usize,
    pub c: usize,
}

/// A peptide-like chain with the dihedrals used to build it.
#[derive(Clone, Debug, PartialEq)]
pub struct Chain {
    pub molecule: Molecule,
    pub residues: Vec<Residue>,
    /// Requested (φ, ψ) per residue, degrees.
    pub target_dihedrals: Vec<(f64, f64)>,
}

#[derive(Clone, Copy)]
enum SideChain {
    Gly,
    Ala,
    Ser,
    Cys,
    Val,
}

impl SideChain {
    fn heavy(self) -> usize {
        match self {
            SideChain::Gly => 0,
            SideChain::Ala => 1,
            SideChain::Ser | SideChain::Cys => 2,
            SideChain::Val => 3,
        }
    }
}

/// Secondary-structure presets for chain dihedrals, degrees.
pub const HELIX: (f64, f64) = (-57.0, -47.0);
pub const SHEET: (f64, f64) = (-120.0, 130.0);

/// A chain with heavy-atom count in `[min_heavy, max_heavy]`; each residue
/// draws (φ, ψ) near a helix or sheet preset.
pub fn peptide_chain<R: Rng>(rng: &mut R, min_heavy: usize, max_heavy: usize) -> Chain {
    loop {
        let target = rng.random_range(min_heavy..=max_heavy.max(min_heavy));
        let mut sides = Vec::new();
        let mut heavy = 1;
        while heavy + 4 <= target {
            let options = [SideChain::Gly, SideChain::Ala, SideChain::Ser, SideChain::Cys, SideChain::Val];
            let fit: Vec<SideChain> = options.into_iter().filter(|s| heavy + 4 + s.heavy() <= target).collect();
            let s = *fit.choose(rng).unwrap();
            heavy += 4 + s.heavy();
            sides.push(s);
        }
        if heavy < min_heavy || sides.len() < 2 {
            continue;
        }
        let preset = if rng.random_bool(0.5) { HELIX } else { SHEET };
        let dihedrals: Vec<(f64, f64)> = sides
            .iter()
            .map(|_| (preset.0 + rng.random_range(-10.0..10.0), preset.1 + rng.random_range(-10.0..10.0)))
            .collect();
        let (t, residues) = chain_tree(&sides, &dihedrals);
        if let Some(pos) = embed(&t, rng, 60) {
            return Chain {
                molecule: finish(&t, pos),
                residues,
                target_dihedrals: dihedrals,
            };
        }
    }
}

fn chain_tree(sides: &[SideChain], dihedrals: &[(f64, f64)]) -> (Tree, Vec<Residue>) {
    let mut t = Tree::new();
    let mut residues = Vec::new();
    let mut prev_c: Option<usize> = None;
    for (r, (&side, &(phi, _))) in sides.iter().zip(dihedrals).enumerate() {
        let n = t.add(Element::N, prev_c, 1);
        if let Some(pc) = prev_c {
            t.torsion[pc] = Some(dihedrals[r - 1].1);
            t.torsion[n] = Some(180.0);
            t.hybrid[n] = Some(Hybridization::Sp2);
        }
        let ca = t.add(Element::C, Some(n), 1);
        t.torsion[ca] = Some(phi);
        let c = t.add(Element::C, Some(ca), 1);
        match side {
            SideChain::Gly => {}
            SideChain::Ala => {
                t.add(Element::C, Some(ca), 1);
            }
            SideChain::Ser | SideChain::Cys => {
                let cb = t.add(Element::C, Some(ca), 1);
                let x = if matches!(side, SideChain::Ser) { Element::O } else { Element::S };
                t.add(x, Some(cb), 1);
            }
            SideChain::Val => {
                let cb = t.add(Element::C, Some(ca), 1);
                t.add(Element::C, Some(cb), 1);
                t.add(Element::C, Some(cb), 1);
            }
        }
        residues.push(Residue { n, ca, c });
        prev_c = Some(c);
    }
    let last = prev_c.unwrap();
    t.torsion[last] = Some(dihedrals[dihedrals.len() - 1].1);
    t.add(Element::O, Some(last), 1);
    for res in &residues {
        t.add(Element::O, Some(res.c), 2);
    }
    t.fill_hydrogens();
    (t, residues)
}

/// Torsion angle abcd in degrees, in (-180, 180].
pub fn dihedral(a: [f64; 3], b: [f64; 3], c: [f64; 3], d: [f64; 3]) -> f64 {
    let b1 = sub(b, a);
    let b2 = sub(c, b);
    let b3 = sub(d, c);
    let n1 = cross(b1, b2);
    let n2 = cross(b2, b3);
    let m1 = cross(n1, unit(b2));
    let x = n1[0] * n2[0] + n1[1] * n2[1] + n1[2] * n2[2];
    let y = m1[0] * n2[0] + m1[1] * n2[1] + m1[2] * n2[2];
    (-y).atan2(x).to_degrees()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn molecules_are_deterministic_and_sized() {
        let cfg = SynthConfig::default();
        let a = dataset(7, 30, &cfg);
        assert_eq!(a, dataset(7, 30, &cfg));
        for m in &a {
            let h = m.heavy_atom_count();
            assert!((cfg.min_heavy..=cfg.max_heavy).contains(&h), "{h} heavy atoms");
            let adj = m.adjacency();
            for (k, atom) in m.atoms.iter().enumerate() {
                let used: u8 = adj[k].iter().map(|&(_, o)| o).sum();
                assert_eq!(used, atom.element.valence());
            }
        }
    }

    #[test]
    fn bond_lengths_are_covalent() {
        for m in dataset(3, 20, &SynthConfig::default()) {
            for b in &m.bonds {
                let d = m.distance(b.i, b.j);
                let r = m.atoms[b.i].element.covalent_radius() + m.atoms[b.j].element.covalent_radius();
                assert!(d > 0.7 * r && d < 1.05 * r, "bond length {d}");
            }
        }
    }

    #[test]
    fn chains_follow_requested_dihedrals() {
        let mut rng = item_rng(1, "chain", 0);
        let chain = peptide_chain(&mut rng, 50, 80);
        let m = &chain.molecule;
        assert!((50..=80).contains(&m.heavy_atom_count()));
        let p = |k: usize| m.atoms[k].position;
        for r in 1..chain.residues.len() - 1 {
            let (prev, cur, next) = (chain.residues[r - 1], chain.residues[r], chain.residues[r + 1]);
            let phi = dihedral(p(prev.c), p(cur.n), p(cur.ca), p(cur.c));
            let psi = dihedral(p(cur.n), p(cur.ca), p(cur.c), p(next.n));
            let (tp, ts) = chain.target_dihedrals[r];
            let diff = |a: f64, b: f64| ((a - b + 540.0) % 360.0 - 180.0).abs();
            assert!(diff(phi, tp) < 4.0, "phi {phi} vs {tp}");
            assert!(diff(psi, ts) < 4.0, "psi {psi} vs {ts}");
        }
    }

    #[test]
    fn dihedral_of_known_geometry() {
        let a = [1.0, 0.0, 0.0];
        let b = [0.0, 0.0, 0.0];
        let c = [0.0, 1.0, 0.0];
        assert!((dihedral(a, b, c, [1.0, 1.0, 0.0])).abs() < 1e-9);
        assert!((dihedral(a, b, c, [0.0, 1.0, 1.0]).abs() - 90.0).abs() < 1e-9);
        assert!((dihedral(a, b, c, [-1.0, 1.0, 0.0]).abs() - 180.0).abs() < 1e-9);
    }
}
