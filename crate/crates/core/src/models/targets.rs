use super::features::GraphInputs;
use super::multitask::{Scaler, SCALE_AB, SCALE_ATOM, SCALE_BOND, SCALE_COLS, SCALE_INTER, SCALE_LP_OCC};
use crate::chem_io::Hybrid;
use crate::graph::SimgGraph;
use crate::tensor::Tensor;

/// Label tensors aligned with a [`super::Batch`] built from the same graphs
/// in the same order. Regression columns are standardized.
#[derive(Clone, Debug)]
pub struct BatchTargets {
    pub atom: Tensor,
    /// Character fractions (rows sum to 1).
    pub lp_chars: Tensor,
    pub lp_occ: Tensor,
    pub bond: Tensor,
    pub ab_chars: [Tensor; 2],
    pub ab_reg: Tensor,
    /// (donor orbital row, acceptor orbital row, standardized targets).
    pub interactions: Vec<(usize, usize, [f64; 3])>,
}

fn fractions(h: &Hybrid) -> [f64; 4] {
    let a = h.to_array();
    let s: f64 = a.iter().sum();
    if s > 0.0 {
        a.map(|v| v / s)
    } else {
        [0.25; 4]
    }
}

impl BatchTargets {
    pub fn new(graphs: &[&SimgGraph], inputs: &[&GraphInputs], scaler: &Scaler) -> Self {
        let (mut atom, mut lp_chars, mut lp_occ, mut bond) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let (mut ab0, mut ab1, mut ab_reg) = (Vec::new(), Vec::new(), Vec::new());
        let mut interactions = Vec::new();
        let mut orb_off = 0;
        for (g, gi) in graphs.iter().zip(inputs) {
            for a in &g.atom_targets {
                for (k, v) in a.to_array().into_iter().enumerate() {
                    atom.push(scaler.forward(SCALE_ATOM + k, v));
                }
            }
            for t in &g.lp_targets {
                lp_chars.extend_from_slice(&fractions(&t.character));
                lp_occ.push(scaler.forward(SCALE_LP_OCC, t.occupancy));
            }
            for t in &g.bond_targets {
                bond.push(scaler.forward(SCALE_BOND, t.bonding.occupancy));
                bond.push(scaler.forward(SCALE_BOND + 1, t.antibonding.occupancy));
            }
            for [b, a] in g.atom_bond_edge_targets() {
                ab0.extend_from_slice(&fractions(&b.character));
                ab1.extend_from_slice(&fractions(&a.character));
                for (k, v) in [b.polarization, b.coefficient, a.polarization, a.coefficient].into_iter().enumerate() {
                    ab_reg.push(scaler.forward(SCALE_AB + k, v));
                }
            }
            for x in &g.interactions {
                let t = x.targets();
                interactions.push((
                    orb_off + gi.orbital(x.donor),
                    orb_off + gi.orbital(x.acceptor),
                    [0, 1, 2].map(|k| scaler.forward(SCALE_INTER + k, t[k])),
                ));
            }
            orb_off += gi.n_orbitals();
        }
        let rows = |v: Vec<f64>, c: usize| Tensor::new(v.len() / c, c, v).unwrap();
        BatchTargets {
            atom: rows(atom, 4),
            lp_chars: rows(lp_chars, 4),
            lp_occ: rows(lp_occ, 1),
            bond: rows(bond, 2),
            ab_chars: [rows(ab0, 4), rows(ab1, 4)],
            ab_reg: rows(ab_reg, 4),
            interactions,
        }
    }
}

impl Scaler {
    /// Per-column mean and standard deviation over a training set; columns
    /// with (near) zero spread keep unit scale.
    pub fn fit(graphs: &[SimgGraph]) -> Self {
        let mut cols: Vec<Vec<f64>> = vec![Vec::new(); SCALE_COLS];
        for g in graphs {
            for a in &g.atom_targets {
                for (k, v) in a.to_array().into_iter().enumerate() {
                    cols[SCALE_ATOM + k].push(v);
                }
            }
            for t in &g.lp_targets {
                cols[SCALE_LP_OCC].push(t.occupancy);
            }
            for t in &g.bond_targets {
                cols[SCALE_BOND].push(t.bonding.occupancy);
                cols[SCALE_BOND + 1].push(t.antibonding.occupancy);
            }
            for [b, a] in g.atom_bond_edge_targets() {
                for (k, v) in [b.polarization, b.coefficient, a.polarization, a.coefficient].into_iter().enumerate() {
                    cols[SCALE_AB + k].push(v);
                }
            }
            for x in &g.interactions {
                for (k, v) in x.targets().into_iter().enumerate() {
                    cols[SCALE_INTER + k].push(v);
                }
            }
        }
        let mut s = Scaler::identity();
        for (k, c) in cols.iter().enumerate() {
            if c.is_empty() {
                continue;
            }
            let n = c.len() as f64;
            let mean = c.iter().sum::<f64>() / n;
            let var = c.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            s.mean[k] = mean;
            s.std[k] = if var.sqrt() > 1e-6 { var.sqrt() } else { 1.0 };
        }
        s
    }
}
