use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{Batch, GraphInputs};
use super::layers::{apply_bn_stats, Ctx};
use super::lone_pair::{ClampWarning, LonePairModel};
use super::multitask::{
    ForwardTrace, MultitaskModel, Scaler, SCALE_AB, SCALE_ATOM, SCALE_BOND, SCALE_INTER, SCALE_LP_OCC,
};
use super::targets::BatchTargets;
use super::ModelError;
use crate::chem_io::{canonical_f64, AtomContribution, Hybrid, Molecule, NpaEntry, OrbitalSide};
use crate::graph::{build_extended_graph, build_molecular_graph, BondTargets, ExtendedGraph, InteractionEdge, LpTarget, SimgGraph};
use crate::losses::{total_loss, LossError, LossOptions};
use crate::synth::item_rng;
use crate::tensor::{Adam, AdamConfig, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultitaskTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Final learning rate as a fraction of `lr` (cosine decay).
    pub lr_floor: f64,
    pub seed: u64,
    pub perform_matching: bool,
    pub clip_norm: f64,
}

impl Default for MultitaskTrainConfig {
    fn default() -> Self {
        MultitaskTrainConfig {
            epochs: 20,
            batch_size: 32,
            lr: 3e-3,
            lr_floor: 0.05,
            seed: 0,
            perform_matching: true,
            clip_norm: 5.0,
        }
    }
}

/// One optimizer step's loss terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRecord {
    pub step: usize,
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
    pub total: f64,
}

impl LossRecord {
    pub const HEADER: &'static str = "step\talpha\tbeta\tgamma\tdelta\ttotal";

    pub fn line(&self) -> String {
        format!("{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}", self.step, self.alpha, self.beta, self.gamma, self.delta, self.total)
    }
}

/// Seed of training step `step`, used for hidden states and negatives.
pub fn step_seed(seed: u64, step: usize) -> u64 {
    let mut rng = item_rng(seed, "step", step as u64);
    rand::Rng::random(&mut rng)
}

impl From<LossError> for ModelError {
    fn from(e: LossError) -> Self {
        ModelError::Config(e.to_string())
    }
}

/// Fits the target scaler on `data` and trains; returns one record per step.
pub fn train_multitask(model: &mut MultitaskModel, data: &[SimgGraph], cfg: &MultitaskTrainConfig, mut on_step: impl FnMut(&LossRecord)) -> Result<Vec<LossRecord>, ModelError> {
    let scaler = Scaler::fit(data);
    model.set_scaler(&scaler);
    let inputs: Vec<GraphInputs> = data.iter().map(|g| GraphInputs::new(&g.graph)).collect();
    let mut adam = Adam::new(
        &model.store,
        AdamConfig {
            lr: cfg.lr,
            clip_norm: Some(cfg.clip_norm),
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut records = Vec::new();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / cfg.epochs.max(1) as f64;
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        adam.config.lr = cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * cosine);
        order.shuffle(&mut item_rng(cfg.seed, "mt-shuffle", epoch as u64));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let graphs: Vec<&SimgGraph> = chunk.iter().map(|&i| &data[i]).collect();
            let items: Vec<&GraphInputs> = chunk.iter().map(|&i| &inputs[i]).collect();
            let batch = Batch::new(&items);
            let targets = BatchTargets::new(&graphs, &items, &scaler);
            let seed = step_seed(cfg.seed, step);
            let mut ctx = Ctx::new(&model.store, true);
            let (bundle, _) = model.forward(&mut ctx, &batch, seed);
            let opts = LossOptions {
                perform_matching: cfg.perform_matching,
                negative_seed: seed,
                ..LossOptions::default()
            };
            let terms = total_loss(&mut ctx.tape, &bundle, &batch, &targets, &opts)?;
            let [alpha, beta, gamma, delta, total] = terms.values(&ctx.tape);
            let grads = ctx.tape.backward(terms.total)?;
            let pg = ctx.tape.param_grads(&grads, &model.store);
            let stats = ctx.take_bn_stats();
            drop(ctx);
            apply_bn_stats(&mut model.store, &stats);
            adam.step(&mut model.store, &pg)?;
            let rec = LossRecord {
                step,
                alpha,
                beta,
                gamma,
                delta,
                total,
            };
            on_step(&rec);
            records.push(rec);
            step += 1;
        }
    }
    Ok(records)
}

/// Predicted graph plus the link probability of every candidate pair.
#[derive(Clone, Debug)]
pub struct GraphPrediction {
    pub simg: SimgGraph,
    pub inputs: GraphInputs,
    pub link_probs: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn hybrid_percent(p: &[f64]) -> Hybrid {
    Hybrid::from_array([0, 1, 2, 3].map(|k| canonical_f64(100.0 * p[k])))
}

/// Runs the multitask model on extended graphs (in batches of
/// `batch_size`). Edges with link probability above `tau` become
/// interactions.
pub fn predict_graphs(model: &MultitaskModel, graphs: &[&ExtendedGraph], seed: u64, tau: f64, batch_size: usize) -> Vec<GraphPrediction> {
    let scaler = model.scaler();
    let mut out = Vec::with_capacity(graphs.len());
    for chunk in graphs.chunks(batch_size.max(1)) {
        let inputs: Vec<GraphInputs> = chunk.iter().map(|g| GraphInputs::new(g)).collect();
        let refs: Vec<&GraphInputs> = inputs.iter().collect();
        let batch = Batch::new(&refs);
        let mut ctx = Ctx::new(&model.store, false);
        let (bundle, _) = model.forward(&mut ctx, &batch, seed);
        let t = &ctx.tape;
        let (atom, lp_chars, lp_occ, bond) = (t.value(bundle.atom_preds), t.value(bundle.lp_chars), t.value(bundle.lp_occ), t.value(bundle.bond_preds));
        let ab_chars = [t.value(bundle.ab_chars[0]), t.value(bundle.ab_chars[1])];
        let (ab_reg, links, inter) = (t.value(bundle.ab_reg), t.value(bundle.link_logits), t.value(bundle.interaction_preds));
        let (mut atom_off, mut lp_off, mut bond_off, mut ab_off) = (0, 0, 0, 0);
        for (gi, (g, inp)) in chunk.iter().zip(inputs).enumerate() {
            let atom_targets = (0..g.atoms.len())
                .map(|a| {
                    let v = [0, 1, 2, 3].map(|k| canonical_f64(scaler.inverse(SCALE_ATOM + k, atom.get(atom_off + a, k))));
                    NpaEntry {
                        charge: v[0],
                        core: v[1],
                        valence: v[2],
                        total: v[3],
                    }
                })
                .collect();
            let lp_targets = (0..g.lp_nodes.len())
                .map(|k| LpTarget {
                    character: hybrid_percent(lp_chars.row_slice(lp_off + k)),
                    occupancy: canonical_f64(scaler.inverse(SCALE_LP_OCC, lp_occ.get(lp_off + k, 0)).clamp(1e-3, 2.0)),
                })
                .collect();
            let mut sides: Vec<[[Option<(Hybrid, f64, f64)>; 2]; 2]> = vec![[[None; 2]; 2]; g.bond_nodes.len()];
            for (e, &(a, k)) in g.atom_bond_edges.iter().enumerate() {
                let r = ab_off + e;
                let side = usize::from(g.bond_nodes[k].atom_j == a);
                for s in 0..2 {
                    let pol = scaler.inverse(SCALE_AB + 2 * s, ab_reg.get(r, 2 * s)).max(0.0);
                    let coef = scaler.inverse(SCALE_AB + 2 * s + 1, ab_reg.get(r, 2 * s + 1));
                    sides[k][s][side] = Some((hybrid_percent(ab_chars[s].row_slice(r)), pol, coef));
                }
            }
            let bond_targets = (0..g.bond_nodes.len())
                .map(|k| {
                    let side = |s: usize| {
                        let [a, b] = sides[k][s].map(|x| x.expect("both atoms of a bond node"));
                        let total = a.1 + b.1;
                        let (pa, pb) = if total > 0.0 { (100.0 * a.1 / total, 100.0 * b.1 / total) } else { (50.0, 50.0) };
                        let occ = scaler.inverse(SCALE_BOND + s, bond.get(bond_off + k, s)).clamp(0.0, 2.0);
                        OrbitalSide {
                            atoms: [
                                AtomContribution {
                                    character: a.0,
                                    polarization: canonical_f64(pa),
                                    coefficient: canonical_f64(a.2),
                                },
                                AtomContribution {
                                    character: b.0,
                                    polarization: canonical_f64(pb),
                                    coefficient: canonical_f64(b.2),
                                },
                            ],
                            occupancy: canonical_f64(occ),
                        }
                    };
                    BondTargets {
                        bonding: side(0),
                        antibonding: side(1),
                    }
                })
                .collect();
            let (c0, nc) = batch.cand_ranges[gi];
            let probs: Vec<f64> = (0..nc).map(|c| sigmoid(links.get(c0 + c, 0))).collect();
            let mut interactions: Vec<InteractionEdge> = inp
                .candidates
                .iter()
                .enumerate()
                .filter(|(c, _)| probs[*c] > tau)
                .map(|(c, cand)| {
                    let v = [0, 1, 2].map(|k| scaler.inverse(SCALE_INTER + k, inter.get(c0 + c, k)));
                    InteractionEdge {
                        donor: inp.orbital_ref(cand.donor),
                        acceptor: inp.orbital_ref(cand.acceptor),
                        e2: canonical_f64(v[0].max(0.0)),
                        energy_gap: canonical_f64(v[1]),
                        fock_element: canonical_f64(v[2]),
                    }
                })
                .collect();
            interactions.sort_by(|a, b| (a.donor, a.acceptor).cmp(&(b.donor, b.acceptor)));
            atom_off += g.atoms.len();
            lp_off += g.lp_nodes.len();
            bond_off += g.bond_nodes.len();
            ab_off += g.atom_bond_edges.len();
            out.push(GraphPrediction {
                simg: SimgGraph {
                    graph: (*g).clone(),
                    atom_targets,
                    lp_targets,
                    bond_targets,
                    interactions,
                },
                inputs: inp,
                link_probs: probs,
            });
        }
    }
    out
}

/// Molecule → lone-pair counts → extended graph → SIMG*.
pub fn predict_simg(m: &Molecule, lp: &LonePairModel, mt: &MultitaskModel, seed: u64, tau: f64) -> Result<(SimgGraph, Vec<ClampWarning>), ModelError> {
    let mg = build_molecular_graph(m);
    let (counts, warnings) = lp.predict_graph(&mg);
    for w in &warnings {
        log::warn!("atom {}: type-1 count {} clamped to total {}", w.atom, w.type1, w.total);
    }
    let eg = build_extended_graph(&mg, &counts)?;
    let mut p = predict_graphs(mt, &[&eg], seed, tau, 1);
    Ok((p.remove(0).simg, warnings))
}

/// Hidden-state trajectory as tab-separated text: graph, node, step, then
/// the hidden-state components.
pub fn export_trajectory(trace: &ForwardTrace, batch: &Batch, inputs: &[&GraphInputs]) -> String {
    let mut s = String::from("graph\tnode\tstep");
    let width = trace.hidden.first().map_or(0, Tensor::cols);
    for k in 0..width {
        write!(s, "\th{k}").unwrap();
    }
    s.push('\n');
    for (step, h) in trace.hidden.iter().enumerate() {
        for (g, &(start, len)) in batch.orbital_ranges.iter().enumerate() {
            for k in 0..len {
                let r = inputs[g].orbital_ref(k);
                let kind = if r.kind == crate::graph::NodeKind::LonePair { "lp" } else { "bond" };
                write!(s, "{g}\t{kind}{}\t{step}", r.index).unwrap();
                for v in h.row_slice(start + k) {
                    write!(s, "\t{v:.6}").unwrap();
                }
                s.push('\n');
            }
        }
    }
    s
}
