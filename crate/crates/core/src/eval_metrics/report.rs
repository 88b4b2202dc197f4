use std::collections::HashSet;
use std::fmt::Write as _;

use super::{auroc, binned_f1, kl_divergence, mean_auroc, regression_metrics, BinnedCandidate, BinnedF1Table, Confusion, MetricError, RegressionMetrics};
use crate::chem_io::Hybrid;
use crate::losses::hungarian;
use crate::models::GraphPrediction;
use crate::graph::SimgGraph;

pub const SPATIAL_EDGES: [f64; 6] = [0.0, 1.5, 2.0, 2.5, 3.0, 3.5];
pub const GRAPH_EDGES: [u32; 5] = [0, 2, 3, 4, 5];

/// Predictions scored against ground-truth graphs with the same topology.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub molecules: usize,
    pub charge: RegressionMetrics,
    /// Mean KL(true ‖ predicted) of lone-pair character, lone pairs
    /// matched within each atom.
    pub lp_kl: f64,
    pub lone_pairs: usize,
    pub auroc: Option<f64>,
    pub mean_auroc: Option<f64>,
    pub links: Confusion,
    pub candidates: Vec<BinnedCandidate>,
    pub binned: BinnedF1Table,
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

pub fn evaluate_predictions(preds: &[GraphPrediction], truth: &[SimgGraph], tau: f64) -> Result<EvalReport, MetricError> {
    if preds.len() != truth.len() {
        return Err(MetricError::Length(preds.len(), truth.len()));
    }
    let (mut pq, mut tq) = (Vec::new(), Vec::new());
    let (mut kl, mut n_lp) = (0.0, 0usize);
    let (mut scores, mut labels, mut groups, mut candidates) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (p, t) in preds.iter().zip(truth) {
        if p.simg.graph != t.graph {
            return Err(MetricError::Benchmark("prediction and truth have different extended graphs".into()));
        }
        for (a, b) in p.simg.atom_targets.iter().zip(&t.atom_targets) {
            pq.push(a.charge);
            tq.push(b.charge);
        }
        for (_, members) in t.graph.lp_groups() {
            let cost: Vec<Vec<f64>> = members
                .iter()
                .map(|&i| members.iter().map(|&j| kl_divergence(&fractions(&t.lp_targets[j].character), &fractions(&p.simg.lp_targets[i].character))).collect())
                .collect();
            let (_, c) = hungarian(&cost).map_err(|e| MetricError::Benchmark(e.to_string()))?;
            kl += c;
            n_lp += members.len();
        }
        let positives: HashSet<(usize, usize)> = t.interactions.iter().map(|x| (p.inputs.orbital(x.donor), p.inputs.orbital(x.acceptor))).collect();
        let (mut s, mut l) = (Vec::new(), Vec::new());
        for (c, &prob) in p.inputs.candidates.iter().zip(&p.link_probs) {
            let y = positives.contains(&(c.donor, c.acceptor));
            s.push(prob);
            l.push(y);
            candidates.push(BinnedCandidate {
                distance: c.distance,
                graph_distance: c.graph_distance,
                predicted: prob > tau,
                truth: y,
            });
        }
        scores.extend_from_slice(&s);
        labels.extend_from_slice(&l);
        groups.push((s, l));
    }
    let binned = binned_f1(&candidates, &SPATIAL_EDGES, &GRAPH_EDGES)?;
    Ok(EvalReport {
        molecules: preds.len(),
        charge: regression_metrics(&pq, &tq)?,
        lp_kl: if n_lp > 0 { kl / n_lp as f64 } else { 0.0 },
        lone_pairs: n_lp,
        auroc: auroc(&scores, &labels).ok(),
        mean_auroc: mean_auroc(&groups).ok().map(|m| m.mean),
        links: binned.total(),
        candidates,
        binned,
    })
}

impl EvalReport {
    /// `name<TAB>value` lines; absent values print as NA.
    pub fn to_text(&self) -> String {
        let opt = |v: Option<f64>| v.map_or("NA".to_string(), |x| format!("{x:.6}"));
        let mut s = String::new();
        writeln!(s, "molecules\t{}", self.molecules).unwrap();
        writeln!(s, "charge_mae\t{:.6}", self.charge.mae).unwrap();
        writeln!(s, "charge_rmse\t{:.6}", self.charge.rmse).unwrap();
        writeln!(s, "charge_r2\t{}", opt(self.charge.r2)).unwrap();
        writeln!(s, "lone_pairs\t{}", self.lone_pairs).unwrap();
        writeln!(s, "lp_kl\t{:.6}", self.lp_kl).unwrap();
        writeln!(s, "candidates\t{}", self.candidates.len()).unwrap();
        writeln!(s, "link_auroc\t{}", opt(self.auroc)).unwrap();
        writeln!(s, "link_mean_auroc\t{}", opt(self.mean_auroc)).unwrap();
        writeln!(s, "link_f1\t{}", opt(self.links.f1())).unwrap();
        s
    }
}
