//! Regression and classification metrics, distance-binned F1, backbone
//! dihedrals, interaction matrices and the downstream benchmark.

mod downstream;
mod report;

pub use downstream::{
    bench_graph, content_split, downstream_benchmark, BenchConfig, BenchGraph, BenchResult, Split, Variant,
};
pub use report::{evaluate_predictions, EvalReport, GRAPH_EDGES, SPATIAL_EDGES};

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::chem_io::Molecule;
use crate::graph::{NodeKind, NodeRef, SimgGraph};
use crate::synth::dihedral;

#[derive(Clone, Debug, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need both classes present")]
    SingleClass,
    #[error("bin edges must be strictly increasing")]
    BinEdges,
    #[error("atom {0} does not exist")]
    MissingAtom(usize),
    #[error("{0}")]
    Benchmark(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub rmse: f64,
    /// `None` when the truth has fewer than two values or zero variance.
    pub r2: Option<f64>,
}

pub fn regression_metrics(pred: &[f64], truth: &[f64]) -> Result<RegressionMetrics, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::Length(pred.len(), truth.len()));
    }
    let n = truth.len() as f64;
    if truth.is_empty() {
        return Ok(RegressionMetrics {
            mae: 0.0,
            rmse: 0.0,
            r2: None,
        });
    }
    let mae = pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / n;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let mean = truth.iter().sum::<f64>() / n;
    let sst: f64 = truth.iter().map(|t| (t - mean) * (t - mean)).sum();
    let r2 = (truth.len() >= 2 && sst > 0.0).then(|| 1.0 - sse / sst);
    Ok(RegressionMetrics {
        mae,
        rmse: (sse / n).sqrt(),
        r2,
    })
}

/// Σ p log(p / q), terms with p = 0 contributing nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).filter(|(a, _)| **a > 0.0).map(|(a, b)| a * (a / b.max(1e-300)).ln()).sum()
}

/// Rank-based AUROC; tied scores earn half credit.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j + 1) as f64 / 2.0;
        rank_sum += avg_rank * order[i..j].iter().filter(|&&k| labels[k]).count() as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanAuroc {
    pub mean: f64,
    pub groups: usize,
    /// Groups skipped because only one class occurs.
    pub skipped: usize,
}

/// Mean of per-group AUROCs over groups containing both classes.
pub fn mean_auroc(groups: &[(Vec<f64>, Vec<bool>)]) -> Result<MeanAuroc, MetricError> {
    let mut total = 0.0;
    let (mut used, mut skipped) = (0, 0);
    for (s, l) in groups {
        match auroc(s, l) {
            Ok(a) => {
                total += a;
                used += 1;
            }
            Err(MetricError::SingleClass) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(MetricError::SingleClass);
    }
    Ok(MeanAuroc {
        mean: total / used as f64,
        groups: used,
        skipped,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_pairs(pred: &[bool], truth: &[bool]) -> Result<Self, MetricError> {
        if pred.len() != truth.len() {
            return Err(MetricError::Length(pred.len(), truth.len()));
        }
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(truth) {
            c.add(p, t);
        }
        Ok(c)
    }

    pub fn add(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, o: &Confusion) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.tn += o.tn;
        self.fn_ += o.fn_;
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            return 0.0;
        }
        (self.tp + self.tn) as f64 / self.total() as f64
    }

    pub fn precision(&self) -> f64 {
        if self.tp + self.fp == 0 {
            return 0.0;
        }
        self.tp as f64 / (self.tp + self.fp) as f64
    }

    pub fn recall(&self) -> f64 {
        if self.tp + self.fn_ == 0 {
            return 0.0;
        }
        self.tp as f64 / (self.tp + self.fn_) as f64
    }

    /// `None` when there are neither true nor predicted positives.
    pub fn f1(&self) -> Option<f64> {
        let d = 2 * self.tp + self.fp + self.fn_;
        (d > 0).then(|| 2.0 * self.tp as f64 / d as f64)
    }
}

/// (recall, precision) at every distinct score threshold, highest first.
pub fn pr_curve(scores: &[f64], labels: &[bool]) -> Result<Vec<(f64, f64)>, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::Length(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp as f64 / pos as f64, tp as f64 / (tp + fp) as f64));
    }
    Ok(out)
}

/// One candidate pair for distance-binned evaluation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinnedCandidate {
    pub distance: f64,
    pub graph_distance: u32,
    pub predicted: bool,
    pub truth: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct F1Cell {
    pub confusion: Confusion,
    pub support: usize,
    pub f1: Option<f64>,
}

/// F1 per (spatial bin, graph-distance bin). Bin `i` covers
/// [edge_i, edge_{i+1}); values below the first edge fall in the first bin
/// and the last bin is open-ended.
#[derive(Clone, Debug, PartialEq)]
pub struct BinnedF1Table {
    pub spatial_edges: Vec<f64>,
    pub graph_edges: Vec<u32>,
    /// cells[spatial][graph]
    pub cells: Vec<Vec<F1Cell>>,
}

fn bin_of<T: PartialOrd>(edges: &[T], v: T) -> usize {
    edges.iter().skip(1).take_while(|e| v >= **e).count()
}

pub fn binned_f1(cands: &[BinnedCandidate], spatial_edges: &[f64], graph_edges: &[u32]) -> Result<BinnedF1Table, MetricError> {
    if spatial_edges.is_empty() || graph_edges.is_empty() || spatial_edges.windows(2).any(|w| w[0] >= w[1]) || graph_edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(MetricError::BinEdges);
    }
    let mut counts = vec![vec![Confusion::default(); graph_edges.len()]; spatial_edges.len()];
    for c in cands {
        counts[bin_of(spatial_edges, c.distance)][bin_of(graph_edges, c.graph_distance)].add(c.predicted, c.truth);
    }
    let cells = counts
        .into_iter()
        .map(|row| {
            row.into_iter()
                .map(|confusion| F1Cell {
                    confusion,
                    support: confusion.total(),
                    f1: confusion.f1(),
                })
                .collect()
        })
        .collect();
    Ok(BinnedF1Table {
        spatial_edges: spatial_edges.to_vec(),
        graph_edges: graph_edges.to_vec(),
        cells,
    })
}

impl BinnedF1Table {
    pub fn total(&self) -> Confusion {
        let mut c = Confusion::default();
        for cell in self.cells.iter().flatten() {
            c.merge(&cell.confusion);
        }
        c
    }

    /// Tab-separated cells: spatial bin start, graph bin start, support, F1.
    pub fn to_text(&self) -> String {
        let mut s = String::from("distance_from\tgraph_distance_from\tsupport\ttp\tfp\tfn\tf1\n");
        for (i, row) in self.cells.iter().enumerate() {
            for (j, c) in row.iter().enumerate() {
                let f1 = c.f1.map_or("NA".to_string(), |v| format!("{v:.4}"));
                writeln!(
                    s,
                    "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                    self.spatial_edges[i], self.graph_edges[j], c.support, c.confusion.tp, c.confusion.fp, c.confusion.fn_, f1
                )
                .unwrap();
            }
        }
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BackboneDihedral {
    pub residue: usize,
    /// φ(C'ᵢ₋₁, Nᵢ, Cαᵢ, C'ᵢ) in degrees; absent for the first residue.
    pub phi: Option<f64>,
    /// ψ(Nᵢ, Cαᵢ, C'ᵢ, Nᵢ₊₁) in degrees; absent for the last residue.
    pub psi: Option<f64>,
}

/// φ/ψ per residue from (N, Cα, C') atom indices.
pub fn backbone_dihedrals(m: &Molecule, backbone: &[(usize, usize, usize)]) -> Result<Vec<BackboneDihedral>, MetricError> {
    let pos = |i: usize| m.atoms.get(i).map(|a| a.position).ok_or(MetricError::MissingAtom(i));
    let mut out = Vec::with_capacity(backbone.len());
    for (r, &(n, ca, c)) in backbone.iter().enumerate() {
        let (pn, pca, pc) = (pos(n)?, pos(ca)?, pos(c)?);
        let phi = match r.checked_sub(1) {
            Some(p) => Some(dihedral(pos(backbone[p].2)?, pn, pca, pc)),
            None => None,
        };
        let psi = match backbone.get(r + 1) {
            Some(next) => Some(dihedral(pn, pca, pc, pos(next.0)?)),
            None => None,
        };
        out.push(BackboneDihedral { residue: r, phi, psi });
    }
    Ok(out)
}

/// Dense 0/1 matrix over lone-pair then bond nodes; `m[i][j] = 1` iff node
/// `j` donates into node `i`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InteractionMatrix {
    pub n_lp: usize,
    pub n_bond: usize,
    pub m: Vec<Vec<u8>>,
}

fn node_position(n_lp: usize, r: NodeRef) -> usize {
    match r.kind {
        NodeKind::LonePair => r.index,
        _ => n_lp + r.index,
    }
}

pub fn interaction_matrix(g: &SimgGraph) -> InteractionMatrix {
    let n_lp = g.graph.lp_nodes.len();
    let n_bond = g.graph.bond_nodes.len();
    let n = n_lp + n_bond;
    let mut m = vec![vec![0u8; n]; n];
    for x in &g.interactions {
        m[node_position(n_lp, x.acceptor)][node_position(n_lp, x.donor)] = 1;
    }
    InteractionMatrix { n_lp, n_bond, m }
}

impl InteractionMatrix {
    fn node(&self, k: usize) -> NodeRef {
        if k < self.n_lp {
            NodeRef::lone_pair(k)
        } else {
            NodeRef::bond(k - self.n_lp)
        }
    }

    /// (donor, acceptor) pairs encoded by the matrix.
    pub fn edges(&self) -> BTreeSet<(NodeRef, NodeRef)> {
        let mut out = BTreeSet::new();
        for (i, row) in self.m.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v != 0 {
                    out.insert((self.node(j), self.node(i)));
                }
            }
        }
        out
    }

    /// Entrywise |self − other|.
    pub fn difference(&self, other: &InteractionMatrix) -> Result<InteractionMatrix, MetricError> {
        if self.n_lp != other.n_lp || self.n_bond != other.n_bond {
            return Err(MetricError::Length(self.m.len(), other.m.len()));
        }
        let m = self.m.iter().zip(&other.m).map(|(a, b)| a.iter().zip(b).map(|(x, y)| x.abs_diff(*y)).collect()).collect();
        Ok(InteractionMatrix {
            n_lp: self.n_lp,
            n_bond: self.n_bond,
            m,
        })
    }

    /// One text row per matrix row, entries separated by spaces.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for row in &self.m {
            let line: Vec<String> = row.iter().map(u8::to_string).collect();
            s.push_str(&line.join(" "));
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_hand_example() {
        let r = regression_metrics(&[0.0, 0.0, 2.0], &[0.0, 1.0, 2.0]).unwrap();
        assert!((r.mae - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.rmse - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert_eq!(r.r2, Some(0.5));
        assert_eq!(regression_metrics(&[1.0, 1.0], &[1.0, 1.0]).unwrap().r2, None);
        assert!(regression_metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.9, 0.8, 0.3], &[true, false, true]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.4, 0.4, 0.4], &[true, false, true]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.1, 0.9], &[false, true]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.1, 0.9], &[true, true]), Err(MetricError::SingleClass));
    }

    #[test]
    fn f1_convention() {
        let c = Confusion::from_pairs(&[true, false, true], &[true, true, false]).unwrap();
        assert_eq!(c.f1(), Some(0.5));
        assert_eq!(Confusion::default().f1(), None);
    }

    #[test]
    fn bins_cover_everything() {
        assert_eq!(bin_of(&[0.0, 2.0, 4.0], -1.0), 0);
        assert_eq!(bin_of(&[0.0, 2.0, 4.0], 2.0), 1);
        assert_eq!(bin_of(&[0.0, 2.0, 4.0], 40.0), 2);
    }
}
