//! Graph-level property benchmark over graph variants with one shared
//! architecture.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::element::Element;
use crate::graph::{ExtendedGraph, NodeKind, SimgGraph};
use crate::models::{apply_bn_stats, Ctx, Linear, Mlp};
use crate::synth::item_rng;
use crate::tensor::{Adam, AdamConfig, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Atoms and covalent bonds with element features.
    MolGraph,
    /// Molecular topology with atom and bond features extended by labels.
    SimgFeaturesOnly,
    /// Extended topology (lone pairs, bond nodes, interactions), no labels.
    SimgTopologyOnly,
    /// Extended topology carrying every label.
    FullSimg,
    /// As `FullSimg`, on predicted graphs.
    SimgStar,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::MolGraph, Variant::SimgFeaturesOnly, Variant::SimgTopologyOnly, Variant::FullSimg, Variant::SimgStar];

    pub fn name(self) -> &'static str {
        match self {
            Variant::MolGraph => "mol-graph",
            Variant::SimgFeaturesOnly => "simg-features-only",
            Variant::SimgTopologyOnly => "simg-topology-only",
            Variant::FullSimg => "full-simg",
            Variant::SimgStar => "simg-star",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    fn widths(self) -> (usize, usize) {
        match self {
            Variant::MolGraph => (BASE, 4),
            Variant::SimgFeaturesOnly => (BASE + 7, 8),
            Variant::SimgTopologyOnly => (EXT, 6),
            Variant::FullSimg | Variant::SimgStar => (EXT + 13, 9),
        }
    }
}

const BASE: usize = Element::COUNT + 1;
const EXT: usize = 3 + BASE + 2;

/// Node/edge tensors of one graph under a variant, with its target.
#[derive(Clone, Debug)]
pub struct BenchGraph {
    pub x: Tensor,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub edge_x: Tensor,
    pub target: f64,
}

fn base_atom(g: &ExtendedGraph, a: usize) -> Vec<f64> {
    let mut f = vec![0.0; BASE];
    f[g.atoms[a].element.index()] = 1.0;
    f[Element::COUNT] = f64::from(g.charge);
    f
}

fn npa(s: &SimgGraph, a: usize) -> [f64; 4] {
    let t = &s.atom_targets[a];
    [t.charge, t.core / 10.0, t.valence / 10.0, t.total / 10.0]
}

fn push_edge(edges: &mut Vec<(usize, usize, Vec<f64>)>, a: usize, b: usize, f: Vec<f64>) {
    edges.push((a, b, f.clone()));
    edges.push((b, a, f));
}

/// Builds the variant's graph. Variants other than `MolGraph` need labels.
pub fn bench_graph(variant: Variant, mol: &ExtendedGraph, simg: Option<&SimgGraph>, target: f64) -> Result<BenchGraph, MetricError> {
    let (fw, ew) = variant.widths();
    let mut x: Vec<Vec<f64>> = Vec::new();
    let mut edges: Vec<(usize, usize, Vec<f64>)> = Vec::new();
    let need = || simg.ok_or_else(|| MetricError::Benchmark(format!("{} needs labelled graphs", variant.name())));
    match variant {
        Variant::MolGraph => {
            for a in 0..mol.atoms.len() {
                x.push(base_atom(mol, a));
            }
            for e in &mol.atom_edges {
                let mut f = vec![0.0; ew];
                f[usize::from(e.order - 1)] = 1.0;
                f[3] = e.length;
                push_edge(&mut edges, e.i, e.j, f);
            }
        }
        Variant::SimgFeaturesOnly => {
            let s = need()?;
            let g = &s.graph;
            for a in 0..g.atoms.len() {
                let mut f = base_atom(g, a);
                f.extend_from_slice(&npa(s, a));
                let lps: Vec<usize> = (0..g.lp_nodes.len()).filter(|&k| g.lp_nodes[k].owner == a).collect();
                let n = lps.len() as f64;
                f.push(n / 3.0);
                f.push(if n > 0.0 { lps.iter().map(|&k| s.lp_targets[k].character.s / 100.0).sum::<f64>() / n } else { 0.0 });
                f.push(if n > 0.0 { lps.iter().map(|&k| s.lp_targets[k].occupancy).sum::<f64>() / n } else { 0.0 });
                x.push(f);
            }
            for e in &g.atom_edges {
                let mut f = vec![0.0; ew];
                f[usize::from(e.order - 1)] = 1.0;
                f[3] = e.length;
                let nodes: Vec<usize> = (0..g.bond_nodes.len()).filter(|&k| g.bond_nodes[k].atom_i == e.i.min(e.j) && g.bond_nodes[k].atom_j == e.i.max(e.j)).collect();
                let n = nodes.len() as f64;
                for &k in &nodes {
                    let t = &s.bond_targets[k];
                    f[4] += t.bonding.occupancy / n;
                    f[5] += t.antibonding.occupancy / n;
                    f[6] += t.bonding.atoms[0].polarization / 100.0 / n;
                    f[7] += t.antibonding.atoms[0].polarization / 100.0 / n;
                }
                push_edge(&mut edges, e.i, e.j, f);
            }
        }
        Variant::SimgTopologyOnly | Variant::FullSimg | Variant::SimgStar => {
            let s = need()?;
            let g = &s.graph;
            let full = variant != Variant::SimgTopologyOnly;
            let (na, nl) = (g.atoms.len(), g.lp_nodes.len());
            for a in 0..na {
                let mut f = vec![0.0; fw];
                f[0] = 1.0;
                f[3..3 + BASE].copy_from_slice(&base_atom(g, a));
                if full {
                    f[EXT..EXT + 4].copy_from_slice(&npa(s, a));
                }
                x.push(f);
            }
            for (k, lp) in g.lp_nodes.iter().enumerate() {
                let mut f = vec![0.0; fw];
                f[1] = 1.0;
                f[3 + BASE] = f64::from(lp.lp_type);
                if full {
                    let t = &s.lp_targets[k];
                    for (i, v) in t.character.to_array().into_iter().enumerate() {
                        f[EXT + 4 + i] = v / 100.0;
                    }
                    f[EXT + 8] = t.occupancy;
                }
                x.push(f);
            }
            for (k, b) in g.bond_nodes.iter().enumerate() {
                let mut f = vec![0.0; fw];
                f[2] = 1.0;
                f[4 + BASE] = f64::from(u8::from(b.kind == crate::chem_io::OrbitalKind::Pi));
                if full {
                    let t = &s.bond_targets[k];
                    f[EXT + 9] = t.bonding.occupancy;
                    f[EXT + 10] = t.antibonding.occupancy;
                    f[EXT + 11] = t.bonding.atoms[0].polarization / 100.0;
                    f[EXT + 12] = t.antibonding.atoms[0].polarization / 100.0;
                }
                x.push(f);
            }
            let edge = |kind: usize, order: f64, length: f64| {
                let mut f = vec![0.0; ew];
                f[kind] = 1.0;
                f[4] = order;
                f[5] = length;
                f
            };
            for e in &g.atom_edges {
                push_edge(&mut edges, e.i, e.j, edge(0, f64::from(e.order) / 3.0, e.length));
            }
            for &(a, k) in &g.atom_lp_edges {
                push_edge(&mut edges, a, na + k, edge(1, 0.0, 0.0));
            }
            for &(a, k) in &g.atom_bond_edges {
                push_edge(&mut edges, a, na + nl + k, edge(2, 0.0, 0.0));
            }
            for it in &s.interactions {
                let flat = |r: crate::graph::NodeRef| match r.kind {
                    NodeKind::LonePair => na + r.index,
                    _ => na + nl + r.index,
                };
                let mut f = edge(3, 0.0, 0.0);
                if full {
                    f[6] = it.e2 / 10.0;
                    f[7] = it.energy_gap;
                    f[8] = it.fock_element * 10.0;
                }
                push_edge(&mut edges, flat(it.donor), flat(it.acceptor), f);
            }
        }
    }
    let n = x.len();
    let ne = edges.len();
    Ok(BenchGraph {
        x: Tensor::new(n, fw, x.concat()).unwrap(),
        src: edges.iter().map(|e| e.0).collect(),
        dst: edges.iter().map(|e| e.1).collect(),
        edge_x: Tensor::new(ne, ew, edges.into_iter().flat_map(|e| e.2).collect()).unwrap(),
        target,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Validation,
    Test,
}

/// 70/10/20 split decided by the leading 32 bits of a hex content hash.
pub fn content_split(hash: &str) -> Split {
    let v = u32::from_str_radix(hash.get(..8).unwrap_or("0"), 16).unwrap_or(0);
    let frac = f64::from(v) / 4_294_967_296.0;
    if frac < 0.7 {
        Split::Train
    } else if frac < 0.8 {
        Split::Validation
    } else {
        Split::Test
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub hidden: usize,
    pub layers: usize,
    pub seed: u64,
    /// Chemical-accuracy constant of the target; MAE is reported relative
    /// to it.
    pub chemical_accuracy: f64,
    /// Scale applied to the sum-pooled readout.
    pub sum_scale: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            epochs: 40,
            batch_size: 32,
            lr: 3e-3,
            hidden: 32,
            layers: 3,
            seed: 0,
            chemical_accuracy: 1.0,
            sum_scale: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BenchResult {
    pub variant: Variant,
    pub test_mae: f64,
    pub validation_mae: f64,
    pub ratio: f64,
    pub sizes: [usize; 3],
}

struct Net {
    input: Linear,
    layers: Vec<(Linear, Linear)>,
    readout: Mlp,
}

impl Net {
    fn new(store: &mut ParamStore, fw: usize, ew: usize, cfg: &BenchConfig) -> Self {
        let mut rng = item_rng(cfg.seed, "bench-init", 0);
        let h = cfg.hidden;
        Net {
            input: Linear::new(store, "bench.input", fw, h, &mut rng),
            layers: (0..cfg.layers)
                .map(|l| {
                    (
                        Linear::new(store, &format!("bench.layer{l}.msg"), h + ew, h, &mut rng),
                        Linear::new(store, &format!("bench.layer{l}.upd"), 2 * h, h, &mut rng),
                    )
                })
                .collect(),
            readout: Mlp::new(store, "bench.readout", 2 * h, h, 1, &mut rng),
        }
    }

    fn forward(&self, ctx: &mut Ctx, graphs: &[&BenchGraph], sum_scale: f64) -> Var {
        let (mut x, mut ex, mut src, mut dst, mut owner) = (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
        let mut off = 0;
        let fw = graphs[0].x.cols();
        let ew = graphs[0].edge_x.cols();
        for (gi, g) in graphs.iter().enumerate() {
            x.extend_from_slice(g.x.data());
            ex.extend_from_slice(g.edge_x.data());
            src.extend(g.src.iter().map(|s| s + off));
            dst.extend(g.dst.iter().map(|d| d + off));
            owner.extend(std::iter::repeat_n(gi, g.x.rows()));
            off += g.x.rows();
        }
        let n = off;
        let xv = ctx.constant(Tensor::new(n, fw, x).unwrap());
        let ev = ctx.constant(Tensor::new(src.len(), ew, ex).unwrap());
        let mut h = self.input.forward(ctx, xv);
        h = ctx.tape.relu(h);
        for (msg, upd) in &self.layers {
            let hs = ctx.tape.gather_rows(h, &src);
            let m = ctx.tape.concat_cols(&[hs, ev]);
            let m = msg.forward(ctx, m);
            let m = ctx.tape.relu(m);
            let agg = ctx.tape.scatter_add_rows(m, &dst, n);
            let u = ctx.tape.concat_cols(&[h, agg]);
            let u = upd.forward(ctx, u);
            let u = ctx.tape.relu(u);
            h = ctx.tape.add(h, u);
        }
        let sum = ctx.tape.scatter_add_rows(h, &owner, graphs.len());
        let inv = ctx.constant(Tensor::column(graphs.iter().map(|g| 1.0 / g.x.rows().max(1) as f64).collect()));
        let mean = ctx.tape.mul(sum, inv);
        let scaled = ctx.tape.scale(sum, sum_scale);
        let r = ctx.tape.concat_cols(&[mean, scaled]);
        self.readout.forward(ctx, r)
    }
}

/// Trains the shared architecture on one variant's train split (best
/// validation epoch kept) and reports the test MAE.
pub fn downstream_benchmark(variant: Variant, data: &[(String, BenchGraph)], cfg: &BenchConfig) -> Result<BenchResult, MetricError> {
    let mut parts: [Vec<&BenchGraph>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (hash, g) in data {
        let k = match content_split(hash) {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        };
        parts[k].push(g);
    }
    if parts.iter().any(Vec::is_empty) {
        return Err(MetricError::Benchmark("every split needs at least one graph".into()));
    }
    let [train, val, test] = parts;
    let n = train.len() as f64;
    let mean = train.iter().map(|g| g.target).sum::<f64>() / n;
    let std = (train.iter().map(|g| (g.target - mean).powi(2)).sum::<f64>() / n).sqrt().max(1e-9);
    let (fw, ew) = (train[0].x.cols(), train[0].edge_x.cols());
    let mut store = ParamStore::new();
    let net = Net::new(&mut store, fw, ew, cfg);
    let mut adam = Adam::new(
        &store,
        AdamConfig {
            lr: cfg.lr,
            clip_norm: Some(5.0),
            ..AdamConfig::default()
        },
    );
    let mae = |store: &ParamStore, set: &[&BenchGraph]| {
        let mut err = 0.0;
        for chunk in set.chunks(64) {
            let mut ctx = Ctx::new(store, false);
            let out = net.forward(&mut ctx, chunk, cfg.sum_scale);
            let v = ctx.tape.value(out);
            for (i, g) in chunk.iter().enumerate() {
                err += (v.get(i, 0) * std + mean - g.target).abs();
            }
        }
        err / set.len() as f64
    };
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (f64::INFINITY, store.clone());
    for epoch in 0..cfg.epochs {
        let progress = epoch as f64 / cfg.epochs.max(1) as f64;
        adam.config.lr = cfg.lr * (0.05 + 0.95 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()));
        order.shuffle(&mut item_rng(cfg.seed, "bench-shuffle", epoch as u64));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let graphs: Vec<&BenchGraph> = chunk.iter().map(|&i| train[i]).collect();
            let y = Tensor::column(graphs.iter().map(|g| (g.target - mean) / std).collect());
            let mut ctx = Ctx::new(&store, true);
            let out = net.forward(&mut ctx, &graphs, cfg.sum_scale);
            let yv = ctx.constant(y);
            let d = ctx.tape.sub(out, yv);
            let sq = ctx.tape.square(d);
            let loss = ctx.tape.mean(sq);
            let grads = ctx.tape.backward(loss).map_err(|e| MetricError::Benchmark(e.to_string()))?;
            let pg = ctx.tape.param_grads(&grads, &store);
            let stats = ctx.take_bn_stats();
            drop(ctx);
            apply_bn_stats(&mut store, &stats);
            adam.step(&mut store, &pg).map_err(|e| MetricError::Benchmark(e.to_string()))?;
        }
        let v = mae(&store, &val);
        if v < best.0 {
            best = (v, store.clone());
        }
    }
    let test_mae = mae(&best.1, &test);
    Ok(BenchResult {
        variant,
        test_mae,
        validation_mae: best.0,
        ratio: test_mae / cfg.chemical_accuracy,
        sizes: [train.len(), val.len(), test.len()],
    })
}
