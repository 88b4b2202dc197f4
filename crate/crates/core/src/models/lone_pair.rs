//! Per-atom lone-pair count and type prediction on the molecular graph.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::features::{MolInputs, ATOM_FEATURES, BOND_EDGE_FEATURES};
use super::layers::{apply_bn_stats, Ctx, Linear};
use super::ModelError;
use crate::chem_io::Molecule;
use crate::graph::{build_molecular_graph, ExtendedGraph, LpCount, MAX_LONE_PAIRS};
use crate::synth::item_rng;
use crate::tensor::{Adam, AdamConfig, ParamStore, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    Sum,
    Mean,
    Max,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LonePairModelConfig {
    pub layers: usize,
    pub hidden: usize,
    pub aggregators: Vec<Aggregator>,
    pub count_classes: usize,
    pub type_classes: usize,
}

impl Default for LonePairModelConfig {
    fn default() -> Self {
        LonePairModelConfig {
            layers: 3,
            hidden: 32,
            aggregators: vec![Aggregator::Sum, Aggregator::Mean, Aggregator::Max],
            count_classes: usize::from(MAX_LONE_PAIRS) + 1,
            type_classes: usize::from(MAX_LONE_PAIRS) + 1,
        }
    }
}

impl LonePairModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.layers == 0 || self.hidden == 0 || self.count_classes == 0 || self.type_classes == 0 {
            return Err(ModelError::Config("lone-pair model widths must be positive".into()));
        }
        if self.aggregators.is_empty() {
            return Err(ModelError::Config("aggregator set is empty".into()));
        }
        Ok(())
    }
}

struct Layer {
    message: Linear,
    update: Linear,
}

pub struct LonePairModel {
    pub config: LonePairModelConfig,
    pub store: ParamStore,
    input: Linear,
    layers: Vec<Layer>,
    count_head: Linear,
    type_head: Linear,
}

/// Count and type logits, one row per atom.
pub struct LpLogits {
    pub count: Var,
    pub types: Var,
}

/// A count clamp applied because the type-1 head exceeded the total.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ClampWarning {
    pub atom: usize,
    pub total: u8,
    pub type1: u8,
}

impl LonePairModel {
    pub fn new(config: LonePairModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = item_rng(seed, "lp-init", 0);
        let mut store = ParamStore::new();
        let h = config.hidden;
        let input = Linear::new(&mut store, "lp.input", ATOM_FEATURES, h, &mut rng);
        let layers = (0..config.layers)
            .map(|l| Layer {
                message: Linear::new(&mut store, &format!("lp.layer{l}.message"), h + BOND_EDGE_FEATURES, h, &mut rng),
                update: Linear::new(&mut store, &format!("lp.layer{l}.update"), h * (1 + config.aggregators.len()), h, &mut rng),
            })
            .collect();
        let count_head = Linear::new(&mut store, "lp.count", h, config.count_classes, &mut rng);
        let type_head = Linear::new(&mut store, "lp.type", h, config.type_classes, &mut rng);
        Ok(LonePairModel {
            config,
            store,
            input,
            layers,
            count_head,
            type_head,
        })
    }

    /// Rebuilds the layer handles over an existing parameter set.
    pub fn from_store(config: LonePairModelConfig, store: ParamStore) -> Result<Self, ModelError> {
        let mut fresh = Self::new(config, 0)?;
        for id in fresh.store.ids().collect::<Vec<_>>() {
            let name = fresh.store.name(id).to_string();
            let loaded = store.id(&name).map(|i| store.get(i)).ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            if loaded.shape() != fresh.store.get(id).shape() {
                return Err(ModelError::Checkpoint(format!("parameter {name} has shape {:?}", loaded.shape())));
            }
            *fresh.store.get_mut(id) = loaded.clone();
        }
        Ok(fresh)
    }

    pub fn forward(&self, ctx: &mut Ctx, batch: &MolBatch) -> LpLogits {
        let n = batch.n_atoms;
        let x = ctx.constant(batch.x.clone());
        let e = ctx.constant(batch.edge_x.clone());
        let inv_deg = ctx.constant(batch.inv_degree.clone());
        let mut h = self.input.forward(ctx, x);
        h = ctx.tape.relu(h);
        for layer in &self.layers {
            let src = ctx.tape.gather_rows(h, &batch.src);
            let m = ctx.tape.concat_cols(&[src, e]);
            let m = layer.message.forward(ctx, m);
            let m = ctx.tape.relu(m);
            let mut parts = vec![h];
            let sum = ctx.tape.scatter_add_rows(m, &batch.dst, n);
            for agg in &self.config.aggregators {
                parts.push(match agg {
                    Aggregator::Sum => sum,
                    Aggregator::Mean => ctx.tape.mul(sum, inv_deg),
                    Aggregator::Max => ctx.tape.scatter_max_rows(m, &batch.dst, n),
                });
            }
            let u = ctx.tape.concat_cols(&parts);
            let u = layer.update.forward(ctx, u);
            let u = ctx.tape.relu(u);
            h = ctx.tape.add(h, u);
        }
        LpLogits {
            count: self.count_head.forward(ctx, h),
            types: self.type_head.forward(ctx, h),
        }
    }

    /// Sum over atoms of count and type cross-entropies, averaged per atom.
    pub fn loss(&self, ctx: &mut Ctx, logits: &LpLogits, labels: &[LpCount]) -> Var {
        let n = labels.len();
        let onehot = |classes: usize, f: &dyn Fn(&LpCount) -> u8| {
            let mut t = Tensor::zeros(n, classes);
            for (r, l) in labels.iter().enumerate() {
                t.set(r, usize::from(f(l)).min(classes - 1), -1.0 / n as f64);
            }
            t
        };
        let tc = ctx.constant(onehot(self.config.count_classes, &|l| l.total));
        let tt = ctx.constant(onehot(self.config.type_classes, &|l| l.type1));
        let lc = ctx.tape.log_softmax_rows(logits.count);
        let lt = ctx.tape.log_softmax_rows(logits.types);
        let a = ctx.tape.mul(lc, tc);
        let b = ctx.tape.mul(lt, tt);
        let a = ctx.tape.sum(a);
        let b = ctx.tape.sum(b);
        ctx.tape.add(a, b)
    }

    /// Argmax counts per atom with type-1 clamped to the total.
    pub fn predict_graph(&self, g: &ExtendedGraph) -> (Vec<LpCount>, Vec<ClampWarning>) {
        let inputs = MolInputs::new(g);
        let batch = MolBatch::new(&[&inputs]);
        let mut ctx = Ctx::new(&self.store, false);
        let logits = self.forward(&mut ctx, &batch);
        let argmax = |t: &Tensor, r: usize| {
            let row = t.row_slice(r);
            let mut best = 0;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            best as u8
        };
        let (c, t) = (ctx.tape.value(logits.count), ctx.tape.value(logits.types));
        let mut counts = Vec::with_capacity(batch.n_atoms);
        let mut warnings = Vec::new();
        for atom in 0..batch.n_atoms {
            let total = argmax(c, atom);
            let mut type1 = argmax(t, atom);
            if type1 > total {
                warnings.push(ClampWarning { atom, total, type1 });
                type1 = total;
            }
            counts.push(LpCount { total, type1 });
        }
        (counts, warnings)
    }

    pub fn predict(&self, m: &Molecule) -> (Vec<LpCount>, Vec<ClampWarning>) {
        self.predict_graph(&build_molecular_graph(m))
    }
}

/// Several molecular graphs as one disconnected graph.
pub struct MolBatch {
    pub n_atoms: usize,
    pub x: Tensor,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub edge_x: Tensor,
    pub inv_degree: Tensor,
}

impl MolBatch {
    pub fn new(items: &[&MolInputs]) -> Self {
        let mut x = Vec::new();
        let (mut src, mut dst, mut ex) = (Vec::new(), Vec::new(), Vec::new());
        let mut off = 0;
        for m in items {
            for f in &m.x {
                x.extend_from_slice(f);
            }
            for (s, d, f) in &m.edges {
                src.push(off + s);
                dst.push(off + d);
                ex.extend_from_slice(f);
            }
            off += m.x.len();
        }
        let mut deg = vec![0.0; off];
        for &d in &dst {
            deg[d] += 1.0;
        }
        let n_edges = src.len();
        MolBatch {
            n_atoms: off,
            x: Tensor::new(off, ATOM_FEATURES, x).unwrap(),
            src,
            dst,
            edge_x: Tensor::new(n_edges, BOND_EDGE_FEATURES, ex).unwrap(),
            inv_degree: Tensor::column(deg.iter().map(|&d: &f64| if d > 0.0 { 1.0 / d } else { 0.0 }).collect()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 32,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// Trains on (molecular graph, per-atom counts) pairs; returns the mean
/// loss of each epoch.
pub fn train_lone_pair(model: &mut LonePairModel, data: &[(ExtendedGraph, Vec<LpCount>)], cfg: &TrainConfig) -> Result<Vec<f64>, ModelError> {
    let inputs: Vec<MolInputs> = data.iter().map(|(g, _)| MolInputs::new(g)).collect();
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        clip_norm: Some(5.0),
        ..AdamConfig::default()
    };
    let mut adam = Adam::new(&model.store, adam_cfg);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut item_rng(cfg.seed, "lp-shuffle", epoch as u64));
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let items: Vec<&MolInputs> = chunk.iter().map(|&i| &inputs[i]).collect();
            let labels: Vec<LpCount> = chunk.iter().flat_map(|&i| data[i].1.iter().copied()).collect();
            let batch = MolBatch::new(&items);
            let mut ctx = Ctx::new(&model.store, true);
            let logits = model.forward(&mut ctx, &batch);
            let loss = model.loss(&mut ctx, &logits, &labels);
            total += ctx.tape.value(loss).item();
            batches += 1;
            let grads = ctx.tape.backward(loss)?;
            let pg = ctx.tape.param_grads(&grads, &model.store);
            let stats = ctx.take_bn_stats();
            drop(ctx);
            apply_bn_stats(&mut model.store, &stats);
            adam.step(&mut model.store, &pg)?;
        }
        curve.push(total / batches.max(1) as f64);
    }
    Ok(curve)
}
