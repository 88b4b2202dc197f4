//! Graph-attention encoder, hidden-state evolver and the target heads.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::features::{Batch, EDGE_FEATURES, NODE_FEATURES, PAIR_FEATURES};
use super::layers::{Ctx, GatLayer, Head, Linear, Mlp};
use super::ModelError;
use crate::synth::item_rng;
use crate::tensor::{ParamStore, Tensor, Var};

/// Node-head output columns: atoms read 0..4, lone pairs 4..9 (four
/// character logits and the occupancy), bond nodes 9..11.
pub const NODE_HEAD_OUT: usize = 11;
pub const ATOM_COLS: (usize, usize) = (0, 4);
pub const LP_CHAR_COLS: (usize, usize) = (4, 4);
pub const LP_OCC_COL: usize = 8;
pub const BOND_COLS: (usize, usize) = (9, 2);
/// Atom-bond head: per side four character logits, then
/// (bonding pol, bonding coef, antibonding pol, antibonding coef).
pub const AB_HEAD_OUT: usize = 12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MultitaskModelConfig {
    pub encoder_blocks: usize,
    pub attention_heads: usize,
    pub head_dim: usize,
    pub embed: usize,
    pub hidden: usize,
    pub evolver_blocks: usize,
    pub evolver_width: usize,
    pub head_width: usize,
    pub link_threshold: f64,
    /// False replaces random hidden states with zeros, leaving only the
    /// lp-type input feature to tell lone pairs apart.
    pub random_hidden: bool,
}

impl Default for MultitaskModelConfig {
    fn default() -> Self {
        MultitaskModelConfig {
            encoder_blocks: 3,
            attention_heads: 2,
            head_dim: 16,
            embed: 32,
            hidden: 16,
            evolver_blocks: 5,
            evolver_width: 32,
            head_width: 32,
            link_threshold: 0.5,
            random_hidden: true,
        }
    }
}

impl MultitaskModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.encoder_blocks == 0
            || self.attention_heads == 0
            || self.head_dim == 0
            || self.embed == 0
            || self.hidden == 0
            || self.evolver_width == 0
            || self.head_width == 0
        {
            return Err(ModelError::Config("multitask model widths must be positive".into()));
        }
        if !(self.link_threshold > 0.0 && self.link_threshold < 1.0) {
            return Err(ModelError::Config(format!("link threshold {} outside (0, 1)", self.link_threshold)));
        }
        Ok(())
    }

    /// Width of an orbital representation: embedding plus hidden state.
    pub fn orbital_width(&self) -> usize {
        self.embed + self.hidden
    }
}

struct EvolverBlock {
    a: Mlp,
    b: Mlp,
    c: Mlp,
}

/// Standardization of the regression targets.
#[derive(Clone, Debug, PartialEq)]
pub struct Scaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Column groups of the scaler.
pub const SCALE_ATOM: usize = 0;
pub const SCALE_LP_OCC: usize = 4;
pub const SCALE_BOND: usize = 5;
pub const SCALE_AB: usize = 7;
pub const SCALE_INTER: usize = 11;
pub const SCALE_COLS: usize = 14;

impl Scaler {
    pub fn identity() -> Self {
        Scaler {
            mean: vec![0.0; SCALE_COLS],
            std: vec![1.0; SCALE_COLS],
        }
    }

    pub fn forward(&self, col: usize, v: f64) -> f64 {
        (v - self.mean[col]) / self.std[col]
    }

    pub fn inverse(&self, col: usize, v: f64) -> f64 {
        v * self.std[col] + self.mean[col]
    }

    fn store(&self, store: &mut ParamStore) {
        store.set_buffer("scaler.mean", Tensor::row(self.mean.clone()));
        store.set_buffer("scaler.std", Tensor::row(self.std.clone()));
    }

    fn load(store: &ParamStore) -> Option<Self> {
        Some(Scaler {
            mean: store.buffer("scaler.mean")?.data().to_vec(),
            std: store.buffer("scaler.std")?.data().to_vec(),
        })
    }
}

pub struct MultitaskModel {
    pub config: MultitaskModelConfig,
    pub store: ParamStore,
    gat: Vec<GatLayer>,
    reduce: Linear,
    evolver: Vec<EvolverBlock>,
    node_head: Head,
    ab_head: Head,
    link_head: Head,
    interaction_head: Head,
}

/// Every head's output for one batch, on the forward tape. Regression
/// outputs are in standardized units.
#[derive(Clone, Debug)]
pub struct PredictionBundle {
    pub atom_preds: Var,
    pub lp_char_logits: Var,
    pub lp_chars: Var,
    pub lp_occ: Var,
    pub bond_preds: Var,
    /// Bonding and antibonding character logits per atom-bond side.
    pub ab_char_logits: [Var; 2],
    pub ab_chars: [Var; 2],
    pub ab_reg: Var,
    pub link_logits: Var,
    pub interaction_preds: Var,
}

/// Intermediate quantities of a forward pass.
pub struct ForwardTrace {
    pub embeddings: Var,
    /// Hidden states of lone-pair and bond nodes before each block and
    /// after the last one.
    pub hidden: Vec<Tensor>,
    /// Attention weights of each block, per graph.
    pub attention: Vec<Vec<Tensor>>,
}

impl MultitaskModel {
    pub fn new(config: MultitaskModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = item_rng(seed, "mt-init", 0);
        let mut store = ParamStore::new();
        let mut gat = Vec::new();
        let mut width = NODE_FEATURES;
        let mut concat = NODE_FEATURES;
        for b in 0..config.encoder_blocks {
            let layer = GatLayer::new(&mut store, &format!("enc.gat{b}"), width, EDGE_FEATURES, config.attention_heads, config.head_dim, &mut rng);
            width = layer.out_width();
            concat += width;
            gat.push(layer);
        }
        let reduce = Linear::new(&mut store, "enc.reduce", concat, config.embed, &mut rng);
        let (d_e, d_h, w) = (config.embed, config.hidden, config.evolver_width);
        let evolver = (0..config.evolver_blocks)
            .map(|t| EvolverBlock {
                a: Mlp::new(&mut store, &format!("evo{t}.a"), NODE_HEAD_OUT + d_h, w, d_h, &mut rng),
                b: Mlp::new(&mut store, &format!("evo{t}.b"), d_h, w, d_h, &mut rng),
                c: Mlp::new(&mut store, &format!("evo{t}.c"), 2 * d_h, w, d_h, &mut rng),
            })
            .collect();
        let r = config.orbital_width();
        let hw = config.head_width;
        let node_head = Head::new(&mut store, "head.node", d_e + d_h, hw, NODE_HEAD_OUT, &mut rng);
        let ab_head = Head::new(&mut store, "head.atom_bond", d_e + r, hw, AB_HEAD_OUT, &mut rng);
        let link_head = Head::new(&mut store, "head.link", 2 * r + PAIR_FEATURES, hw, 1, &mut rng);
        let interaction_head = Head::new(&mut store, "head.interaction", 2 * r + PAIR_FEATURES, hw, 3, &mut rng);
        Scaler::identity().store(&mut store);
        Ok(MultitaskModel {
            config,
            store,
            gat,
            reduce,
            evolver,
            node_head,
            ab_head,
            link_head,
            interaction_head,
        })
    }

    pub fn from_store(config: MultitaskModelConfig, store: ParamStore) -> Result<Self, ModelError> {
        let mut fresh = Self::new(config, 0)?;
        for id in fresh.store.ids().collect::<Vec<_>>() {
            let name = fresh.store.name(id).to_string();
            let loaded = store.id(&name).map(|i| store.get(i)).ok_or_else(|| ModelError::Checkpoint(format!("missing parameter {name}")))?;
            if loaded.shape() != fresh.store.get(id).shape() {
                return Err(ModelError::Checkpoint(format!("parameter {name} has shape {:?}", loaded.shape())));
            }
            *fresh.store.get_mut(id) = loaded.clone();
        }
        for (name, t) in store.buffers() {
            fresh.store.set_buffer(name.clone(), t.clone());
        }
        Ok(fresh)
    }

    pub fn scaler(&self) -> Scaler {
        Scaler::load(&self.store).unwrap_or_else(Scaler::identity)
    }

    pub fn set_scaler(&mut self, s: &Scaler) {
        s.store(&mut self.store);
    }

    /// Node embeddings, one row per batch node.
    pub fn encode(&self, ctx: &mut Ctx, batch: &Batch) -> Var {
        let x = ctx.constant(batch.x.clone());
        let e = ctx.constant(batch.edge_x.clone());
        let mut parts = vec![x];
        let mut h = x;
        for layer in &self.gat {
            h = layer.forward(ctx, h, e, &batch.edge_src, &batch.edge_dst, batch.n_nodes);
            h = ctx.tape.relu(h);
            parts.push(h);
        }
        let cat = ctx.tape.concat_cols(&parts);
        self.reduce.forward(ctx, cat)
    }

    /// Standard-normal hidden states for the orbital rows, one stream per
    /// graph keyed by the graph identity.
    pub fn initial_hidden(&self, batch: &Batch, seed: u64) -> Tensor {
        let d_h = self.config.hidden;
        let mut data = Vec::with_capacity(batch.n_orbitals() * d_h);
        for (g, &(_, len)) in batch.orbital_ranges.iter().enumerate() {
            if self.config.random_hidden {
                let mut rng = item_rng(seed, "hidden", batch.keys[g]);
                for _ in 0..len * d_h {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    data.push(z);
                }
            } else {
                data.extend(std::iter::repeat_n(0.0, len * d_h));
            }
        }
        Tensor::new(batch.n_orbitals(), d_h, data).unwrap()
    }

    /// Node head applied to every node: atoms see a zero hidden state.
    fn node_outputs(&self, ctx: &mut Ctx, emb_atoms: Var, emb_orb: Var, h: Var, n_atoms: usize) -> Var {
        let zeros = ctx.constant(Tensor::zeros(n_atoms, self.config.hidden));
        let atoms = ctx.tape.concat_cols(&[emb_atoms, zeros]);
        let orbs = ctx.tape.concat_cols(&[emb_orb, h]);
        let all = ctx.tape.concat_rows(&[atoms, orbs]);
        self.node_head.forward(ctx, all)
    }

    /// One evolver block: returns the updated hidden states and the
    /// per-graph attention weights.
    pub fn evolver_step(&self, ctx: &mut Ctx, batch: &Batch, step: usize, pred: Var, h: Var) -> (Var, Vec<Var>) {
        let block = &self.evolver[step];
        let qin = ctx.tape.concat_cols(&[pred, h]);
        let q = block.a.forward(ctx, qin);
        let k = block.b.forward(ctx, h);
        let scale = 1.0 / (self.config.hidden as f64).sqrt();
        let mut ctxs = Vec::with_capacity(batch.graphs);
        let mut weights = Vec::with_capacity(batch.graphs);
        for &(start, len) in &batch.orbital_ranges {
            if len == 0 {
                continue;
            }
            let qg = ctx.tape.slice_rows(q, start, len);
            let kg = ctx.tape.slice_rows(k, start, len);
            let kt = ctx.tape.transpose(kg);
            let s = ctx.tape.matmul(qg, kt);
            let s = ctx.tape.scale(s, scale);
            let w = ctx.tape.softmax_rows(s);
            weights.push(w);
            ctxs.push(ctx.tape.matmul(w, kg));
        }
        let attended = if ctxs.is_empty() {
            ctx.constant(Tensor::zeros(0, self.config.hidden))
        } else {
            ctx.tape.concat_rows(&ctxs)
        };
        let cin = ctx.tape.concat_cols(&[attended, h]);
        let delta = block.c.forward(ctx, cin);
        (ctx.tape.add(h, delta), weights)
    }

    pub fn forward(&self, ctx: &mut Ctx, batch: &Batch, seed: u64) -> (PredictionBundle, ForwardTrace) {
        let n_atoms = batch.n_atoms();
        let n_orb = batch.n_orbitals();
        let emb = self.encode(ctx, batch);
        let emb_atoms = ctx.tape.gather_rows(emb, &batch.atom_nodes);
        let emb_orb = ctx.tape.gather_rows(emb, &batch.orbital_nodes);
        let h0 = self.initial_hidden(batch, seed);
        let mut hidden = vec![h0.clone()];
        let mut attention = Vec::new();
        let mut h = ctx.constant(h0);
        for step in 0..self.evolver.len() {
            let out = self.node_outputs(ctx, emb_atoms, emb_orb, h, n_atoms);
            let pred = ctx.tape.slice_rows(out, n_atoms, n_orb);
            let (next, w) = self.evolver_step(ctx, batch, step, pred, h);
            h = next;
            hidden.push(ctx.tape.value(h).clone());
            attention.push(w.iter().map(|&v| ctx.tape.value(v).clone()).collect());
        }
        let out = self.node_outputs(ctx, emb_atoms, emb_orb, h, n_atoms);
        let atom_out = ctx.tape.slice_rows(out, 0, n_atoms);
        let orb_out = ctx.tape.slice_rows(out, n_atoms, n_orb);
        let atom_preds = ctx.tape.slice_cols(atom_out, ATOM_COLS.0, ATOM_COLS.1);
        let lp_out = ctx.tape.gather_rows(orb_out, &batch.lp_rows);
        let bond_out = ctx.tape.gather_rows(orb_out, &batch.bond_rows);
        let lp_char_logits = ctx.tape.slice_cols(lp_out, LP_CHAR_COLS.0, LP_CHAR_COLS.1);
        let lp_chars = ctx.tape.softmax_rows(lp_char_logits);
        let lp_occ = ctx.tape.slice_cols(lp_out, LP_OCC_COL, 1);
        let bond_preds = ctx.tape.slice_cols(bond_out, BOND_COLS.0, BOND_COLS.1);

        let rep = ctx.tape.concat_cols(&[emb_orb, h]);
        let ab_atoms: Vec<usize> = batch.atom_bond.iter().map(|p| p.0).collect();
        let ab_bonds: Vec<usize> = batch.atom_bond.iter().map(|p| p.1).collect();
        let ea = ctx.tape.gather_rows(emb_atoms, &ab_atoms);
        let eb = ctx.tape.gather_rows(rep, &ab_bonds);
        let ab_in = ctx.tape.concat_cols(&[ea, eb]);
        let ab = self.ab_head.forward(ctx, ab_in);
        let ab_char_logits = [ctx.tape.slice_cols(ab, 0, 4), ctx.tape.slice_cols(ab, 4, 4)];
        let ab_chars = [ctx.tape.softmax_rows(ab_char_logits[0]), ctx.tape.softmax_rows(ab_char_logits[1])];
        let ab_reg = ctx.tape.slice_cols(ab, 8, 4);

        let link_logits = self.pair_head(ctx, &self.link_head, rep, batch);
        let interaction_preds = self.pair_head(ctx, &self.interaction_head, rep, batch);
        let bundle = PredictionBundle {
            atom_preds,
            lp_char_logits,
            lp_chars,
            lp_occ,
            bond_preds,
            ab_char_logits,
            ab_chars,
            ab_reg,
            link_logits,
            interaction_preds,
        };
        let trace = ForwardTrace {
            embeddings: emb,
            hidden,
            attention,
        };
        (bundle, trace)
    }

    /// Link logits of every candidate given orbital representations
    /// (embedding ‖ hidden state, one row per orbital).
    pub fn link_logits(&self, ctx: &mut Ctx, rep: Var, batch: &Batch) -> Var {
        self.pair_head(ctx, &self.link_head, rep, batch)
    }

    /// A pair head over every candidate; the first layer acts on
    /// concat(donor, acceptor, pair features), evaluated blockwise.
    fn pair_head(&self, ctx: &mut Ctx, head: &Head, rep: Var, batch: &Batch) -> Var {
        let r = self.config.orbital_width();
        let w = ctx.param(head.first.w);
        let b = ctx.param(head.first.b);
        let wd = ctx.tape.slice_rows(w, 0, r);
        let wa = ctx.tape.slice_rows(w, r, r);
        let wf = ctx.tape.slice_rows(w, 2 * r, PAIR_FEATURES);
        let pd = ctx.tape.matmul(rep, wd);
        let pa = ctx.tape.matmul(rep, wa);
        let gd = ctx.tape.gather_rows(pd, &batch.cand_donor);
        let ga = ctx.tape.gather_rows(pa, &batch.cand_acceptor);
        let f = ctx.constant(batch.cand_x.clone());
        let pf = ctx.tape.matmul(f, wf);
        let s = ctx.tape.add(gd, ga);
        let s = ctx.tape.add(s, pf);
        let s = ctx.tape.add(s, b);
        head.after_first(ctx, s)
    }
}
