//! Parameterized building blocks evaluated on a [`Tape`].

use std::collections::HashMap;

use rand::Rng;

use crate::tensor::{ParamId, ParamStore, Tape, Tensor, Var};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// One forward pass: the tape, the parameters it reads, and batch-norm
/// statistics gathered in training mode.
pub struct Ctx<'a> {
    pub tape: Tape,
    pub store: &'a ParamStore,
    pub train: bool,
    cache: HashMap<ParamId, Var>,
    bn_stats: Vec<(String, Vec<f64>, Vec<f64>)>,
}

impl<'a> Ctx<'a> {
    pub fn new(store: &'a ParamStore, train: bool) -> Self {
        Ctx {
            tape: Tape::new(),
            store,
            train,
            cache: HashMap::new(),
            bn_stats: Vec::new(),
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.cache.get(&id) {
            return v;
        }
        let v = self.tape.param(self.store, id);
        self.cache.insert(id, v);
        v
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.tape.constant(t)
    }

    /// Batch-norm statistics of this pass (last call per layer wins).
    pub fn take_bn_stats(&mut self) -> Vec<(String, Vec<f64>, Vec<f64>)> {
        let mut seen = HashMap::new();
        for (i, (name, _, _)) in self.bn_stats.iter().enumerate() {
            seen.insert(name.clone(), i);
        }
        let mut keep: Vec<usize> = seen.into_values().collect();
        keep.sort_unstable();
        let all = std::mem::take(&mut self.bn_stats);
        keep.into_iter().map(|i| all[i].clone()).collect()
    }
}

/// Folds batch statistics into the running buffers.
pub fn apply_bn_stats(store: &mut ParamStore, stats: &[(String, Vec<f64>, Vec<f64>)]) {
    for (name, mean, var) in stats {
        for (suffix, batch) in [("mean", mean), ("var", var)] {
            let key = format!("{name}.{suffix}");
            let old = store.buffer(&key).expect("bn buffer").clone();
            let new = old.data().iter().zip(batch).map(|(o, b)| (1.0 - BN_MOMENTUM) * o + BN_MOMENTUM * b).collect();
            store.set_buffer(key, Tensor::row(new));
        }
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        let w = store.add(format!("{name}.w"), Tensor::randn(fan_in, fan_out, std, rng));
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn zeroed(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize) -> Self {
        let w = store.add(format!("{name}.w"), Tensor::zeros(fan_in, fan_out));
        let b = store.add(format!("{name}.b"), Tensor::zeros(1, fan_out));
        Linear { w, b, fan_in, fan_out }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let (w, b) = (ctx.param(self.w), ctx.param(self.b));
        let y = ctx.tape.matmul(x, w);
        ctx.tape.add(y, b)
    }

    /// x·W without the bias.
    pub fn project(&self, ctx: &mut Ctx, x: Var) -> Var {
        let w = ctx.param(self.w);
        ctx.tape.matmul(x, w)
    }
}

/// Linear → ReLU → Linear.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, hidden: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Mlp {
            first: Linear::new(store, &format!("{name}.0"), fan_in, hidden, rng),
            second: Linear::new(store, &format!("{name}.1"), hidden, fan_out, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let h = self.first.forward(ctx, x);
        let h = ctx.tape.relu(h);
        self.second.forward(ctx, h)
    }
}

#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub name: String,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl BatchNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        let gamma = store.add(format!("{name}.gamma"), Tensor::full(1, width, 1.0));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, width));
        store.set_buffer(format!("{name}.mean"), Tensor::zeros(1, width));
        store.set_buffer(format!("{name}.var"), Tensor::full(1, width, 1.0));
        BatchNorm {
            name: name.to_string(),
            gamma,
            beta,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        if ctx.train && ctx.tape.shape(x)[0] >= 2 {
            let (y, mean, var) = ctx.tape.batch_norm_train(x, g, b, BN_EPS);
            ctx.bn_stats.push((self.name.clone(), mean, var));
            y
        } else {
            let mean = ctx.store.buffer(&format!("{}.mean", self.name)).expect("bn buffer").data().to_vec();
            let var = ctx.store.buffer(&format!("{}.var", self.name)).expect("bn buffer").data().to_vec();
            ctx.tape.batch_norm_eval(x, g, b, &mean, &var, BN_EPS)
        }
    }
}

/// Linear → ReLU → BatchNorm → Linear.
#[derive(Clone, Debug)]
pub struct Head {
    pub first: Linear,
    pub norm: BatchNorm,
    pub last: Linear,
}

impl Head {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, hidden: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        Head {
            first: Linear::new(store, &format!("{name}.0"), fan_in, hidden, rng),
            norm: BatchNorm::new(store, &format!("{name}.bn"), hidden),
            last: Linear::new(store, &format!("{name}.1"), hidden, fan_out, rng),
        }
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var) -> Var {
        let h = self.first.forward(ctx, x);
        self.after_first(ctx, h)
    }

    /// The head applied to an already computed first-layer output.
    pub fn after_first(&self, ctx: &mut Ctx, h: Var) -> Var {
        let h = ctx.tape.relu(h);
        let h = self.norm.forward(ctx, h);
        self.last.forward(ctx, h)
    }
}

/// Multi-head graph attention over directed edges with edge features.
///
/// e_ij = LeakyReLU(s·z_j + d·z_i + u·f_ij) per head, normalized over the
/// incoming edges of i; messages are z_j + W_e f_ij.
#[derive(Clone, Debug)]
pub struct GatLayer {
    pub heads: usize,
    pub width: usize,
    pub proj: Linear,
    pub att_src: ParamId,
    pub att_dst: ParamId,
    pub att_edge: ParamId,
    pub edge_proj: ParamId,
}

impl GatLayer {
    pub fn new(store: &mut ParamStore, name: &str, fan_in: usize, edge_in: usize, heads: usize, width: usize, rng: &mut impl Rng) -> Self {
        let out = heads * width;
        let s = (1.0 / out as f64).sqrt();
        GatLayer {
            heads,
            width,
            proj: Linear::new(store, &format!("{name}.proj"), fan_in, out, rng),
            att_src: store.add(format!("{name}.att_src"), Tensor::randn(out, heads, s, rng)),
            att_dst: store.add(format!("{name}.att_dst"), Tensor::randn(out, heads, s, rng)),
            att_edge: store.add(format!("{name}.att_edge"), Tensor::randn(edge_in, heads, s, rng)),
            edge_proj: store.add(format!("{name}.edge"), Tensor::randn(edge_in, out, s, rng)),
        }
    }

    pub fn out_width(&self) -> usize {
        self.heads * self.width
    }

    pub fn forward(&self, ctx: &mut Ctx, x: Var, edge_x: Var, src: &[usize], dst: &[usize], n: usize) -> Var {
        let z = self.proj.forward(ctx, x);
        let (a_s, a_d, a_e, w_e) = (ctx.param(self.att_src), ctx.param(self.att_dst), ctx.param(self.att_edge), ctx.param(self.edge_proj));
        let s = ctx.tape.matmul(z, a_s);
        let d = ctx.tape.matmul(z, a_d);
        let s_e = ctx.tape.gather_rows(s, src);
        let d_e = ctx.tape.gather_rows(d, dst);
        let f_e = ctx.tape.matmul(edge_x, a_e);
        let logits = ctx.tape.add(s_e, d_e);
        let logits = ctx.tape.add(logits, f_e);
        let logits = ctx.tape.leaky_relu(logits, 0.2);
        let alpha = ctx.tape.segment_softmax(logits, dst, n);
        let alpha = ctx.tape.repeat_cols(alpha, self.width);
        let z_src = ctx.tape.gather_rows(z, src);
        let m_e = ctx.tape.matmul(edge_x, w_e);
        let msg = ctx.tape.add(z_src, m_e);
        let weighted = ctx.tape.mul(alpha, msg);
        ctx.tape.scatter_add_rows(weighted, dst, n)
    }
}
