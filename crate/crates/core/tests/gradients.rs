mod common;

use rand::Rng;
use simg::active_learning::{synth_simg, OracleRules};
use simg::graph::SimgGraph;
use simg::losses::{group_match, total_loss_with, LossOptions};
use simg::models::*;
use simg::synth::{dataset, item_rng, SynthConfig};
use simg::tensor::{finite_difference_check, ParamStore, Tape, Tensor, Var};

const EPS: f64 = 1e-5;
const TOL: f64 = 1e-4;

/// Random tensor whose entries stay at least 0.1 away from zero.
fn away_from_zero(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = item_rng(seed, "grad-input", 0);
    Tensor::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let m: f64 = rng.random_range(0.1..1.5);
                if rng.random_bool(0.5) {
                    m
                } else {
                    -m
                }
            })
            .collect(),
    )
    .unwrap()
}

fn positive(rows: usize, cols: usize, seed: u64) -> Tensor {
    away_from_zero(rows, cols, seed).map(|x| x.abs() + 0.2)
}

/// Reduces any output to a scalar through fixed random weights.
fn project(t: &mut Tape, v: Var, seed: u64) -> Var {
    let [r, c] = t.shape(v);
    let w = t.constant(away_from_zero(r, c, seed ^ 0xabc));
    let p = t.mul(v, w);
    t.sum(p)
}

fn assert_primitive(name: &str, inputs: &[Tensor], f: impl Fn(&mut Tape, &[Var]) -> Var) {
    let g = finite_difference_check(inputs, EPS, |t, v| {
        let out = f(t, v);
        project(t, out, 7)
    });
    assert!(g.max_relative_error() < TOL, "{name}: {:?}", g.relative_errors);
}

#[test]
fn every_primitive_matches_finite_differences() {
    let a = away_from_zero(3, 4, 1);
    let b = away_from_zero(3, 4, 2);
    let m = away_from_zero(4, 2, 3);
    let row = away_from_zero(1, 4, 4);
    let col = away_from_zero(3, 1, 5);
    let s = away_from_zero(1, 1, 6);
    assert_primitive("matmul", &[a.clone(), m.clone()], |t, v| t.matmul(v[0], v[1]));
    assert_primitive("add", &[a.clone(), b.clone()], |t, v| t.add(v[0], v[1]));
    assert_primitive("add row broadcast", &[a.clone(), row.clone()], |t, v| t.add(v[0], v[1]));
    assert_primitive("sub", &[a.clone(), b.clone()], |t, v| t.sub(v[0], v[1]));
    assert_primitive("mul", &[a.clone(), b.clone()], |t, v| t.mul(v[0], v[1]));
    assert_primitive("mul column broadcast", &[a.clone(), col.clone()], |t, v| t.mul(v[0], v[1]));
    assert_primitive("mul scalar broadcast", &[a.clone(), s.clone()], |t, v| t.mul(v[0], v[1]));
    assert_primitive("scale", &[a.clone()], |t, v| t.scale(v[0], -1.7));
    assert_primitive("add_scalar", &[a.clone()], |t, v| t.add_scalar(v[0], 0.3));
    assert_primitive("concat_cols", &[a.clone(), col.clone()], |t, v| t.concat_cols(&[v[0], v[1], v[0]]));
    assert_primitive("concat_rows", &[a.clone(), row.clone()], |t, v| t.concat_rows(&[v[1], v[0]]));
    assert_primitive("slice_cols", &[a.clone()], |t, v| t.slice_cols(v[0], 1, 2));
    assert_primitive("slice_rows", &[a.clone()], |t, v| t.slice_rows(v[0], 1, 2));
    assert_primitive("transpose", &[a.clone()], |t, v| t.transpose(v[0]));
    assert_primitive("repeat_cols", &[col.clone()], |t, v| t.repeat_cols(v[0], 3));
    assert_primitive("relu", &[a.clone()], |t, v| t.relu(v[0]));
    assert_primitive("leaky_relu", &[a.clone()], |t, v| t.leaky_relu(v[0], 0.2));
    assert_primitive("sigmoid", &[a.clone()], |t, v| t.sigmoid(v[0]));
    assert_primitive("softplus", &[a.clone()], |t, v| t.softplus(v[0]));
    assert_primitive("tanh", &[a.clone()], |t, v| t.tanh(v[0]));
    assert_primitive("log", &[positive(3, 4, 8)], |t, v| t.log(v[0]));
    assert_primitive("exp", &[a.clone()], |t, v| t.exp(v[0]));
    assert_primitive("square", &[a.clone()], |t, v| t.square(v[0]));
    assert_primitive("softmax_rows", &[a.clone()], |t, v| t.softmax_rows(v[0]));
    assert_primitive("log_softmax_rows", &[a.clone()], |t, v| t.log_softmax_rows(v[0]));
    assert_primitive("sum", &[a.clone()], |t, v| t.sum(v[0]));
    assert_primitive("mean", &[a.clone()], |t, v| t.mean(v[0]));
    assert_primitive("sum_rows", &[a.clone()], |t, v| t.sum_rows(v[0]));
    assert_primitive("sum_cols", &[a.clone()], |t, v| t.sum_cols(v[0]));
    assert_primitive("gather_rows", &[a.clone()], |t, v| t.gather_rows(v[0], &[2, 0, 2, 1]));
    assert_primitive("scatter_add_rows", &[a.clone()], |t, v| t.scatter_add_rows(v[0], &[1, 0, 1], 3));
    assert_primitive("scatter_max_rows", &[a.clone()], |t, v| t.scatter_max_rows(v[0], &[1, 0, 1], 3));
    assert_primitive("segment_softmax", &[a.clone()], |t, v| t.segment_softmax(v[0], &[0, 1, 0], 2));
    assert_primitive("batch_norm_train", &[away_from_zero(5, 3, 9), positive(1, 3, 10), away_from_zero(1, 3, 11)], |t, v| {
        t.batch_norm_train(v[0], v[1], v[2], 1e-5).0
    });
    assert_primitive("batch_norm_eval", &[a.clone(), positive(1, 4, 12), row.clone()], |t, v| {
        t.batch_norm_eval(v[0], v[1], v[2], &[0.1, -0.2, 0.3, 0.0], &[1.0, 0.5, 2.0, 0.1], 1e-5)
    });
}

#[test]
fn composite_mlp_matches_finite_differences() {
    let x = away_from_zero(6, 4, 20);
    let w1 = away_from_zero(4, 5, 21).map(|v| v * 0.5);
    let b1 = away_from_zero(1, 5, 22).map(|v| v * 0.1);
    let w2 = away_from_zero(5, 2, 23);
    let g = finite_difference_check(&[x, w1, b1, w2], EPS, |t, v| {
        let h = t.matmul(v[0], v[1]);
        let h = t.add(h, v[2]);
        let h = t.tanh(h);
        let o = t.matmul(h, v[3]);
        let o = t.log_softmax_rows(o);
        t.mean(o)
    });
    assert!(g.max_relative_error() < TOL, "{:?}", g.relative_errors);
}

fn fixture() -> (Vec<SimgGraph>, Vec<GraphInputs>) {
    let rules = OracleRules::default();
    let mut mols = vec![common::water()];
    mols.extend(dataset(30, 2, &SynthConfig { min_heavy: 4, max_heavy: 6, ..SynthConfig::default() }));
    let simgs: Vec<SimgGraph> = mols.iter().map(|m| synth_simg(m, &rules).unwrap()).collect();
    let inputs = simgs.iter().map(|s| GraphInputs::new(&s.graph)).collect();
    (simgs, inputs)
}

fn small_model() -> MultitaskModel {
    let cfg = MultitaskModelConfig {
        encoder_blocks: 2,
        head_dim: 4,
        embed: 8,
        hidden: 4,
        evolver_blocks: 2,
        evolver_width: 8,
        head_width: 8,
        ..MultitaskModelConfig::default()
    };
    MultitaskModel::new(cfg, 3).unwrap()
}

/// Entries of `len` probed numerically: all of them, or an even spread.
fn probe(len: usize, max: usize) -> Vec<usize> {
    if len <= max {
        (0..len).collect()
    } else {
        (0..max).map(|k| k * len / max).collect()
    }
}

/// Maximum relative error over every parameter tensor and input of a
/// network evaluated through `f` (training-mode context).
fn network_check(store: &ParamStore, inputs: &[Tensor], f: impl Fn(&mut Ctx, &[Var]) -> Var) -> f64 {
    let eval = |s: &ParamStore, xs: &[Tensor]| {
        let mut ctx = Ctx::new(s, true);
        let vars: Vec<Var> = xs.iter().map(|x| ctx.tape.leaf(x.clone())).collect();
        let out = f(&mut ctx, &vars);
        ctx.tape.value(out).item()
    };
    let mut ctx = Ctx::new(store, true);
    let vars: Vec<Var> = inputs.iter().map(|x| ctx.tape.leaf(x.clone())).collect();
    let out = f(&mut ctx, &vars);
    let grads = ctx.tape.backward(out).unwrap();
    let pgrads = ctx.tape.param_grads(&grads, store);
    let rel = |pairs: &[(f64, f64)]| {
        let d: f64 = pairs.iter().map(|(a, n)| (a - n) * (a - n)).sum::<f64>().sqrt();
        let s = pairs.iter().map(|(a, _)| a * a).sum::<f64>().sqrt() + pairs.iter().map(|(_, n)| n * n).sum::<f64>().sqrt();
        if s < 1e-12 {
            0.0
        } else {
            d / s
        }
    };
    let mut worst: f64 = 0.0;
    let mut probed = 0;
    for id in store.ids().collect::<Vec<_>>() {
        let Some(g) = &pgrads[id.index()] else { continue };
        let mut s = store.clone();
        let mut pairs = Vec::new();
        for i in probe(g.len(), 24) {
            let x0 = store.get(id).data()[i];
            s.get_mut(id).data_mut()[i] = x0 + EPS;
            let up = eval(&s, inputs);
            s.get_mut(id).data_mut()[i] = x0 - EPS;
            let down = eval(&s, inputs);
            s.get_mut(id).data_mut()[i] = x0;
            pairs.push((g.data()[i], (up - down) / (2.0 * EPS)));
        }
        let e = rel(&pairs);
        assert!(e < TOL, "parameter {}: {e}", store.name(id));
        worst = worst.max(e);
        probed += 1;
    }
    for (k, v) in vars.iter().enumerate() {
        let g = grads.get(*v).cloned().unwrap_or_else(|| Tensor::zeros(inputs[k].rows(), inputs[k].cols()));
        let mut xs = inputs.to_vec();
        let mut pairs = Vec::new();
        for i in probe(g.len(), 48) {
            let x0 = inputs[k].data()[i];
            xs[k].data_mut()[i] = x0 + EPS;
            let up = eval(store, &xs);
            xs[k].data_mut()[i] = x0 - EPS;
            let down = eval(store, &xs);
            xs[k].data_mut()[i] = x0;
            pairs.push((g.data()[i], (up - down) / (2.0 * EPS)));
        }
        let e = rel(&pairs);
        assert!(e < TOL, "input {k}: {e}");
        worst = worst.max(e);
    }
    assert!(probed > 0);
    worst
}

#[test]
fn gat_encoder_gradients() {
    let (_, inputs) = fixture();
    let batch = Batch::new(&inputs.iter().collect::<Vec<_>>());
    let model = small_model();
    network_check(&model.store, &[], |ctx, _| {
        let emb = model.encode(ctx, &batch);
        project(&mut ctx.tape, emb, 31)
    });
}

#[test]
fn evolver_block_gradients() {
    let (_, inputs) = fixture();
    let batch = Batch::new(&inputs.iter().collect::<Vec<_>>());
    let model = small_model();
    let n = batch.n_orbitals();
    let pred = away_from_zero(n, NODE_HEAD_OUT, 32);
    let h = away_from_zero(n, model.config.hidden, 33);
    network_check(&model.store, &[pred, h], |ctx, v| {
        let (next, _) = model.evolver_step(ctx, &batch, 0, v[0], v[1]);
        project(&mut ctx.tape, next, 34)
    });
}

#[test]
fn link_head_gradients() {
    let (_, inputs) = fixture();
    let batch = Batch::new(&inputs.iter().collect::<Vec<_>>());
    assert!(batch.n_candidates() > 4);
    let model = small_model();
    let rep = away_from_zero(batch.n_orbitals(), model.config.orbital_width(), 35);
    network_check(&model.store, &[rep], |ctx, v| {
        let logits = model.link_logits(ctx, v[0], &batch);
        project(&mut ctx.tape, logits, 36)
    });
}

#[test]
fn full_loss_gradients_with_frozen_matching() {
    let (simgs, inputs) = fixture();
    let refs: Vec<&GraphInputs> = inputs.iter().collect();
    let batch = Batch::new(&refs);
    let model = small_model();
    let targets = BatchTargets::new(&simgs.iter().collect::<Vec<_>>(), &refs, &model.scaler());
    let matching = {
        let mut ctx = Ctx::new(&model.store, true);
        let (bundle, _) = model.forward(&mut ctx, &batch, 5);
        group_match(&ctx.tape, &bundle, &batch, &targets).unwrap()
    };
    let opts = LossOptions::default();
    network_check(&model.store, &[], |ctx, _| {
        let (bundle, _) = model.forward(ctx, &batch, 5);
        total_loss_with(&mut ctx.tape, &bundle, &batch, &targets, matching.clone(), &opts).unwrap().total
    });
}
