use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use simg::chem_io::{parse_molecule, parse_simg, serialize_molecule, serialize_simg};
use simg::graph::build_molecular_graph;
use simg::losses::{hungarian, total_loss, LossOptions};
use simg::models::{Batch, BatchTargets, Ctx, GraphInputs, LonePairModel, LonePairModelConfig, MolBatch, MolInputs, MultitaskModel, MultitaskModelConfig};
use simg_bench::{cost_matrices, labeled, molecules};
use std::hint::black_box;

fn assignment(c: &mut Criterion) {
    for size in [3, 8, 32] {
        let ms = cost_matrices(1, 64, size);
        c.bench_function(&format!("hungarian/{size}"), |b| {
            b.iter(|| {
                for m in &ms {
                    black_box(hungarian(m).unwrap());
                }
            })
        });
    }
}

fn parsing(c: &mut Criterion) {
    let mols = molecules(2, 32);
    let simgs = labeled(2, 32);
    let mol_text: Vec<String> = mols.iter().map(serialize_molecule).collect();
    let simg_text: Vec<String> = simgs.iter().map(serialize_simg).collect();
    c.bench_function("parse/molecule", |b| b.iter(|| mol_text.iter().map(|t| parse_molecule(t).unwrap().atoms.len()).sum::<usize>()));
    c.bench_function("parse/simg", |b| b.iter(|| simg_text.iter().map(|t| parse_simg(t).unwrap().interactions.len()).sum::<usize>()));
}

fn models(c: &mut Criterion) {
    let simgs = labeled(3, 32);
    let inputs: Vec<GraphInputs> = simgs.iter().map(|s| GraphInputs::new(&s.graph)).collect();
    let refs: Vec<&GraphInputs> = inputs.iter().collect();
    let batch = Batch::new(&refs);
    let mt = MultitaskModel::new(MultitaskModelConfig::default(), 1).unwrap();
    let targets = BatchTargets::new(&simgs.iter().collect::<Vec<_>>(), &refs, &mt.scaler());
    c.bench_function("multitask/forward", |b| {
        b.iter(|| {
            let mut ctx = Ctx::new(&mt.store, false);
            black_box(mt.forward(&mut ctx, &batch, 5).0);
        })
    });
    c.bench_function("multitask/loss_backward", |b| {
        b.iter_batched(
            || (),
            |_| {
                let mut ctx = Ctx::new(&mt.store, true);
                let (bundle, _) = mt.forward(&mut ctx, &batch, 5);
                let terms = total_loss(&mut ctx.tape, &bundle, &batch, &targets, &LossOptions::default()).unwrap();
                black_box(ctx.tape.backward(terms.total).unwrap());
            },
            BatchSize::SmallInput,
        )
    });

    let mols = molecules(3, 32);
    let mol_inputs: Vec<MolInputs> = mols.iter().map(|m| MolInputs::new(&build_molecular_graph(m))).collect();
    let mol_batch = MolBatch::new(&mol_inputs.iter().collect::<Vec<_>>());
    let lp = LonePairModel::new(LonePairModelConfig::default(), 1).unwrap();
    c.bench_function("lone_pair/forward", |b| {
        b.iter(|| {
            let mut ctx = Ctx::new(&lp.store, false);
            black_box(lp.forward(&mut ctx, &mol_batch));
        })
    });
}

criterion_group!(benches, assignment, parsing, models);
criterion_main!(benches);
