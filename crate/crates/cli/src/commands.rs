use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use simg::active_learning::{al_loop, predicted_graph, synth_label, synth_simg, AlError, OracleRules, Pool};
use simg::chem_io::{parse_molecule, parse_nbo_record, parse_simg, serialize_molecule, serialize_nbo_json, serialize_nbo_text, serialize_simg, structure_hash};
use simg::eval_metrics::{bench_graph, downstream_benchmark, evaluate_predictions, interaction_matrix, Variant};
use simg::graph::{build_molecular_graph, simg_from_record, ExtendedGraph, SimgGraph};
use simg::models::{
    export_trajectory, predict_graphs, predict_simg, train_lone_pair, train_multitask, Batch, Ctx, GraphInputs, LonePairModel, LossRecord, MultitaskModel,
    MultitaskModelConfig,
};
use simg::synth::{dataset, item_rng, peptide_chain};

use crate::config::{config_hash, RunConfig};
use crate::error::{Failure, OrInvalid, OrRuntime, Outcome};
use crate::files::*;
use crate::{Command, LabelFormat};

struct Run<'a> {
    cfg: &'a RunConfig,
    /// A configuration file was given: checkpoints must match it.
    explicit: bool,
    out: &'a mut Outputs,
}

impl Run<'_> {
    fn manifest(&self, command: &str) -> Manifest {
        Manifest::new(command, self.cfg.seed, self.cfg.hash())
    }

    fn lp_model(&self, path: &Path) -> Outcome<LonePairModel> {
        load_lone_pair_model(path, self.explicit.then_some(&self.cfg.lp_model))
    }

    fn mt_model(&self, path: &Path) -> Outcome<MultitaskModel> {
        load_multitask_model(path, self.explicit.then_some(&self.cfg.mt_model), self.cfg.threshold)
    }
}

pub fn run(command: Command, cfg: &RunConfig, explicit: bool, out: &mut Outputs) -> Outcome<()> {
    let mut r = Run { cfg, explicit, out };
    match command {
        Command::Parse { inputs, out } => parse(&mut r, &inputs, out.as_deref()),
        Command::Generate { count, chains, out } => generate(&mut r, count, chains, &out),
        Command::Oracle { inputs, format, out } => oracle(&mut r, &inputs, format, &out),
        Command::BuildGraph { molecule, labels, out } => build_graph(&mut r, &molecule, &labels, &out),
        Command::TrainLp { data, out } => train_lp(&mut r, &data, &out),
        Command::TrainMt { data, out } => train_mt(&mut r, &data, &out),
        Command::Predict { molecule, lp, mt, out } => predict(&mut r, &molecule, &lp, &mt, &out),
        Command::AlRun {
            pool,
            molecules,
            held_out,
            rounds,
            out,
        } => al_run(&mut r, &pool, &molecules, &held_out, rounds, &out),
        Command::Eval { data, mt, lp, matrices, out } => eval(&mut r, &data, &mt, lp.as_deref(), matrices, &out),
        Command::Bench { data, variants, lp, mt, out } => bench(&mut r, &data, &variants, lp.as_deref(), mt.as_deref(), &out),
        Command::ExportTraj { input, mt, lp, out } => export_traj(&mut r, &input, &mt, lp.as_deref(), &out),
    }
}

fn rules() -> OracleRules {
    OracleRules::default()
}

fn parse(r: &mut Run, inputs: &[PathBuf], out: Option<&Path>) -> Outcome<()> {
    let files = collect(inputs, &["molj", "nboj", "nbotxt", "simg"])?;
    let mut report = String::from("file\tformat\tstatus\tdetail\n");
    let mut failed = 0;
    for f in &files {
        let ext = f.extension().and_then(|e| e.to_str()).unwrap_or("");
        let text = match std::fs::read_to_string(f) {
            Ok(t) => t,
            Err(e) => {
                failed += 1;
                eprintln!("{}: {e}", f.display());
                writeln!(report, "{}\t{ext}\terror\tunreadable", f.display()).unwrap();
                continue;
            }
        };
        let result: Result<String, String> = match ext {
            "molj" => parse_molecule(&text).map(|m| format!("{} atoms, {} bonds", m.atoms.len(), m.bonds.len())).map_err(|e| e.to_string()),
            "nboj" | "nbotxt" => parse_nbo_record(&text, r.cfg.validation()).map_err(|e| e.to_string()).and_then(|p| {
                for w in &p.warnings {
                    log::warn!("{}:{w}", f.display());
                }
                let rec = p.record;
                let detail = format!("{} lone pairs, {} bond orbitals, {} interactions", rec.lone_pairs.len(), rec.bond_orbitals.len(), rec.interactions.len());
                let mol = f.with_extension("molj");
                if !mol.is_file() {
                    return Ok(detail);
                }
                let m = load_molecule(&mol).map_err(|e| e.to_string())?;
                simg_from_record(&m, &rec).map(|_| detail).map_err(|e| format!("1:1: does not match {}: {e}", mol.display()))
            }),
            "simg" => parse_simg(&text)
                .map(|g| format!("{} atoms, {} lone pairs, {} bond nodes, {} interactions", g.graph.atoms.len(), g.graph.lp_nodes.len(), g.graph.bond_nodes.len(), g.interactions.len()))
                .map_err(|e| e.to_string()),
            _ => Err("1:1: unknown file format".into()),
        };
        match result {
            Ok(detail) => writeln!(report, "{}\t{ext}\tok\t{detail}", f.display()).unwrap(),
            Err(e) => {
                failed += 1;
                eprintln!("{}:{e}", f.display());
                writeln!(report, "{}\t{ext}\terror\t{e}", f.display()).unwrap();
            }
        }
    }
    print!("{report}");
    if let Some(p) = out {
        let mut m = r.manifest("parse");
        for f in &files {
            m.input(f)?;
        }
        r.out.write(p, report.as_bytes())?;
        r.out.manifest(&manifest_path(p), m)?;
    }
    if failed > 0 {
        return Err(Failure::invalid(format!("{failed} of {} files failed validation", files.len())));
    }
    Ok(())
}

fn generate(r: &mut Run, count: usize, chains: bool, out: &Path) -> Outcome<()> {
    let g = &r.cfg.generate;
    let molecules: Vec<_> = if chains {
        let (lo, hi) = (g.min_heavy.unwrap_or(50), g.max_heavy.unwrap_or(200));
        (0..count).map(|i| peptide_chain(&mut item_rng(r.cfg.seed, "chain", i as u64), lo, hi).molecule).collect()
    } else {
        dataset(r.cfg.seed, count, &g.synth())
    };
    r.out.ensure_dir(out)?;
    for (i, m) in molecules.iter().enumerate() {
        r.out.write(&out.join(format!("m{i:05}.molj")), serialize_molecule(m).as_bytes())?;
    }
    let m = r.manifest("generate");
    r.out.manifest(&out.join("manifest.json"), m)
}

fn oracle(r: &mut Run, inputs: &[PathBuf], format: LabelFormat, out: &Path) -> Outcome<()> {
    let files = collect(inputs, &["molj"])?;
    let mut m = r.manifest("oracle");
    r.out.ensure_dir(out)?;
    let rules = rules();
    for f in &files {
        let mol = load_molecule(f)?;
        m.input(f)?;
        let rec = synth_label(&mol, &rules).or_invalid(f.display())?;
        let (text, ext) = match format {
            LabelFormat::Json => (serialize_nbo_json(&rec), "nboj"),
            LabelFormat::Text => (serialize_nbo_text(&rec), "nbotxt"),
        };
        r.out.write(&out.join(format!("{}.{ext}", stem(f))), text.as_bytes())?;
    }
    r.out.manifest(&out.join("manifest.json"), m)
}

fn build_graph(r: &mut Run, molecule: &Path, labels: &Path, out: &Path) -> Outcome<()> {
    let m = load_molecule(molecule)?;
    let rec = load_record(labels, r.cfg.validation())?;
    let g = simg_from_record(&m, &rec).or_invalid(labels.display())?;
    let mut man = r.manifest("build-graph");
    man.input(molecule)?;
    man.input(labels)?;
    r.out.write(out, serialize_simg(&g).as_bytes())?;
    r.out.manifest(&manifest_path(out), man)
}

fn record_inputs(m: &mut Manifest, data: &[PathBuf]) -> Outcome<()> {
    for f in collect(data, &["simg", "molj", "nboj", "nbotxt"])? {
        m.input(&f)?;
    }
    Ok(())
}

fn train_lp(r: &mut Run, data: &[PathBuf], out: &Path) -> Outcome<()> {
    let examples = load_dataset(data, r.cfg.validation())?;
    let pairs: Vec<_> = examples.iter().map(|e| (build_molecular_graph(&e.molecule), e.simg.graph.lp_counts())).collect();
    let mut model = LonePairModel::new(r.cfg.lp_model.clone(), r.cfg.seed).or_invalid("lp_model")?;
    let curve = train_lone_pair(&mut model, &pairs, &r.cfg.lp_train).or_runtime("training")?;
    let mut log = String::from("epoch\tloss\n");
    for (e, l) in curve.iter().enumerate() {
        writeln!(log, "{e}\t{l:.6}").unwrap();
    }
    let mut m = r.manifest("train-lp");
    record_inputs(&mut m, data)?;
    m.model = Some(serde_json::to_value(&r.cfg.lp_model).or_runtime("config")?);
    m.model_hash = Some(config_hash(&r.cfg.lp_model));
    r.out.write(out, &checkpoint_bytes(&model.store)?)?;
    r.out.write(&loss_path(out), log.as_bytes())?;
    r.out.manifest(&manifest_path(out), m)
}

fn loss_path(ckpt: &Path) -> PathBuf {
    let mut s = ckpt.as_os_str().to_owned();
    s.push(".loss.tsv");
    PathBuf::from(s)
}

fn train_mt(r: &mut Run, data: &[PathBuf], out: &Path) -> Outcome<()> {
    let examples = load_dataset(data, r.cfg.validation())?;
    let simgs: Vec<SimgGraph> = examples.into_iter().map(|e| e.simg).collect();
    let mut model = MultitaskModel::new(r.cfg.mt_model.clone(), r.cfg.seed).or_invalid("mt_model")?;
    let records = train_multitask(&mut model, &simgs, &r.cfg.mt_train, |rec| log::debug!("{}", rec.line())).or_runtime("training")?;
    let mut log = format!("{}\n", LossRecord::HEADER);
    for rec in &records {
        log.push_str(&rec.line());
        log.push('\n');
    }
    let stored = MultitaskModelConfig {
        link_threshold: 0.0,
        ..r.cfg.mt_model.clone()
    };
    let mut m = r.manifest("train-mt");
    record_inputs(&mut m, data)?;
    m.model = Some(serde_json::to_value(&stored).or_runtime("config")?);
    m.model_hash = Some(config_hash(&stored));
    r.out.write(out, &checkpoint_bytes(&model.store)?)?;
    r.out.write(&loss_path(out), log.as_bytes())?;
    r.out.manifest(&manifest_path(out), m)
}

fn predict(r: &mut Run, molecule: &Path, lp: &Path, mt: &Path, out: &Path) -> Outcome<()> {
    let m = load_molecule(molecule)?;
    let (lpm, mtm) = (r.lp_model(lp)?, r.mt_model(mt)?);
    let (g, _) = predict_simg(&m, &lpm, &mtm, r.cfg.seed, r.cfg.threshold).or_runtime("prediction")?;
    let mut man = r.manifest("predict");
    for p in [molecule, lp, mt] {
        man.input(p)?;
    }
    r.out.write(out, serialize_simg(&g).as_bytes())?;
    r.out.manifest(&manifest_path(out), man)
}

fn al_error(e: AlError) -> Failure {
    match e {
        AlError::Config(_) | AlError::ConfigMismatch => Failure::invalid(e),
        _ => Failure::runtime(e),
    }
}

fn al_run(r: &mut Run, pool_dir: &Path, molecules: &[PathBuf], held_out: &[PathBuf], rounds: usize, out: &Path) -> Outcome<()> {
    let rules = rules();
    let mut man = r.manifest("al-run");
    let mut pool = if pool_dir.join("manifest.tsv").is_file() {
        Pool::load(pool_dir).or_invalid(pool_dir.display())?
    } else {
        if molecules.is_empty() {
            return Err(Failure::invalid(format!("{}: no pool state, and no --molecules given", pool_dir.display())));
        }
        let files = collect(molecules, &["molj"])?;
        let mut mols = Vec::with_capacity(files.len());
        for f in &files {
            mols.push(load_molecule(f)?);
            man.input(f)?;
        }
        r.out.ensure_dir(pool_dir)?;
        Pool::new(mols, r.cfg.partitions)
    };
    let mut held = Vec::new();
    for f in collect(held_out, &["molj"])? {
        let m = load_molecule(&f)?;
        let s = synth_simg(&m, &rules).or_invalid(f.display())?;
        man.input(&f)?;
        held.push((m, s));
    }
    let history = al_loop(&mut pool, &r.cfg.active_learning, &rules, rounds, &held, Some(pool_dir)).map_err(al_error)?;
    r.out.write(&out.join("history.tsv"), history.to_text().as_bytes())?;
    let mut selections = String::from("round\thash\n");
    for rec in &history.rounds {
        for h in &rec.selection {
            writeln!(selections, "{}\t{h}", rec.round).unwrap();
        }
    }
    r.out.write(&out.join("selections.tsv"), selections.as_bytes())?;
    r.out.manifest(&out.join("manifest.json"), man)
}

fn eval(r: &mut Run, data: &[PathBuf], mt: &Path, lp: Option<&Path>, matrices: bool, out: &Path) -> Outcome<()> {
    let examples = load_dataset(data, r.cfg.validation())?;
    let mtm = r.mt_model(mt)?;
    let graphs: Vec<&ExtendedGraph> = examples.iter().map(|e| &e.simg.graph).collect();
    let preds = predict_graphs(&mtm, &graphs, r.cfg.seed, r.cfg.threshold, 32);
    let truth: Vec<SimgGraph> = examples.iter().map(|e| e.simg.clone()).collect();
    let report = evaluate_predictions(&preds, &truth, r.cfg.threshold).or_runtime("evaluation")?;
    let mut text = report.to_text();
    let mut man = r.manifest("eval");
    record_inputs(&mut man, data)?;
    man.input(mt)?;
    if let Some(lp) = lp {
        let lpm = r.lp_model(lp)?;
        man.input(lp)?;
        let exact = examples.iter().filter(|e| predicted_graph(&lpm, &e.molecule).as_ref() == Some(&e.simg.graph)).count();
        writeln!(text, "reconstruction\t{:.6}", exact as f64 / examples.len() as f64).unwrap();
    }
    r.out.ensure_dir(out)?;
    r.out.write(&out.join("metrics.tsv"), text.as_bytes())?;
    r.out.write(&out.join("f1.tsv"), report.binned.to_text().as_bytes())?;
    if matrices {
        for (e, p) in examples.iter().zip(&preds) {
            let d = interaction_matrix(&p.simg).difference(&interaction_matrix(&e.simg)).or_runtime(&e.name)?;
            r.out.write(&out.join("matrices").join(format!("{}.tsv", e.name)), d.to_text().as_bytes())?;
        }
    }
    r.out.manifest(&out.join("manifest.json"), man)
}

fn bench(r: &mut Run, data: &[PathBuf], variants: &[String], lp: Option<&Path>, mt: Option<&Path>, out: &Path) -> Outcome<()> {
    let variants: Vec<Variant> = variants
        .iter()
        .map(|v| Variant::from_name(v).ok_or_else(|| Failure::invalid(format!("unknown variant {v}"))))
        .collect::<Outcome<_>>()?;
    let examples = load_dataset(data, r.cfg.validation())?;
    let mut man = r.manifest("bench");
    record_inputs(&mut man, data)?;
    let star = if variants.contains(&Variant::SimgStar) {
        let (Some(lp), Some(mt)) = (lp, mt) else {
            return Err(Failure::invalid("simg-star needs --lp and --mt"));
        };
        let (lpm, mtm) = (r.lp_model(lp)?, r.mt_model(mt)?);
        man.input(lp)?;
        man.input(mt)?;
        let mut graphs = Vec::with_capacity(examples.len());
        for e in &examples {
            graphs.push(predict_simg(&e.molecule, &lpm, &mtm, r.cfg.seed, r.cfg.threshold).or_runtime(&e.name)?.0);
        }
        Some(graphs)
    } else {
        None
    };
    let mut text = String::from("variant\ttest_mae\tvalidation_mae\tratio\ttrain\tvalidation\ttest\n");
    for v in variants {
        let mut rows = Vec::with_capacity(examples.len());
        for (k, e) in examples.iter().enumerate() {
            let y: f64 = e.simg.interactions.iter().map(|x| x.e2).sum();
            let s = match (v, &star) {
                (Variant::SimgStar, Some(g)) => &g[k],
                _ => &e.simg,
            };
            let g = bench_graph(v, &build_molecular_graph(&e.molecule), Some(s), y).or_runtime(&e.name)?;
            rows.push((structure_hash(&e.molecule), g));
        }
        let res = downstream_benchmark(v, &rows, &r.cfg.bench).or_runtime(v.name())?;
        writeln!(
            text,
            "{}\t{:.6}\t{:.6}\t{:.6}\t{}\t{}\t{}",
            v.name(),
            res.test_mae,
            res.validation_mae,
            res.ratio,
            res.sizes[0],
            res.sizes[1],
            res.sizes[2]
        )
        .unwrap();
    }
    r.out.ensure_dir(out)?;
    r.out.write(&out.join("results.tsv"), text.as_bytes())?;
    r.out.manifest(&out.join("manifest.json"), man)
}

fn export_traj(r: &mut Run, input: &Path, mt: &Path, lp: Option<&Path>, out: &Path) -> Outcome<()> {
    let mut man = r.manifest("export-traj");
    man.input(input)?;
    man.input(mt)?;
    let graph = if input.extension().is_some_and(|e| e == "simg") {
        load_simg(input)?.graph
    } else {
        let Some(lp) = lp else {
            return Err(Failure::invalid("a molecule input needs --lp"));
        };
        man.input(lp)?;
        let m = load_molecule(input)?;
        predicted_graph(&r.lp_model(lp)?, &m).ok_or_else(|| Failure::runtime("predicted lone-pair counts do not form a valid graph"))?
    };
    let mtm = r.mt_model(mt)?;
    let inputs = GraphInputs::new(&graph);
    let batch = Batch::new(&[&inputs]);
    let mut ctx = Ctx::new(&mtm.store, false);
    let (_, trace) = mtm.forward(&mut ctx, &batch, r.cfg.seed);
    let text = export_trajectory(&trace, &batch, &[&inputs]);
    r.out.write(out, text.as_bytes())?;
    r.out.manifest(&manifest_path(out), man)
}
