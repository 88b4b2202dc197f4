use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use super::oracle::OracleRules;
use super::pool::{Pool, PoolError};
use crate::chem_io::Molecule;
use crate::element::Element;
use crate::graph::{build_extended_graph, build_molecular_graph, simg_from_record, ExtendedGraph, GraphError, SimgGraph};
use crate::models::{
    predict_graphs, train_lone_pair, train_multitask, LonePairModel, LonePairModelConfig, ModelError, MultitaskModel, MultitaskModelConfig,
    MultitaskTrainConfig, TrainConfig,
};
use crate::synth::item_rng;

/// Names of the scalar regression targets used for acquisition.
pub const TARGET_NAMES: [&str; 11] = [
    "npa.charge",
    "npa.core",
    "npa.valence",
    "npa.total",
    "lp.occupancy",
    "lp.s",
    "lp.p",
    "bond.occupancy",
    "antibond.occupancy",
    "bond.polarization",
    "antibond.polarization",
];

/// Per-node values of target `t` in a graph.
fn target_values(g: &SimgGraph, t: usize) -> Vec<f64> {
    match t {
        0..=3 => g.atom_targets.iter().map(|a| a.to_array()[t]).collect(),
        4 => g.lp_targets.iter().map(|l| l.occupancy).collect(),
        5 => g.lp_targets.iter().map(|l| l.character.s).collect(),
        6 => g.lp_targets.iter().map(|l| l.character.p).collect(),
        7 => g.bond_targets.iter().map(|b| b.bonding.occupancy).collect(),
        8 => g.bond_targets.iter().map(|b| b.antibonding.occupancy).collect(),
        9 => g.bond_targets.iter().map(|b| b.bonding.atoms[0].polarization).collect(),
        _ => g.bond_targets.iter().map(|b| b.antibonding.atoms[0].polarization).collect(),
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AlError {
    #[error("invalid acquisition config: {0}")]
    Config(String),
    #[error("ensemble members have different configurations")]
    ConfigMismatch,
    #[error(transparent)]
    Pool(#[from] PoolError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AcquisitionConfig {
    pub ensemble_size: usize,
    /// Molecules selected per target.
    pub k: usize,
    /// Molecules sampled from each pool partition for inference.
    pub per_part: usize,
    pub targets: Vec<String>,
    /// Size of the uniform initial sample when the pool has no labels.
    pub initial: usize,
    pub seed: u64,
    pub lp_model: LonePairModelConfig,
    pub lp_train: TrainConfig,
    pub mt_model: MultitaskModelConfig,
    pub mt_train: MultitaskTrainConfig,
    /// Worker threads for ensemble training.
    pub jobs: usize,
}

impl Default for AcquisitionConfig {
    fn default() -> Self {
        AcquisitionConfig {
            ensemble_size: 3,
            k: 50,
            per_part: 200,
            targets: TARGET_NAMES.iter().map(|s| s.to_string()).collect(),
            initial: 500,
            seed: 0,
            lp_model: LonePairModelConfig::default(),
            lp_train: TrainConfig::default(),
            mt_model: MultitaskModelConfig::default(),
            mt_train: MultitaskTrainConfig::default(),
            jobs: 1,
        }
    }
}

impl AcquisitionConfig {
    pub fn validate(&self) -> Result<(), AlError> {
        if self.ensemble_size < 2 {
            return Err(AlError::Config("ensemble size must be at least 2".into()));
        }
        if self.k == 0 {
            return Err(AlError::Config("k must be at least 1".into()));
        }
        for t in &self.targets {
            if !TARGET_NAMES.contains(&t.as_str()) {
                return Err(AlError::Config(format!("unknown target {t}")));
            }
        }
        Ok(())
    }
}

/// Molecule × target variance across ensemble members.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceTable {
    pub molecules: Vec<String>,
    pub targets: Vec<String>,
    /// values[molecule][target]
    pub values: Vec<Vec<f64>>,
}

/// Population variance across members, averaged over the molecule's nodes
/// of each target's kind (0 for molecules without such nodes).
pub fn ensemble_variance(models: &[&MultitaskModel], graphs: &[(String, ExtendedGraph)], seed: u64) -> Result<VarianceTable, AlError> {
    if models.windows(2).any(|w| w[0].config != w[1].config) {
        return Err(AlError::ConfigMismatch);
    }
    let refs: Vec<&ExtendedGraph> = graphs.iter().map(|(_, g)| g).collect();
    let tau = models.first().map_or(0.5, |m| m.config.link_threshold);
    let preds: Vec<Vec<SimgGraph>> = models.iter().map(|m| predict_graphs(m, &refs, seed, tau, 32).into_iter().map(|p| p.simg).collect()).collect();
    let e = models.len() as f64;
    let mut values = Vec::with_capacity(graphs.len());
    for g in 0..graphs.len() {
        let mut row = Vec::with_capacity(TARGET_NAMES.len());
        for t in 0..TARGET_NAMES.len() {
            let per_member: Vec<Vec<f64>> = preds.iter().map(|p| target_values(&p[g], t)).collect();
            let nodes = per_member.first().map_or(0, Vec::len);
            if nodes == 0 {
                row.push(0.0);
                continue;
            }
            let mut acc = 0.0;
            for n in 0..nodes {
                let mean = per_member.iter().map(|v| v[n]).sum::<f64>() / e;
                acc += per_member.iter().map(|v| (v[n] - mean) * (v[n] - mean)).sum::<f64>() / e;
            }
            row.push(acc / nodes as f64);
        }
        values.push(row);
    }
    Ok(VarianceTable {
        molecules: graphs.iter().map(|(h, _)| h.clone()).collect(),
        targets: TARGET_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
    })
}

/// Union over targets of the top-`k` molecules by variance, ties broken by
/// ascending hash.
pub fn acquire(table: &VarianceTable, targets: &[String], k: usize) -> BTreeSet<String> {
    let mut out = BTreeSet::new();
    for t in targets {
        let Some(col) = table.targets.iter().position(|x| x == t) else {
            continue;
        };
        let mut order: Vec<usize> = (0..table.molecules.len()).collect();
        order.sort_by(|&a, &b| table.values[b][col].total_cmp(&table.values[a][col]).then_with(|| table.molecules[a].cmp(&table.molecules[b])));
        out.extend(order.into_iter().take(k).map(|i| table.molecules[i].clone()));
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundMetrics {
    /// Atom-charge MAE and exact extended-graph reconstruction rate on the
    /// held-out set.
    pub charge_mae: f64,
    pub reconstruction: f64,
    pub labeled: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ElementShift {
    pub element: Element,
    /// Fraction of selected / candidate molecules containing the element.
    pub selected: f64,
    pub pool: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub round: usize,
    pub selection: Vec<String>,
    pub metrics: RoundMetrics,
    pub elements: Vec<ElementShift>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct History {
    pub rounds: Vec<RoundRecord>,
}

impl History {
    /// Tab-separated: one line per round, then one per (round, element).
    pub fn to_text(&self) -> String {
        let mut s = String::from("round\tlabeled\tselected\tcharge_mae\treconstruction\n");
        for r in &self.rounds {
            writeln!(s, "{}\t{}\t{}\t{:.6}\t{:.4}", r.round, r.metrics.labeled, r.selection.len(), r.metrics.charge_mae, r.metrics.reconstruction).unwrap();
        }
        s.push_str("round\telement\tselected_fraction\tpool_fraction\tdelta\n");
        for r in &self.rounds {
            for e in &r.elements {
                writeln!(s, "{}\t{}\t{:.4}\t{:.4}\t{:+.4}", r.round, e.element.symbol(), e.selected, e.pool, e.selected - e.pool).unwrap();
            }
        }
        s
    }
}

pub struct Ensemble {
    pub lp: LonePairModel,
    pub members: Vec<MultitaskModel>,
}

fn labeled_simgs(pool: &Pool) -> Result<Vec<SimgGraph>, AlError> {
    pool.labels.iter().map(|(h, l)| Ok(simg_from_record(&pool.molecules[h], &l.record)?)).collect()
}

/// Trains the lone-pair model and `ensemble_size` multitask models from
/// fresh seeds derived from (seed, round).
pub fn train_ensemble(pool: &Pool, cfg: &AcquisitionConfig, round: usize) -> Result<Ensemble, AlError> {
    let data = labeled_simgs(pool)?;
    if data.is_empty() {
        return Err(AlError::Pool(PoolError::Empty));
    }
    let round_seed = cfg.seed.wrapping_mul(1_000_003).wrapping_add(round as u64);
    let lp_data: Vec<(ExtendedGraph, Vec<_>)> = data.iter().map(|s| (molecular_part(&s.graph), s.graph.lp_counts())).collect();
    let mut lp = LonePairModel::new(cfg.lp_model.clone(), round_seed)?;
    train_lone_pair(
        &mut lp,
        &lp_data,
        &TrainConfig {
            seed: round_seed,
            ..cfg.lp_train.clone()
        },
    )?;
    let train_member = |e: usize| -> Result<MultitaskModel, AlError> {
        let seed = round_seed.wrapping_mul(31).wrapping_add(e as u64 + 1);
        let mut m = MultitaskModel::new(cfg.mt_model.clone(), seed)?;
        let tc = MultitaskTrainConfig {
            seed,
            ..cfg.mt_train.clone()
        };
        train_multitask(&mut m, &data, &tc, |_| {})?;
        Ok(m)
    };
    let members = if cfg.jobs > 1 {
        let mut slots: Vec<Option<Result<MultitaskModel, AlError>>> = (0..cfg.ensemble_size).map(|_| None).collect();
        for chunk in (0..cfg.ensemble_size).collect::<Vec<_>>().chunks(cfg.jobs) {
            std::thread::scope(|s| {
                let handles: Vec<_> = chunk.iter().map(|&e| (e, s.spawn(move || train_member(e)))).collect();
                for (e, h) in handles {
                    slots[e] = Some(h.join().expect("ensemble worker panicked"));
                }
            });
        }
        slots.into_iter().map(|s| s.expect("trained")).collect::<Result<Vec<_>, _>>()?
    } else {
        (0..cfg.ensemble_size).map(train_member).collect::<Result<Vec<_>, _>>()?
    };
    Ok(Ensemble { lp, members })
}

fn molecular_part(g: &ExtendedGraph) -> ExtendedGraph {
    ExtendedGraph {
        lp_nodes: Vec::new(),
        bond_nodes: Vec::new(),
        atom_bond_edges: Vec::new(),
        atom_lp_edges: Vec::new(),
        ..g.clone()
    }
}

/// Extended graph from the lone-pair model; molecules whose predicted
/// counts cannot be realised are skipped.
pub fn predicted_graph(lp: &LonePairModel, m: &Molecule) -> Option<ExtendedGraph> {
    let mg = build_molecular_graph(m);
    let (counts, _) = lp.predict_graph(&mg);
    build_extended_graph(&mg, &counts).ok()
}

fn evaluate(ens: &Ensemble, held_out: &[(Molecule, SimgGraph)], labeled: usize, seed: u64) -> RoundMetrics {
    if held_out.is_empty() {
        return RoundMetrics {
            charge_mae: 0.0,
            reconstruction: 0.0,
            labeled,
        };
    }
    let mut exact = 0;
    for (m, s) in held_out {
        if predicted_graph(&ens.lp, m).as_ref() == Some(&s.graph) {
            exact += 1;
        }
    }
    let graphs: Vec<&ExtendedGraph> = held_out.iter().map(|(_, s)| &s.graph).collect();
    let preds = predict_graphs(&ens.members[0], &graphs, seed, ens.members[0].config.link_threshold, 32);
    let (mut err, mut n) = (0.0, 0usize);
    for (p, (_, s)) in preds.iter().zip(held_out) {
        for (a, b) in p.simg.atom_targets.iter().zip(&s.atom_targets) {
            err += (a.charge - b.charge).abs();
            n += 1;
        }
    }
    RoundMetrics {
        charge_mae: err / n.max(1) as f64,
        reconstruction: exact as f64 / held_out.len() as f64,
        labeled,
    }
}

/// One acquisition step with trained models: sample each partition,
/// predict, rank by variance, select. Returns the selection and the
/// candidate hashes it was drawn from.
pub fn select_round(pool: &Pool, ens: &Ensemble, cfg: &AcquisitionConfig, round: usize) -> Result<(BTreeSet<String>, Vec<String>), AlError> {
    let mut candidates = Vec::new();
    for (p, part) in pool.partition().iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        let n = cfg.per_part.min(part.len());
        let mut rng = item_rng(cfg.seed, "al-sample", (round as u64) << 32 | p as u64);
        let mut idx = sample(&mut rng, part.len(), n).into_vec();
        idx.sort_unstable();
        candidates.extend(idx.into_iter().map(|i| part[i].clone()));
    }
    let graphs: Vec<(String, ExtendedGraph)> = candidates.iter().filter_map(|h| predicted_graph(&ens.lp, &pool.molecules[h]).map(|g| (h.clone(), g))).collect();
    let refs: Vec<&MultitaskModel> = ens.members.iter().collect();
    let table = ensemble_variance(&refs, &graphs, cfg.seed)?;
    Ok((acquire(&table, &cfg.targets, cfg.k), candidates))
}

fn element_shift(pool: &Pool, selection: &BTreeSet<String>, candidates: &[String]) -> Vec<ElementShift> {
    let frac = |hashes: &mut dyn Iterator<Item = &String>, e: Element, n: usize| {
        if n == 0 {
            return 0.0;
        }
        hashes.filter(|h| pool.molecules[*h].contains(e)).count() as f64 / n as f64
    };
    Element::ALL
        .iter()
        .map(|&e| ElementShift {
            element: e,
            selected: frac(&mut selection.iter(), e, selection.len()),
            pool: frac(&mut candidates.iter(), e, candidates.len()),
        })
        .collect()
}

/// Trains, evaluates and acquires for `rounds` rounds. Without existing
/// labels a uniform initial sample of `cfg.initial` molecules is labeled
/// first. With `checkpoint`, the pool is saved after every label commit.
pub fn al_loop(
    pool: &mut Pool,
    cfg: &AcquisitionConfig,
    rules: &OracleRules,
    rounds: usize,
    held_out: &[(Molecule, SimgGraph)],
    checkpoint: Option<&Path>,
) -> Result<History, AlError> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(AlError::Pool(PoolError::Empty));
    }
    if pool.labels.is_empty() {
        let keys: Vec<String> = pool.molecules.keys().cloned().collect();
        let n = cfg.initial.min(keys.len()).max(1);
        let mut idx = sample(&mut item_rng(cfg.seed, "al-initial", 0), keys.len(), n).into_vec();
        idx.sort_unstable();
        for i in idx {
            pool.label(&keys[i], rules, 0)?;
        }
        if let Some(dir) = checkpoint {
            pool.save(dir)?;
        }
    }
    let mut history = History::default();
    let mut ens = train_ensemble(pool, cfg, 0)?;
    history.rounds.push(RoundRecord {
        round: 0,
        selection: Vec::new(),
        metrics: evaluate(&ens, held_out, pool.labels.len(), cfg.seed),
        elements: Vec::new(),
    });
    for round in 1..=rounds {
        if pool.unlabeled().is_empty() {
            break;
        }
        let (selection, candidates) = select_round(pool, &ens, cfg, round)?;
        let elements = element_shift(pool, &selection, &candidates);
        for h in &selection {
            pool.label(h, rules, round)?;
        }
        if let Some(dir) = checkpoint {
            pool.save(dir)?;
        }
        ens = train_ensemble(pool, cfg, round)?;
        history.rounds.push(RoundRecord {
            round,
            selection: selection.into_iter().collect(),
            metrics: evaluate(&ens, held_out, pool.labels.len(), cfg.seed),
            elements,
        });
    }
    Ok(history)
}
