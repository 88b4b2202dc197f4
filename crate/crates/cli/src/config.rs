use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use simg::active_learning::AcquisitionConfig;
use simg::chem_io::Validation;
use simg::eval_metrics::BenchConfig;
use simg::models::{LonePairModelConfig, MultitaskModelConfig, MultitaskTrainConfig, TrainConfig};
use simg::synth::SynthConfig;

use crate::error::{Failure, Outcome};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub min_heavy: Option<usize>,
    pub max_heavy: Option<usize>,
    pub multiple_bond_rate: Option<f64>,
}

impl GenerateConfig {
    pub fn synth(&self) -> SynthConfig {
        let d = SynthConfig::default();
        SynthConfig {
            min_heavy: self.min_heavy.unwrap_or(d.min_heavy),
            max_heavy: self.max_heavy.unwrap_or(d.max_heavy),
            multiple_bond_rate: self.multiple_bond_rate.unwrap_or(d.multiple_bond_rate),
            ..d
        }
    }
}

/// Everything a run depends on. Every sub-seed is taken from `seed`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Link-probability threshold τ.
    pub threshold: f64,
    pub lenient: bool,
    pub jobs: usize,
    /// Pool partitions sampled in each acquisition round.
    pub partitions: usize,
    pub lp_model: LonePairModelConfig,
    pub lp_train: TrainConfig,
    pub mt_model: MultitaskModelConfig,
    pub mt_train: MultitaskTrainConfig,
    pub active_learning: AcquisitionConfig,
    pub bench: BenchConfig,
    pub generate: GenerateConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            threshold: 0.5,
            lenient: false,
            jobs: 1,
            partitions: 4,
            lp_model: LonePairModelConfig::default(),
            lp_train: TrainConfig::default(),
            mt_model: MultitaskModelConfig::default(),
            mt_train: MultitaskTrainConfig::default(),
            active_learning: AcquisitionConfig::default(),
            bench: BenchConfig::default(),
            generate: GenerateConfig::default(),
        }
    }
}

pub struct Overrides {
    pub seed: Option<u64>,
    pub threshold: Option<f64>,
    pub strict: bool,
    pub lenient: bool,
    pub jobs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>, o: &Overrides) -> Outcome<Self> {
        let mut cfg = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?;
                toml::from_str(&text).map_err(|e| Failure::invalid(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(s) = o.seed {
            cfg.seed = s;
        }
        if let Some(t) = o.threshold {
            cfg.threshold = t;
        }
        if o.lenient {
            cfg.lenient = true;
        }
        if o.strict {
            cfg.lenient = false;
        }
        if let Some(j) = o.jobs {
            cfg.jobs = j;
        }
        cfg.lp_train.seed = cfg.seed;
        cfg.mt_train.seed = cfg.seed;
        cfg.bench.seed = cfg.seed;
        cfg.mt_model.link_threshold = cfg.threshold;
        let al = &mut cfg.active_learning;
        al.seed = cfg.seed;
        al.jobs = cfg.jobs.max(1);
        al.lp_model = cfg.lp_model.clone();
        al.mt_model = cfg.mt_model.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Outcome<()> {
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Failure::invalid(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if self.partitions == 0 {
            return Err(Failure::invalid("partitions must be at least 1"));
        }
        if self.jobs == 0 {
            return Err(Failure::invalid("jobs must be at least 1"));
        }
        self.lp_model.validate().map_err(Failure::invalid)?;
        self.mt_model.validate().map_err(Failure::invalid)?;
        let g = self.generate.synth();
        if g.min_heavy == 0 || g.min_heavy > g.max_heavy {
            return Err(Failure::invalid("generate: need 1 ≤ min_heavy ≤ max_heavy"));
        }
        Ok(())
    }

    pub fn validation(&self) -> Validation {
        if self.lenient {
            Validation::Lenient
        } else {
            Validation::Strict
        }
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

/// SHA-256 of the canonical JSON form.
pub fn config_hash<T: Serialize>(v: &T) -> String {
    let json = serde_json::to_string(v).expect("config serializes");
    hex::encode(Sha256::digest(json.as_bytes()))
}
