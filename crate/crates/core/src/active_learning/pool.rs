use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use crate::chem_io::{parse_molecule, parse_nbo_json, serialize_molecule, serialize_nbo_json, structure_hash, Molecule, NboRecord, Validation};

use super::oracle::{synth_label, OracleError, OracleRules};

#[derive(Debug, thiserror::Error)]
pub enum PoolError {
    #[error("pool is empty")]
    Empty,
    #[error("unknown molecule {0}")]
    Unknown(String),
    #[error("{path}: {message}")]
    Corrupt { path: String, message: String },
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Label {
    pub record: NboRecord,
    /// Acquisition round; 0 for the initial sample.
    pub round: usize,
}

/// Content-addressed molecule store split into labeled and unlabeled sets.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Pool {
    pub molecules: BTreeMap<String, Molecule>,
    pub labels: BTreeMap<String, Label>,
    pub partitions: usize,
}

/// Writes `contents` next to `path` and renames it into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let tmp = path.with_extension(format!("{}.tmp", path.extension().and_then(|e| e.to_str()).unwrap_or("")));
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

impl Pool {
    /// Duplicate structures are stored once.
    pub fn new(molecules: impl IntoIterator<Item = Molecule>, partitions: usize) -> Self {
        Pool {
            molecules: molecules.into_iter().map(|m| (structure_hash(&m), m)).collect(),
            labels: BTreeMap::new(),
            partitions: partitions.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.molecules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.molecules.is_empty()
    }

    pub fn is_labeled(&self, hash: &str) -> bool {
        self.labels.contains_key(hash)
    }

    pub fn labeled(&self) -> Vec<&String> {
        self.labels.keys().collect()
    }

    pub fn unlabeled(&self) -> Vec<&String> {
        self.molecules.keys().filter(|h| !self.labels.contains_key(*h)).collect()
    }

    /// Labels a molecule with the oracle; labeling twice keeps the first
    /// round.
    pub fn label(&mut self, hash: &str, rules: &OracleRules, round: usize) -> Result<(), PoolError> {
        if self.labels.contains_key(hash) {
            return Ok(());
        }
        let m = self.molecules.get(hash).ok_or_else(|| PoolError::Unknown(hash.to_string()))?;
        let record = synth_label(m, rules)?;
        self.labels.insert(hash.to_string(), Label { record, round });
        Ok(())
    }

    /// Unlabeled hashes in `partitions` contiguous runs of the sorted order.
    pub fn partition(&self) -> Vec<Vec<String>> {
        let un: Vec<String> = self.unlabeled().into_iter().cloned().collect();
        let p = self.partitions.max(1);
        let size = un.len().div_ceil(p).max(1);
        let mut parts: Vec<Vec<String>> = un.chunks(size).map(<[String]>::to_vec).collect();
        parts.resize(p, Vec::new());
        parts
    }

    /// `molecules/<hash>.molj`, `labels/<hash>.nboj` and a tab-separated
    /// manifest of hash, status and round.
    pub fn save(&self, dir: &Path) -> Result<(), PoolError> {
        fs::create_dir_all(dir.join("molecules"))?;
        fs::create_dir_all(dir.join("labels"))?;
        let mut manifest = format!("partitions\t{}\n", self.partitions);
        for (h, m) in &self.molecules {
            let path = dir.join("molecules").join(format!("{h}.molj"));
            if !path.exists() {
                write_atomic(&path, serialize_molecule(m).as_bytes())?;
            }
            match self.labels.get(h) {
                Some(l) => {
                    write_atomic(&dir.join("labels").join(format!("{h}.nboj")), serialize_nbo_json(&l.record).as_bytes())?;
                    manifest.push_str(&format!("{h}\tlabeled\t{}\n", l.round));
                }
                None => manifest.push_str(&format!("{h}\tunlabeled\t-\n")),
            }
        }
        write_atomic(&dir.join("manifest.tsv"), manifest.as_bytes())?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, PoolError> {
        let manifest_path = dir.join("manifest.tsv");
        let text = fs::read_to_string(&manifest_path)?;
        let corrupt = |path: &Path, message: String| PoolError::Corrupt {
            path: path.display().to_string(),
            message,
        };
        let mut pool = Pool {
            partitions: 1,
            ..Pool::default()
        };
        for (n, line) in text.lines().enumerate() {
            let cols: Vec<&str> = line.split('\t').collect();
            if n == 0 {
                pool.partitions = match cols.as_slice() {
                    ["partitions", p] => p.parse().map_err(|_| corrupt(&manifest_path, "bad partition count".into()))?,
                    _ => return Err(corrupt(&manifest_path, "missing partitions header".into())),
                };
                continue;
            }
            let [hash, status, round] = cols.as_slice() else {
                return Err(corrupt(&manifest_path, format!("line {}: expected 3 columns", n + 1)));
            };
            let mpath = dir.join("molecules").join(format!("{hash}.molj"));
            let m = parse_molecule(&fs::read_to_string(&mpath)?).map_err(|e| corrupt(&mpath, e.to_string()))?;
            if structure_hash(&m) != *hash {
                return Err(corrupt(&mpath, "content hash mismatch".into()));
            }
            if *status == "labeled" {
                let lpath = dir.join("labels").join(format!("{hash}.nboj"));
                let rec = parse_nbo_json(&fs::read_to_string(&lpath)?, Validation::Strict).map_err(|e| corrupt(&lpath, e.to_string()))?;
                let round = round.parse().map_err(|_| corrupt(&manifest_path, format!("line {}: bad round", n + 1)))?;
                pool.labels.insert(hash.to_string(), Label { record: rec.record, round });
            }
            pool.molecules.insert(hash.to_string(), m);
        }
        Ok(pool)
    }
}
