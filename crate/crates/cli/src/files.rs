use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use simg::active_learning::write_atomic;
use simg::chem_io::{parse_molecule, parse_nbo_record, parse_simg, Molecule, NboRecord, Validation};
use simg::graph::{simg_from_record, SimgGraph};
use simg::models::{LonePairModel, LonePairModelConfig, MultitaskModel, MultitaskModelConfig};
use simg::tensor::{load_checkpoint, save_checkpoint, ParamStore};

use crate::config::config_hash;
use crate::error::{Failure, OrInvalid, OrRuntime, Outcome};

pub fn sha256(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_text(path: &Path) -> Outcome<String> {
    fs::read_to_string(path).or_invalid(path.display())
}

fn located(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::invalid(format!("{}:{e}", path.display()))
}

pub fn load_molecule(path: &Path) -> Outcome<Molecule> {
    parse_molecule(&read_text(path)?).map_err(|e| located(path, e))
}

pub fn load_record(path: &Path, v: Validation) -> Outcome<NboRecord> {
    let parsed = parse_nbo_record(&read_text(path)?, v).map_err(|e| located(path, e))?;
    for w in &parsed.warnings {
        log::warn!("{}:{w}", path.display());
    }
    Ok(parsed.record)
}

pub fn load_simg(path: &Path) -> Outcome<SimgGraph> {
    parse_simg(&read_text(path)?).map_err(|e| located(path, e))
}

fn extension(p: &Path) -> &str {
    p.extension().and_then(|e| e.to_str()).unwrap_or("")
}

/// Files under each input (a file or a directory, not recursive) with one
/// of `exts`, sorted by path.
pub fn collect(inputs: &[PathBuf], exts: &[&str]) -> Outcome<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = fs::read_dir(p)
                .or_invalid(p.display())?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.is_file() && exts.contains(&extension(f)))
                .collect();
            found.sort();
            out.extend(found);
        } else if p.is_file() {
            out.push(p.clone());
        } else {
            return Err(Failure::invalid(format!("{}: no such file or directory", p.display())));
        }
    }
    Ok(out)
}

pub fn stem(p: &Path) -> String {
    p.file_stem().and_then(|s| s.to_str()).unwrap_or("out").to_string()
}

/// One labeled example: name, molecule and its graph.
pub struct Example {
    pub name: String,
    pub molecule: Molecule,
    pub simg: SimgGraph,
}

/// `.simg` files, and `.molj` files with a sibling `.nboj` or `.nbotxt`.
pub fn load_dataset(inputs: &[PathBuf], v: Validation) -> Outcome<Vec<Example>> {
    let mut out = Vec::new();
    for f in collect(inputs, &["simg", "molj"])? {
        if extension(&f) == "simg" {
            let text = read_text(&f)?;
            let simg = parse_simg(&text).map_err(|e| located(&f, e))?;
            let molecule = parse_molecule(&text).map_err(|e| located(&f, e))?;
            out.push(Example { name: stem(&f), molecule, simg });
            continue;
        }
        let labels = ["nboj", "nbotxt"].iter().map(|e| f.with_extension(e)).find(|p| p.is_file());
        let Some(labels) = labels else {
            if inputs.iter().any(|i| i == &f) {
                return Err(Failure::invalid(format!("{}: no label file next to the molecule", f.display())));
            }
            continue;
        };
        let molecule = load_molecule(&f)?;
        let record = load_record(&labels, v)?;
        let simg = simg_from_record(&molecule, &record).map_err(|e| located(&labels, format!(" {e}")))?;
        out.push(Example { name: stem(&f), molecule, simg });
    }
    if out.is_empty() {
        return Err(Failure::invalid("no labeled examples found"));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub seed: u64,
    pub config_hash: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_hash: Option<String>,
}

impl Manifest {
    pub fn new(command: &str, seed: u64, config_hash: String) -> Self {
        Manifest {
            tool: "simg".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            seed,
            config_hash,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            model: None,
            model_hash: None,
        }
    }

    /// Records input files by name and content hash.
    pub fn input(&mut self, path: &Path) -> Outcome<()> {
        let bytes = fs::read(path).or_invalid(path.display())?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        self.inputs.insert(name, sha256(&bytes));
        Ok(())
    }
}

/// Tracks every file and directory a command creates so a failure can
/// remove them again.
#[derive(Default)]
pub struct Outputs {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    digests: BTreeMap<PathBuf, String>,
}

impl Outputs {
    pub fn ensure_dir(&mut self, dir: &Path) -> Outcome<()> {
        if dir.as_os_str().is_empty() || dir.is_dir() {
            return Ok(());
        }
        let mut top = dir.to_path_buf();
        while let Some(parent) = top.parent() {
            if parent.as_os_str().is_empty() || parent.exists() {
                break;
            }
            top = parent.to_path_buf();
        }
        fs::create_dir_all(dir).or_runtime(dir.display())?;
        self.dirs.push(top);
        Ok(())
    }

    pub fn write(&mut self, path: &Path, bytes: &[u8]) -> Outcome<()> {
        if let Some(parent) = path.parent() {
            self.ensure_dir(parent)?;
        }
        self.files.push(path.to_path_buf());
        write_atomic(path, bytes).or_runtime(path.display())?;
        self.digests.insert(path.to_path_buf(), sha256(bytes));
        Ok(())
    }

    /// Writes the manifest at `path`, listing every output written so far
    /// relative to the manifest's directory.
    pub fn manifest(&mut self, path: &Path, mut m: Manifest) -> Outcome<()> {
        let base = path.parent().unwrap_or(Path::new(""));
        for (p, d) in &self.digests {
            let name = p.strip_prefix(base).unwrap_or(p).to_string_lossy().replace('\\', "/");
            m.outputs.insert(name, d.clone());
        }
        let mut text = serde_json::to_string_pretty(&m).or_runtime("manifest")?;
        text.push('\n');
        self.write(path, text.as_bytes())
    }

    pub fn rollback(&self) {
        for f in self.files.iter().rev() {
            let _ = fs::remove_file(f);
            let _ = fs::remove_file(f.with_extension(format!("{}.tmp", extension(f))));
        }
        for d in self.dirs.iter().rev() {
            let _ = fs::remove_dir_all(d);
        }
    }
}

pub fn manifest_path(file: &Path) -> PathBuf {
    let mut s = file.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

/// Checkpoint bytes of a parameter store.
pub fn checkpoint_bytes(store: &ParamStore) -> Outcome<Vec<u8>> {
    let mut buf = Vec::new();
    save_checkpoint(&mut buf, store, None).or_runtime("checkpoint")?;
    Ok(buf)
}

/// Reads a checkpoint and its manifest; the checkpoint must match the hash
/// recorded at training time, and, when `expected` is given, the model
/// configuration must match it.
fn read_checkpoint<C: Serialize + for<'de> Deserialize<'de>>(path: &Path, command: &str, expected: Option<&C>) -> Outcome<(C, ParamStore, Manifest)> {
    let bytes = fs::read(path).or_invalid(path.display())?;
    let mpath = manifest_path(path);
    let m: Manifest = serde_json::from_str(&read_text(&mpath)?).or_invalid(mpath.display())?;
    if m.command != command {
        return Err(Failure::invalid(format!("{}: written by `{}`, expected `{command}`", path.display(), m.command)));
    }
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    if m.outputs.get(&name) != Some(&sha256(&bytes)) {
        return Err(Failure::invalid(format!("{}: checkpoint does not match its manifest", path.display())));
    }
    let config: C = serde_json::from_value(m.model.clone().unwrap_or_default()).or_invalid(mpath.display())?;
    if m.model_hash.as_deref() != Some(config_hash(&config).as_str()) {
        return Err(Failure::invalid(format!("{}: model configuration hash mismatch", mpath.display())));
    }
    if let Some(e) = expected {
        if config_hash(e) != config_hash(&config) {
            return Err(Failure::invalid(format!("{}: trained with a different model configuration than --config", path.display())));
        }
    }
    let (store, _) = load_checkpoint(&mut bytes.as_slice()).or_invalid(path.display())?;
    Ok((config, store, m))
}

pub fn load_lone_pair_model(path: &Path, expected: Option<&LonePairModelConfig>) -> Outcome<LonePairModel> {
    let (config, store, _) = read_checkpoint(path, "train-lp", expected)?;
    LonePairModel::from_store(config, store).or_invalid(path.display())
}

pub fn load_multitask_model(path: &Path, expected: Option<&MultitaskModelConfig>, threshold: f64) -> Outcome<MultitaskModel> {
    let (mut config, store, _): (MultitaskModelConfig, _, _) = read_checkpoint(path, "train-mt", expected.map(|c| MultitaskModelConfig { link_threshold: 0.0, ..c.clone() }).as_ref())?;
    config.link_threshold = threshold;
    MultitaskModel::from_store(config, store).or_invalid(path.display())
}
