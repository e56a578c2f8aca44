use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";

/// Record of one stage run, written as `manifest.json` in its directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub stage: String,
    pub versions: BTreeMap<String, String>,
    pub seed: u64,
    pub config: Value,
    pub args: Value,
    /// Upstream manifest path, relative to the run root, to its SHA-256.
    pub inputs: BTreeMap<String, String>,
    /// Output file path, relative to the stage directory, to its SHA-256.
    pub outputs: BTreeMap<String, String>,
    pub details: Value,
}

pub fn versions() -> BTreeMap<String, String> {
    BTreeMap::from([
        ("metsynth".to_string(), metsynth::VERSION.to_string()),
        ("metsynth-cli".to_string(), env!("CARGO_PKG_VERSION").to_string()),
    ])
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(sha256_bytes(&bytes))
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| CliError::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| CliError::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path != root.join(MANIFEST) {
            out.push(path);
        }
    }
    Ok(())
}

fn relative(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).expect("path below root");
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// SHA-256 of every file below `dir` except its own manifest.
pub fn hash_tree(dir: &Path) -> Result<BTreeMap<String, String>> {
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    files
        .into_iter()
        .map(|p| Ok((relative(dir, &p), sha256_file(&p)?)))
        .collect()
}

impl Manifest {
    pub fn read(dir: &Path) -> Result<Manifest> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| CliError::InputCheck(format!("{}: {e}", path.display())))
    }

    /// Every listed output still has its recorded hash.
    pub fn verify_outputs(&self, dir: &Path) -> Result<()> {
        for (name, want) in &self.outputs {
            let path = dir.join(name);
            if !path.is_file() {
                return Err(CliError::InputCheck(format!(
                    "{} listed in the {} manifest is missing",
                    path.display(),
                    self.stage
                )));
            }
            if &sha256_file(&path)? != want {
                return Err(CliError::InputCheck(format!(
                    "{} changed after the {} stage wrote it",
                    path.display(),
                    self.stage
                )));
            }
        }
        Ok(())
    }
}

/// Read and verify the manifest of an upstream stage; returns it with the
/// hash of its manifest file.
pub fn verify_stage(dir: &Path) -> Result<(Manifest, String)> {
    let manifest = Manifest::read(dir)?;
    manifest.verify_outputs(dir)?;
    Ok((manifest, sha256_file(&dir.join(MANIFEST))?))
}

/// A stage about to run: everything its outputs depend on.
#[derive(Debug, Clone)]
pub struct StageRun {
    pub stage: String,
    pub dir: PathBuf,
    pub seed: u64,
    pub config: Value,
    pub args: Value,
    pub inputs: BTreeMap<String, String>,
}

impl StageRun {
    pub fn new(stage: &str, dir: PathBuf, seed: u64, config: &impl Serialize, args: Value) -> Self {
        StageRun {
            stage: stage.to_string(),
            dir,
            seed,
            config: serde_json::to_value(config).expect("config serializes"),
            args,
            inputs: BTreeMap::new(),
        }
    }

    /// Verify an upstream stage and record its manifest hash under
    /// `name`, its path relative to the run root.
    pub fn input(&mut self, root: &Path, name: &str) -> Result<Manifest> {
        let (manifest, hash) = verify_stage(&root.join(name))?;
        self.inputs.insert(name.to_string(), hash);
        Ok(manifest)
    }

    /// The existing manifest was written by an identical run and its
    /// outputs are intact.
    pub fn up_to_date(&self) -> bool {
        let Ok(m) = Manifest::read(&self.dir) else {
            return false;
        };
        m.stage == self.stage
            && m.versions == versions()
            && m.seed == self.seed
            && m.config == self.config
            && m.args == self.args
            && m.inputs == self.inputs
            && m.verify_outputs(&self.dir).is_ok()
    }

    /// Remove previous outputs and create the empty stage directory.
    pub fn prepare(&self) -> Result<()> {
        if self.dir.exists() {
            fs::remove_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))?;
        }
        fs::create_dir_all(&self.dir).map_err(|e| CliError::io(&self.dir, e))
    }

    /// Hash the outputs and write the manifest.
    pub fn finish(self, details: Value) -> Result<Manifest> {
        let manifest = Manifest {
            outputs: hash_tree(&self.dir)?,
            stage: self.stage,
            versions: versions(),
            seed: self.seed,
            config: self.config,
            args: self.args,
            inputs: self.inputs,
            details,
        };
        let path = self.dir.join(MANIFEST);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn run(dir: &Path) -> StageRun {
        StageRun::new("demo", dir.to_path_buf(), 7, &json!({"a": 1}), json!({}))
    }

    #[test]
    fn sha256_of_known_input() {
        assert_eq!(
            sha256_bytes(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn manifest_tracks_nested_outputs_and_detects_edits() {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("stage");
        let stage = run(&dir);
        assert!(!stage.up_to_date());
        stage.prepare().unwrap();
        fs::create_dir_all(dir.join("sub")).unwrap();
        fs::write(dir.join("a.txt"), "x").unwrap();
        fs::write(dir.join("sub/b.txt"), "y").unwrap();
        let m = stage.finish(json!(null)).unwrap();
        assert_eq!(m.outputs.keys().collect::<Vec<_>>(), ["a.txt", "sub/b.txt"]);
        assert!(run(&dir).up_to_date());
        verify_stage(&dir).unwrap();

        let other = StageRun::new("demo", dir.clone(), 8, &json!({"a": 1}), json!({}));
        assert!(!other.up_to_date());

        fs::write(dir.join("sub/b.txt"), "z").unwrap();
        assert!(!run(&dir).up_to_date());
        assert_eq!(verify_stage(&dir).unwrap_err().exit_code(), 3);
    }

    #[test]
    fn missing_manifest_is_missing_input() {
        let tmp = tempfile::tempdir().unwrap();
        let err = verify_stage(&tmp.path().join("nothing")).unwrap_err();
        assert!(matches!(err, CliError::MissingInput(_)));
    }
}
