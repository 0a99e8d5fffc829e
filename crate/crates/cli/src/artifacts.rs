//! Stage directories, checksummed artifacts and the run manifest.
//!
//! Each stage writes into `stages/<name>-<key>/` where the key is a hash
//! of the stage name, the config hash and the checksums of everything the
//! stage reads. A finished stage leaves `stage.json` listing its
//! artifacts; on resume the stage is reused only if every listed artifact
//! is still present with the recorded checksum.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const STAGE_FILE: &str = "stage.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&std::fs::read(path)?))
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the run directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub key: String,
    pub dir: String,
    /// Artifacts of earlier stages (or external files) this stage read.
    pub inputs: Vec<String>,
    pub artifacts: Vec<Artifact>,
    pub seconds: f64,
    pub reused: bool,
}

impl StageRecord {
    pub fn artifact(&self, name: &str) -> Option<&Artifact> {
        let path = format!("{}/{name}", self.dir);
        self.artifacts.iter().find(|a| a.path == path)
    }

    /// Names (relative to the stage directory) with the given prefix.
    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        let dir = format!("{}/", self.dir);
        self.artifacts
            .iter()
            .filter_map(|a| a.path.strip_prefix(&dir))
            .filter(|n| n.starts_with(prefix))
            .map(str::to_string)
            .collect()
    }

    /// Key material for downstream stages.
    pub fn fingerprint(&self) -> String {
        let mut s = String::new();
        for a in &self.artifacts {
            s.push_str(&a.path);
            s.push(' ');
            s.push_str(&a.sha256);
            s.push('\n');
        }
        sha256_hex(s.as_bytes())
    }

    fn verify(&self, out: &Path) -> bool {
        self.artifacts.iter().all(|a| match std::fs::read(out.join(&a.path)) {
            Ok(b) => b.len() as u64 == a.bytes && sha256_hex(&b) == a.sha256,
            Err(_) => false,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub software_version: String,
    pub stages: Vec<StageRecord>,
    pub total_seconds: f64,
}

impl RunManifest {
    pub fn new(config_hash: String) -> Self {
        RunManifest {
            config_hash,
            software_version: env!("CARGO_PKG_VERSION").to_string(),
            stages: Vec::new(),
            total_seconds: 0.0,
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.name == name)
    }

    pub fn load(out: &Path) -> Result<Option<Self>> {
        let p = out.join(MANIFEST_FILE);
        if !p.exists() {
            return Ok(None);
        }
        Ok(Some(serde_json::from_str(&std::fs::read_to_string(p)?)?))
    }

    pub fn save(&self, out: &Path) -> Result<()> {
        write_atomic(&out.join(MANIFEST_FILE), serde_json::to_string_pretty(self)?.as_bytes())
    }

    /// Every stage input is an artifact of an earlier stage or an external
    /// file.
    pub fn check_closure(&self) -> Result<()> {
        for (i, s) in self.stages.iter().enumerate() {
            for input in &s.inputs {
                let external = input.starts_with("external:");
                let declared = self.stages[..i].iter().any(|p| p.artifacts.iter().any(|a| &a.path == input));
                if !external && !declared {
                    return Err(CliError::Artifact(format!("stage {} read undeclared artifact {input}", s.name)));
                }
            }
        }
        Ok(())
    }
}

/// A stage in progress: records what it reads and writes.
pub struct StageCtx {
    out: PathBuf,
    name: String,
    key: String,
    dir: String,
    inputs: Vec<String>,
    artifacts: Vec<Artifact>,
    started: Instant,
}

impl StageCtx {
    pub fn dir(&self) -> String {
        self.dir.clone()
    }

    /// Reads an artifact of an earlier stage, which must list it.
    pub fn read(&mut self, from: &StageRecord, name: &str) -> Result<Vec<u8>> {
        let a = from
            .artifact(name)
            .ok_or_else(|| CliError::Artifact(format!("stage {} has no artifact {name}", from.name)))?;
        let bytes = std::fs::read(self.out.join(&a.path))?;
        if sha256_hex(&bytes) != a.sha256 {
            return Err(CliError::Artifact(format!("checksum mismatch for {}", a.path)));
        }
        if !self.inputs.contains(&a.path) {
            self.inputs.push(a.path.clone());
        }
        Ok(bytes)
    }

    /// Notes an external input file (raw datasets).
    pub fn note_external(&mut self, path: &Path) {
        self.inputs.push(format!("external:{}", path.display()));
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let rel = format!("{}/{name}", self.dir);
        write_atomic(&self.out.join(&rel), bytes)?;
        self.artifacts.retain(|a| a.path != rel);
        self.artifacts.push(Artifact { path: rel, sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(())
    }

    pub fn write_with(&mut self, name: &str, f: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(name, &buf)
    }

    pub fn finish(mut self) -> Result<StageRecord> {
        self.artifacts.sort_by(|a, b| a.path.cmp(&b.path));
        let rec = StageRecord {
            name: self.name,
            key: self.key,
            dir: self.dir.clone(),
            inputs: self.inputs,
            artifacts: self.artifacts,
            seconds: self.started.elapsed().as_secs_f64(),
            reused: false,
        };
        write_atomic(&self.out.join(&self.dir).join(STAGE_FILE), serde_json::to_string_pretty(&rec)?.as_bytes())?;
        Ok(rec)
    }
}

/// Hash of a stage's identity: its name, the config hash and upstream
/// fingerprints.
pub fn stage_key(name: &str, config_hash: &str, upstream: &[String]) -> String {
    let mut s = format!("{name}\n{config_hash}\n");
    for u in upstream {
        s.push_str(u);
        s.push('\n');
    }
    sha256_hex(s.as_bytes())
}

pub fn stage_dir(name: &str, key: &str) -> String {
    format!("stages/{name}-{}", &key[..12])
}

/// Returns a finished stage with this key if all its artifacts verify.
pub fn reusable(out: &Path, name: &str, key: &str) -> Option<StageRecord> {
    let dir = stage_dir(name, key);
    let text = std::fs::read_to_string(out.join(&dir).join(STAGE_FILE)).ok()?;
    let mut rec: StageRecord = serde_json::from_str(&text).ok()?;
    (rec.key == key && rec.verify(out)).then(|| {
        rec.reused = true;
        rec
    })
}

/// Starts a fresh stage, clearing any earlier contents of its directory.
pub fn begin(out: &Path, name: &str, key: &str) -> Result<StageCtx> {
    let dir = stage_dir(name, key);
    let abs = out.join(&dir);
    if abs.exists() {
        std::fs::remove_dir_all(&abs)?;
    }
    std::fs::create_dir_all(&abs)?;
    Ok(StageCtx {
        out: out.to_path_buf(),
        name: name.to_string(),
        key: key.to_string(),
        dir,
        inputs: Vec::new(),
        artifacts: Vec::new(),
        started: Instant::now(),
    })
}
