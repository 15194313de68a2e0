use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const OUTPUT_ROOT_VAR: &str = "SILT_OUTPUT_ROOT";
const MANIFEST: &str = "manifest.json";
const SEAL: &str = ".sealed";

/// `SILT_OUTPUT_ROOT` if set, else `silt-runs` in the working directory.
pub fn default_root() -> PathBuf {
    std::env::var_os(OUTPUT_ROOT_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("silt-runs"))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    pub bytes: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub run_id: String,
    pub subcommand: String,
    pub fingerprint: String,
    pub seed: u64,
    pub artifacts: Vec<Artifact>,
    pub started_unix: u64,
    pub elapsed_seconds: f64,
    pub version: String,
}

/// One run directory. Artifacts are written once; sealing writes the
/// manifest and marks every file read-only.
#[derive(Debug)]
pub struct ResultStore {
    pub run_id: String,
    pub dir: PathBuf,
    pub subcommand: String,
    pub fingerprint: String,
    pub seed: u64,
    artifacts: Vec<Artifact>,
    started: Instant,
    started_unix: u64,
    sealed: bool,
}

impl ResultStore {
    /// A fresh directory `<root>/<subcommand>-<fingerprint prefix>-<k>`
    /// with the first unused `k`.
    pub fn create(root: &Path, subcommand: &str, fingerprint: &str, seed: u64) -> Result<Self> {
        fs::create_dir_all(root)?;
        let stem = format!("{subcommand}-{}", &fingerprint[..12.min(fingerprint.len())]);
        let mut k = 0u32;
        let (run_id, dir) = loop {
            let id = format!("{stem}-{k:03}");
            let dir = root.join(&id);
            match fs::create_dir(&dir) {
                Ok(()) => break (id, dir),
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => k += 1,
                Err(e) => return Err(e.into()),
            }
        };
        Ok(Self {
            run_id,
            dir,
            subcommand: subcommand.to_string(),
            fingerprint: fingerprint.to_string(),
            seed,
            artifacts: Vec::new(),
            started: Instant::now(),
            started_unix: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
            sealed: false,
        })
    }

    pub fn is_sealed(&self) -> bool {
        self.sealed
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn write_bytes(&mut self, name: &str, contents: &[u8]) -> Result<PathBuf> {
        if self.sealed || self.dir.join(SEAL).exists() {
            return Err(Error::Sealed(self.dir.display().to_string()));
        }
        if name.contains(['/', '\\']) || name == MANIFEST || name == SEAL {
            return Err(Error::domain(format!("invalid artifact name {name:?}")));
        }
        let path = self.dir.join(name);
        let mut file = fs::OpenOptions::new().write(true).create_new(true).open(&path)?;
        file.write_all(contents)?;
        file.sync_all()?;
        self.artifacts.push(Artifact {
            name: name.to_string(),
            bytes: contents.len() as u64,
            sha256: crate::gaussian::hex(&Sha256::digest(contents)),
        });
        Ok(path)
    }

    pub fn write_text(&mut self, name: &str, contents: &str) -> Result<PathBuf> {
        self.write_bytes(name, contents.as_bytes())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn seal(&mut self) -> Result<Manifest> {
        if self.sealed {
            return Err(Error::Sealed(self.dir.display().to_string()));
        }
        let manifest = Manifest {
            run_id: self.run_id.clone(),
            subcommand: self.subcommand.clone(),
            fingerprint: self.fingerprint.clone(),
            seed: self.seed,
            artifacts: self.artifacts.clone(),
            started_unix: self.started_unix,
            elapsed_seconds: self.started.elapsed().as_secs_f64(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.dir.join(MANIFEST), text)?;
        fs::write(self.dir.join(SEAL), b"")?;
        for name in self.artifacts.iter().map(|a| a.name.as_str()).chain([MANIFEST, SEAL]) {
            let path = self.dir.join(name);
            let mut perms = fs::metadata(&path)?.permissions();
            perms.set_readonly(true);
            fs::set_permissions(&path, perms)?;
        }
        self.sealed = true;
        Ok(manifest)
    }

    /// Manifest of a sealed run directory, with every artifact re-hashed.
    pub fn verify_sealed(dir: &Path) -> Result<Manifest> {
        if !dir.join(SEAL).exists() {
            return Err(Error::domain(format!("{} is not sealed", dir.display())));
        }
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST))?)?;
        for a in &manifest.artifacts {
            let bytes = fs::read(dir.join(&a.name))?;
            let digest = crate::gaussian::hex(&Sha256::digest(&bytes));
            if digest != a.sha256 {
                return Err(Error::FingerprintMismatch {
                    expected: a.sha256.clone(),
                    found: digest,
                });
            }
        }
        Ok(manifest)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sealed_runs_refuse_writes_and_keep_hashes() {
        let root = tempfile::tempdir().unwrap();
        let mut store = ResultStore::create(root.path(), "simulate", "abcdef0123456789", 3).unwrap();
        store.write_text("a.csv", "x\n1\n").unwrap();
        assert!(store.write_text("a.csv", "again").is_err());
        let manifest = store.seal().unwrap();
        assert_eq!(manifest.artifacts.len(), 1);
        assert!(matches!(store.write_text("b.csv", ""), Err(Error::Sealed(_))));
        assert_eq!(ResultStore::verify_sealed(&store.dir).unwrap().artifacts, manifest.artifacts);
        let second = ResultStore::create(root.path(), "simulate", "abcdef0123456789", 3).unwrap();
        assert_ne!(second.dir, store.dir);
    }
}
