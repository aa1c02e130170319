//! Run directories: every written file is tracked and listed with its hash
//! in `manifest.json`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{CliError, Result};

pub const MANIFEST: &str = "manifest.json";
pub const SUMMARY: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Files sorted by relative path; the manifest does not list itself.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub files: Vec<FileEntry>,
}

impl Manifest {
    pub fn get(&self, path: &str) -> Option<&FileEntry> {
        self.files.iter().find(|f| f.path == path)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Pretty JSON with a trailing newline.
pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("artifact types serialize");
    v.push(b'\n');
    v
}

pub struct RunDir {
    root: PathBuf,
    files: BTreeMap<String, FileEntry>,
}

impl RunDir {
    pub fn create(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        std::fs::create_dir_all(&root).map_err(|source| CliError::Io {
            path: root.clone(),
            source,
        })?;
        Ok(Self {
            root,
            files: BTreeMap::new(),
        })
    }

    /// Reopens a finished run, adopting its manifest.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        let manifest: Manifest = read_json(&root, MANIFEST)?;
        Ok(Self {
            files: manifest
                .files
                .into_iter()
                .map(|f| (f.path.clone(), f))
                .collect(),
            root,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// `rel` uses `/` separators.
    pub fn write(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|source| CliError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        std::fs::write(&path, bytes).map_err(|source| CliError::Io { path, source })?;
        self.files.insert(
            rel.to_string(),
            FileEntry {
                path: rel.to_string(),
                sha256: sha256_hex(bytes),
                bytes: bytes.len() as u64,
            },
        );
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        self.write(rel, &to_json_bytes(value))
    }

    /// Runs a core writer into a buffer and stores the result.
    pub fn write_with(
        &mut self,
        rel: &str,
        f: impl FnOnce(&mut Vec<u8>) -> lnlab_core::Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        f(&mut buf)?;
        self.write(rel, &buf)
    }

    pub fn read(&self, rel: &str) -> Result<Vec<u8>> {
        read_artifact(&self.root, rel)
    }

    pub fn read_json<T: DeserializeOwned>(&self, rel: &str) -> Result<T> {
        read_json(&self.root, rel)
    }

    pub fn manifest(&self) -> Manifest {
        Manifest {
            files: self.files.values().cloned().collect(),
        }
    }

    /// Writes `manifest.json` and returns it.
    pub fn finish(self) -> Result<Manifest> {
        let manifest = self.manifest();
        let path = self.root.join(MANIFEST);
        std::fs::write(&path, to_json_bytes(&manifest))
            .map_err(|source| CliError::Io { path, source })?;
        Ok(manifest)
    }
}

pub fn read_artifact(root: &Path, rel: &str) -> Result<Vec<u8>> {
    let path = root.join(rel);
    match std::fs::read(&path) {
        Ok(b) => Ok(b),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(CliError::MissingArtifact {
            name: rel.to_string(),
            path,
        }),
        Err(source) => Err(CliError::Io { path, source }),
    }
}

pub fn read_json<T: DeserializeOwned>(root: &Path, rel: &str) -> Result<T> {
    let bytes = read_artifact(root, rel)?;
    serde_json::from_slice(&bytes).map_err(|source| CliError::Decode {
        name: rel.to_string(),
        source,
    })
}

/// Checks every manifest entry against the files on disk.
pub fn verify_manifest(root: &Path) -> Result<Manifest> {
    let manifest: Manifest = read_json(root, MANIFEST)?;
    for f in &manifest.files {
        if sha256_hex(&read_artifact(root, &f.path)?) != f.sha256 {
            return Err(CliError::CorruptArtifact {
                name: f.path.clone(),
            });
        }
    }
    Ok(manifest)
}
