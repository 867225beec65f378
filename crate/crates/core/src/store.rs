//! Append-only, content-addressed artifact store.
//!
//! Layout under the store root:
//!
//! ```text
//! objects/<sha256>.json   immutable artifact bodies, named by digest
//! manifest.jsonl          one line per put: seq, kind, key, digest, size
//! ```
//!
//! A key may be written more than once only for revisable kinds (checkpointed
//! annotation runs, spot-check tasks, alias tables, retried transcripts);
//! reads return the latest entry. Every other key is write-once. Objects are
//! never overwritten, and every read re-hashes the body against its manifest
//! digest.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("store i/o at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt manifest line {line}: {reason}")]
    CorruptManifest { line: usize, reason: String },
    #[error("artifact {key:?} not found")]
    NotFound { key: String },
    #[error("artifact {key:?} failed digest verification (expected {expected}, found {actual})")]
    Tampered {
        key: String,
        expected: String,
        actual: String,
    },
    #[error("key {key:?} is immutable and already holds a different artifact")]
    ImmutableKey { key: String },
    #[error("artifact {key:?} could not be decoded: {source}")]
    Decode {
        key: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("artifact {key:?} could not be encoded: {source}")]
    Encode {
        key: String,
        #[source]
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Dataset,
    Taxonomy,
    GenerationRun,
    FrequencyTable,
    AnnotationRun,
    Transcript,
    GateReport,
    AgreementReport,
    SpotCheck,
    AliasTable,
    ReviewEvent,
    VoteOutcome,
    PruningLog,
}

impl ArtifactKind {
    /// Kinds whose keys accept successive revisions.
    pub fn is_revisable(self) -> bool {
        matches!(
            self,
            ArtifactKind::AnnotationRun
                | ArtifactKind::SpotCheck
                | ArtifactKind::AliasTable
                | ArtifactKind::Transcript
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub seq: u64,
    pub kind: ArtifactKind,
    pub key: String,
    pub digest: String,
    pub size: u64,
}

#[derive(Default)]
struct Index {
    entries: Vec<ManifestEntry>,
    latest: HashMap<String, usize>,
    counters: HashMap<String, u64>,
}

impl Index {
    fn note_ids(&mut self, key: &str) {
        for segment in key.split('/') {
            let segment = segment.split('@').next().unwrap_or(segment);
            if let Some((prefix, n)) = segment.rsplit_once('-') {
                if let Ok(n) = n.parse::<u64>() {
                    let c = self.counters.entry(prefix.to_string()).or_insert(0);
                    *c = (*c).max(n);
                }
            }
        }
    }

    fn push(&mut self, entry: ManifestEntry) {
        self.note_ids(&entry.key);
        self.latest.insert(entry.key.clone(), self.entries.len());
        self.entries.push(entry);
    }
}

pub struct RunStore {
    root: PathBuf,
    index: Mutex<Index>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Artifact bodies are pretty JSON with a trailing newline.
pub fn encode_artifact<T: Serialize + ?Sized>(value: &T) -> Result<Vec<u8>, serde_json::Error> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    Ok(bytes)
}

impl RunStore {
    /// Opens (creating if needed) a store rooted at `root`.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        let objects = root.join("objects");
        fs::create_dir_all(&objects).map_err(io_err(&objects))?;
        let manifest = root.join("manifest.jsonl");
        let mut index = Index::default();
        if manifest.exists() {
            let file = File::open(&manifest).map_err(io_err(&manifest))?;
            for (i, line) in BufReader::new(file).lines().enumerate() {
                let line = line.map_err(io_err(&manifest))?;
                if line.trim().is_empty() {
                    continue;
                }
                let entry: ManifestEntry =
                    serde_json::from_str(&line).map_err(|e| StoreError::CorruptManifest {
                        line: i + 1,
                        reason: e.to_string(),
                    })?;
                index.push(entry);
            }
        }
        Ok(Self {
            root,
            index: Mutex::new(index),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_path(&self, digest: &str) -> PathBuf {
        self.root.join("objects").join(format!("{digest}.json"))
    }

    /// Reserves the next id of the form `{prefix}-{nnnn}`.
    pub fn allocate_id(&self, prefix: &str) -> String {
        let mut index = self.index.lock().expect("store index poisoned");
        let c = index.counters.entry(prefix.to_string()).or_insert(0);
        *c += 1;
        format!("{prefix}-{:04}", *c)
    }

    pub fn put<T: Serialize + ?Sized>(
        &self,
        kind: ArtifactKind,
        key: &str,
        value: &T,
    ) -> Result<ManifestEntry, StoreError> {
        let bytes = encode_artifact(value).map_err(|source| StoreError::Encode {
            key: key.to_string(),
            source,
        })?;
        self.put_bytes(kind, key, &bytes)
    }

    pub fn put_bytes(&self, kind: ArtifactKind, key: &str, bytes: &[u8]) -> Result<ManifestEntry, StoreError> {
        let digest = sha256_hex(bytes);
        let mut index = self.index.lock().expect("store index poisoned");
        if let Some(&i) = index.latest.get(key) {
            let existing = &index.entries[i];
            if existing.digest == digest {
                return Ok(existing.clone());
            }
            if !kind.is_revisable() {
                return Err(StoreError::ImmutableKey { key: key.to_string() });
            }
        }
        let path = self.object_path(&digest);
        if !path.exists() {
            let tmp = path.with_extension(format!("tmp{}", std::process::id()));
            fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
            fs::rename(&tmp, &path).map_err(io_err(&path))?;
        }
        let entry = ManifestEntry {
            seq: index.entries.len() as u64,
            kind,
            key: key.to_string(),
            digest,
            size: bytes.len() as u64,
        };
        let manifest = self.root.join("manifest.jsonl");
        let mut line = serde_json::to_string(&entry).expect("manifest entry serializes");
        line.push('\n');
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&manifest)
            .and_then(|mut f| f.write_all(line.as_bytes()))
            .map_err(io_err(&manifest))?;
        index.push(entry.clone());
        Ok(entry)
    }

    pub fn entry(&self, key: &str) -> Option<ManifestEntry> {
        let index = self.index.lock().expect("store index poisoned");
        index.latest.get(key).map(|&i| index.entries[i].clone())
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entry(key).is_some()
    }

    fn read_verified(&self, entry: &ManifestEntry) -> Result<Vec<u8>, StoreError> {
        let path = self.object_path(&entry.digest);
        let bytes = fs::read(&path).map_err(io_err(&path))?;
        let actual = sha256_hex(&bytes);
        if actual != entry.digest {
            return Err(StoreError::Tampered {
                key: entry.key.clone(),
                expected: entry.digest.clone(),
                actual,
            });
        }
        Ok(bytes)
    }

    pub fn get_bytes(&self, key: &str) -> Result<Vec<u8>, StoreError> {
        let entry = self.entry(key).ok_or_else(|| StoreError::NotFound { key: key.to_string() })?;
        self.read_verified(&entry)
    }

    pub fn get<T: DeserializeOwned>(&self, key: &str) -> Result<T, StoreError> {
        let bytes = self.get_bytes(key)?;
        serde_json::from_slice(&bytes).map_err(|source| StoreError::Decode {
            key: key.to_string(),
            source,
        })
    }

    /// All revisions of `key`, oldest first.
    pub fn history(&self, key: &str) -> Vec<ManifestEntry> {
        let index = self.index.lock().expect("store index poisoned");
        index.entries.iter().filter(|e| e.key == key).cloned().collect()
    }

    /// Latest entry of every key of `kind`, in first-write order.
    pub fn list(&self, kind: ArtifactKind) -> Vec<ManifestEntry> {
        let index = self.index.lock().expect("store index poisoned");
        let mut seen = std::collections::HashSet::new();
        index
            .entries
            .iter()
            .filter(|e| e.kind == kind && seen.insert(e.key.clone()))
            .map(|e| index.entries[index.latest[&e.key]].clone())
            .collect()
    }

    pub fn manifest(&self) -> Vec<ManifestEntry> {
        self.index.lock().expect("store index poisoned").entries.clone()
    }

    /// Re-hashes every object referenced by the manifest.
    pub fn verify_all(&self) -> Result<usize, StoreError> {
        let entries = self.manifest();
        for e in &entries {
            self.read_verified(e)?;
        }
        Ok(entries.len())
    }
}
