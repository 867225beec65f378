//! Interaction-log records, ingestion, train/test splits and seeded sampling.
//!
//! Input is line-delimited JSON, one record per line:
//!
//! ```json
//! {"id": "q1", "modality": "search", "turns": [{"speaker": "user", "text": "weather seattle"}]}
//! ```
//!
//! `id`, `modality`, `timestamp` and `language_tag` are optional; missing ids
//! are assigned from the line number (`rec-000001`), and a missing modality
//! falls back to the ingest default. Whitespace-only lines are skipped; every
//! other line either becomes a record or a [`Reject`].
//!
//! All shuffles use ChaCha8 seeded with `seed_from_u64(seed)` and a
//! Fisher-Yates pass from the last index down.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;
use thiserror::Error;

pub type RecordId = String;

/// Longest accepted turn text, in characters.
pub const MAX_TEXT_CHARS: usize = 20_000;

/// Files with at least this many lines abort when more than
/// [`MAX_REJECT_FRACTION`] of them are malformed.
pub const REJECT_GATE_MIN_LINES: usize = 10;
pub const MAX_REJECT_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Search,
    Chat,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Search => "search",
            Modality::Chat => "chat",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "search" => Ok(Modality::Search),
            "chat" => Ok(Modality::Chat),
            other => Err(format!("unknown modality {other:?} (expected search or chat)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    User,
    Ai,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub id: RecordId,
    pub modality: Modality,
    pub turns: Vec<Turn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_tag: Option<String>,
}

impl LogRecord {
    pub fn search(id: impl Into<String>, query: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            modality: Modality::Search,
            turns: vec![Turn {
                speaker: Speaker::User,
                text: query.into(),
            }],
            timestamp: None,
            language_tag: None,
        }
    }

    pub fn chat(id: impl Into<String>, turns: Vec<Turn>) -> Self {
        Self {
            id: id.into(),
            modality: Modality::Chat,
            turns,
            timestamp: None,
            language_tag: None,
        }
    }

    /// Turn-by-turn text used inside prompts and review tasks.
    pub fn render(&self) -> String {
        self.turns
            .iter()
            .map(|t| {
                let who = match t.speaker {
                    Speaker::User => "user",
                    Speaker::Ai => "ai",
                };
                format!("{who}: {}", t.text.trim())
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    /// Checks the record invariants, returning the first problem found.
    pub fn check(&self) -> Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        if self.turns.is_empty() {
            return Err("record has no turns".into());
        }
        for (i, t) in self.turns.iter().enumerate() {
            if t.text.trim().is_empty() {
                return Err(format!("turn {i} has empty text"));
            }
            if t.text.chars().count() > MAX_TEXT_CHARS {
                return Err(format!("turn {i} exceeds {MAX_TEXT_CHARS} characters"));
            }
        }
        match self.modality {
            Modality::Search => {
                if self.turns.len() != 1 || self.turns[0].speaker != Speaker::User {
                    return Err("search record must have exactly one user turn and no ai turns".into());
                }
            }
            Modality::Chat => {
                if !self.turns.iter().any(|t| t.speaker == Speaker::User) {
                    return Err("chat record has no user turn".into());
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitRole {
    Train,
    Test,
}

impl std::str::FromStr for SplitRole {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(SplitRole::Train),
            "test" => Ok(SplitRole::Test),
            other => Err(format!("unknown split {other:?} (expected train or test)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train_fraction: f64,
    pub assignment: BTreeMap<RecordId, SplitRole>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<LogRecord>,
    #[serde(default)]
    pub split: Option<Split>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reject {
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ingested {
    pub dataset: Dataset,
    pub rejects: Vec<Reject>,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Unreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{rejected} of {total} lines are malformed (more than 10%); first: line {}: {}", .first.line, .first.reason)]
    TooManyRejects {
        rejected: usize,
        total: usize,
        first: Reject,
    },
    #[error("train fraction {0} must be strictly between 0 and 1")]
    BadFraction(f64),
    #[error("sample fraction {0} must be in (0, 1]")]
    BadSampleFraction(f64),
    #[error("cannot split a dataset of {n} records with fraction {fraction}")]
    Degenerate { n: usize, fraction: f64 },
    #[error("dataset has no train/test split")]
    NotSplit,
    #[error("train split is empty")]
    EmptyTrain,
    #[error("unknown record {0:?}")]
    UnknownRecord(String),
}

#[derive(Deserialize)]
struct RawRecord {
    #[serde(default)]
    id: Option<String>,
    #[serde(default)]
    modality: Option<String>,
    turns: Vec<Turn>,
    #[serde(default)]
    timestamp: Option<String>,
    #[serde(default)]
    language_tag: Option<String>,
}

/// Parses line-delimited records from a string. See [`ingest`].
pub fn ingest_str(text: &str, modality_default: Modality) -> Result<Ingested, DatasetError> {
    let mut records = Vec::new();
    let mut rejects = Vec::new();
    let mut ids = HashSet::new();
    let mut total = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let parsed = serde_json::from_str::<RawRecord>(line)
            .map_err(|e| e.to_string())
            .and_then(|raw| {
                let modality = match raw.modality.as_deref() {
                    Some(m) => m.parse()?,
                    None => modality_default,
                };
                let record = LogRecord {
                    id: raw.id.unwrap_or_else(|| format!("rec-{line_no:06}")),
                    modality,
                    turns: raw.turns,
                    timestamp: raw.timestamp,
                    language_tag: raw.language_tag,
                };
                record.check()?;
                if !ids.insert(record.id.clone()) {
                    return Err(format!("duplicate id {:?}", record.id));
                }
                Ok(record)
            });
        match parsed {
            Ok(r) => records.push(r),
            Err(reason) => rejects.push(Reject { line: line_no, reason }),
        }
    }
    if total >= REJECT_GATE_MIN_LINES && rejects.len() as f64 > MAX_REJECT_FRACTION * total as f64 {
        return Err(DatasetError::TooManyRejects {
            rejected: rejects.len(),
            total,
            first: rejects[0].clone(),
        });
    }
    Ok(Ingested {
        dataset: Dataset { records, split: None },
        rejects,
    })
}

pub fn ingest(path: impl AsRef<Path>, modality_default: Modality) -> Result<Ingested, DatasetError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| DatasetError::Unreadable {
        path: path.display().to_string(),
        source,
    })?;
    ingest_str(&text, modality_default)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// In-place Fisher-Yates, from the last index down.
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = rng(seed);
    for i in (1..items.len()).rev() {
        let j = rng.random_range(0..=i);
        items.swap(i, j);
    }
}

fn round_count(fraction: f64, n: usize) -> usize {
    (fraction * n as f64).round() as usize
}

impl Dataset {
    pub fn new(records: Vec<LogRecord>) -> Self {
        Self { records, split: None }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LogRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn index(&self) -> BTreeMap<&str, &LogRecord> {
        self.records.iter().map(|r| (r.id.as_str(), r)).collect()
    }

    pub fn modality_counts(&self) -> BTreeMap<Modality, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.modality).or_insert(0) += 1;
        }
        out
    }

    /// One JSON record per line, in dataset order.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    /// Ids with the given role, in dataset order.
    pub fn ids_in(&self, role: SplitRole) -> Result<Vec<RecordId>, DatasetError> {
        let split = self.split.as_ref().ok_or(DatasetError::NotSplit)?;
        Ok(self
            .records
            .iter()
            .filter(|r| split.assignment.get(&r.id) == Some(&role))
            .map(|r| r.id.clone())
            .collect())
    }

    pub fn all_ids(&self) -> Vec<RecordId> {
        self.records.iter().map(|r| r.id.clone()).collect()
    }

    /// Assigns `round(train_fraction * N)` records to train, the rest to test.
    pub fn split(&self, train_fraction: f64, seed: u64) -> Result<Dataset, DatasetError> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(DatasetError::BadFraction(train_fraction));
        }
        let n = self.records.len();
        let k = round_count(train_fraction, n);
        if n < 2 || k == 0 || k == n {
            return Err(DatasetError::Degenerate {
                n,
                fraction: train_fraction,
            });
        }
        let mut order: Vec<usize> = (0..n).collect();
        seeded_shuffle(&mut order, seed);
        let mut assignment = BTreeMap::new();
        for (pos, &i) in order.iter().enumerate() {
            let role = if pos < k { SplitRole::Train } else { SplitRole::Test };
            assignment.insert(self.records[i].id.clone(), role);
        }
        Ok(Dataset {
            records: self.records.clone(),
            split: Some(Split {
                seed,
                train_fraction,
                assignment,
            }),
        })
    }

    /// Draws `round(fraction * |train|)` train ids without replacement.
    pub fn bootstrap_sample(&self, fraction: f64, seed: u64) -> Result<Vec<RecordId>, DatasetError> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(DatasetError::BadSampleFraction(fraction));
        }
        let mut train = self.ids_in(SplitRole::Train)?;
        if train.is_empty() {
            return Err(DatasetError::EmptyTrain);
        }
        let k = round_count(fraction, train.len());
        seeded_shuffle(&mut train, seed);
        train.truncate(k);
        Ok(train)
    }

    /// A seeded permutation of every record.
    pub fn interleave_shuffle(&self, seed: u64) -> Vec<&LogRecord> {
        let mut out: Vec<&LogRecord> = self.records.iter().collect();
        seeded_shuffle(&mut out, seed);
        out
    }

    /// Looks up each id, failing on the first unknown one.
    pub fn select(&self, ids: &[RecordId]) -> Result<Vec<&LogRecord>, DatasetError> {
        let index = self.index();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| DatasetError::UnknownRecord(id.clone()))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(id: usize, modality: &str) -> String {
        format!(r#"{{"id":"r{id}","modality":"{modality}","turns":[{{"speaker":"user","text":"query {id}"}}]}}"#)
    }

    fn dataset(n: usize) -> Dataset {
        let text: String = (0..n).map(|i| line(i, if i % 2 == 0 { "search" } else { "chat" }) + "\n").collect();
        ingest_str(&text, Modality::Search).unwrap().dataset
    }

    #[test]
    fn three_good_lines() {
        let text = (0..3).map(|i| line(i, "chat")).collect::<Vec<_>>().join("\n");
        let out = ingest_str(&text, Modality::Search).unwrap();
        assert_eq!(out.dataset.len(), 3);
        assert!(out.rejects.is_empty());
    }

    #[test]
    fn empty_text_is_rejected_not_dropped() {
        let out = ingest_str(r#"{"turns":[{"speaker":"user","text":"   "}]}"#, Modality::Search).unwrap();
        assert_eq!(out.dataset.len(), 0);
        assert_eq!(out.rejects.len(), 1);
        assert_eq!(out.rejects[0].line, 1);
    }

    #[test]
    fn mixed_thousand_lines() {
        let ds = dataset(1000);
        let counts = ds.modality_counts();
        assert_eq!(counts[&Modality::Search], 500);
        assert_eq!(counts[&Modality::Chat], 500);
    }

    #[test]
    fn ids_are_assigned_and_defaults_applied() {
        let text = "\n{\"turns\":[{\"speaker\":\"user\",\"text\":\"hi\"},{\"speaker\":\"ai\",\"text\":\"hello\"}]}\n";
        let out = ingest_str(text, Modality::Chat).unwrap();
        assert_eq!(out.dataset.records[0].id, "rec-000002");
        assert_eq!(out.dataset.records[0].modality, Modality::Chat);
        assert_eq!(out.dataset.records[0].render(), "user: hi\nai: hello");
    }

    #[test]
    fn search_with_ai_turn_is_rejected() {
        let text = r#"{"modality":"search","turns":[{"speaker":"user","text":"a"},{"speaker":"ai","text":"b"}]}"#;
        let out = ingest_str(text, Modality::Chat).unwrap();
        assert_eq!(out.rejects.len(), 1);
    }

    #[test]
    fn too_many_rejects_aborts() {
        let mut lines: Vec<String> = (0..18).map(|i| line(i, "chat")).collect();
        lines.push("not json".into());
        lines.push(line(0, "chat")); // duplicate id
        lines.push("{}".into());
        let err = ingest_str(&lines.join("\n"), Modality::Chat).unwrap_err();
        assert!(matches!(err, DatasetError::TooManyRejects { rejected: 3, total: 21, .. }));
        // 2 of 20 is exactly 10%, still accepted
        lines.pop();
        let ok = ingest_str(&lines.join("\n"), Modality::Chat).unwrap();
        assert_eq!(ok.rejects.len(), 2);
    }

    #[test]
    fn unreadable_file() {
        assert!(matches!(
            ingest("/definitely/not/here.jsonl", Modality::Chat),
            Err(DatasetError::Unreadable { .. })
        ));
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = dataset(10);
        let a = ds.split(0.8, 7).unwrap();
        let b = ds.split(0.8, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.ids_in(SplitRole::Train).unwrap().len(), 8);
        assert_eq!(a.ids_in(SplitRole::Test).unwrap().len(), 2);
    }

    #[test]
    fn thousand_record_train_split() {
        let ds = dataset(1149);
        let s = ds.split(0.8703, 1).unwrap();
        assert_eq!(s.ids_in(SplitRole::Train).unwrap().len(), 1000);
    }

    #[test]
    fn different_seeds_give_different_membership() {
        let ds = dataset(100);
        let a = ds.split(0.5, 1).unwrap().ids_in(SplitRole::Train).unwrap();
        let b = ds.split(0.5, 2).unwrap().ids_in(SplitRole::Train).unwrap();
        assert_eq!(a.len(), b.len());
        assert_ne!(a, b);
    }

    #[test]
    fn degenerate_splits() {
        assert!(matches!(dataset(1).split(0.5, 0), Err(DatasetError::Degenerate { .. })));
        assert!(matches!(dataset(0).split(0.5, 0), Err(DatasetError::Degenerate { .. })));
        assert!(matches!(dataset(10).split(1.0, 0), Err(DatasetError::BadFraction(_))));
        assert!(matches!(dataset(3).bootstrap_sample(0.5, 0), Err(DatasetError::NotSplit)));
    }

    #[test]
    fn bootstrap_sizes() {
        let ds = dataset(1250).split(0.8, 3).unwrap();
        assert_eq!(ds.bootstrap_sample(0.8, 1).unwrap().len(), 800);
        let full = ds.bootstrap_sample(1.0, 9).unwrap();
        let mut sorted = full.clone();
        sorted.sort();
        let mut train = ds.ids_in(SplitRole::Train).unwrap();
        train.sort();
        assert_eq!(sorted, train);
    }

    #[test]
    fn bootstrap_overlap_is_about_the_fraction() {
        let ds = dataset(1250).split(0.8, 3).unwrap();
        let mut total = 0.0;
        for pair in 0..100u64 {
            let a: HashSet<_> = ds.bootstrap_sample(0.8, 2 * pair).unwrap().into_iter().collect();
            let b = ds.bootstrap_sample(0.8, 2 * pair + 1).unwrap();
            assert_eq!(a.len(), b.len());
            total += b.iter().filter(|id| a.contains(*id)).count() as f64 / b.len() as f64;
        }
        let mean = total / 100.0;
        assert!((mean - 0.8).abs() < 0.05, "mean overlap {mean}");
    }

    #[test]
    fn two_record_shuffle_is_fixed_per_seed() {
        let ds = dataset(2);
        for seed in 0..10 {
            let a: Vec<_> = ds.interleave_shuffle(seed).iter().map(|r| r.id.clone()).collect();
            let b: Vec<_> = ds.interleave_shuffle(seed).iter().map(|r| r.id.clone()).collect();
            assert_eq!(a, b);
            assert_eq!(a.len(), 2);
        }
    }

    #[test]
    fn thousand_record_shuffle_is_deterministic_and_preserves_modalities() {
        let ds = dataset(1000);
        let a: Vec<_> = ds.interleave_shuffle(42).iter().map(|r| r.id.clone()).collect();
        let b: Vec<_> = ds.interleave_shuffle(42).iter().map(|r| r.id.clone()).collect();
        assert_eq!(a, b);
        let shuffled = Dataset::new(ds.interleave_shuffle(42).into_iter().cloned().collect());
        assert_eq!(shuffled.modality_counts(), ds.modality_counts());
    }

    proptest! {
        #[test]
        fn jsonl_round_trip(texts in prop::collection::vec("[a-z]{1,12}( [a-z]{1,8}){0,3}", 1..20), chat in any::<bool>()) {
            let records: Vec<LogRecord> = texts.iter().enumerate().map(|(i, t)| {
                if chat {
                    LogRecord::chat(format!("c{i}"), vec![Turn { speaker: Speaker::User, text: t.clone() }, Turn { speaker: Speaker::Ai, text: "ok".into() }])
                } else {
                    LogRecord::search(format!("s{i}"), t.clone())
                }
            }).collect();
            let ds = Dataset::new(records);
            let back = ingest_str(&ds.to_jsonl(), Modality::Search).unwrap();
            prop_assert!(back.rejects.is_empty());
            prop_assert_eq!(back.dataset, ds);
        }

        #[test]
        fn split_is_a_partition(n in 2usize..200, frac in 0.05f64..0.95, seed in any::<u64>()) {
            let ds = dataset(n);
            match ds.split(frac, seed) {
                Ok(s) => {
                    let train = s.ids_in(SplitRole::Train).unwrap().len();
                    let test = s.ids_in(SplitRole::Test).unwrap().len();
                    prop_assert_eq!(train + test, n);
                    prop_assert_eq!(train, (frac * n as f64).round() as usize);
                }
                Err(DatasetError::Degenerate { .. }) => {}
                Err(e) => prop_assert!(false, "unexpected {e}"),
            }
        }
    }
}
