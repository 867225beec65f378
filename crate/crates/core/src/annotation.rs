//! Labelling records against a frozen taxonomy version.
//!
//! Every rater, human or model, produces an [`AnnotationRun`]. LLM runs are
//! checkpointed to the store after each chunk of records, so a run that stops
//! on a provider outage can be resumed with [`resume_annotation`] without
//! relabelling finished records. Replies that do not name an allowed label
//! are retried once and then kept as [`AnnotationFailure`]s, which are
//! excluded from every statistic.

use crate::context::Context;
use crate::dataset::{Dataset, DatasetError, LogRecord, RecordId};
use crate::llm::{
    parse_annotation_response, render_prompt, AnnotationParse, Gateway, LlmError, PromptTemplate, Purpose,
    DATA_BLOCK, TAXONOMY_BLOCK,
};
use crate::store::{ArtifactKind, RunStore, StoreError};
use crate::taxonomy::{canonicalize_label, AliasTable, Taxonomy, TaxonomyRef, OTHER};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use thiserror::Error;

pub const RUN_PREFIX: &str = "ann";

pub fn run_key(run_id: &str) -> String {
    format!("annotation/{run_id}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Rater {
    Llm { provider: String, model: String },
    Human { assessor: String },
    /// Labels derived from other runs (majority vote, adjudication).
    Consensus { method: String, sources: Vec<String> },
}

impl Rater {
    pub fn id(&self) -> String {
        match self {
            Rater::Llm { provider, model } => format!("llm:{provider}/{model}"),
            Rater::Human { assessor } => format!("human:{assessor}"),
            Rater::Consensus { method, sources } => format!("{method}:{}", sources.join(",")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Annotation {
    pub record_id: RecordId,
    pub label: String,
    pub rater: String,
    pub taxonomy: TaxonomyRef,
    pub run_id: String,
    pub timestamp: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationFailure {
    pub record_id: RecordId,
    pub raw: String,
    pub canonical: String,
    pub attempts: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    InProgress,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationRun {
    pub run_id: String,
    pub rater: Rater,
    pub taxonomy: TaxonomyRef,
    pub slice: Vec<RecordId>,
    pub status: RunStatus,
    /// In slice order.
    pub annotations: Vec<Annotation>,
    /// Records whose reply never resolved to a label (the hygiene report).
    #[serde(default)]
    pub failures: Vec<AnnotationFailure>,
    pub created_at: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub notes: Vec<String>,
}

#[derive(Debug, Error)]
pub enum AnnotationError {
    #[error("annotation slice is empty")]
    EmptySlice,
    #[error("slice lists record {0:?} more than once")]
    DuplicateRecord(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("taxonomy {0} is already stored with different content")]
    TaxonomyConflict(TaxonomyRef),
    #[error("run {run_id} stopped and can be resumed: {source}")]
    Interrupted {
        run_id: String,
        #[source]
        source: LlmError,
    },
    #[error("need at least {needed} runs, got {got}")]
    TooFewRuns { needed: usize, got: usize },
    #[error("majority vote needs an odd number of raters, got {0}")]
    EvenRaterCount(usize),
    #[error("run {0} is not complete")]
    NotComplete(String),
    #[error("runs are not aligned: {0}")]
    Mismatch(String),
    #[error("record {record_id:?} is not in the slice of run {run_id}")]
    NotInSlice { run_id: String, record_id: String },
    #[error("record {record_id:?} already has an annotation in run {run_id}")]
    AlreadyAnnotated { run_id: String, record_id: String },
    #[error("label {label:?} is not in the taxonomy and is not \"Other\"")]
    InvalidLabel { label: String },
}

/// Finds `label` among `allowed ∪ {Other}` by canonical form, returning the
/// allowed spelling.
pub fn match_allowed(label: &str, allowed: &[String]) -> Option<String> {
    let key = canonicalize_label(label);
    if key.is_empty() {
        return None;
    }
    if key == canonicalize_label(OTHER) {
        return Some(OTHER.to_string());
    }
    allowed.iter().find(|a| canonicalize_label(a) == key).cloned()
}

impl AnnotationRun {
    pub fn new(run_id: impl Into<String>, rater: Rater, taxonomy: TaxonomyRef, slice: Vec<RecordId>, created_at: String) -> Self {
        let mut run = Self {
            run_id: run_id.into(),
            rater,
            taxonomy,
            slice,
            status: RunStatus::InProgress,
            annotations: Vec::new(),
            failures: Vec::new(),
            created_at,
            prompt_template: None,
            notes: Vec::new(),
        };
        run.refresh_status();
        run
    }

    /// A complete run from an aligned `(record, label)` list.
    pub fn from_labels(
        run_id: impl Into<String>,
        rater: Rater,
        taxonomy: TaxonomyRef,
        labels: &[(RecordId, String)],
        created_at: String,
    ) -> Self {
        let run_id = run_id.into();
        let rater_id = rater.id();
        let mut run = Self::new(
            run_id.clone(),
            rater,
            taxonomy.clone(),
            labels.iter().map(|(id, _)| id.clone()).collect(),
            created_at.clone(),
        );
        run.annotations = labels
            .iter()
            .map(|(id, label)| Annotation {
                record_id: id.clone(),
                label: label.clone(),
                rater: rater_id.clone(),
                taxonomy: taxonomy.clone(),
                run_id: run_id.clone(),
                timestamp: created_at.clone(),
                rationale: None,
            })
            .collect();
        run.refresh_status();
        run
    }

    pub fn key(&self) -> String {
        run_key(&self.run_id)
    }

    pub fn load(store: &RunStore, run_id: &str) -> Result<Self, StoreError> {
        store.get(&run_key(run_id))
    }

    pub fn save(&self, store: &RunStore) -> Result<(), StoreError> {
        store.put(ArtifactKind::AnnotationRun, &self.key(), self).map(|_| ())
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }

    /// Slice records with neither an annotation nor a recorded failure.
    pub fn pending(&self) -> Vec<RecordId> {
        let done: HashSet<&str> = self
            .annotations
            .iter()
            .map(|a| a.record_id.as_str())
            .chain(self.failures.iter().map(|f| f.record_id.as_str()))
            .collect();
        self.slice.iter().filter(|id| !done.contains(id.as_str())).cloned().collect()
    }

    pub fn refresh_status(&mut self) {
        self.status = if self.pending().is_empty() {
            RunStatus::Complete
        } else {
            RunStatus::InProgress
        };
    }

    pub fn label_of(&self, record_id: &str) -> Option<&str> {
        self.annotations
            .iter()
            .find(|a| a.record_id == record_id)
            .map(|a| a.label.as_str())
    }

    pub fn labels(&self) -> BTreeMap<&str, &str> {
        self.annotations
            .iter()
            .map(|a| (a.record_id.as_str(), a.label.as_str()))
            .collect()
    }

    /// `(record, label)` for every valid annotation, in slice order.
    pub fn label_vector(&self) -> Vec<(RecordId, String)> {
        self.annotations
            .iter()
            .map(|a| (a.record_id.clone(), a.label.clone()))
            .collect()
    }

    pub fn valid_count(&self) -> usize {
        self.annotations.len()
    }

    pub fn other_count(&self) -> usize {
        self.annotations.iter().filter(|a| a.label == OTHER).count()
    }

    fn sort_by_slice(&mut self) {
        let pos: HashMap<&str, usize> = self.slice.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
        let key = |id: &str| pos.get(id).copied().unwrap_or(usize::MAX);
        let mut anns = std::mem::take(&mut self.annotations);
        anns.sort_by_key(|a| key(&a.record_id));
        let mut fails = std::mem::take(&mut self.failures);
        fails.sort_by_key(|f| key(&f.record_id));
        self.annotations = anns;
        self.failures = fails;
    }

    /// Adds one annotation, as a human rater or adjudicator does. The label
    /// must be in `allowed` or be `Other`.
    pub fn record(
        &mut self,
        record_id: &str,
        label: &str,
        rationale: Option<String>,
        allowed: &[String],
        timestamp: String,
    ) -> Result<&Annotation, AnnotationError> {
        if !self.slice.iter().any(|id| id == record_id) {
            return Err(AnnotationError::NotInSlice {
                run_id: self.run_id.clone(),
                record_id: record_id.to_string(),
            });
        }
        if self.label_of(record_id).is_some() {
            return Err(AnnotationError::AlreadyAnnotated {
                run_id: self.run_id.clone(),
                record_id: record_id.to_string(),
            });
        }
        let label = match_allowed(label, allowed).ok_or_else(|| AnnotationError::InvalidLabel {
            label: label.to_string(),
        })?;
        self.failures.retain(|f| f.record_id != record_id);
        self.annotations.push(Annotation {
            record_id: record_id.to_string(),
            label,
            rater: self.rater.id(),
            taxonomy: self.taxonomy.clone(),
            run_id: self.run_id.clone(),
            timestamp,
            rationale,
        });
        self.sort_by_slice();
        self.refresh_status();
        Ok(self.annotations.iter().find(|a| a.record_id == record_id).expect("just added"))
    }

    /// Tab-separated `record_id, label, rater, run_id` with a header row.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("record_id\tlabel\trater\trun_id\n");
        for a in &self.annotations {
            out.push_str(&format!("{}\t{}\t{}\t{}\n", a.record_id, a.label, a.rater, a.run_id));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationSettings {
    pub template: PromptTemplate,
    pub aliases: AliasTable,
    /// Records labelled between checkpoints.
    pub checkpoint_every: usize,
    /// Prepended to record ids to form scripted-provider lookup keys.
    pub key_prefix: String,
}

impl Default for AnnotationSettings {
    fn default() -> Self {
        Self {
            template: PromptTemplate::default_for(Purpose::Annotate),
            aliases: AliasTable::new(),
            checkpoint_every: 50,
            key_prefix: String::new(),
        }
    }
}

/// Persists `t` under its `id@version` key. Storing the same content again is
/// a no-op; different content under an existing key is refused.
pub fn freeze_taxonomy(store: &RunStore, t: &Taxonomy) -> Result<(), AnnotationError> {
    match store.put(ArtifactKind::Taxonomy, &t.reference().store_key(), t) {
        Ok(_) => Ok(()),
        Err(StoreError::ImmutableKey { .. }) => Err(AnnotationError::TaxonomyConflict(t.reference())),
        Err(e) => Err(e.into()),
    }
}

fn check_slice(slice: &[RecordId]) -> Result<(), AnnotationError> {
    if slice.is_empty() {
        return Err(AnnotationError::EmptySlice);
    }
    let mut seen = HashSet::new();
    for id in slice {
        if !seen.insert(id.as_str()) {
            return Err(AnnotationError::DuplicateRecord(id.clone()));
        }
    }
    Ok(())
}

/// Starts a new LLM run over `slice` and labels it to completion.
pub fn annotate_llm(
    ctx: Context<'_>,
    gateway: &Gateway,
    dataset: &Dataset,
    slice: &[RecordId],
    taxonomy: &Taxonomy,
    settings: &AnnotationSettings,
) -> Result<AnnotationRun, AnnotationError> {
    check_slice(slice)?;
    dataset.select(slice)?;
    freeze_taxonomy(ctx.store, taxonomy)?;
    let run_id = ctx.store.allocate_id(RUN_PREFIX);
    let mut run = AnnotationRun::new(
        run_id,
        Rater::Llm {
            provider: gateway.provider_name().to_string(),
            model: gateway.model().to_string(),
        },
        taxonomy.reference(),
        slice.to_vec(),
        ctx.clock.now(),
    );
    run.prompt_template = Some(settings.template.id.clone());
    run.save(ctx.store)?;
    label_pending(ctx, gateway, dataset, run, taxonomy, settings)
}

/// Continues an in-progress run from its last checkpoint.
pub fn resume_annotation(
    ctx: Context<'_>,
    gateway: &Gateway,
    dataset: &Dataset,
    run_id: &str,
    settings: &AnnotationSettings,
) -> Result<AnnotationRun, AnnotationError> {
    let run = AnnotationRun::load(ctx.store, run_id)?;
    if run.is_complete() {
        return Ok(run);
    }
    let taxonomy: Taxonomy = ctx.store.get(&run.taxonomy.store_key())?;
    label_pending(ctx, gateway, dataset, run, &taxonomy, settings)
}

enum Outcome {
    Labeled(String),
    Failed(AnnotationFailure),
    Stopped(LlmError),
}

struct Job<'a> {
    gateway: &'a Gateway,
    run_id: &'a str,
    allowed: Vec<String>,
    taxonomy_block: String,
    settings: &'a AnnotationSettings,
}

impl Job<'_> {
    fn label(&self, record: &LogRecord) -> Outcome {
        let bindings: BTreeMap<String, String> = [
            (TAXONOMY_BLOCK.to_string(), self.taxonomy_block.clone()),
            (DATA_BLOCK.to_string(), record.render()),
        ]
        .into_iter()
        .collect();
        let prompt = match render_prompt(&self.settings.template, &bindings) {
            Ok(p) => p,
            Err(e) => return Outcome::Stopped(e),
        };
        let key = format!("{}{}", self.settings.key_prefix, record.id);
        let mut last = None;
        for attempt in 1..=2u32 {
            let request_id = if attempt == 1 {
                format!("{}/{}", self.run_id, record.id)
            } else {
                format!("{}/{}/retry", self.run_id, record.id)
            };
            let req = self.gateway.request(request_id, Purpose::Annotate, Some(&key), prompt.clone());
            let resp = match self.gateway.complete(&req) {
                Ok(r) => r,
                Err(e) => return Outcome::Stopped(e),
            };
            match parse_annotation_response(&resp.text, &self.allowed, &self.settings.aliases) {
                AnnotationParse::Label { label } => return Outcome::Labeled(label),
                AnnotationParse::Other => return Outcome::Labeled(OTHER.to_string()),
                AnnotationParse::Failure { raw, canonical } => {
                    last = Some(AnnotationFailure {
                        record_id: record.id.clone(),
                        raw,
                        canonical,
                        attempts: attempt,
                    })
                }
            }
        }
        Outcome::Failed(last.expect("at least one attempt"))
    }
}

fn label_pending(
    ctx: Context<'_>,
    gateway: &Gateway,
    dataset: &Dataset,
    mut run: AnnotationRun,
    taxonomy: &Taxonomy,
    settings: &AnnotationSettings,
) -> Result<AnnotationRun, AnnotationError> {
    let run_id = run.run_id.clone();
    let job = Job {
        gateway,
        run_id: &run_id,
        allowed: taxonomy.annotation_labels(),
        taxonomy_block: taxonomy.prompt_block(),
        settings,
    };
    let pending = run.pending();
    let records = dataset.select(&pending)?;
    let workers = gateway.parallelism().max(1);
    for chunk in records.chunks(settings.checkpoint_every.max(1)) {
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Outcome>>> = Mutex::new((0..chunk.len()).map(|_| None).collect());
        std::thread::scope(|s| {
            for _ in 0..workers.min(chunk.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    if i >= chunk.len() {
                        break;
                    }
                    let outcome = job.label(chunk[i]);
                    results.lock().expect("results poisoned")[i] = Some(outcome);
                });
            }
        });
        let mut stopped = None;
        let now = ctx.clock.now();
        for (record, outcome) in chunk.iter().zip(results.into_inner().expect("results poisoned")) {
            match outcome.expect("every record processed") {
                Outcome::Labeled(label) => run.annotations.push(Annotation {
                    record_id: record.id.clone(),
                    label,
                    rater: run.rater.id(),
                    taxonomy: run.taxonomy.clone(),
                    run_id: run_id.clone(),
                    timestamp: now.clone(),
                    rationale: None,
                }),
                Outcome::Failed(f) => {
                    tracing::warn!(run = %run_id, record = %f.record_id, "unparseable label {:?}", f.canonical);
                    run.failures.push(f)
                }
                Outcome::Stopped(e) => {
                    if stopped.is_none() {
                        stopped = Some(e);
                    }
                }
            }
        }
        run.sort_by_slice();
        run.refresh_status();
        run.save(ctx.store)?;
        if let Some(source) = stopped {
            return Err(AnnotationError::Interrupted { run_id, source });
        }
    }
    run.refresh_status();
    run.save(ctx.store)?;
    Ok(run)
}

/// `r` independent runs with identical configuration.
pub fn repeat_runs(
    ctx: Context<'_>,
    gateway: &Gateway,
    dataset: &Dataset,
    slice: &[RecordId],
    taxonomy: &Taxonomy,
    settings: &AnnotationSettings,
    r: usize,
) -> Result<Vec<AnnotationRun>, AnnotationError> {
    if r < 2 {
        return Err(AnnotationError::TooFewRuns { needed: 2, got: r });
    }
    (0..r)
        .map(|_| annotate_llm(ctx, gateway, dataset, slice, taxonomy, settings))
        .collect()
}

/// Strict majority if one exists, otherwise `Other`. The flag reports whether
/// a majority was found.
pub fn majority_label(labels: &[&str]) -> (String, bool) {
    let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
    for l in labels {
        *tally.entry(l).or_insert(0) += 1;
    }
    match tally.into_iter().find(|(_, c)| 2 * c > labels.len()) {
        Some((label, _)) => (label.to_string(), true),
        None => (OTHER.to_string(), false),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteDecision {
    pub record_id: RecordId,
    pub label: String,
    pub tally: BTreeMap<String, usize>,
    pub majority: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoteOutcome {
    pub taxonomy: TaxonomyRef,
    pub source_runs: Vec<String>,
    pub decisions: Vec<VoteDecision>,
    /// Records left out because some source run has no valid label for them.
    pub skipped: Vec<RecordId>,
}

impl VoteOutcome {
    /// The triaged labels as a complete consensus run.
    pub fn to_run(&self, run_id: impl Into<String>, created_at: String) -> AnnotationRun {
        let labels: Vec<(RecordId, String)> =
            self.decisions.iter().map(|d| (d.record_id.clone(), d.label.clone())).collect();
        let mut run = AnnotationRun::from_labels(
            run_id,
            Rater::Consensus {
                method: "majority".into(),
                sources: self.source_runs.clone(),
            },
            self.taxonomy.clone(),
            &labels,
            created_at,
        );
        if !self.skipped.is_empty() {
            run.notes.push(format!("{} record(s) skipped: no valid label in some source run", self.skipped.len()));
        }
        run
    }
}

/// Checks that runs cover the same records under the same taxonomy version.
pub fn check_aligned(runs: &[&AnnotationRun]) -> Result<(), AnnotationError> {
    let Some(first) = runs.first() else {
        return Ok(());
    };
    let base: HashSet<&str> = first.slice.iter().map(String::as_str).collect();
    for r in runs {
        if !r.is_complete() {
            return Err(AnnotationError::NotComplete(r.run_id.clone()));
        }
        if r.taxonomy != first.taxonomy {
            return Err(AnnotationError::Mismatch(format!(
                "{} uses {} but {} uses {}",
                r.run_id, r.taxonomy, first.run_id, first.taxonomy
            )));
        }
        let slice: HashSet<&str> = r.slice.iter().map(String::as_str).collect();
        if slice != base {
            return Err(AnnotationError::Mismatch(format!(
                "{} and {} cover different records",
                r.run_id, first.run_id
            )));
        }
    }
    Ok(())
}

/// Per-record triage over an odd number (at least 3) of aligned runs.
pub fn majority_vote(runs: &[&AnnotationRun]) -> Result<VoteOutcome, AnnotationError> {
    if runs.len() < 3 {
        return Err(AnnotationError::TooFewRuns {
            needed: 3,
            got: runs.len(),
        });
    }
    if runs.len() % 2 == 0 {
        return Err(AnnotationError::EvenRaterCount(runs.len()));
    }
    check_aligned(runs)?;
    let maps: Vec<BTreeMap<&str, &str>> = runs.iter().map(|r| r.labels()).collect();
    let mut decisions = Vec::new();
    let mut skipped = Vec::new();
    for id in &runs[0].slice {
        let labels: Option<Vec<&str>> = maps.iter().map(|m| m.get(id.as_str()).copied()).collect();
        let Some(labels) = labels else {
            skipped.push(id.clone());
            continue;
        };
        let (label, majority) = majority_label(&labels);
        let mut tally = BTreeMap::new();
        for l in &labels {
            *tally.entry(l.to_string()).or_insert(0) += 1;
        }
        decisions.push(VoteDecision {
            record_id: id.clone(),
            label,
            tally,
            majority,
        });
    }
    Ok(VoteOutcome {
        taxonomy: runs[0].taxonomy.clone(),
        source_runs: runs.iter().map(|r| r.run_id.clone()).collect(),
        decisions,
        skipped,
    })
}
