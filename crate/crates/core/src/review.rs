//! Human review tasks: labelling, disagreement resolution, spot-check
//! verdicts, alias mapping and taxonomy-edit approval.
//!
//! The service is event-sourced. Every creation, claim and submission is
//! appended to the RunStore as a `review/evt-NNNNNN` artifact, and opening a
//! service replays those events. All mutations go through one lock, so claims
//! are linearizable and a task is never completed twice. A submission's side
//! effect (a human label, a verdict, an alias, a new taxonomy version) is
//! persisted before its event, so replay never references a missing artifact.

use crate::annotation::{check_aligned, AnnotationError, AnnotationRun, Rater};
use crate::clock::Clock;
use crate::dataset::{Dataset, RecordId};
use crate::gates::{GateError, SpotCheckTask, Verdict};
use crate::store::{ArtifactKind, RunStore, StoreError};
use crate::taxonomy::{apply_edit, AliasError, AliasTable, Bounds, Edit, EditError, Taxonomy, TaxonomyRef, OTHER};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};
use thiserror::Error;

pub const EVENT_PREFIX: &str = "review/evt-";

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("task {task_id} is claimed by {holder}")]
    Conflict { task_id: String, holder: String },
    #[error("task {0} is already done")]
    AlreadyDone(String),
    #[error("invalid result for task {task_id}: {reason}")]
    InvalidResult { task_id: String, reason: String },
    #[error("result kind does not match task kind {0:?}")]
    WrongResultKind(TaskKind),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

impl ReviewError {
    /// True for errors caused by the submitted content rather than by state.
    pub fn is_invalid_input(&self) -> bool {
        matches!(
            self,
            ReviewError::InvalidResult { .. } | ReviewError::WrongResultKind(_)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    LabelRecord,
    ResolveDisagreement,
    SpotCheckVerdict,
    MapAlias,
    ApproveTaxonomyEdit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskState {
    Open,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflictingLabel {
    pub run_id: String,
    pub rater: String,
    /// `None` when the rater's reply could not be parsed.
    pub label: Option<String>,
    #[serde(default)]
    pub rationale: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskPayload {
    LabelRecord {
        run_id: String,
        record_id: RecordId,
        text: Option<String>,
        taxonomy: TaxonomyRef,
        candidates: Vec<String>,
    },
    ResolveDisagreement {
        run_id: String,
        record_id: RecordId,
        text: Option<String>,
        taxonomy: TaxonomyRef,
        candidates: Vec<String>,
        conflicting: Vec<ConflictingLabel>,
    },
    SpotCheckVerdict {
        spot_check: String,
        record_id: RecordId,
        text: Option<String>,
        taxonomy: TaxonomyRef,
        llm_label: String,
    },
    MapAlias {
        alias_table: String,
        raw_label: String,
        candidates: Vec<String>,
    },
    ApproveTaxonomyEdit {
        taxonomy: TaxonomyRef,
        edit: Edit,
        bounds: Bounds,
    },
}

impl TaskPayload {
    pub fn kind(&self) -> TaskKind {
        match self {
            TaskPayload::LabelRecord { .. } => TaskKind::LabelRecord,
            TaskPayload::ResolveDisagreement { .. } => TaskKind::ResolveDisagreement,
            TaskPayload::SpotCheckVerdict { .. } => TaskKind::SpotCheckVerdict,
            TaskPayload::MapAlias { .. } => TaskKind::MapAlias,
            TaskPayload::ApproveTaxonomyEdit { .. } => TaskKind::ApproveTaxonomyEdit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskResult {
    Label {
        label: String,
        #[serde(default)]
        rationale: Option<String>,
    },
    Verdict {
        verdict: Verdict,
        #[serde(default)]
        note: Option<String>,
    },
    Alias {
        target: String,
    },
    Approval {
        approve: bool,
        #[serde(default)]
        comment: Option<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReviewTask {
    pub task_id: String,
    pub kind: TaskKind,
    pub payload: TaskPayload,
    pub state: TaskState,
    #[serde(default)]
    pub assignee: Option<String>,
    #[serde(default)]
    pub result: Option<TaskResult>,
    pub created_at: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ReviewEvent {
    Created { task: ReviewTask },
    Claimed { task_id: String, assessor: String, at: String },
    Submitted {
        task_id: String,
        assessor: String,
        result: TaskResult,
        at: String,
    },
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct TaskFilter {
    pub state: Option<TaskState>,
    pub kind: Option<TaskKind>,
}

#[derive(Default)]
struct State {
    tasks: BTreeMap<String, ReviewTask>,
    events: u64,
}

impl State {
    fn apply(&mut self, event: &ReviewEvent) {
        match event {
            ReviewEvent::Created { task } => {
                self.tasks.insert(task.task_id.clone(), task.clone());
            }
            ReviewEvent::Claimed { task_id, assessor, .. } => {
                if let Some(t) = self.tasks.get_mut(task_id) {
                    t.assignee = Some(assessor.clone());
                }
            }
            ReviewEvent::Submitted {
                task_id,
                assessor,
                result,
                ..
            } => {
                if let Some(t) = self.tasks.get_mut(task_id) {
                    t.assignee = Some(assessor.clone());
                    t.result = Some(result.clone());
                    t.state = TaskState::Done;
                }
            }
        }
        self.events += 1;
    }
}

/// Result of queueing disagreements between aligned runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DisagreementQueue {
    /// Adjudicated run, pre-filled with every label the raters agreed on.
    pub run_id: String,
    pub tasks: Vec<ReviewTask>,
}

pub struct ReviewService {
    store: Arc<RunStore>,
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
}

fn candidates(t: &Taxonomy) -> Vec<String> {
    let mut c = t.annotation_labels();
    c.push(OTHER.to_string());
    c
}

fn record_text(dataset: Option<&Dataset>, id: &str) -> Option<String> {
    dataset.and_then(|d| d.get(id)).map(|r| r.render())
}

fn invalid(task_id: &str, reason: impl ToString) -> ReviewError {
    ReviewError::InvalidResult {
        task_id: task_id.to_string(),
        reason: reason.to_string(),
    }
}

impl ReviewService {
    /// Opens the service and replays every persisted review event.
    pub fn open(store: Arc<RunStore>, clock: Arc<dyn Clock>) -> Result<Self, ReviewError> {
        let mut state = State::default();
        let mut keys: Vec<String> = store
            .list(ArtifactKind::ReviewEvent)
            .into_iter()
            .map(|e| e.key)
            .filter(|k| k.starts_with(EVENT_PREFIX))
            .collect();
        keys.sort();
        for k in keys {
            let event: ReviewEvent = store.get(&k)?;
            state.apply(&event);
        }
        Ok(Self {
            store,
            clock,
            state: Mutex::new(state),
        })
    }

    pub fn store(&self) -> &Arc<RunStore> {
        &self.store
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, State> {
        self.state.lock().expect("review state poisoned")
    }

    fn append(&self, state: &mut State, event: ReviewEvent) -> Result<(), ReviewError> {
        let key = format!("{EVENT_PREFIX}{:06}", state.events + 1);
        self.store.put(ArtifactKind::ReviewEvent, &key, &event)?;
        state.apply(&event);
        Ok(())
    }

    fn create(&self, state: &mut State, payload: TaskPayload) -> Result<ReviewTask, ReviewError> {
        let task = ReviewTask {
            task_id: format!("task-{:06}", state.tasks.len() + 1),
            kind: payload.kind(),
            payload,
            state: TaskState::Open,
            assignee: None,
            result: None,
            created_at: self.clock.now(),
        };
        self.append(state, ReviewEvent::Created { task: task.clone() })?;
        Ok(task)
    }

    pub fn list(&self, filter: TaskFilter) -> Vec<ReviewTask> {
        self.lock()
            .tasks
            .values()
            .filter(|t| filter.state.is_none_or(|s| t.state == s))
            .filter(|t| filter.kind.is_none_or(|k| t.kind == k))
            .cloned()
            .collect()
    }

    pub fn get(&self, task_id: &str) -> Option<ReviewTask> {
        self.lock().tasks.get(task_id).cloned()
    }

    /// Opens an empty human run over `slice` and one labelling task per record.
    pub fn queue_labelling(
        &self,
        assessor: &str,
        taxonomy: &Taxonomy,
        slice: &[RecordId],
        dataset: Option<&Dataset>,
    ) -> Result<(String, Vec<ReviewTask>), ReviewError> {
        if slice.is_empty() {
            return Err(AnnotationError::EmptySlice.into());
        }
        let run_id = self.store.allocate_id("human");
        let run = AnnotationRun::new(
            run_id.clone(),
            Rater::Human {
                assessor: assessor.to_string(),
            },
            taxonomy.reference(),
            slice.to_vec(),
            self.clock.now(),
        );
        run.save(&self.store)?;
        let mut state = self.lock();
        let mut tasks = Vec::with_capacity(slice.len());
        for id in slice {
            tasks.push(self.create(
                &mut state,
                TaskPayload::LabelRecord {
                    run_id: run_id.clone(),
                    record_id: id.clone(),
                    text: record_text(dataset, id),
                    taxonomy: taxonomy.reference(),
                    candidates: candidates(taxonomy),
                },
            )?);
        }
        Ok((run_id, tasks))
    }

    /// One resolution task per record on which the runs differ. Agreed labels
    /// go straight into a new adjudicated run.
    pub fn disagreement_queue(
        &self,
        runs: &[&AnnotationRun],
        taxonomy: &Taxonomy,
        dataset: Option<&Dataset>,
    ) -> Result<DisagreementQueue, ReviewError> {
        if runs.len() < 2 {
            return Err(AnnotationError::TooFewRuns {
                needed: 2,
                got: runs.len(),
            }
            .into());
        }
        check_aligned(runs)?;
        if runs[0].taxonomy != taxonomy.reference() {
            return Err(AnnotationError::Mismatch(format!(
                "runs use {} but the queue was opened for {}",
                runs[0].taxonomy,
                taxonomy.reference()
            ))
            .into());
        }
        let allowed = candidates(taxonomy);
        let run_id = self.store.allocate_id("adj");
        let mut adjudicated = AnnotationRun::new(
            run_id.clone(),
            Rater::Consensus {
                method: "adjudication".into(),
                sources: runs.iter().map(|r| r.run_id.clone()).collect(),
            },
            taxonomy.reference(),
            runs[0].slice.clone(),
            self.clock.now(),
        );
        let mut disputed = Vec::new();
        for id in &runs[0].slice {
            let labels: Vec<Option<&str>> = runs.iter().map(|r| r.label_of(id)).collect();
            match labels[0] {
                Some(l) if labels.iter().all(|x| *x == Some(l)) => {
                    adjudicated.record(id, l, None, &allowed, self.clock.now())?;
                }
                _ => disputed.push(id.clone()),
            }
        }
        adjudicated.save(&self.store)?;
        let mut state = self.lock();
        let mut tasks = Vec::with_capacity(disputed.len());
        for id in disputed {
            let conflicting = runs
                .iter()
                .map(|r| {
                    let a = r.annotations.iter().find(|a| a.record_id == id);
                    ConflictingLabel {
                        run_id: r.run_id.clone(),
                        rater: r.rater.id(),
                        label: a.map(|a| a.label.clone()),
                        rationale: a.and_then(|a| a.rationale.clone()),
                    }
                })
                .collect();
            tasks.push(self.create(
                &mut state,
                TaskPayload::ResolveDisagreement {
                    run_id: run_id.clone(),
                    text: record_text(dataset, &id),
                    record_id: id,
                    taxonomy: taxonomy.reference(),
                    candidates: allowed.clone(),
                    conflicting,
                },
            )?);
        }
        Ok(DisagreementQueue { run_id, tasks })
    }

    /// Persists the spot check and opens a task for each unreviewed item.
    pub fn queue_spot_check(&self, task: &SpotCheckTask, dataset: Option<&Dataset>) -> Result<Vec<ReviewTask>, ReviewError> {
        task.save(&self.store)?;
        let mut state = self.lock();
        let mut out = Vec::new();
        for item in task.items.iter().filter(|i| i.verdict == Verdict::Unreviewed) {
            out.push(self.create(
                &mut state,
                TaskPayload::SpotCheckVerdict {
                    spot_check: task.task_id.clone(),
                    record_id: item.record_id.clone(),
                    text: record_text(dataset, &item.record_id),
                    taxonomy: task.taxonomy.clone(),
                    llm_label: item.llm_label.clone(),
                },
            )?);
        }
        Ok(out)
    }

    /// Asks a reviewer to map an unresolved label onto one of `candidates`.
    pub fn queue_alias(&self, alias_table: &str, raw_label: &str, candidates: &[String]) -> Result<ReviewTask, ReviewError> {
        let mut state = self.lock();
        self.create(
            &mut state,
            TaskPayload::MapAlias {
                alias_table: alias_table.to_string(),
                raw_label: raw_label.to_string(),
                candidates: candidates.to_vec(),
            },
        )
    }

    /// Proposes an edit to a stored taxonomy version for approval.
    pub fn queue_edit(&self, taxonomy: &Taxonomy, edit: Edit, bounds: Bounds) -> Result<ReviewTask, ReviewError> {
        if let Err(e) = apply_edit(taxonomy, &edit, &bounds) {
            return Err(invalid("(new)", e));
        }
        let mut state = self.lock();
        self.create(
            &mut state,
            TaskPayload::ApproveTaxonomyEdit {
                taxonomy: taxonomy.reference(),
                edit,
                bounds,
            },
        )
    }

    /// Atomically assigns an open task. Re-claiming one's own task is a no-op.
    pub fn claim(&self, task_id: &str, assessor: &str) -> Result<ReviewTask, ReviewError> {
        let mut state = self.lock();
        let task = state
            .tasks
            .get(task_id)
            .ok_or_else(|| ReviewError::UnknownTask(task_id.to_string()))?;
        if task.state == TaskState::Done {
            return Err(ReviewError::AlreadyDone(task_id.to_string()));
        }
        match &task.assignee {
            Some(a) if a == assessor => return Ok(task.clone()),
            Some(a) => {
                return Err(ReviewError::Conflict {
                    task_id: task_id.to_string(),
                    holder: a.clone(),
                })
            }
            None => {}
        }
        self.append(
            &mut state,
            ReviewEvent::Claimed {
                task_id: task_id.to_string(),
                assessor: assessor.to_string(),
                at: self.clock.now(),
            },
        )?;
        Ok(state.tasks[task_id].clone())
    }

    /// Validates and applies a result. Unclaimed tasks are claimed implicitly;
    /// resubmitting the identical result is a no-op.
    pub fn submit(&self, task_id: &str, assessor: &str, result: TaskResult) -> Result<ReviewTask, ReviewError> {
        let mut state = self.lock();
        let task = state
            .tasks
            .get(task_id)
            .cloned()
            .ok_or_else(|| ReviewError::UnknownTask(task_id.to_string()))?;
        if let Some(holder) = &task.assignee {
            if holder != assessor {
                return Err(ReviewError::Conflict {
                    task_id: task_id.to_string(),
                    holder: holder.clone(),
                });
            }
        }
        if task.state == TaskState::Done {
            if task.result.as_ref() == Some(&result) {
                return Ok(task);
            }
            return Err(ReviewError::AlreadyDone(task_id.to_string()));
        }
        self.apply_result(&task, assessor, &result)?;
        self.append(
            &mut state,
            ReviewEvent::Submitted {
                task_id: task_id.to_string(),
                assessor: assessor.to_string(),
                result,
                at: self.clock.now(),
            },
        )?;
        Ok(state.tasks[task_id].clone())
    }

    fn apply_result(&self, task: &ReviewTask, assessor: &str, result: &TaskResult) -> Result<(), ReviewError> {
        let id = task.task_id.as_str();
        match (&task.payload, result) {
            (
                TaskPayload::LabelRecord {
                    run_id,
                    record_id,
                    candidates,
                    ..
                }
                | TaskPayload::ResolveDisagreement {
                    run_id,
                    record_id,
                    candidates,
                    ..
                },
                TaskResult::Label { label, rationale },
            ) => {
                let mut run = AnnotationRun::load(&self.store, run_id)?;
                match run.record(record_id, label, rationale.clone(), candidates, self.clock.now()) {
                    Ok(_) => {}
                    Err(e @ AnnotationError::InvalidLabel { .. }) => return Err(invalid(id, e)),
                    Err(e) => return Err(e.into()),
                }
                run.save(&self.store)?;
            }
            (TaskPayload::SpotCheckVerdict { spot_check, record_id, .. }, TaskResult::Verdict { verdict, note }) => {
                let mut sc = SpotCheckTask::load(&self.store, spot_check)?;
                match sc.record_verdict(record_id, *verdict, assessor, note.clone()) {
                    Ok(()) => {}
                    Err(e @ GateError::UnreviewedVerdict) => return Err(invalid(id, e)),
                    Err(e) => return Err(e.into()),
                }
                sc.save(&self.store)?;
            }
            (
                TaskPayload::MapAlias {
                    alias_table,
                    raw_label,
                    candidates,
                },
                TaskResult::Alias { target },
            ) => {
                let Some(target) = candidates
                    .iter()
                    .find(|c| crate::taxonomy::canonicalize_label(c) == crate::taxonomy::canonicalize_label(target))
                else {
                    return Err(invalid(id, format!("{target:?} is not a candidate label")));
                };
                let mut table = match self.store.get::<AliasTable>(alias_table) {
                    Ok(t) => t,
                    Err(StoreError::NotFound { .. }) => AliasTable::new(),
                    Err(e) => return Err(e.into()),
                };
                table
                    .insert(raw_label, target)
                    .map_err(|e: AliasError| invalid(id, e))?;
                self.store.put(ArtifactKind::AliasTable, alias_table, &table)?;
            }
            (TaskPayload::ApproveTaxonomyEdit { taxonomy, edit, bounds }, TaskResult::Approval { approve, .. }) => {
                if *approve {
                    let base: Taxonomy = self.store.get(&taxonomy.store_key())?;
                    let next = apply_edit(&base, edit, bounds).map_err(|e: EditError| invalid(id, e))?;
                    match self.store.put(ArtifactKind::Taxonomy, &next.reference().store_key(), &next) {
                        Ok(_) => {}
                        Err(StoreError::ImmutableKey { key }) => {
                            return Err(invalid(id, format!("{key} already exists; the edit is stale")))
                        }
                        Err(e) => return Err(e.into()),
                    }
                }
            }
            _ => return Err(ReviewError::WrongResultKind(task.kind)),
        }
        Ok(())
    }
}
