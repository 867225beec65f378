//! Quality gates over taxonomies and annotation runs.
//!
//! Each gate is a pure function of its inputs and yields a [`GateEntry`].
//! Evidence entries are RunStore keys so a report can be audited against the
//! store with [`GateReport::check_evidence`].

use crate::agreement::{fleiss_for_runs, AgreementError};
use crate::annotation::{run_key, AnnotationRun};
use crate::context::Context;
use crate::dataset::{seeded_shuffle, RecordId};
use crate::insights::IntentDistribution;
use crate::store::{ArtifactKind, RunStore, StoreError};
use crate::taxonomy::{path_display, Taxonomy, TaxonomyRef, OTHER, PATH_SEPARATOR};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GateError {
    #[error("annotation run {0} is not complete")]
    NotComplete(String),
    #[error("annotation run {0} has no valid annotations")]
    NoValidAnnotations(String),
    #[error("consistency needs at least 2 repeated runs, got {0}")]
    TooFewRuns(usize),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error("cannot sample {k} records from {available} valid annotations")]
    SampleTooLarge { k: usize, available: usize },
    #[error("spot-check sample size must be positive")]
    EmptySample,
    #[error("record {0:?} is not part of this spot check")]
    NotSampled(String),
    #[error("a verdict cannot be reset to unreviewed")]
    UnreviewedVerdict,
    #[error("label universes differ: only in first {only_a:?}, only in second {only_b:?}")]
    UniverseMismatch { only_a: Vec<String>, only_b: Vec<String> },
    #[error("distribution {0} has no annotations")]
    EmptyDistribution(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    pub tau_other: f64,
    pub tau_kappa: f64,
    pub tau_accuracy: f64,
    pub tau_min_share: f64,
    pub tau_tvd: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            tau_other: 0.05,
            tau_kappa: 0.80,
            tau_accuracy: 0.90,
            tau_min_share: 0.02,
            tau_tvd: 0.15,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateName {
    Comprehensiveness,
    Consistency,
    Clarity,
    Accuracy,
    Conciseness,
    Bias,
}

impl GateName {
    pub const ALL: [GateName; 6] = [
        GateName::Comprehensiveness,
        GateName::Consistency,
        GateName::Clarity,
        GateName::Accuracy,
        GateName::Conciseness,
        GateName::Bias,
    ];
}

impl fmt::Display for GateName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateName::Comprehensiveness => "comprehensiveness",
            GateName::Consistency => "consistency",
            GateName::Clarity => "clarity",
            GateName::Accuracy => "accuracy",
            GateName::Conciseness => "conciseness",
            GateName::Bias => "bias",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateStatus {
    Pass,
    Fail,
    Skipped,
}

impl fmt::Display for GateStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GateStatus::Pass => "pass",
            GateStatus::Fail => "fail",
            GateStatus::Skipped => "skipped",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateEntry {
    pub name: GateName,
    pub status: GateStatus,
    pub measured: Option<f64>,
    pub threshold: Option<f64>,
    /// RunStore keys of the artifacts the gate read.
    pub evidence: Vec<String>,
    /// Human-readable problems, e.g. categories to prune.
    #[serde(default)]
    pub findings: Vec<String>,
    /// Per-label values: shares for conciseness, deltas for bias.
    #[serde(default)]
    pub values: BTreeMap<String, f64>,
    #[serde(default)]
    pub note: Option<String>,
}

impl GateEntry {
    fn measured(name: GateName, measured: f64, threshold: f64, pass: bool, evidence: Vec<String>) -> Self {
        Self {
            name,
            status: if pass { GateStatus::Pass } else { GateStatus::Fail },
            measured: Some(measured),
            threshold: Some(threshold),
            evidence,
            findings: Vec::new(),
            values: BTreeMap::new(),
            note: None,
        }
    }

    pub fn skipped(name: GateName, note: impl Into<String>) -> Self {
        Self {
            name,
            status: GateStatus::Skipped,
            measured: None,
            threshold: None,
            evidence: Vec::new(),
            findings: Vec::new(),
            values: BTreeMap::new(),
            note: Some(note.into()),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == GateStatus::Pass
    }
}

fn require_complete(run: &AnnotationRun) -> Result<(), GateError> {
    if !run.is_complete() {
        return Err(GateError::NotComplete(run.run_id.clone()));
    }
    if run.annotations.is_empty() {
        return Err(GateError::NoValidAnnotations(run.run_id.clone()));
    }
    Ok(())
}

/// Share of valid annotations labelled Other; passes at or below `tau_other`.
pub fn gate_comprehensiveness(run: &AnnotationRun, tau_other: f64) -> Result<GateEntry, GateError> {
    require_complete(run)?;
    let other = run.other_count();
    let rate = other as f64 / run.valid_count() as f64;
    let mut e = GateEntry::measured(
        GateName::Comprehensiveness,
        rate,
        tau_other,
        rate <= tau_other,
        vec![run_key(&run.run_id)],
    );
    e.note = Some(format!("{other} of {} valid annotations are {OTHER}", run.valid_count()));
    Ok(e)
}

/// Fleiss' kappa across repeated runs; passes at or above `tau_kappa`.
pub fn gate_consistency(runs: &[&AnnotationRun], tau_kappa: f64) -> Result<GateEntry, GateError> {
    if runs.len() < 2 {
        return Err(GateError::TooFewRuns(runs.len()));
    }
    let report = fleiss_for_runs(runs)?;
    let mut e = GateEntry::measured(
        GateName::Consistency,
        report.value,
        tau_kappa,
        report.value >= tau_kappa,
        runs.iter().map(|r| run_key(&r.run_id)).collect(),
    );
    e.note = Some(format!("{} raters over {} records, {}", runs.len(), report.n, report.band));
    Ok(e)
}

/// Structural clarity: every category has a description and at least one
/// positive and one negative example. Measured as the complete fraction.
pub fn gate_clarity(t: &Taxonomy) -> GateEntry {
    let walked = t.walk();
    let mut findings = Vec::new();
    for (path, c) in &walked {
        let mut missing = Vec::new();
        if c.description.trim().is_empty() {
            missing.push("description");
        }
        if !c.positive_examples.iter().any(|e| !e.trim().is_empty()) {
            missing.push("positive examples");
        }
        if !c.negative_examples.iter().any(|e| !e.trim().is_empty()) {
            missing.push("negative examples");
        }
        if !missing.is_empty() {
            findings.push(format!("{} lacks {}", path_display(path), missing.join(" and ")));
        }
    }
    let total = walked.len().max(1);
    let measured = (total - findings.len()) as f64 / total as f64;
    let mut e = GateEntry::measured(
        GateName::Clarity,
        measured,
        1.0,
        findings.is_empty(),
        vec![t.reference().store_key()],
    );
    e.findings = findings;
    e
}

/// Top-level category of an annotation label; level-2 paths map to their parent.
fn top_level(label: &str) -> &str {
    label.split(PATH_SEPARATOR).next().unwrap_or(label)
}

/// Smallest category share among valid annotations; every category must
/// reach `tau_min_share`. Failing categories are listed as prune candidates.
pub fn gate_conciseness(run: &AnnotationRun, t: &Taxonomy, tau_min_share: f64) -> Result<GateEntry, GateError> {
    require_complete(run)?;
    let n = run.valid_count() as f64;
    let mut counts: BTreeMap<&str, usize> = t.categories.iter().map(|c| (c.label.as_str(), 0)).collect();
    for a in &run.annotations {
        if let Some(c) = counts.get_mut(top_level(&a.label)) {
            *c += 1;
        }
    }
    let mut values = BTreeMap::new();
    let mut findings = Vec::new();
    let mut min = f64::INFINITY;
    for c in &t.categories {
        let share = counts[c.label.as_str()] as f64 / n;
        min = min.min(share);
        if share < tau_min_share {
            findings.push(format!("prune candidate: {} (share {share:.4})", c.label));
        }
        values.insert(c.label.clone(), share);
    }
    if !min.is_finite() {
        min = 0.0;
    }
    let mut e = GateEntry::measured(
        GateName::Conciseness,
        min,
        tau_min_share,
        findings.is_empty(),
        vec![run_key(&run.run_id), t.reference().store_key()],
    );
    e.findings = findings;
    e.values = values;
    Ok(e)
}

/// Total variation distance between two intent distributions over the same
/// label universe, with per-label share deltas (first minus second).
pub fn bias_probe(a: &IntentDistribution, b: &IntentDistribution, tau_tvd: f64) -> Result<GateEntry, GateError> {
    for d in [a, b] {
        if d.n == 0 {
            return Err(GateError::EmptyDistribution(d.run_id.clone()));
        }
    }
    let la: BTreeSet<&str> = a.labels().into_iter().collect();
    let lb: BTreeSet<&str> = b.labels().into_iter().collect();
    if la != lb {
        return Err(GateError::UniverseMismatch {
            only_a: la.difference(&lb).map(|s| s.to_string()).collect(),
            only_b: lb.difference(&la).map(|s| s.to_string()).collect(),
        });
    }
    let mut values = BTreeMap::new();
    let mut sum = 0.0;
    for label in &la {
        let (p, q) = (a.share(label).unwrap_or(0.0), b.share(label).unwrap_or(0.0));
        sum += (p - q).abs();
        values.insert(label.to_string(), p - q);
    }
    let tvd = sum / 2.0;
    let mut evidence: Vec<String> = [&a.run_id, &b.run_id].iter().map(|r| run_key(r)).collect();
    evidence.dedup();
    let mut e = GateEntry::measured(GateName::Bias, tvd, tau_tvd, tvd <= tau_tvd, evidence);
    e.values = values;
    e.note = Some(format!("{} vs {}", a.run_id, b.run_id));
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    FollowsDefinition,
    Violates,
    Unreviewed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpotCheckItem {
    pub record_id: RecordId,
    pub llm_label: String,
    pub verdict: Verdict,
    #[serde(default)]
    pub reviewer: Option<String>,
    #[serde(default)]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpotCheckTask {
    pub task_id: String,
    pub run_id: String,
    pub taxonomy: TaxonomyRef,
    pub seed: u64,
    pub items: Vec<SpotCheckItem>,
}

pub fn spot_check_key(task_id: &str) -> String {
    format!("spotcheck/{task_id}")
}

/// Samples `k` valid annotations of a complete run for human verification.
pub fn start_spot_check(
    run: &AnnotationRun,
    k: usize,
    seed: u64,
    task_id: impl Into<String>,
) -> Result<SpotCheckTask, GateError> {
    require_complete(run)?;
    if k == 0 {
        return Err(GateError::EmptySample);
    }
    let mut pool: Vec<_> = run.annotations.iter().collect();
    if k > pool.len() {
        return Err(GateError::SampleTooLarge {
            k,
            available: pool.len(),
        });
    }
    seeded_shuffle(&mut pool, seed);
    Ok(SpotCheckTask {
        task_id: task_id.into(),
        run_id: run.run_id.clone(),
        taxonomy: run.taxonomy.clone(),
        seed,
        items: pool[..k]
            .iter()
            .map(|a| SpotCheckItem {
                record_id: a.record_id.clone(),
                llm_label: a.label.clone(),
                verdict: Verdict::Unreviewed,
                reviewer: None,
                note: None,
            })
            .collect(),
    })
}

impl SpotCheckTask {
    pub fn key(&self) -> String {
        spot_check_key(&self.task_id)
    }

    pub fn save(&self, store: &RunStore) -> Result<(), StoreError> {
        store.put(ArtifactKind::SpotCheck, &self.key(), self).map(|_| ())
    }

    pub fn load(store: &RunStore, task_id: &str) -> Result<Self, StoreError> {
        store.get(&spot_check_key(task_id))
    }

    pub fn reviewed(&self) -> usize {
        self.items.iter().filter(|i| i.verdict != Verdict::Unreviewed).count()
    }

    pub fn is_complete(&self) -> bool {
        self.reviewed() == self.items.len()
    }

    pub fn item(&self, record_id: &str) -> Option<&SpotCheckItem> {
        self.items.iter().find(|i| i.record_id == record_id)
    }

    /// Sets or overwrites the verdict for one sampled record.
    pub fn record_verdict(
        &mut self,
        record_id: &str,
        verdict: Verdict,
        reviewer: &str,
        note: Option<String>,
    ) -> Result<(), GateError> {
        if verdict == Verdict::Unreviewed {
            return Err(GateError::UnreviewedVerdict);
        }
        let item = self
            .items
            .iter_mut()
            .find(|i| i.record_id == record_id)
            .ok_or_else(|| GateError::NotSampled(record_id.to_string()))?;
        item.verdict = verdict;
        item.reviewer = Some(reviewer.to_string());
        item.note = note;
        Ok(())
    }
}

/// Fraction of spot-checked labels that follow the category definitions.
/// Skipped until every sampled item has a verdict.
pub fn gate_accuracy(task: &SpotCheckTask, tau_accuracy: f64) -> GateEntry {
    let total = task.items.len();
    if !task.is_complete() {
        let done = task.reviewed();
        let pct = if total == 0 { 0.0 } else { 100.0 * done as f64 / total as f64 };
        let mut e = GateEntry::skipped(
            GateName::Accuracy,
            format!("spot check {} is {pct:.0}% reviewed ({done} of {total})", task.task_id),
        );
        e.evidence = vec![task.key()];
        return e;
    }
    let follows = task
        .items
        .iter()
        .filter(|i| i.verdict == Verdict::FollowsDefinition)
        .count();
    let rate = follows as f64 / total as f64;
    let mut e = GateEntry::measured(
        GateName::Accuracy,
        rate,
        tau_accuracy,
        rate >= tau_accuracy,
        vec![task.key(), run_key(&task.run_id)],
    );
    e.findings = task
        .items
        .iter()
        .filter(|i| i.verdict == Verdict::Violates)
        .map(|i| format!("{} labelled {} violates its definition", i.record_id, i.llm_label))
        .collect();
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateReport {
    pub report_id: String,
    pub taxonomy: TaxonomyRef,
    pub thresholds: Thresholds,
    /// One entry per gate, in [`GateName::ALL`] order.
    pub gates: Vec<GateEntry>,
    pub created_at: String,
}

pub fn gate_report_key(report_id: &str) -> String {
    format!("gates/{report_id}")
}

impl GateReport {
    pub fn gate(&self, name: GateName) -> Option<&GateEntry> {
        self.gates.iter().find(|g| g.name == name)
    }

    pub fn key(&self) -> String {
        gate_report_key(&self.report_id)
    }

    /// True when no evaluated gate failed.
    pub fn all_passed(&self) -> bool {
        self.gates.iter().all(|g| g.status != GateStatus::Fail)
    }

    /// Evidence keys that do not resolve in `store`.
    pub fn check_evidence(&self, store: &RunStore) -> Vec<String> {
        self.gates
            .iter()
            .flat_map(|g| g.evidence.iter())
            .filter(|k| !store.contains(k))
            .cloned()
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("gate\tstatus\tmeasured\tthreshold\tevidence\n");
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_else(|| "-".into());
        for g in &self.gates {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\n",
                g.name,
                g.status,
                fmt(g.measured),
                fmt(g.threshold),
                g.evidence.join(",")
            ));
        }
        out
    }
}

/// Inputs for a full gate evaluation. Missing inputs yield skipped gates.
#[derive(Default)]
pub struct GateInputs<'a> {
    pub taxonomy: Option<&'a Taxonomy>,
    /// Run used for comprehensiveness.
    pub coverage_run: Option<&'a AnnotationRun>,
    pub repeat_runs: Vec<&'a AnnotationRun>,
    pub spot_check: Option<&'a SpotCheckTask>,
    /// Run used for conciseness.
    pub share_run: Option<&'a AnnotationRun>,
    pub bias: Option<(&'a IntentDistribution, &'a IntentDistribution)>,
}

/// Evaluates every gate whose inputs are present and persists the report.
pub fn evaluate_gates(
    ctx: Context<'_>,
    taxonomy: &Taxonomy,
    inputs: &GateInputs<'_>,
    thresholds: &Thresholds,
) -> Result<GateReport, GateError> {
    let missing = |what: &str| format!("no {what} supplied");
    let mut gates = Vec::with_capacity(6);
    gates.push(match inputs.coverage_run {
        Some(r) => gate_comprehensiveness(r, thresholds.tau_other)?,
        None => GateEntry::skipped(GateName::Comprehensiveness, missing("annotation run")),
    });
    gates.push(if inputs.repeat_runs.len() >= 2 {
        gate_consistency(&inputs.repeat_runs, thresholds.tau_kappa)?
    } else {
        GateEntry::skipped(GateName::Consistency, missing("repeated runs"))
    });
    gates.push(gate_clarity(inputs.taxonomy.unwrap_or(taxonomy)));
    gates.push(match inputs.spot_check {
        Some(t) => gate_accuracy(t, thresholds.tau_accuracy),
        None => GateEntry::skipped(GateName::Accuracy, missing("spot check")),
    });
    gates.push(match inputs.share_run.or(inputs.coverage_run) {
        Some(r) => gate_conciseness(r, taxonomy, thresholds.tau_min_share)?,
        None => GateEntry::skipped(GateName::Conciseness, missing("annotation run")),
    });
    gates.push(match inputs.bias {
        Some((a, b)) => bias_probe(a, b, thresholds.tau_tvd)?,
        None => GateEntry::skipped(GateName::Bias, missing("distribution pair")),
    });
    let report = GateReport {
        report_id: ctx.store.allocate_id("gate"),
        taxonomy: taxonomy.reference(),
        thresholds: *thresholds,
        gates,
        created_at: ctx.clock.now(),
    };
    ctx.store.put(ArtifactKind::GateReport, &report.key(), &report)?;
    Ok(report)
}
