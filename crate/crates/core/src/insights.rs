//! Intent distributions, per-intent modality shares and report export.
//!
//! Every table here is a deterministic function of persisted artifacts.
//! Shares are written with six decimals so exports are byte-stable.

use crate::agreement::{label_universe, AgreementReport, ConfusionMatrix};
use crate::annotation::AnnotationRun;
use crate::dataset::{Dataset, DatasetError, Modality};
use crate::gates::{GateReport, GateStatus};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum InsightError {
    #[error("annotation run {0} is not complete")]
    NotComplete(String),
    #[error("empty slice: no annotated records{}", .0.map(|m| format!(" with modality {m}")).unwrap_or_default())]
    EmptySlice(Option<Modality>),
    #[error("run {run_id} has no {modality} records")]
    MissingModality { run_id: String, modality: Modality },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("cannot write {path}: {source}")]
    Write {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionRow {
    pub label: String,
    pub count: usize,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntentDistribution {
    pub run_id: String,
    #[serde(default)]
    pub modality: Option<Modality>,
    pub n: usize,
    /// Full label universe in taxonomy order, Other last; zero rows included.
    pub rows: Vec<DistributionRow>,
}

impl IntentDistribution {
    /// Builds a distribution from raw labels, e.g. a confusion-matrix marginal.
    pub fn from_counts(run_id: impl Into<String>, counts: &[(String, usize)]) -> Result<Self, InsightError> {
        let n: usize = counts.iter().map(|(_, c)| c).sum();
        if n == 0 {
            return Err(InsightError::EmptySlice(None));
        }
        Ok(Self {
            run_id: run_id.into(),
            modality: None,
            n,
            rows: counts
                .iter()
                .map(|(label, count)| DistributionRow {
                    label: label.clone(),
                    count: *count,
                    share: *count as f64 / n as f64,
                })
                .collect(),
        })
    }

    pub fn share(&self, label: &str) -> Option<f64> {
        self.rows.iter().find(|r| r.label == label).map(|r| r.share)
    }

    pub fn count(&self, label: &str) -> Option<usize> {
        self.rows.iter().find(|r| r.label == label).map(|r| r.count)
    }

    pub fn labels(&self) -> Vec<&str> {
        self.rows.iter().map(|r| r.label.as_str()).collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label\tcount\tshare\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{}\t{:.6}\n", r.label, r.count, r.share));
        }
        out
    }
}

/// Label counts over a completed run, optionally restricted to one modality.
/// `labels` fixes the row order; observed labels outside it are appended.
pub fn distribution(
    run: &AnnotationRun,
    labels: &[String],
    filter: Option<(&Dataset, Modality)>,
) -> Result<IntentDistribution, InsightError> {
    if !run.is_complete() {
        return Err(InsightError::NotComplete(run.run_id.clone()));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut n = 0;
    for a in &run.annotations {
        if let Some((dataset, modality)) = filter {
            let record = dataset
                .get(&a.record_id)
                .ok_or_else(|| DatasetError::UnknownRecord(a.record_id.clone()))?;
            if record.modality != modality {
                continue;
            }
        }
        *counts.entry(a.label.as_str()).or_insert(0) += 1;
        n += 1;
    }
    if n == 0 {
        return Err(InsightError::EmptySlice(filter.map(|(_, m)| m)));
    }
    let universe = label_universe(counts.keys().copied(), Some(labels));
    Ok(IntentDistribution {
        run_id: run.run_id.clone(),
        modality: filter.map(|(_, m)| m),
        n,
        rows: universe
            .into_iter()
            .map(|label| {
                let count = counts.get(label.as_str()).copied().unwrap_or(0);
                DistributionRow {
                    share: count as f64 / n as f64,
                    label,
                    count,
                }
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityShare {
    pub label: String,
    pub search_count: usize,
    pub chat_count: usize,
    pub search_share: f64,
    pub chat_share: f64,
}

/// For each intent, the split of its records between search and chat.
/// Intents without records are omitted.
pub fn modality_share(
    run: &AnnotationRun,
    dataset: &Dataset,
    labels: &[String],
) -> Result<Vec<ModalityShare>, InsightError> {
    if !run.is_complete() {
        return Err(InsightError::NotComplete(run.run_id.clone()));
    }
    let mut counts: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    let (mut searches, mut chats) = (0, 0);
    for a in &run.annotations {
        let record = dataset
            .get(&a.record_id)
            .ok_or_else(|| DatasetError::UnknownRecord(a.record_id.clone()))?;
        let entry = counts.entry(a.label.as_str()).or_insert((0, 0));
        match record.modality {
            Modality::Search => {
                entry.0 += 1;
                searches += 1;
            }
            Modality::Chat => {
                entry.1 += 1;
                chats += 1;
            }
        }
    }
    for (count, modality) in [(searches, Modality::Search), (chats, Modality::Chat)] {
        if count == 0 {
            return Err(InsightError::MissingModality {
                run_id: run.run_id.clone(),
                modality,
            });
        }
    }
    Ok(label_universe(counts.keys().copied(), Some(labels))
        .into_iter()
        .filter_map(|label| {
            let (s, c) = counts.get(label.as_str()).copied()?;
            let total = (s + c) as f64;
            Some(ModalityShare {
                label,
                search_count: s,
                chat_count: c,
                search_share: s as f64 / total,
                chat_share: c as f64 / total,
            })
        })
        .collect())
}

pub fn modality_share_tsv(rows: &[ModalityShare]) -> String {
    let mut out = String::from("label\tsearch_count\tchat_count\tsearch_share\tchat_share\n");
    for r in rows {
        out.push_str(&format!(
            "{}\t{}\t{}\t{:.6}\t{:.6}\n",
            r.label, r.search_count, r.chat_count, r.search_share, r.chat_share
        ));
    }
    out
}

/// Everything `export_report` can write. Only the run and dataset are required.
pub struct ReportInputs<'a> {
    pub run: &'a AnnotationRun,
    pub dataset: &'a Dataset,
    pub labels: Vec<String>,
    pub confusions: Vec<(String, ConfusionMatrix)>,
    pub agreement: Vec<AgreementReport>,
    pub gates: Option<&'a GateReport>,
}

impl<'a> ReportInputs<'a> {
    pub fn new(run: &'a AnnotationRun, dataset: &'a Dataset, labels: Vec<String>) -> Self {
        Self {
            run,
            dataset,
            labels,
            confusions: Vec::new(),
            agreement: Vec::new(),
            gates: None,
        }
    }
}

fn write(dir: &Path, name: &str, body: &str, written: &mut Vec<PathBuf>) -> Result<(), InsightError> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(|source| InsightError::Write {
        path: path.display().to_string(),
        source,
    })?;
    written.push(path);
    Ok(())
}

fn safe_name(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Writes the report tables and `summary.md` into `dir`, returning the paths
/// in write order. The modality tables are skipped for single-modality runs.
pub fn export_report(dir: &Path, inputs: &ReportInputs<'_>) -> Result<Vec<PathBuf>, InsightError> {
    std::fs::create_dir_all(dir).map_err(|source| InsightError::Write {
        path: dir.display().to_string(),
        source,
    })?;
    let mut written = Vec::new();
    let overall = distribution(inputs.run, &inputs.labels, None)?;
    write(dir, "distribution.tsv", &overall.to_tsv(), &mut written)?;

    let mut by_modality = String::from("modality\tlabel\tcount\tshare\n");
    let mut per_modality = Vec::new();
    for m in [Modality::Search, Modality::Chat] {
        match distribution(inputs.run, &inputs.labels, Some((inputs.dataset, m))) {
            Ok(d) => {
                for r in &d.rows {
                    by_modality.push_str(&format!("{m}\t{}\t{}\t{:.6}\n", r.label, r.count, r.share));
                }
                per_modality.push(d);
            }
            Err(InsightError::EmptySlice(_)) => {}
            Err(e) => return Err(e),
        }
    }
    write(dir, "distribution_by_modality.tsv", &by_modality, &mut written)?;
    let shares = match modality_share(inputs.run, inputs.dataset, &inputs.labels) {
        Ok(rows) => {
            write(dir, "modality_share.tsv", &modality_share_tsv(&rows), &mut written)?;
            Some(rows)
        }
        Err(InsightError::MissingModality { .. }) => None,
        Err(e) => return Err(e),
    };
    for (name, m) in &inputs.confusions {
        write(dir, &format!("confusion_{}.tsv", safe_name(name)), &m.to_tsv(), &mut written)?;
    }
    if !inputs.agreement.is_empty() {
        let mut out = String::from("statistic\traters\tn\tvalue\tband\n");
        for r in &inputs.agreement {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.4}\t{}\n",
                r.statistic,
                r.raters.join(","),
                r.n,
                r.value,
                r.band
            ));
        }
        write(dir, "agreement.tsv", &out, &mut written)?;
    }
    if let Some(g) = inputs.gates {
        write(dir, "gates.tsv", &g.to_tsv(), &mut written)?;
    }

    let mut md = format!(
        "# Intent report\n\nRun `{}` on taxonomy `{}`: {} annotated records, {} failed to parse.\n\n",
        inputs.run.run_id,
        inputs.run.taxonomy,
        overall.n,
        inputs.run.failures.len()
    );
    md.push_str("## Distribution\n\n| label | count | share |\n|---|---:|---:|\n");
    for r in &overall.rows {
        md.push_str(&format!("| {} | {} | {:.4} |\n", r.label, r.count, r.share));
    }
    if let Some(rows) = &shares {
        md.push_str("\n## Modality share per intent\n\n| label | search | chat |\n|---|---:|---:|\n");
        for r in rows {
            md.push_str(&format!("| {} | {:.4} | {:.4} |\n", r.label, r.search_share, r.chat_share));
        }
    } else {
        let present: Vec<String> = per_modality.iter().filter_map(|d| d.modality.map(|m| m.to_string())).collect();
        md.push_str(&format!("\nModality share not computed: run covers only {}.\n", present.join(", ")));
    }
    if !inputs.agreement.is_empty() {
        md.push_str("\n## Agreement\n\n");
        for r in &inputs.agreement {
            md.push_str(&format!(
                "- {} over {} ({} items): {:.4}, {}\n",
                r.statistic,
                r.raters.join(", "),
                r.n,
                r.value,
                r.band
            ));
        }
    }
    md.push_str("\n## Quality gates\n\n");
    match inputs.gates {
        None => md.push_str("Gates: not evaluated.\n"),
        Some(g) => {
            for e in &g.gates {
                let value = match (e.measured, e.threshold) {
                    (Some(m), Some(t)) => format!(" (measured {m:.4}, threshold {t:.4})"),
                    _ => String::new(),
                };
                md.push_str(&format!("- {}: {}{}\n", e.name, e.status, value));
                if e.status == GateStatus::Skipped {
                    if let Some(n) = &e.note {
                        md.push_str(&format!("  - {n}\n"));
                    }
                }
                for f in &e.findings {
                    md.push_str(&format!("  - {f}\n"));
                }
            }
        }
    }
    write(dir, "summary.md", &md, &mut written)?;
    Ok(written)
}
