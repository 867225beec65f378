//! Inter-rater agreement: confusion matrices, Cohen's and Fleiss' kappa.
//!
//! Both statistics are computed from integer counts and only divided once at
//! the end, so results do not depend on summation order.
//!
//! When chance agreement is 1 (every rater used one and the same label), the
//! kappa ratio is 0/0. Such data is reported as κ = 1 if observed agreement is
//! also perfect, and as a [`AgreementError::DegenerateMarginals`] error
//! otherwise.

use crate::annotation::{check_aligned, AnnotationError, AnnotationRun};
use crate::dataset::RecordId;
use crate::taxonomy::OTHER;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("label vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("label vectors are not aligned at position {index}: {a:?} vs {b:?}")]
    Unaligned { index: usize, a: String, b: String },
    #[error("no items to compare")]
    Empty,
    #[error("item {0} has a different number of ratings than the first item")]
    Ragged(usize),
    #[error("need at least 2 raters per item, got {0}")]
    TooFewRaters(usize),
    #[error("degenerate marginals: chance agreement is 1 but observed agreement is {observed}")]
    DegenerateMarginals { observed: f64 },
    #[error("kappa {0} is outside [-1, 1]")]
    OutOfRange(f64),
    #[error(transparent)]
    Runs(#[from] AnnotationError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    /// Rows are rater A, columns rater B.
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

/// Orders the label universe: `order` first (as given), then any other
/// observed labels sorted, with `Other` always present and last.
pub fn label_universe<'a>(observed: impl IntoIterator<Item = &'a str>, order: Option<&[String]>) -> Vec<String> {
    let observed: BTreeSet<&str> = observed.into_iter().collect();
    let mut labels: Vec<String> = Vec::new();
    if let Some(order) = order {
        for l in order {
            if l != OTHER && !labels.contains(l) {
                labels.push(l.clone());
            }
        }
    }
    for l in observed {
        if l != OTHER && !labels.iter().any(|x| x == l) {
            labels.push(l.to_string());
        }
    }
    labels.push(OTHER.to_string());
    labels
}

impl ConfusionMatrix {
    pub fn from_counts(labels: Vec<String>, counts: Vec<Vec<u64>>) -> Self {
        assert_eq!(labels.len(), counts.len(), "row count must match labels");
        assert!(counts.iter().all(|r| r.len() == labels.len()), "matrix must be square");
        let n = counts.iter().flatten().sum();
        Self { labels, counts, n }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn cell(&self, a: &str, b: &str) -> u64 {
        match (self.index_of(a), self.index_of(b)) {
            (Some(i), Some(j)) => self.counts[i][j],
            _ => 0,
        }
    }

    pub fn trace(&self) -> u64 {
        (0..self.size()).map(|i| self.counts[i][i]).sum()
    }

    pub fn diagonal(&self) -> Vec<u64> {
        (0..self.size()).map(|i| self.counts[i][i]).collect()
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn col_sums(&self) -> Vec<u64> {
        (0..self.size()).map(|j| self.counts.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn off_diagonal(&self) -> u64 {
        self.n - self.trace()
    }

    pub fn transpose(&self) -> Self {
        let k = self.size();
        let counts = (0..k).map(|i| (0..k).map(|j| self.counts[j][i]).collect()).collect();
        Self {
            labels: self.labels.clone(),
            counts,
            n: self.n,
        }
    }

    pub fn scaled(&self, c: u64) -> Self {
        Self {
            labels: self.labels.clone(),
            counts: self.counts.iter().map(|r| r.iter().map(|x| x * c).collect()).collect(),
            n: self.n * c,
        }
    }

    /// Tab-separated grid with a header row of column labels and a leading
    /// label column.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rater_a\\rater_b");
        for l in &self.labels {
            out.push('\t');
            out.push_str(l);
        }
        out.push('\n');
        for (l, row) in self.labels.iter().zip(&self.counts) {
            out.push_str(l);
            for c in row {
                out.push_str(&format!("\t{c}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Cross-tabulates two aligned label vectors. Ids must match position by
/// position.
pub fn build_confusion(
    a: &[(RecordId, String)],
    b: &[(RecordId, String)],
    order: Option<&[String]>,
) -> Result<ConfusionMatrix, AgreementError> {
    if a.len() != b.len() {
        return Err(AgreementError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(AgreementError::Empty);
    }
    for (index, ((ia, _), (ib, _))) in a.iter().zip(b).enumerate() {
        if ia != ib {
            return Err(AgreementError::Unaligned {
                index,
                a: ia.clone(),
                b: ib.clone(),
            });
        }
    }
    let labels = label_universe(a.iter().chain(b).map(|(_, l)| l.as_str()), order);
    let k = labels.len();
    let mut counts = vec![vec![0u64; k]; k];
    let pos = |l: &str| labels.iter().position(|x| x == l).expect("label in universe");
    for ((_, la), (_, lb)) in a.iter().zip(b) {
        counts[pos(la)][pos(lb)] += 1;
    }
    Ok(ConfusionMatrix::from_counts(labels, counts))
}

/// Aligns two complete runs on their shared slice, dropping records that
/// either run failed to label.
pub fn confusion_for_runs(
    a: &AnnotationRun,
    b: &AnnotationRun,
    order: Option<&[String]>,
) -> Result<ConfusionMatrix, AgreementError> {
    check_aligned(&[a, b])?;
    let la = a.labels();
    let lb = b.labels();
    let mut va = Vec::new();
    let mut vb = Vec::new();
    for id in &a.slice {
        if let (Some(x), Some(y)) = (la.get(id.as_str()), lb.get(id.as_str())) {
            va.push((id.clone(), x.to_string()));
            vb.push((id.clone(), y.to_string()));
        }
    }
    build_confusion(&va, &vb, order)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Band {
    Poor,
    Slight,
    Fair,
    Moderate,
    Substantial,
    AlmostPerfect,
}

impl fmt::Display for Band {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Band::Poor => "poor",
            Band::Slight => "slight",
            Band::Fair => "fair",
            Band::Moderate => "moderate",
            Band::Substantial => "substantial",
            Band::AlmostPerfect => "almost perfect",
        })
    }
}

/// Landis-Koch band; upper bounds are inclusive.
pub fn interpret(value: f64) -> Result<Band, AgreementError> {
    const EPS: f64 = 1e-12;
    if !(-1.0 - EPS..=1.0 + EPS).contains(&value) || value.is_nan() {
        return Err(AgreementError::OutOfRange(value));
    }
    Ok(if value <= 0.0 {
        Band::Poor
    } else if value <= 0.2 {
        Band::Slight
    } else if value <= 0.4 {
        Band::Fair
    } else if value <= 0.6 {
        Band::Moderate
    } else if value <= 0.8 {
        Band::Substantial
    } else {
        Band::AlmostPerfect
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Cohen,
    Fleiss,
    Raw,
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Statistic::Cohen => "cohen_kappa",
            Statistic::Fleiss => "fleiss_kappa",
            Statistic::Raw => "observed_agreement",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub statistic: Statistic,
    pub value: f64,
    pub n: u64,
    pub raters: Vec<String>,
    pub band: Band,
    pub observed: f64,
    pub expected: f64,
}

fn ratio(num: i128, den: i128) -> f64 {
    num as f64 / den as f64
}

/// Observed agreement `trace / n`.
pub fn observed_agreement(m: &ConfusionMatrix) -> Result<AgreementReport, AgreementError> {
    if m.n == 0 {
        return Err(AgreementError::Empty);
    }
    let value = ratio(m.trace() as i128, m.n as i128);
    Ok(AgreementReport {
        statistic: Statistic::Raw,
        value,
        n: m.n,
        raters: Vec::new(),
        band: interpret(value)?,
        observed: value,
        expected: 0.0,
    })
}

/// κ = (p_o − p_e) / (1 − p_e), evaluated as
/// (n·trace − Σ r_k c_k) / (n² − Σ r_k c_k).
pub fn cohen_kappa(m: &ConfusionMatrix) -> Result<AgreementReport, AgreementError> {
    if m.n == 0 {
        return Err(AgreementError::Empty);
    }
    let n = m.n as i128;
    let trace = m.trace() as i128;
    let chance: i128 = m
        .row_sums()
        .iter()
        .zip(m.col_sums())
        .map(|(&r, c)| r as i128 * c as i128)
        .sum();
    let observed = ratio(trace, n);
    let expected = ratio(chance, n * n);
    let den = n * n - chance;
    let value = if den == 0 {
        if trace == n {
            1.0
        } else {
            return Err(AgreementError::DegenerateMarginals { observed });
        }
    } else {
        ratio(n * trace - chance, den)
    };
    Ok(AgreementReport {
        statistic: Statistic::Cohen,
        value,
        n: m.n,
        raters: Vec::new(),
        band: interpret(value)?,
        observed,
        expected,
    })
}

/// Fleiss' kappa over an items × raters grid of labels.
pub fn fleiss_kappa<S: AsRef<str>>(grid: &[Vec<S>]) -> Result<AgreementReport, AgreementError> {
    let first = grid.first().ok_or(AgreementError::Empty)?;
    let r = first.len();
    if r < 2 {
        return Err(AgreementError::TooFewRaters(r));
    }
    let mut totals: BTreeMap<&str, i128> = BTreeMap::new();
    // Σ_i Σ_j n_ij²
    let mut sum_sq: i128 = 0;
    for (i, item) in grid.iter().enumerate() {
        if item.len() != r {
            return Err(AgreementError::Ragged(i));
        }
        let mut counts: BTreeMap<&str, i128> = BTreeMap::new();
        for l in item {
            *counts.entry(l.as_ref()).or_insert(0) += 1;
        }
        for (l, c) in counts {
            sum_sq += c * c;
            *totals.entry(l).or_insert(0) += c;
        }
    }
    let n_items = grid.len() as i128;
    let r = r as i128;
    // P̄ = a / d1, P̄_e = t2 / d2
    let a = sum_sq - n_items * r;
    let d1 = n_items * r * (r - 1);
    let t2: i128 = totals.values().map(|t| t * t).sum();
    let d2 = (n_items * r) * (n_items * r);
    let observed = ratio(a, d1);
    let expected = ratio(t2, d2);
    let value = if t2 == d2 {
        if a == d1 {
            1.0
        } else {
            return Err(AgreementError::DegenerateMarginals { observed });
        }
    } else {
        ratio(a * d2 - t2 * d1, d1 * (d2 - t2))
    };
    Ok(AgreementReport {
        statistic: Statistic::Fleiss,
        value,
        n: grid.len() as u64,
        raters: Vec::new(),
        band: interpret(value)?,
        observed,
        expected,
    })
}

/// Items × raters grid from aligned runs, keeping records every run labelled.
pub fn rating_grid(runs: &[&AnnotationRun]) -> Result<Vec<Vec<String>>, AgreementError> {
    check_aligned(runs)?;
    let maps: Vec<_> = runs.iter().map(|r| r.labels()).collect();
    let Some(first) = runs.first() else {
        return Err(AgreementError::Empty);
    };
    Ok(first
        .slice
        .iter()
        .filter_map(|id| {
            maps.iter()
                .map(|m| m.get(id.as_str()).map(|l| l.to_string()))
                .collect::<Option<Vec<_>>>()
        })
        .collect())
}

pub fn fleiss_for_runs(runs: &[&AnnotationRun]) -> Result<AgreementReport, AgreementError> {
    if runs.len() < 2 {
        return Err(AgreementError::TooFewRaters(runs.len()));
    }
    let grid = rating_grid(runs)?;
    let mut report = fleiss_kappa(&grid)?;
    report.raters = runs.iter().map(|r| r.run_id.clone()).collect();
    Ok(report)
}

pub fn cohen_for_runs(a: &AnnotationRun, b: &AnnotationRun) -> Result<(ConfusionMatrix, AgreementReport), AgreementError> {
    let m = confusion_for_runs(a, b, None)?;
    let mut report = cohen_kappa(&m)?;
    report.raters = vec![a.run_id.clone(), b.run_id.clone()];
    Ok((m, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairCell {
    pub row: String,
    pub col: String,
    pub kappa: f64,
    pub band: Band,
    pub n: u64,
}

/// Cohen's kappa for every unordered pair, laid out lower-triangular: cell
/// `(i, j)` with `j < i` compares rater `i` with rater `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTable {
    pub raters: Vec<String>,
    pub cells: Vec<PairCell>,
}

impl PairwiseTable {
    pub fn get(&self, a: &str, b: &str) -> Option<&PairCell> {
        self.cells
            .iter()
            .find(|c| (c.row == a && c.col == b) || (c.row == b && c.col == a))
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("rater");
        for r in &self.raters {
            out.push('\t');
            out.push_str(r);
        }
        out.push('\n');
        for (i, row) in self.raters.iter().enumerate() {
            out.push_str(row);
            for (j, col) in self.raters.iter().enumerate() {
                out.push('\t');
                if j < i {
                    let c = self.get(row, col).expect("pair computed");
                    out.push_str(&format!("{:.4} ({})", c.kappa, c.band));
                } else {
                    out.push_str("--");
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn pairwise_matrix(runs: &[&AnnotationRun]) -> Result<PairwiseTable, AgreementError> {
    if runs.len() < 2 {
        return Err(AgreementError::TooFewRaters(runs.len()));
    }
    check_aligned(runs)?;
    let names: Vec<String> = runs.iter().map(|r| r.run_id.clone()).collect();
    let unique: HashSet<&String> = names.iter().collect();
    if unique.len() != names.len() {
        return Err(AnnotationError::Mismatch("duplicate run ids".into()).into());
    }
    let mut cells = Vec::new();
    for i in 1..runs.len() {
        for j in 0..i {
            let (_, rep) = cohen_for_runs(runs[i], runs[j])?;
            cells.push(PairCell {
                row: names[i].clone(),
                col: names[j].clone(),
                kappa: rep.value,
                band: rep.band,
                n: rep.n,
            });
        }
    }
    Ok(PairwiseTable { raters: names, cells })
}

/// A report bundled with the matrix it came from, for export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementDocument {
    pub report: AgreementReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<ConfusionMatrix>,
}

impl AgreementDocument {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("agreement document serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(labels: &[&str]) -> Vec<(RecordId, String)> {
        labels
            .iter()
            .enumerate()
            .map(|(i, l)| (format!("r{i}"), l.to_string()))
            .collect()
    }

    #[test]
    fn diagonal_for_identical_raters() {
        let m = build_confusion(&v(&["IR", "LR"]), &v(&["IR", "LR"]), None).unwrap();
        assert_eq!(m.labels, ["IR", "LR", "Other"]);
        assert_eq!(m.diagonal(), [1, 1, 0]);
        assert_eq!(m.off_diagonal(), 0);
        assert_eq!(cohen_kappa(&m).unwrap().value, 1.0);
    }

    #[test]
    fn swap_is_transpose() {
        let a = v(&["IR", "LR", "IR", "CR"]);
        let b = v(&["LR", "LR", "IR", "Other"]);
        let ab = build_confusion(&a, &b, None).unwrap();
        let ba = build_confusion(&b, &a, None).unwrap();
        assert_eq!(ab.transpose(), ba);
    }

    #[test]
    fn alignment_errors() {
        assert!(matches!(
            build_confusion(&v(&["IR"]), &v(&["IR", "LR"]), None),
            Err(AgreementError::LengthMismatch(1, 2))
        ));
        let b = vec![("x".to_string(), "IR".to_string())];
        assert!(matches!(
            build_confusion(&v(&["IR"]), &b, None),
            Err(AgreementError::Unaligned { index: 0, .. })
        ));
        assert!(matches!(build_confusion(&[], &[], None), Err(AgreementError::Empty)));
    }

    #[test]
    fn fleiss_two_by_two_opposed() {
        let rep = fleiss_kappa(&[vec!["A", "B"], vec!["B", "A"]]).unwrap();
        assert_eq!(rep.observed, 0.0);
        assert_eq!(rep.expected, 0.5);
        assert_eq!(rep.value, -1.0);
    }

    #[test]
    fn fleiss_unanimous_items() {
        let rep = fleiss_kappa(&[vec!["A"; 3], vec!["B"; 3], vec!["C"; 3]]).unwrap();
        assert_eq!(rep.value, 1.0);
    }

    #[test]
    fn fleiss_errors() {
        assert!(matches!(fleiss_kappa(&[vec!["A", "B"], vec!["A"]]), Err(AgreementError::Ragged(1))));
        assert!(matches!(fleiss_kappa(&[vec!["A"]]), Err(AgreementError::TooFewRaters(1))));
        assert!(matches!(fleiss_kappa::<&str>(&[]), Err(AgreementError::Empty)));
    }

    #[test]
    fn degenerate_marginals() {
        let m = build_confusion(&v(&["A", "A"]), &v(&["A", "A"]), None).unwrap();
        assert_eq!(cohen_kappa(&m).unwrap().value, 1.0);
        assert_eq!(fleiss_kappa(&[vec!["A", "A"], vec!["A", "A"]]).unwrap().value, 1.0);
    }

    #[test]
    fn bands() {
        assert_eq!(interpret(0.7620).unwrap(), Band::Substantial);
        assert_eq!(interpret(0.8516).unwrap(), Band::AlmostPerfect);
        assert_eq!(interpret(0.5732).unwrap(), Band::Moderate);
        assert_eq!(interpret(0.0).unwrap(), Band::Poor);
        assert_eq!(interpret(0.2).unwrap(), Band::Slight);
        assert_eq!(interpret(0.4).unwrap(), Band::Fair);
        assert_eq!(interpret(1.0).unwrap(), Band::AlmostPerfect);
        assert_eq!(interpret(-1.0).unwrap(), Band::Poor);
        assert!(interpret(1.5).is_err());
        assert!(interpret(f64::NAN).is_err());
        assert_eq!(Band::AlmostPerfect.to_string(), "almost perfect");
    }

    #[test]
    fn explicit_order_keeps_absent_labels() {
        let order: Vec<String> = ["IR", "PS", "LR"].iter().map(|s| s.to_string()).collect();
        let m = build_confusion(&v(&["LR"]), &v(&["IR"]), Some(&order)).unwrap();
        assert_eq!(m.labels, ["IR", "PS", "LR", "Other"]);
        assert_eq!(m.cell("LR", "IR"), 1);
        assert!(m.to_tsv().starts_with("rater_a\\rater_b\tIR\tPS\tLR\tOther\nIR\t0\t0\t0\t0\n"));
    }
}
