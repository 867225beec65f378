//! Taxonomy generation: single and bootstrapped runs, cross-run frequency
//! tables, consolidation, the clarity pass and two-level generation.
//!
//! Labels from different runs are aligned by canonical form, first against a
//! reference label set and then through the curated [`AliasTable`]. Anything
//! else stays an unresolved row of its own; nothing is merged fuzzily.
//!
//! Consolidation ranks aligned labels by total frequency. Ties go to the label
//! that appears in the earliest run (by position in the input), then to the
//! lexicographically smaller canonical form. A tie at the selection boundary
//! is written into the consolidated taxonomy's provenance notes.

use crate::annotation::{annotate_llm, freeze_taxonomy, AnnotationError, AnnotationSettings};
use crate::context::Context;
use crate::dataset::{Dataset, DatasetError, RecordId, SplitRole};
use crate::llm::{
    constraints_block, extract_json, parse_taxonomy_response, render_prompt, Criteria, Gateway, LlmError,
    MultilevelLimits, ParseFailure, ParseMode, PromptTemplate, Purpose, CONSTRAINTS_BLOCK, CRITERIA_BLOCK,
    DATA_BLOCK, NEGATIVE_EXAMPLES_FLAG, TAXONOMY_BLOCK,
};
use crate::store::{ArtifactKind, StoreError};
use crate::taxonomy::{
    apply_edit, canonicalize_label, path_display, resolve_alias, validate_taxonomy, AliasTable, Bounds, Category,
    Edit, EditError, Resolution, Taxonomy, TaxonomyRef, Violation, PATH_SEPARATOR,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, HashSet};
use thiserror::Error;

pub const RUN_PREFIX: &str = "gen";

pub fn run_key(run_id: &str) -> String {
    format!("generation/{run_id}")
}

#[derive(Debug, Error)]
pub enum GenerationError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Edit(#[from] EditError),
    #[error("at least one run is required")]
    NoRuns,
    #[error("all {} generation runs failed", .0.len())]
    AllRunsFailed(Vec<String>),
    #[error("no successful generation runs to tabulate")]
    NoSuccessfulRuns,
    #[error("only {found} distinct aligned labels, fewer than top_k = {wanted}")]
    InsufficientLabels { wanted: usize, found: usize },
    #[error("result violates taxonomy invariants: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error("generation run {run_id} failed: {reason}")]
    RunFailed { run_id: String, reason: String },
    #[error("clarity reply {request_id} could not be parsed: {reason}")]
    ClarityParse { request_id: String, reason: String },
    #[error("clarity reply {request_id} left categories without negative examples: {}", .uncovered.join(", "))]
    ClarityIncomplete { request_id: String, uncovered: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSettings {
    pub generate_template: PromptTemplate,
    pub multilevel_template: PromptTemplate,
    pub clarity_template: PromptTemplate,
    pub criteria: Criteria,
    pub bounds: Bounds,
    /// Whether prompts ask for negative examples.
    pub negative_examples: bool,
}

impl Default for GenerationSettings {
    fn default() -> Self {
        Self {
            generate_template: PromptTemplate::default_for(Purpose::GenerateTaxonomy),
            multilevel_template: PromptTemplate::default_for(Purpose::GenerateMultilevel),
            clarity_template: PromptTemplate::default_for(Purpose::ExpandClarity),
            criteria: Criteria::default(),
            bounds: Bounds::default(),
            negative_examples: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRun {
    pub run_id: String,
    pub provider: String,
    pub model: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub sample_ids: Vec<RecordId>,
    pub prompt_template: String,
    pub request_id: String,
    pub created_at: String,
    #[serde(default)]
    pub taxonomy: Option<Taxonomy>,
    #[serde(default)]
    pub parse_mode: Option<ParseMode>,
    #[serde(default)]
    pub failure: Option<ParseFailure>,
    #[serde(default)]
    pub provider_error: Option<String>,
}

impl GenerationRun {
    pub fn is_success(&self) -> bool {
        self.taxonomy.is_some()
    }

    pub fn key(&self) -> String {
        run_key(&self.run_id)
    }

    pub fn failure_reason(&self) -> Option<String> {
        if let Some(e) = &self.provider_error {
            return Some(e.clone());
        }
        self.failure.as_ref().map(|f| f.to_string())
    }
}

/// Renders records for the data block, one `[id] turn...` entry per record.
pub fn data_block(dataset: &Dataset, ids: &[RecordId]) -> Result<String, DatasetError> {
    let records = dataset.select(ids)?;
    Ok(records
        .iter()
        .map(|r| format!("[{}] {}", r.id, r.render().replace('\n', "\n    ")))
        .collect::<Vec<_>>()
        .join("\n"))
}

fn flag(b: bool) -> String {
    if b { "yes" } else { "no" }.to_string()
}

fn bindings(pairs: &[(&str, String)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Generates one taxonomy from the full train split.
pub fn generate_once(
    ctx: Context<'_>,
    gateway: &Gateway,
    dataset: &Dataset,
    settings: &GenerationSettings,
    seed: Option<u64>,
) -> Result<GenerationRun, GenerationError> {
    let ids = dataset.ids_in(SplitRole::Train)?;
    if ids.is_empty() {
        return Err(DatasetError::EmptyTrain.into());
    }
    generate_from(ctx, gateway, dataset, settings, &ids, seed)
}

/// Generates one taxonomy from the given records. The run is persisted
/// whether or not the reply parses; provider errors are recorded in it.
pub fn generate_from(
    ctx: Context<'_>,
    gateway: &Gateway,
    dataset: &Dataset,
    settings: &GenerationSettings,
    ids: &[RecordId],
    seed: Option<u64>,
) -> Result<GenerationRun, GenerationError> {
    let prompt = render_prompt(
        &settings.generate_template,
        &bindings(&[
            (DATA_BLOCK, data_block(dataset, ids)?),
            (CRITERIA_BLOCK, settings.criteria.block()),
            (CONSTRAINTS_BLOCK, constraints_block(&settings.bounds, None)),
            (NEGATIVE_EXAMPLES_FLAG, flag(settings.negative_examples)),
        ]),
    )?;
    let run_id = ctx.store.allocate_id(RUN_PREFIX);
    let mut run = GenerationRun {
        run_id: run_id.clone(),
        provider: gateway.provider_name().to_string(),
        model: gateway.model().to_string(),
        seed,
        sample_ids: ids.to_vec(),
        prompt_template: settings.generate_template.id.clone(),
        request_id: run_id.clone(),
        created_at: ctx.clock.now(),
        taxonomy: None,
        parse_mode: None,
        failure: None,
        provider_error: None,
    };
    let req = gateway.request(run_id.clone(), Purpose::GenerateTaxonomy, None, prompt);
    match gateway.complete(&req) {
        Ok(resp) => match parse_taxonomy_response(&resp.text, &run_id, &settings.bounds) {
            Ok((mut t, mode)) => {
                t.provenance.source_runs = vec![run_id.clone()];
                t.provenance.llm = Some(format!("{}/{}", run.provider, run.model));
                t.provenance.prompt_template = Some(run.prompt_template.clone());
                t.provenance.created_at = Some(run.created_at.clone());
                ctx.store.put(ArtifactKind::Taxonomy, &t.reference().store_key(), &t)?;
                run.taxonomy = Some(t);
                run.parse_mode = Some(mode);
            }
            Err(f) => run.failure = Some(f),
        },
        Err(e @ LlmError::Provider { .. }) => run.provider_error = Some(e.to_string()),
        Err(e) => return Err(e.into()),
    }
    ctx.store.put(ArtifactKind::GenerationRun, &run.key(), &run)?;
    if let Some(reason) = run.failure_reason() {
        tracing::warn!(run = %run_id, "generation failed: {reason}");
    }
    Ok(run)
}

/// `n_runs` generations, run `i` on a fresh bootstrap sample with seed
/// `base_seed + i`. Fails only when every run fails.
pub fn bootstrap_generate(
    ctx: Context<'_>,
    gateway: &Gateway,
    dataset: &Dataset,
    settings: &GenerationSettings,
    n_runs: usize,
    fraction: f64,
    base_seed: u64,
) -> Result<Vec<GenerationRun>, GenerationError> {
    if n_runs == 0 {
        return Err(GenerationError::NoRuns);
    }
    let mut runs = Vec::with_capacity(n_runs);
    for i in 0..n_runs {
        let seed = base_seed.wrapping_add(i as u64);
        let sample = dataset.bootstrap_sample(fraction, seed)?;
        runs.push(generate_from(ctx, gateway, dataset, settings, &sample, Some(seed))?);
    }
    if runs.iter().all(|r| !r.is_success()) {
        return Err(GenerationError::AllRunsFailed(runs.into_iter().map(|r| r.run_id).collect()));
    }
    Ok(runs)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyRow {
    pub label: String,
    pub canonical: String,
    pub resolved: bool,
    /// Provider → number of runs containing the label.
    pub counts: BTreeMap<String, usize>,
}

impl FrequencyRow {
    pub fn total(&self) -> usize {
        self.counts.values().sum()
    }

    pub fn count(&self, provider: &str) -> usize {
        self.counts.get(provider).copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    /// Sorted provider names.
    pub providers: Vec<String>,
    /// Successful runs per provider.
    pub runs_per_provider: BTreeMap<String, usize>,
    /// By descending total, then canonical label.
    pub rows: Vec<FrequencyRow>,
}

impl FrequencyTable {
    pub fn row(&self, label: &str) -> Option<&FrequencyRow> {
        let key = canonicalize_label(label);
        self.rows.iter().find(|r| r.canonical == key)
    }

    pub fn unresolved(&self) -> impl Iterator<Item = &FrequencyRow> {
        self.rows.iter().filter(|r| !r.resolved)
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("label\tresolved");
        for p in &self.providers {
            out.push('\t');
            out.push_str(p);
        }
        out.push_str("\ttotal\n");
        for r in &self.rows {
            out.push_str(&format!("{}\t{}", r.label, r.resolved));
            for p in &self.providers {
                out.push_str(&format!("\t{}", r.count(p)));
            }
            out.push_str(&format!("\t{}\n", r.total()));
        }
        out
    }
}

fn align(label: &str, aliases: &AliasTable, reference: &[String]) -> (String, String, bool) {
    match resolve_alias(label, aliases, reference) {
        Resolution::Resolved(l) => (canonicalize_label(&l), l, true),
        Resolution::Unresolved(c) => (c, label.trim().to_string(), false),
    }
}

/// Counts, per provider, how many successful runs contain each aligned
/// top-level label. The result does not depend on run order.
pub fn tabulate_frequencies(
    runs: &[GenerationRun],
    aliases: &AliasTable,
    reference: &[String],
) -> Result<FrequencyTable, GenerationError> {
    let mut rows: BTreeMap<String, FrequencyRow> = BTreeMap::new();
    let mut runs_per_provider: BTreeMap<String, usize> = BTreeMap::new();
    for run in runs {
        let Some(t) = &run.taxonomy else { continue };
        *runs_per_provider.entry(run.provider.clone()).or_insert(0) += 1;
        let mut seen = HashSet::new();
        for c in &t.categories {
            let (key, label, resolved) = align(&c.label, aliases, reference);
            if !seen.insert(key.clone()) {
                continue;
            }
            let row = rows.entry(key.clone()).or_insert_with(|| FrequencyRow {
                label: label.clone(),
                canonical: key,
                resolved,
                counts: BTreeMap::new(),
            });
            if !resolved && label < row.label {
                row.label = label;
            }
            *row.counts.entry(run.provider.clone()).or_insert(0) += 1;
        }
    }
    if runs_per_provider.is_empty() {
        return Err(GenerationError::NoSuccessfulRuns);
    }
    let mut rows: Vec<FrequencyRow> = rows.into_values().collect();
    rows.sort_by(|a, b| b.total().cmp(&a.total()).then_with(|| a.canonical.cmp(&b.canonical)));
    Ok(FrequencyTable {
        providers: runs_per_provider.keys().cloned().collect(),
        runs_per_provider,
        rows,
    })
}

fn push_unique(list: &mut Vec<String>, seen: &mut BTreeSet<String>, item: &str) {
    let item = item.trim();
    if !item.is_empty() && seen.insert(canonicalize_label(item)) {
        list.push(item.to_string());
    }
}

/// Builds one taxonomy from the `top_k` most frequent aligned labels,
/// pooling descriptions and examples from every run that produced them.
pub fn consolidate(
    runs: &[GenerationRun],
    aliases: &AliasTable,
    reference: &[String],
    top_k: usize,
    bounds: &Bounds,
    id: &str,
) -> Result<Taxonomy, GenerationError> {
    let table = tabulate_frequencies(runs, aliases, reference)?;
    let mut first_run: BTreeMap<&str, usize> = BTreeMap::new();
    let mut aligned: Vec<Vec<(String, &Category)>> = Vec::new();
    for run in runs {
        let cats = run
            .taxonomy
            .as_ref()
            .map(|t| {
                t.categories
                    .iter()
                    .map(|c| (align(&c.label, aliases, reference).0, c))
                    .collect()
            })
            .unwrap_or_default();
        aligned.push(cats);
    }
    for (i, cats) in aligned.iter().enumerate() {
        for (key, _) in cats {
            first_run.entry(key.as_str()).or_insert(i);
        }
    }
    let mut ranked: Vec<&FrequencyRow> = table.rows.iter().collect();
    ranked.sort_by_key(|r| (std::cmp::Reverse(r.total()), first_run[r.canonical.as_str()], r.canonical.clone()));
    if ranked.len() < top_k {
        return Err(GenerationError::InsufficientLabels {
            wanted: top_k,
            found: ranked.len(),
        });
    }
    let mut notes = Vec::new();
    if top_k > 0 && ranked.len() > top_k && ranked[top_k - 1].total() == ranked[top_k].total() {
        let (won, lost) = (ranked[top_k - 1], ranked[top_k]);
        let run_of = |r: &FrequencyRow| &runs[first_run[r.canonical.as_str()]].run_id;
        notes.push(format!(
            "tie at count {} for slot {top_k}: kept {:?} (first in {}) over {:?} (first in {})",
            won.total(),
            won.label,
            run_of(won),
            lost.label,
            run_of(lost)
        ));
    }
    let selected = &ranked[..top_k];
    let mut contributing = BTreeSet::new();
    let mut categories = Vec::with_capacity(top_k);
    for row in selected {
        let mut cat = Category::new(row.label.clone(), String::new());
        let (mut descs, mut seen_d) = (Vec::new(), BTreeSet::new());
        let (mut seen_p, mut seen_n) = (BTreeSet::new(), BTreeSet::new());
        for (i, cats) in aligned.iter().enumerate() {
            for (key, c) in cats {
                if key != &row.canonical {
                    continue;
                }
                contributing.insert(i);
                push_unique(&mut descs, &mut seen_d, &c.description);
                for e in &c.positive_examples {
                    push_unique(&mut cat.positive_examples, &mut seen_p, e);
                }
                for e in &c.negative_examples {
                    push_unique(&mut cat.negative_examples, &mut seen_n, e);
                }
            }
        }
        cat.description = descs.join(" ");
        categories.push(cat);
    }
    let mut t = Taxonomy::new(id, categories);
    t.provenance.source_runs = contributing.iter().map(|&i| runs[i].run_id.clone()).collect();
    let providers: BTreeSet<String> = contributing
        .iter()
        .map(|&i| format!("{}/{}", runs[i].provider, runs[i].model))
        .collect();
    t.provenance.llm = Some(providers.into_iter().collect::<Vec<_>>().join(","));
    t.provenance.notes = notes;
    let violations = validate_taxonomy(&t, bounds);
    if !violations.is_empty() {
        return Err(GenerationError::Invalid(violations));
    }
    Ok(t)
}

#[derive(Debug, Deserialize)]
struct ClarityPatch {
    label: String,
    #[serde(default)]
    description: String,
    #[serde(default)]
    negative_examples: Vec<String>,
    #[serde(default)]
    children: Vec<ClarityPatch>,
}

#[derive(Debug, Deserialize)]
struct ClarityDoc {
    categories: Vec<ClarityPatch>,
}

fn flatten_patches<'a>(prefix: &[String], patches: &'a [ClarityPatch], out: &mut Vec<(Vec<String>, &'a ClarityPatch)>) {
    for p in patches {
        let mut path = prefix.to_vec();
        path.push(p.label.clone());
        out.push((path.clone(), p));
        flatten_patches(&path, &p.children, out);
    }
}

fn path_key(path: &[String]) -> Vec<String> {
    path.iter().map(|p| canonicalize_label(p)).collect()
}

/// Asks the model for expanded descriptions and negative examples and merges
/// them into a new version. All-or-nothing: if any category would still lack
/// negatives, the taxonomy is left unchanged.
pub fn expand_clarity(
    ctx: Context<'_>,
    gateway: &Gateway,
    t: &Taxonomy,
    settings: &GenerationSettings,
) -> Result<Taxonomy, GenerationError> {
    let violations = validate_taxonomy(t, &settings.bounds);
    if !violations.is_empty() {
        return Err(GenerationError::Invalid(violations));
    }
    let prompt = render_prompt(
        &settings.clarity_template,
        &bindings(&[
            (TAXONOMY_BLOCK, t.prompt_block()),
            (CRITERIA_BLOCK, settings.criteria.block()),
            (NEGATIVE_EXAMPLES_FLAG, flag(true)),
        ]),
    )?;
    let request_id = ctx.store.allocate_id("clr");
    let req = gateway.request(request_id.clone(), Purpose::ExpandClarity, None, prompt);
    let resp = gateway.complete(&req)?;
    let doc: ClarityDoc = extract_json(&resp.text).ok_or_else(|| GenerationError::ClarityParse {
        request_id: request_id.clone(),
        reason: "no JSON document with a \"categories\" list".into(),
    })?;
    let mut patches = Vec::new();
    flatten_patches(&[], &doc.categories, &mut patches);

    let mut next = t.clone();
    let mut uncovered = Vec::new();
    let paths: Vec<Vec<String>> = t.walk().into_iter().map(|(p, _)| p).collect();
    for path in &paths {
        let key = path_key(path);
        let leaf = key.last().cloned().unwrap_or_default();
        let exact = patches.iter().find(|(p, _)| path_key(p) == key);
        let by_leaf: Vec<_> = patches
            .iter()
            .filter(|(p, _)| path_key(p).last() == Some(&leaf))
            .collect();
        let patch = exact.or(if by_leaf.len() == 1 { Some(by_leaf[0]) } else { None }).map(|(_, p)| *p);
        let cat = category_mut(&mut next.categories, path).expect("path from walk");
        if let Some(p) = patch {
            if !p.description.trim().is_empty() {
                cat.description = p.description.trim().to_string();
            }
            let mut seen: BTreeSet<String> = BTreeSet::new();
            let mut merged = Vec::new();
            for e in cat.negative_examples.iter().chain(&p.negative_examples) {
                push_unique(&mut merged, &mut seen, e);
            }
            cat.negative_examples = merged;
        }
        if cat.negative_examples.is_empty() {
            uncovered.push(path_display(path));
        }
    }
    if !uncovered.is_empty() {
        return Err(GenerationError::ClarityIncomplete { request_id, uncovered });
    }
    next.version = t.version + 1;
    next.provenance.notes.push(format!("clarity pass {request_id}"));
    let violations = validate_taxonomy(&next, &settings.bounds);
    if !violations.is_empty() {
        return Err(GenerationError::Invalid(violations));
    }
    ctx.store.put(ArtifactKind::Taxonomy, &next.reference().store_key(), &next)?;
    Ok(next)
}

fn category_mut<'a>(cats: &'a mut [Category], path: &[String]) -> Option<&'a mut Category> {
    let (first, rest) = path.split_first()?;
    let key = canonicalize_label(first);
    let c = cats.iter_mut().find(|c| canonicalize_label(&c.label) == key)?;
    if rest.is_empty() {
        Some(c)
    } else {
        category_mut(&mut c.children, rest)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultilevelSettings {
    pub max_children: usize,
    pub min_support: usize,
    /// Level-1 categories to hold constant, if any.
    #[serde(default)]
    pub frozen: Option<Taxonomy>,
}

impl Default for MultilevelSettings {
    fn default() -> Self {
        Self {
            max_children: 5,
            min_support: 3,
            frozen: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Support {
    pub path: Vec<String>,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruningLog {
    pub generation_run: String,
    pub trial_run: String,
    pub before: TaxonomyRef,
    pub after: TaxonomyRef,
    pub min_support: usize,
    /// Support of every level-2 category under the trial annotation.
    pub supports: Vec<Support>,
    pub pruned: Vec<Support>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultilevelOutcome {
    pub run: GenerationRun,
    pub taxonomy: Taxonomy,
    pub log: PruningLog,
}

fn hold_level_one(t: &mut Taxonomy, frozen: &Taxonomy) -> Result<(), String> {
    let want: BTreeSet<String> = frozen.categories.iter().map(|c| canonicalize_label(&c.label)).collect();
    let got: BTreeSet<String> = t.categories.iter().map(|c| canonicalize_label(&c.label)).collect();
    if want != got {
        return Err(format!(
            "level-1 categories changed: expected {:?}, got {:?}",
            frozen.labels(),
            t.labels()
        ));
    }
    for c in &mut t.categories {
        let key = canonicalize_label(&c.label);
        let f = frozen
            .categories
            .iter()
            .find(|f| canonicalize_label(&f.label) == key)
            .expect("sets are equal");
        c.label = f.label.clone();
        c.description = f.description.clone();
        c.positive_examples = f.positive_examples.clone();
        c.negative_examples = f.negative_examples.clone();
    }
    Ok(())
}

/// Generates a two-level taxonomy, then labels the train split with it and
/// prunes every subcategory supported by fewer than `min_support` records.
/// Trial annotation requests use scripted-provider keys `trial/{record_id}`.
pub fn generate_multilevel(
    ctx: Context<'_>,
    gateway: &Gateway,
    dataset: &Dataset,
    settings: &GenerationSettings,
    ml: &MultilevelSettings,
    annotation: &AnnotationSettings,
) -> Result<MultilevelOutcome, GenerationError> {
    let ids = dataset.ids_in(SplitRole::Train)?;
    if ids.is_empty() {
        return Err(DatasetError::EmptyTrain.into());
    }
    let bounds = Bounds {
        max_children: ml.max_children,
        ..settings.bounds
    };
    let limits = MultilevelLimits {
        max_children: ml.max_children,
        min_support: ml.min_support,
    };
    let frozen_block = ml
        .frozen
        .as_ref()
        .map(|f| f.prompt_block())
        .unwrap_or_else(|| "(none)".to_string());
    let prompt = render_prompt(
        &settings.multilevel_template,
        &bindings(&[
            (DATA_BLOCK, data_block(dataset, &ids)?),
            (CRITERIA_BLOCK, settings.criteria.block()),
            (CONSTRAINTS_BLOCK, constraints_block(&bounds, Some(limits))),
            (NEGATIVE_EXAMPLES_FLAG, flag(settings.negative_examples)),
            (TAXONOMY_BLOCK, frozen_block),
        ]),
    )?;
    let run_id = ctx.store.allocate_id(RUN_PREFIX);
    let mut run = GenerationRun {
        run_id: run_id.clone(),
        provider: gateway.provider_name().to_string(),
        model: gateway.model().to_string(),
        seed: None,
        sample_ids: ids.clone(),
        prompt_template: settings.multilevel_template.id.clone(),
        request_id: run_id.clone(),
        created_at: ctx.clock.now(),
        taxonomy: None,
        parse_mode: None,
        failure: None,
        provider_error: None,
    };
    let req = gateway.request(run_id.clone(), Purpose::GenerateMultilevel, None, prompt);
    match gateway.complete(&req) {
        Ok(resp) => match parse_taxonomy_response(&resp.text, &run_id, &bounds) {
            Ok((mut t, mode)) => {
                let checked = match &ml.frozen {
                    Some(f) => hold_level_one(&mut t, f),
                    None => Ok(()),
                }
                .and_then(|_| {
                    if t.depth == 2 {
                        Ok(())
                    } else {
                        Err("reply has no subcategories".to_string())
                    }
                });
                match checked {
                    Ok(()) => {
                        t.provenance.source_runs = vec![run_id.clone()];
                        t.provenance.llm = Some(format!("{}/{}", run.provider, run.model));
                        t.provenance.prompt_template = Some(run.prompt_template.clone());
                        t.provenance.created_at = Some(run.created_at.clone());
                        run.taxonomy = Some(t);
                        run.parse_mode = Some(mode);
                    }
                    Err(reason) => {
                        run.failure = Some(ParseFailure {
                            raw: resp.text.clone(),
                            mode: Some(mode),
                            reason,
                            violations: Vec::new(),
                            recovered: Some(t),
                        })
                    }
                }
            }
            Err(f) => run.failure = Some(f),
        },
        Err(e @ LlmError::Provider { .. }) => run.provider_error = Some(e.to_string()),
        Err(e) => return Err(e.into()),
    }
    ctx.store.put(ArtifactKind::GenerationRun, &run.key(), &run)?;
    let Some(taxonomy) = run.taxonomy.clone() else {
        return Err(GenerationError::RunFailed {
            run_id,
            reason: run.failure_reason().unwrap_or_default(),
        });
    };
    freeze_taxonomy(ctx.store, &taxonomy)?;

    let trial_settings = AnnotationSettings {
        key_prefix: "trial/".to_string(),
        ..annotation.clone()
    };
    let trial = annotate_llm(ctx, gateway, dataset, &ids, &taxonomy, &trial_settings)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for a in &trial.annotations {
        *counts.entry(a.label.as_str()).or_insert(0) += 1;
    }
    let mut supports = Vec::new();
    for parent in &taxonomy.categories {
        for child in &parent.children {
            let label = format!("{}{}{}", parent.label, PATH_SEPARATOR, child.label);
            supports.push(Support {
                path: vec![parent.label.clone(), child.label.clone()],
                records: counts.get(label.as_str()).copied().unwrap_or(0),
            });
        }
    }
    let pruned: Vec<Support> = supports.iter().filter(|s| s.records < ml.min_support).cloned().collect();
    let mut result = taxonomy.clone();
    for s in &pruned {
        result = apply_edit(&result, &Edit::RemoveCategory { path: s.path.clone() }, &bounds)?;
    }
    if result.categories.iter().all(|c| c.children.is_empty()) {
        result.depth = 1;
    }
    if !pruned.is_empty() {
        result.provenance.notes.push(format!(
            "pruned {} subcategories below support {} (trial run {})",
            pruned.len(),
            ml.min_support,
            trial.run_id
        ));
        ctx.store.put(ArtifactKind::Taxonomy, &result.reference().store_key(), &result)?;
    }
    let log = PruningLog {
        generation_run: run_id.clone(),
        trial_run: trial.run_id.clone(),
        before: taxonomy.reference(),
        after: result.reference(),
        min_support: ml.min_support,
        supports,
        pruned,
    };
    ctx.store.put(ArtifactKind::PruningLog, &format!("pruning/{run_id}"), &log)?;
    Ok(MultilevelOutcome {
        run,
        taxonomy: result,
        log,
    })
}
