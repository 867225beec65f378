//! Subcommand definitions and their handlers. Results go to stdout as
//! tab-separated text or JSON; progress and diagnostics go to stderr.

use crate::workspace::{require_at_least, slice_ids, split_list, Workspace};
use anyhow::{bail, Context as _, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use taxoscope_core::agreement::{cohen_for_runs, fleiss_for_runs, pairwise_matrix, AgreementDocument};
use taxoscope_core::annotation::{annotate_llm, majority_vote, repeat_runs, AnnotationRun, AnnotationSettings};
use taxoscope_core::dataset::{ingest, Modality};
use taxoscope_core::fixtures::{annotator_runs, bootstrap_scenario, human_llm_runs, reference_taxonomy, BOOTSTRAP_PROVIDERS};
use taxoscope_core::gates::{evaluate_gates, start_spot_check, GateInputs, GateReport, SpotCheckTask, Thresholds, Verdict};
use taxoscope_core::generation::{
    bootstrap_generate, consolidate, expand_clarity, generate_multilevel, tabulate_frequencies, GenerationSettings,
    MultilevelSettings,
};
use taxoscope_core::insights::{distribution, export_report, ReportInputs};
use taxoscope_core::review::{ReviewService, TaskFilter, TaskKind, TaskResult, TaskState};
use taxoscope_core::store::ArtifactKind;
use taxoscope_core::synth::{pipeline_scenario, synthetic_aliases, synthetic_corpus};
use taxoscope_core::taxonomy::TaxonomyRef;

#[derive(Debug, Parser)]
#[command(name = "taxoscope", version, about = "Build, apply and validate user-intent taxonomies with LLMs in the loop")]
pub struct Cli {
    /// Run store directory.
    #[arg(long, global = true, env = "TAXOSCOPE_STORE", default_value = "taxoscope-store")]
    pub store: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Data preparation: load a JSONL log file into the store.
    Ingest(IngestArgs),
    /// Data preparation: assign records to train and test.
    Split(SplitArgs),
    /// Taxonomy generation: bootstrap taxonomy proposals from the train split.
    Generate(GenerateArgs),
    /// Taxonomy generation: merge bootstrap runs into one taxonomy by label frequency.
    Consolidate(ConsolidateArgs),
    /// Taxonomy refinement: ask for negative examples and sharper descriptions.
    Clarify(ClarifyArgs),
    /// Taxonomy refinement: propose subcategories and prune weakly supported ones.
    Multilevel(MultilevelArgs),
    /// Application: label a dataset slice with a frozen taxonomy.
    Annotate(AnnotateArgs),
    /// Application: majority-vote triage over repeated runs.
    Vote(VoteArgs),
    /// Validation: inter-rater agreement between runs.
    Agree(AgreeArgs),
    /// Validation: run or show the quality gates.
    Gates {
        #[command(subcommand)]
        command: GatesCommand,
    },
    /// Validation: sample annotations for human verification.
    SpotCheck(SpotCheckArgs),
    /// Human review: headless access to the review queue.
    Review {
        #[command(subcommand)]
        command: ReviewCommand,
    },
    /// Insights: export distributions, modality shares and gate results.
    Report(ReportArgs),
    /// Human review: serve the HTTP review API.
    Serve(crate::api::ServeArgs),
    /// Offline runs: write a scripted-provider scenario and provider config.
    MockScenario(MockScenarioArgs),
    /// Offline runs: load the reference agreement fixtures into the store.
    Fixtures,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Dataset name in the store.
    #[arg(long)]
    pub name: String,
    /// Modality for lines that do not state one.
    #[arg(long, default_value = "search")]
    pub modality: Modality,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long, default_value_t = 0.5)]
    pub train_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Name of the split dataset; defaults to `<dataset>-split`.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct ProviderArg {
    /// Provider config file (JSON).
    #[arg(long, env = "TAXOSCOPE_PROVIDER")]
    pub provider: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub dataset: String,
    #[command(flatten)]
    pub provider: ProviderArg,
    #[arg(long, default_value_t = 10)]
    pub runs: usize,
    #[arg(long, default_value_t = 0.8)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ConsolidateArgs {
    /// Generation run ids; every stored run when omitted.
    #[arg(long)]
    pub runs: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub top_k: usize,
    /// Id of the consolidated taxonomy.
    #[arg(long)]
    pub id: String,
    /// Store key of an alias table.
    #[arg(long)]
    pub aliases: Option<String>,
    /// Comma-separated canonical labels; defaults to the alias targets.
    #[arg(long)]
    pub reference: Option<String>,
}

#[derive(Debug, Args)]
pub struct ClarifyArgs {
    #[arg(long)]
    pub taxonomy: TaxonomyRef,
    #[command(flatten)]
    pub provider: ProviderArg,
}

#[derive(Debug, Args)]
pub struct MultilevelArgs {
    #[arg(long)]
    pub dataset: String,
    #[command(flatten)]
    pub provider: ProviderArg,
    /// Level-1 taxonomy to hold constant.
    #[arg(long)]
    pub freeze: Option<TaxonomyRef>,
    #[arg(long, default_value_t = 3)]
    pub min_support: usize,
    #[arg(long, default_value_t = 5)]
    pub max_children: usize,
}

#[derive(Debug, Args)]
pub struct AnnotateArgs {
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub taxonomy: TaxonomyRef,
    /// `train`, `test` or `all`.
    #[arg(long, default_value = "test")]
    pub slice: String,
    #[command(flatten)]
    pub provider: ProviderArg,
    /// Independent runs with identical configuration.
    #[arg(long, default_value_t = 1)]
    pub repeat: usize,
    #[arg(long)]
    pub aliases: Option<String>,
}

#[derive(Debug, Args)]
pub struct VoteArgs {
    /// Comma-separated annotation run ids.
    #[arg(long)]
    pub runs: String,
    /// Id of the consensus run.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct AgreeSelect {
    /// Cohen's kappa for two runs: `a,b`.
    #[arg(long)]
    pub pair: Option<String>,
    /// Fleiss' kappa across runs: `a,b,c`.
    #[arg(long)]
    pub fleiss: Option<String>,
    /// Cohen's kappa for every pair of runs.
    #[arg(long)]
    pub pairwise: Option<String>,
}

#[derive(Debug, Args)]
pub struct AgreeArgs {
    #[command(flatten)]
    pub select: AgreeSelect,
    /// Print the confusion matrix for `--pair`.
    #[arg(long)]
    pub matrix: bool,
    /// Persist the report in the store.
    #[arg(long)]
    pub save: bool,
}

#[derive(Debug, Subcommand)]
pub enum GatesCommand {
    /// Evaluate every gate whose inputs are given and persist the report.
    Run(GatesRunArgs),
    /// Print a stored gate report.
    Show {
        #[arg(long)]
        report: String,
    },
}

#[derive(Debug, Args)]
pub struct GatesRunArgs {
    #[arg(long)]
    pub taxonomy: TaxonomyRef,
    /// Run used for comprehensiveness and, by default, conciseness.
    #[arg(long)]
    pub annotation_run: String,
    /// Repeated runs for consistency: `a,b,c`.
    #[arg(long)]
    pub repeat_runs: Option<String>,
    #[arg(long)]
    pub spot_check: Option<String>,
    /// Run used for conciseness.
    #[arg(long)]
    pub share_run: Option<String>,
    /// Compare the intent distributions of two runs: `a,b`.
    #[arg(long, conflicts_with = "bias_modality")]
    pub bias_runs: Option<String>,
    /// Compare search against chat within the annotation run, using this dataset.
    #[arg(long)]
    pub bias_modality: Option<String>,
    /// JSON file overriding the default thresholds.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    /// Exit with status 3 when any gate fails.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct SpotCheckArgs {
    #[arg(long)]
    pub run: String,
    #[arg(long, default_value_t = 100)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Dataset supplying record text for reviewers.
    #[arg(long)]
    pub dataset: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StateArg {
    Open,
    Done,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    LabelRecord,
    ResolveDisagreement,
    SpotCheckVerdict,
    MapAlias,
    ApproveTaxonomyEdit,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum VerdictArg {
    Follows,
    Violates,
}

#[derive(Debug, Subcommand)]
pub enum ReviewCommand {
    /// List tasks as JSON lines.
    List {
        #[arg(long)]
        state: Option<StateArg>,
        #[arg(long)]
        kind: Option<KindArg>,
    },
    Claim {
        #[arg(long)]
        task: String,
        #[arg(long = "as")]
        assessor: String,
    },
    Submit(SubmitArgs),
    /// Queue a human labelling run over a dataset slice.
    QueueLabels {
        #[arg(long)]
        dataset: String,
        #[arg(long)]
        taxonomy: TaxonomyRef,
        #[arg(long, default_value = "test")]
        slice: String,
        #[arg(long)]
        assessor: String,
    },
    /// Queue one resolution task per record the runs disagree on.
    Disagreements {
        #[arg(long)]
        runs: String,
        #[arg(long)]
        dataset: Option<String>,
    },
}

#[derive(Debug, Args)]
pub struct SubmitArgs {
    #[arg(long)]
    pub task: String,
    #[arg(long = "as")]
    pub assessor: String,
    #[command(flatten)]
    pub result: ResultArgs,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct ResultArgs {
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub verdict: Option<VerdictArg>,
    #[arg(long)]
    pub alias: Option<String>,
    #[arg(long)]
    pub approve: Option<bool>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub run: String,
    #[arg(long)]
    pub dataset: String,
    #[arg(long)]
    pub out: PathBuf,
    /// Gate report id to include.
    #[arg(long)]
    pub gates: Option<String>,
    /// Confusion matrix and kappa for a pair of runs: `a,b` (repeatable).
    #[arg(long)]
    pub confusion: Vec<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ScenarioKind {
    /// A 1,000-record search and chat corpus with known intents.
    Synthetic,
    /// Ten taxonomy replies per provider reproducing the bootstrap frequency table.
    Bootstrap,
}

#[derive(Debug, Args)]
pub struct MockScenarioArgs {
    #[arg(long, value_enum, default_value = "synthetic")]
    pub kind: ScenarioKind,
    /// Output directory for scenario, provider config and corpus files.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Taxonomy replies in the synthetic scenario.
    #[arg(long, default_value_t = 5)]
    pub generation_runs: usize,
}

/// Process exit status for a completed command.
pub type Status = u8;

pub fn run(cli: Cli) -> Result<Status> {
    if let Command::Serve(args) = cli.command {
        let ws = Workspace::open(&cli.store)?;
        crate::api::serve_blocking(ws, args)?;
        return Ok(0);
    }
    let ws = Workspace::open(&cli.store)?;
    match cli.command {
        Command::Ingest(a) => cmd_ingest(&ws, a),
        Command::Split(a) => cmd_split(&ws, a),
        Command::Generate(a) => cmd_generate(&ws, a),
        Command::Consolidate(a) => cmd_consolidate(&ws, a),
        Command::Clarify(a) => cmd_clarify(&ws, a),
        Command::Multilevel(a) => cmd_multilevel(&ws, a),
        Command::Annotate(a) => cmd_annotate(&ws, a),
        Command::Vote(a) => cmd_vote(&ws, a),
        Command::Agree(a) => cmd_agree(&ws, a),
        Command::Gates { command } => cmd_gates(&ws, command),
        Command::SpotCheck(a) => cmd_spot_check(&ws, a),
        Command::Review { command } => cmd_review(&ws, command),
        Command::Report(a) => cmd_report(&ws, a),
        Command::MockScenario(a) => cmd_mock_scenario(&ws, a),
        Command::Fixtures => cmd_fixtures(&ws),
        Command::Serve(_) => unreachable!("handled above"),
    }
}

fn cmd_ingest(ws: &Workspace, a: IngestArgs) -> Result<Status> {
    let ingested = ingest(&a.input, a.modality)?;
    for r in &ingested.rejects {
        eprintln!("rejected line {}: {}", r.line, r.reason);
    }
    let key = ws.put_dataset(&a.name, &ingested.dataset)?;
    let counts = ingested.dataset.modality_counts();
    println!("{key}");
    eprintln!(
        "{} records ({} search, {} chat), {} rejected",
        ingested.dataset.len(),
        counts.get(&Modality::Search).unwrap_or(&0),
        counts.get(&Modality::Chat).unwrap_or(&0),
        ingested.rejects.len()
    );
    Ok(0)
}

fn cmd_split(ws: &Workspace, a: SplitArgs) -> Result<Status> {
    let ds = ws.dataset(&a.dataset)?.split(a.train_fraction, a.seed)?;
    let name = a.out.unwrap_or_else(|| format!("{}-split", a.dataset));
    println!("{}", ws.put_dataset(&name, &ds)?);
    Ok(0)
}

fn cmd_generate(ws: &Workspace, a: GenerateArgs) -> Result<Status> {
    let ds = ws.dataset(&a.dataset)?;
    let gw = ws.gateway(&a.provider.provider)?;
    let runs = bootstrap_generate(ws.ctx(), &gw, &ds, &GenerationSettings::default(), a.runs, a.fraction, a.seed)?;
    for r in &runs {
        match r.failure_reason() {
            None => println!("{}\tok", r.run_id),
            Some(why) => println!("{}\tfailed\t{why}", r.run_id),
        }
    }
    Ok(0)
}

fn cmd_consolidate(ws: &Workspace, a: ConsolidateArgs) -> Result<Status> {
    let runs = match &a.runs {
        Some(ids) => split_list(ids)
            .iter()
            .map(|id| ws.generation_run(id))
            .collect::<Result<Vec<_>>>()?,
        None => ws.all_generation_runs()?,
    };
    if runs.is_empty() {
        bail!("no generation runs to consolidate");
    }
    let aliases = ws.aliases(a.aliases.as_deref())?;
    let reference = match &a.reference {
        Some(r) => split_list(r),
        None => {
            let mut targets: Vec<String> = aliases.iter().map(|(_, l)| l.to_string()).collect();
            targets.sort();
            targets.dedup();
            targets
        }
    };
    let settings = GenerationSettings::default();
    let table = tabulate_frequencies(&runs, &aliases, &reference)?;
    let t = consolidate(&runs, &aliases, &reference, a.top_k, &settings.bounds, &a.id)?;
    taxoscope_core::annotation::freeze_taxonomy(&ws.store, &t)?;
    ws.store
        .put(ArtifactKind::FrequencyTable, &format!("frequency/{}", t.reference()), &table)?;
    eprint!("{}", table.to_tsv());
    for note in &t.provenance.notes {
        eprintln!("note: {note}");
    }
    println!("{}", t.reference());
    Ok(0)
}

fn cmd_clarify(ws: &Workspace, a: ClarifyArgs) -> Result<Status> {
    let t = ws.taxonomy(&a.taxonomy)?;
    let gw = ws.gateway(&a.provider.provider)?;
    let next = expand_clarity(ws.ctx(), &gw, &t, &GenerationSettings::default())?;
    println!("{}", next.reference());
    Ok(0)
}

fn cmd_multilevel(ws: &Workspace, a: MultilevelArgs) -> Result<Status> {
    let ds = ws.dataset(&a.dataset)?;
    let gw = ws.gateway(&a.provider.provider)?;
    let ml = MultilevelSettings {
        max_children: a.max_children,
        min_support: a.min_support,
        frozen: a.freeze.as_ref().map(|r| ws.taxonomy(r)).transpose()?,
    };
    let mut settings = GenerationSettings::default();
    settings.bounds.max_children = a.max_children;
    let out = generate_multilevel(ws.ctx(), &gw, &ds, &settings, &ml, &AnnotationSettings::default())?;
    for p in &out.log.pruned {
        eprintln!("pruned {} (support {})", p.path.join(" > "), p.records);
    }
    println!("{}", out.taxonomy.reference());
    Ok(0)
}

fn cmd_annotate(ws: &Workspace, a: AnnotateArgs) -> Result<Status> {
    let ds = ws.dataset(&a.dataset)?;
    let t = ws.taxonomy(&a.taxonomy)?;
    let slice = slice_ids(&ds, &a.slice)?;
    let gw = ws.gateway(&a.provider.provider)?;
    let settings = AnnotationSettings {
        aliases: ws.aliases(a.aliases.as_deref())?,
        ..AnnotationSettings::default()
    };
    let runs = if a.repeat > 1 {
        repeat_runs(ws.ctx(), &gw, &ds, &slice, &t, &settings, a.repeat)?
    } else {
        vec![annotate_llm(ws.ctx(), &gw, &ds, &slice, &t, &settings)?]
    };
    for r in &runs {
        println!("{}\t{} valid\t{} other\t{} failed", r.run_id, r.valid_count(), r.other_count(), r.failures.len());
    }
    Ok(0)
}

fn cmd_vote(ws: &Workspace, a: VoteArgs) -> Result<Status> {
    let ids = split_list(&a.runs);
    require_at_least(&ids, 2, "--runs")?;
    let runs = ws.annotation_runs(&ids)?;
    let refs: Vec<&AnnotationRun> = runs.iter().collect();
    let outcome = majority_vote(&refs)?;
    let id = a.id.unwrap_or_else(|| ws.store.allocate_id("vote"));
    let run = outcome.to_run(id.clone(), ws.clock.now());
    ws.store.put(ArtifactKind::VoteOutcome, &format!("vote/{id}"), &outcome)?;
    run.save(&ws.store)?;
    let no_majority = outcome.decisions.iter().filter(|d| !d.majority).count();
    eprintln!(
        "{} records voted, {no_majority} without a majority, {} skipped",
        outcome.decisions.len(),
        outcome.skipped.len()
    );
    println!("{id}");
    Ok(0)
}

fn cmd_agree(ws: &Workspace, a: AgreeArgs) -> Result<Status> {
    let doc = if let Some(pair) = &a.select.pair {
        let ids = split_list(pair);
        if ids.len() != 2 {
            bail!("--pair takes exactly two run ids, got {}", ids.len());
        }
        let runs = ws.annotation_runs(&ids)?;
        let (m, report) = cohen_for_runs(&runs[0], &runs[1])?;
        if a.matrix {
            print!("{}", m.to_tsv());
        }
        AgreementDocument { report, matrix: Some(m) }
    } else if let Some(list) = &a.select.fleiss {
        let ids = split_list(list);
        require_at_least(&ids, 2, "--fleiss")?;
        let runs = ws.annotation_runs(&ids)?;
        let refs: Vec<&AnnotationRun> = runs.iter().collect();
        AgreementDocument {
            report: fleiss_for_runs(&refs)?,
            matrix: None,
        }
    } else {
        let ids = split_list(a.select.pairwise.as_deref().unwrap_or_default());
        require_at_least(&ids, 2, "--pairwise")?;
        let runs = ws.annotation_runs(&ids)?;
        let refs: Vec<&AnnotationRun> = runs.iter().collect();
        print!("{}", pairwise_matrix(&refs)?.to_tsv());
        return Ok(0);
    };
    let r = &doc.report;
    println!("{}\t{:.4}\t{}\tn={}\tobserved={:.4}\texpected={:.4}", r.statistic, r.value, r.band, r.n, r.observed, r.expected);
    if a.save {
        let key = format!("agreement/{}", ws.store.allocate_id("agr"));
        ws.store.put(ArtifactKind::AgreementReport, &key, &doc)?;
        eprintln!("saved {key}");
    }
    Ok(0)
}

fn load_thresholds(path: Option<&PathBuf>) -> Result<Thresholds> {
    match path {
        None => Ok(Thresholds::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading thresholds {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing thresholds {}", p.display()))
        }
    }
}

fn cmd_gates(ws: &Workspace, command: GatesCommand) -> Result<Status> {
    let a = match command {
        GatesCommand::Show { report } => {
            let r: GateReport = ws.store.get(&taxoscope_core::gates::gate_report_key(&report))?;
            print!("{}", r.to_tsv());
            return Ok(0);
        }
        GatesCommand::Run(a) => a,
    };
    let t = ws.taxonomy(&a.taxonomy)?;
    let thresholds = load_thresholds(a.thresholds.as_ref())?;
    let coverage = ws.annotation_run(&a.annotation_run)?;
    let repeats = match &a.repeat_runs {
        Some(ids) => ws.annotation_runs(&split_list(ids))?,
        None => Vec::new(),
    };
    let spot = a
        .spot_check
        .as_deref()
        .map(|id| SpotCheckTask::load(&ws.store, id))
        .transpose()?;
    let share = a.share_run.as_deref().map(|id| ws.annotation_run(id)).transpose()?;
    let labels = t.annotation_labels();
    let bias = if let Some(pair) = &a.bias_runs {
        let ids = split_list(pair);
        if ids.len() != 2 {
            bail!("--bias-runs takes exactly two run ids");
        }
        let runs = ws.annotation_runs(&ids)?;
        Some((distribution(&runs[0], &labels, None)?, distribution(&runs[1], &labels, None)?))
    } else if let Some(name) = &a.bias_modality {
        let ds = ws.dataset(name)?;
        Some((
            distribution(&coverage, &labels, Some((&ds, Modality::Search)))?,
            distribution(&coverage, &labels, Some((&ds, Modality::Chat)))?,
        ))
    } else {
        None
    };
    let inputs = GateInputs {
        taxonomy: None,
        coverage_run: Some(&coverage),
        repeat_runs: repeats.iter().collect(),
        spot_check: spot.as_ref(),
        share_run: share.as_ref(),
        bias: bias.as_ref().map(|(x, y)| (x, y)),
    };
    let report = evaluate_gates(ws.ctx(), &t, &inputs, &thresholds)?;
    print!("{}", report.to_tsv());
    for g in &report.gates {
        for f in &g.findings {
            eprintln!("{}: {f}", g.name);
        }
        if let Some(n) = &g.note {
            eprintln!("{}: {n}", g.name);
        }
    }
    eprintln!("report {}", report.report_id);
    Ok(if a.strict && !report.all_passed() { 3 } else { 0 })
}

fn cmd_spot_check(ws: &Workspace, a: SpotCheckArgs) -> Result<Status> {
    let run = ws.annotation_run(&a.run)?;
    let ds = a.dataset.as_deref().map(|d| ws.dataset(d)).transpose()?;
    let task = start_spot_check(&run, a.k, a.seed, ws.store.allocate_id("spot"))?;
    task.save(&ws.store)?;
    let review = ReviewService::open(ws.store.clone(), ws.clock.clone())?;
    let queued = review.queue_spot_check(&task, ds.as_ref())?;
    eprintln!("queued {} review tasks", queued.len());
    println!("{}", task.task_id);
    Ok(0)
}

fn cmd_review(ws: &Workspace, command: ReviewCommand) -> Result<Status> {
    let review = ReviewService::open(ws.store.clone(), ws.clock.clone())?;
    match command {
        ReviewCommand::List { state, kind } => {
            let filter = TaskFilter {
                state: state.map(|s| match s {
                    StateArg::Open => TaskState::Open,
                    StateArg::Done => TaskState::Done,
                }),
                kind: kind.map(|k| match k {
                    KindArg::LabelRecord => TaskKind::LabelRecord,
                    KindArg::ResolveDisagreement => TaskKind::ResolveDisagreement,
                    KindArg::SpotCheckVerdict => TaskKind::SpotCheckVerdict,
                    KindArg::MapAlias => TaskKind::MapAlias,
                    KindArg::ApproveTaxonomyEdit => TaskKind::ApproveTaxonomyEdit,
                }),
            };
            for t in review.list(filter) {
                println!("{}", serde_json::to_string(&t)?);
            }
        }
        ReviewCommand::Claim { task, assessor } => {
            let t = review.claim(&task, &assessor)?;
            println!("{}", serde_json::to_string(&t)?);
        }
        ReviewCommand::Submit(a) => {
            let r = a.result;
            let result = if let Some(label) = r.label {
                TaskResult::Label { label, rationale: None }
            } else if let Some(v) = r.verdict {
                TaskResult::Verdict {
                    verdict: match v {
                        VerdictArg::Follows => Verdict::FollowsDefinition,
                        VerdictArg::Violates => Verdict::Violates,
                    },
                    note: None,
                }
            } else if let Some(target) = r.alias {
                TaskResult::Alias { target }
            } else {
                TaskResult::Approval {
                    approve: r.approve.unwrap_or_default(),
                    comment: None,
                }
            };
            let t = review.submit(&a.task, &a.assessor, result)?;
            println!("{}", serde_json::to_string(&t)?);
        }
        ReviewCommand::QueueLabels {
            dataset,
            taxonomy,
            slice,
            assessor,
        } => {
            let ds = ws.dataset(&dataset)?;
            let t = ws.taxonomy(&taxonomy)?;
            let ids = slice_ids(&ds, &slice)?;
            let (run_id, tasks) = review.queue_labelling(&assessor, &t, &ids, Some(&ds))?;
            eprintln!("queued {} labelling tasks", tasks.len());
            println!("{run_id}");
        }
        ReviewCommand::Disagreements { runs, dataset } => {
            let ids = split_list(&runs);
            require_at_least(&ids, 2, "--runs")?;
            let runs = ws.annotation_runs(&ids)?;
            let t = ws.taxonomy(&runs[0].taxonomy)?;
            let ds = dataset.as_deref().map(|d| ws.dataset(d)).transpose()?;
            let refs: Vec<&AnnotationRun> = runs.iter().collect();
            let q = review.disagreement_queue(&refs, &t, ds.as_ref())?;
            eprintln!("queued {} disagreement tasks", q.tasks.len());
            println!("{}", q.run_id);
        }
    }
    Ok(0)
}

fn cmd_report(ws: &Workspace, a: ReportArgs) -> Result<Status> {
    let run = ws.annotation_run(&a.run)?;
    let ds = ws.dataset(&a.dataset)?;
    let t = ws.taxonomy(&run.taxonomy)?;
    let gates: Option<GateReport> = a
        .gates
        .as_deref()
        .map(|id| ws.store.get(&taxoscope_core::gates::gate_report_key(id)))
        .transpose()?;
    let mut inputs = ReportInputs::new(&run, &ds, t.annotation_labels());
    for pair in &a.confusion {
        let ids = split_list(pair);
        if ids.len() != 2 {
            bail!("--confusion takes exactly two run ids, got {pair:?}");
        }
        let runs = ws.annotation_runs(&ids)?;
        let (m, report) = cohen_for_runs(&runs[0], &runs[1])?;
        inputs.confusions.push((format!("{}_vs_{}", ids[0], ids[1]), m));
        inputs.agreement.push(report);
    }
    inputs.gates = gates.as_ref();
    for p in export_report(&a.out, &inputs)? {
        println!("{}", p.display());
    }
    Ok(0)
}

fn write_file(path: &std::path::Path, body: &str) -> Result<()> {
    std::fs::write(path, body).with_context(|| format!("writing {}", path.display()))
}

fn mock_provider(id: &str, scenario: &str) -> String {
    let config = taxoscope_core::llm::ProviderConfig::mock(id, scenario);
    serde_json::to_string_pretty(&config).expect("provider config serializes") + "\n"
}

fn cmd_mock_scenario(ws: &Workspace, a: MockScenarioArgs) -> Result<Status> {
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    match a.kind {
        ScenarioKind::Synthetic => {
            let corpus = synthetic_corpus(a.seed);
            write_file(&a.out.join("corpus.jsonl"), &corpus.to_jsonl())?;
            write_file(
                &a.out.join("scenario.json"),
                &pipeline_scenario(&corpus, a.generation_runs).to_json(),
            )?;
            write_file(&a.out.join("provider.json"), &mock_provider("mock", "scenario.json"))?;
            ws.store.put(ArtifactKind::AliasTable, "aliases/synthetic", &synthetic_aliases())?;
            println!("{}", a.out.join("provider.json").display());
            eprintln!("corpus {}, alias table aliases/synthetic", a.out.join("corpus.jsonl").display());
        }
        ScenarioKind::Bootstrap => {
            for (i, name) in BOOTSTRAP_PROVIDERS.iter().enumerate() {
                let scenario = format!("scenario-{name}.json");
                write_file(&a.out.join(&scenario), &bootstrap_scenario(i).to_json())?;
                let provider = a.out.join(format!("provider-{name}.json"));
                write_file(&provider, &mock_provider(name, &scenario))?;
                println!("{}", provider.display());
            }
            ws.store.put(
                ArtifactKind::AliasTable,
                "aliases/bootstrap",
                &taxoscope_core::fixtures::bootstrap_aliases(),
            )?;
        }
    }
    Ok(0)
}

fn cmd_fixtures(ws: &Workspace) -> Result<Status> {
    let t = reference_taxonomy();
    taxoscope_core::annotation::freeze_taxonomy(&ws.store, &t)?;
    let (a1, a2) = annotator_runs();
    let (human, llm) = human_llm_runs();
    for r in [&a1, &a2, &human, &llm] {
        r.save(&ws.store)?;
        println!("{}", r.run_id);
    }
    eprintln!("taxonomy {}", t.reference());
    Ok(0)
}

/// Shared with the API's background jobs.
pub fn annotation_job(ws: &Workspace, provider: &std::path::Path, dataset: &str, taxonomy: &TaxonomyRef, slice: &str) -> Result<AnnotationRun> {
    let ds = ws.dataset(dataset)?;
    let t = ws.taxonomy(taxonomy)?;
    let ids = slice_ids(&ds, slice)?;
    let gw = ws.gateway(provider)?;
    Ok(annotate_llm(ws.ctx(), &gw, &ds, &ids, &t, &AnnotationSettings::default())?)
}

pub fn generation_job(ws: &Workspace, provider: &std::path::Path, dataset: &str, runs: usize, fraction: f64, seed: u64) -> Result<Vec<String>> {
    let ds = ws.dataset(dataset)?;
    let gw = ws.gateway(provider)?;
    let out = bootstrap_generate(ws.ctx(), &gw, &ds, &GenerationSettings::default(), runs, fraction, seed)?;
    Ok(out.into_iter().map(|r| r.run_id).collect())
}
