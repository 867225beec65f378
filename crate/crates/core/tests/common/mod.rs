#![allow(dead_code)]

use std::path::Path;
use std::sync::Arc;
use taxoscope_core::annotation::{annotate_llm, AnnotationRun, AnnotationSettings};
use taxoscope_core::clock::FixedClock;
use taxoscope_core::context::Context;
use taxoscope_core::dataset::{ingest, Dataset, Modality, SplitRole};
use taxoscope_core::gates::{
    evaluate_gates, gate_accuracy, gate_clarity, gate_comprehensiveness, gate_conciseness, start_spot_check,
    GateEntry, GateInputs, GateReport, SpotCheckTask, Thresholds, Verdict,
};
use taxoscope_core::generation::{bootstrap_generate, consolidate, expand_clarity, GenerationSettings};
use taxoscope_core::insights::{export_report, modality_share, ModalityShare, ReportInputs};
use taxoscope_core::llm::{Gateway, ScriptedMock};
use taxoscope_core::review::{ReviewService, TaskResult};
use taxoscope_core::store::RunStore;
use taxoscope_core::synth::{pipeline_scenario, synthetic_aliases, synthetic_corpus, INTENTS};
use taxoscope_core::taxonomy::Taxonomy;

pub const SEED: u64 = 7;

pub fn scripted_gateway(store: &Arc<RunStore>, scenario: taxoscope_core::llm::Scenario) -> Gateway {
    Gateway::new(Arc::new(ScriptedMock::new("mock", scenario)))
        .with_store(store.clone())
        .with_parallelism(4)
}

pub struct PipelineOutcome {
    pub store: Arc<RunStore>,
    pub dataset: Dataset,
    pub consolidated: Taxonomy,
    pub clarified: Taxonomy,
    pub train_run: AnnotationRun,
    pub test_run: AnnotationRun,
    pub spot_check: SpotCheckTask,
    pub clarity: GateEntry,
    pub comprehensiveness: GateEntry,
    pub accuracy: GateEntry,
    pub conciseness: GateEntry,
    pub shares: Vec<ModalityShare>,
    pub report: GateReport,
}

/// Steps 1-6 of the workflow against the scripted provider, with 95 of the
/// 100 spot-checked labels judged as following their definitions.
pub fn run_pipeline(dir: &Path) -> PipelineOutcome {
    let corpus = synthetic_corpus(SEED);
    let log = dir.join("logs.jsonl");
    std::fs::write(&log, corpus.to_jsonl()).unwrap();
    let store = Arc::new(RunStore::open(dir.join("store")).unwrap());
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);

    let ingested = ingest(&log, Modality::Search).unwrap();
    assert!(ingested.rejects.is_empty());
    assert_eq!(ingested.dataset.len(), 1000);
    let dataset = ingested.dataset.split(0.5, SEED).unwrap();

    let gw = scripted_gateway(&store, pipeline_scenario(&corpus, 5));
    let settings = GenerationSettings::default();
    let runs = bootstrap_generate(ctx, &gw, &dataset, &settings, 5, 0.8, 100).unwrap();
    let reference: Vec<String> = INTENTS.iter().map(|s| s.to_string()).collect();
    let consolidated = consolidate(&runs, &synthetic_aliases(), &reference, 5, &settings.bounds, "intents").unwrap();
    let clarified = expand_clarity(ctx, &gw, &consolidated, &settings).unwrap();
    let clarity = gate_clarity(&clarified);

    let ann = AnnotationSettings {
        aliases: synthetic_aliases(),
        ..AnnotationSettings::default()
    };
    let train = dataset.ids_in(SplitRole::Train).unwrap();
    let train_run = annotate_llm(ctx, &gw, &dataset, &train, &clarified, &ann).unwrap();
    let thresholds = Thresholds::default();
    let comprehensiveness = gate_comprehensiveness(&train_run, thresholds.tau_other).unwrap();

    let review = ReviewService::open(store.clone(), Arc::new(FixedClock::epoch())).unwrap();
    let task = start_spot_check(&train_run, 100, SEED, "spot-0001").unwrap();
    let queued = review.queue_spot_check(&task, Some(&dataset)).unwrap();
    for (i, t) in queued.iter().enumerate() {
        let verdict = if i < 95 { Verdict::FollowsDefinition } else { Verdict::Violates };
        review.claim(&t.task_id, "reviewer").unwrap();
        review
            .submit(&t.task_id, "reviewer", TaskResult::Verdict { verdict, note: None })
            .unwrap();
    }
    let spot_check = SpotCheckTask::load(&store, "spot-0001").unwrap();
    let accuracy = gate_accuracy(&spot_check, thresholds.tau_accuracy);

    let test = dataset.ids_in(SplitRole::Test).unwrap();
    let test_run = annotate_llm(ctx, &gw, &dataset, &test, &clarified, &ann).unwrap();
    let conciseness = gate_conciseness(&test_run, &clarified, thresholds.tau_min_share).unwrap();
    let labels = clarified.annotation_labels();
    let shares = modality_share(&test_run, &dataset, &labels).unwrap();

    let report = evaluate_gates(
        ctx,
        &clarified,
        &GateInputs {
            coverage_run: Some(&train_run),
            spot_check: Some(&spot_check),
            share_run: Some(&test_run),
            ..GateInputs::default()
        },
        &thresholds,
    )
    .unwrap();
    let mut inputs = ReportInputs::new(&test_run, &dataset, labels);
    inputs.gates = Some(&report);
    export_report(&dir.join("report"), &inputs).unwrap();

    PipelineOutcome {
        store,
        dataset,
        consolidated,
        clarified,
        train_run,
        test_run,
        spot_check,
        clarity,
        comprehensiveness,
        accuracy,
        conciseness,
        shares,
        report,
    }
}
