use std::collections::BTreeMap;
use taxoscope_core::annotation::{AnnotationRun, Rater};
use taxoscope_core::clock::FixedClock;
use taxoscope_core::context::Context;
use taxoscope_core::fixtures::{human_llm_runs, reference_taxonomy, CODES, HUMAN_LLM_GRID};
use taxoscope_core::gates::{
    bias_probe, evaluate_gates, gate_accuracy, gate_clarity, gate_comprehensiveness, gate_conciseness,
    gate_consistency, start_spot_check, GateError, GateInputs, GateName, GateReport, GateStatus, Thresholds,
    Verdict,
};
use taxoscope_core::insights::IntentDistribution;
use taxoscope_core::store::RunStore;
use taxoscope_core::taxonomy::{Taxonomy, OTHER};

fn run(id: &str, labels: &[String]) -> AnnotationRun {
    let pairs: Vec<(String, String)> = labels
        .iter()
        .enumerate()
        .map(|(i, l)| (format!("r{i:04}"), l.clone()))
        .collect();
    AnnotationRun::from_labels(
        id,
        Rater::Llm {
            provider: "mock".into(),
            model: "m".into(),
        },
        reference_taxonomy().reference(),
        &pairs,
        "1970-01-01T00:00:00.000Z".into(),
    )
}

fn cycle(n: usize) -> Vec<String> {
    let labels = reference_taxonomy().labels();
    (0..n).map(|i| labels[i % labels.len()].clone()).collect()
}

#[test]
fn comprehensiveness_thresholds() {
    let (_, llm) = human_llm_runs();
    let e = gate_comprehensiveness(&llm, 0.05).unwrap();
    assert!(e.passed());
    assert!((e.measured.unwrap() - 1.0 / 124.0).abs() < 1e-12);

    let mut labels = cycle(100);
    for l in labels.iter_mut().take(8) {
        *l = OTHER.into();
    }
    let e = gate_comprehensiveness(&run("r8", &labels), 0.05).unwrap();
    assert_eq!(e.status, GateStatus::Fail);
    assert!((e.measured.unwrap() - 0.08).abs() < 1e-12);

    let e = gate_comprehensiveness(&run("r0", &cycle(1000)), 0.05).unwrap();
    assert!(e.passed());
    assert_eq!(e.measured, Some(0.0));
}

#[test]
fn consistency_needs_two_runs_and_detects_scrambling() {
    let base = run("a", &cycle(200));
    assert!(matches!(gate_consistency(&[&base], 0.8), Err(GateError::TooFewRuns(1))));

    let same: Vec<AnnotationRun> = (0..5).map(|i| run(&format!("s{i}"), &cycle(200))).collect();
    let refs: Vec<&AnnotationRun> = same.iter().collect();
    let e = gate_consistency(&refs, 0.8).unwrap();
    assert_eq!(e.measured, Some(1.0));
    assert!(e.passed());

    let mut scrambled = cycle(200);
    scrambled.rotate_left(1);
    let other = run("scr", &scrambled);
    let e = gate_consistency(&[&base, &other], 0.8).unwrap();
    assert_eq!(e.status, GateStatus::Fail);
    assert!(e.measured.unwrap() < 0.8);
}

#[test]
fn clarity_requires_descriptions_and_both_example_kinds() {
    let mut t = reference_taxonomy();
    let e = gate_clarity(&t);
    assert_eq!(e.status, GateStatus::Fail);
    assert_eq!(e.findings.len(), 5);
    assert_eq!(e.measured, Some(0.0));

    for c in t.categories.iter_mut() {
        c.negative_examples = vec!["something else".into()];
    }
    let e = gate_clarity(&t);
    assert!(e.passed());
    assert_eq!(e.measured, Some(1.0));

    t.categories[2].description = "  ".into();
    let e = gate_clarity(&t);
    assert_eq!(e.status, GateStatus::Fail);
    assert_eq!(e.findings.len(), 1);
    assert!(e.findings[0].contains("Learning") && e.findings[0].contains("description"));
    assert!((e.measured.unwrap() - 0.8).abs() < 1e-12);
}

fn reviewed(violations: usize) -> taxoscope_core::gates::SpotCheckTask {
    let r = run("acc", &cycle(300));
    let mut task = start_spot_check(&r, 100, 11, "sc-1").unwrap();
    let ids: Vec<String> = task.items.iter().map(|i| i.record_id.clone()).collect();
    for (i, id) in ids.iter().enumerate() {
        let v = if i < violations { Verdict::Violates } else { Verdict::FollowsDefinition };
        task.record_verdict(id, v, "rev", None).unwrap();
    }
    task
}

#[test]
fn accuracy_from_spot_checks() {
    let e = gate_accuracy(&reviewed(5), 0.9);
    assert!(e.passed());
    assert!((e.measured.unwrap() - 0.95).abs() < 1e-12);
    assert_eq!(e.findings.len(), 5);

    let e = gate_accuracy(&reviewed(15), 0.9);
    assert_eq!(e.status, GateStatus::Fail);
    assert!((e.measured.unwrap() - 0.85).abs() < 1e-12);
}

#[test]
fn partially_reviewed_spot_check_is_skipped() {
    let r = run("acc", &cycle(300));
    let mut task = start_spot_check(&r, 100, 11, "sc-2").unwrap();
    let ids: Vec<String> = task.items.iter().take(40).map(|i| i.record_id.clone()).collect();
    for id in &ids {
        task.record_verdict(id, Verdict::FollowsDefinition, "rev", None).unwrap();
    }
    let e = gate_accuracy(&task, 0.9);
    assert_eq!(e.status, GateStatus::Skipped);
    assert!(e.note.unwrap().contains("40%"));
}

#[test]
fn spot_check_sampling_rules() {
    let r = run("acc", &cycle(50));
    assert!(matches!(
        start_spot_check(&r, 51, 1, "x"),
        Err(GateError::SampleTooLarge { k: 51, available: 50 })
    ));
    assert!(matches!(start_spot_check(&r, 0, 1, "x"), Err(GateError::EmptySample)));
    assert_eq!(start_spot_check(&r, 10, 3, "x").unwrap(), start_spot_check(&r, 10, 3, "x").unwrap());
    let mut task = start_spot_check(&r, 10, 3, "x").unwrap();
    let outside = (0..50)
        .map(|i| format!("r{i:04}"))
        .find(|id| task.item(id).is_none())
        .unwrap();
    assert!(matches!(
        task.record_verdict(&outside, Verdict::Violates, "rev", None),
        Err(GateError::NotSampled(_))
    ));
}

fn share_run(counts: &[usize]) -> (AnnotationRun, Taxonomy) {
    let t = reference_taxonomy();
    let mut labels = Vec::new();
    for (label, n) in t.labels().iter().zip(counts) {
        labels.extend(std::iter::repeat_n(label.clone(), *n));
    }
    (run("share", &labels), t)
}

#[test]
fn conciseness_flags_small_categories() {
    let (r, t) = share_run(&[40, 25, 20, 10, 5]);
    let e = gate_conciseness(&r, &t, 0.02).unwrap();
    assert!(e.passed());
    assert!((e.measured.unwrap() - 0.05).abs() < 1e-12);
    assert!((e.values["Information retrieval"] - 0.40).abs() < 1e-12);

    let (r, t) = share_run(&[400, 250, 200, 140, 10]);
    let e = gate_conciseness(&r, &t, 0.02).unwrap();
    assert_eq!(e.status, GateStatus::Fail);
    assert!((e.measured.unwrap() - 0.01).abs() < 1e-12);
    assert_eq!(e.findings.len(), 1);
    assert!(e.findings[0].contains("Leisure"));

    let (r, t) = share_run(&[40, 25, 20, 15, 0]);
    let e = gate_conciseness(&r, &t, 0.02).unwrap();
    assert_eq!(e.measured, Some(0.0));
    assert_eq!(e.status, GateStatus::Fail);
}

fn dist(id: &str, counts: &[(&str, usize)]) -> IntentDistribution {
    let owned: Vec<(String, usize)> = counts.iter().map(|(l, c)| (l.to_string(), *c)).collect();
    IntentDistribution::from_counts(id, &owned).unwrap()
}

#[test]
fn bias_probe_total_variation() {
    let a = dist("a", &[("X", 5), ("Y", 5)]);
    let b = dist("b", &[("X", 8), ("Y", 2)]);
    let e = bias_probe(&a, &b, 0.15).unwrap();
    assert!((e.measured.unwrap() - 0.3).abs() < 1e-12);
    assert_eq!(e.status, GateStatus::Fail);
    assert!((e.values["X"] + 0.3).abs() < 1e-12);
    let back = bias_probe(&b, &a, 0.15).unwrap();
    assert!((back.measured.unwrap() - e.measured.unwrap()).abs() < 1e-15);

    let same = bias_probe(&a, &a, 0.15).unwrap();
    assert_eq!(same.measured, Some(0.0));
    assert!(same.passed());

    let c = dist("c", &[("X", 1), ("Z", 1)]);
    assert!(matches!(bias_probe(&a, &c, 0.15), Err(GateError::UniverseMismatch { .. })));
}

#[test]
fn bias_between_human_and_llm_marginals() {
    let n = HUMAN_LLM_GRID.len();
    let rows: Vec<(String, usize)> = (0..n)
        .map(|i| (CODES[i].1.to_string(), HUMAN_LLM_GRID[i].iter().sum::<u64>() as usize))
        .collect();
    let cols: Vec<(String, usize)> = (0..n)
        .map(|j| (CODES[j].1.to_string(), HUMAN_LLM_GRID.iter().map(|r| r[j]).sum::<u64>() as usize))
        .collect();
    let oracle: i64 = rows
        .iter()
        .zip(&cols)
        .map(|((_, a), (_, b))| (*a as i64 - *b as i64).abs())
        .sum();
    assert_eq!(oracle, 18);
    let h = IntentDistribution::from_counts("human", &rows).unwrap();
    let l = IntentDistribution::from_counts("llm", &cols).unwrap();
    let e = bias_probe(&h, &l, 0.15).unwrap();
    assert!((e.measured.unwrap() - 18.0 / 248.0).abs() < 1e-12);
    assert!(e.passed());
}

#[test]
fn gate_report_is_persisted_and_recomputable() {
    let dir = tempfile::tempdir().unwrap();
    let store = RunStore::open(dir.path()).unwrap();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let t = reference_taxonomy();
    let (human, llm) = human_llm_runs();
    human.save(&store).unwrap();
    llm.save(&store).unwrap();
    store
        .put(taxoscope_core::store::ArtifactKind::Taxonomy, &t.reference().store_key(), &t)
        .unwrap();
    let inputs = GateInputs {
        coverage_run: Some(&llm),
        repeat_runs: vec![&human, &llm],
        ..GateInputs::default()
    };
    let first = evaluate_gates(ctx, &t, &inputs, &Thresholds::default()).unwrap();
    let second = evaluate_gates(ctx, &t, &inputs, &Thresholds::default()).unwrap();
    assert_ne!(first.report_id, second.report_id);
    assert_eq!(first.gates, second.gates);
    let stored: GateReport = store.get(&first.key()).unwrap();
    assert_eq!(stored, first);
    assert!(first.check_evidence(&store).is_empty());
    assert_eq!(first.gate(GateName::Accuracy).unwrap().status, GateStatus::Skipped);
    assert_eq!(first.gate(GateName::Bias).unwrap().status, GateStatus::Skipped);
    assert!(first.gate(GateName::Comprehensiveness).unwrap().passed());
    assert!(!first.all_passed());
    let statuses: BTreeMap<String, String> = first
        .gates
        .iter()
        .map(|g| (g.name.to_string(), g.status.to_string()))
        .collect();
    assert_eq!(statuses.len(), 6);
}
