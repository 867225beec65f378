mod common;

use std::collections::BTreeSet;
use std::sync::Arc;
use taxoscope_core::annotation::AnnotationSettings;
use taxoscope_core::clock::FixedClock;
use taxoscope_core::context::Context;
use taxoscope_core::dataset::{Dataset, LogRecord, SplitRole};
use taxoscope_core::fixtures::{
    bootstrap_aliases, bootstrap_reference, bootstrap_scenario, reference_taxonomy, BOOTSTRAP_PROVIDERS,
};
use taxoscope_core::generation::{
    bootstrap_generate, consolidate, expand_clarity, generate_multilevel, generate_once, tabulate_frequencies,
    GenerationError, GenerationRun, GenerationSettings, MultilevelSettings, PruningLog,
};
use taxoscope_core::llm::{FailureKind, Gateway, Purpose, Scenario, ScenarioEntry, ScriptedMock};
use taxoscope_core::store::RunStore;
use taxoscope_core::taxonomy::{AliasTable, Bounds, Category, Rule, Taxonomy};

fn dataset(n: usize) -> Dataset {
    let records = (0..n)
        .map(|i| LogRecord::search(format!("q{i:03}"), format!("query number {i}")))
        .collect();
    Dataset::new(records).split(0.8, 9).unwrap()
}

fn reply(cats: &[Category]) -> String {
    serde_json::json!({ "categories": cats }).to_string()
}

fn simple(labels: &[&str]) -> Vec<Category> {
    labels
        .iter()
        .map(|l| Category::new(*l, format!("about {l}")).with_examples([format!("{l} example")]))
        .collect()
}

fn gateway(store: &Arc<RunStore>, name: &str, scenario: Scenario) -> Gateway {
    Gateway::new(Arc::new(ScriptedMock::new(name, scenario))).with_store(store.clone())
}

fn open() -> (tempfile::TempDir, Arc<RunStore>) {
    let dir = tempfile::tempdir().unwrap();
    let store = Arc::new(RunStore::open(dir.path()).unwrap());
    (dir, store)
}

#[test]
fn generate_once_yields_a_valid_taxonomy() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let mut s = Scenario::new("one");
    s.push(ScenarioEntry::respond(Purpose::GenerateTaxonomy, reply(&reference_taxonomy().categories)));
    let gw = gateway(&store, "mock", s);
    let run = generate_once(ctx, &gw, &dataset(50), &GenerationSettings::default(), Some(1)).unwrap();
    let t = run.taxonomy.as_ref().unwrap();
    assert_eq!(t.categories.len(), 5);
    assert_eq!(run.sample_ids.len(), 40);
    let stored: GenerationRun = store.get(&run.key()).unwrap();
    assert_eq!(stored, run);
    assert!(store.contains(&t.reference().store_key()));
}

#[test]
fn seven_categories_are_persisted_as_a_failure() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let mut s = Scenario::new("seven");
    s.push(ScenarioEntry::respond(
        Purpose::GenerateTaxonomy,
        reply(&simple(&["A", "B", "C", "D", "E", "F", "G"])),
    ));
    let gw = gateway(&store, "mock", s);
    let run = generate_once(ctx, &gw, &dataset(20), &GenerationSettings::default(), None).unwrap();
    assert!(run.taxonomy.is_none());
    let failure = run.failure.as_ref().unwrap();
    assert!(failure.violations.iter().any(|v| v.rule == Rule::CategoryCount));
    let stored: GenerationRun = store.get(&run.key()).unwrap();
    assert!(stored.failure.is_some());
}

#[test]
fn provider_errors_are_recorded_in_the_run() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let mut s = Scenario::new("down");
    s.push(ScenarioEntry::failing(Purpose::GenerateTaxonomy, None, FailureKind::Outage));
    let gw = gateway(&store, "mock", s);
    let run = generate_once(ctx, &gw, &dataset(20), &GenerationSettings::default(), None).unwrap();
    assert!(run.provider_error.is_some());
    assert!(store.contains(&run.key()));
}

#[test]
fn same_seed_and_scenario_give_identical_content() {
    let make = || {
        let (d, store) = open();
        let clock = FixedClock::epoch();
        let ctx = Context::new(&store, &clock);
        let gw = gateway(&store, "gpt-4", bootstrap_scenario(0));
        let runs = bootstrap_generate(ctx, &gw, &dataset(50), &GenerationSettings::default(), 3, 0.8, 42).unwrap();
        drop(d);
        runs
    };
    assert_eq!(make(), make());
}

#[test]
fn bootstrap_runs_use_fresh_samples() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let ds = dataset(100);
    let gw = gateway(&store, "gpt-4", bootstrap_scenario(0));
    let runs = bootstrap_generate(ctx, &gw, &ds, &GenerationSettings::default(), 10, 0.8, 500).unwrap();
    assert_eq!(runs.len(), 10);
    let train: BTreeSet<String> = ds.ids_in(SplitRole::Train).unwrap().into_iter().collect();
    for (i, r) in runs.iter().enumerate() {
        assert_eq!(r.seed, Some(500 + i as u64));
        assert_eq!(r.sample_ids.len(), 64);
        assert!(r.sample_ids.iter().all(|id| train.contains(id)));
    }
    let distinct: BTreeSet<_> = runs.iter().map(|r| r.sample_ids.clone()).collect();
    assert!(distinct.len() > 1);
}

#[test]
fn single_full_bootstrap_matches_generate_once() {
    let ds = dataset(30);
    let run_with = |f: &dyn Fn(Context<'_>, &Gateway) -> GenerationRun| {
        let (_d, store) = open();
        let clock = FixedClock::epoch();
        let gw = gateway(&store, "gpt-4", bootstrap_scenario(0));
        f(Context::new(&store, &clock), &gw)
    };
    let boot = run_with(&|ctx, gw| {
        bootstrap_generate(ctx, gw, &ds, &GenerationSettings::default(), 1, 1.0, 3)
            .unwrap()
            .remove(0)
    });
    let once = run_with(&|ctx, gw| generate_once(ctx, gw, &ds, &GenerationSettings::default(), Some(3)).unwrap());
    let a: BTreeSet<_> = boot.sample_ids.iter().collect();
    let b: BTreeSet<_> = once.sample_ids.iter().collect();
    assert_eq!(a, b);
    assert_eq!(boot.taxonomy, once.taxonomy);
}

#[test]
fn bootstrap_fails_only_when_every_run_fails() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let ds = dataset(20);
    let mut s = Scenario::new("mixed");
    s.push(ScenarioEntry::failing(Purpose::GenerateTaxonomy, None, FailureKind::Outage));
    s.push(ScenarioEntry::respond(Purpose::GenerateTaxonomy, reply(&simple(&["A", "B", "C", "D", "E"]))));
    let gw = gateway(&store, "mock", s);
    let runs = bootstrap_generate(ctx, &gw, &ds, &GenerationSettings::default(), 2, 0.8, 0).unwrap();
    assert!(!runs[0].is_success() && runs[1].is_success());

    let mut s = Scenario::new("bad");
    s.cycle = true;
    s.push(ScenarioEntry::respond(Purpose::GenerateTaxonomy, "no taxonomy here"));
    let gw = gateway(&store, "mock", s);
    match bootstrap_generate(ctx, &gw, &ds, &GenerationSettings::default(), 3, 0.8, 0) {
        Err(GenerationError::AllRunsFailed(ids)) => assert_eq!(ids.len(), 3),
        other => panic!("{other:?}"),
    }
    assert!(matches!(
        bootstrap_generate(ctx, &gw, &ds, &GenerationSettings::default(), 0, 0.8, 0),
        Err(GenerationError::NoRuns)
    ));
}

fn fake_run(id: &str, provider: &str, labels: &[&str]) -> GenerationRun {
    GenerationRun {
        run_id: id.into(),
        provider: provider.into(),
        model: "m".into(),
        seed: None,
        sample_ids: vec![],
        prompt_template: "generate-v1".into(),
        request_id: id.into(),
        created_at: "1970-01-01T00:00:00.000Z".into(),
        taxonomy: Some(Taxonomy::new(id, simple(labels))),
        parse_mode: None,
        failure: None,
        provider_error: None,
    }
}

#[test]
fn single_run_tabulates_five_rows_of_one() {
    let runs = [fake_run("g1", "p", &["A", "B", "C", "D", "E"])];
    let table = tabulate_frequencies(&runs, &AliasTable::new(), &[]).unwrap();
    assert_eq!(table.rows.len(), 5);
    assert!(table.rows.iter().all(|r| r.total() == 1 && !r.resolved));
}

#[test]
fn tabulation_ignores_run_order_and_flags_unresolved() {
    let mut runs = Vec::new();
    for (p, name) in BOOTSTRAP_PROVIDERS.iter().enumerate() {
        let (_d, store) = open();
        let clock = FixedClock::epoch();
        let gw = gateway(&store, name, bootstrap_scenario(p));
        runs.extend(
            bootstrap_generate(Context::new(&store, &clock), &gw, &dataset(40), &GenerationSettings::default(), 10, 0.8, 0)
                .unwrap(),
        );
    }
    let base = tabulate_frequencies(&runs, &bootstrap_aliases(), &bootstrap_reference()).unwrap();
    let row = base.row("Information retrieval/seeking/finding").unwrap();
    assert_eq!((row.count("gpt-4"), row.count("mistral"), row.count("hermes")), (10, 9, 10));
    let verify = base.row("Verify").unwrap();
    assert_eq!((verify.count("gpt-4"), verify.count("mistral"), verify.count("hermes")), (0, 2, 2));
    for row in &base.rows {
        for p in &base.providers {
            assert!(row.count(p) <= base.runs_per_provider[p]);
        }
    }
    let mut reversed = runs.clone();
    reversed.reverse();
    assert_eq!(tabulate_frequencies(&reversed, &bootstrap_aliases(), &bootstrap_reference()).unwrap(), base);
    for seed in 0..5 {
        let mut shuffled = runs.clone();
        taxoscope_core::dataset::seeded_shuffle(&mut shuffled, seed);
        assert_eq!(tabulate_frequencies(&shuffled, &bootstrap_aliases(), &bootstrap_reference()).unwrap(), base);
    }

    let without_aliases = tabulate_frequencies(&runs, &AliasTable::new(), &bootstrap_reference()).unwrap();
    let finding = without_aliases.row("Finding").unwrap();
    assert!(!finding.resolved);
    assert_eq!(finding.total(), 3);
}

#[test]
fn consolidating_identical_runs_returns_their_categories() {
    let runs: Vec<_> = (0..10)
        .map(|i| fake_run(&format!("g{i}"), "p", &["Alpha", "Beta", "Gamma", "Delta", "Epsilon"]))
        .collect();
    let t = consolidate(&runs, &AliasTable::new(), &[], 5, &Bounds::default(), "c").unwrap();
    assert_eq!(t.labels(), vec!["Alpha", "Beta", "Delta", "Epsilon", "Gamma"]);
    assert_eq!(t.provenance.source_runs.len(), 10);
    assert!(t.categories.iter().all(|c| c.positive_examples.len() == 1));
    assert!(t.provenance.notes.is_empty());
}

#[test]
fn ties_at_the_boundary_go_to_the_earliest_run_and_are_recorded() {
    let runs = vec![
        fake_run("g1", "p", &["A", "B", "C", "D", "Zeta"]),
        fake_run("g2", "p", &["A", "B", "C", "D", "Eta"]),
        fake_run("g3", "p", &["A", "B", "C", "D", "Zeta"]),
        fake_run("g4", "p", &["A", "B", "C", "D", "Eta"]),
        fake_run("g5", "p", &["A", "B", "C", "Zeta", "Eta"]),
    ];
    let table = tabulate_frequencies(&runs, &AliasTable::new(), &[]).unwrap();
    assert_eq!(table.row("Zeta").unwrap().total(), 3);
    assert_eq!(table.row("Eta").unwrap().total(), 3);
    let t = consolidate(&runs, &AliasTable::new(), &[], 5, &Bounds::default(), "c").unwrap();
    assert!(t.labels().contains(&"Zeta".to_string()));
    assert!(!t.labels().contains(&"Eta".to_string()));
    assert_eq!(t.provenance.notes.len(), 1);
    assert!(t.provenance.notes[0].contains("Zeta") && t.provenance.notes[0].contains("g1"));
}

#[test]
fn duplicating_runs_keeps_the_selection() {
    let runs = vec![
        fake_run("g1", "p", &["A", "B", "C", "D", "E"]),
        fake_run("g2", "p", &["A", "B", "C", "D", "F"]),
        fake_run("g3", "q", &["A", "B", "C", "E", "G"]),
    ];
    let once = consolidate(&runs, &AliasTable::new(), &[], 5, &Bounds::default(), "c").unwrap();
    let mut doubled = runs.clone();
    doubled.extend(runs.iter().cloned().map(|mut r| {
        r.run_id.push_str("-dup");
        r
    }));
    let twice = consolidate(&doubled, &AliasTable::new(), &[], 5, &Bounds::default(), "c").unwrap();
    assert_eq!(once.labels(), twice.labels());
}

#[test]
fn too_few_labels_is_an_error() {
    let runs = [fake_run("g1", "p", &["A", "B", "C", "D", "E"])];
    assert!(matches!(
        consolidate(&runs, &AliasTable::new(), &[], 6, &Bounds::default(), "c"),
        Err(GenerationError::InsufficientLabels { wanted: 6, found: 5 })
    ));
}

fn clarity_reply(labels: &[&str], per: usize) -> String {
    let cats: Vec<_> = labels
        .iter()
        .map(|l| {
            let negs: Vec<String> = (0..per).map(|i| format!("not {l} {i}")).collect();
            serde_json::json!({ "label": l, "description": format!("Expanded {l}."), "negative_examples": negs })
        })
        .collect();
    serde_json::json!({ "categories": cats }).to_string()
}

#[test]
fn clarity_pass_adds_negatives_to_every_category() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let t = reference_taxonomy();
    let labels: Vec<String> = t.labels();
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let mut s = Scenario::new("clarity");
    s.push(ScenarioEntry::respond(Purpose::ExpandClarity, clarity_reply(&refs, 2)));
    let gw = gateway(&store, "mock", s);
    let next = expand_clarity(ctx, &gw, &t, &GenerationSettings::default()).unwrap();
    assert_eq!(next.version, t.version + 1);
    assert!(next.categories.iter().all(|c| c.negative_examples.len() == 2));
    assert!(next.categories[0].description.starts_with("Expanded"));
    assert!(store.contains(&next.reference().store_key()));
}

#[test]
fn clarity_pass_keeps_and_dedupes_existing_negatives() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let mut t = reference_taxonomy();
    t.categories[0].negative_examples = vec!["not Information retrieval 0".into(), "already here".into()];
    let labels = t.labels();
    let refs: Vec<&str> = labels.iter().map(String::as_str).collect();
    let mut s = Scenario::new("clarity");
    s.push(ScenarioEntry::respond(Purpose::ExpandClarity, clarity_reply(&refs, 2)));
    let gw = gateway(&store, "mock", s);
    let next = expand_clarity(ctx, &gw, &t, &GenerationSettings::default()).unwrap();
    assert_eq!(
        next.categories[0].negative_examples,
        vec!["not Information retrieval 0", "already here", "not Information retrieval 1"]
    );
}

#[test]
fn clarity_pass_is_all_or_nothing() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let t = reference_taxonomy();
    let labels = t.labels();
    let refs: Vec<&str> = labels.iter().map(String::as_str).take(4).collect();
    let mut s = Scenario::new("clarity");
    s.push(ScenarioEntry::respond(Purpose::ExpandClarity, clarity_reply(&refs, 1)));
    s.push(ScenarioEntry::respond(Purpose::ExpandClarity, "I would rather not."));
    let gw = gateway(&store, "mock", s);
    match expand_clarity(ctx, &gw, &t, &GenerationSettings::default()) {
        Err(GenerationError::ClarityIncomplete { uncovered, .. }) => assert_eq!(uncovered, vec!["Leisure"]),
        other => panic!("{other:?}"),
    }
    let mut bumped = t.reference();
    bumped.version += 1;
    assert!(!store.contains(&bumped.store_key()));
    assert!(matches!(
        expand_clarity(ctx, &gw, &t, &GenerationSettings::default()),
        Err(GenerationError::ClarityParse { .. })
    ));
}

fn two_level(children: &[(usize, &[&str])]) -> Vec<Category> {
    let mut cats = reference_taxonomy().categories;
    for (i, kids) in children {
        cats[*i].children = kids
            .iter()
            .map(|k| Category::new(*k, format!("{k} subtype")).with_examples([format!("{k} sample")]))
            .collect();
    }
    cats
}

fn multilevel_scenario(ds: &Dataset, cats: &[Category], assign: &dyn Fn(usize) -> String) -> Scenario {
    let mut s = Scenario::new("multilevel");
    s.cycle = true;
    s.push(ScenarioEntry::respond(Purpose::GenerateMultilevel, reply(cats)));
    for (i, id) in ds.ids_in(SplitRole::Train).unwrap().iter().enumerate() {
        s.push(ScenarioEntry::keyed(Purpose::Annotate, format!("trial/{id}"), assign(i)));
    }
    s
}

const KIDS: [&[&str]; 5] = [
    &["Find facts", "Find places", "Find people"],
    &["Calculate", "Convert", "Compare"],
    &["Concepts", "Skills", "History"],
    &["Write", "Edit", "Translate"],
    &["Games", "Stories", "Small talk"],
];

fn full_paths() -> Vec<String> {
    let t = reference_taxonomy();
    let mut out = Vec::new();
    for (i, c) in t.categories.iter().enumerate() {
        for k in KIDS[i] {
            out.push(format!("{} > {k}", c.label));
        }
    }
    out
}

#[test]
fn multilevel_keeps_supported_children_under_frozen_parents() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let ds = dataset(75);
    let cats = two_level(&KIDS.iter().enumerate().map(|(i, k)| (i, *k)).collect::<Vec<_>>());
    let paths = full_paths();
    let gw = gateway(&store, "mock", multilevel_scenario(&ds, &cats, &|i| paths[i % paths.len()].clone()));
    let ml = MultilevelSettings {
        frozen: Some(reference_taxonomy()),
        ..MultilevelSettings::default()
    };
    let out = generate_multilevel(ctx, &gw, &ds, &GenerationSettings::default(), &ml, &AnnotationSettings::default()).unwrap();
    assert_eq!(out.taxonomy.depth, 2);
    assert_eq!(out.taxonomy.categories.len(), 5);
    assert!(out.taxonomy.categories.iter().all(|c| c.children.len() == 3));
    assert!(out.log.pruned.is_empty());
    assert!(out.log.supports.iter().all(|s| s.records >= 3));
    assert_eq!(out.taxonomy.categories[0].description, reference_taxonomy().categories[0].description);
}

#[test]
fn weakly_supported_children_are_pruned_and_logged() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let ds = dataset(75);
    let mut kids: Vec<(usize, &[&str])> = KIDS.iter().enumerate().map(|(i, k)| (i, *k)).collect();
    kids[0] = (0, &["Find facts", "Find places", "Find people", "Look for review"]);
    let cats = two_level(&kids);
    let paths = full_paths();
    let review = "Information retrieval > Look for review".to_string();
    let gw = gateway(
        &store,
        "mock",
        multilevel_scenario(&ds, &cats, &|i| if i == 0 { review.clone() } else { paths[i % paths.len()].clone() }),
    );
    let out = generate_multilevel(
        ctx,
        &gw,
        &ds,
        &GenerationSettings::default(),
        &MultilevelSettings::default(),
        &AnnotationSettings::default(),
    )
    .unwrap();
    assert_eq!(out.log.pruned.len(), 1);
    assert_eq!(out.log.pruned[0].path, vec!["Information retrieval", "Look for review"]);
    assert_eq!(out.log.pruned[0].records, 1);
    assert_eq!(out.taxonomy.categories[0].children.len(), 3);
    assert_eq!(out.taxonomy.categories.len(), 5);
    assert!(out.taxonomy.walk().len() < out.run.taxonomy.as_ref().unwrap().walk().len());
    let log: PruningLog = store.get(&format!("pruning/{}", out.run.run_id)).unwrap();
    assert_eq!(log, out.log);
    assert!(store.contains(&out.taxonomy.reference().store_key()));
}

#[test]
fn too_many_children_is_a_parse_level_violation() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let ds = dataset(20);
    let cats = two_level(&[(0, &["a", "b", "c", "d", "e", "f"])]);
    let gw = gateway(&store, "mock", multilevel_scenario(&ds, &cats, &|_| "Learning".into()));
    match generate_multilevel(
        ctx,
        &gw,
        &ds,
        &GenerationSettings::default(),
        &MultilevelSettings::default(),
        &AnnotationSettings::default(),
    ) {
        Err(GenerationError::RunFailed { run_id, .. }) => {
            let run: GenerationRun = store.get(&format!("generation/{run_id}")).unwrap();
            let f = run.failure.unwrap();
            assert!(f.violations.iter().any(|v| v.rule == Rule::TooManyChildren));
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn changed_level_one_labels_are_rejected_when_frozen() {
    let (_d, store) = open();
    let clock = FixedClock::epoch();
    let ctx = Context::new(&store, &clock);
    let ds = dataset(20);
    let mut cats = two_level(&[(0, &["a", "b", "c"])]);
    cats[4].label = "Fun".into();
    let gw = gateway(&store, "mock", multilevel_scenario(&ds, &cats, &|_| "Learning".into()));
    let ml = MultilevelSettings {
        frozen: Some(reference_taxonomy()),
        ..MultilevelSettings::default()
    };
    assert!(matches!(
        generate_multilevel(ctx, &gw, &ds, &GenerationSettings::default(), &ml, &AnnotationSettings::default()),
        Err(GenerationError::RunFailed { .. })
    ));
}
