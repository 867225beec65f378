//! Reference fixtures: a five-category intent taxonomy, two published
//! confusion grids and a bootstrap frequency table, plus helpers that expand
//! them into annotation runs and scripted generation scenarios.

use crate::annotation::{AnnotationRun, Rater};
use crate::dataset::RecordId;
use crate::llm::{Purpose, Scenario, ScenarioEntry};
use crate::taxonomy::{AliasTable, Category, Taxonomy, TaxonomyRef, OTHER};
use std::collections::BTreeMap;

pub const INFORMATION_RETRIEVAL: &str = "Information retrieval";
pub const PROBLEM_SOLVING: &str = "Problem solving";
pub const LEARNING: &str = "Learning";
pub const CONTENT_CREATION: &str = "Content creation";
pub const LEISURE: &str = "Leisure";

/// Short codes used by the confusion grids, in grid order.
pub const CODES: [(&str, &str); 6] = [
    ("IR", INFORMATION_RETRIEVAL),
    ("PS", PROBLEM_SOLVING),
    ("LR", LEARNING),
    ("CR", CONTENT_CREATION),
    ("LS", LEISURE),
    ("OT", OTHER),
];

pub fn label_for_code(code: &str) -> Option<&'static str> {
    CODES.iter().find(|(c, _)| *c == code).map(|(_, l)| *l)
}

/// The five-category taxonomy the grids are labelled with.
pub fn reference_taxonomy() -> Taxonomy {
    let cats = vec![
        Category::new(
            INFORMATION_RETRIEVAL,
            "The user wants to search, query, or find some information, data, or resources about a topic.",
        )
        .with_examples([
            "Find out the airing dates and channels of women's world cup",
            "Search for information about a phone number",
            "Search for corruption and unemployment statistics for a country",
        ]),
        Category::new(
            PROBLEM_SOLVING,
            "The user wants to perform a mathematical or logical operation, such as a conversion, a percentage, a formula, or a function.",
        )
        .with_examples([
            "Compare interest rates for savings accounts",
            "Calculate the distance between a point and a line",
            "Convert a message from Chinese to English",
        ]),
        Category::new(
            LEARNING,
            "The user wants to learn, study, or acquire new skills, concepts, or understanding about a subject.",
        )
        .with_examples([
            "Learn about different structural systems",
            "Compare GPT-3 and GPT-4 versions",
            "Explain the difference between Newtonian and non-Newtonian flow",
        ]),
        Category::new(
            CONTENT_CREATION,
            "The user wants to write or edit a text for a specific purpose or audience.",
        )
        .with_examples([
            "Write an introduction about geothermal energy",
            "Modify a poem into different formats",
            "Improve a report and find adverbs and connectors",
        ]),
        Category::new(
            LEISURE,
            "The user wants to chat or interact with the AI or another agent about various topics or play a game.",
        )
        .with_examples([
            "Ask about the AI's name",
            "Listen to a romantic story",
            "Play a word game",
        ]),
    ];
    let mut t = Taxonomy::new("intent-reference", cats);
    t.provenance.notes.push("reference fixture".into());
    t
}

/// Two human annotators over 123 segments; rows first annotator, columns
/// second, codes IR, PS, LR, CR, LS.
pub const ANNOTATOR_GRID: [[u64; 5]; 5] = [
    [42, 2, 10, 0, 0],
    [0, 8, 0, 4, 0],
    [3, 0, 36, 0, 0],
    [0, 0, 0, 8, 0],
    [1, 0, 0, 0, 9],
];

/// Triaged human labels (rows) against an LLM (columns) over 124 segments;
/// codes IR, PS, LR, CR, LS, OT.
pub const HUMAN_LLM_GRID: [[u64; 6]; 6] = [
    [46, 1, 5, 0, 0, 1],
    [0, 8, 2, 0, 0, 0],
    [12, 3, 26, 1, 0, 0],
    [0, 0, 0, 10, 0, 0],
    [0, 0, 3, 0, 5, 0],
    [1, 0, 0, 0, 0, 0],
];

/// Expands a grid into aligned label pairs, one per segment, row-major.
pub fn expand_grid<const N: usize>(grid: &[[u64; N]; N], prefix: &str) -> Vec<(RecordId, String, String)> {
    let mut out = Vec::new();
    for (i, row) in grid.iter().enumerate() {
        for (j, &n) in row.iter().enumerate() {
            for _ in 0..n {
                out.push((
                    format!("{prefix}-{:03}", out.len() + 1),
                    CODES[i].1.to_string(),
                    CODES[j].1.to_string(),
                ));
            }
        }
    }
    out
}

fn runs_from_pairs(pairs: &[(RecordId, String, String)], a: (&str, Rater), b: (&str, Rater)) -> (AnnotationRun, AnnotationRun) {
    let tref: TaxonomyRef = reference_taxonomy().reference();
    let left: Vec<(RecordId, String)> = pairs.iter().map(|(id, l, _)| (id.clone(), l.clone())).collect();
    let right: Vec<(RecordId, String)> = pairs.iter().map(|(id, _, r)| (id.clone(), r.clone())).collect();
    let at = "1970-01-01T00:00:00.000Z".to_string();
    (
        AnnotationRun::from_labels(a.0, a.1, tref.clone(), &left, at.clone()),
        AnnotationRun::from_labels(b.0, b.1, tref, &right, at),
    )
}

/// Runs `ann-a1` and `ann-a2` reproducing [`ANNOTATOR_GRID`].
pub fn annotator_runs() -> (AnnotationRun, AnnotationRun) {
    runs_from_pairs(
        &expand_grid(&ANNOTATOR_GRID, "seg"),
        ("ann-a1", Rater::Human { assessor: "a1".into() }),
        ("ann-a2", Rater::Human { assessor: "a2".into() }),
    )
}

/// Runs `ann-human` (majority of three assessors) and `ann-gpt4`
/// reproducing [`HUMAN_LLM_GRID`].
pub fn human_llm_runs() -> (AnnotationRun, AnnotationRun) {
    runs_from_pairs(
        &expand_grid(&HUMAN_LLM_GRID, "conv"),
        (
            "ann-human",
            Rater::Consensus {
                method: "majority".into(),
                sources: vec!["h1".into(), "h2".into(), "h3".into()],
            },
        ),
        (
            "ann-gpt4",
            Rater::Llm {
                provider: "openai".into(),
                model: "gpt-4".into(),
            },
        ),
    )
}

pub const BOOTSTRAP_PROVIDERS: [&str; 3] = ["gpt-4", "mistral", "hermes"];
pub const BOOTSTRAP_RUNS: usize = 10;
pub const BOOTSTRAP_CATEGORIES: usize = 5;

/// Category labels of the bootstrap frequency table, in table order.
pub const BOOTSTRAP_LABELS: [&str; 8] = [
    "Information retrieval/seeking/finding",
    "Problem solving",
    "Learning",
    "Content creation",
    "Leisure/Entertainment",
    "Ask for advice/opinion",
    "Chat",
    "Verify",
];

/// Runs (out of ten) per provider containing each label, aligned with
/// [`BOOTSTRAP_LABELS`] and [`BOOTSTRAP_PROVIDERS`].
pub const BOOTSTRAP_COUNTS: [[usize; 3]; 8] = [
    [10, 9, 10],
    [9, 8, 8],
    [8, 10, 9],
    [9, 8, 8],
    [8, 10, 7],
    [3, 2, 4],
    [3, 1, 2],
    [0, 2, 2],
];

/// The five most frequent bootstrap labels.
pub fn bootstrap_top_five() -> Vec<String> {
    BOOTSTRAP_LABELS[..5].iter().map(|s| s.to_string()).collect()
}

pub fn bootstrap_reference() -> Vec<String> {
    BOOTSTRAP_LABELS.iter().map(|s| s.to_string()).collect()
}

/// Variant spellings some scripted runs emit instead of the table label.
pub const BOOTSTRAP_VARIANTS: [(&str, &str); 2] = [
    ("Finding", "Information retrieval/seeking/finding"),
    ("Enjoy", "Leisure/Entertainment"),
];

pub fn bootstrap_aliases() -> AliasTable {
    let mut t = AliasTable::new();
    for (alias, label) in BOOTSTRAP_VARIANTS {
        t.insert(alias, label).expect("fixture aliases are consistent");
    }
    t
}

/// Rebuilds the per-run label sets for one provider from its column of
/// counts: each run takes the five labels with the most remaining
/// occurrences, ties broken by label.
pub fn bootstrap_label_sets(provider: usize) -> Vec<Vec<String>> {
    let mut remaining: BTreeMap<&str, usize> = BOOTSTRAP_LABELS
        .iter()
        .zip(BOOTSTRAP_COUNTS.iter())
        .map(|(l, c)| (*l, c[provider]))
        .collect();
    let mut runs = Vec::with_capacity(BOOTSTRAP_RUNS);
    for _ in 0..BOOTSTRAP_RUNS {
        let mut ranked: Vec<(&str, usize)> = remaining.iter().map(|(l, c)| (*l, *c)).filter(|(_, c)| *c > 0).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let chosen: Vec<&str> = ranked.iter().take(BOOTSTRAP_CATEGORIES).map(|(l, _)| *l).collect();
        for l in &chosen {
            *remaining.get_mut(l).expect("chosen from remaining") -= 1;
        }
        let mut set: Vec<String> = chosen.into_iter().map(String::from).collect();
        set.sort_by_key(|l| BOOTSTRAP_LABELS.iter().position(|x| x == l));
        runs.push(set);
    }
    runs
}

fn bootstrap_category(label: &str, provider: &str, run: usize) -> Category {
    let base = BOOTSTRAP_VARIANTS
        .iter()
        .find(|(alias, _)| *alias == label)
        .map(|(_, l)| *l)
        .unwrap_or(label);
    let (what, example) = match base {
        "Information retrieval/seeking/finding" => ("look up facts or resources", "opening hours of the city library"),
        "Problem solving" => ("compute, convert or work out an answer", "convert 30 miles to kilometers"),
        "Learning" => ("understand a concept or build a skill", "explain how vaccines train the immune system"),
        "Content creation" => ("write or edit text for some purpose", "draft a cover letter for a nursing job"),
        "Leisure/Entertainment" => ("pass time, play or be entertained", "tell me a joke about cats"),
        "Ask for advice/opinion" => ("get a recommendation or an opinion", "which laptop should I buy for college"),
        "Chat" => ("talk casually with the assistant", "how is your day going"),
        _ => ("check whether a claim is true", "is it true that goldfish have short memories"),
    };
    Category::new(label, format!("The user wants to {what} ({provider} run {}).", run + 1)).with_examples([example])
}

/// Ten scripted taxonomy replies for one provider. Run 4 spells the
/// information label as "Finding" and run 7 the leisure label as "Enjoy";
/// run 2 lower-cases its labels.
pub fn bootstrap_scenario(provider: usize) -> Scenario {
    let name = BOOTSTRAP_PROVIDERS[provider];
    let mut scenario = Scenario::new(format!("bootstrap-{name}"));
    for (run, labels) in bootstrap_label_sets(provider).into_iter().enumerate() {
        let cats: Vec<Category> = labels
            .iter()
            .map(|l| {
                let spelled = match (run, l.as_str()) {
                    (3, "Information retrieval/seeking/finding") => "Finding".to_string(),
                    (6, "Leisure/Entertainment") => "Enjoy".to_string(),
                    (1, _) => l.to_lowercase(),
                    _ => l.clone(),
                };
                bootstrap_category(&spelled, name, run)
            })
            .collect();
        let reply = serde_json::json!({ "categories": cats }).to_string();
        scenario.push(ScenarioEntry::respond(Purpose::GenerateTaxonomy, reply));
    }
    scenario
}
