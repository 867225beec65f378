//! Synthetic search and chat logs with known intents, and a matching
//! scripted-provider scenario, for exercising the whole pipeline offline.
//!
//! The corpus has 1,000 records: 430 search queries and 570 chat exchanges.
//! Information retrieval and advice seeking are split almost evenly between
//! modalities with a slight lean to search; creating, learning and leisure
//! lean heavily to chat.

use crate::dataset::{seeded_shuffle, Dataset, LogRecord, RecordId, Speaker, Turn};
use crate::llm::{Purpose, Scenario, ScenarioEntry};
use crate::taxonomy::{AliasTable, Category};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

pub const ADVICE: &str = "Ask for Advice or Recommendation";
pub const CREATE: &str = "Create";
pub const INFORMATION_RETRIEVAL: &str = "Information Retrieval";
pub const LEARN: &str = "Learn";
pub const LEISURE: &str = "Leisure";

pub const INTENTS: [&str; 5] = [ADVICE, CREATE, INFORMATION_RETRIEVAL, LEARN, LEISURE];

/// `(intent, search records, chat records)`.
pub const MIX: [(&str, usize, usize); 5] = [
    (ADVICE, 110, 95),
    (CREATE, 25, 75),
    (INFORMATION_RETRIEVAL, 230, 200),
    (LEARN, 50, 145),
    (LEISURE, 15, 55),
];

const TOPICS: [&str; 12] = [
    "solar panels",
    "the roman empire",
    "sourdough bread",
    "electric cars",
    "black holes",
    "knitting",
    "the stock market",
    "jazz piano",
    "house plants",
    "marathon training",
    "machine learning",
    "volcanoes",
];

const PLACES: [&str; 8] = ["Lisbon", "Osaka", "Denver", "Nairobi", "Oslo", "Lima", "Perth", "Quebec"];

fn search_text(intent: &str, rng: &mut ChaCha8Rng) -> String {
    let topic = TOPICS[rng.random_range(0..TOPICS.len())];
    let place = PLACES[rng.random_range(0..PLACES.len())];
    let templates: &[&str] = match intent {
        ADVICE => &["best {t} for beginners", "should i buy {t} or wait", "{t} recommendations {p}"],
        CREATE => &["write a poem about {t}", "{t} essay outline", "caption ideas for {t} photo"],
        INFORMATION_RETRIEVAL => &["{t} near {p}", "{p} weather tomorrow", "when was {t} invented", "{t} price {p}"],
        LEARN => &["how does {t} work", "{t} explained simply", "history of {t} lesson"],
        _ => &["{t} trivia quiz", "funny {t} memes", "play a game about {t}"],
    };
    templates[rng.random_range(0..templates.len())]
        .replace("{t}", topic)
        .replace("{p}", place)
}

fn chat_turns(intent: &str, rng: &mut ChaCha8Rng) -> Vec<Turn> {
    let topic = TOPICS[rng.random_range(0..TOPICS.len())];
    let place = PLACES[rng.random_range(0..PLACES.len())];
    let (ask, reply): (&[&str], &str) = match intent {
        ADVICE => (
            &[
                "I'm choosing between two options for {t}. Which would you recommend?",
                "What would you suggest for someone getting into {t} in {p}?",
            ],
            "Here are a few things to weigh before deciding.",
        ),
        CREATE => (
            &[
                "Can you write a short story that involves {t}?",
                "Please draft a blog post introduction about {t}.",
                "Rewrite my paragraph about {t} so it sounds more formal.",
            ],
            "Here is a draft you can adjust.",
        ),
        INFORMATION_RETRIEVAL => (
            &[
                "What are the opening hours for {t} exhibits in {p}?",
                "Find me the current statistics on {t}.",
                "Where can I find official information about {t} in {p}?",
            ],
            "Here is what I found.",
        ),
        LEARN => (
            &[
                "Can you explain the basics of {t} step by step?",
                "I want to understand why {t} behaves the way it does. Teach me.",
                "Help me study {t} for my exam next week.",
            ],
            "Let's start with the core idea.",
        ),
        _ => (
            &[
                "Let's play a guessing game about {t}!",
                "Tell me a funny story about {t}.",
                "I'm bored, chat with me about {t}.",
            ],
            "Sounds fun, let's go.",
        ),
    };
    let text = ask[rng.random_range(0..ask.len())]
        .replace("{t}", topic)
        .replace("{p}", place);
    vec![
        Turn {
            speaker: Speaker::User,
            text,
        },
        Turn {
            speaker: Speaker::Ai,
            text: reply.to_string(),
        },
    ]
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub records: Vec<LogRecord>,
    /// True intent of every record.
    pub truth: BTreeMap<RecordId, String>,
}

impl SyntheticCorpus {
    pub fn dataset(&self) -> Dataset {
        Dataset::new(self.records.clone())
    }

    pub fn to_jsonl(&self) -> String {
        self.dataset().to_jsonl()
    }
}

/// Builds the 1,000-record corpus; record order and texts depend only on `seed`.
pub fn synthetic_corpus(seed: u64) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut drafts: Vec<(String, LogRecord)> = Vec::new();
    for (intent, searches, chats) in MIX {
        for _ in 0..searches {
            drafts.push((intent.to_string(), LogRecord::search("", search_text(intent, &mut rng))));
        }
        for _ in 0..chats {
            drafts.push((intent.to_string(), LogRecord::chat("", chat_turns(intent, &mut rng))));
        }
    }
    seeded_shuffle(&mut drafts, seed);
    let mut truth = BTreeMap::new();
    let records = drafts
        .into_iter()
        .enumerate()
        .map(|(i, (intent, mut r))| {
            r.id = format!("r-{:04}", i + 1);
            truth.insert(r.id.clone(), intent);
            r
        })
        .collect();
    SyntheticCorpus { records, truth }
}

fn intent_category(label: &str, variant: usize) -> Category {
    let (desc, example) = match label {
        ADVICE => ("The user wants a recommendation, an opinion or guidance on a choice.", "which running shoes suit flat feet"),
        CREATE => ("The user wants new text or media produced or existing text rewritten.", "write a toast for my sister's wedding"),
        INFORMATION_RETRIEVAL => ("The user wants to find facts, data or resources that already exist.", "train times from Oslo to Bergen"),
        LEARN => ("The user wants to understand a concept or build a skill.", "explain photosynthesis like I'm twelve"),
        LEISURE => ("The user wants entertainment, play or casual conversation.", "tell me a riddle"),
        _ => ("The user wants to make small talk with the assistant.", "how are you today"),
    };
    let desc = if variant % 2 == 0 {
        desc.to_string()
    } else {
        desc.replace("The user wants", "Requests seeking")
    };
    Category::new(label, desc).with_examples([example])
}

/// Alias mapping the variant spellings in [`generation_reply`] back to intents.
pub fn synthetic_aliases() -> AliasTable {
    AliasTable::new().with("Information Seeking", INFORMATION_RETRIEVAL)
}

/// A scripted taxonomy reply. Variant 2 swaps leisure for small talk and
/// variant 3 spells information retrieval as "Information Seeking".
pub fn generation_reply(variant: usize) -> String {
    let cats: Vec<Category> = INTENTS
        .iter()
        .map(|&l| match (variant, l) {
            (2, LEISURE) => intent_category("Small Talk", variant),
            (3, INFORMATION_RETRIEVAL) => {
                let mut c = intent_category(l, variant);
                c.label = "Information Seeking".into();
                c
            }
            _ => intent_category(l, variant),
        })
        .collect();
    serde_json::json!({ "categories": cats }).to_string()
}

/// A clarity reply giving every intent one or two negative examples.
pub fn clarity_reply() -> String {
    let neg = |label: &str| -> Vec<&str> {
        match label {
            ADVICE => vec!["what year did the berlin wall fall"],
            CREATE => vec!["summarize what this article says", "find the lyrics of a song"],
            INFORMATION_RETRIEVAL => vec!["teach me how interest compounds"],
            LEARN => vec!["what time does the pharmacy close"],
            _ => vec!["write my cover letter"],
        }
    };
    let cats: Vec<serde_json::Value> = INTENTS
        .iter()
        .map(|l| serde_json::json!({ "label": l, "negative_examples": neg(l) }))
        .collect();
    serde_json::json!({ "categories": cats }).to_string()
}

/// Annotation reply for one record. Formatting varies with the record index
/// so the reply parser's cleanup is exercised.
pub fn annotation_reply(index: usize, label: &str) -> String {
    match index % 7 {
        3 => format!("Label: {label}."),
        5 => format!("\"{}\"", label.to_lowercase()),
        _ => label.to_string(),
    }
}

/// A cycling scenario: `generation_runs` taxonomy replies, one clarity reply
/// and a keyed annotation reply carrying each record's true intent.
pub fn pipeline_scenario(corpus: &SyntheticCorpus, generation_runs: usize) -> Scenario {
    let mut s = Scenario::new("synthetic-pipeline");
    s.cycle = true;
    for v in 0..generation_runs {
        s.push(ScenarioEntry::respond(Purpose::GenerateTaxonomy, generation_reply(v)));
    }
    s.push(ScenarioEntry::respond(Purpose::ExpandClarity, clarity_reply()));
    for (i, r) in corpus.records.iter().enumerate() {
        let label = &corpus.truth[&r.id];
        s.push(ScenarioEntry::keyed(Purpose::Annotate, r.id.clone(), annotation_reply(i, label)));
    }
    s
}
