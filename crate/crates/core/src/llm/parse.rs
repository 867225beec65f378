//! Turning raw model text into typed artifacts.
//!
//! Taxonomy responses are parsed strictly first: the prompts ask for a JSON
//! document `{"categories": [...]}`, optionally wrapped in a code fence or
//! surrounded by chatter. If no such document can be read, a lenient pass
//! extracts categories from headed prose:
//!
//! * a heading is an unindented line starting with `N.`/`N)` or `#`; the
//!   label ends at the first `:` or ` - `, and the rest starts the description;
//! * unindented plain lines extend the current description, and a
//!   `Description:` line replaces it;
//! * bullet lines (`-`, `*`, `•`, or indented numbers) are examples, negative
//!   when they follow a line mentioning "negative" or "not", positive otherwise.
//!
//! Whatever route produced it, the taxonomy must pass [`validate_taxonomy`];
//! otherwise the caller gets a [`ParseFailure`] holding the raw text, the
//! violations and the recovered (invalid) taxonomy for inspection.

use crate::taxonomy::{
    canonicalize_label, resolve_alias, validate_taxonomy, AliasTable, Bounds, Category, Resolution, Taxonomy, Violation,
    OTHER, PATH_SEPARATOR,
};
use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseMode {
    Strict,
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseFailure {
    pub raw: String,
    /// The route that got furthest, if any produced a taxonomy.
    pub mode: Option<ParseMode>,
    pub reason: String,
    #[serde(default)]
    pub violations: Vec<Violation>,
    #[serde(default)]
    pub recovered: Option<Taxonomy>,
}

impl std::fmt::Display for ParseFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.reason)?;
        for v in &self.violations {
            write!(f, "; {v}")?;
        }
        Ok(())
    }
}

#[derive(Deserialize)]
struct Document {
    categories: Vec<Category>,
}

/// Reads a JSON value from a reply that may wrap it in a code fence or
/// surrounding prose, trying the whole text and then the outermost braces.
pub fn extract_json<T: DeserializeOwned>(raw: &str) -> Option<T> {
    let text = raw.trim();
    if let Ok(v) = serde_json::from_str(text) {
        return Some(v);
    }
    let start = text.find('{')?;
    let end = text.rfind('}')?;
    if end <= start {
        return None;
    }
    serde_json::from_str(&text[start..=end]).ok()
}

fn strict_categories(raw: &str) -> Option<Vec<Category>> {
    if let Some(doc) = extract_json::<Document>(raw) {
        return Some(doc.categories);
    }
    serde_json::from_str::<Vec<Category>>(raw.trim()).ok()
}

fn heading_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:#{1,6}\s*(?:\d+[.)]\s*)?|\d+[.)]\s+)(.+)$").expect("valid regex"))
}

fn bullet_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(?:[-*•]|\d+[.)])\s+(.+)$").expect("valid regex"))
}

fn strip_decoration(s: &str) -> String {
    s.trim()
        .trim_matches(|c: char| c == '*' || c == '_' || c == '`')
        .trim()
        .to_string()
}

fn unquote(s: &str) -> String {
    let t = strip_decoration(s);
    t.trim_matches(|c: char| matches!(c, '"' | '\'' | '“' | '”' | '‘' | '’'))
        .trim()
        .to_string()
}

fn split_heading(rest: &str) -> (String, String) {
    let rest = rest.replace("**", "");
    let cut = [":", " - ", " – ", " — "]
        .iter()
        .filter_map(|sep| rest.find(sep).map(|i| (i, sep.len())))
        .min();
    match cut {
        Some((i, len)) => (strip_decoration(&rest[..i]), rest[i + len..].trim().to_string()),
        None => (strip_decoration(&rest), String::new()),
    }
}

#[derive(PartialEq)]
enum Section {
    Description,
    Positive,
    Negative,
}

fn lenient_categories(raw: &str) -> Vec<Category> {
    let mut cats: Vec<Category> = Vec::new();
    let mut section = Section::Description;
    for line in raw.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let unindented = !line.starts_with(char::is_whitespace);
        if unindented {
            if let Some(cap) = heading_re().captures(line.trim_end()) {
                let (label, description) = split_heading(&cap[1]);
                if !label.is_empty() {
                    cats.push(Category::new(label, description));
                    section = Section::Description;
                    continue;
                }
            }
        }
        let Some(cat) = cats.last_mut() else { continue };
        if let Some(cap) = bullet_re().captures(line) {
            let item = cap[1].trim();
            // "- Negative examples:" style sub-headings inside bullet lists.
            if item.ends_with(':') && item.to_lowercase().contains("example") {
                section = section_for(item);
                continue;
            }
            let text = unquote(item);
            if text.is_empty() {
                continue;
            }
            match section {
                Section::Negative => cat.negative_examples.push(text),
                _ => cat.positive_examples.push(text),
            }
            continue;
        }
        let plain = strip_decoration(line);
        let lower = plain.to_lowercase();
        if let Some(desc) = lower.strip_prefix("description:").map(|_| plain["description:".len()..].trim()) {
            cat.description = desc.to_string();
            section = Section::Description;
        } else if lower.contains("example") && plain.contains(':') {
            section = section_for(&plain);
            let (_, inline) = plain.split_once(':').expect("checked");
            for ex in inline.split(';').map(unquote).filter(|e| !e.is_empty()) {
                match section {
                    Section::Negative => cat.negative_examples.push(ex),
                    _ => cat.positive_examples.push(ex),
                }
            }
        } else if section == Section::Description {
            if !cat.description.is_empty() {
                cat.description.push(' ');
            }
            cat.description.push_str(plain.trim());
        }
    }
    cats
}

fn section_for(header: &str) -> Section {
    let lower = header.to_lowercase();
    if lower.contains("negative") || lower.contains("not ") || lower.starts_with("not") {
        Section::Negative
    } else {
        Section::Positive
    }
}

/// Parses a taxonomy reply into a version-1 taxonomy with the given id.
pub fn parse_taxonomy_response(raw: &str, id: &str, bounds: &Bounds) -> Result<(Taxonomy, ParseMode), ParseFailure> {
    let (cats, mode) = match strict_categories(raw) {
        Some(c) => (c, ParseMode::Strict),
        None => {
            let c = lenient_categories(raw);
            if c.is_empty() {
                return Err(ParseFailure {
                    raw: raw.to_string(),
                    mode: None,
                    reason: "no JSON document and no recognizable category headings".into(),
                    violations: Vec::new(),
                    recovered: None,
                });
            }
            (c, ParseMode::Lenient)
        }
    };
    let taxonomy = Taxonomy::new(id, cats);
    let violations = validate_taxonomy(&taxonomy, bounds);
    if violations.is_empty() {
        Ok((taxonomy, mode))
    } else {
        Err(ParseFailure {
            raw: raw.to_string(),
            mode: Some(mode),
            reason: format!("parsed taxonomy has {} structural violation(s)", violations.len()),
            violations,
            recovered: Some(taxonomy),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotationParse {
    Label { label: String },
    Other,
    Failure { raw: String, canonical: String },
}

impl AnnotationParse {
    /// The label to store, `Other` included; `None` for failures.
    pub fn label(&self) -> Option<&str> {
        match self {
            AnnotationParse::Label { label } => Some(label),
            AnnotationParse::Other => Some(OTHER),
            AnnotationParse::Failure { .. } => None,
        }
    }
}

fn clean_label_line(raw: &str) -> String {
    let line = raw.lines().map(str::trim).find(|l| !l.is_empty()).unwrap_or("");
    let mut s = strip_decoration(line);
    for prefix in ["label:", "intent:", "answer:", "category:"] {
        if s.to_lowercase().starts_with(prefix) {
            s = s[prefix.len()..].trim().to_string();
        }
    }
    let s = unquote(&s);
    s.trim_end_matches('.').trim().to_string()
}

/// Matches a reply against `allowed` (canonical form, then aliases). A reply
/// naming only a level-2 label is accepted when that label is unique.
/// Anything unrecognized is a failure, never silently mapped to `Other`.
pub fn parse_annotation_response(raw: &str, allowed: &[String], aliases: &AliasTable) -> AnnotationParse {
    let cleaned = clean_label_line(raw);
    let canonical = canonicalize_label(&cleaned);
    if canonical == canonicalize_label(OTHER) {
        return AnnotationParse::Other;
    }
    if let Resolution::Resolved(label) = resolve_alias(&cleaned, aliases, allowed) {
        if allowed.contains(&label) {
            return AnnotationParse::Label { label };
        }
        if canonicalize_label(&label) == canonicalize_label(OTHER) {
            return AnnotationParse::Other;
        }
    }
    let leaf_hits: Vec<&String> = allowed
        .iter()
        .filter(|a| {
            a.rsplit_once(PATH_SEPARATOR)
                .is_some_and(|(_, leaf)| canonicalize_label(leaf) == canonical)
        })
        .collect();
    if let [only] = leaf_hits.as_slice() {
        return AnnotationParse::Label {
            label: (*only).clone(),
        };
    }
    AnnotationParse::Failure {
        raw: raw.to_string(),
        canonical,
    }
}
