use super::{LlmError, Purpose};
use crate::taxonomy::Bounds;
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::sync::OnceLock;

pub const DATA_BLOCK: &str = "data_block";
pub const CRITERIA_BLOCK: &str = "criteria_block";
pub const CONSTRAINTS_BLOCK: &str = "constraints_block";
pub const TAXONOMY_BLOCK: &str = "taxonomy_block";
pub const NEGATIVE_EXAMPLES_FLAG: &str = "negative_examples_flag";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: String,
    pub purpose: Purpose,
    /// Text with `{{placeholder}}` markers.
    pub body: String,
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").expect("valid regex"))
}

impl PromptTemplate {
    pub fn new(id: impl Into<String>, purpose: Purpose, body: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            purpose,
            body: body.into(),
        }
    }

    /// Placeholder names referenced by the body, in first-use order.
    pub fn placeholders(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for cap in placeholder_re().captures_iter(&self.body) {
            let name = cap[1].to_string();
            if !out.contains(&name) {
                out.push(name);
            }
        }
        out
    }

    pub fn default_for(purpose: Purpose) -> Self {
        let (id, body) = match purpose {
            Purpose::GenerateTaxonomy => ("generate-taxonomy/v1", GENERATE_BODY),
            Purpose::GenerateMultilevel => ("generate-multilevel/v1", MULTILEVEL_BODY),
            Purpose::Annotate => ("annotate/v1", ANNOTATE_BODY),
            Purpose::ExpandClarity => ("expand-clarity/v1", CLARITY_BODY),
        };
        Self::new(id, purpose, body)
    }
}

/// Substitutes every `{{name}}` in the template. Unused bindings are ignored;
/// a referenced but unbound placeholder is an error naming it.
pub fn render_prompt(tpl: &PromptTemplate, bindings: &BTreeMap<String, String>) -> Result<String, LlmError> {
    if let Some(missing) = tpl.placeholders().into_iter().find(|p| !bindings.contains_key(p)) {
        return Err(LlmError::UnboundPlaceholder(missing));
    }
    let rendered = placeholder_re()
        .replace_all(&tpl.body, |cap: &regex::Captures<'_>| bindings[&cap[1]].clone())
        .into_owned();
    if rendered.trim().is_empty() {
        return Err(LlmError::EmptyPrompt(tpl.id.clone()));
    }
    Ok(rendered)
}

/// The taxonomy-quality criteria quoted into generation prompts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Criteria {
    pub items: Vec<(String, String)>,
}

impl Default for Criteria {
    fn default() -> Self {
        let items = [
            ("Comprehensiveness", "Every record in the data can be assigned to some category with confidence."),
            ("Consistency", "Categories do not contradict one another, so the same record always gets the same label."),
            ("Clarity", "Each label and description conveys one meaning that does not depend on outside context."),
            ("Accuracy", "Descriptions and examples correctly characterise the records placed in each category."),
            ("Conciseness", "No category is irrelevant to the user intents being studied."),
        ];
        Self {
            items: items.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect(),
        }
    }
}

impl Criteria {
    pub fn block(&self) -> String {
        self.items
            .iter()
            .enumerate()
            .map(|(i, (name, def))| format!("{}. {name}: {def}", i + 1))
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultilevelLimits {
    pub max_children: usize,
    pub min_support: usize,
}

pub fn constraints_block(bounds: &Bounds, multilevel: Option<MultilevelLimits>) -> String {
    let mut lines = vec![
        format!(
            "- Produce between {} and {} categories.",
            bounds.min_categories, bounds.max_categories
        ),
        format!("- Each label is at most {} words long.", bounds.max_label_words),
        "- Give every category a description and at least one positive example drawn from the data.".to_string(),
        "- Never create a category named \"Other\"; it is reserved for records that fit nowhere.".to_string(),
    ];
    match multilevel {
        None => lines.push("- Use a single level: no subcategories.".to_string()),
        Some(m) => {
            lines.push("- Use exactly two levels: top-level categories with subcategories in \"children\".".to_string());
            lines.push(format!("- No category may have more than {} children.", m.max_children));
            lines.push(format!(
                "- Every subcategory must be supported by at least {} records in the data; otherwise remove it or merge it with a sibling.",
                m.min_support
            ));
        }
    }
    lines.join("\n")
}

const GENERATE_BODY: &str = r#"We are building a taxonomy of user intents from interaction logs. Each record below is one user request to a search engine or an AI chat assistant; chat records may include the assistant's replies. The taxonomy will be used to label each request with the single intent it expresses.

A good taxonomy meets these criteria:
{{criteria_block}}

Constraints:
{{constraints_block}}
- Include negative examples (requests that look similar but belong elsewhere): {{negative_examples_flag}}

Data:
{{data_block}}

Respond with a single JSON document and nothing else:
{"categories": [{"label": "...", "description": "...", "positive_examples": ["..."], "negative_examples": ["..."]}]}
"#;

const MULTILEVEL_BODY: &str = r#"We are building a two-level taxonomy of user intents from interaction logs. Each record below is one user request to a search engine or an AI chat assistant.

A good taxonomy meets these criteria:
{{criteria_block}}

Constraints:
{{constraints_block}}
- Include negative examples: {{negative_examples_flag}}

Top-level categories to keep unchanged (empty means choose your own):
{{taxonomy_block}}

Data:
{{data_block}}

Respond with a single JSON document and nothing else, where each top-level category lists its subcategories under "children" using the same fields.
"#;

const ANNOTATE_BODY: &str = r#"Label the user request below with its intent, using this taxonomy:
{{taxonomy_block}}

Rules:
- Answer with exactly one label from the taxonomy, or "Other" if the request does not fit any of the provided labels.
- Label only what the request shows; do not guess at goals beyond the evidence.
- Reply with the label text only.

Request:
{{data_block}}
"#;

const CLARITY_BODY: &str = r#"Here is a taxonomy of user intents:
{{taxonomy_block}}

It must satisfy these criteria:
{{criteria_block}}

For every category, expand the description so its meaning is unambiguous and list negative examples: requests that could be mistaken for this category but belong to another one. Negative examples requested: {{negative_examples_flag}}

Respond with a single JSON document and nothing else:
{"categories": [{"label": "...", "description": "...", "negative_examples": ["..."]}]}
"#;
