//! Taxonomy data model.
//!
//! A [`Taxonomy`] is an immutable value: editing produces a new version (see
//! [`apply_edit`]). Serialization goes through [`Taxonomy::to_document`],
//! which emits pretty-printed JSON with a fixed field order so that
//! successive versions diff cleanly.

mod edit;
mod label;
mod validate;

pub use edit::{apply_edit, Edit, EditError, EditRecord, ExampleKind};
pub use label::{canonicalize_label, resolve_alias, AliasError, AliasTable, Resolution};
pub use validate::{validate_taxonomy, Bounds, Rule, Violation};

use serde::{Deserialize, Serialize};
use std::fmt;

/// The reserved fallback label. Never a [`Category`].
pub const OTHER: &str = "Other";

/// Separator used when a level-2 category is referenced by its full path.
pub const PATH_SEPARATOR: &str = " > ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Category {
    pub label: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub positive_examples: Vec<String>,
    #[serde(default)]
    pub negative_examples: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Category>,
}

impl Category {
    pub fn new(label: impl Into<String>, description: impl Into<String>) -> Self {
        Self {
            label: label.into(),
            description: description.into(),
            positive_examples: Vec::new(),
            negative_examples: Vec::new(),
            children: Vec::new(),
        }
    }

    pub fn with_examples<I, S>(mut self, examples: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.positive_examples
            .extend(examples.into_iter().map(Into::into));
        self
    }

    pub fn with_negatives<I, S>(mut self, examples: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.negative_examples
            .extend(examples.into_iter().map(Into::into));
        self
    }

    pub fn with_children(mut self, children: Vec<Category>) -> Self {
        self.children = children;
        self
    }
}

/// Identifies one frozen version of a taxonomy. Rendered as `id@version`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TaxonomyRef {
    pub id: String,
    pub version: u32,
}

impl TaxonomyRef {
    pub fn new(id: impl Into<String>, version: u32) -> Self {
        Self {
            id: id.into(),
            version,
        }
    }

    pub fn store_key(&self) -> String {
        format!("taxonomy/{}@{}", self.id, self.version)
    }
}

impl fmt::Display for TaxonomyRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}@{}", self.id, self.version)
    }
}

impl std::str::FromStr for TaxonomyRef {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (id, version) = s
            .rsplit_once('@')
            .ok_or_else(|| format!("expected ID@VERSION, got {s:?}"))?;
        if id.is_empty() {
            return Err(format!("empty taxonomy id in {s:?}"));
        }
        let version = version
            .parse()
            .map_err(|_| format!("invalid version in {s:?}"))?;
        Ok(Self::new(id, version))
    }
}

/// Where a taxonomy version came from.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    #[serde(default)]
    pub source_runs: Vec<String>,
    #[serde(default)]
    pub llm: Option<String>,
    #[serde(default)]
    pub prompt_template: Option<String>,
    #[serde(default)]
    pub created_at: Option<String>,
    #[serde(default)]
    pub edits: Vec<EditRecord>,
    #[serde(default)]
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub id: String,
    pub version: u32,
    pub depth: u8,
    pub categories: Vec<Category>,
    #[serde(default)]
    pub provenance: Provenance,
}

impl Taxonomy {
    /// A version-1 taxonomy. Depth is inferred from the presence of children.
    pub fn new(id: impl Into<String>, categories: Vec<Category>) -> Self {
        let depth = if categories.iter().any(|c| !c.children.is_empty()) {
            2
        } else {
            1
        };
        Self {
            id: id.into(),
            version: 1,
            depth,
            categories,
            provenance: Provenance::default(),
        }
    }

    pub fn reference(&self) -> TaxonomyRef {
        TaxonomyRef::new(self.id.clone(), self.version)
    }

    pub fn labels(&self) -> Vec<String> {
        self.categories.iter().map(|c| c.label.clone()).collect()
    }

    /// Labels an annotator may emit: level-1 labels, plus `Parent > Child`
    /// paths for level-2 categories. `Other` is not included.
    pub fn annotation_labels(&self) -> Vec<String> {
        let mut out = Vec::new();
        for c in &self.categories {
            out.push(c.label.clone());
            for child in &c.children {
                out.push(format!("{}{}{}", c.label, PATH_SEPARATOR, child.label));
            }
        }
        out
    }

    pub fn find(&self, path: &[String]) -> Option<&Category> {
        let (first, rest) = path.split_first()?;
        let key = canonicalize_label(first);
        let mut node = self
            .categories
            .iter()
            .find(|c| canonicalize_label(&c.label) == key)?;
        for part in rest {
            let key = canonicalize_label(part);
            node = node
                .children
                .iter()
                .find(|c| canonicalize_label(&c.label) == key)?;
        }
        Some(node)
    }

    /// Visits every category depth-first together with its label path.
    pub fn walk(&self) -> Vec<(Vec<String>, &Category)> {
        fn go<'a>(prefix: &[String], cats: &'a [Category], out: &mut Vec<(Vec<String>, &'a Category)>) {
            for c in cats {
                let mut path = prefix.to_vec();
                path.push(c.label.clone());
                out.push((path.clone(), c));
                go(&path, &c.children, out);
            }
        }
        let mut out = Vec::new();
        go(&[], &self.categories, &mut out);
        out
    }

    /// Canonical document form: UTF-8 JSON, fixed field order, trailing newline.
    pub fn to_document(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("taxonomy serializes");
        s.push('\n');
        s
    }

    pub fn from_document(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// The categories-only JSON block embedded in prompts.
    pub fn prompt_block(&self) -> String {
        #[derive(Serialize)]
        struct Block<'a> {
            categories: &'a [Category],
        }
        serde_json::to_string_pretty(&Block {
            categories: &self.categories,
        })
        .expect("categories serialize")
    }
}

pub fn path_display(path: &[String]) -> String {
    path.join(PATH_SEPARATOR)
}
