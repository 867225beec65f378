use super::{canonicalize_label, path_display, validate_taxonomy, Bounds, Category, Taxonomy, Violation};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExampleKind {
    Positive,
    Negative,
}

/// A single validation-phase change to a taxonomy. Categories are addressed by
/// label path (`["Leisure"]`, `["Information Retrieval", "Look for review"]`),
/// matched on canonical form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    AddCategory {
        #[serde(default)]
        parent: Vec<String>,
        category: Category,
    },
    RemoveCategory {
        path: Vec<String>,
    },
    RenameCategory {
        path: Vec<String>,
        to: String,
    },
    ReviseDescription {
        path: Vec<String>,
        description: String,
    },
    AddExample {
        path: Vec<String>,
        kind: ExampleKind,
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditRecord {
    pub version: u32,
    pub edit: Edit,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EditError {
    #[error("no category at {0:?}")]
    NotFound(String),
    #[error("example already present on {0:?}")]
    DuplicateExample(String),
    #[error("edit would leave the taxonomy invalid: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
}

fn locate<'a>(cats: &'a mut Vec<Category>, path: &[String]) -> Option<(&'a mut Vec<Category>, usize)> {
    let (first, rest) = path.split_first()?;
    let key = canonicalize_label(first);
    let idx = cats.iter().position(|c| canonicalize_label(&c.label) == key)?;
    if rest.is_empty() {
        Some((cats, idx))
    } else {
        locate(&mut cats[idx].children, rest)
    }
}

/// Applies `edit` to a copy of `t`, returning version `t.version + 1`.
///
/// The input is never modified. Edits that target a missing category or that
/// would break a structural invariant are rejected.
pub fn apply_edit(t: &Taxonomy, edit: &Edit, bounds: &Bounds) -> Result<Taxonomy, EditError> {
    let mut next = t.clone();
    match edit {
        Edit::AddCategory { parent, category } => {
            if parent.is_empty() {
                next.categories.push(category.clone());
            } else {
                let (siblings, idx) = locate(&mut next.categories, parent)
                    .ok_or_else(|| EditError::NotFound(path_display(parent)))?;
                siblings[idx].children.push(category.clone());
                next.depth = next.depth.max(2);
            }
        }
        Edit::RemoveCategory { path } => {
            let (siblings, idx) = locate(&mut next.categories, path)
                .ok_or_else(|| EditError::NotFound(path_display(path)))?;
            siblings.remove(idx);
        }
        Edit::RenameCategory { path, to } => {
            let (siblings, idx) = locate(&mut next.categories, path)
                .ok_or_else(|| EditError::NotFound(path_display(path)))?;
            siblings[idx].label = to.trim().to_string();
        }
        Edit::ReviseDescription { path, description } => {
            let (siblings, idx) = locate(&mut next.categories, path)
                .ok_or_else(|| EditError::NotFound(path_display(path)))?;
            siblings[idx].description = description.clone();
        }
        Edit::AddExample { path, kind, text } => {
            let (siblings, idx) = locate(&mut next.categories, path)
                .ok_or_else(|| EditError::NotFound(path_display(path)))?;
            let list = match kind {
                ExampleKind::Positive => &mut siblings[idx].positive_examples,
                ExampleKind::Negative => &mut siblings[idx].negative_examples,
            };
            let key = canonicalize_label(text);
            if list.iter().any(|e| canonicalize_label(e) == key) {
                return Err(EditError::DuplicateExample(path_display(path)));
            }
            list.push(text.clone());
        }
    }
    let violations = validate_taxonomy(&next, bounds);
    if !violations.is_empty() {
        return Err(EditError::Invalid(violations));
    }
    next.version = t.version + 1;
    next.provenance.edits.push(EditRecord {
        version: next.version,
        edit: edit.clone(),
    });
    Ok(next)
}
