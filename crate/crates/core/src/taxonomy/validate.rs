use super::{canonicalize_label, Category, Taxonomy, OTHER, PATH_SEPARATOR};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt;

/// Structural limits. Defaults: 4-6 top-level categories, at most 5 children
/// per node, labels of at most 5 words.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bounds {
    pub min_categories: usize,
    pub max_categories: usize,
    pub max_children: usize,
    pub max_label_words: usize,
}

impl Default for Bounds {
    fn default() -> Self {
        Self {
            min_categories: 4,
            max_categories: 6,
            max_children: 5,
            max_label_words: 5,
        }
    }
}

impl Bounds {
    pub fn categories(min: usize, max: usize) -> Self {
        Self {
            min_categories: min,
            max_categories: max,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rule {
    CategoryCount,
    EmptyLabel,
    LabelTooLong,
    DuplicateLabel,
    ReservedLabel,
    TooManyChildren,
    MissingExamples,
    TooDeep,
    DepthMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    /// Label path of the offending node; empty for the taxonomy root.
    pub path: String,
    pub rule: Rule,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.path.is_empty() {
            write!(f, "{}", self.message)
        } else {
            write!(f, "{}: {}", self.path, self.message)
        }
    }
}

/// Returns every structural violation; an empty list means the taxonomy is valid.
pub fn validate_taxonomy(t: &Taxonomy, bounds: &Bounds) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = t.categories.len();
    if n < bounds.min_categories {
        out.push(Violation {
            path: String::new(),
            rule: Rule::CategoryCount,
            message: format!("category count {n} < {}", bounds.min_categories),
        });
    }
    if n > bounds.max_categories {
        out.push(Violation {
            path: String::new(),
            rule: Rule::CategoryCount,
            message: format!("category count {n} > {}", bounds.max_categories),
        });
    }
    let has_children = t.categories.iter().any(|c| !c.children.is_empty());
    match t.depth {
        1 if has_children => out.push(Violation {
            path: String::new(),
            rule: Rule::DepthMismatch,
            message: "depth is 1 but categories have children".into(),
        }),
        1 | 2 => {}
        d => out.push(Violation {
            path: String::new(),
            rule: Rule::TooDeep,
            message: format!("depth {d} is not supported (1 or 2)"),
        }),
    }
    check_siblings(&t.categories, "", 1, bounds, &mut out);
    out
}

fn check_siblings(cats: &[Category], prefix: &str, level: usize, bounds: &Bounds, out: &mut Vec<Violation>) {
    let mut seen = BTreeSet::new();
    for c in cats {
        let path = if prefix.is_empty() {
            c.label.clone()
        } else {
            format!("{prefix}{PATH_SEPARATOR}{}", c.label)
        };
        let key = canonicalize_label(&c.label);
        if c.label.trim().is_empty() {
            out.push(Violation {
                path: path.clone(),
                rule: Rule::EmptyLabel,
                message: "label is empty".into(),
            });
        } else {
            let words = c.label.split_whitespace().count();
            if words > bounds.max_label_words {
                out.push(Violation {
                    path: path.clone(),
                    rule: Rule::LabelTooLong,
                    message: format!("label has {words} words > {}", bounds.max_label_words),
                });
            }
            if key == canonicalize_label(OTHER) {
                out.push(Violation {
                    path: path.clone(),
                    rule: Rule::ReservedLabel,
                    message: format!("{OTHER:?} is reserved and cannot be a category"),
                });
            }
            if !seen.insert(key) {
                out.push(Violation {
                    path: path.clone(),
                    rule: Rule::DuplicateLabel,
                    message: "duplicate label among siblings".into(),
                });
            }
        }
        if c.positive_examples.iter().all(|e| e.trim().is_empty()) {
            out.push(Violation {
                path: path.clone(),
                rule: Rule::MissingExamples,
                message: "no positive examples".into(),
            });
        }
        if c.children.len() > bounds.max_children {
            out.push(Violation {
                path: path.clone(),
                rule: Rule::TooManyChildren,
                message: format!("{} children > {}", c.children.len(), bounds.max_children),
            });
        }
        if !c.children.is_empty() {
            if level >= 2 {
                out.push(Violation {
                    path: path.clone(),
                    rule: Rule::TooDeep,
                    message: "taxonomies are limited to two levels".into(),
                });
            }
            check_siblings(&c.children, &path, level + 1, bounds, out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cat(label: &str) -> Category {
        Category::new(label, "desc").with_examples(["one", "two"])
    }

    fn flat(n: usize) -> Taxonomy {
        Taxonomy::new("t", (0..n).map(|i| cat(&format!("Cat {i}"))).collect())
    }

    #[test]
    fn five_categories_is_valid() {
        assert!(validate_taxonomy(&flat(5), &Bounds::default()).is_empty());
    }

    #[test]
    fn seven_categories_violates_upper_bound() {
        let v = validate_taxonomy(&flat(7), &Bounds::default());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::CategoryCount);
        assert_eq!(v[0].message, "category count 7 > 6");
    }

    #[test]
    fn six_children_names_the_node() {
        let mut t = flat(5);
        t.categories[2].children = (0..6).map(|i| cat(&format!("Sub {i}"))).collect();
        t.depth = 2;
        let v = validate_taxonomy(&t, &Bounds::default());
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].rule, Rule::TooManyChildren);
        assert_eq!(v[0].path, "Cat 2");
    }

    #[test]
    fn reserved_and_duplicate_and_empty() {
        let mut t = flat(5);
        t.categories[0].label = "other".into();
        t.categories[1].label = "cat 2".into();
        t.categories[3].label = "  ".into();
        t.categories[4].positive_examples.clear();
        let rules: Vec<Rule> = validate_taxonomy(&t, &Bounds::default())
            .into_iter()
            .map(|v| v.rule)
            .collect();
        assert_eq!(
            rules,
            vec![
                Rule::ReservedLabel,
                Rule::DuplicateLabel,
                Rule::EmptyLabel,
                Rule::MissingExamples
            ]
        );
    }

    #[test]
    fn depth_rules() {
        let mut t = flat(4);
        t.categories[0].children = vec![cat("A").with_children(vec![cat("B")])];
        let rules: Vec<Rule> = validate_taxonomy(&t, &Bounds::default())
            .into_iter()
            .map(|v| v.rule)
            .collect();
        assert!(rules.contains(&Rule::DepthMismatch));
        assert!(rules.contains(&Rule::TooDeep));
    }

    // Independent restatement of the invariants, used as an oracle.
    fn oracle_valid(t: &Taxonomy, b: &Bounds) -> bool {
        fn node_ok(c: &Category, level: usize, b: &Bounds) -> bool {
            let label = c.label.trim();
            let canon: Vec<String> = c
                .children
                .iter()
                .map(|k| canonicalize_label(&k.label))
                .collect();
            let unique = canon
                .iter()
                .enumerate()
                .all(|(i, x)| !canon[..i].contains(x) || c.children[i].label.trim().is_empty());
            !label.is_empty()
                && label.split_whitespace().count() <= b.max_label_words
                && canonicalize_label(label) != "other"
                && c.positive_examples.iter().any(|e| !e.trim().is_empty())
                && c.children.len() <= b.max_children
                && (c.children.is_empty() || level < 2)
                && unique
                && c.children.iter().all(|k| node_ok(k, level + 1, b))
        }
        let canon: Vec<String> = t
            .categories
            .iter()
            .map(|k| canonicalize_label(&k.label))
            .collect();
        let unique = canon.iter().enumerate().all(|(i, x)| !canon[..i].contains(x));
        let any_children = t.categories.iter().any(|c| !c.children.is_empty());
        (b.min_categories..=b.max_categories).contains(&t.categories.len())
            && (t.depth == 2 || (t.depth == 1 && !any_children))
            && unique
            && t.categories.iter().all(|c| node_ok(c, 1, b))
    }

    fn arb_label() -> impl Strategy<Value = String> {
        prop_oneof![
            6 => prop::sample::select(vec!["Learn", "Create", "Leisure", "Find", "Plan", "Shop", "Chat", "Verify"]).prop_map(String::from),
            1 => Just("Other".to_string()),
            1 => Just(" ".to_string()),
            1 => Just("one two three four five six".to_string()),
            1 => Just("learn!".to_string()),
        ]
    }

    fn arb_category(level: u32) -> BoxedStrategy<Category> {
        let examples = prop::collection::vec(prop_oneof![4 => Just("ex".to_string()), 1 => Just(" ".to_string())], 0..3);
        let base = (arb_label(), examples);
        if level >= 3 {
            base.prop_map(|(l, e)| Category::new(l, "d").with_examples(e)).boxed()
        } else {
            (base, prop::collection::vec(arb_category(level + 1), 0..7))
                .prop_map(|((l, e), kids)| {
                    let kids = if kids.len() > 3 && kids.len() % 2 == 0 { Vec::new() } else { kids };
                    Category::new(l, "d").with_examples(e).with_children(kids)
                })
                .boxed()
        }
    }

    proptest! {
        #[test]
        fn validate_matches_oracle(
            cats in prop::collection::vec(arb_category(1), 2..9),
            depth in 0u8..4,
        ) {
            let mut t = Taxonomy::new("p", cats);
            t.depth = depth;
            let b = Bounds::default();
            prop_assert_eq!(validate_taxonomy(&t, &b).is_empty(), oracle_valid(&t, &b));
        }
    }
}
