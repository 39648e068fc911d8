use std::collections::{BTreeMap, BTreeSet};

use super::{Page, VerticalSchema};
use crate::text::normalize;

/// Node-level labels derived from a page's text-level ground truth.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TruthMatch {
    /// Field name to the node indices whose text equals a truth value.
    pub by_field: BTreeMap<String, BTreeSet<usize>>,
    /// Nodes that matched more than one field and were kept by the earliest one.
    pub conflicts: usize,
    /// Truth values that matched no node on the page.
    pub unmatched_values: usize,
}

impl TruthMatch {
    pub fn nodes_for(&self, field: &str) -> Option<&BTreeSet<usize>> {
        self.by_field.get(field)
    }

    /// Per-node class index: field position in schema order, or `schema.len()` for None.
    pub fn node_labels(&self, schema: &VerticalSchema, node_count: usize) -> Vec<usize> {
        let mut labels = vec![schema.len(); node_count];
        for (field_idx, field) in schema.fields.iter().enumerate() {
            if let Some(nodes) = self.by_field.get(field) {
                for &i in nodes {
                    labels[i] = field_idx;
                }
            }
        }
        labels
    }
}

/// Aligns truth strings to nodes by exact equality after normalization.
///
/// A node equal to values of several fields is kept by the field that comes
/// first in schema order, and the conflict is counted.
pub fn match_truth_nodes(page: &Page, schema: &VerticalSchema) -> TruthMatch {
    let normalized_nodes: Vec<String> = page.nodes.iter().map(|n| normalize(&n.text)).collect();
    let mut result = TruthMatch::default();
    let mut owner: Vec<Option<usize>> = vec![None; page.nodes.len()];

    for (field_idx, field) in schema.fields.iter().enumerate() {
        let mut matched = BTreeSet::new();
        if let Some(values) = page.truth.get(field) {
            for value in values {
                let value = normalize(value);
                let before = matched.len();
                let mut hit = false;
                for (i, text) in normalized_nodes.iter().enumerate() {
                    if *text != value {
                        continue;
                    }
                    hit = true;
                    match owner[i] {
                        None => {
                            owner[i] = Some(field_idx);
                            matched.insert(i);
                        }
                        Some(prev) if prev != field_idx => result.conflicts += 1,
                        Some(_) => {}
                    }
                }
                if !hit && matched.len() == before {
                    result.unmatched_values += 1;
                }
            }
        }
        result.by_field.insert(field.clone(), matched);
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dom::DomNode;

    fn page(texts: &[&str], truth: &[(&str, &[&str])]) -> Page {
        Page {
            page_id: "0000".into(),
            site_id: "s".into(),
            nodes: texts
                .iter()
                .enumerate()
                .map(|(i, t)| DomNode {
                    xpath: format!("/html[1]/body[1]/div[{}]", i + 1),
                    text: t.to_string(),
                    leaf_tag: "div".into(),
                    ordinal: i,
                })
                .collect(),
            truth: truth.iter().map(|(f, vs)| (f.to_string(), vs.iter().map(|v| v.to_string()).collect())).collect(),
        }
    }

    fn schema() -> VerticalSchema {
        VerticalSchema::new("auto", &["model", "price"]).unwrap()
    }

    #[test]
    fn single_price_node() {
        let p = page(&["Corolla", "MSRP :", "$9,970", "$9,872"], &[("price", &["$9,970"])]);
        let m = match_truth_nodes(&p, &schema());
        assert_eq!(m.nodes_for("price").unwrap(), &BTreeSet::from([2]));
        assert!(m.nodes_for("model").unwrap().is_empty());
        assert_eq!(m.unmatched_values, 0);
    }

    #[test]
    fn unmatched_value_is_counted() {
        let p = page(&["a", "b"], &[("model", &["Camry"])]);
        let m = match_truth_nodes(&p, &schema());
        assert!(m.nodes_for("model").unwrap().is_empty());
        assert_eq!(m.unmatched_values, 1);
    }

    #[test]
    fn duplicate_matches_are_all_positive() {
        let p = page(&["Corolla", "x", "Corolla"], &[("model", &["  Corolla "])]);
        let m = match_truth_nodes(&p, &schema());
        assert_eq!(m.nodes_for("model").unwrap(), &BTreeSet::from([0, 2]));
    }

    #[test]
    fn conflicts_resolve_by_schema_order() {
        let p = page(&["same", "other"], &[("model", &["same"]), ("price", &["same"])]);
        let m = match_truth_nodes(&p, &schema());
        assert_eq!(m.nodes_for("model").unwrap(), &BTreeSet::from([0]));
        assert!(m.nodes_for("price").unwrap().is_empty());
        assert_eq!(m.conflicts, 1);
        assert_eq!(m.node_labels(&schema(), 2), vec![0, 2]);
    }
}
