//! Page-level precision, recall and F1 per field.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{Page, VerticalSchema};
use crate::text::normalize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("more than one prediction for field `{field}` on page {site_id}/{page_id}")]
    DuplicatePrediction { site_id: String, page_id: String, field: String },
    #[error("prediction for unknown field `{0}`")]
    UnknownField(String),
    #[error("prediction for page {site_id}/{page_id}, which is not in the evaluation set")]
    UnknownPage { site_id: String, page_id: String },
}

/// One top-1 extraction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PagePrediction {
    pub site_id: String,
    pub page_id: String,
    pub field: String,
    pub xpath: String,
    pub text: String,
    /// `1`, `2` or `voted`.
    #[serde(default, rename = "stage", alias = "source")]
    pub source: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldMetrics {
    pub field: String,
    pub page_precision: f64,
    pub page_recall: f64,
    pub page_f1: f64,
    pub pages_with_truth: usize,
    pub pages_with_prediction: usize,
    pub pages_correct: usize,
}

impl FieldMetrics {
    pub fn from_counts(field: impl Into<String>, correct: usize, predicted: usize, with_truth: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        let (p, r) = (ratio(correct, predicted), ratio(correct, with_truth));
        let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        Self {
            field: field.into(),
            page_precision: p,
            page_recall: r,
            page_f1: f1,
            pages_with_truth: with_truth,
            pages_with_prediction: predicted,
            pages_correct: correct,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub fields: Vec<FieldMetrics>,
    /// Unweighted means over fields.
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

impl MetricsReport {
    pub fn from_fields(fields: Vec<FieldMetrics>) -> Self {
        let mean = |f: fn(&FieldMetrics) -> f64| {
            if fields.is_empty() {
                0.0
            } else {
                fields.iter().map(f).sum::<f64>() / fields.len() as f64
            }
        };
        Self {
            macro_precision: mean(|m| m.page_precision),
            macro_recall: mean(|m| m.page_recall),
            macro_f1: mean(|m| m.page_f1),
            fields,
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldMetrics> {
        self.fields.iter().find(|m| m.field == name)
    }
}

/// Scores top-1 predictions against the truth of `pages`.
///
/// A (page, field) is correct when the normalized prediction equals one of
/// the normalized truth strings. Pages without a prediction only lower recall.
pub fn page_level_f1(
    schema: &VerticalSchema,
    predictions: &[PagePrediction],
    pages: &[&Page],
) -> Result<MetricsReport, MetricsError> {
    let index: BTreeMap<(&str, &str), &Page> =
        pages.iter().map(|p| ((p.site_id.as_str(), p.page_id.as_str()), *p)).collect();
    let mut seen = BTreeSet::new();
    let mut correct = vec![0usize; schema.len()];
    let mut predicted = vec![0usize; schema.len()];
    for pred in predictions {
        let field = schema.field_index(&pred.field).ok_or_else(|| MetricsError::UnknownField(pred.field.clone()))?;
        let page = index.get(&(pred.site_id.as_str(), pred.page_id.as_str())).ok_or_else(|| {
            MetricsError::UnknownPage { site_id: pred.site_id.clone(), page_id: pred.page_id.clone() }
        })?;
        if !seen.insert((&pred.site_id, &pred.page_id, field)) {
            return Err(MetricsError::DuplicatePrediction {
                site_id: pred.site_id.clone(),
                page_id: pred.page_id.clone(),
                field: pred.field.clone(),
            });
        }
        predicted[field] += 1;
        let text = normalize(&pred.text);
        if page.truth.get(&pred.field).is_some_and(|values| values.iter().any(|v| normalize(v) == text)) {
            correct[field] += 1;
        }
    }
    let fields = schema
        .fields
        .iter()
        .enumerate()
        .map(|(i, field)| {
            let with_truth = pages.iter().filter(|p| p.truth.get(field).is_some_and(|v| !v.is_empty())).count();
            FieldMetrics::from_counts(field.clone(), correct[i], predicted[i], with_truth)
        })
        .collect();
    Ok(MetricsReport::from_fields(fields))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn page(id: &str, value: Option<&str>) -> Page {
        Page {
            page_id: id.into(),
            site_id: "s".into(),
            nodes: Vec::new(),
            truth: BTreeMap::from([("f".to_string(), value.into_iter().map(String::from).collect())]),
        }
    }

    fn pred(id: &str, text: &str) -> PagePrediction {
        PagePrediction {
            site_id: "s".into(),
            page_id: id.into(),
            field: "f".into(),
            xpath: "/html[1]".into(),
            text: text.into(),
            source: "1".into(),
        }
    }

    fn schema() -> VerticalSchema {
        VerticalSchema::new("v", &["f"]).unwrap()
    }

    #[test]
    fn four_page_case() {
        let pages = [page("0", Some("a")), page("1", Some("b")), page("2", Some("c")), page("3", Some("d"))];
        let refs: Vec<&Page> = pages.iter().collect();
        let preds = [pred("0", "a"), pred("1", "  b "), pred("2", "x")];
        let m = page_level_f1(&schema(), &preds, &refs).unwrap();
        let f = &m.fields[0];
        assert_eq!((f.pages_correct, f.pages_with_prediction, f.pages_with_truth), (2, 3, 4));
        assert!((f.page_precision - 2.0 / 3.0).abs() < 1e-12);
        assert!((f.page_recall - 0.5).abs() < 1e-12);
        assert!((f.page_f1 - 4.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_empty() {
        let pages = [page("0", Some("a")), page("1", Some("b"))];
        let refs: Vec<&Page> = pages.iter().collect();
        let perfect = page_level_f1(&schema(), &[pred("0", "a"), pred("1", "b")], &refs).unwrap();
        assert_eq!(perfect.macro_f1, 1.0);
        let empty = page_level_f1(&schema(), &[], &refs).unwrap();
        assert_eq!((empty.macro_precision, empty.macro_recall, empty.macro_f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn absent_truth_counts_against_precision_only() {
        let pages = [page("0", None), page("1", Some("b"))];
        let refs: Vec<&Page> = pages.iter().collect();
        let m = page_level_f1(&schema(), &[pred("0", "a"), pred("1", "b")], &refs).unwrap();
        assert_eq!(m.fields[0].pages_with_truth, 1);
        assert_eq!(m.fields[0].page_recall, 1.0);
        assert_eq!(m.fields[0].page_precision, 0.5);
    }

    #[test]
    fn duplicates_rejected() {
        let pages = [page("0", Some("a"))];
        let refs: Vec<&Page> = pages.iter().collect();
        let err = page_level_f1(&schema(), &[pred("0", "a"), pred("0", "b")], &refs).unwrap_err();
        assert!(matches!(err, MetricsError::DuplicatePrediction { .. }));
    }
}
