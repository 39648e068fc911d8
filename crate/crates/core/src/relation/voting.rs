use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::pairs::{CertaintyPartition, NodePair, PairLabel};
use crate::dom::Page;
use crate::node_model::NodePrediction;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairVote {
    pub ordinal: usize,
    pub field: usize,
    /// Pair labels received.
    pub total: usize,
    /// How many of them said Value.
    pub value_votes: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ChoiceSource {
    #[serde(rename = "1")]
    Stage1,
    #[serde(rename = "2")]
    Stage2,
    Voted,
}

impl ChoiceSource {
    pub fn as_str(self) -> &'static str {
        match self {
            ChoiceSource::Stage1 => "1",
            ChoiceSource::Stage2 => "2",
            ChoiceSource::Voted => "voted",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldChoice {
    pub ordinal: usize,
    pub source: ChoiceSource,
}

/// One optional choice per field, indexed by field.
pub type PageChoices = Vec<Option<FieldChoice>>;

/// Tallies the predicted pair labels per (field, node), sorted by field then ordinal.
pub fn tally_votes(pairs: &[NodePair], labels: &[PairLabel]) -> Vec<PairVote> {
    let mut tally: BTreeMap<(usize, usize), (usize, usize)> = BTreeMap::new();
    for (pair, label) in pairs.iter().zip(labels) {
        let head = tally.entry((pair.head_field, pair.head)).or_default();
        head.0 += 1;
        head.1 += label.head_is_value() as usize;
        let tail = tally.entry((pair.tail_field, pair.tail)).or_default();
        tail.0 += 1;
        tail.1 += label.tail_is_value() as usize;
    }
    tally
        .into_iter()
        .map(|((field, ordinal), (total, value_votes))| PairVote { ordinal, field, total, value_votes })
        .collect()
}

/// Certain fields keep their best anchor. An uncertain field takes the
/// candidate with at least `threshold` Value votes and the most of them,
/// then the higher stage-one score, then the lower ordinal.
pub fn aggregate_votes(
    votes: &[PairVote],
    part: &CertaintyPartition,
    preds: &[NodePrediction],
    threshold: usize,
) -> PageChoices {
    (0..part.num_fields)
        .map(|field| {
            if let Some(anchors) = part.certain.get(&field) {
                return anchors.first().map(|&ordinal| FieldChoice { ordinal, source: ChoiceSource::Stage1 });
            }
            let candidates = part.uncertain.get(&field)?;
            votes
                .iter()
                .filter(|v| v.field == field && v.value_votes >= threshold && candidates.contains(&v.ordinal))
                .max_by(|a, b| {
                    a.value_votes
                        .cmp(&b.value_votes)
                        .then(preds[a.ordinal].scores[field].total_cmp(&preds[b.ordinal].scores[field]))
                        .then(b.ordinal.cmp(&a.ordinal))
                })
                .map(|v| FieldChoice { ordinal: v.ordinal, source: ChoiceSource::Stage2 })
        })
        .collect()
}

/// Stage-one extraction: per field, the highest-scoring node predicted as that field.
pub fn stage_one_choices(preds: &[NodePrediction], num_fields: usize) -> PageChoices {
    (0..num_fields)
        .map(|field| {
            preds
                .iter()
                .filter(|p| p.class == field)
                .max_by(|a, b| a.scores[field].total_cmp(&b.scores[field]).then(b.ordinal.cmp(&a.ordinal)))
                .map(|p| FieldChoice { ordinal: p.ordinal, source: ChoiceSource::Stage1 })
        })
        .collect()
}

/// The most frequent chosen XPath per field over the first `ceil(fraction * P)`
/// pages. Ties go to the lexicographically smallest XPath.
pub fn majority_xpaths(
    pages: &[&Page],
    choices: &[PageChoices],
    num_fields: usize,
    fraction: f64,
) -> Vec<Option<String>> {
    let used = ((fraction.clamp(0.0, 1.0) * pages.len() as f64).ceil() as usize).min(pages.len());
    (0..num_fields)
        .map(|field| {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for (page, page_choices) in pages.iter().zip(choices).take(used) {
                if let Some(Some(choice)) = page_choices.get(field) {
                    *counts.entry(page.nodes[choice.ordinal].xpath.as_str()).or_default() += 1;
                }
            }
            let best = counts.values().copied().max()?;
            counts.into_iter().find(|&(_, c)| c == best).map(|(x, _)| x.to_string())
        })
        .collect()
}

/// Site-level correction: wherever a page holds the majority XPath of a
/// field, that node becomes the field's choice.
pub fn site_vote(pages: &[&Page], choices: &[PageChoices], num_fields: usize, fraction: f64) -> Vec<PageChoices> {
    let majority = majority_xpaths(pages, choices, num_fields, fraction);
    pages
        .iter()
        .zip(choices)
        .map(|(page, page_choices)| {
            (0..num_fields)
                .map(|field| {
                    let current = page_choices.get(field).copied().flatten();
                    let Some(xpath) = &majority[field] else { return current };
                    match page.node_by_xpath(xpath) {
                        Some(node) if current.map(|c| c.ordinal) == Some(node.ordinal) => current,
                        Some(node) => Some(FieldChoice { ordinal: node.ordinal, source: ChoiceSource::Voted }),
                        None => current,
                    }
                })
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dom::DomNode;

    fn pred(ordinal: usize, scores: Vec<f64>) -> NodePrediction {
        NodePrediction { ordinal, class: crate::nn::argmax(&scores), probs: crate::nn::softmax(&scores), scores }
    }

    fn page(xpaths: &[&str]) -> Page {
        Page {
            page_id: "p".into(),
            site_id: "s".into(),
            nodes: xpaths
                .iter()
                .enumerate()
                .map(|(i, x)| DomNode {
                    xpath: x.to_string(),
                    text: format!("t{i}"),
                    leaf_tag: "span".into(),
                    ordinal: i,
                })
                .collect(),
            truth: Default::default(),
        }
    }

    fn choice(ordinal: usize) -> Option<FieldChoice> {
        Some(FieldChoice { ordinal, source: ChoiceSource::Stage2 })
    }

    #[test]
    fn threshold_boundary() {
        let preds = vec![pred(0, vec![0.0, 1.0]), pred(1, vec![0.0, 1.0])];
        let part = CertaintyPartition {
            uncertain: BTreeMap::from([(0, vec![0, 1])]),
            num_fields: 1,
            m: 2,
            ..Default::default()
        };
        let none = [PairVote { ordinal: 0, field: 0, total: 6, value_votes: 0 }];
        assert_eq!(aggregate_votes(&none, &part, &preds, 1), vec![None]);
        let one = [PairVote { ordinal: 1, field: 0, total: 6, value_votes: 1 }];
        assert_eq!(aggregate_votes(&one, &part, &preds, 1), vec![choice(1)]);
    }

    #[test]
    fn certain_fields_keep_anchor() {
        let preds = vec![pred(0, vec![2.0, 0.0]), pred(1, vec![1.0, 0.0])];
        let part = CertaintyPartition {
            certain: BTreeMap::from([(0, vec![0, 1])]),
            num_fields: 1,
            m: 1,
            ..Default::default()
        };
        let votes = [PairVote { ordinal: 1, field: 0, total: 3, value_votes: 3 }];
        assert_eq!(
            aggregate_votes(&votes, &part, &preds, 1),
            vec![Some(FieldChoice { ordinal: 0, source: ChoiceSource::Stage1 })]
        );
    }

    #[test]
    fn tally_counts_both_sides() {
        let pairs = [
            NodePair { head: 0, head_field: 0, tail: 1, tail_field: 1 },
            NodePair { head: 1, head_field: 1, tail: 0, tail_field: 0 },
        ];
        let votes = tally_votes(&pairs, &[PairLabel::ValueNone, PairLabel::ValueValue]);
        assert_eq!(
            votes,
            vec![
                PairVote { ordinal: 0, field: 0, total: 2, value_votes: 2 },
                PairVote { ordinal: 1, field: 1, total: 2, value_votes: 1 },
            ]
        );
    }

    #[test]
    fn outlier_page_is_corrected() {
        let pages: Vec<Page> = (0..10).map(|_| page(&["/a[1]", "/b[1]"])).collect();
        let refs: Vec<&Page> = pages.iter().collect();
        let mut choices: Vec<PageChoices> = vec![vec![choice(0)]; 10];
        choices[7] = vec![choice(1)];
        let voted = site_vote(&refs, &choices, 1, 1.0);
        assert!(voted.iter().all(|c| c[0].map(|c| c.ordinal) == Some(0)));
        assert_eq!(voted[7][0].unwrap().source, ChoiceSource::Voted);
        assert_eq!(site_vote(&refs, &voted, 1, 1.0), voted);
    }

    #[test]
    fn zero_fraction_changes_nothing() {
        let pages: Vec<Page> = (0..3).map(|_| page(&["/a[1]", "/b[1]"])).collect();
        let refs: Vec<&Page> = pages.iter().collect();
        let choices = vec![vec![choice(0)], vec![choice(1)], vec![None]];
        assert_eq!(site_vote(&refs, &choices, 1, 0.0), choices);
    }

    #[test]
    fn absent_choice_filled_by_majority() {
        let pages: Vec<Page> = (0..3).map(|_| page(&["/a[1]", "/b[1]"])).collect();
        let refs: Vec<&Page> = pages.iter().collect();
        let choices = vec![vec![choice(1)], vec![choice(1)], vec![None]];
        assert_eq!(site_vote(&refs, &choices, 1, 1.0)[2][0].map(|c| c.ordinal), Some(1));
    }

    #[test]
    fn stage_one_picks_best_predicted() {
        let preds = vec![pred(0, vec![2.0, 0.0, 0.0]), pred(1, vec![3.0, 0.0, 0.0]), pred(2, vec![0.0, 0.0, 1.0])];
        let c = stage_one_choices(&preds, 2);
        assert_eq!(c[0].map(|c| c.ordinal), Some(1));
        assert_eq!(c[1], None);
    }
}
