use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::node_model::NodePrediction;

/// Fields split by whether stage one predicted any node for them.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertaintyPartition {
    /// Field index to anchor ordinals, best stage-one score first.
    pub certain: BTreeMap<usize, Vec<usize>>,
    /// Field index to top-m candidate ordinals, best stage-one score first.
    /// Candidates are drawn from nodes stage one left as None.
    pub uncertain: BTreeMap<usize, Vec<usize>>,
    pub num_fields: usize,
    pub m: usize,
}

impl CertaintyPartition {
    pub fn num_certain(&self) -> usize {
        self.certain.len()
    }

    /// Nodes standing for a field in pair construction.
    pub fn slots(&self, field: usize) -> &[usize] {
        match self.certain.get(&field) {
            Some(anchors) => &anchors[..anchors.len().min(1)],
            None => self.uncertain.get(&field).map_or(&[], Vec::as_slice),
        }
    }
}

/// Ordinals sorted by descending score for `field`, ties to the lower ordinal.
fn ranked(preds: &[NodePrediction], field: usize, keep: impl Fn(&NodePrediction) -> bool) -> Vec<usize> {
    let mut nodes: Vec<&NodePrediction> = preds.iter().filter(|p| keep(p)).collect();
    nodes.sort_by(|a, b| b.scores[field].total_cmp(&a.scores[field]).then(a.ordinal.cmp(&b.ordinal)));
    nodes.into_iter().map(|p| p.ordinal).collect()
}

pub fn partition_fields(preds: &[NodePrediction], num_fields: usize, m: usize) -> CertaintyPartition {
    let mut part = CertaintyPartition { num_fields, m, ..Default::default() };
    for field in 0..num_fields {
        let anchors = ranked(preds, field, |p| p.class == field);
        if anchors.is_empty() {
            let mut candidates = ranked(preds, field, |p| p.class >= num_fields);
            candidates.truncate(m);
            part.uncertain.insert(field, candidates);
        } else {
            part.certain.insert(field, anchors);
        }
    }
    part
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum PairLabel {
    NoneNone = 0,
    NoneValue = 1,
    ValueNone = 2,
    ValueValue = 3,
}

impl PairLabel {
    pub const ALL: [PairLabel; 4] =
        [PairLabel::NoneNone, PairLabel::NoneValue, PairLabel::ValueNone, PairLabel::ValueValue];

    pub fn from_sides(head_value: bool, tail_value: bool) -> Self {
        match (head_value, tail_value) {
            (false, false) => PairLabel::NoneNone,
            (false, true) => PairLabel::NoneValue,
            (true, false) => PairLabel::ValueNone,
            (true, true) => PairLabel::ValueValue,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn head_is_value(self) -> bool {
        matches!(self, PairLabel::ValueNone | PairLabel::ValueValue)
    }

    pub fn tail_is_value(self) -> bool {
        matches!(self, PairLabel::NoneValue | PairLabel::ValueValue)
    }

    pub fn name(self) -> &'static str {
        match self {
            PairLabel::NoneNone => "N-N",
            PairLabel::NoneValue => "N-V",
            PairLabel::ValueNone => "V-N",
            PairLabel::ValueValue => "V-V",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodePair {
    pub head: usize,
    pub head_field: usize,
    pub tail: usize,
    pub tail_field: usize,
}

impl NodePair {
    /// Training label: a side is a value iff its node carries that side's field.
    pub fn label(&self, node_labels: &[usize]) -> PairLabel {
        PairLabel::from_sides(node_labels[self.head] == self.head_field, node_labels[self.tail] == self.tail_field)
    }
}

/// Ordered pairs over distinct fields; pairs of a node with itself are skipped.
pub fn construct_pairs(part: &CertaintyPartition) -> Vec<NodePair> {
    let mut pairs = Vec::new();
    for head_field in 0..part.num_fields {
        for tail_field in (0..part.num_fields).filter(|&f| f != head_field) {
            for &head in part.slots(head_field) {
                for &tail in part.slots(tail_field) {
                    if head != tail {
                        pairs.push(NodePair { head, head_field, tail, tail_field });
                    }
                }
            }
        }
    }
    pairs
}

/// Pair count when every certain field has one anchor and no node is shared.
pub fn expected_pair_count(k: usize, t: usize, m: usize) -> usize {
    let u = k - t;
    t * t.saturating_sub(1) + 2 * t * u * m + u * u.saturating_sub(1) * m * m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pred(ordinal: usize, scores: Vec<f64>) -> NodePrediction {
        let class = crate::nn::argmax(&scores);
        NodePrediction { ordinal, class, probs: crate::nn::softmax(&scores), scores }
    }

    #[test]
    fn all_none_means_all_uncertain() {
        let preds: Vec<_> = (0..15).map(|i| pred(i, vec![0.1 * i as f64, -(i as f64), 0.0, 5.0])).collect();
        let part = partition_fields(&preds, 3, 10);
        assert!(part.certain.is_empty());
        assert!(part.uncertain.values().all(|c| c.len() == 10));
        assert_eq!(part.uncertain[&0][0], 14);
        assert_eq!(part.uncertain[&1][..3], [0, 1, 2]);
    }

    #[test]
    fn all_fields_certain() {
        let preds = vec![pred(0, vec![3.0, 0.0, 0.0]), pred(1, vec![0.0, 3.0, 0.0]), pred(2, vec![0.0, 0.0, 3.0])];
        let part = partition_fields(&preds, 2, 10);
        assert_eq!(part.num_certain(), 2);
        assert!(part.uncertain.is_empty());
        assert_eq!(construct_pairs(&part).len(), 2);
    }

    #[test]
    fn documented_counts() {
        assert_eq!(expected_pair_count(4, 2, 2), 26);
        assert_eq!(expected_pair_count(2, 0, 10), 200);
        assert_eq!(expected_pair_count(5, 5, 7), 20);
    }

    #[test]
    fn anchors_are_not_candidates() {
        let preds = vec![pred(0, vec![5.0, 4.0, 0.0]), pred(1, vec![0.0, 1.0, 2.0]), pred(2, vec![0.0, 0.5, 2.0])];
        let part = partition_fields(&preds, 2, 5);
        assert_eq!(part.certain[&0], vec![0]);
        assert_eq!(part.uncertain[&1], vec![1, 2]);
    }

    #[test]
    fn uncertain_ties_go_to_lower_ordinal() {
        let preds = vec![pred(0, vec![0.0, 1.0]), pred(1, vec![0.5, 1.0]), pred(2, vec![0.5, 1.0])];
        let part = partition_fields(&preds, 1, 2);
        assert_eq!(part.uncertain[&0], vec![1, 2]);
    }

    #[test]
    fn none_none_dominates_without_anchors() {
        // nodes 0..10 lean to field 0, 10..20 to field 1; the values are nodes 3 and 17
        let preds: Vec<_> = (0..30)
            .map(|i| {
                let (a, b) = match i {
                    0..=9 => (1.0 - 0.01 * i as f64, 0.0),
                    10..=19 => (0.0, 1.0 - 0.01 * i as f64),
                    _ => (-1.0, -1.0),
                };
                pred(i, vec![a, b, 5.0])
            })
            .collect();
        let part = partition_fields(&preds, 2, 10);
        let pairs = construct_pairs(&part);
        assert_eq!(pairs.len(), 200);

        let mut labels = vec![2; 30];
        labels[3] = 0;
        labels[17] = 1;
        let mut counts = [0; 4];
        for p in &pairs {
            counts[p.label(&labels).index()] += 1;
        }
        assert_eq!(counts, [162, 18, 18, 2]);
    }

    #[test]
    fn labels_follow_node_classes() {
        let pair = NodePair { head: 0, head_field: 1, tail: 2, tail_field: 0 };
        assert_eq!(pair.label(&[1, 2, 0]), PairLabel::ValueValue);
        assert_eq!(pair.label(&[2, 2, 0]), PairLabel::NoneValue);
        assert_eq!(pair.label(&[1, 2, 2]), PairLabel::ValueNone);
        assert_eq!(pair.label(&[2, 2, 2]), PairLabel::NoneNone);
    }
}
