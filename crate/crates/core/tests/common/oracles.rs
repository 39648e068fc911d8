//! Independent oracles shared by the property tests and the acceptance run.
//! Each `check_*` returns a description of the first disagreement.

use std::collections::{BTreeMap, BTreeSet};

use domex_core::dom::{DomNode, Page, VerticalSchema};
use domex_core::node_model::NodePrediction;
use domex_core::pipeline::{cyclic_split, page_level_f1, PagePrediction};
use domex_core::relation::{
    construct_pairs, expected_pair_count, partition_fields, site_vote, CertaintyPartition, ChoiceSource, FieldChoice,
    PageChoices,
};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---- pair counts

/// Disjoint partition: `t` certain fields with anchors, the rest with `m` candidates each.
pub fn disjoint_partition(k: usize, t: usize, m: usize, extra_anchors: usize) -> CertaintyPartition {
    let mut part = CertaintyPartition { num_fields: k, m, ..Default::default() };
    let mut next = 0;
    for field in 0..k {
        let n = if field < t { 1 + extra_anchors } else { m };
        let ids: Vec<usize> = (next..next + n).collect();
        next += n;
        if field < t {
            part.certain.insert(field, ids);
        } else {
            part.uncertain.insert(field, ids);
        }
    }
    part
}

pub fn closed_form(k: i64, t: i64, m: i64) -> i64 {
    t * (t - 1) + 2 * t * (k - t) * m + (k - t) * (k - t - 1) * m * m
}

/// Ordered field pairs times slot sizes, minus same-node pairs.
pub fn counting_oracle(part: &CertaintyPartition) -> usize {
    let slots: Vec<BTreeSet<usize>> = (0..part.num_fields).map(|f| part.slots(f).iter().copied().collect()).collect();
    let mut total = 0;
    for a in 0..part.num_fields {
        for b in (0..part.num_fields).filter(|&b| b != a) {
            total += slots[a].len() * slots[b].len() - slots[a].intersection(&slots[b]).count();
        }
    }
    total
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() })
}

pub fn check_disjoint_pair_counts(cases: u32) -> Result<(), String> {
    let strategy = (1usize..=6, 0.0f64..=1.0, 1usize..=5, 0usize..3);
    runner(cases)
        .run(&strategy, |(k, t_frac, m, extra)| {
            let t = ((k as f64) * t_frac).round() as usize;
            let pairs = construct_pairs(&disjoint_partition(k, t, m, extra));
            prop_assert_eq!(pairs.len() as i64, closed_form(k as i64, t as i64, m as i64), "K={} T={} m={}", k, t, m);
            prop_assert_eq!(pairs.len(), expected_pair_count(k, t, m));
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn check_partitioned_pair_counts(cases: u32) -> Result<(), String> {
    let node = (0usize..12, prop::collection::vec(-3.0f64..3.0, 7));
    let strategy = (1usize..=6, 1usize..=5, prop::collection::vec(node, 1..30));
    runner(cases)
        .run(&strategy, |(k, m, nodes)| {
            let classes: Vec<usize> = nodes.iter().map(|(c, _)| (*c).min(k)).collect();
            let preds: Vec<NodePrediction> = nodes
                .iter()
                .zip(&classes)
                .enumerate()
                .map(|(ordinal, ((_, s), &class))| NodePrediction {
                    ordinal,
                    class,
                    scores: s[..=k].to_vec(),
                    probs: vec![0.0; k + 1],
                })
                .collect();
            let part = partition_fields(&preds, k, m);

            let none_nodes = classes.iter().filter(|&&c| c == k).count();
            for field in 0..k {
                let has_anchor = classes.contains(&field);
                prop_assert_eq!(part.certain.contains_key(&field), has_anchor);
                if !has_anchor {
                    let cands = &part.uncertain[&field];
                    prop_assert_eq!(cands.len(), m.min(none_nodes));
                    prop_assert!(cands.iter().all(|&o| classes[o] == k));
                }
            }

            let pairs = construct_pairs(&part);
            prop_assert_eq!(pairs.len(), counting_oracle(&part));
            prop_assert!(pairs.iter().all(|p| p.head != p.tail && p.head_field != p.tail_field));
            let distinct: BTreeSet<_> = pairs.iter().map(|p| (p.head, p.head_field, p.tail, p.tail_field)).collect();
            prop_assert_eq!(distinct.len(), pairs.len());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

// ---- page-level scoring

pub const METRIC_FIELDS: [&str; 3] = ["title", "price", "date"];
const WORDS: [&str; 5] = ["a", "b", "a b", "c", "B"];

fn word(rng: &mut ChaCha8Rng) -> String {
    let w = WORDS[rng.gen_range(0..WORDS.len())];
    let pad = |rng: &mut ChaCha8Rng| [" ", "", "\t", "  "][rng.gen_range(0..4)];
    let inner = w.replace(' ', if rng.gen_bool(0.5) { " " } else { " \n " });
    format!("{}{}{}", pad(rng), inner, pad(rng))
}

fn squash(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub struct Table {
    pub pages: Vec<Page>,
    pub preds: Vec<PagePrediction>,
}

pub fn random_table(seed: u64) -> Table {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_pages = rng.gen_range(1..12);
    let mut pages = Vec::new();
    let mut preds = Vec::new();
    for i in 0..n_pages {
        let mut truth = BTreeMap::new();
        for field in METRIC_FIELDS {
            match rng.gen_range(0..4) {
                0 => {}
                1 => {
                    truth.insert(field.to_string(), BTreeSet::new());
                }
                _ => {
                    let n = rng.gen_range(1..3);
                    truth.insert(field.to_string(), (0..n).map(|_| word(&mut rng)).collect());
                }
            }
            if rng.gen_bool(0.7) {
                preds.push(PagePrediction {
                    site_id: "s".into(),
                    page_id: format!("{i:04}"),
                    field: field.into(),
                    xpath: "/html[1]".into(),
                    text: word(&mut rng),
                    source: "1".into(),
                });
            }
        }
        pages.push(Page { page_id: format!("{i:04}"), site_id: "s".into(), nodes: vec![], truth });
    }
    Table { pages, preds }
}

/// (correct, predicted, with_truth) per field by direct enumeration.
pub fn brute_counts(t: &Table) -> Vec<(usize, usize, usize)> {
    METRIC_FIELDS
        .iter()
        .map(|field| {
            let mut counts = (0, 0, 0);
            for page in &t.pages {
                let truth: Vec<String> =
                    page.truth.get(*field).map(|v| v.iter().map(|s| squash(s)).collect()).unwrap_or_default();
                if !truth.is_empty() {
                    counts.2 += 1;
                }
                for p in t.preds.iter().filter(|p| p.page_id == page.page_id && p.field == *field) {
                    counts.1 += 1;
                    if truth.contains(&squash(&p.text)) {
                        counts.0 += 1;
                    }
                }
            }
            counts
        })
        .collect()
}

pub fn brute_f1(c: usize, p: usize, t: usize) -> f64 {
    let prec = if p == 0 { 0.0 } else { c as f64 / p as f64 };
    let rec = if t == 0 { 0.0 } else { c as f64 / t as f64 };
    if prec + rec == 0.0 {
        0.0
    } else {
        2.0 * prec * rec / (prec + rec)
    }
}

pub fn check_metric_tables(n: u64) -> Result<(), String> {
    let schema = VerticalSchema::new("v", &METRIC_FIELDS).map_err(|e| e.to_string())?;
    for seed in 0..n {
        let table = random_table(seed);
        let refs: Vec<&Page> = table.pages.iter().collect();
        let report = page_level_f1(&schema, &table.preds, &refs).map_err(|e| e.to_string())?;
        let mut macro_f1 = 0.0;
        for (m, &(c, p, t)) in report.fields.iter().zip(&brute_counts(&table)) {
            let got = (m.pages_correct, m.pages_with_prediction, m.pages_with_truth);
            if got != (c, p, t) || m.page_f1 != brute_f1(c, p, t) {
                return Err(format!(
                    "table {seed} field {}: {got:?} f1 {} vs {:?} f1 {}",
                    m.field,
                    m.page_f1,
                    (c, p, t),
                    brute_f1(c, p, t)
                ));
            }
            macro_f1 += brute_f1(c, p, t);
        }
        macro_f1 /= METRIC_FIELDS.len() as f64;
        if report.macro_f1 != macro_f1 {
            return Err(format!("table {seed}: macro {} vs {macro_f1}", report.macro_f1));
        }
    }
    Ok(())
}

// ---- site voting

pub const XPATH_POOL: [&str; 6] = [
    "/html[1]/body[1]/h1[1]",
    "/html[1]/body[1]/div[1]/span[1]",
    "/html[1]/body[1]/div[2]/span[1]",
    "/html[1]/body[1]/div[3]/b[1]",
    "/html[1]/body[1]/p[1]",
    "/html[1]/body[1]/p[2]",
];

pub fn page_with(i: usize, xpaths: &[&str]) -> Page {
    let nodes = xpaths
        .iter()
        .enumerate()
        .map(|(ordinal, x)| DomNode {
            xpath: x.to_string(),
            text: format!("t{ordinal}"),
            leaf_tag: "span".into(),
            ordinal,
        })
        .collect();
    Page { page_id: format!("{i:04}"), site_id: "s".into(), nodes, truth: BTreeMap::new() }
}

pub fn pick(ordinal: usize, source: ChoiceSource) -> Option<FieldChoice> {
    Some(FieldChoice { ordinal, source })
}

pub fn ordinals(choices: &[PageChoices]) -> Vec<Vec<Option<usize>>> {
    choices.iter().map(|c| c.iter().map(|f| f.map(|f| f.ordinal)).collect()).collect()
}

/// Expected ordinal per page and field after voting.
pub fn vote_oracle(pages: &[Page], choices: &[PageChoices], k: usize, fraction: f64) -> Vec<Vec<Option<usize>>> {
    let used = ((fraction * pages.len() as f64).ceil() as usize).min(pages.len());
    let mut winners = Vec::new();
    for field in 0..k {
        let mut counts: Vec<(String, usize)> = Vec::new();
        for (p, c) in pages.iter().zip(choices).take(used) {
            if let Some(choice) = c[field] {
                let x = &p.nodes[choice.ordinal].xpath;
                match counts.iter_mut().find(|(y, _)| y == x) {
                    Some(entry) => entry.1 += 1,
                    None => counts.push((x.clone(), 1)),
                }
            }
        }
        let best = counts.iter().map(|c| c.1).max();
        winners.push(best.and_then(|b| counts.iter().filter(|c| c.1 == b).map(|c| c.0.clone()).min()));
    }
    pages
        .iter()
        .zip(choices)
        .map(|(p, c)| {
            (0..k)
                .map(|field| {
                    let here = winners[field].as_ref().and_then(|w| p.nodes.iter().position(|n| &n.xpath == w));
                    here.or(c[field].map(|f| f.ordinal))
                })
                .collect()
        })
        .collect()
}

/// Ten pages of one template; page 6 picks a stray node for field 1 and
/// page 8 has no choice for field 0.
pub fn outlier_site() -> (Vec<Page>, Vec<PageChoices>) {
    let layout = &XPATH_POOL[..4];
    let pages: Vec<Page> = (0..10).map(|i| page_with(i, layout)).collect();
    let mut choices: Vec<PageChoices> =
        (0..10).map(|_| vec![pick(0, ChoiceSource::Stage1), pick(2, ChoiceSource::Stage2)]).collect();
    choices[6][1] = pick(3, ChoiceSource::Stage2);
    choices[8][0] = None;
    (pages, choices)
}

pub fn check_outlier_site() -> Result<(), String> {
    let (pages, choices) = outlier_site();
    let refs: Vec<&Page> = pages.iter().collect();
    let voted = site_vote(&refs, &choices, 2, 1.0);
    let expected = vote_oracle(&pages, &choices, 2, 1.0);
    if ordinals(&voted) != expected {
        return Err(format!("voted {:?}, oracle {:?}", ordinals(&voted), expected));
    }
    if voted[6][1].map(|c| c.source) != Some(ChoiceSource::Voted) {
        return Err("outlier page not marked as voted".into());
    }
    if site_vote(&refs, &voted, 2, 1.0) != voted {
        return Err("second vote changed the choices".into());
    }
    Ok(())
}

// ---- protocol

/// Seed appearances per site over all `n` cyclic permutations.
pub fn seed_appearances(n: usize, k: usize) -> Result<Vec<usize>, String> {
    let order: Vec<String> = (0..n).map(|i| format!("site{i:02}")).collect();
    let mut counts = vec![0; n];
    for perm in 0..n {
        let (seeds, targets) = cyclic_split(&order, k, perm).map_err(|e| e.to_string())?;
        let mut all: Vec<&String> = seeds.iter().chain(&targets).collect();
        all.sort();
        if all != order.iter().collect::<Vec<_>>() {
            return Err(format!("permutation {perm} is not a partition of the sites"));
        }
        for s in &seeds {
            counts[order.iter().position(|x| x == s).unwrap()] += 1;
        }
    }
    Ok(counts)
}
