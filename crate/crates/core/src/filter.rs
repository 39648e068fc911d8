//! Variable-node filtering: drop XPaths whose text never changes across a site.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::dom::{Page, SiteCorpus};
use crate::text::normalize;

/// Default number of XPaths kept per site.
pub const DEFAULT_TOP_K: usize = 500;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct XPathStats {
    pub site_id: String,
    /// Distinct normalized texts observed at each XPath.
    pub counts: BTreeMap<String, usize>,
    /// Pages containing each XPath.
    pub support: BTreeMap<String, usize>,
}

pub fn collect_xpath_stats(site: &SiteCorpus) -> XPathStats {
    collect_page_stats(&site.site_id, &site.pages)
}

pub fn collect_page_stats(site_id: &str, pages: &[Page]) -> XPathStats {
    let mut texts: BTreeMap<&str, BTreeSet<String>> = BTreeMap::new();
    let mut support: BTreeMap<String, usize> = BTreeMap::new();
    for page in pages {
        let mut seen = BTreeSet::new();
        for node in &page.nodes {
            texts.entry(&node.xpath).or_default().insert(normalize(&node.text));
            if seen.insert(node.xpath.as_str()) {
                *support.entry(node.xpath.clone()).or_default() += 1;
            }
        }
    }
    XPathStats {
        site_id: site_id.to_string(),
        counts: texts.into_iter().map(|(x, t)| (x.to_string(), t.len())).collect(),
        support,
    }
}

/// Top-`k` XPaths with at least two distinct texts.
///
/// Ranked by distinct count, then support (both descending), then XPath.
pub fn select_variable_nodes(stats: &XPathStats, k: usize) -> BTreeSet<String> {
    let mut ranked: Vec<(&String, usize, usize)> = stats
        .counts
        .iter()
        .filter(|(_, &c)| c >= 2)
        .map(|(x, &c)| (x, c, stats.support.get(x).copied().unwrap_or(0)))
        .collect();
    ranked.sort_by_key(|&(x, c, s)| (Reverse(c), Reverse(s), x));
    ranked.into_iter().take(k).map(|(x, _, _)| x.clone()).collect()
}

/// Keeps only nodes whose XPath is in `keep`, renumbering ordinals.
pub fn apply_filter(page: &Page, keep: &BTreeSet<String>) -> Page {
    let nodes = page
        .nodes
        .iter()
        .filter(|n| keep.contains(&n.xpath))
        .enumerate()
        .map(|(i, n)| {
            let mut n = n.clone();
            n.ordinal = i;
            n
        })
        .collect();
    Page { nodes, ..page.clone() }
}

/// Filters every page of a site using statistics from the site's own pages.
pub fn filter_site(site: &SiteCorpus, k: usize) -> SiteCorpus {
    let keep = select_variable_nodes(&collect_xpath_stats(site), k);
    SiteCorpus { pages: site.pages.iter().map(|p| apply_filter(p, &keep)).collect(), ..site.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dom::{DomNode, VerticalSchema};

    fn site(pages: &[&[(&str, &str)]]) -> SiteCorpus {
        SiteCorpus {
            site_id: "s".into(),
            vertical: VerticalSchema::new("v", &["f"]).unwrap(),
            pages: pages
                .iter()
                .enumerate()
                .map(|(pi, nodes)| Page {
                    page_id: format!("{pi:04}"),
                    site_id: "s".into(),
                    nodes: nodes
                        .iter()
                        .enumerate()
                        .map(|(i, (x, t))| DomNode {
                            xpath: x.to_string(),
                            text: t.to_string(),
                            leaf_tag: "span".into(),
                            ordinal: i,
                        })
                        .collect(),
                    truth: Default::default(),
                })
                .collect(),
        }
    }

    #[test]
    fn constant_and_varying_counts() {
        let s = site(&[
            &[("/a[1]", "x"), ("/b[1]", "p")],
            &[("/a[1]", "x"), ("/b[1]", "q")],
            &[("/a[1]", "x"), ("/b[1]", "p")],
        ]);
        let stats = collect_xpath_stats(&s);
        assert_eq!(stats.counts["/a[1]"], 1);
        assert_eq!(stats.counts["/b[1]"], 2);
        assert_eq!(stats.support["/a[1]"], 3);
    }

    #[test]
    fn all_constant_selects_nothing() {
        let s = site(&[&[("/a[1]", "x")], &[("/a[1]", "x")]]);
        assert!(select_variable_nodes(&collect_xpath_stats(&s), 500).is_empty());
    }

    #[test]
    fn threshold_keeps_counts_of_two_or_more() {
        let stats = XPathStats {
            site_id: "s".into(),
            counts: BTreeMap::from([("/a".into(), 5), ("/b".into(), 2), ("/c".into(), 1)]),
            support: BTreeMap::from([("/a".into(), 5), ("/b".into(), 5), ("/c".into(), 5)]),
        };
        let kept = select_variable_nodes(&stats, 500);
        assert_eq!(kept, BTreeSet::from(["/a".to_string(), "/b".to_string()]));
    }

    #[test]
    fn tie_break_by_support_then_xpath() {
        let stats = XPathStats {
            site_id: "s".into(),
            counts: BTreeMap::from([("/a".into(), 3), ("/b".into(), 3), ("/c".into(), 3)]),
            support: BTreeMap::from([("/a".into(), 3), ("/b".into(), 4), ("/c".into(), 3)]),
        };
        assert_eq!(select_variable_nodes(&stats, 1), BTreeSet::from(["/b".to_string()]));
        assert_eq!(select_variable_nodes(&stats, 2), BTreeSet::from(["/a".to_string(), "/b".to_string()]));
    }

    #[test]
    fn filter_identity_and_empty() {
        let s = site(&[&[("/a[1]", "x"), ("/b[1]", "p"), ("/c[1]", "z")]]);
        let page = &s.pages[0];
        let all: BTreeSet<String> = page.nodes.iter().map(|n| n.xpath.clone()).collect();
        assert_eq!(&apply_filter(page, &all), page);
        assert!(apply_filter(page, &BTreeSet::new()).nodes.is_empty());

        let kept = apply_filter(page, &BTreeSet::from(["/c[1]".to_string(), "/a[1]".to_string()]));
        let got: Vec<_> = kept.nodes.iter().map(|n| (n.xpath.as_str(), n.ordinal)).collect();
        assert_eq!(got, vec![("/a[1]", 0), ("/c[1]", 1)]);
    }
}
