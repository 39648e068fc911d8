//! Feature views of a node: node-text tokens with their characters, the
//! preceding-token window, and two bags of discrete features.

pub mod types;

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dom::{DomNode, Page, SiteCorpus};
use crate::text::tokenize;
pub use types::{string_type_features, TYPE_FEATURES};

pub const OOV_ID: u32 = 0;
pub const PAD_ID: u32 = 1;
pub const OTHER_TAG: &str = "OTHER_TAG";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FeatureError {
    #[error("vocabularies need at least one seed page with text")]
    EmptyCorpus,
    #[error("malformed xpath `{0}`")]
    MalformedXPath(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub prev_window: usize,
    pub max_node_tokens: usize,
    pub max_token_chars: usize,
    pub word_min_count: usize,
    pub top_tags: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self { prev_window: 10, max_node_tokens: 32, max_token_chars: 24, word_min_count: 2, top_tags: 30 }
    }
}

/// Frozen lookup tables built from seed sites.
///
/// Words and characters reserve id 0 for out-of-vocabulary and id 1 for
/// padding; stored ids start at 2. Leaf tags reserve id 0 for `OTHER_TAG`.
/// XPath tags reserve id 0 for out-of-vocabulary.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub word_to_id: BTreeMap<String, u32>,
    pub char_to_id: BTreeMap<char, u32>,
    pub tag_to_id: BTreeMap<String, u32>,
    pub type_to_id: BTreeMap<String, u32>,
    pub xpath_tag_to_id: BTreeMap<String, u32>,
}

impl Vocab {
    pub fn word_count(&self) -> usize {
        self.word_to_id.len() + 2
    }

    pub fn char_count(&self) -> usize {
        self.char_to_id.len() + 2
    }

    pub fn tag_count(&self) -> usize {
        self.tag_to_id.len()
    }

    pub fn type_count(&self) -> usize {
        self.type_to_id.len()
    }

    pub fn xpath_tag_count(&self) -> usize {
        self.xpath_tag_to_id.len() + 1
    }

    pub fn word_id(&self, token: &str) -> u32 {
        self.word_to_id.get(token).copied().unwrap_or(OOV_ID)
    }

    pub fn char_id(&self, c: char) -> u32 {
        self.char_to_id.get(&c).copied().unwrap_or(OOV_ID)
    }

    pub fn xpath_tag_id(&self, tag: &str) -> u32 {
        self.xpath_tag_to_id.get(tag).copied().unwrap_or(OOV_ID)
    }

    /// The tag feature name: the tag itself when it is among the frequent seed tags.
    pub fn leaf_tag_feature<'a>(&self, node: &'a DomNode) -> &'a str {
        if self.tag_to_id.contains_key(&node.leaf_tag) {
            &node.leaf_tag
        } else {
            OTHER_TAG
        }
    }
}

/// Tag names of an XPath with sibling indices removed: `/html[1]/div[2]` gives `[html, div]`.
pub fn xpath_tags(xpath: &str) -> Result<Vec<&str>, FeatureError> {
    let malformed = || FeatureError::MalformedXPath(xpath.to_string());
    let rest = xpath.strip_prefix('/').ok_or_else(malformed)?;
    rest.split('/')
        .map(|step| {
            let tag = step.split('[').next().unwrap_or("");
            if tag.is_empty() {
                Err(malformed())
            } else {
                Ok(tag)
            }
        })
        .collect()
}

pub fn build_vocabs(seed_sites: &[SiteCorpus], cfg: &FeatureConfig) -> Result<Vocab, FeatureError> {
    let mut words: HashMap<String, usize> = HashMap::new();
    let mut chars: BTreeSet<char> = BTreeSet::new();
    let mut tags: HashMap<&str, usize> = HashMap::new();
    let mut xpath_tags_seen: BTreeSet<String> = BTreeSet::new();
    let mut any = false;

    for node in seed_sites.iter().flat_map(|s| &s.pages).flat_map(|p| &p.nodes) {
        any = true;
        for token in tokenize(&node.text) {
            chars.extend(token.chars());
            *words.entry(token).or_default() += 1;
        }
        *tags.entry(&node.leaf_tag).or_default() += 1;
        if let Ok(steps) = xpath_tags(&node.xpath) {
            xpath_tags_seen.extend(steps.into_iter().map(str::to_string));
        }
    }
    if !any {
        return Err(FeatureError::EmptyCorpus);
    }

    let mut kept_words: Vec<String> =
        words.into_iter().filter(|(_, c)| *c >= cfg.word_min_count).map(|(w, _)| w).collect();
    kept_words.sort();

    let mut ranked_tags: Vec<(&str, usize)> = tags.into_iter().collect();
    ranked_tags.sort_by_key(|&(t, c)| (Reverse(c), t));

    let mut tag_to_id = BTreeMap::from([(OTHER_TAG.to_string(), 0)]);
    for (i, (tag, _)) in ranked_tags.into_iter().take(cfg.top_tags).enumerate() {
        tag_to_id.insert(tag.to_string(), i as u32 + 1);
    }

    Ok(Vocab {
        word_to_id: kept_words.into_iter().enumerate().map(|(i, w)| (w, i as u32 + 2)).collect(),
        char_to_id: chars.into_iter().enumerate().map(|(i, c)| (c, i as u32 + 2)).collect(),
        tag_to_id,
        type_to_id: TYPE_FEATURES.iter().enumerate().map(|(i, t)| (t.to_string(), i as u32)).collect(),
        xpath_tag_to_id: xpath_tags_seen.into_iter().enumerate().map(|(i, t)| (t, i as u32 + 1)).collect(),
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenIds {
    pub word: u32,
    pub chars: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeFeatureBundle {
    pub node_tokens: Vec<TokenIds>,
    pub prev_tokens: Vec<TokenIds>,
    /// Leaf-tag bag (d1).
    pub tag_features: Vec<u32>,
    /// String-type bag (d2).
    pub type_features: Vec<u32>,
}

fn token_ids(token: &str, vocab: &Vocab, cfg: &FeatureConfig) -> TokenIds {
    let mut chars: Vec<u32> = token.chars().take(cfg.max_token_chars).map(|c| vocab.char_id(c)).collect();
    if chars.is_empty() {
        chars.push(OOV_ID);
    }
    TokenIds { word: vocab.word_id(token), chars }
}

fn last_tokens<'a>(texts: impl DoubleEndedIterator<Item = &'a Vec<String>>, w: usize) -> Vec<String> {
    let mut window: Vec<String> = Vec::with_capacity(w);
    for tokens in texts.rev() {
        for token in tokens.iter().rev() {
            if window.len() == w {
                break;
            }
            window.push(token.clone());
        }
        if window.len() == w {
            break;
        }
    }
    window.reverse();
    window
}

/// The last `w` tokens of the nodes preceding `node_ordinal`, in document order.
pub fn preceding_tokens(page: &Page, node_ordinal: usize, w: usize) -> Vec<String> {
    let tokenized: Vec<Vec<String>> = page.nodes[..node_ordinal].iter().map(|n| tokenize(&n.text)).collect();
    last_tokens(tokenized.iter(), w)
}

/// Feature bundles for every node of a (filtered) page.
///
/// The preceding window spans the page's own nodes. When that window is empty
/// and the unfiltered `raw` page is given, the window is taken from the raw
/// leaf order before the same XPath instead.
pub fn featurize_page(page: &Page, raw: Option<&Page>, vocab: &Vocab, cfg: &FeatureConfig) -> Vec<NodeFeatureBundle> {
    let tokenized: Vec<Vec<String>> = page.nodes.iter().map(|n| tokenize(&n.text)).collect();
    let raw_tokens: Option<Vec<Vec<String>>> = raw.map(|r| r.nodes.iter().map(|n| tokenize(&n.text)).collect());

    page.nodes
        .iter()
        .enumerate()
        .map(|(i, node)| {
            let mut prev = last_tokens(tokenized[..i].iter(), cfg.prev_window);
            if prev.is_empty() {
                if let (Some(raw), Some(raw_tokens)) = (raw, raw_tokens.as_ref()) {
                    if let Some(pos) = raw.nodes.iter().position(|n| n.xpath == node.xpath) {
                        prev = last_tokens(raw_tokens[..pos].iter(), cfg.prev_window);
                    }
                }
            }
            let tag_id = vocab.tag_to_id[vocab.leaf_tag_feature(node)];
            NodeFeatureBundle {
                node_tokens: tokenized[i].iter().take(cfg.max_node_tokens).map(|t| token_ids(t, vocab, cfg)).collect(),
                prev_tokens: prev.iter().map(|t| token_ids(t, vocab, cfg)).collect(),
                tag_features: vec![tag_id],
                type_features: string_type_features(&node.text).into_iter().map(|t| vocab.type_to_id[t]).collect(),
            }
        })
        .collect()
}
