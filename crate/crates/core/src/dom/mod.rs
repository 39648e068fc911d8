//! HTML ingestion: leaf text nodes with XPaths, vertical corpora on disk and
//! ground-truth alignment.

mod corpus;
mod parse;
mod truth;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use corpus::{
    load_vertical, read_corpus_cache, read_truth_file, truth_file_path, write_corpus_cache, LoadWarning,
    LoadedVertical, CORPUS_MAGIC,
};
pub use parse::{decode_html, parse_page};
pub use truth::{match_truth_nodes, TruthMatch};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("input for page {page_id} cannot be decoded as text")]
    UnreadableInput { page_id: String },
    #[error("vertical schema is invalid: {0}")]
    InvalidSchema(String),
    #[error("no pages found under {0}")]
    CorpusEmpty(String),
    #[error("truth file {file} lists page {page_id} which does not exist on disk")]
    MissingPage { file: String, page_id: String },
    #[error("malformed truth file {file} at line {line}: {reason}")]
    MalformedTruth { file: String, line: usize, reason: String },
    #[error("corpus cache is not a {CORPUS_MAGIC} container")]
    BadCacheHeader,
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corpus cache payload: {0}")]
    Serde(#[from] serde_json::Error),
}

/// A topical domain and the ordered list of fields extracted from it.
///
/// `None` is implicit: a node that carries no field value is labeled `None`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VerticalSchema {
    pub vertical_name: String,
    pub fields: Vec<String>,
}

impl VerticalSchema {
    pub fn new(vertical_name: impl Into<String>, fields: &[&str]) -> Result<Self, IngestError> {
        let schema =
            Self { vertical_name: vertical_name.into(), fields: fields.iter().map(|f| f.to_string()).collect() };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), IngestError> {
        if self.fields.is_empty() {
            return Err(IngestError::InvalidSchema("at least one field is required".into()));
        }
        let unique: BTreeSet<&String> = self.fields.iter().collect();
        if unique.len() != self.fields.len() {
            return Err(IngestError::InvalidSchema("field names must be unique".into()));
        }
        if self.fields.iter().any(|f| f.eq_ignore_ascii_case("none")) {
            return Err(IngestError::InvalidSchema("`none` is implicit and cannot be listed".into()));
        }
        Ok(())
    }

    /// Number of target fields, K.
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f == name)
    }
}

/// One text-bearing leaf of a parsed page.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomNode {
    pub xpath: String,
    pub text: String,
    pub leaf_tag: String,
    pub ordinal: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Page {
    pub page_id: String,
    pub site_id: String,
    pub nodes: Vec<DomNode>,
    /// Field name to the acceptable ground-truth strings for this page.
    pub truth: BTreeMap<String, BTreeSet<String>>,
}

impl Page {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node_by_xpath(&self, xpath: &str) -> Option<&DomNode> {
        self.nodes.iter().find(|n| n.xpath == xpath)
    }
}

/// A website: pages sharing one template family.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiteCorpus {
    pub site_id: String,
    pub vertical: VerticalSchema,
    pub pages: Vec<Page>,
}
