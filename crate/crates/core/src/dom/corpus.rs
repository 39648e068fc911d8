//! Vertical corpora on disk.
//!
//! Layout (SWDE style):
//!
//! ```text
//! <root>/<vertical>/<site-dir>/<page_id>.htm      (or <root>/webpages/<vertical>/...)
//! <root>/groundtruth/<vertical>/<site_id>-<field>.txt
//! ```
//!
//! A site directory named `auto-aol(2000)` has site id `auto-aol`. Truth files
//! are tab separated: one header line, then `page_id<TAB>count<TAB>value...`.
//! The value `<NULL>` marks an absent value.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{parse_page, IngestError, Page, SiteCorpus, VerticalSchema};

pub const CORPUS_MAGIC: &str = "DOMEX-CORPUS-1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LoadWarning {
    /// No truth file for this (site, field); its truth is empty on every page.
    MissingTruthFile { site_id: String, field: String, path: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadedVertical {
    pub schema: VerticalSchema,
    pub sites: Vec<SiteCorpus>,
    pub warnings: Vec<LoadWarning>,
}

impl LoadedVertical {
    pub fn site(&self, site_id: &str) -> Option<&SiteCorpus> {
        self.sites.iter().find(|s| s.site_id == site_id)
    }

    pub fn site_ids(&self) -> Vec<String> {
        self.sites.iter().map(|s| s.site_id.clone()).collect()
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.display().to_string(), source }
}

fn site_id_from_dir(name: &str) -> String {
    match name.rfind('(') {
        Some(i) if name.ends_with(')') && name[i + 1..name.len() - 1].chars().all(|c| c.is_ascii_digit()) => {
            name[..i].to_string()
        }
        _ => name.to_string(),
    }
}

fn pages_dir(root: &Path, vertical: &str) -> PathBuf {
    let swde = root.join("webpages").join(vertical);
    if swde.is_dir() {
        swde
    } else {
        root.join(vertical)
    }
}

pub fn truth_file_path(root: &Path, vertical: &str, site_id: &str, field: &str) -> PathBuf {
    root.join("groundtruth").join(vertical).join(format!("{site_id}-{field}.txt"))
}

/// Reads one truth file into page id to values.
pub fn read_truth_file(path: &Path) -> Result<BTreeMap<String, BTreeSet<String>>, IngestError> {
    let content = fs::read_to_string(path).map_err(io_err(path))?;
    let file = path.display().to_string();
    let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
    for (line_no, line) in content.lines().enumerate().skip(1) {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 2 {
            return Err(IngestError::MalformedTruth {
                file,
                line: line_no + 1,
                reason: "expected page_id and count columns".into(),
            });
        }
        let count: usize = cols[1].trim().parse().map_err(|_| IngestError::MalformedTruth {
            file: file.clone(),
            line: line_no + 1,
            reason: format!("count `{}` is not an integer", cols[1]),
        })?;
        let values = out.entry(cols[0].trim().to_string()).or_default();
        for value in cols.iter().skip(2).take(count) {
            let value = value.trim();
            if !value.is_empty() && value != "<NULL>" {
                values.insert(value.to_string());
            }
        }
    }
    Ok(out)
}

fn load_site(
    root: &Path,
    site_dir: &Path,
    schema: &VerticalSchema,
) -> Result<(SiteCorpus, Vec<LoadWarning>), IngestError> {
    let dir_name = site_dir.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let site_id = site_id_from_dir(&dir_name);

    let mut files: Vec<(String, PathBuf)> = fs::read_dir(site_dir)
        .map_err(io_err(site_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && matches!(p.extension().and_then(|e| e.to_str()), Some("htm") | Some("html")))
        .filter_map(|p| Some((p.file_stem()?.to_string_lossy().into_owned(), p)))
        .collect();
    files.sort();

    let mut pages = files
        .par_iter()
        .map(|(page_id, path)| {
            let bytes = fs::read(path).map_err(io_err(path))?;
            parse_page(&bytes, page_id, &site_id)
        })
        .collect::<Result<Vec<Page>, _>>()?;

    let mut warnings = Vec::new();
    for field in &schema.fields {
        let path = truth_file_path(root, &schema.vertical_name, &site_id, field);
        if !path.is_file() {
            warnings.push(LoadWarning::MissingTruthFile {
                site_id: site_id.clone(),
                field: field.clone(),
                path: path.display().to_string(),
            });
            continue;
        }
        let rows = read_truth_file(&path)?;
        for (page_id, values) in rows {
            let page = pages.iter_mut().find(|p| p.page_id == page_id).ok_or_else(|| IngestError::MissingPage {
                file: path.display().to_string(),
                page_id: page_id.clone(),
            })?;
            page.truth.insert(field.clone(), values);
        }
    }
    for page in &mut pages {
        for field in &schema.fields {
            page.truth.entry(field.clone()).or_default();
        }
    }
    Ok((SiteCorpus { site_id, vertical: schema.clone(), pages }, warnings))
}

/// Loads every site of a vertical, in lexicographic site id order.
pub fn load_vertical(root: &Path, schema: &VerticalSchema) -> Result<LoadedVertical, IngestError> {
    schema.validate()?;
    let dir = pages_dir(root, &schema.vertical_name);
    let mut site_dirs: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    site_dirs.sort();

    let mut sites = Vec::new();
    let mut warnings = Vec::new();
    for site_dir in &site_dirs {
        let (site, mut w) = load_site(root, site_dir, schema)?;
        if !site.pages.is_empty() {
            sites.push(site);
            warnings.append(&mut w);
        }
    }
    if sites.is_empty() {
        return Err(IngestError::CorpusEmpty(dir.display().to_string()));
    }
    sites.sort_by(|a, b| a.site_id.cmp(&b.site_id));
    Ok(LoadedVertical { schema: schema.clone(), sites, warnings })
}

/// Writes a corpus cache: the magic line followed by a JSON payload.
pub fn write_corpus_cache(path: &Path, corpus: &LoadedVertical) -> Result<(), IngestError> {
    let mut file = fs::File::create(path).map_err(io_err(path))?;
    writeln!(file, "{CORPUS_MAGIC}").map_err(io_err(path))?;
    serde_json::to_writer(&mut file, corpus)?;
    Ok(())
}

pub fn read_corpus_cache(path: &Path) -> Result<LoadedVertical, IngestError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let header = format!("{CORPUS_MAGIC}\n");
    let payload = bytes.strip_prefix(header.as_bytes()).ok_or(IngestError::BadCacheHeader)?;
    Ok(serde_json::from_slice(payload)?)
}
