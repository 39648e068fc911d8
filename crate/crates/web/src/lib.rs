//! Browser demo: leaf-node extraction, boilerplate filtering and field-distance
//! heatmaps over synthetic sites. Every export returns a JSON string.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use domex_core::dom::parse_page;
use domex_core::features::string_type_features;
use domex_core::filter::{collect_xpath_stats, select_variable_nodes};
use domex_core::pipeline::{distance_matrix, synthesize, DistanceMatrix, SynthSpec};

#[derive(Debug, Serialize)]
pub struct LeafRow {
    pub ordinal: usize,
    pub xpath: String,
    pub leaf_tag: String,
    pub text: String,
    pub types: Vec<&'static str>,
}

#[derive(Debug, Serialize)]
pub struct XPathRow {
    pub xpath: String,
    pub distinct_texts: usize,
    pub pages: usize,
    pub kept: bool,
    pub example: String,
}

#[derive(Debug, Serialize)]
pub struct FilterView {
    pub site_id: String,
    pub pages: usize,
    pub kept: usize,
    pub dropped: usize,
    pub rows: Vec<XPathRow>,
    /// First page of the site, for preview.
    pub sample_html: String,
}

pub fn leaf_rows(html: &str) -> Result<Vec<LeafRow>, String> {
    let page = parse_page(html.as_bytes(), "input", "demo").map_err(|e| e.to_string())?;
    Ok(page
        .nodes
        .into_iter()
        .map(|n| LeafRow {
            ordinal: n.ordinal,
            types: string_type_features(&n.text).into_iter().collect(),
            xpath: n.xpath,
            leaf_tag: n.leaf_tag,
            text: n.text,
        })
        .collect())
}

fn spec(sites: usize, pages: usize, fields: usize, seed: u32) -> SynthSpec {
    SynthSpec { n_sites: sites, pages_per_site: pages, num_fields: fields, decoys: true, seed: seed as u64 }
}

pub fn filter_view(pages: usize, seed: u32, top_k: usize) -> Result<FilterView, String> {
    let corpus = synthesize(&spec(1, pages, 4, seed)).map_err(|e| e.to_string())?;
    let sample_html = corpus.sites[0].pages.first().map(|p| p.html.clone()).unwrap_or_default();
    let loaded = corpus.to_loaded().map_err(|e| e.to_string())?;
    let site = &loaded.sites[0];
    let stats = collect_xpath_stats(site);
    let keep = select_variable_nodes(&stats, top_k);
    let mut rows: Vec<XPathRow> = stats
        .counts
        .iter()
        .map(|(xpath, &distinct)| XPathRow {
            xpath: xpath.clone(),
            distinct_texts: distinct,
            pages: stats.support.get(xpath).copied().unwrap_or(0),
            kept: keep.contains(xpath),
            example: site
                .pages
                .iter()
                .flat_map(|p| &p.nodes)
                .find(|n| &n.xpath == xpath)
                .map(|n| n.text.clone())
                .unwrap_or_default(),
        })
        .collect();
    rows.sort_by(|a, b| b.kept.cmp(&a.kept).then(b.distinct_texts.cmp(&a.distinct_texts)).then(a.xpath.cmp(&b.xpath)));
    let kept = rows.iter().filter(|r| r.kept).count();
    Ok(FilterView {
        site_id: site.site_id.clone(),
        pages: site.pages.len(),
        kept,
        dropped: rows.len() - kept,
        rows,
        sample_html,
    })
}

pub fn heatmaps(sites: usize, pages: usize, fields: usize, seed: u32) -> Result<Vec<DistanceMatrix>, String> {
    let loaded =
        synthesize(&spec(sites, pages, fields, seed)).and_then(|c| c.to_loaded()).map_err(|e| e.to_string())?;
    Ok(loaded.sites.iter().map(|s| distance_matrix(&domex_core::filter::filter_site(s, 500))).collect())
}

fn to_json<T: Serialize>(value: Result<T, String>) -> Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

/// Leaf text nodes of an HTML document with XPaths and type features.
#[wasm_bindgen]
pub fn parse_html(html: &str) -> Result<String, JsError> {
    to_json(leaf_rows(html))
}

/// XPath statistics and the keep/drop decision for one synthetic site.
#[wasm_bindgen]
pub fn filter_explorer(pages: usize, seed: u32, top_k: usize) -> Result<String, JsError> {
    to_json(filter_view(pages, seed, top_k))
}

/// Scaled field-distance matrices for synthetic sites.
#[wasm_bindgen]
pub fn distance_heatmap(sites: usize, pages: usize, fields: usize, seed: u32) -> Result<String, JsError> {
    to_json(heatmaps(sites, pages, fields, seed))
}
