use std::collections::{BTreeMap, HashMap};
use std::sync::OnceLock;

use encoding_rs::Encoding;
use html5ever::tendril::TendrilSink;
use html5ever::{parse_document, ParseOpts};
use markup5ever_rcdom::{Handle, NodeData, RcDom};
use regex::bytes::Regex;

use super::{DomNode, IngestError, Page};
use crate::text::normalize;

/// Elements whose content never renders as page text.
const SKIPPED_ELEMENTS: &[&str] = &["head", "script", "style", "noscript", "template"];

fn charset_pattern() -> &'static Regex {
    static PATTERN: OnceLock<Regex> = OnceLock::new();
    PATTERN
        .get_or_init(|| Regex::new(r#"(?i)<meta[^>]*charset\s*=\s*["']?\s*([a-zA-Z0-9_:.\-]+)"#).expect("valid regex"))
}

fn declared_charset(bytes: &[u8]) -> Option<&'static Encoding> {
    let head = &bytes[..bytes.len().min(2048)];
    let caps = charset_pattern().captures(head)?;
    Encoding::for_label(caps.get(1)?.as_bytes())
}

/// Decodes page bytes: the declared charset first, then UTF-8, then Latin-1.
///
/// Bytes containing NUL are treated as binary and rejected.
pub fn decode_html(bytes: &[u8], page_id: &str) -> Result<String, IngestError> {
    if bytes.contains(&0) {
        return Err(IngestError::UnreadableInput { page_id: page_id.to_string() });
    }
    if let Some(encoding) = declared_charset(bytes) {
        let (text, _, had_errors) = encoding.decode(bytes);
        if !had_errors {
            return Ok(text.into_owned());
        }
    }
    let without_bom = bytes.strip_prefix(b"\xEF\xBB\xBF").unwrap_or(bytes);
    if let Ok(text) = std::str::from_utf8(without_bom) {
        return Ok(text.to_string());
    }
    Ok(bytes.iter().map(|&b| b as char).collect())
}

/// Parses an HTML document into its text-bearing leaf nodes, in document order.
///
/// Every element with non-whitespace direct text contributes one node whose
/// text is the concatenation of its direct text children. Child elements are
/// visited independently, so `<p>x<b>y</b></p>` yields `x` at `p` and `y` at `b`.
pub fn parse_page(html: &[u8], page_id: &str, site_id: &str) -> Result<Page, IngestError> {
    let text = decode_html(html, page_id)?;
    let dom = parse_document(RcDom::default(), ParseOpts::default())
        .from_utf8()
        .read_from(&mut text.as_bytes())
        .map_err(|source| IngestError::Io { path: page_id.to_string(), source })?;

    let mut nodes = Vec::new();
    walk_children(&dom.document, "", &mut nodes);
    Ok(Page { page_id: page_id.to_string(), site_id: site_id.to_string(), nodes, truth: BTreeMap::new() })
}

fn walk_children(parent: &Handle, parent_xpath: &str, out: &mut Vec<DomNode>) {
    let mut sibling_counts: HashMap<String, usize> = HashMap::new();
    for child in parent.children.borrow().iter() {
        let NodeData::Element { ref name, .. } = child.data else {
            continue;
        };
        let tag = name.local.to_ascii_lowercase();
        let index = sibling_counts.entry(tag.to_string()).or_insert(0);
        *index += 1;
        if SKIPPED_ELEMENTS.contains(&&*tag) {
            continue;
        }
        let xpath = format!("{parent_xpath}/{tag}[{index}]");
        visit_element(child, &tag, xpath, out);
    }
}

fn visit_element(element: &Handle, tag: &str, xpath: String, out: &mut Vec<DomNode>) {
    let mut direct = String::new();
    for child in element.children.borrow().iter() {
        if let NodeData::Text { ref contents } = child.data {
            direct.push_str(&contents.borrow());
            direct.push(' ');
        }
    }
    let text = normalize(&direct);
    if !text.is_empty() {
        out.push(DomNode { xpath: xpath.clone(), text, leaf_tag: tag.to_string(), ordinal: out.len() });
    }
    walk_children(element, &xpath, out);
}
