//! Synthetic book-detail websites with per-site templates.
//!
//! Every site draws its own wrapper markup, field order, label wording, date
//! format, heading tag and value tag. Constant chrome (navigation, labels,
//! footer) is filtered as boilerplate. With decoys on, each page ends with a
//! review list whose dates share the true date's format and tag, and whose
//! comments look like the blurb printed just before the true date.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dom::{parse_page, truth_file_path, IngestError, LoadedVertical, SiteCorpus, VerticalSchema};

pub const SYNTH_VERTICAL: &str = "synthbook";
pub const SYNTH_FIELDS: [&str; 6] = ["title", "author", "price", "date", "isbn", "publisher"];
/// The field whose value is mimicked by decoys.
pub const DECOY_FIELD: &str = "date";

const SITE_NAMES: [&str; 26] = [
    "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel", "india", "juliet", "kilo", "lima",
    "mike", "november", "oscar", "papa", "quebec", "romeo", "sierra", "tango", "uniform", "victor", "whiskey", "xray",
    "yankee", "zulu",
];

const WORDS: [&str; 120] = [
    "river", "stone", "light", "garden", "silver", "winter", "summer", "shadow", "ocean", "forest", "mountain", "city",
    "night", "morning", "story", "secret", "journey", "dream", "house", "letter", "window", "bridge", "island",
    "storm", "fire", "water", "glass", "paper", "iron", "golden", "hidden", "last", "first", "little", "great",
    "quiet", "broken", "distant", "empty", "bright", "dark", "wild", "gentle", "ancient", "modern", "lost", "found",
    "early", "late", "long", "short", "green", "blue", "red", "white", "black", "north", "south", "east", "west",
    "king", "queen", "child", "mother", "father", "friend", "stranger", "teacher", "doctor", "soldier", "sailor",
    "painter", "music", "voice", "song", "dance", "road", "train", "ship", "horse", "bird", "wolf", "tree", "flower",
    "sky", "star", "moon", "sun", "rain", "snow", "wind", "cloud", "field", "valley", "harbor", "tower", "castle",
    "village", "market", "school", "library", "kitchen", "table", "clock", "mirror", "key", "door", "wall", "map",
    "book", "word", "name", "time", "year", "day", "life", "heart", "mind", "hand", "eye",
];

const FIRST_NAMES: [&str; 30] = [
    "Anna", "Ben", "Clara", "David", "Elena", "Frank", "Grace", "Henry", "Iris", "Jack", "Karen", "Leo", "Maria",
    "Nathan", "Olivia", "Paul", "Quinn", "Rosa", "Samuel", "Tara", "Victor", "Wendy", "Xavier", "Yara", "Zoe", "Adam",
    "Bella", "Carl", "Diana", "Ethan",
];

const LAST_NAMES: [&str; 30] = [
    "Smith", "Johnson", "Brown", "Taylor", "Miller", "Wilson", "Moore", "Clark", "Lewis", "Walker", "Hall", "Allen",
    "Young", "King", "Wright", "Scott", "Green", "Baker", "Adams", "Nelson", "Carter", "Mitchell", "Roberts", "Turner",
    "Phillips", "Campbell", "Parker", "Evans", "Edwards", "Collins",
];

const PUBLISHERS: [&str; 12] = [
    "Harbor Press",
    "Northwind Books",
    "Blue Door Publishing",
    "Lantern House",
    "Red Kite Editions",
    "Oakfield Media",
    "Silverline Press",
    "Paper Crane",
    "Grey Owl Books",
    "Meridian House",
    "Tidewater Press",
    "Foxglove Editions",
];

const MONTHS: [&str; 12] = [
    "January",
    "February",
    "March",
    "April",
    "May",
    "June",
    "July",
    "August",
    "September",
    "October",
    "November",
    "December",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_sites: usize,
    pub pages_per_site: usize,
    pub num_fields: usize,
    pub decoys: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self { n_sites: 6, pages_per_site: 50, num_fields: 4, decoys: true, seed: 7 }
    }
}

impl SynthSpec {
    pub fn schema(&self) -> Result<VerticalSchema, IngestError> {
        if self.num_fields == 0 || self.num_fields > SYNTH_FIELDS.len() {
            return Err(IngestError::InvalidSchema(format!(
                "synthetic corpora support 1 to {} fields, got {}",
                SYNTH_FIELDS.len(),
                self.num_fields
            )));
        }
        if self.n_sites == 0 || self.n_sites > SITE_NAMES.len() {
            return Err(IngestError::InvalidSchema(format!(
                "synthetic corpora support 1 to 26 sites, got {}",
                self.n_sites
            )));
        }
        VerticalSchema::new(SYNTH_VERTICAL, &SYNTH_FIELDS[..self.num_fields])
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthPage {
    pub page_id: String,
    pub html: String,
    /// Field name to the single true value.
    pub truth: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthSite {
    pub site_id: String,
    pub pages: Vec<SynthPage>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthCorpus {
    pub schema: VerticalSchema,
    pub sites: Vec<SynthSite>,
}

#[derive(Clone, Copy, Debug)]
enum Wrapper {
    Rows,
    Table,
    Definitions,
}

const WRAPPERS: [Wrapper; 3] = [Wrapper::Rows, Wrapper::Table, Wrapper::Definitions];

#[derive(Clone, Copy, Debug)]
enum DateFormat {
    Iso,
    Slashed,
    Long,
    DayMonth,
}

struct Template {
    wrapper: Wrapper,
    heading: &'static str,
    value_tag: &'static str,
    order: Vec<usize>,
    labels: Vec<String>,
    date_format: DateFormat,
    nav: Vec<&'static str>,
    chrome_divs: usize,
    review_list: &'static str,
    review_title: &'static str,
    footer: String,
}

fn label_for(field: &str, rng: &mut ChaCha8Rng) -> String {
    let options: &[&str] = match field {
        "title" => &["Title:", "Book title", "Name:"],
        "author" => &["Author:", "By", "Written by", "Author(s)"],
        "price" => &["Price:", "Our price", "Buy now for", "Cost:"],
        "date" => &["Published:", "Release date", "Publication date:", "Date:"],
        "isbn" => &["ISBN:", "ISBN-13", "Code:"],
        _ => &["Publisher:", "Imprint", "Published by"],
    };
    options.choose(rng).expect("non-empty").to_string()
}

impl Template {
    fn sample(site_index: usize, wrapper: Wrapper, schema: &VerticalSchema, rng: &mut ChaCha8Rng) -> Self {
        let mut order: Vec<usize> = (1..schema.len()).collect();
        order.shuffle(rng);
        let navs = ["Home", "Books", "New releases", "Bestsellers", "Gift cards", "Contact", "Help", "Sign in"];
        let nav_count = rng.gen_range(3..=navs.len());
        Self {
            wrapper,
            heading: *["h1", "h2"].choose(rng).expect("non-empty"),
            value_tag: *["span", "b", "strong", "em"].choose(rng).expect("non-empty"),
            order,
            labels: schema.fields.iter().map(|f| label_for(f, rng)).collect(),
            date_format: *[DateFormat::Iso, DateFormat::Slashed, DateFormat::Long, DateFormat::DayMonth]
                .choose(rng)
                .expect("non-empty"),
            nav: navs[..nav_count].to_vec(),
            chrome_divs: rng.gen_range(0..3),
            review_list: *["ul", "ol"].choose(rng).expect("non-empty"),
            review_title: *["Customer reviews", "Reader reviews", "What readers say"].choose(rng).expect("non-empty"),
            footer: format!("Copyright {} {} books. All rights reserved.", 2000 + site_index, SITE_NAMES[site_index]),
        }
    }
}

fn words(rng: &mut ChaCha8Rng, min: usize, max: usize) -> String {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| *WORDS.choose(rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
}

fn capitalized_title(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=4);
    (0..n)
        .map(|_| {
            let w = WORDS.choose(rng).expect("non-empty");
            let mut c = w.chars();
            c.next().map(|f| f.to_uppercase().chain(c).collect::<String>()).unwrap_or_default()
        })
        .collect::<Vec<_>>()
        .join(" ")
}

fn date_string(format: DateFormat, rng: &mut ChaCha8Rng) -> String {
    let (y, m, d) = (rng.gen_range(1990..=2023), rng.gen_range(1..=12usize), rng.gen_range(1..=28));
    match format {
        DateFormat::Iso => format!("{y}-{m:02}-{d:02}"),
        DateFormat::Slashed => format!("{m:02}/{d:02}/{y}"),
        DateFormat::Long => format!("{} {d}, {y}", MONTHS[m - 1]),
        DateFormat::DayMonth => format!("{d} {} {y}", &MONTHS[m - 1][..3]),
    }
}

fn field_value(field: &str, template: &Template, rng: &mut ChaCha8Rng) -> String {
    match field {
        "title" => capitalized_title(rng),
        "author" => format!("{} {}", FIRST_NAMES.choose(rng).expect("names"), LAST_NAMES.choose(rng).expect("names")),
        "price" => format!("${}.{:02}", rng.gen_range(3..80), rng.gen_range(0..100)),
        "date" => date_string(template.date_format, rng),
        "isbn" => format!(
            "978-{}-{:05}-{:03}-{}",
            rng.gen_range(0..10),
            rng.gen_range(0..100_000),
            rng.gen_range(0..1000),
            rng.gen_range(0..10)
        ),
        _ => PUBLISHERS.choose(rng).expect("publishers").to_string(),
    }
}

fn render_page(
    schema: &VerticalSchema,
    t: &Template,
    decoys: bool,
    rng: &mut ChaCha8Rng,
) -> (String, BTreeMap<String, String>) {
    let values: Vec<String> = schema.fields.iter().map(|f| field_value(f, t, rng)).collect();
    let truth = schema.fields.iter().cloned().zip(values.iter().cloned()).collect();
    let vt = t.value_tag;
    let mut h =
        String::from("<!DOCTYPE html><html><head><title>Book detail</title><style>.x{color:red}</style></head><body>");
    h.push_str("<div class=\"nav\"><ul>");
    for item in &t.nav {
        let _ = write!(h, "<li><a href=\"#\">{item}</a></li>");
    }
    h.push_str("</ul></div>");
    for i in 0..t.chrome_divs {
        let _ = write!(h, "<div class=\"banner\"><p>Free shipping on orders over ${}0</p></div>", i + 2);
    }
    let _ = write!(h, "<div class=\"crumbs\"><span>Books</span> &gt; <span>{}</span></div>", capitalized_title(rng));
    h.push_str("<div class=\"main\">");
    let _ = write!(h, "<{0}>{1}</{0}>", t.heading, values[0]);
    let blurb = words(rng, 10, 18);
    match t.wrapper {
        Wrapper::Rows => h.push_str("<div class=\"info\">"),
        Wrapper::Table => h.push_str("<table class=\"info\"><tbody>"),
        Wrapper::Definitions => h.push_str("<dl class=\"info\">"),
    }
    for &f in &t.order {
        let (label, value) = (&t.labels[f], &values[f]);
        let is_date = schema.fields[f] == DECOY_FIELD;
        match t.wrapper {
            Wrapper::Rows => {
                if is_date {
                    let _ = write!(h, "<div class=\"row\"><p>{blurb}</p></div>");
                }
                let _ = write!(h, "<div class=\"row\"><span class=\"label\">{label}</span> <{vt}>{value}</{vt}></div>");
            }
            Wrapper::Table => {
                if is_date {
                    let _ = write!(h, "<tr><td colspan=\"2\"><p>{blurb}</p></td></tr>");
                }
                let _ = write!(h, "<tr><td>{label}</td><td><{vt}>{value}</{vt}></td></tr>");
            }
            Wrapper::Definitions => {
                if is_date {
                    let _ = write!(h, "<dd class=\"note\"><p>{blurb}</p></dd>");
                }
                let _ = write!(h, "<dt>{label}</dt><dd><{vt}>{value}</{vt}></dd>");
            }
        }
    }
    match t.wrapper {
        Wrapper::Rows => h.push_str("</div>"),
        Wrapper::Table => h.push_str("</tbody></table>"),
        Wrapper::Definitions => h.push_str("</dl>"),
    }
    let _ = write!(h, "<div class=\"stock\"><span>Only {} left in stock</span></div>", rng.gen_range(2..40));
    h.push_str("</div>");
    if decoys {
        let _ = write!(h, "<div class=\"reviews\"><h3>{}</h3><{}>", t.review_title, t.review_list);
        let true_date = schema.field_index(DECOY_FIELD).map(|i| values[i].clone());
        for _ in 0..rng.gen_range(4..=8) {
            let mut date = date_string(t.date_format, rng);
            while Some(&date) == true_date.as_ref() {
                date = date_string(t.date_format, rng);
            }
            let _ = write!(
                h,
                "<li><p>{}</p><{vt}>{}</{vt}><i>user{}</i></li>",
                words(rng, 10, 20),
                date,
                rng.gen_range(1000..10000)
            );
        }
        let _ = write!(h, "</{}></div>", t.review_list);
    }
    let _ = write!(h, "<div class=\"footer\"><p>{}</p><p>Terms of use</p></div></body></html>", t.footer);
    (h, truth)
}

/// Generates the corpus in memory; identical specs give identical output.
pub fn synthesize(spec: &SynthSpec) -> Result<SynthCorpus, IngestError> {
    let schema = spec.schema()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut sites = Vec::with_capacity(spec.n_sites);
    // Wrapper styles rotate so that any run of consecutive sites covers them all.
    let offset = rng.gen_range(0..WRAPPERS.len());
    for s in 0..spec.n_sites {
        let template = Template::sample(s, WRAPPERS[(s + offset) % WRAPPERS.len()], &schema, &mut rng);
        let pages = (0..spec.pages_per_site)
            .map(|p| {
                let (html, truth) = render_page(&schema, &template, spec.decoys, &mut rng);
                SynthPage { page_id: format!("{p:04}"), html, truth }
            })
            .collect();
        sites.push(SynthSite { site_id: format!("{SYNTH_VERTICAL}-{}", SITE_NAMES[s]), pages });
    }
    Ok(SynthCorpus { schema, sites })
}

impl SynthCorpus {
    /// Parses the generated pages directly, as if loaded from disk.
    pub fn to_loaded(&self) -> Result<LoadedVertical, IngestError> {
        let sites = self
            .sites
            .iter()
            .map(|site| {
                let pages = site
                    .pages
                    .iter()
                    .map(|p| {
                        let mut page = parse_page(p.html.as_bytes(), &p.page_id, &site.site_id)?;
                        for field in &self.schema.fields {
                            let values =
                                p.truth.get(field).map(|v| std::iter::once(v.clone()).collect()).unwrap_or_default();
                            page.truth.insert(field.clone(), values);
                        }
                        Ok(page)
                    })
                    .collect::<Result<Vec<_>, IngestError>>()?;
                Ok(SiteCorpus { site_id: site.site_id.clone(), vertical: self.schema.clone(), pages })
            })
            .collect::<Result<Vec<_>, IngestError>>()?;
        Ok(LoadedVertical { schema: self.schema.clone(), sites, warnings: Vec::new() })
    }

    /// Writes pages and truth files in the on-disk corpus layout.
    pub fn write(&self, root: &Path) -> Result<(), IngestError> {
        let io = |path: &Path| {
            let path = path.display().to_string();
            move |source| IngestError::Io { path, source }
        };
        let vertical = &self.schema.vertical_name;
        for site in &self.sites {
            let dir = root.join(vertical).join(&site.site_id);
            fs::create_dir_all(&dir).map_err(io(&dir))?;
            for page in &site.pages {
                let path = dir.join(format!("{}.htm", page.page_id));
                fs::write(&path, &page.html).map_err(io(&path))?;
            }
            for field in &self.schema.fields {
                let path = truth_file_path(root, vertical, &site.site_id, field);
                if let Some(parent) = path.parent() {
                    fs::create_dir_all(parent).map_err(io(parent))?;
                }
                let mut out = format!("{vertical}\t{}\t{field}\n", site.site_id);
                for page in &site.pages {
                    match page.truth.get(field) {
                        Some(v) => {
                            let _ = writeln!(out, "{}\t1\t{v}", page.page_id);
                        }
                        None => {
                            let _ = writeln!(out, "{}\t0\t<NULL>", page.page_id);
                        }
                    }
                }
                fs::write(&path, out).map_err(io(&path))?;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dom::load_vertical;
    use crate::filter::filter_site;

    fn small(decoys: bool) -> SynthSpec {
        SynthSpec { n_sites: 2, pages_per_site: 6, num_fields: 4, decoys, seed: 3 }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synthesize(&small(true)).unwrap(), synthesize(&small(true)).unwrap());
        assert_ne!(synthesize(&small(true)).unwrap(), synthesize(&SynthSpec { seed: 4, ..small(true) }).unwrap());
    }

    #[test]
    fn truth_values_are_nodes() {
        let corpus = synthesize(&small(true)).unwrap().to_loaded().unwrap();
        for site in &corpus.sites {
            for page in &site.pages {
                let m = crate::dom::match_truth_nodes(page, &corpus.schema);
                for field in &corpus.schema.fields {
                    assert_eq!(
                        m.nodes_for(field).map(|s| s.len()),
                        Some(1),
                        "{} {} {field}",
                        site.site_id,
                        page.page_id
                    );
                }
            }
        }
    }

    #[test]
    fn decoys_share_the_date_tag() {
        let corpus = synthesize(&small(true)).unwrap().to_loaded().unwrap();
        let page = &corpus.sites[0].pages[0];
        let date = page.truth["date"].iter().next().unwrap();
        let date_node = page.nodes.iter().find(|n| &n.text == date).unwrap();
        let looks_alike = page
            .nodes
            .iter()
            .filter(|n| {
                n.leaf_tag == date_node.leaf_tag && crate::features::string_type_features(&n.text).contains("HAS_DATE")
            })
            .count();
        assert!(looks_alike >= 5);
    }

    #[test]
    fn boilerplate_is_filtered() {
        let corpus = synthesize(&small(false)).unwrap().to_loaded().unwrap();
        let filtered = filter_site(&corpus.sites[0], 500);
        for page in &filtered.pages {
            assert!(page.nodes.iter().all(|n| !n.text.starts_with("Copyright") && n.text != "Home"));
            assert!(page.nodes.len() >= 5);
        }
    }

    #[test]
    fn disk_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small(true);
        let corpus = synthesize(&spec).unwrap();
        corpus.write(dir.path()).unwrap();
        let loaded = load_vertical(dir.path(), &spec.schema().unwrap()).unwrap();
        assert_eq!(loaded, corpus.to_loaded().unwrap());
        let truth_files = fs::read_dir(dir.path().join("groundtruth").join(SYNTH_VERTICAL)).unwrap().count();
        assert_eq!(truth_files, 8);
    }
}
