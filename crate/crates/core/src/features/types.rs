//! String type checkers for the discrete feature bag.
//!
//! | feature        | pattern                                                            |
//! |----------------|--------------------------------------------------------------------|
//! | `HAS_NUMBER`   | any decimal digit                                                  |
//! | `HAS_DATE`     | `yyyy-mm-dd` / `dd-mm-yyyy` with `-`, `/` or `.`; `Month d, yyyy`; `d Month yyyy` |
//! | `HAS_ZIPCODE`  | a standalone 5-digit run, optionally `-dddd`                       |
//! | `HAS_URL`      | `http(s)://`, `www.` or a bare domain ending in a common TLD        |
//! | `HAS_CURRENCY` | a currency symbol (`$ € £ ¥`) or ISO code `usd`, `eur`, `gbp`      |
//! | `HAS_PERCENT`  | a number followed by `%`                                           |
//! | `ALL_CAPS`     | at least two letters, none lowercase                               |
//! | `IS_SHORT`     | at most three whitespace-separated words                           |

use std::collections::BTreeSet;
use std::sync::OnceLock;

use regex::Regex;

pub const HAS_NUMBER: &str = "HAS_NUMBER";
pub const HAS_DATE: &str = "HAS_DATE";
pub const HAS_ZIPCODE: &str = "HAS_ZIPCODE";
pub const HAS_URL: &str = "HAS_URL";
pub const HAS_CURRENCY: &str = "HAS_CURRENCY";
pub const HAS_PERCENT: &str = "HAS_PERCENT";
pub const ALL_CAPS: &str = "ALL_CAPS";
pub const IS_SHORT: &str = "IS_SHORT";

/// Every type feature, in table order.
pub const TYPE_FEATURES: [&str; 8] =
    [HAS_NUMBER, HAS_DATE, HAS_ZIPCODE, HAS_URL, HAS_CURRENCY, HAS_PERCENT, ALL_CAPS, IS_SHORT];

const MONTHS: &str = "jan|feb|mar|apr|may|jun|jul|aug|sep|sept|oct|nov|dec|january|february|march|april|june|july|august|september|october|november|december";

struct Patterns {
    date: Regex,
    zipcode: Regex,
    url: Regex,
    currency: Regex,
    percent: Regex,
}

fn patterns() -> &'static Patterns {
    static PATTERNS: OnceLock<Patterns> = OnceLock::new();
    PATTERNS.get_or_init(|| Patterns {
        date: Regex::new(&format!(
            r"(?i)\b\d{{4}}[-/.]\d{{1,2}}[-/.]\d{{1,2}}\b|\b\d{{1,2}}[-/.]\d{{1,2}}[-/.]\d{{2,4}}\b|\b(?:{MONTHS})\.?\s+\d{{1,2}}(?:st|nd|rd|th)?,?\s+\d{{4}}\b|\b\d{{1,2}}\s+(?:{MONTHS})\.?,?\s+\d{{4}}\b"
        ))
        .expect("valid date regex"),
        zipcode: Regex::new(r"(?:^|[^\d.,$])\d{5}(?:-\d{4})?(?:$|[^\d.,])").expect("valid zip regex"),
        url: Regex::new(r"(?i)\bhttps?://\S+|\bwww\.\S+|\b[a-z0-9-]+\.(?:com|org|net|edu|gov|io|co\.uk)\b")
            .expect("valid url regex"),
        currency: Regex::new(r"(?i)[$€£¥]|\b(?:usd|eur|gbp)\b").expect("valid currency regex"),
        percent: Regex::new(r"\d\s*%").expect("valid percent regex"),
    })
}

fn all_caps(text: &str) -> bool {
    let mut letters = 0;
    for c in text.chars().filter(|c| c.is_alphabetic()) {
        if c.is_lowercase() {
            return false;
        }
        letters += 1;
    }
    letters >= 2
}

pub fn string_type_features(text: &str) -> BTreeSet<&'static str> {
    let p = patterns();
    let mut out = BTreeSet::new();
    if text.chars().any(|c| c.is_ascii_digit()) {
        out.insert(HAS_NUMBER);
    }
    if p.date.is_match(text) {
        out.insert(HAS_DATE);
    }
    if p.zipcode.is_match(text) {
        out.insert(HAS_ZIPCODE);
    }
    if p.url.is_match(text) {
        out.insert(HAS_URL);
    }
    if p.currency.is_match(text) {
        out.insert(HAS_CURRENCY);
    }
    if p.percent.is_match(text) {
        out.insert(HAS_PERCENT);
    }
    if all_caps(text) {
        out.insert(ALL_CAPS);
    }
    if text.split_whitespace().count() <= 3 {
        out.insert(IS_SHORT);
    }
    out
}
