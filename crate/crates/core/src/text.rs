//! Text normalization and tokenization shared by ingest, features and metrics.

use unicode_normalization::UnicodeNormalization;

/// Collapses whitespace runs to single spaces, trims, and applies Unicode NFC.
pub fn normalize(text: &str) -> String {
    let collapsed = text.split_whitespace().collect::<Vec<_>>().join(" ");
    collapsed.nfc().collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum CharClass {
    Letter,
    Digit,
    Other,
}

fn classify(c: char) -> CharClass {
    if c.is_ascii_digit() || c.is_numeric() {
        CharClass::Digit
    } else if c.is_alphabetic() {
        CharClass::Letter
    } else {
        CharClass::Other
    }
}

/// Lowercases and splits text into word tokens.
///
/// Whitespace separates tokens. Inside a whitespace-delimited chunk, letter runs
/// and digit runs become separate tokens and every other character (punctuation,
/// currency symbols, ...) is a token of its own: `"MSRP:"` gives `["msrp", ":"]`
/// and `"$9,970"` gives `["$", "9", ",", "970"]`.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    for chunk in text.split_whitespace() {
        let mut current = String::new();
        let mut current_class = None;
        for c in chunk.chars() {
            let class = classify(c);
            let continues = current_class == Some(class) && class != CharClass::Other;
            if !continues && !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            current.extend(c.to_lowercase());
            current_class = Some(class);
        }
        if !current.is_empty() {
            tokens.push(current);
        }
    }
    tokens
}
