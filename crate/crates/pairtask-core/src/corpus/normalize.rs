//! Social-media text normalization.
//!
//! URLs become `[URL]`, `@`-initial usernames become `[USER]`, and emoji
//! become their bracketed lowercase names looked up in a bundled table.
//! All three replacements are idempotent, so normalizing already-normalized
//! text is a no-op.

use std::collections::HashMap;

use once_cell::sync::Lazy;
use regex::Regex;

/// Scheme-based URLs plus bare `www.`-prefixed tokens. A full RFC parser is
/// deliberately not used; this covers the link forms seen in social media.
static URL_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"https?://\S+|\bwww\.\S+").unwrap());

/// `@` followed by at least one word character, maximal match.
static USER_RE: Lazy<Regex> = Lazy::new(|| Regex::new(r"@\w+").unwrap());

/// Codepoint → lowercase english name, parsed from the bundled table.
/// Codepoints absent from the table pass through unchanged.
static EMOJI_NAMES: Lazy<HashMap<char, &'static str>> = Lazy::new(|| {
    let mut table = HashMap::new();
    for line in include_str!("../../data/emoji_names.tsv").lines() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (hex, name) = line
            .split_once('\t')
            .expect("malformed row in emoji_names.tsv");
        let cp = u32::from_str_radix(hex, 16).expect("bad codepoint in emoji_names.tsv");
        let c = char::from_u32(cp).expect("invalid scalar in emoji_names.tsv");
        table.insert(c, name);
    }
    table
});

/// Normalize one text: replace URLs with `[URL]`, usernames with `[USER]`,
/// and known emoji with `[<name>]`. Degenerate inputs pass through.
pub fn normalize_text(raw: &str) -> String {
    // URL replacement runs first so `@` and emoji inside a link are consumed
    // with it.
    let text = URL_RE.replace_all(raw, "[URL]");
    let text = USER_RE.replace_all(&text, "[USER]");
    if !text.chars().any(|c| EMOJI_NAMES.contains_key(&c)) {
        return text.into_owned();
    }
    let mut out = String::with_capacity(text.len() + 16);
    for c in text.chars() {
        match EMOJI_NAMES.get(&c) {
            Some(name) => {
                out.push('[');
                out.push_str(name);
                out.push(']');
            }
            None => out.push(c),
        }
    }
    out
}

/// Number of URL substrings the normalizer would replace. Exposed for
/// property tests over the normalizer's contract.
#[cfg(test)]
pub(crate) fn count_urls(text: &str) -> usize {
    URL_RE.find_iter(text).count()
}

/// Number of `@`-initial username tokens the normalizer would replace.
#[cfg(test)]
pub(crate) fn count_usernames(text: &str) -> usize {
    USER_RE.find_iter(text).count()
}
