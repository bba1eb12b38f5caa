//! Caption text normalization shared by the parser, the concept filter and
//! the mock models.

/// Lowercases, turns punctuation into spaces and collapses whitespace.
///
/// Apostrophes and hyphens survive only inside a word ("man's", "t-shirt").
pub fn normalize_text(text: &str) -> String {
    tokenize(text).join(" ")
}

/// Normalized tokens of `text`.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    lowered
        .split(|c: char| !(c.is_alphanumeric() || c == '\'' || c == '-'))
        .map(|w| w.trim_matches(|c: char| c == '\'' || c == '-'))
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect()
}

/// Whether `plural` is `singular` plus a regular "-s", or "-es" after a
/// sibilant ("boxes", "benches", "buses").
pub fn is_plural_of(plural: &str, singular: &str) -> bool {
    let Some(suffix) = plural.strip_prefix(singular) else {
        return false;
    };
    let sibilant = ["s", "x", "z", "ch", "sh"].iter().any(|e| singular.ends_with(e));
    match suffix {
        "s" => !singular.is_empty() && !sibilant,
        "es" => sibilant,
        _ => false,
    }
}

/// Equality up to a regular plural suffix on either side.
pub fn same_noun(a: &str, b: &str) -> bool {
    a == b || is_plural_of(a, b) || is_plural_of(b, a)
}
