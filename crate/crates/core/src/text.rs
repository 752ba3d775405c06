//! Deterministic bag-of-words relevance scoring.
//!
//! Every ranking in the runtime (insight recall, working-memory reads,
//! pool fetches, tool lookup, portrait matching, icon verification) goes
//! through [`overlap_score`], so results can be checked against a
//! brute-force recomputation in tests.

use std::collections::BTreeSet;

const STOPWORDS: &[&str] = &[
    "a", "an", "and", "are", "as", "at", "be", "by", "for", "from", "go", "goes", "has", "have",
    "help", "i", "in", "into", "is", "it", "its", "me", "my", "of", "on", "open", "opens", "or",
    "so", "that", "the", "then", "this", "to", "up", "was", "what", "when", "which", "will",
    "with", "you", "your",
];

const SUFFIXES: &[&str] = &["ings", "ing", "ers", "er", "es", "ed", "s", "e"];

/// Lowercase, split on non-alphanumerics, drop stopwords and apply a light
/// suffix stemmer (`composer` and `compose` both become `compos`).
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .map(|w| stem(&w))
        .collect()
}

pub fn stem(word: &str) -> String {
    for suffix in SUFFIXES {
        if let Some(base) = word.strip_suffix(suffix) {
            if base.chars().count() >= 3 {
                return base.to_string();
            }
        }
    }
    word.to_string()
}

/// Fraction of the query's distinct tokens that also occur in `doc`.
/// Zero when the query has no content tokens.
pub fn overlap_score(query: &str, doc: &str) -> f64 {
    let q = tokens(query);
    if q.is_empty() {
        return 0.0;
    }
    let d = tokens(doc);
    let shared = q.iter().filter(|t| d.contains(*t)).count();
    shared as f64 / q.len() as f64
}

/// Substrings enclosed in single or double quotes, in order of appearance.
/// Used to pull task-specific inputs (`post tweet 'hi'`) out of descriptions.
pub fn quoted_inputs(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut chars = text.char_indices().peekable();
    while let Some((i, c)) = chars.next() {
        if c != '\'' && c != '"' {
            continue;
        }
        // an apostrophe inside a word is not an opening quote
        if c == '\'' && i > 0 && text[..i].chars().last().is_some_and(|p| p.is_alphanumeric()) {
            continue;
        }
        let start = i + c.len_utf8();
        let mut end = None;
        for (j, d) in chars.by_ref() {
            if d == c {
                end = Some(j);
                break;
            }
        }
        if let Some(end) = end {
            if end > start {
                out.push(text[start..end].to_string());
            }
        }
    }
    out
}

/// Lowercase snake-case identifier built from the content words of `text`.
pub fn slug(text: &str) -> String {
    let words: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(|w| w.to_lowercase())
        .filter(|w| !STOPWORDS.contains(&w.as_str()))
        .collect();
    if words.is_empty() {
        "unnamed".to_string()
    } else {
        words.join("_")
    }
}

/// Estimated model tokens for a piece of text: characters / 4, rounded up.
pub fn token_estimate(text: &str) -> usize {
    text.chars().count().div_ceil(4)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stemming_merges_related_forms() {
        assert_eq!(tokens("opens composer"), tokens("compose"));
        assert_eq!(tokens("Settings"), tokens("setting"));
    }

    #[test]
    fn overlap_is_fraction_of_query() {
        assert_eq!(overlap_score("post tweet hi", "write the tweet body; post tweet"), 2.0 / 3.0);
        assert_eq!(overlap_score("the a", "anything"), 0.0);
        assert_eq!(overlap_score("verification code", "verification code is 4821"), 1.0);
    }

    #[test]
    fn quoted_inputs_are_extracted_in_order() {
        assert_eq!(quoted_inputs("post tweet 'hi' then say \"bye\""), vec!["hi", "bye"]);
        assert_eq!(quoted_inputs("twitter's feed"), Vec::<String>::new());
        assert!(quoted_inputs("unterminated 'quote").is_empty());
    }

    #[test]
    fn slug_drops_stopwords() {
        assert_eq!(slug("Post a tweet"), "post_tweet");
        assert_eq!(slug("the"), "unnamed");
    }

    #[test]
    fn token_estimate_rounds_up() {
        assert_eq!(token_estimate(""), 0);
        assert_eq!(token_estimate("abcde"), 2);
        assert_eq!(token_estimate("abcd"), 1);
    }
}
