//! Tokenization shared by the coupling and similarity scores.

use std::collections::BTreeSet;

/// Lowercased word tokens of `text`, split on runs of non-alphanumeric
/// characters. No stemming.
pub fn tokenize(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// |a ∩ b| / |a ∪ b|; two empty sets are treated as identical.
pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        return 1.0;
    }
    a.intersection(b).count() as f64 / union as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(words: &[&str]) -> BTreeSet<String> {
        words.iter().map(|w| w.to_string()).collect()
    }

    #[test]
    fn splits_on_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("Merge Deployment, and first-invocation!"),
            set(&["merge", "deployment", "and", "first", "invocation"])
        );
        assert!(tokenize("  -- ").is_empty());
    }

    #[test]
    fn jaccard_basics() {
        assert!((jaccard(&set(&["x", "y"]), &set(&["y", "z"])) - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(jaccard(&set(&["a"]), &set(&["b"])), 0.0);
        assert_eq!(jaccard(&set(&["a", "b"]), &set(&["b", "a"])), 1.0);
    }
}
