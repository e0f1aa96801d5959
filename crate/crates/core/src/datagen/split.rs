use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

/// English function words ignored by the disjointness check.
pub const STOPWORDS: [&str; 50] = [
    "a", "about", "after", "all", "an", "and", "are", "as", "at", "be", "been", "but", "by", "can",
    "did", "do", "does", "for", "from", "had", "has", "have", "how", "i", "if", "in", "is", "it",
    "its", "not", "of", "on", "or", "so", "than", "that", "the", "their", "then", "there",
    "these", "this", "to", "was", "were", "what", "when", "which", "who", "with",
];

fn content_unigrams<'a, S: AsRef<str> + 'a>(texts: &'a [S], stopwords: &[&str]) -> BTreeSet<String> {
    texts
        .iter()
        .flat_map(|t| t.as_ref().split_whitespace())
        .map(|w| w.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase())
        .filter(|w| !w.is_empty() && !stopwords.contains(&w.as_str()))
        .collect()
}

/// Non-stopword unigrams occurring in both sets, sorted. Surrounding
/// punctuation is stripped before comparison.
pub fn shared_unigrams<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T], stopwords: &[&str]) -> Vec<String> {
    let a = content_unigrams(a, stopwords);
    let b = content_unigrams(b, stopwords);
    a.intersection(&b).cloned().collect()
}

pub fn check_disjoint_split<S: AsRef<str>, T: AsRef<str>>(a: &[S], b: &[T], stopwords: &[&str]) -> bool {
    shared_unigrams(a, b, stopwords).is_empty()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shared_content_word_is_detected() {
        assert!(!check_disjoint_split(&["play super mario"], &["super fast car"], &STOPWORDS));
        assert_eq!(
            shared_unigrams(&["play super mario"], &["super fast car"], &STOPWORDS),
            ["super"]
        );
    }

    #[test]
    fn stopwords_do_not_count() {
        assert!(check_disjoint_split(&["play mario"], &["the weather"], &["the"]));
        assert!(check_disjoint_split(&["the mario"], &["the weather"], &["the"]));
        assert!(!check_disjoint_split(&["the mario"], &["the weather"], &[]));
    }

    #[test]
    fn identical_sets_overlap() {
        assert!(!check_disjoint_split(&["mario kart"], &["mario kart"], &STOPWORDS));
        let empty: [&str; 0] = [];
        assert!(check_disjoint_split(&empty, &empty, &STOPWORDS));
    }

    #[test]
    fn punctuation_is_stripped() {
        assert!(!check_disjoint_split(&["is it mario?"], &["mario, again"], &STOPWORDS));
    }

    #[test]
    fn stopword_list_is_sorted_and_unique() {
        assert!(STOPWORDS.windows(2).all(|w| w[0] < w[1]));
    }
}
