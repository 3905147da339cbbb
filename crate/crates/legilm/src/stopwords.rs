//! Fixed English stopword list shared by the retriever and the dataset
//! pair validator. The list is frozen so that index scores and overlap
//! checks are reproducible across builds.

/// Words excluded from index postings and overlap computations.
/// Phrase and citation tokens are never stopwords.
pub const STOPWORDS: &[&str] = &[
    "a", "an", "and", "any", "are", "as", "at", "be", "been", "but", "by", "can", "do", "for",
    "from", "had", "has", "have", "he", "her", "his", "if", "in", "into", "is", "it", "its", "may",
    "not", "of", "on", "or", "s", "shall", "she", "should", "such", "that", "the", "their", "them",
    "then", "there", "these", "they", "this", "those", "to", "was", "were", "where", "which",
    "will", "with", "would",
];

/// Membership test against [`STOPWORDS`]. Input must already be lowercase.
pub fn is_stopword(word: &str) -> bool {
    STOPWORDS.binary_search(&word).is_ok()
}
