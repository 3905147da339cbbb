//! Legal-domain tokenizer.
//!
//! Three token classes beyond plain words: multiword legal phrases (greedy
//! longest match against a lexicon), citation tokens (`Article 6`,
//! `Art. 32(1)(a)`), and number tokens. All surfaces are lowercased.
//! Stopwords are kept in the stream; filtering is the index's job.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Seed phrases always present in the default lexicon.
pub const DEFAULT_SEED_TERMS: &[&str] = &[
    "data subject",
    "personal data",
    "legal basis",
    "data controller",
    "data processor",
    "opt-out mechanism",
    "data protection officer",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Word,
    Phrase,
    Citation,
    Number,
}

/// One token with its character offset into the source text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub kind: TokenKind,
    pub offset: usize,
}

/// Case-insensitive set of multiword phrases to keep intact.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseLexicon {
    entries: BTreeSet<String>,
    max_words: usize,
}

impl PhraseLexicon {
    /// Build a lexicon from seed terms: lowercase, deduplicate, drop
    /// single-word entries.
    pub fn build(seed_terms: &[&str]) -> PhraseLexicon {
        let mut entries = BTreeSet::new();
        let mut max_words = 0;
        for term in seed_terms {
            let words: Vec<String> = term
                .to_lowercase()
                .split_whitespace()
                .map(str::to_string)
                .collect();
            if words.len() < 2 {
                continue;
            }
            max_words = max_words.max(words.len());
            entries.insert(words.join(" "));
        }
        PhraseLexicon { entries, max_words }
    }

    /// The built-in seed lexicon.
    pub fn default_seed() -> PhraseLexicon {
        PhraseLexicon::build(DEFAULT_SEED_TERMS)
    }

    /// Load a lexicon from a newline-delimited term file. Blank lines and
    /// `#` comments are skipped.
    pub fn from_file(path: &Path) -> std::io::Result<PhraseLexicon> {
        let content = std::fs::read_to_string(path)?;
        let terms: Vec<&str> = content
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect();
        Ok(PhraseLexicon::build(&terms))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, phrase: &str) -> bool {
        self.entries.contains(phrase)
    }

    pub fn entries(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(String::as_str)
    }
}

/// Alias of [`PhraseLexicon::build`] taking owned seed terms.
pub fn build_phrase_lexicon(seed_terms: &[String]) -> PhraseLexicon {
    let refs: Vec<&str> = seed_terms.iter().map(String::as_str).collect();
    PhraseLexicon::build(&refs)
}

// A word span: a maximal run of alphanumerics, allowing interior hyphens
// so entries like "opt-out mechanism" survive as written.
#[derive(Debug)]
struct Span {
    char_start: usize,
    byte_start: usize,
    byte_end: usize,
    lower: String,
}

fn word_spans(text: &str) -> Vec<Span> {
    let mut spans = Vec::new();
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    let mut char_pos = 0;
    while i < chars.len() {
        let (byte_start, c) = chars[i];
        if c.is_alphanumeric() {
            let char_start = char_pos;
            let mut j = i;
            while j < chars.len() {
                let (_, cj) = chars[j];
                let interior_hyphen = cj == '-'
                    && j + 1 < chars.len()
                    && chars[j + 1].1.is_alphanumeric()
                    && chars[j - 1].1.is_alphanumeric();
                if cj.is_alphanumeric() || interior_hyphen {
                    j += 1;
                } else {
                    break;
                }
            }
            let byte_end = if j < chars.len() { chars[j].0 } else { text.len() };
            spans.push(Span {
                char_start,
                byte_start,
                byte_end,
                lower: text[byte_start..byte_end].to_lowercase(),
            });
            char_pos += j - i;
            i = j;
        } else {
            char_pos += 1;
            i += 1;
        }
    }
    spans
}

fn citation_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\bart(?:icle|\.)?\s+(\d+)(?:\s*\(\s*(\d+)\s*\))?(?:\s*\(\s*([a-z])\s*\))?",
        )
        .unwrap()
    })
}

/// Tokenize normalized text, merging lexicon phrases and citation patterns.
pub fn tokenize(text: &str, lexicon: &PhraseLexicon) -> Vec<Token> {
    let spans = word_spans(text);

    // citation matches, as (byte range, canonical surface)
    struct CitationAt {
        surface: String,
        skip: usize, // number of spans consumed
    }
    let mut citation_at: Vec<Option<CitationAt>> = (0..spans.len()).map(|_| None).collect();
    let mut in_citation = vec![false; spans.len()];
    for caps in citation_regex().captures_iter(text) {
        let m = caps.get(0).unwrap();
        let covered: Vec<usize> = spans
            .iter()
            .enumerate()
            .filter(|(_, s)| s.byte_start >= m.start() && s.byte_end <= m.end())
            .map(|(i, _)| i)
            .collect();
        let Some(&first) = covered.first() else { continue };
        let mut surface = format!("article {}", &caps[1]);
        if let Some(p) = caps.get(2) {
            surface.push_str(&format!("({})", p.as_str()));
        }
        if let Some(pt) = caps.get(3) {
            surface.push_str(&format!("({})", pt.as_str().to_lowercase()));
        }
        for &i in &covered {
            in_citation[i] = true;
        }
        citation_at[first] = Some(CitationAt {
            surface,
            skip: covered.len(),
        });
    }

    let mut tokens = Vec::new();
    let mut i = 0;
    while i < spans.len() {
        if let Some(cit) = &citation_at[i] {
            tokens.push(Token {
                surface: cit.surface.clone(),
                kind: TokenKind::Citation,
                offset: spans[i].char_start,
            });
            i += cit.skip;
            continue;
        }
        // greedy longest phrase match, never crossing a citation span
        let mut matched = 0;
        if lexicon.max_words >= 2 {
            let limit = lexicon.max_words.min(spans.len() - i);
            for len in (2..=limit).rev() {
                if (i..i + len).any(|j| in_citation[j]) {
                    continue;
                }
                let candidate = spans[i..i + len]
                    .iter()
                    .map(|s| s.lower.as_str())
                    .collect::<Vec<_>>()
                    .join(" ");
                if lexicon.contains(&candidate) {
                    tokens.push(Token {
                        surface: candidate,
                        kind: TokenKind::Phrase,
                        offset: spans[i].char_start,
                    });
                    matched = len;
                    break;
                }
            }
        }
        if matched > 0 {
            i += matched;
            continue;
        }
        let span = &spans[i];
        let kind = if span.lower.chars().all(|c| c.is_ascii_digit()) {
            TokenKind::Number
        } else {
            TokenKind::Word
        };
        tokens.push(Token {
            surface: span.lower.clone(),
            kind,
            offset: span.char_start,
        });
        i += 1;
    }
    tokens
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn greedy_phrase_merge() {
        let lexicon = PhraseLexicon::build(&["data subject"]);
        let tokens = tokenize("the data subject consents", &lexicon);
        let surfaces: Vec<(&str, TokenKind)> = tokens
            .iter()
            .map(|t| (t.surface.as_str(), t.kind))
            .collect();
        assert_eq!(
            surfaces,
            vec![
                ("the", TokenKind::Word),
                ("data subject", TokenKind::Phrase),
                ("consents", TokenKind::Word),
            ]
        );
    }

    #[test]
    fn citation_token_from_article_reference() {
        let tokens = tokenize("violates GDPR Article 6", &PhraseLexicon::default_seed());
        assert!(tokens
            .iter()
            .any(|t| t.kind == TokenKind::Citation && t.surface == "article 6"));
        assert!(tokens.iter().any(|t| t.surface == "gdpr"));
    }

    #[test]
    fn citation_with_paragraph_and_point() {
        let tokens = tokenize("see Art. 32(1)(a) here", &PhraseLexicon::default_seed());
        let cit: Vec<&Token> = tokens.iter().filter(|t| t.kind == TokenKind::Citation).collect();
        assert_eq!(cit.len(), 1);
        assert_eq!(cit[0].surface, "article 32(1)(a)");
    }

    #[test]
    fn lexicon_dedup_and_single_word_rejection() {
        assert_eq!(PhraseLexicon::build(&["Data Subject", "data subject"]).len(), 1);
        assert!(PhraseLexicon::build(&["consent"]).is_empty());
        assert_eq!(PhraseLexicon::default_seed().len(), 7);
    }

    #[test]
    fn numbers_are_tagged() {
        let tokens = tokenize("fine of 3000 euros", &PhraseLexicon::default_seed());
        assert!(tokens
            .iter()
            .any(|t| t.kind == TokenKind::Number && t.surface == "3000"));
    }

    #[test]
    fn offsets_strictly_increase() {
        let lexicon = PhraseLexicon::default_seed();
        let tokens = tokenize(
            "the data subject gave the data controller consent under Article 6",
            &lexicon,
        );
        for pair in tokens.windows(2) {
            assert!(pair[0].offset < pair[1].offset);
        }
    }

    #[test]
    fn longest_match_wins() {
        let lexicon = PhraseLexicon::build(&["data protection", "data protection officer"]);
        let tokens = tokenize("the data protection officer decides", &lexicon);
        assert!(tokens.iter().any(|t| t.surface == "data protection officer"));
        assert!(!tokens.iter().any(|t| t.surface == "data protection"));
    }

    fn fold_alnum(s: &str) -> String {
        s.to_lowercase().chars().filter(|c| c.is_alphanumeric()).collect()
    }

    proptest! {
        // joining surfaces preserves every alphanumeric character of the
        // input in order (case-folded); citation canonicalization may add
        // characters but never drops any
        #[test]
        fn reconstruction(s in "[a-zA-Z0-9 .,;()-]{0,120}") {
            let lexicon = PhraseLexicon::default_seed();
            let tokens = tokenize(&s, &lexicon);
            let joined = tokens.iter().map(|t| t.surface.as_str()).collect::<Vec<_>>().join(" ");
            let input_chars = fold_alnum(&s);
            let mut joined_chars = fold_alnum(&joined).chars().collect::<Vec<_>>();
            // subsequence check
            let mut pos = 0;
            for c in input_chars.chars() {
                while pos < joined_chars.len() && joined_chars[pos] != c {
                    pos += 1;
                }
                prop_assert!(pos < joined_chars.len(), "lost {:?} from {:?} -> {:?}", c, s, joined);
                joined_chars[pos] = '\u{0}';
                pos += 1;
            }
        }

        #[test]
        fn deterministic(s in "[a-z 0-9]{0,80}") {
            let lexicon = PhraseLexicon::default_seed();
            prop_assert_eq!(tokenize(&s, &lexicon), tokenize(&s, &lexicon));
        }
    }
}
