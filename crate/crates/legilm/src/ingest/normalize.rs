//! Text normalization applied to every ingested document.
//!
//! Pipeline: decode entity escapes, strip markup tags, compose Unicode
//! (NFC), map typographic quotes to straight quotes, collapse whitespace
//! runs, trim. Entity decoding and tag stripping run to a fixpoint so the
//! whole function is idempotent even on doubly escaped input.

use std::sync::OnceLock;

use regex::Regex;
use unicode_normalization::UnicodeNormalization;

/// Normalize arbitrary text to single-space prose. Total and idempotent.
pub fn normalize_text(raw: &str) -> String {
    let mut text = raw.to_string();
    loop {
        let decoded = decode_entities(&text);
        if decoded == text {
            break;
        }
        text = decoded;
    }
    loop {
        let stripped = strip_tags(&text);
        if stripped == text {
            break;
        }
        text = stripped;
    }
    let text: String = text.nfc().collect();
    let text: String = text.chars().map(map_quote).collect();
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

fn map_quote(c: char) -> char {
    match c {
        '\u{2018}' | '\u{2019}' | '\u{201A}' | '\u{2032}' => '\'',
        '\u{201C}' | '\u{201D}' | '\u{201E}' | '\u{2033}' => '"',
        '\u{00A0}' | '\u{2009}' | '\u{202F}' => ' ',
        other => other,
    }
}

fn strip_tags(text: &str) -> String {
    static TAG: OnceLock<Regex> = OnceLock::new();
    let tag = TAG.get_or_init(|| Regex::new(r"<[^<>]*>").unwrap());
    tag.replace_all(text, " ").into_owned()
}

fn decode_entities(text: &str) -> String {
    static ENTITY: OnceLock<Regex> = OnceLock::new();
    let entity = ENTITY.get_or_init(|| Regex::new(r"&(#x?[0-9A-Fa-f]+|[a-zA-Z]+);").unwrap());
    entity
        .replace_all(text, |caps: &regex::Captures<'_>| {
            let name = &caps[1];
            match name {
                "amp" => "&".to_string(),
                "lt" => "<".to_string(),
                "gt" => ">".to_string(),
                "quot" => "\"".to_string(),
                "apos" => "'".to_string(),
                "nbsp" => " ".to_string(),
                _ => {
                    if let Some(rest) = name.strip_prefix("#x").or(name.strip_prefix("#X")) {
                        decode_codepoint(rest, 16).unwrap_or_else(|| caps[0].to_string())
                    } else if let Some(rest) = name.strip_prefix('#') {
                        decode_codepoint(rest, 10).unwrap_or_else(|| caps[0].to_string())
                    } else {
                        // unknown named entity, keep verbatim
                        caps[0].to_string()
                    }
                }
            }
        })
        .into_owned()
}

fn decode_codepoint(digits: &str, radix: u32) -> Option<String> {
    let code = u32::from_str_radix(digits, radix).ok()?;
    char::from_u32(code).map(|c| c.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn strips_tags_and_collapses_whitespace() {
        assert_eq!(normalize_text("<p>data  subject</p>"), "data subject");
    }

    #[test]
    fn identity_on_normal_text() {
        assert_eq!(normalize_text("x"), "x");
    }

    #[test]
    fn decodes_entities_and_quotes() {
        assert_eq!(normalize_text("Tom &amp; Jerry&nbsp;Ltd"), "Tom & Jerry Ltd");
        assert_eq!(normalize_text("\u{201C}consent\u{201D}"), "\"consent\"");
        assert_eq!(normalize_text("&#65;&#x42;"), "AB");
    }

    #[test]
    fn doubly_escaped_input_is_stable() {
        let once = normalize_text("&amp;lt;p&amp;gt;x");
        assert_eq!(normalize_text(&once), once);
    }

    #[test]
    fn empty_input() {
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("   \n\t "), "");
    }

    #[test]
    fn article_32_fragment_with_list_markup() {
        let raw = "<ul><li>The pseudonymisation and\n encryption of personal data;</li></ul>";
        let out = normalize_text(raw);
        assert!(out.starts_with("The pseudonymisation and encryption of personal data"));
        assert!(!out.contains('<'));
        assert!(!out.contains('\n'));
    }

    proptest! {
        #[test]
        fn idempotent(s in "\\PC{0,200}") {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }

        #[test]
        fn idempotent_on_markupish_input(
            s in "([a-z &;#<>\u{201C}\u{2019}]|&amp;|&lt;|<p>|</p>|&#38;){0,40}"
        ) {
            let once = normalize_text(&s);
            prop_assert_eq!(normalize_text(&once), once);
        }
    }
}
