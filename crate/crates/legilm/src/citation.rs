//! Canonical clause citations of the form `REG Art. N(P)(x)`.
//!
//! A citation addresses one unit of a regulation at article, paragraph, or
//! point granularity, e.g. `GDPR Art. 32`, `GDPR Art. 32(1)`,
//! `GDPR Art. 32(1)(a)`. The string form is a deterministic function of the
//! fields, so citations can double as stable index and map keys.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CitationError {
    #[error("unparseable citation: {0:?}")]
    Unparseable(String),
    #[error("point requires a paragraph in {0:?}")]
    PointWithoutParagraph(String),
}

/// One addressable unit of a regulation.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Citation {
    pub regulation_id: String,
    pub article: u32,
    pub paragraph: Option<u32>,
    pub point: Option<char>,
}

impl Citation {
    pub fn article(regulation_id: &str, article: u32) -> Self {
        Citation {
            regulation_id: regulation_id.to_string(),
            article,
            paragraph: None,
            point: None,
        }
    }

    pub fn paragraph(regulation_id: &str, article: u32, paragraph: u32) -> Self {
        Citation {
            regulation_id: regulation_id.to_string(),
            article,
            paragraph: Some(paragraph),
            point: None,
        }
    }

    pub fn point(regulation_id: &str, article: u32, paragraph: u32, point: char) -> Self {
        Citation {
            regulation_id: regulation_id.to_string(),
            article,
            paragraph: Some(paragraph),
            point: Some(point),
        }
    }

    /// Article-level citation for the same article.
    pub fn to_article_level(&self) -> Citation {
        Citation::article(&self.regulation_id, self.article)
    }

    /// Parse a canonical citation string, also accepting the loose forms
    /// found in running text and data feeds: `Article 6`, `Art 32(1)(a)`,
    /// a bare article number, with or without a leading regulation id.
    /// `default_regulation` fills in the regulation when none is written.
    pub fn parse(text: &str, default_regulation: &str) -> Result<Citation, CitationError> {
        static RE: OnceLock<Regex> = OnceLock::new();
        let re = RE.get_or_init(|| {
            Regex::new(
                r"(?ix) ^ \s*
                  (?: (?P<reg>[A-Za-z][A-Za-z0-9_-]*) \s+ )?
                  (?: art(?:icle)? \.? \s* )?
                  (?P<num>\d+)
                  (?: \s* \( \s* (?P<para>\d+) \s* \) )?
                  (?: \s* \( \s* (?P<point>[a-z]) \s* \) )?
                  \s* $",
            )
            .unwrap()
        });
        let caps = re
            .captures(text)
            .ok_or_else(|| CitationError::Unparseable(text.to_string()))?;
        // The leading word is a regulation id unless it is itself the
        // article marker ("Article 6" must not yield regulation "ARTICLE").
        let regulation_id = caps
            .name("reg")
            .map(|m| m.as_str())
            .filter(|w| !w.eq_ignore_ascii_case("art") && !w.eq_ignore_ascii_case("article"))
            .map(str::to_uppercase)
            .unwrap_or_else(|| default_regulation.to_string());
        let article: u32 = caps["num"]
            .parse()
            .map_err(|_| CitationError::Unparseable(text.to_string()))?;
        if article == 0 {
            return Err(CitationError::Unparseable(text.to_string()));
        }
        let paragraph = caps.name("para").map(|m| m.as_str().parse().unwrap());
        let point = caps
            .name("point")
            .map(|m| m.as_str().chars().next().unwrap().to_ascii_lowercase());
        if point.is_some() && paragraph.is_none() {
            return Err(CitationError::PointWithoutParagraph(text.to_string()));
        }
        Ok(Citation {
            regulation_id,
            article,
            paragraph,
            point,
        })
    }
}

impl fmt::Display for Citation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} Art. {}", self.regulation_id, self.article)?;
        if let Some(p) = self.paragraph {
            write!(f, "({p})")?;
        }
        if let Some(pt) = self.point {
            write!(f, "({pt})")?;
        }
        Ok(())
    }
}

impl From<Citation> for String {
    fn from(c: Citation) -> String {
        c.to_string()
    }
}

impl TryFrom<String> for Citation {
    type Error = CitationError;
    fn try_from(s: String) -> Result<Citation, CitationError> {
        Citation::parse(&s, "GDPR")
    }
}
