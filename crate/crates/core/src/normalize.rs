//! Text cleaning for issue reports.
//!
//! Title and body go through concept normalization (spans such as function
//! calls or URLs are replaced by sentinel tokens like `<FUNCTION>`), then
//! punctuation and non-ASCII removal, lowercasing and whitespace squeezing.
//! The repository column loses its API base URL. The selected fields are
//! joined in a fixed order and truncated to `max_tokens` whitespace tokens.
//!
//! Sentinels are protected from the character-level passes, so a `<` or `>`
//! only survives cleaning as part of a sentinel.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::{Captures, Regex};
use serde::{Deserialize, Serialize};

use crate::corpus::{IssueRecord, Label};
use crate::error::{Error, Result};

/// A normalizable concept; each one owns a sentinel token and a matcher.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Concept {
    Function,
    Url,
    Codeblock,
    Path,
    Version,
    Number,
}

impl Concept {
    pub const ALL: [Concept; 6] = [
        Concept::Function,
        Concept::Url,
        Concept::Codeblock,
        Concept::Path,
        Concept::Version,
        Concept::Number,
    ];

    pub fn sentinel(self) -> &'static str {
        match self {
            Concept::Function => "<FUNCTION>",
            Concept::Url => "<URL>",
            Concept::Codeblock => "<CODEBLOCK>",
            Concept::Path => "<PATH>",
            Concept::Version => "<VERSION>",
            Concept::Number => "<NUMBER>",
        }
    }

    fn regex(self) -> Option<&'static Regex> {
        static FUNCTION: LazyLock<Regex> = LazyLock::new(|| {
            Regex::new(r"[A-Za-z_][A-Za-z0-9_]*(?:(?:\.|::|->)[A-Za-z_][A-Za-z0-9_]*)*\([^()\n]*\)").unwrap()
        });
        static URL: LazyLock<Regex> =
            LazyLock::new(|| Regex::new(r"[A-Za-z][A-Za-z0-9+.\-]*://\S+").unwrap());
        static CODEBLOCK: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?s)```.*?```").unwrap());
        static PATH: LazyLock<Regex> = LazyLock::new(|| {
            Regex::new(r"(?:[A-Za-z]:)?(?:[A-Za-z0-9_.~\-]*[/\\])+[A-Za-z0-9_\-]+\.[A-Za-z][A-Za-z0-9]{0,7}(?-u:\b)")
                .unwrap()
        });
        static VERSION: LazyLock<Regex> =
            LazyLock::new(|| Regex::new(r"(?-u:\b)[vV]?[0-9]+(?:\.[0-9]+)+(?-u:\b)").unwrap());
        match self {
            Concept::Function => Some(&FUNCTION),
            Concept::Url => Some(&URL),
            Concept::Codeblock => Some(&CODEBLOCK),
            Concept::Path => Some(&PATH),
            Concept::Version => Some(&VERSION),
            Concept::Number => None,
        }
    }

    /// Replaces every span of this concept with its sentinel, repeating
    /// until nothing matches (nested calls like `f(g(x))` collapse fully).
    pub fn apply(self, text: &str) -> String {
        let Some(re) = self.regex() else {
            return replace_numbers(text);
        };
        let mut current = text.to_string();
        for _ in 0..64 {
            if !re.is_match(&current) {
                break;
            }
            let src = current.as_str();
            let next = re
                .replace_all(src, |caps: &Captures| {
                    let m = caps.get(0).unwrap();
                    pad_sentinel(src, m.start(), m.end(), self.sentinel())
                })
                .into_owned();
            current = next;
        }
        current
    }
}

impl fmt::Display for Concept {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = self.sentinel();
        f.write_str(&s[1..s.len() - 1])
    }
}

// Pads with a space on each side that touches non-whitespace, so the
// sentinel always ends up as its own token.
fn pad_sentinel(src: &str, start: usize, end: usize, sentinel: &str) -> String {
    let before = src[..start].chars().next_back();
    let after = src[end..].chars().next();
    let mut out = String::with_capacity(sentinel.len() + 2);
    if before.is_some_and(|c| !c.is_ascii_whitespace()) {
        out.push(' ');
    }
    out.push_str(sentinel);
    if after.is_some_and(|c| !c.is_ascii_whitespace()) {
        out.push(' ');
    }
    out
}

/// A standalone number is a whitespace-delimited token with at least three
/// digits and nothing else that survives `strip_chars`.
fn replace_numbers(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    let mut token_start = None;
    let flush = |out: &mut String, token: &str| {
        if is_number_token(token) {
            out.push_str(Concept::Number.sentinel());
        } else {
            out.push_str(token);
        }
    };
    for (i, c) in text.char_indices() {
        if c.is_ascii_whitespace() {
            if let Some(s) = token_start.take() {
                flush(&mut out, &text[s..i]);
            }
            out.push(c);
        } else if token_start.is_none() {
            token_start = Some(i);
        }
    }
    if let Some(s) = token_start {
        flush(&mut out, &text[s..]);
    }
    out
}

fn is_number_token(token: &str) -> bool {
    let mut digits = 0;
    for c in token.chars() {
        if c.is_ascii_digit() {
            digits += 1;
        } else if c.is_ascii_alphabetic() {
            return false;
        }
    }
    digits >= 3
}

/// Input columns that can feed the model text, in join order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    CreatedAt,
    AuthorAssociation,
    Repository,
    Title,
    Body,
}

impl Field {
    pub const ALL: [Field; 5] = [
        Field::CreatedAt,
        Field::AuthorAssociation,
        Field::Repository,
        Field::Title,
        Field::Body,
    ];
}

impl FromStr for Field {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "created_at" => Ok(Field::CreatedAt),
            "author_association" | "role" => Ok(Field::AuthorAssociation),
            "repository" | "repo" => Ok(Field::Repository),
            "title" => Ok(Field::Title),
            "body" => Ok(Field::Body),
            other => Err(Error::Config(format!("unknown field {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormalizationConfig {
    /// Enabled concepts, in application order.
    pub sentinel_set: Vec<Concept>,
    pub repo_base_url: String,
    pub max_tokens: usize,
    pub field_selection: Vec<Field>,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        NormalizationConfig {
            sentinel_set: Concept::ALL.to_vec(),
            repo_base_url: "https://api.github.com/repos/".into(),
            max_tokens: 200,
            field_selection: Field::ALL.to_vec(),
        }
    }
}

impl NormalizationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_tokens == 0 {
            return Err(Error::Config("max_tokens must be at least 1".into()));
        }
        if self.repo_base_url.is_empty() {
            return Err(Error::Config("repo_base_url must be non-empty".into()));
        }
        for (i, c) in self.sentinel_set.iter().enumerate() {
            if self.sentinel_set[..i].contains(c) {
                return Err(Error::Config(format!("concept {c} listed twice")));
            }
        }
        if self.field_selection.is_empty() {
            return Err(Error::Config("field_selection must not be empty".into()));
        }
        Ok(())
    }

    pub fn with_fields(mut self, fields: &[Field]) -> Self {
        let mut fields = fields.to_vec();
        fields.sort();
        fields.dedup();
        self.field_selection = fields;
        self
    }
}

/// Cleaned model input plus its label code (bug 0, enhancement 1, question 2).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanRecord {
    pub text: String,
    pub label_code: u8,
}

/// Raw text columns of one issue; missing values are empty strings.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct IssueText {
    pub created_at: String,
    pub author_association: String,
    pub repository: String,
    pub title: String,
    pub body: String,
}

impl From<&IssueRecord> for IssueText {
    fn from(r: &IssueRecord) -> Self {
        IssueText {
            created_at: r.created_at.clone(),
            author_association: r.author_association.as_str().to_string(),
            repository: r.repository_url.clone(),
            title: r.title.clone(),
            body: r.body.clone(),
        }
    }
}

/// Replaces concept spans by sentinels. Sentinels already present in the
/// input are first split off into tokens of their own.
pub fn normalize_concepts(s: &str, cfg: &NormalizationConfig) -> String {
    cfg.sentinel_set
        .iter()
        .fold(map_outside_sentinels(s, true, Some), |acc, concept| concept.apply(&acc))
}

/// Applies `f` to every char outside protected sentinel tokens; `None` drops
/// the char. With `pad`, sentinels are surrounded by spaces so they always
/// end up as tokens of their own.
fn map_outside_sentinels(s: &str, pad: bool, f: impl Fn(char) -> Option<char>) -> String {
    let mut out = String::with_capacity(s.len());
    let mut rest = s;
    while let Some(c) = rest.chars().next() {
        if c == '<' {
            if let Some(sentinel) = Concept::ALL
                .iter()
                .map(|c| c.sentinel())
                .find(|tok| rest.starts_with(tok))
            {
                if pad {
                    out.push(' ');
                }
                out.push_str(sentinel);
                if pad {
                    out.push(' ');
                }
                rest = &rest[sentinel.len()..];
                continue;
            }
        }
        if let Some(mapped) = f(c) {
            out.push(mapped);
        }
        rest = &rest[c.len_utf8()..];
    }
    out
}

/// Drops every non-ASCII char and every ASCII char that is neither
/// alphanumeric nor whitespace, except inside sentinels.
pub fn strip_chars(s: &str) -> String {
    map_outside_sentinels(s, true, |c| {
        (c.is_ascii_alphanumeric() || c.is_ascii_whitespace()).then_some(c)
    })
}

pub fn lowercase(s: &str) -> String {
    map_outside_sentinels(s, false, |c| Some(c.to_ascii_lowercase()))
}

pub fn squeeze_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn strip_repo_base(url: &str, cfg: &NormalizationConfig) -> String {
    url.strip_prefix(cfg.repo_base_url.as_str())
        .unwrap_or(url)
        .to_string()
}

pub fn truncate_tokens(s: &str, k: usize) -> String {
    s.split_whitespace().take(k).collect::<Vec<_>>().join(" ")
}

/// Full title/body cleaning without truncation.
pub fn clean_text(s: &str, cfg: &NormalizationConfig) -> String {
    squeeze_whitespace(&lowercase(&strip_chars(&normalize_concepts(s, cfg))))
}

fn clean_plain(s: &str) -> String {
    squeeze_whitespace(&lowercase(&strip_chars(s)))
}

/// Cleans and joins the selected fields, then truncates to `max_tokens`.
pub fn clean_fields(t: &IssueText, cfg: &NormalizationConfig) -> String {
    let parts = Field::ALL
        .iter()
        .filter(|f| cfg.field_selection.contains(f))
        .map(|f| match f {
            Field::CreatedAt => clean_plain(&t.created_at),
            Field::AuthorAssociation => clean_plain(&t.author_association),
            Field::Repository => clean_plain(&strip_repo_base(&t.repository, cfg)),
            Field::Title => clean_text(&t.title, cfg),
            Field::Body => clean_text(&t.body, cfg),
        })
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>();
    truncate_tokens(&parts.join(" "), cfg.max_tokens)
}

pub fn clean_record(r: &IssueRecord, cfg: &NormalizationConfig) -> CleanRecord {
    CleanRecord {
        text: clean_fields(&IssueText::from(r), cfg),
        label_code: r.label.code(),
    }
}

pub fn encode_label(raw: &str) -> Result<u8> {
    raw.parse::<Label>().map(Label::code)
}

/// True when every `<` in `s` starts a known sentinel token.
pub fn sentinels_intact(s: &str) -> bool {
    s.match_indices('<').all(|(i, _)| {
        Concept::ALL
            .iter()
            .any(|c| s[i..].starts_with(c.sentinel()))
    })
}
