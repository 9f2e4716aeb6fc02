//! Issue-report datasets in the competition CSV schema: loading, writing,
//! deduplication and descriptive statistics.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::normalize::{clean_text, CleanRecord, NormalizationConfig};

/// The three issue categories, in code order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bug,
    Enhancement,
    Question,
}

impl Label {
    pub const ALL: [Label; 3] = [Label::Bug, Label::Enhancement, Label::Question];

    pub fn code(self) -> u8 {
        match self {
            Label::Bug => 0,
            Label::Enhancement => 1,
            Label::Question => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Label> {
        Label::ALL.get(code as usize).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bug => "bug",
            Label::Enhancement => "enhancement",
            Label::Question => "question",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bug" => Ok(Label::Bug),
            "enhancement" => Ok(Label::Enhancement),
            "question" => Ok(Label::Question),
            _ => Err(Error::InvalidLabel(s.to_string())),
        }
    }
}

/// Reporter role relative to the repository. Undocumented roles are kept
/// verbatim in `Other`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum AuthorAssociation {
    Owner,
    Maintainer,
    Contributor,
    Collaborator,
    Member,
    Mannequin,
    Other(String),
}

impl AuthorAssociation {
    pub fn parse(s: &str) -> Self {
        match s {
            "OWNER" => Self::Owner,
            "MAINTAINER" => Self::Maintainer,
            "CONTRIBUTOR" => Self::Contributor,
            "COLLABORATOR" => Self::Collaborator,
            "MEMBER" => Self::Member,
            "MANNEQUIN" => Self::Mannequin,
            other => Self::Other(other.to_string()),
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            Self::Owner => "OWNER",
            Self::Maintainer => "MAINTAINER",
            Self::Contributor => "CONTRIBUTOR",
            Self::Collaborator => "COLLABORATOR",
            Self::Member => "MEMBER",
            Self::Mannequin => "MANNEQUIN",
            Self::Other(s) => s,
        }
    }
}

/// One raw issue row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IssueRecord {
    pub issue_url: String,
    pub created_at: String,
    pub author_association: AuthorAssociation,
    pub repository_url: String,
    pub title: String,
    pub body: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Train,
    Test,
}

impl FromStr for Origin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Origin::Train),
            "test" => Ok(Origin::Test),
            _ => Err(Error::Config(format!("unknown origin {s:?} (expected train|test)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    pub records: Vec<IssueRecord>,
    pub origin: Origin,
    pub rejected_count: usize,
}

impl Dataset {
    pub fn new(records: Vec<IssueRecord>, origin: Origin) -> Self {
        Dataset {
            records,
            origin,
            rejected_count: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Accepted header names for each logical column. The first name listed is
/// the one used when writing.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub issue_url: Vec<String>,
    pub created_at: Vec<String>,
    pub author_association: Vec<String>,
    pub repository_url: Vec<String>,
    pub title: Vec<String>,
    pub body: Vec<String>,
    pub label: Vec<String>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        let names = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        ColumnMap {
            issue_url: names(&["issue_url"]),
            created_at: names(&["issue_created_at", "issue_create_at"]),
            author_association: names(&["issue_author_association"]),
            repository_url: names(&["repository_url"]),
            title: names(&["issue_title"]),
            body: names(&["issue_body"]),
            label: names(&["issue_label", "label"]),
        }
    }
}

impl ColumnMap {
    fn columns(&self) -> [(&'static str, &[String]); 7] {
        [
            ("issue_url", &self.issue_url),
            ("created_at", &self.created_at),
            ("author_association", &self.author_association),
            ("repository_url", &self.repository_url),
            ("title", &self.title),
            ("body", &self.body),
            ("label", &self.label),
        ]
    }

    fn resolve(&self, headers: &csv::StringRecord) -> Result<[usize; 7]> {
        let mut idx = [0usize; 7];
        for (slot, (logical, accepted)) in idx.iter_mut().zip(self.columns()) {
            *slot = headers
                .iter()
                .position(|h| accepted.iter().any(|a| a == h.trim()))
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "missing required column {logical} (accepted names: {})",
                        accepted.join(", ")
                    ))
                })?;
        }
        Ok(idx)
    }
}

/// Loads a dataset from a CSV file. Rows with an unknown label or an empty
/// `issue_url` are skipped and counted in `rejected_count`.
pub fn load_csv(path: impl AsRef<Path>, origin: Origin, columns: Option<&ColumnMap>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_csv(file, origin, columns)
}

pub fn read_csv<R: Read>(reader: R, origin: Origin, columns: Option<&ColumnMap>) -> Result<Dataset> {
    let default_map = ColumnMap::default();
    let map = columns.unwrap_or(&default_map);
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let [url, created, role, repo, title, body, label] = map.resolve(&headers)?;

    let mut records = Vec::new();
    let mut rejected = 0usize;
    let mut row = csv::StringRecord::new();
    loop {
        match rdr.read_record(&mut row) {
            Ok(false) => break,
            Ok(true) => {}
            Err(e) => return Err(csv_error(e)),
        }
        let field = |i: usize| row.get(i).unwrap_or("");
        let issue_url = field(url);
        let parsed_label = field(label).parse::<Label>();
        match parsed_label {
            Ok(label) if !issue_url.trim().is_empty() => records.push(IssueRecord {
                issue_url: issue_url.to_string(),
                created_at: field(created).to_string(),
                author_association: AuthorAssociation::parse(field(role)),
                repository_url: field(repo).to_string(),
                title: field(title).to_string(),
                body: field(body).to_string(),
                label,
            }),
            _ => rejected += 1,
        }
    }
    Ok(Dataset {
        records,
        origin,
        rejected_count: rejected,
    })
}

fn csv_error(e: csv::Error) -> Error {
    let row = e.position().map(|p| p.record()).unwrap_or(0);
    Error::Csv {
        row,
        message: e.to_string(),
    }
}

/// Writes a dataset with the default column names.
pub fn write_csv(d: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv_to(d, file).map_err(|e| match e {
        Error::Csv { message, .. } => Error::io(path, std::io::Error::other(message)),
        other => other,
    })
}

pub fn write_csv_to<W: Write>(d: &Dataset, writer: W) -> Result<()> {
    let map = ColumnMap::default();
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(map.columns().iter().map(|(_, names)| names[0].as_str()))
        .map_err(csv_error)?;
    for r in &d.records {
        wtr.write_record([
            r.issue_url.as_str(),
            r.created_at.as_str(),
            r.author_association.as_str(),
            r.repository_url.as_str(),
            r.title.as_str(),
            r.body.as_str(),
            r.label.as_str(),
        ])
        .map_err(csv_error)?;
    }
    wtr.flush().map_err(|e| Error::Csv {
        row: 0,
        message: e.to_string(),
    })
}

/// Keeps the first occurrence of each `issue_url`, in file order.
/// Test sets are never deduplicated.
pub fn deduplicate(d: Dataset) -> Result<(Dataset, usize)> {
    if d.origin != Origin::Train {
        return Err(Error::Precondition(
            "deduplication is only applied to training datasets".into(),
        ));
    }
    let before = d.records.len();
    let mut seen = HashSet::with_capacity(before);
    let records: Vec<IssueRecord> = d
        .records
        .into_iter()
        .filter(|r| seen.insert(r.issue_url.clone()))
        .collect();
    let removed = before - records.len();
    Ok((
        Dataset {
            records,
            origin: d.origin,
            rejected_count: d.rejected_count,
        },
        removed,
    ))
}

/// Writes cleaned records as a `text,label_code` CSV.
pub fn write_clean_csv_to<W: Write>(records: &[CleanRecord], writer: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(["text", "label_code"]).map_err(csv_error)?;
    for r in records {
        wtr.write_record([r.text.as_str(), &r.label_code.to_string()])
            .map_err(csv_error)?;
    }
    wtr.flush().map_err(|e| Error::Csv {
        row: 0,
        message: e.to_string(),
    })
}

pub fn write_clean_csv(records: &[CleanRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_clean_csv_to(records, std::io::BufWriter::new(file))
}

/// Reads a `text,label_code` CSV. Unlike raw loading, a bad label code is
/// an error: cleaned files are produced by this toolkit.
pub fn read_clean_csv<R: Read>(reader: R) -> Result<Vec<CleanRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(csv_error)?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Schema(format!("cleaned CSV lacks a {name:?} column")))
    };
    let (text, code) = (col("text")?, col("label_code")?);
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(csv_error)?;
        let raw = row.get(code).unwrap_or("").trim();
        let label_code = raw
            .parse::<u8>()
            .ok()
            .filter(|&c| Label::from_code(c).is_some())
            .ok_or_else(|| Error::Csv {
                row: i as u64 + 2,
                message: format!("invalid label_code {raw:?}"),
            })?;
        out.push(CleanRecord {
            text: row.get(text).unwrap_or("").to_string(),
            label_code,
        });
    }
    Ok(out)
}

pub fn load_clean_csv(path: impl AsRef<Path>) -> Result<Vec<CleanRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_clean_csv(std::io::BufReader::new(file))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub n_records: usize,
    pub n_rejected: usize,
    pub n_duplicates_removed: usize,
    pub n_empty_bodies: usize,
    pub mean_title_tokens: f64,
    pub mean_body_tokens: f64,
    pub median_body_tokens: f64,
    pub per_label_counts: BTreeMap<String, usize>,
    pub per_role_counts: BTreeMap<String, usize>,
    /// Set when the dataset had no records; means and median are then 0.
    pub empty: bool,
}

/// Token statistics over cleaned (normalized, not truncated) titles and
/// bodies. `n_duplicates_removed` is left at 0 for the caller to fill in.
pub fn compute_stats(d: &Dataset, cfg: &NormalizationConfig) -> CorpusStats {
    let mut per_label_counts: BTreeMap<String, usize> =
        Label::ALL.iter().map(|l| (l.as_str().to_string(), 0)).collect();
    let mut per_role_counts = BTreeMap::new();
    let mut title_total = 0usize;
    let mut body_counts = Vec::with_capacity(d.len());
    let mut n_empty_bodies = 0;

    for r in &d.records {
        *per_label_counts.entry(r.label.as_str().to_string()).or_default() += 1;
        *per_role_counts
            .entry(r.author_association.as_str().to_string())
            .or_default() += 1;
        if r.body.trim().is_empty() {
            n_empty_bodies += 1;
        }
        title_total += count_tokens(&clean_text(&r.title, cfg));
        body_counts.push(count_tokens(&clean_text(&r.body, cfg)));
    }

    let n = d.len();
    let (mean_title, mean_body) = if n == 0 {
        (0.0, 0.0)
    } else {
        (
            title_total as f64 / n as f64,
            body_counts.iter().sum::<usize>() as f64 / n as f64,
        )
    };
    CorpusStats {
        n_records: n,
        n_rejected: d.rejected_count,
        n_duplicates_removed: 0,
        n_empty_bodies,
        mean_title_tokens: mean_title,
        mean_body_tokens: mean_body,
        median_body_tokens: lower_median(&mut body_counts),
        per_label_counts,
        per_role_counts,
        empty: n == 0,
    }
}

fn count_tokens(s: &str) -> usize {
    s.split_whitespace().count()
}

/// Lower median: for even lengths the smaller of the two middle values.
pub fn lower_median(values: &mut [usize]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    values[(values.len() - 1) / 2] as f64
}
