//! Normalized bibliographic records from the two supported sources.
//!
//! Records enter the system through `por.bib.v1` documents. Vendor exports
//! are expected to be converted into that layout before ingestion; this
//! module only validates and normalizes.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use serde_json::Value;
use thiserror::Error;

pub const BIB_SCHEMA: &str = "por.bib.v1";

static DOI_PATTERN: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^10\.[0-9]{4,9}/.+$").expect("static pattern"));

#[derive(Debug, Error)]
pub enum BibError {
    #[error("malformed DOI: {0:?}")]
    MalformedDoi(String),
    #[error("cannot read {path}: {source}")]
    FileUnreadable {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("schema violation{}: {message}", .index.map(|i| format!(" at record {i}")).unwrap_or_default())]
    SchemaViolation { index: Option<usize>, message: String },
    #[error("invalid author profile: {0}")]
    InvalidProfile(String),
}

impl BibError {
    fn schema(index: Option<usize>, message: impl Into<String>) -> Self {
        BibError::SchemaViolation {
            index,
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceTag {
    Scopus,
    Wos,
}

impl SourceTag {
    pub const ALL: [SourceTag; 2] = [SourceTag::Scopus, SourceTag::Wos];

    pub fn as_str(self) -> &'static str {
        match self {
            SourceTag::Scopus => "SCOPUS",
            SourceTag::Wos => "WOS",
        }
    }
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SourceTag {
    type Err = BibError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SCOPUS" => Ok(SourceTag::Scopus),
            "WOS" => Ok(SourceTag::Wos),
            other => Err(BibError::schema(None, format!("unknown source {other:?}"))),
        }
    }
}

/// A normalized DOI: trimmed, lowercased, `10.<registrant>/<suffix>`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Doi(String);

impl Doi {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Normalizes `raw` and checks it against the DOI grammar. A rejection means
/// the record carrying it is not authentic and must not be repaired.
pub fn validate_doi(raw: &str) -> Result<Doi, BibError> {
    let normalized = raw.trim().to_lowercase();
    if DOI_PATTERN.is_match(&normalized) {
        Ok(Doi(normalized))
    } else {
        Err(BibError::MalformedDoi(raw.to_string()))
    }
}

impl FromStr for Doi {
    type Err = BibError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        validate_doi(s)
    }
}

impl fmt::Display for Doi {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl Serialize for Doi {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.0)
    }
}

impl<'de> Deserialize<'de> for Doi {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        let doi = validate_doi(&raw).map_err(serde::de::Error::custom)?;
        // Stored documents must already be normalized.
        if doi.0 != raw {
            return Err(serde::de::Error::custom(format!("DOI {raw:?} is not normalized")));
        }
        Ok(doi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthorProfile {
    #[serde(default)]
    pub scopus_id: String,
    #[serde(default)]
    pub wos_id: String,
    #[serde(default)]
    pub display_name: String,
}

impl AuthorProfile {
    pub fn new(
        scopus_id: impl Into<String>,
        wos_id: impl Into<String>,
        display_name: impl Into<String>,
    ) -> Result<Self, BibError> {
        let profile = AuthorProfile {
            scopus_id: scopus_id.into(),
            wos_id: wos_id.into(),
            display_name: display_name.into(),
        };
        profile.validate()?;
        Ok(profile)
    }

    pub fn validate(&self) -> Result<(), BibError> {
        if self.scopus_id.is_empty() && self.wos_id.is_empty() {
            return Err(BibError::InvalidProfile(
                "at least one of scopus_id or wos_id is required".into(),
            ));
        }
        for id in [&self.scopus_id, &self.wos_id] {
            if id.chars().any(char::is_whitespace) {
                return Err(BibError::InvalidProfile(format!(
                    "identifier {id:?} contains whitespace"
                )));
            }
        }
        Ok(())
    }

    /// The non-empty source identifiers of this author.
    pub fn identifiers(&self) -> BTreeSet<&str> {
        [self.scopus_id.as_str(), self.wos_id.as_str()]
            .into_iter()
            .filter(|id| !id.is_empty())
            .collect()
    }

    /// Identifier under which this author's blocks and keys are filed:
    /// the Scopus AuthorID when present, else the ResearcherID.
    pub fn author_ref(&self) -> &str {
        if self.scopus_id.is_empty() {
            &self.wos_id
        } else {
            &self.scopus_id
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BibError> {
        let path = path.as_ref();
        let text = read_text(path)?;
        let profile: AuthorProfile = serde_json::from_str(&text)
            .map_err(|e| BibError::InvalidProfile(e.to_string()))?;
        profile.validate()?;
        Ok(profile)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PublicationRecord {
    pub source: SourceTag,
    pub doi: Option<Doi>,
    pub title: String,
    pub year: i32,
    pub author_ids: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CitationRecord {
    pub source: SourceTag,
    pub cited_doi: Doi,
    pub citing_doi: Option<Doi>,
    pub citing_author_ids: BTreeSet<String>,
    pub retracted: bool,
}

/// Counts of values that ingestion normalized away.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub records_read: usize,
    /// Publications whose DOI was present but malformed; kept with no DOI.
    pub malformed_publication_dois: usize,
    /// Citations whose citing DOI was present but malformed; kept with no citing DOI.
    pub malformed_citing_dois: usize,
    /// Citations dropped because the cited DOI was malformed.
    pub dropped_citations: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ingested<T> {
    pub records: Vec<T>,
    pub report: IngestReport,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct PublicationEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    doi: Option<String>,
    title: String,
    year: i32,
    author_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct CitationEntry {
    cited_doi: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    citing_doi: Option<String>,
    citing_author_ids: Vec<String>,
    retracted: bool,
}

/// A `por.bib.v1` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BibDocument {
    pub schema: String,
    pub source: SourceTag,
    #[serde(default)]
    pub publications: Vec<Value>,
    #[serde(default)]
    pub citations: Vec<Value>,
}

impl BibDocument {
    pub fn parse(text: &str) -> Result<Self, BibError> {
        let doc: BibDocument =
            serde_json::from_str(text).map_err(|e| BibError::schema(None, e.to_string()))?;
        if doc.schema != BIB_SCHEMA {
            return Err(BibError::schema(
                None,
                format!("expected schema {BIB_SCHEMA:?}, found {:?}", doc.schema),
            ));
        }
        Ok(doc)
    }

    pub fn from_records(
        source: SourceTag,
        publications: &[PublicationRecord],
        citations: &[CitationRecord],
    ) -> Self {
        let publications = publications
            .iter()
            .map(|p| {
                serde_json::to_value(PublicationEntry {
                    doi: p.doi.as_ref().map(|d| d.to_string()),
                    title: p.title.clone(),
                    year: p.year,
                    author_ids: p.author_ids.iter().cloned().collect(),
                })
                .expect("plain struct serializes")
            })
            .collect();
        let citations = citations
            .iter()
            .map(|c| {
                serde_json::to_value(CitationEntry {
                    cited_doi: c.cited_doi.to_string(),
                    citing_doi: c.citing_doi.as_ref().map(|d| d.to_string()),
                    citing_author_ids: c.citing_author_ids.iter().cloned().collect(),
                    retracted: c.retracted,
                })
                .expect("plain struct serializes")
            })
            .collect();
        BibDocument {
            schema: BIB_SCHEMA.to_string(),
            source,
            publications,
            citations,
        }
    }

    fn check_source(&self, source: SourceTag) -> Result<(), BibError> {
        if self.source != source {
            return Err(BibError::schema(
                None,
                format!("document source is {}, expected {source}", self.source),
            ));
        }
        Ok(())
    }

    pub fn publications(&self, source: SourceTag) -> Result<Ingested<PublicationRecord>, BibError> {
        self.check_source(source)?;
        let mut report = IngestReport {
            records_read: self.publications.len(),
            ..IngestReport::default()
        };
        let mut records = Vec::with_capacity(self.publications.len());
        for (index, value) in self.publications.iter().enumerate() {
            let entry: PublicationEntry = serde_json::from_value(value.clone())
                .map_err(|e| BibError::schema(Some(index), e.to_string()))?;
            if !(1500..=2200).contains(&entry.year) {
                return Err(BibError::schema(
                    Some(index),
                    format!("year {} outside [1500, 2200]", entry.year),
                ));
            }
            let doi = match entry.doi.as_deref() {
                None => None,
                Some(raw) => match validate_doi(raw) {
                    Ok(doi) => Some(doi),
                    Err(_) => {
                        report.malformed_publication_dois += 1;
                        None
                    }
                },
            };
            records.push(PublicationRecord {
                source,
                doi,
                title: entry.title,
                year: entry.year,
                author_ids: entry.author_ids.into_iter().collect(),
            });
        }
        Ok(Ingested { records, report })
    }

    pub fn citations(&self, source: SourceTag) -> Result<Ingested<CitationRecord>, BibError> {
        self.check_source(source)?;
        let mut report = IngestReport {
            records_read: self.citations.len(),
            ..IngestReport::default()
        };
        let mut records = Vec::with_capacity(self.citations.len());
        for (index, value) in self.citations.iter().enumerate() {
            let entry: CitationEntry = serde_json::from_value(value.clone())
                .map_err(|e| BibError::schema(Some(index), e.to_string()))?;
            let Ok(cited_doi) = validate_doi(&entry.cited_doi) else {
                report.dropped_citations += 1;
                continue;
            };
            let citing_doi = match entry.citing_doi.as_deref() {
                None => None,
                Some(raw) => match validate_doi(raw) {
                    Ok(doi) => Some(doi),
                    Err(_) => {
                        report.malformed_citing_dois += 1;
                        None
                    }
                },
            };
            records.push(CitationRecord {
                source,
                cited_doi,
                citing_doi,
                citing_author_ids: entry.citing_author_ids.into_iter().collect(),
                retracted: entry.retracted,
            });
        }
        Ok(Ingested { records, report })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("document serializes")
    }
}

fn read_text(path: &Path) -> Result<String, BibError> {
    fs::read_to_string(path).map_err(|source| BibError::FileUnreadable {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_document(path: impl AsRef<Path>) -> Result<BibDocument, BibError> {
    BibDocument::parse(&read_text(path.as_ref())?)
}

pub fn ingest_publications(
    path: impl AsRef<Path>,
    source: SourceTag,
) -> Result<Ingested<PublicationRecord>, BibError> {
    load_document(path)?.publications(source)
}

pub fn ingest_citations(
    path: impl AsRef<Path>,
    source: SourceTag,
) -> Result<Ingested<CitationRecord>, BibError> {
    load_document(path)?.citations(source)
}
