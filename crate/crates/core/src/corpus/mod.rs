//! Pages, tags, visits and ad impressions, plus their on-disk layout.

mod store;
mod tagging;
mod url;

pub use self::store::{ExperimentStore, StoreWriter, CLEAN_PROFILE_ID};
pub use self::tagging::{
    coverage, tag_pages, Coverage, FixtureTagger, NetworkTagger, TagAssignment, TagRecord, Tagger,
};
pub use self::url::PageUrl;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::taxonomy::TaxonomyError;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("invalid url {url:?}: {reason}")]
    InvalidUrl { url: String, reason: String },
    #[error("tagging source {source_name:?} unavailable: {reason}")]
    SourceUnavailable { source_name: String, reason: String },
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error("referential integrity: {0}")]
    Integrity(String),
    #[error(transparent)]
    Keyword(#[from] TaxonomyError),
    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl CorpusError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CorpusError::Io { path: path.display().to_string(), source }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PageRole {
    Training,
    Control,
    Landing,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct WebPage {
    pub url: PageUrl,
    pub role: PageRole,
}

impl WebPage {
    pub fn new(url: &str, role: PageRole) -> Result<Self, CorpusError> {
        Ok(WebPage { url: PageUrl::parse(url)?, role })
    }
}

/// Ground-truth ad type, known only for simulator-generated impressions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdKind {
    Oba,
    Contextual,
    Static,
    Retargeting,
    GeoDemo,
}

impl AdKind {
    pub const ALL: [AdKind; 5] =
        [AdKind::Oba, AdKind::Contextual, AdKind::Static, AdKind::Retargeting, AdKind::GeoDemo];

    pub fn as_str(self) -> &'static str {
        match self {
            AdKind::Oba => "oba",
            AdKind::Contextual => "contextual",
            AdKind::Static => "static",
            AdKind::Retargeting => "retargeting",
            AdKind::GeoDemo => "geo_demo",
        }
    }
}

/// A measurement condition: where the browser appears to be and whether it
/// sends Do-Not-Track.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Condition {
    pub geo: String,
    pub dnt: bool,
}

impl Condition {
    pub fn new(geo: impl Into<String>, dnt: bool) -> Self {
        Condition { geo: geo.into(), dnt }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-{}", self.geo, if self.dnt { "dnt" } else { "nodnt" })
    }
}

impl std::str::FromStr for Condition {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (geo, flag) = s.rsplit_once('-').ok_or_else(|| format!("bad condition {s:?}"))?;
        let dnt = match flag {
            "dnt" => true,
            "nodnt" => false,
            _ => return Err(format!("bad condition {s:?}: expected <geo>-dnt or <geo>-nodnt")),
        };
        Ok(Condition::new(geo, dnt))
    }
}

/// Identifies one session: condition plus repetition slot.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SessionKey {
    pub geo: String,
    pub dnt: bool,
    pub repetition: u32,
}

impl SessionKey {
    pub fn new(condition: &Condition, repetition: u32) -> Self {
        SessionKey { geo: condition.geo.clone(), dnt: condition.dnt, repetition }
    }

    pub fn condition(&self) -> Condition {
        Condition::new(self.geo.clone(), self.dnt)
    }
}

impl fmt::Display for SessionKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/r{}", self.condition(), self.repetition)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VisitKind {
    Training,
    Control,
}

/// One line of `visits.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitRecord {
    pub persona_id: String,
    #[serde(flatten)]
    pub session: SessionKey,
    pub seq: u32,
    /// Simulated seconds since session start.
    pub timestamp: f64,
    pub url: PageUrl,
    pub kind: VisitKind,
}

/// An ad observed on a control page, aggregated over identical
/// (persona, session, control page, landing page) sightings.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AdImpression {
    pub persona_id: String,
    #[serde(flatten)]
    pub session: SessionKey,
    pub control_page: PageUrl,
    pub landing_page: PageUrl,
    pub ntimes: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<AdKind>,
}

impl AdImpression {
    /// Landing-page identity used when matching ads: host plus path.
    pub fn landing_key(&self) -> &str {
        self.landing_page.site_key()
    }
}
