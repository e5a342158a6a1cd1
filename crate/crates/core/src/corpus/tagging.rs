use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, PageUrl, WebPage};
use crate::taxonomy::Keyword;

/// Keywords one source assigned to one page. An empty set means the source
/// could not tag the page.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct TagAssignment {
    pub page: PageUrl,
    pub source: String,
    pub keywords: BTreeSet<Keyword>,
}

/// One line of `tags.<source>.jsonl` (and of fixture tag files).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagRecord {
    pub url: PageUrl,
    pub keywords: BTreeSet<Keyword>,
}

/// A page-tagging service.
pub trait Tagger {
    fn name(&self) -> &str;

    /// Keywords for `page`; an unknown page yields an empty set.
    fn tag(&self, page: &PageUrl) -> Result<BTreeSet<Keyword>, CorpusError>;
}

/// Tags every page with `source`. Pages are tagged in sorted order and
/// duplicates collapse, so the output is deterministic.
pub fn tag_pages<'a, I>(pages: I, source: &dyn Tagger) -> Result<Vec<TagAssignment>, CorpusError>
where
    I: IntoIterator<Item = &'a WebPage>,
{
    let urls: BTreeSet<&PageUrl> = pages.into_iter().map(|p| &p.url).collect();
    urls.into_iter()
        .map(|url| {
            Ok(TagAssignment {
                page: url.clone(),
                source: source.name().to_string(),
                keywords: source.tag(url)?,
            })
        })
        .collect()
}

/// Tagging source backed by a JSONL fixture file.
#[derive(Clone, Debug)]
pub struct FixtureTagger {
    name: String,
    tags: HashMap<String, BTreeSet<Keyword>>,
}

impl FixtureTagger {
    pub fn open(name: &str, path: impl AsRef<Path>) -> Result<Self, CorpusError> {
        let path = path.as_ref();
        let unavailable = |reason: String| CorpusError::SourceUnavailable {
            source_name: name.to_string(),
            reason,
        };
        let file = std::fs::File::open(path)
            .map_err(|e| unavailable(format!("{}: {e}", path.display())))?;
        let mut records = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| unavailable(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: TagRecord = serde_json::from_str(&line)
                .map_err(|e| unavailable(format!("{}:{}: {e}", path.display(), i + 1)))?;
            records.push(rec);
        }
        Ok(Self::from_records(name, records))
    }

    pub fn from_records(name: &str, records: impl IntoIterator<Item = TagRecord>) -> Self {
        let mut tags: HashMap<String, BTreeSet<Keyword>> = HashMap::new();
        for rec in records {
            tags.entry(rec.url.site_key().to_string()).or_default().extend(rec.keywords);
        }
        FixtureTagger { name: name.to_string(), tags }
    }
}

impl Tagger for FixtureTagger {
    fn name(&self) -> &str {
        &self.name
    }

    fn tag(&self, page: &PageUrl) -> Result<BTreeSet<Keyword>, CorpusError> {
        Ok(self.tags.get(page.site_key()).cloned().unwrap_or_default())
    }
}

/// Placeholder for live tagging services. No network client ships with
/// this crate, so every call reports the source as unavailable.
#[derive(Clone, Debug)]
pub struct NetworkTagger {
    pub name: String,
    pub endpoint: String,
}

impl Tagger for NetworkTagger {
    fn name(&self) -> &str {
        &self.name
    }

    fn tag(&self, _page: &PageUrl) -> Result<BTreeSet<Keyword>, CorpusError> {
        Err(CorpusError::SourceUnavailable {
            source_name: self.name.clone(),
            reason: format!("no network client for {}", self.endpoint),
        })
    }
}

/// Per-source fraction of pages carrying at least one keyword.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub per_source: BTreeMap<String, f64>,
    /// Set when the page set was empty; every source then reports 1.0.
    pub empty_page_set: bool,
}

pub fn coverage<'a, I>(assignments: &[TagAssignment], pages: I) -> Coverage
where
    I: IntoIterator<Item = &'a PageUrl>,
{
    let pages: BTreeSet<&str> = pages.into_iter().map(PageUrl::site_key).collect();
    let mut tagged: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for a in assignments {
        let entry = tagged.entry(a.source.as_str()).or_default();
        if !a.keywords.is_empty() && pages.contains(a.page.site_key()) {
            entry.insert(a.page.site_key());
        }
    }
    let per_source = tagged
        .into_iter()
        .map(|(src, hit)| {
            let frac = if pages.is_empty() { 1.0 } else { hit.len() as f64 / pages.len() as f64 };
            (src.to_string(), frac)
        })
        .collect();
    if pages.is_empty() {
        log::warn!("coverage requested over an empty page set");
    }
    Coverage { per_source, empty_page_set: pages.is_empty() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::PageRole;

    fn kws(list: &[&str]) -> BTreeSet<Keyword> {
        list.iter().map(|s| Keyword::new(s).unwrap()).collect()
    }

    #[test]
    fn fixture_round_trip_and_miss() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tags.google.jsonl");
        std::fs::write(
            &path,
            "{\"url\":\"http://poolpricer.com\",\"keywords\":[\"Swimming Pools & Spas\",\"Surf & Swim\"]}\n",
        )
        .unwrap();
        let src = FixtureTagger::open("google", &path).unwrap();
        let pages = vec![
            WebPage::new("poolpricer.com/", PageRole::Training).unwrap(),
            WebPage::new("unknown.org", PageRole::Training).unwrap(),
        ];
        let out = tag_pages(&pages, &src).unwrap();
        assert_eq!(out.len(), 2);
        let pool = out.iter().find(|a| a.page.host() == "poolpricer.com").unwrap();
        assert_eq!(pool.keywords, kws(&["swimming pools & spas", "surf & swim"]));
        let miss = out.iter().find(|a| a.page.host() == "unknown.org").unwrap();
        assert!(miss.keywords.is_empty());
        assert_eq!(out, tag_pages(&pages, &src).unwrap());
    }

    #[test]
    fn missing_or_corrupt_fixture_is_unavailable() {
        let dir = tempfile::tempdir().unwrap();
        let err = FixtureTagger::open("cyren", dir.path().join("nope.jsonl")).unwrap_err();
        assert!(matches!(err, CorpusError::SourceUnavailable { .. }));
        let bad = dir.path().join("bad.jsonl");
        std::fs::write(&bad, "{not json}\n").unwrap();
        assert!(matches!(
            FixtureTagger::open("cyren", &bad),
            Err(CorpusError::SourceUnavailable { .. })
        ));
    }

    #[test]
    fn network_tagger_is_a_stub() {
        let t = NetworkTagger { name: "adwords".into(), endpoint: "https://example.invalid".into() };
        assert!(t.tag(&PageUrl::parse("a.com").unwrap()).is_err());
    }

    #[test]
    fn coverage_counts() {
        let pages: Vec<PageUrl> =
            (0..1000).map(|i| PageUrl::parse(&format!("p{i}.com")).unwrap()).collect();
        let assignments: Vec<TagAssignment> = pages
            .iter()
            .enumerate()
            .map(|(i, p)| TagAssignment {
                page: p.clone(),
                source: "cyren".into(),
                keywords: if i < 955 { kws(&["sports"]) } else { BTreeSet::new() },
            })
            .collect();
        let cov = coverage(&assignments, &pages);
        assert!((cov.per_source["cyren"] - 0.955).abs() < 1e-12);
        assert!(!cov.empty_page_set);

        let empty = coverage(&assignments, &[]);
        assert!(empty.empty_page_set);
        assert_eq!(empty.per_source["cyren"], 1.0);
    }
}
