use std::fmt;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// A normalized page URL.
///
/// Scheme and host are lowercased, default ports, fragments and a trailing
/// slash are dropped, and bare hosts get `http://`. Normalizing twice is a
/// no-op. [`PageUrl::site_key`] additionally drops the scheme and the query
/// string; that is the identity used to match ad landing pages.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct PageUrl {
    url: String,
    site_start: usize,
    site_end: usize,
}

impl PageUrl {
    pub fn parse(raw: &str) -> Result<Self, CorpusError> {
        let trimmed = raw.trim();
        if trimmed.is_empty() {
            return Err(CorpusError::InvalidUrl { url: raw.into(), reason: "empty".into() });
        }
        let with_scheme = if trimmed.contains("://") {
            trimmed.to_string()
        } else {
            format!("http://{trimmed}")
        };
        let mut parsed = ::url::Url::parse(&with_scheme)
            .map_err(|e| CorpusError::InvalidUrl { url: raw.into(), reason: e.to_string() })?;
        let host = parsed
            .host_str()
            .ok_or_else(|| CorpusError::InvalidUrl { url: raw.into(), reason: "no host".into() })?
            .to_ascii_lowercase();
        parsed.set_fragment(None);

        let mut url = format!("{}://{}", parsed.scheme(), host);
        let site_start = url.len() - host.len();
        if let Some(port) = parsed.port() {
            url.push(':');
            url.push_str(&port.to_string());
        }
        let path = parsed.path().trim_end_matches('/');
        url.push_str(path);
        let site_end = url.len();
        if let Some(q) = parsed.query().filter(|q| !q.is_empty()) {
            url.push('?');
            url.push_str(q);
        }
        Ok(PageUrl { url, site_start, site_end })
    }

    pub fn as_str(&self) -> &str {
        &self.url
    }

    /// `host[:port]/path`, without scheme or query string.
    pub fn site_key(&self) -> &str {
        &self.url[self.site_start..self.site_end]
    }

    pub fn host(&self) -> &str {
        let site = self.site_key();
        let end = site.find(['/', ':']).unwrap_or(site.len());
        &site[..end]
    }
}

impl fmt::Display for PageUrl {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.url)
    }
}

impl TryFrom<String> for PageUrl {
    type Error = CorpusError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        PageUrl::parse(&s)
    }
}

impl From<PageUrl> for String {
    fn from(u: PageUrl) -> String {
        u.url
    }
}

impl std::str::FromStr for PageUrl {
    type Err = CorpusError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PageUrl::parse(s)
    }
}
