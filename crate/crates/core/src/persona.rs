//! Personas, training-page selection and cross-source training-keyword
//! consensus.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{PageUrl, TagAssignment};
use crate::taxonomy::{Keyword, Taxonomy};

/// Minimum number of training pages a regular persona needs.
pub const MIN_TRAINING_PAGES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PersonaError {
    #[error("persona {category} rejected: {attrition:?}")]
    Rejected { category: Keyword, attrition: Attrition },
    #[error("consensus needs at least {needed} sources, got {got}")]
    InsufficientSources { needed: usize, got: usize },
    #[error("invalid consensus config: {0}")]
    InvalidConfig(String),
}

/// Candidates left after each selection step.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attrition {
    pub candidates: usize,
    pub after_step1: usize,
    pub after_step2: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Persona {
    pub id: String,
    pub category: Keyword,
    #[serde(default)]
    pub sensitive: bool,
    pub training_pages: Vec<PageUrl>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attrition: Option<Attrition>,
}

/// A persona requested by an experiment manifest, before page selection.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonaSpec {
    pub id: String,
    pub category: Keyword,
    #[serde(default)]
    pub sensitive: bool,
}

impl PersonaSpec {
    /// Regular persona whose id is the category slug.
    pub fn new(category: &str) -> Result<Self, crate::taxonomy::TaxonomyError> {
        let category = Keyword::new(category)?;
        let id = category
            .as_str()
            .split(|c: char| !c.is_ascii_alphanumeric())
            .filter(|s| !s.is_empty())
            .collect::<Vec<_>>()
            .join("-");
        Ok(PersonaSpec { id, category, sensitive: false })
    }
}

/// A page considered for a persona's training set.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePage {
    pub page: PageUrl,
    pub source_keywords: BTreeMap<String, BTreeSet<Keyword>>,
    /// Categories an ads-preference profile gained after one visit from a
    /// clean browser.
    pub profile_categories: BTreeSet<Keyword>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Selection {
    pub pages: Vec<PageUrl>,
    pub attrition: Attrition,
}

/// Three-step selection of training pages for `category`.
///
/// 1. keep candidates whose `selection_source` keywords contain the category;
/// 2. regular personas keep pages whose profile gain is exactly the category,
///    or the category plus one other; sensitive personas keep pages that add
///    nothing to the profile;
/// 3. accept the persona only if at least `min_pages` pages remain.
pub fn select_training_pages(
    category: &Keyword,
    candidates: &[CandidatePage],
    sensitive: bool,
    selection_source: &str,
    min_pages: usize,
) -> Result<Selection, PersonaError> {
    let step1: Vec<&CandidatePage> = candidates
        .iter()
        .filter(|c| c.source_keywords.get(selection_source).is_some_and(|k| k.contains(category)))
        .collect();
    let step2: Vec<&CandidatePage> = step1
        .iter()
        .copied()
        .filter(|c| {
            let gained = &c.profile_categories;
            if sensitive {
                gained.is_empty()
            } else {
                gained.contains(category) && (1..=2).contains(&gained.len())
            }
        })
        .collect();
    let attrition = Attrition {
        candidates: candidates.len(),
        after_step1: step1.len(),
        after_step2: step2.len(),
    };
    if step2.len() < min_pages {
        return Err(PersonaError::Rejected { category: category.clone(), attrition });
    }
    let mut seen = BTreeSet::new();
    let pages = step2
        .into_iter()
        .filter(|c| seen.insert(c.page.site_key().to_string()))
        .map(|c| c.page.clone())
        .collect();
    Ok(Selection { pages, attrition })
}

/// Agreement required before a training keyword is trusted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsensusConfig {
    /// How many *other* sources must hold a similar keyword.
    pub n: usize,
    /// Similarity threshold; similar means strictly greater.
    pub t: f64,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig { n: 2, t: 2.5 }
    }
}

impl ConsensusConfig {
    pub fn validate(&self, sources: usize, tax: &Taxonomy) -> Result<(), PersonaError> {
        if !(0.0..=tax.lc_max()).contains(&self.t) {
            return Err(PersonaError::InvalidConfig(format!(
                "T = {} outside [0, {:.4}]",
                self.t,
                tax.lc_max()
            )));
        }
        let needed = (self.n + 1).max(2);
        if sources < needed {
            return Err(PersonaError::InsufficientSources { needed, got: sources });
        }
        Ok(())
    }
}

/// Union of keywords per source over a persona's training pages.
pub fn training_keywords_by_source(
    persona: &Persona,
    assignments: &[TagAssignment],
) -> BTreeMap<String, BTreeSet<Keyword>> {
    let pages: BTreeSet<&str> = persona.training_pages.iter().map(PageUrl::site_key).collect();
    let mut out: BTreeMap<String, BTreeSet<Keyword>> = BTreeMap::new();
    for a in assignments {
        let entry = out.entry(a.source.clone()).or_default();
        if pages.contains(a.page.site_key()) {
            entry.extend(a.keywords.iter().cloned());
        }
    }
    out
}

/// Keeps a keyword of source `i` only if at least `n` other sources hold a
/// keyword whose similarity to it exceeds `t`. Keywords missing from the
/// taxonomy only match themselves.
pub fn consensus_training_keywords(
    raw: &BTreeMap<String, BTreeSet<Keyword>>,
    cfg: &ConsensusConfig,
    tax: &Taxonomy,
) -> Result<BTreeMap<String, BTreeSet<Keyword>>, PersonaError> {
    cfg.validate(raw.len(), tax)?;
    let mut out = BTreeMap::new();
    for (source, keywords) in raw {
        let kept = keywords
            .iter()
            .filter(|k| {
                let agreeing = raw
                    .iter()
                    .filter(|(other, _)| *other != source)
                    .filter(|(_, theirs)| theirs.iter().any(|l| tax.similar_or_exact(k, l, cfg.t)))
                    .count();
                agreeing >= cfg.n
            })
            .cloned()
            .collect();
        out.insert(source.clone(), kept);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kw(s: &str) -> Keyword {
        Keyword::new(s).unwrap()
    }

    fn kws(list: &[&str]) -> BTreeSet<Keyword> {
        list.iter().map(|s| kw(s)).collect()
    }

    fn candidate(i: usize, keywords: &[&str], profile: &[&str]) -> CandidatePage {
        CandidatePage {
            page: PageUrl::parse(&format!("site{i}.com")).unwrap(),
            source_keywords: BTreeMap::from([("google".to_string(), kws(keywords))]),
            profile_categories: kws(profile),
        }
    }

    #[test]
    fn step2_accepts_category_plus_one() {
        let c = candidate(0, &["motor sports", "cars"], &["motor sports", "cars"]);
        let sel = select_training_pages(&kw("motor sports"), &[c], false, "google", 1).unwrap();
        assert_eq!(sel.pages.len(), 1);
    }

    #[test]
    fn step1_drops_pages_without_the_category() {
        let c = candidate(0, &["cars"], &["motor sports"]);
        let err = select_training_pages(&kw("motor sports"), &[c], false, "google", 1).unwrap_err();
        let PersonaError::Rejected { attrition, .. } = err else { panic!() };
        assert_eq!(attrition, Attrition { candidates: 1, after_step1: 0, after_step2: 0 });
    }

    #[test]
    fn scripted_attrition_20_14_12() {
        // Hand walk: 6 pages lack the category (step 1 leaves 14); of those, one
        // adds two extra categories and one adds an unrelated category only
        // (step 2 leaves 12).
        let mut pool = Vec::new();
        for i in 0..6 {
            pool.push(candidate(i, &["cars"], &["cars"]));
        }
        pool.push(candidate(6, &["motor sports"], &["motor sports", "cars", "travel"]));
        pool.push(candidate(7, &["motor sports"], &["news"]));
        for i in 8..14 {
            pool.push(candidate(i, &["motor sports"], &["motor sports"]));
        }
        for i in 14..20 {
            pool.push(candidate(i, &["motor sports", "cars"], &["motor sports", "motorbikes"]));
        }
        let sel = select_training_pages(&kw("motor sports"), &pool, false, "google", 10).unwrap();
        assert_eq!(sel.attrition, Attrition { candidates: 20, after_step1: 14, after_step2: 12 });
        assert_eq!(sel.pages.len(), 12);

        let err = select_training_pages(&kw("motor sports"), &pool[..15], false, "google", 10).unwrap_err();
        assert!(matches!(err, PersonaError::Rejected { .. }));
    }

    #[test]
    fn sensitive_selection_requires_empty_profile() {
        let pool: Vec<_> = (0..12)
            .map(|i| {
                let profile: &[&str] = if i % 3 == 0 { &["health"] } else { &[] };
                candidate(i, &["religion & belief"], profile)
            })
            .collect();
        let sel = select_training_pages(&kw("religion & belief"), &pool, true, "google", 1).unwrap();
        assert_eq!(sel.pages.len(), 8);
        for url in &sel.pages {
            let c = pool.iter().find(|c| &c.page == url).unwrap();
            assert!(c.profile_categories.is_empty());
        }
    }

    #[test]
    fn n_zero_keeps_everything() {
        let tax = Taxonomy::demo();
        let raw = BTreeMap::from([
            ("a".to_string(), kws(&["banking", "not in taxonomy"])),
            ("b".to_string(), kws(&["humans"])),
        ]);
        let out = consensus_training_keywords(&raw, &ConsensusConfig { n: 0, t: 2.5 }, &tax).unwrap();
        assert_eq!(out, raw);
    }

    #[test]
    fn config_errors() {
        let tax = Taxonomy::demo();
        let raw = BTreeMap::from([("a".to_string(), kws(&["banking"]))]);
        assert_eq!(
            consensus_training_keywords(&raw, &ConsensusConfig::default(), &tax).unwrap_err(),
            PersonaError::InsufficientSources { needed: 3, got: 1 }
        );
        let two = BTreeMap::from([("a".to_string(), kws(&["banking"])), ("b".to_string(), kws(&["banking"]))]);
        assert!(matches!(
            consensus_training_keywords(&two, &ConsensusConfig { n: 1, t: 9.0 }, &tax),
            Err(PersonaError::InvalidConfig(_))
        ));
    }
}
