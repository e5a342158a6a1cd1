//! The filter chain that separates behavioural ads from everything else.
//!
//! Filters always run in the order `F_r` (retargeting), `F_s&c` (static and
//! contextual, by differencing against a clean profile) and `F_d&g`
//! (demographic and geographic, by cross-persona audience similarity). Any
//! ordered subset may be enabled.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::AdImpression;
use crate::taxonomy::{Keyword, Taxonomy, TaxonomyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("the static & contextual filter needs a clean-profile corpus")]
    MissingCleanProfile,
    #[error("the demographic & geographic filter needs at least 2 personas, got {0}")]
    TooFewPersonas(usize),
    #[error("persona {0} has no category")]
    MissingCategory(String),
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FilterStage {
    #[serde(rename = "r")]
    Retargeting,
    #[serde(rename = "sc")]
    StaticContextual,
    #[serde(rename = "dg")]
    DemoGeo,
}

impl FilterStage {
    pub const ALL: [FilterStage; 3] = [FilterStage::Retargeting, FilterStage::StaticContextual, FilterStage::DemoGeo];

    pub fn code(self) -> &'static str {
        match self {
            FilterStage::Retargeting => "r",
            FilterStage::StaticContextual => "sc",
            FilterStage::DemoGeo => "dg",
        }
    }
}

/// An ordered subset of the filters, written as the concatenation of stage
/// codes: `r`, `rsc`, `rscdg`, `scdg`, ... The empty set is `none`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FilterSet(Vec<FilterStage>);

impl FilterSet {
    pub fn new(stages: impl IntoIterator<Item = FilterStage>) -> Self {
        let set: BTreeSet<FilterStage> = stages.into_iter().collect();
        FilterSet(set.into_iter().collect())
    }

    pub fn all() -> Self {
        FilterSet(FilterStage::ALL.to_vec())
    }

    /// `r`, `rsc` and `rscdg`: the three cumulative combinations.
    pub fn cumulative() -> Vec<FilterSet> {
        (1..=3).map(|n| FilterSet(FilterStage::ALL[..n].to_vec())).collect()
    }

    pub fn stages(&self) -> &[FilterStage] {
        &self.0
    }

    pub fn contains(&self, stage: FilterStage) -> bool {
        self.0.contains(&stage)
    }
}

impl fmt::Display for FilterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.is_empty() {
            return f.write_str("none");
        }
        for s in &self.0 {
            f.write_str(s.code())?;
        }
        Ok(())
    }
}

impl FromStr for FilterSet {
    type Err = PipelineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        if s == "none" {
            return Ok(FilterSet(Vec::new()));
        }
        let mut rest = s.as_str();
        let mut stages = Vec::new();
        for stage in FilterStage::ALL {
            if let Some(r) = rest.strip_prefix(stage.code()) {
                stages.push(stage);
                rest = r;
            }
        }
        if !rest.is_empty() || stages.is_empty() {
            return Err(PipelineError::InvalidConfig(format!(
                "filter set {s:?} is not an ordered subset of r, sc, dg"
            )));
        }
        Ok(FilterSet(stages))
    }
}

impl Serialize for FilterSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FilterSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    /// Persona categories less similar than this mark an ad as demographic
    /// or geographic.
    pub t_prime: f64,
    pub filters: FilterSet,
}

impl Default for FilterConfig {
    fn default() -> Self {
        FilterConfig { t_prime: 2.5, filters: FilterSet::all() }
    }
}

impl FilterConfig {
    pub fn validate(&self, tax: &Taxonomy) -> Result<(), PipelineError> {
        if !(0.0..=tax.lc_max()).contains(&self.t_prime) {
            return Err(PipelineError::InvalidConfig(format!(
                "T' = {} outside [0, {:.4}]",
                self.t_prime,
                tax.lc_max()
            )));
        }
        Ok(())
    }
}

/// `F_r`: drops impressions whose landing page is a page the persona visited.
pub fn filter_retargeting(impressions: &[AdImpression], visited: &BTreeSet<String>) -> Vec<AdImpression> {
    impressions.iter().filter(|i| !visited.contains(i.landing_key())).cloned().collect()
}

/// `F_s&c`: drops impressions whose landing page the clean profile also saw,
/// on any control page.
pub fn filter_static_contextual(
    impressions: &[AdImpression],
    clean_landing: Option<&BTreeSet<String>>,
) -> Result<Vec<AdImpression>, PipelineError> {
    let clean = clean_landing.ok_or(PipelineError::MissingCleanProfile)?;
    Ok(impressions.iter().filter(|i| !clean.contains(i.landing_key())).cloned().collect())
}

/// Landing pages of a clean-profile corpus.
pub fn landing_set<'a>(impressions: impl IntoIterator<Item = &'a AdImpression>) -> BTreeSet<String> {
    impressions.into_iter().map(|i| i.landing_key().to_string()).collect()
}

/// `O(A)`: for each landing page, the personas that received it.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PersonaAudience(BTreeMap<String, BTreeSet<String>>);

impl PersonaAudience {
    pub fn build(impressions_by_persona: &BTreeMap<String, Vec<AdImpression>>) -> Self {
        let mut map: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (persona, imps) in impressions_by_persona {
            for imp in imps {
                map.entry(imp.landing_key().to_string()).or_default().insert(persona.clone());
            }
        }
        PersonaAudience(map)
    }

    pub fn audience(&self, landing_key: &str) -> Option<&BTreeSet<String>> {
        self.0.get(landing_key)
    }
}

/// `F_d&g`: removes ad `A` from persona `p` when some other persona that saw
/// `A` has a category with similarity strictly below `t_prime` to `p`'s.
pub fn filter_demo_geo(
    impressions_by_persona: &BTreeMap<String, Vec<AdImpression>>,
    categories: &BTreeMap<String, Keyword>,
    tax: &Taxonomy,
    t_prime: f64,
) -> Result<BTreeMap<String, Vec<AdImpression>>, PipelineError> {
    if impressions_by_persona.len() < 2 {
        return Err(PipelineError::TooFewPersonas(impressions_by_persona.len()));
    }
    let audience = PersonaAudience::build(impressions_by_persona);
    let category = |p: &str| categories.get(p).ok_or_else(|| PipelineError::MissingCategory(p.to_string()));
    let mut similarity: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for (p, imps) in impressions_by_persona {
        let cat_p = category(p)?;
        let mut kept = Vec::with_capacity(imps.len());
        for imp in imps {
            let others = audience.audience(imp.landing_key()).into_iter().flatten().filter(|q| *q != p);
            let mut distant = false;
            for q in others {
                let sim = match similarity.get(&(p.as_str(), q.as_str())) {
                    Some(s) => *s,
                    None => {
                        let s = tax.lc_similarity(cat_p, category(q)?)?;
                        similarity.insert((p.as_str(), q.as_str()), s);
                        s
                    }
                };
                if sim < t_prime {
                    distant = true;
                    break;
                }
            }
            if !distant {
                kept.push(imp.clone());
            }
        }
        out.insert(p.clone(), kept);
    }
    Ok(out)
}

/// Everything the chain needs for one group of personas that were measured
/// together.
#[derive(Clone, Debug, Default)]
pub struct PipelineInput {
    pub impressions: BTreeMap<String, Vec<AdImpression>>,
    /// Site keys of every page each persona visited.
    pub visited: BTreeMap<String, BTreeSet<String>>,
    pub categories: BTreeMap<String, Keyword>,
    pub clean_landing: Option<BTreeSet<String>>,
}

/// Unique landing pages and displayed ads at one point of the chain.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageCount {
    pub landing_pages: usize,
    pub impressions: u64,
}

impl StageCount {
    pub fn of(imps: &[AdImpression]) -> Self {
        StageCount {
            landing_pages: imps.iter().map(AdImpression::landing_key).collect::<BTreeSet<_>>().len(),
            impressions: imps.iter().map(|i| u64::from(i.ntimes)).sum(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attrition {
    pub input: StageCount,
    /// Counts after each enabled stage, in order.
    pub stages: Vec<(FilterStage, StageCount)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput {
    pub impressions: BTreeMap<String, Vec<AdImpression>>,
    pub attrition: BTreeMap<String, Attrition>,
}

/// Runs the enabled filters in their fixed order.
pub fn run_filters(input: &PipelineInput, cfg: &FilterConfig, tax: &Taxonomy) -> Result<PipelineOutput, PipelineError> {
    cfg.validate(tax)?;
    let empty = BTreeSet::new();
    let mut current = input.impressions.clone();
    let mut attrition: BTreeMap<String, Attrition> = current
        .iter()
        .map(|(p, imps)| (p.clone(), Attrition { input: StageCount::of(imps), stages: Vec::new() }))
        .collect();
    for &stage in cfg.filters.stages() {
        current = match stage {
            FilterStage::Retargeting => current
                .iter()
                .map(|(p, imps)| (p.clone(), filter_retargeting(imps, input.visited.get(p).unwrap_or(&empty))))
                .collect(),
            FilterStage::StaticContextual => current
                .iter()
                .map(|(p, imps)| Ok((p.clone(), filter_static_contextual(imps, input.clean_landing.as_ref())?)))
                .collect::<Result<_, PipelineError>>()?,
            FilterStage::DemoGeo => filter_demo_geo(&current, &input.categories, tax, cfg.t_prime)?,
        };
        for (p, imps) in &current {
            attrition.get_mut(p).expect("same personas").stages.push((stage, StageCount::of(imps)));
        }
    }
    Ok(PipelineOutput { impressions: current, attrition })
}
