//! Synthetic ad ecosystem used as harvester, tagging source and ground-truth
//! oracle.
//!
//! A world holds publishers (training pages per persona category and five
//! weather-themed control pages), tracking aggregators placed on those pages,
//! and an ad inventory in which every unit carries its true type. Browsers
//! visiting the world accumulate per-aggregator interest profiles; control
//! page visits are served ads according to fixed eligibility rules:
//!
//! * `oba`: some aggregator present on the page holds at least
//!   `activation_threshold` weight for the ad's target category;
//! * `contextual`: the ad's theme equals the page theme;
//! * `retargeting`: the landing page is in the browser history;
//! * `geo_demo`: the ad's geo equals the session geo;
//! * `static`: always.
//!
//! With `honor_dnt` set, DNT sessions are neither profiled nor shown oba or
//! retargeting ads.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, LogNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AdKind, CorpusError, PageRole, PageUrl, Tagger, VisitKind, WebPage};
use crate::persona::{self, Attrition, CandidatePage, Persona, PersonaSpec};
use crate::seed;
use crate::session::{HarvestError, Harvester, ServedAd, VisitContext};
use crate::taxonomy::{Keyword, Taxonomy};

/// The five weather sites used as control pages.
pub const CONTROL_SITES: [&str; 5] = [
    "http://www.accuweather.com",
    "http://www.localconditions.com",
    "http://www.wunderground.com",
    "http://www.myforecast.com",
    "http://www.weatherbase.com",
];

const CONTROL_THEME: &str = "weather";
const WEATHER_VOCABULARY: [&str; 7] = [
    "weather",
    "weather forecasts",
    "climate",
    "severe weather alerts",
    "raincoats & umbrellas",
    "meteorology",
    "weather news",
];

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid simulator config: {0}")]
    InvalidConfig(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct InventoryMix {
    pub oba: f64,
    pub contextual: f64,
    #[serde(rename = "static")]
    pub static_: f64,
    pub retargeting: f64,
    pub geo_demo: f64,
}

impl Default for InventoryMix {
    fn default() -> Self {
        InventoryMix { oba: 0.4, contextual: 0.3, static_: 0.1, retargeting: 0.1, geo_demo: 0.1 }
    }
}

impl InventoryMix {
    fn shares(&self) -> [(AdKind, f64); 5] {
        [
            (AdKind::Oba, self.oba),
            (AdKind::Contextual, self.contextual),
            (AdKind::Static, self.static_),
            (AdKind::Retargeting, self.retargeting),
            (AdKind::GeoDemo, self.geo_demo),
        ]
    }

    /// Splits `total` ads by largest remainder, so divisible totals are exact.
    pub fn counts(&self, total: usize) -> BTreeMap<AdKind, usize> {
        let shares = self.shares();
        let mut out: BTreeMap<AdKind, usize> = BTreeMap::new();
        let mut remainders = Vec::new();
        let mut assigned = 0;
        for (kind, share) in shares {
            let exact = share * total as f64;
            // Guard against 0.3 * 100 = 30.000000000000004 style drift.
            let floor = (exact + 1e-9).floor() as usize;
            out.insert(kind, floor);
            assigned += floor;
            remainders.push((exact - floor as f64, kind));
        }
        remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for (_, kind) in remainders.into_iter().take(total.saturating_sub(assigned)) {
            *out.get_mut(&kind).expect("present") += 1;
        }
        out
    }
}

/// Per-source tag noise of the intrinsic tagger.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SourceNoise {
    pub name: String,
    /// Probability that each true keyword of a page is dropped.
    #[serde(default)]
    pub dropout: f64,
    /// Probability that a page receives one spurious interest keyword.
    #[serde(default)]
    pub spurious: f64,
}

impl SourceNoise {
    pub fn clean(name: &str) -> Self {
        SourceNoise { name: name.into(), dropout: 0.0, spurious: 0.0 }
    }
}

/// Named tag-noise settings.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoisePreset {
    /// Every source reports exactly the generating categories.
    Zero,
    /// Small keyword loss and a moderate rate of spurious keywords, differing
    /// per source in the way the three commercial taggers disagree.
    PaperShaped,
}

impl NoisePreset {
    pub fn sources(self) -> Vec<SourceNoise> {
        match self {
            NoisePreset::Zero => ["google", "mcafee", "cyren"].map(SourceNoise::clean).to_vec(),
            NoisePreset::PaperShaped => vec![
                SourceNoise { name: "google".into(), dropout: 0.0, spurious: 0.10 },
                SourceNoise { name: "mcafee".into(), dropout: 0.01, spurious: 0.20 },
                SourceNoise { name: "cyren".into(), dropout: 0.02, spurious: 0.30 },
            ],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub rng_seed: u64,
    pub n_ads: usize,
    pub mix: InventoryMix,
    pub n_aggregators: usize,
    /// Bounds on distinct trackers across one persona's training pages.
    pub trackers_min: usize,
    pub trackers_max: usize,
    pub candidates_per_persona: usize,
    /// Share of candidates lacking the persona category.
    pub step1_miss_rate: f64,
    /// Share of candidates adding unrelated categories to the profile.
    pub contamination_rate: f64,
    pub ads_per_visit: usize,
    /// Profile weight (in training visits) needed before oba ads are served.
    pub activation_threshold: f64,
    /// Exponential decay rate of profile weights per simulated hour.
    pub profile_decay_per_hour: f64,
    pub honor_dnt: bool,
    /// Let aggregators pool what they know, so any aggregator's profile can
    /// trigger an oba ad.
    pub aggregator_sharing: bool,
    /// Multiplier on oba base weights.
    pub oba_weight_boost: f64,
    /// Log-space spread of base weights.
    pub weight_sigma: f64,
    pub geos: Vec<String>,
    pub sources: Vec<SourceNoise>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            rng_seed: 0,
            n_ads: 400,
            mix: InventoryMix::default(),
            n_aggregators: 60,
            trackers_min: 15,
            trackers_max: 40,
            candidates_per_persona: 20,
            step1_miss_rate: 0.15,
            contamination_rate: 0.15,
            ads_per_visit: 3,
            activation_threshold: 3.0,
            profile_decay_per_hour: 0.0,
            honor_dnt: false,
            aggregator_sharing: false,
            oba_weight_boost: 6.0,
            weight_sigma: 0.5,
            geos: vec!["ES".into(), "US".into()],
            sources: NoisePreset::Zero.sources(),
        }
    }
}

impl SimConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // also rejects NaN
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidConfig(m));
        let shares = self.mix.shares();
        if shares.iter().any(|(_, s)| !(0.0..=1.0).contains(s)) {
            return bad("inventory shares must lie in [0, 1]".into());
        }
        let sum: f64 = shares.iter().map(|(_, s)| s).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return bad(format!("inventory shares sum to {sum}, not 1"));
        }
        if self.n_ads == 0 || self.ads_per_visit == 0 {
            return bad("n_ads and ads_per_visit must be positive".into());
        }
        if self.trackers_min == 0 || self.trackers_min > self.trackers_max || self.trackers_max > self.n_aggregators {
            return bad(format!(
                "tracker bounds {}..={} incompatible with {} aggregators",
                self.trackers_min, self.trackers_max, self.n_aggregators
            ));
        }
        for (name, rate) in [("step1_miss_rate", self.step1_miss_rate), ("contamination_rate", self.contamination_rate)] {
            if !(0.0..=1.0).contains(&rate) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        if !(self.activation_threshold > 0.0) || self.profile_decay_per_hour < 0.0 {
            return bad("activation threshold must be positive and decay non-negative".into());
        }
        if !(self.oba_weight_boost > 0.0) || self.weight_sigma < 0.0 {
            return bad("weights must be positive".into());
        }
        if self.geos.is_empty() {
            return bad("at least one geo is required".into());
        }
        if self.sources.is_empty() {
            return bad("at least one tagging source is required".into());
        }
        let names: BTreeSet<&str> = self.sources.iter().map(|s| s.name.as_str()).collect();
        if names.len() != self.sources.len() {
            return bad("tagging source names must be unique".into());
        }
        for s in &self.sources {
            if !(0.0..=1.0).contains(&s.dropout) || !(0.0..=1.0).contains(&s.spurious) {
                return bad(format!("noise rates of {} must lie in [0, 1]", s.name));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum AdTarget {
    Category(Keyword),
    Theme(Keyword),
    Geo(String),
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdUnit {
    pub id: u32,
    pub landing_page: PageUrl,
    pub kind: AdKind,
    pub target: AdTarget,
    pub base_weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPage {
    pub url: PageUrl,
    pub role: PageRole,
    pub categories: BTreeSet<Keyword>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theme: Option<Keyword>,
    pub trackers: Vec<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimPersona {
    pub id: String,
    pub category: Keyword,
    pub sensitive: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub secondary: Option<Keyword>,
    pub training_pages: Vec<PageUrl>,
    pub attrition: Attrition,
    pub trackers: BTreeSet<u32>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RejectedPersona {
    pub id: String,
    pub attrition: Attrition,
}

/// A fully generated ecosystem. Immutable once built; browsers keep their
/// own state.
#[derive(Clone, Debug, Serialize)]
pub struct World {
    pub config: SimConfig,
    pub personas: Vec<SimPersona>,
    pub rejected: Vec<RejectedPersona>,
    pub control_pages: Vec<PageUrl>,
    pub pages: Vec<SimPage>,
    pub ads: Vec<AdUnit>,
    /// Keywords spurious tags are drawn from.
    pub spurious_vocabulary: Vec<Keyword>,
    #[serde(skip)]
    page_index: HashMap<String, usize>,
}

fn slug(k: &Keyword) -> String {
    let mut out = String::new();
    for c in k.as_str().chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c);
        } else if !out.ends_with('-') {
            out.push('-');
        }
    }
    out.trim_matches('-').to_string()
}

fn url(s: &str) -> PageUrl {
    PageUrl::parse(s).expect("generated url is valid")
}

/// Generates a world from `cfg`. Personas whose candidate pool does not
/// survive selection are listed in [`World::rejected`].
pub fn build_world(cfg: &SimConfig, specs: &[PersonaSpec], tax: &Taxonomy) -> Result<World, SimError> {
    cfg.validate()?;
    if specs.is_empty() {
        return Err(SimError::InvalidConfig("no personas".into()));
    }
    let mut ids = BTreeSet::new();
    let mut categories = BTreeSet::new();
    for s in specs {
        if !tax.contains(&s.category) {
            return Err(SimError::InvalidConfig(format!("persona category {} is not in the taxonomy", s.category)));
        }
        if !ids.insert(s.id.as_str()) || !categories.insert(s.category.clone()) {
            return Err(SimError::InvalidConfig(format!("duplicate persona id or category: {}", s.id)));
        }
    }

    let weather: BTreeSet<Keyword> = WEATHER_VOCABULARY
        .iter()
        .map(|w| Keyword::new(w).expect("non-empty"))
        .filter(|k| tax.contains(k) || k.as_str() == CONTROL_THEME)
        .collect();

    let secondaries: BTreeMap<&str, Option<Keyword>> = specs
        .iter()
        .map(|s| {
            let sec = tax
                .children_of(&s.category)
                .into_iter()
                .find(|c| !categories.contains(*c))
                .cloned();
            (s.id.as_str(), sec)
        })
        .collect();
    let mut reserved: BTreeSet<Keyword> = categories.clone();
    reserved.extend(secondaries.values().flatten().cloned());
    reserved.extend(weather.iter().cloned());
    // Unrelated categories, split in two disjoint pools: one for the noise in
    // candidate pages, one for untargeted ads. Keeping them apart means a
    // contaminated training keyword can never match a static ad by accident.
    let unrelated: Vec<Keyword> = tax.keywords().into_iter().filter(|k| !reserved.contains(k)).collect();
    let (filler, ad_filler): (Vec<Keyword>, Vec<Keyword>) = {
        let (a, b): (Vec<_>, Vec<_>) = unrelated.into_iter().enumerate().partition(|(i, _)| i % 2 == 0);
        (a.into_iter().map(|(_, k)| k).collect(), b.into_iter().map(|(_, k)| k).collect())
    };
    if ad_filler.len() < 3 {
        return Err(SimError::InvalidConfig("taxonomy too small for filler categories".into()));
    }

    let mut world = World {
        config: cfg.clone(),
        personas: Vec::new(),
        rejected: Vec::new(),
        control_pages: CONTROL_SITES.iter().map(|s| url(s)).collect(),
        pages: Vec::new(),
        ads: Vec::new(),
        spurious_vocabulary: Vec::new(),
        page_index: HashMap::new(),
    };

    // Candidate pools and selection. Candidates are tagged by the first
    // source, which plays the role of the selection source.
    let selection_source = &cfg.sources[0];
    let mut candidate_pages: Vec<SimPage> = Vec::new();
    for spec in specs {
        let mut rng = seed::rng(cfg.rng_seed, &format!("candidates/{}", spec.id));
        let n = cfg.candidates_per_persona;
        let n_miss = (n as f64 * cfg.step1_miss_rate).round() as usize;
        let n_contam = ((n as f64 * cfg.contamination_rate).round() as usize).min(n - n_miss.min(n));
        let secondary = secondaries[spec.id.as_str()].clone();
        let stem = slug(&spec.category);

        let mut pool = Vec::with_capacity(n);
        for i in 0..n {
            let page_url = url(&format!("http://{stem}-site{i:02}.com"));
            let pick = |rng: &mut ChaCha8Rng| filler[rng.random_range(0..filler.len())].clone();
            let (cats, profile): (BTreeSet<Keyword>, BTreeSet<Keyword>) = if i < n_miss {
                let c = BTreeSet::from([pick(&mut rng)]);
                (c.clone(), c)
            } else if i < n_miss + n_contam {
                let (x, y) = (pick(&mut rng), pick(&mut rng));
                let cats = BTreeSet::from([spec.category.clone(), x.clone(), y]);
                let profile = if spec.sensitive { BTreeSet::from([x]) } else { cats.clone() };
                (cats, profile)
            } else {
                let mut cats = BTreeSet::from([spec.category.clone()]);
                if i % 2 == 1 {
                    cats.extend(secondary.clone());
                }
                let profile = if spec.sensitive { BTreeSet::new() } else { cats.clone() };
                (cats, profile)
            };
            let page = SimPage {
                url: page_url.clone(),
                role: PageRole::Training,
                categories: cats,
                theme: None,
                trackers: Vec::new(),
            };
            let observed = noisy_tags(cfg.rng_seed, selection_source, &page, &[]);
            pool.push((
                CandidatePage {
                    page: page_url,
                    source_keywords: BTreeMap::from([(selection_source.name.clone(), observed)]),
                    profile_categories: profile,
                },
                page,
            ));
        }
        let candidates: Vec<CandidatePage> = pool.iter().map(|(c, _)| c.clone()).collect();
        match persona::select_training_pages(
            &spec.category,
            &candidates,
            spec.sensitive,
            &selection_source.name,
            persona::MIN_TRAINING_PAGES,
        ) {
            Ok(sel) => {
                let chosen: BTreeSet<&PageUrl> = sel.pages.iter().collect();
                candidate_pages.extend(pool.into_iter().filter(|(c, _)| chosen.contains(&c.page)).map(|(_, p)| p));
                world.personas.push(SimPersona {
                    id: spec.id.clone(),
                    category: spec.category.clone(),
                    sensitive: spec.sensitive,
                    secondary,
                    training_pages: sel.pages,
                    attrition: sel.attrition,
                    trackers: BTreeSet::new(),
                });
            }
            Err(persona::PersonaError::Rejected { attrition, .. }) => {
                log::warn!("persona {} rejected during selection: {attrition:?}", spec.id);
                world.rejected.push(RejectedPersona { id: spec.id.clone(), attrition });
            }
            Err(e) => return Err(SimError::InvalidConfig(e.to_string())),
        }
    }
    if world.personas.is_empty() {
        return Err(SimError::InvalidConfig("every persona was rejected".into()));
    }

    // Tracker placement: each persona's training set carries between
    // trackers_min and trackers_max distinct aggregators.
    for sp in &mut world.personas {
        let mut rng = seed::rng(cfg.rng_seed, &format!("trackers/{}", sp.id));
        let k = rng.random_range(cfg.trackers_min..=cfg.trackers_max);
        let mut chosen: Vec<u32> = sample(&mut rng, cfg.n_aggregators, k).into_iter().map(|i| i as u32).collect();
        chosen.shuffle(&mut rng);
        let n_pages = sp.training_pages.len();
        let mut per_page: Vec<BTreeSet<u32>> = vec![BTreeSet::new(); n_pages];
        for (j, agg) in chosen.iter().enumerate() {
            per_page[j % n_pages].insert(*agg);
        }
        for set in &mut per_page {
            for _ in 0..2 {
                set.insert(chosen[rng.random_range(0..chosen.len())]);
            }
        }
        for (page_url, set) in sp.training_pages.iter().zip(per_page) {
            let page = candidate_pages.iter_mut().find(|p| &p.url == page_url).expect("selected page exists");
            page.trackers = set.into_iter().collect();
        }
        sp.trackers = chosen.into_iter().collect();
    }
    world.pages.extend(candidate_pages);

    let all_aggregators: Vec<u32> = (0..cfg.n_aggregators as u32).collect();
    let theme = Keyword::new(CONTROL_THEME).expect("non-empty");
    for control in &world.control_pages {
        world.pages.push(SimPage {
            url: control.clone(),
            role: PageRole::Control,
            categories: BTreeSet::from([theme.clone()]),
            theme: Some(theme.clone()),
            trackers: all_aggregators.clone(),
        });
    }

    // Inventory.
    let mut rng = seed::rng(cfg.rng_seed, "inventory");
    let weight_dist = LogNormal::new(0.0, cfg.weight_sigma).expect("valid sigma");
    let counts = cfg.mix.counts(cfg.n_ads);
    let targetable: Vec<Keyword> = {
        let mut t: BTreeSet<Keyword> = BTreeSet::new();
        for sp in &world.personas {
            t.insert(sp.category.clone());
            t.extend(sp.secondary.clone());
        }
        t.into_iter().collect()
    };
    // Shops selling a persona's category are also tagged with its secondary
    // category, and vice versa.
    let mut partner: BTreeMap<Keyword, Keyword> = BTreeMap::new();
    for sp in &world.personas {
        if let Some(sec) = &sp.secondary {
            partner.insert(sp.category.clone(), sec.clone());
            partner.insert(sec.clone(), sp.category.clone());
        }
    }
    let weather_list: Vec<Keyword> = weather.into_iter().collect();
    let retarget_pool: Vec<PageUrl> = world
        .personas
        .iter()
        .flat_map(|sp| sp.training_pages.iter().cloned())
        .chain(world.control_pages.iter().cloned())
        .collect();
    let mut landing_pages: Vec<SimPage> = Vec::new();
    let mut next_id = 0u32;
    for kind in AdKind::ALL {
        let count = counts[&kind];
        for i in 0..count {
            let weight = weight_dist.sample(&mut rng);
            let (landing, target, cats) = match kind {
                AdKind::Oba => {
                    let target = targetable[i % targetable.len()].clone();
                    let landing = url(&format!("http://{}-shop{:03}.com", slug(&target), i));
                    let mut cats = BTreeSet::from([target.clone()]);
                    cats.extend(partner.get(&target).cloned());
                    (landing, AdTarget::Category(target), Some(cats))
                }
                AdKind::Contextual => {
                    let cat = weather_list[rng.random_range(0..weather_list.len())].clone();
                    let landing = url(&format!("http://weather-offer{i:03}.com"));
                    (landing, AdTarget::Theme(theme.clone()), Some(BTreeSet::from([cat])))
                }
                AdKind::Static => {
                    let cat = ad_filler[rng.random_range(0..ad_filler.len())].clone();
                    let landing = url(&format!("http://{}-brand{:03}.com", slug(&cat), i));
                    (landing, AdTarget::None, Some(BTreeSet::from([cat])))
                }
                AdKind::GeoDemo => {
                    let geo = cfg.geos[i % cfg.geos.len()].clone();
                    let cat = ad_filler[rng.random_range(0..ad_filler.len())].clone();
                    let landing = url(&format!("http://local-{}-{}{:03}.com", geo.to_lowercase(), slug(&cat), i));
                    (landing, AdTarget::Geo(geo), Some(BTreeSet::from([cat])))
                }
                AdKind::Retargeting => {
                    if i >= retarget_pool.len() {
                        break;
                    }
                    (retarget_pool[i].clone(), AdTarget::None, None)
                }
            };
            let base_weight = if kind == AdKind::Oba { weight * cfg.oba_weight_boost } else { weight };
            if let Some(categories) = cats {
                landing_pages.push(SimPage {
                    url: landing.clone(),
                    role: PageRole::Landing,
                    categories,
                    theme: None,
                    trackers: Vec::new(),
                });
            }
            world.ads.push(AdUnit { id: next_id, landing_page: landing, kind, target, base_weight });
            next_id += 1;
        }
    }
    world.pages.extend(landing_pages);

    world.spurious_vocabulary = targetable;
    world.page_index = world.pages.iter().enumerate().map(|(i, p)| (p.url.site_key().to_string(), i)).collect();
    Ok(world)
}

impl World {
    pub fn page(&self, url: &PageUrl) -> Option<&SimPage> {
        self.page_index.get(url.site_key()).map(|&i| &self.pages[i])
    }

    /// Every page in the world, for `pages.jsonl`.
    pub fn web_pages(&self) -> Vec<WebPage> {
        self.pages.iter().map(|p| WebPage { url: p.url.clone(), role: p.role }).collect()
    }

    pub fn persona_records(&self) -> Vec<Persona> {
        self.personas
            .iter()
            .map(|sp| Persona {
                id: sp.id.clone(),
                category: sp.category.clone(),
                sensitive: sp.sensitive,
                training_pages: sp.training_pages.clone(),
                attrition: Some(sp.attrition),
            })
            .collect()
    }

    pub fn tagger(&self, source: &str) -> Option<SimTagger<'_>> {
        self.config.sources.iter().find(|s| s.name == source).map(|noise| SimTagger { world: self, noise })
    }

    pub fn browser(&self, seed: u64) -> SimBrowser<'_> {
        SimBrowser { world: self, state: BrowserState::new(seed) }
    }

    pub fn ad_by_landing(&self, landing: &PageUrl) -> Option<&AdUnit> {
        self.ads.iter().find(|a| a.landing_page.site_key() == landing.site_key())
    }

    /// `world.json` contents.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("serializable");
        s.push('\n');
        s
    }
}

/// Tracking state of one simulated browser.
#[derive(Clone, Debug)]
pub struct BrowserState {
    history: BTreeSet<String>,
    profiles: BTreeMap<u32, BTreeMap<Keyword, f64>>,
    last_time: f64,
    rng: ChaCha8Rng,
}

impl BrowserState {
    pub fn new(seed: u64) -> Self {
        BrowserState {
            history: BTreeSet::new(),
            profiles: BTreeMap::new(),
            last_time: 0.0,
            rng: seed::rng(seed, "browser"),
        }
    }

    pub fn reset(&mut self) {
        self.history.clear();
        self.profiles.clear();
    }

    pub fn has_visited(&self, url: &PageUrl) -> bool {
        self.history.contains(url.site_key())
    }

    pub fn profile_weight(&self, aggregator: u32, category: &Keyword) -> f64 {
        self.profiles.get(&aggregator).and_then(|p| p.get(category)).copied().unwrap_or(0.0)
    }

    pub fn profile_is_empty(&self) -> bool {
        self.profiles.values().all(|p| p.values().all(|w| *w == 0.0))
    }
}

/// Visits `page` with `state`: updates tracking state and, on control pages,
/// returns the ads served together with their true types.
pub fn serve_ads<'w>(
    world: &'w World,
    state: &mut BrowserState,
    page: &PageUrl,
    ctx: &VisitContext<'_>,
) -> Vec<&'w AdUnit> {
    let cfg = &world.config;
    let Some(sim_page) = world.page(page) else {
        return Vec::new();
    };
    if cfg.profile_decay_per_hour > 0.0 {
        let dt_hours = (ctx.timestamp - state.last_time).max(0.0) / 3600.0;
        let factor = (-cfg.profile_decay_per_hour * dt_hours).exp();
        for profile in state.profiles.values_mut() {
            profile.values_mut().for_each(|w| *w *= factor);
        }
    }
    state.last_time = ctx.timestamp;
    let shielded = cfg.honor_dnt && ctx.dnt;

    let mut served = Vec::new();
    if sim_page.role == PageRole::Control {
        let profiles: Vec<&BTreeMap<Keyword, f64>> = if cfg.aggregator_sharing {
            state.profiles.values().collect()
        } else {
            sim_page.trackers.iter().filter_map(|agg| state.profiles.get(agg)).collect()
        };
        let activated: BTreeSet<&Keyword> = profiles
            .into_iter()
            .flat_map(|p| p.iter())
            .filter(|(_, w)| **w >= cfg.activation_threshold)
            .map(|(cat, _)| cat)
            .collect();
        let eligible: Vec<&AdUnit> = world
            .ads
            .iter()
            .filter(|ad| match (&ad.kind, &ad.target) {
                (AdKind::Static, _) => true,
                (AdKind::Contextual, AdTarget::Theme(t)) => sim_page.theme.as_ref() == Some(t),
                (AdKind::GeoDemo, AdTarget::Geo(g)) => g == ctx.geo,
                (AdKind::Retargeting, _) => !shielded && state.has_visited(&ad.landing_page),
                (AdKind::Oba, AdTarget::Category(c)) => !shielded && activated.contains(c),
                _ => false,
            })
            .collect();
        // Weighted sampling without replacement (Efraimidis-Spirakis keys).
        let mut keyed: Vec<(f64, &AdUnit)> = eligible
            .into_iter()
            .map(|ad| {
                let u: f64 = state.rng.random_range(f64::MIN_POSITIVE..1.0);
                (u.ln() / ad.base_weight, ad)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.id.cmp(&b.1.id)));
        served.extend(keyed.into_iter().take(cfg.ads_per_visit).map(|(_, ad)| ad));
    }

    if !shielded {
        for agg in &sim_page.trackers {
            let profile = state.profiles.entry(*agg).or_default();
            for cat in &sim_page.categories {
                *profile.entry(cat.clone()).or_insert(0.0) += 1.0;
            }
        }
    }
    state.history.insert(page.site_key().to_string());
    served
}

/// A browser in a simulated world, usable as a session harvester.
pub struct SimBrowser<'w> {
    world: &'w World,
    state: BrowserState,
}

impl SimBrowser<'_> {
    pub fn state(&self) -> &BrowserState {
        &self.state
    }
}

impl Harvester for SimBrowser<'_> {
    fn visit(&mut self, page: &PageUrl, _kind: VisitKind, ctx: &VisitContext<'_>) -> Result<Vec<ServedAd>, HarvestError> {
        if self.world.page(page).is_none() {
            return Err(HarvestError(format!("page {page} does not exist in the simulated world")));
        }
        Ok(serve_ads(self.world, &mut self.state, page, ctx)
            .into_iter()
            .map(|ad| ServedAd { landing_page: ad.landing_page.clone(), label: Some(ad.kind) })
            .collect())
    }

    fn reset_state(&mut self) {
        self.state.reset();
    }
}

/// The simulator acting as a tagging source: reports each page's generating
/// categories, perturbed by the source's noise settings.
pub struct SimTagger<'w> {
    world: &'w World,
    noise: &'w SourceNoise,
}

impl Tagger for SimTagger<'_> {
    fn name(&self) -> &str {
        &self.noise.name
    }

    fn tag(&self, page: &PageUrl) -> Result<BTreeSet<Keyword>, CorpusError> {
        Ok(match self.world.page(page) {
            Some(p) => noisy_tags(self.world.config.rng_seed, self.noise, p, &self.world.spurious_vocabulary),
            None => BTreeSet::new(),
        })
    }
}

/// The random draws depend only on seed, source and page, never on the noise
/// rates, so raising a rate only ever adds spurious keywords (or removes more
/// true ones).
fn noisy_tags(seed_: u64, noise: &SourceNoise, page: &SimPage, vocabulary: &[Keyword]) -> BTreeSet<Keyword> {
    let mut rng = seed::rng(seed_, &format!("tags/{}/{}", noise.name, page.url.site_key()));
    let mut out = BTreeSet::new();
    for cat in &page.categories {
        let u: f64 = rng.random();
        if u >= noise.dropout {
            out.insert(cat.clone());
        }
    }
    let u: f64 = rng.random();
    let pick: u64 = rng.random();
    if u < noise.spurious && !vocabulary.is_empty() {
        out.insert(vocabulary[(pick % vocabulary.len() as u64) as usize].clone());
    }
    out
}
