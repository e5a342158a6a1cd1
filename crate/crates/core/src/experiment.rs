//! Experiment runs: a manifest drives world generation, sessions, analysis,
//! validation against ground truth and summary reports. Each step reads and
//! writes a single experiment directory.
//!
//! Seeds: the manifest's `seed` is the only source of randomness. Every
//! component seed is `derive_seed(seed, label)` with labels `world`,
//! `session/<condition>/r<rep>/<persona>` and `browser/<condition>/r<rep>/<persona>`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adsim::{self, NoisePreset, SimConfig, SimError, World};
use crate::corpus::{
    tag_pages, AdImpression, Condition, CorpusError, ExperimentStore, PageUrl, SessionKey, StoreWriter, TagRecord,
    CLEAN_PROFILE_ID,
};
use crate::metrics::{
    self, comparison_stats, value_correlation, ComparisonReport, CorrelationReport, FiveNumber, MeanSd, MetricsError,
    PerformanceReport, QuartileMethod, ValueSeries,
};
use crate::persona::{self, ConsensusConfig, PersonaError, PersonaSpec};
use crate::pipeline::{self, Attrition, FilterConfig, FilterSet, PipelineError, PipelineInput};
use crate::seed::derive_seed;
use crate::session::{self, SessionConfig, SessionError, SessionLog};
use crate::taxonomy::{Keyword, Taxonomy, TaxonomyError};

/// Categories of the default persona set. Pairwise far apart in the demo
/// taxonomy, so no two of them share demographic-looking ads by accident.
pub const DEFAULT_PERSONAS: [&str; 10] = [
    "swimming pools & spas",
    "motor sports",
    "cooking & recipes",
    "air travel",
    "banking",
    "bicycles & accessories",
    "dogs",
    "video games",
    "skin care",
    "real estate listings",
];

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const WORLD_FILE: &str = "world.json";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const PERFORMANCE_FILE: &str = "performance.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const COMPARISON_FILE: &str = "comparison.json";
pub const CORRELATION_FILE: &str = "correlation.json";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config: {0}")]
    Config(String),
    #[error("incomplete corpus: {0}")]
    IncompleteCorpus(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Persona(#[from] PersonaError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl ExperimentError {
    /// 2 for configuration and validation errors, 3 for corpus errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Corpus(_)
            | ExperimentError::IncompleteCorpus(_)
            | ExperimentError::Session(SessionError::HarvesterFailure { .. })
            | ExperimentError::Pipeline(PipelineError::MissingCleanProfile)
            | ExperimentError::Metrics(MetricsError::MissingGroundTruth) => 3,
            _ => 2,
        }
    }
}

type Result<T, E = ExperimentError> = std::result::Result<T, E>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionDefaults {
    pub mean_interval_secs: f64,
    pub visit_budget: u32,
}

impl Default for SessionDefaults {
    fn default() -> Self {
        SessionDefaults {
            mean_interval_secs: session::DEFAULT_MEAN_INTERVAL_SECS,
            visit_budget: session::DEFAULT_VISIT_BUDGET,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterDefaults {
    pub t_prime: f64,
    /// Filter sets evaluated by `analyze`.
    pub sets: Vec<FilterSet>,
}

impl Default for FilterDefaults {
    fn default() -> Self {
        FilterDefaults { t_prime: 2.5, sets: FilterSet::cumulative() }
    }
}

/// Everything needed to reproduce an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Manifest {
    pub id: String,
    pub seed: u64,
    pub repetitions: u32,
    /// Taxonomy TSV; the bundled demo taxonomy when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<PathBuf>,
    /// Tag noise preset; replaces `sim.sources` when set.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoisePreset>,
    pub quartiles: QuartileMethod,
    pub conditions: Vec<Condition>,
    pub personas: Vec<PersonaSpec>,
    pub session: SessionDefaults,
    pub consensus: ConsensusConfig,
    pub filters: FilterDefaults,
    /// `sim.rng_seed` is ignored; the world seed derives from `seed`.
    pub sim: SimConfig,
}

impl Default for Manifest {
    fn default() -> Self {
        Manifest {
            id: "experiment".into(),
            seed: 0,
            repetitions: session::DEFAULT_REPETITIONS,
            taxonomy: None,
            noise: None,
            quartiles: QuartileMethod::default(),
            conditions: vec![Condition::new("ES", false)],
            personas: DEFAULT_PERSONAS.iter().map(|c| PersonaSpec::new(c).expect("valid")).collect(),
            session: SessionDefaults::default(),
            consensus: ConsensusConfig::default(),
            filters: FilterDefaults::default(),
            sim: SimConfig::default(),
        }
    }
}

impl Manifest {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let m: Manifest = toml::from_str(text).map_err(|e| ExperimentError::Config(format!("manifest: {e}")))?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut m = Self::from_toml_str(&text)?;
        // Relative taxonomy paths are relative to the manifest.
        if let (Some(t), Some(base)) = (&m.taxonomy, path.parent()) {
            if t.is_relative() {
                m.taxonomy = Some(base.join(t));
            }
        }
        Ok(m)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| ExperimentError::Config(format!("manifest: {e}")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ExperimentError::Config(m.to_string()));
        if self.seed > i64::MAX as u64 {
            return bad("seed must fit in a signed 64-bit integer");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be >= 1");
        }
        if self.conditions.is_empty() {
            return bad("at least one condition is required");
        }
        if self.personas.len() < 2 {
            return bad("at least two personas are required");
        }
        if self.filters.sets.is_empty() {
            return bad("at least one filter set is required");
        }
        let conditions: BTreeSet<String> = self.conditions.iter().map(ToString::to_string).collect();
        if conditions.len() != self.conditions.len() {
            return bad("duplicate conditions");
        }
        Ok(())
    }

    pub fn load_taxonomy(&self) -> Result<Taxonomy> {
        Ok(match &self.taxonomy {
            Some(path) => Taxonomy::load(path)?,
            None => Taxonomy::demo(),
        })
    }

    /// Simulator config with the derived world seed and the noise preset applied.
    pub fn sim_config(&self) -> SimConfig {
        let mut sim = self.sim.clone();
        sim.rng_seed = derive_seed(self.seed, "world");
        if let Some(preset) = self.noise {
            sim.sources = preset.sources();
        }
        sim
    }

    pub fn filter_config(&self, filters: FilterSet) -> FilterConfig {
        FilterConfig { t_prime: self.filters.t_prime, filters }
    }
}

/// Counts from one `simulate` run.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SimulateSummary {
    pub personas: Vec<String>,
    pub rejected: Vec<String>,
    pub sessions: usize,
    pub visits: usize,
    pub impressions: usize,
    /// Displayed oba ads per persona, summed over sessions.
    pub oba_ads: BTreeMap<String, u64>,
}

struct Job<'a> {
    persona: &'a str,
    training: &'a [PageUrl],
    condition: &'a Condition,
    repetition: u32,
    clean: bool,
}

/// Builds the world, runs every session and writes the corpus into `out`.
pub fn simulate(manifest: &Manifest, out: &Path) -> Result<SimulateSummary> {
    manifest.validate()?;
    let tax = manifest.load_taxonomy()?;
    let sim = manifest.sim_config();
    let world = adsim::build_world(&sim, &manifest.personas, &tax)?;

    let mut writer = StoreWriter::create(out)?;
    writer.write_text(MANIFEST_FILE, &manifest.to_toml()?)?;
    writer.write_text(WORLD_FILE, &world.to_json())?;
    writer.write_personas(&world.persona_records())?;
    let pages = world.web_pages();
    writer.write_pages(&pages)?;
    for source in &sim.sources {
        let tagger = world.tagger(&source.name).expect("source exists");
        let records: Vec<TagRecord> = tag_pages(&pages, &tagger)?
            .into_iter()
            .map(|a| TagRecord { url: a.page, keywords: a.keywords })
            .collect();
        writer.write_tags(&source.name, &records)?;
    }
    writer.reset_events()?;

    let mut jobs = Vec::new();
    for condition in &manifest.conditions {
        jobs.push(Job { persona: CLEAN_PROFILE_ID, training: &[], condition, repetition: 0, clean: true });
        for repetition in 0..manifest.repetitions {
            for sp in &world.personas {
                jobs.push(Job { persona: &sp.id, training: &sp.training_pages, condition, repetition, clean: false });
            }
        }
    }
    let logs: Vec<SessionLog> = jobs
        .par_iter()
        .map(|job| run_job(manifest, &world, job))
        .collect::<Result<_, SessionError>>()?;

    let mut summary = SimulateSummary {
        personas: world.personas.iter().map(|p| p.id.clone()).collect(),
        rejected: world.rejected.iter().map(|r| r.id.clone()).collect(),
        sessions: logs.len(),
        ..Default::default()
    };
    for log in &logs {
        writer.append_visits(&log.visits)?;
        writer.append_impressions(&log.impressions)?;
        summary.visits += log.visits.len();
        summary.impressions += log.impressions.len();
        if log.persona_id != CLEAN_PROFILE_ID {
            let oba: u64 = log
                .impressions
                .iter()
                .filter(|i| i.ground_truth == Some(crate::corpus::AdKind::Oba))
                .map(|i| u64::from(i.ntimes))
                .sum();
            *summary.oba_ads.entry(log.persona_id.clone()).or_default() += oba;
        }
    }
    Ok(summary)
}

fn run_job(manifest: &Manifest, world: &World, job: &Job<'_>) -> Result<SessionLog, SessionError> {
    let label = format!("{}/r{}/{}", job.condition, job.repetition, job.persona);
    let mut cfg = SessionConfig::new(job.persona, job.condition, job.repetition, derive_seed(manifest.seed, &format!("session/{label}")));
    cfg.clean_profile = job.clean;
    cfg.mean_interval_secs = manifest.session.mean_interval_secs;
    cfg.visit_budget = manifest.session.visit_budget;
    let mut browser = world.browser(derive_seed(manifest.seed, &format!("browser/{label}")));
    session::run_session(job.training, &world.control_pages, &cfg, &mut browser)
}

/// Command-line overrides for `analyze`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AnalyzeOptions {
    pub n: Option<usize>,
    pub t: Option<f64>,
    pub t_prime: Option<f64>,
    pub filter_sets: Option<Vec<FilterSet>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub n: usize,
    pub t: f64,
    pub t_prime: f64,
    pub filter_sets: Vec<FilterSet>,
}

/// Metrics for one (condition, repetition, persona, source, filter set).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub condition: String,
    pub repetition: u32,
    pub persona: String,
    pub source: String,
    pub filters: FilterSet,
    pub ttk: Option<f64>,
    pub bailp: Option<f64>,
    pub landing_pages: usize,
    pub impressions: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PersonaSummary {
    pub condition: String,
    pub persona: String,
    pub ttk: Option<MeanSd>,
    pub bailp: Option<MeanSd>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttritionRow {
    pub condition: String,
    pub repetition: u32,
    pub persona: String,
    pub filters: FilterSet,
    pub attrition: Attrition,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub experiment: String,
    pub config: AnalysisConfig,
    /// Consensus training keywords per persona and source.
    pub training_keywords: BTreeMap<String, BTreeMap<String, BTreeSet<Keyword>>>,
    pub cells: Vec<Cell>,
    pub summaries: Vec<PersonaSummary>,
    pub attrition: Vec<AttritionRow>,
}

/// A loaded corpus prepared for filtering and scoring.
pub struct Analysis {
    pub manifest: Manifest,
    pub taxonomy: Taxonomy,
    pub store: ExperimentStore,
    pub consensus: ConsensusConfig,
    pub sources: Vec<String>,
    /// Consensus training keywords: persona, then source.
    pub training_keywords: BTreeMap<String, BTreeMap<String, BTreeSet<Keyword>>>,
    tags: BTreeMap<String, HashMap<String, BTreeSet<Keyword>>>,
    groups: BTreeMap<SessionKey, PipelineInput>,
}

static NO_KEYWORDS: BTreeSet<Keyword> = BTreeSet::new();

impl Analysis {
    /// Loads `dir`. The manifest is optional; defaults apply without one.
    pub fn load(dir: &Path, consensus: Option<ConsensusConfig>) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        let manifest = if manifest_path.exists() { Manifest::load(&manifest_path)? } else { Manifest::default() };
        let store = ExperimentStore::load(dir)?;
        let taxonomy = manifest.load_taxonomy()?;
        let consensus = consensus.unwrap_or(manifest.consensus);
        Self::new(manifest, taxonomy, store, consensus)
    }

    pub fn new(manifest: Manifest, taxonomy: Taxonomy, store: ExperimentStore, consensus: ConsensusConfig) -> Result<Self> {
        let sources: Vec<String> = store.sources().into_iter().map(String::from).collect();
        if sources.is_empty() {
            return Err(ExperimentError::IncompleteCorpus("no tag files".into()));
        }
        if store.personas.is_empty() {
            return Err(ExperimentError::IncompleteCorpus("no personas".into()));
        }
        let assignments: Vec<_> = sources.iter().flat_map(|s| store.tag_assignments(s)).collect();
        let mut training_keywords = BTreeMap::new();
        for p in &store.personas {
            let raw = persona::training_keywords_by_source(p, &assignments);
            training_keywords.insert(p.id.clone(), persona::consensus_training_keywords(&raw, &consensus, &taxonomy)?);
        }
        let tags = sources
            .iter()
            .map(|s| {
                let map = store.tags[s]
                    .iter()
                    .map(|r| (r.url.site_key().to_string(), r.keywords.clone()))
                    .collect();
                (s.clone(), map)
            })
            .collect();
        let groups = build_groups(&store)?;
        Ok(Analysis { manifest, taxonomy, store, consensus, sources, training_keywords, tags, groups })
    }

    pub fn session_keys(&self) -> impl Iterator<Item = &SessionKey> {
        self.groups.keys()
    }

    pub fn group(&self, key: &SessionKey) -> Option<&PipelineInput> {
        self.groups.get(key)
    }

    pub fn landing_keywords(&self, source: &str, landing_key: &str) -> &BTreeSet<Keyword> {
        self.tags.get(source).and_then(|m| m.get(landing_key)).unwrap_or(&NO_KEYWORDS)
    }

    pub fn training(&self, persona: &str, source: &str) -> &BTreeSet<Keyword> {
        self.training_keywords.get(persona).and_then(|m| m.get(source)).unwrap_or(&NO_KEYWORDS)
    }

    /// TTK and BAiLP of one filtered impression list.
    pub fn score(&self, persona: &str, source: &str, imps: &[AdImpression]) -> (Option<f64>, Option<f64>) {
        let training = self.training(persona, source);
        let landing: BTreeSet<Keyword> =
            imps.iter().flat_map(|i| self.landing_keywords(source, i.landing_key()).iter().cloned()).collect();
        let ttk = metrics::ttk(training, &landing).ok();
        let bailp = metrics::bailp(
            training,
            imps.iter().map(|i| (self.landing_keywords(source, i.landing_key()), u64::from(i.ntimes))),
        )
        .ok();
        (ttk, bailp)
    }

    pub fn run(&self, cfg: &AnalysisConfig) -> Result<AnalysisReport> {
        let mut cells = Vec::new();
        let mut attrition = Vec::new();
        for (key, input) in &self.groups {
            let condition = key.condition().to_string();
            for set in &cfg.filter_sets {
                let fc = FilterConfig { t_prime: cfg.t_prime, filters: set.clone() };
                let out = pipeline::run_filters(input, &fc, &self.taxonomy)?;
                for (persona, imps) in &out.impressions {
                    for source in &self.sources {
                        let (ttk, bailp) = self.score(persona, source, imps);
                        let count = pipeline::StageCount::of(imps);
                        cells.push(Cell {
                            condition: condition.clone(),
                            repetition: key.repetition,
                            persona: persona.clone(),
                            source: source.clone(),
                            filters: set.clone(),
                            ttk,
                            bailp,
                            landing_pages: count.landing_pages,
                            impressions: count.impressions,
                        });
                    }
                    attrition.push(AttritionRow {
                        condition: condition.clone(),
                        repetition: key.repetition,
                        persona: persona.clone(),
                        filters: set.clone(),
                        attrition: out.attrition[persona].clone(),
                    });
                }
            }
        }
        let mut grouped: BTreeMap<(String, String), (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for c in &cells {
            let slot = grouped.entry((c.condition.clone(), c.persona.clone())).or_default();
            slot.0.extend(c.ttk);
            slot.1.extend(c.bailp);
        }
        let summaries = grouped
            .into_iter()
            .map(|((condition, persona), (ttk, bailp))| PersonaSummary {
                condition,
                persona,
                ttk: MeanSd::of(&ttk),
                bailp: MeanSd::of(&bailp),
            })
            .collect();
        Ok(AnalysisReport {
            experiment: self.manifest.id.clone(),
            config: cfg.clone(),
            training_keywords: self.training_keywords.clone(),
            cells,
            summaries,
            attrition,
        })
    }

    /// Scores the full filter chain against ground truth, per persona and
    /// source, pooled over every session.
    pub fn validate(&self, t_prime: f64) -> Result<ValidationReport> {
        let fc = FilterConfig { t_prime, filters: FilterSet::all() };
        let mut counts: BTreeMap<(String, String), PerformanceReport> = BTreeMap::new();
        for input in self.groups.values() {
            let out = pipeline::run_filters(input, &fc, &self.taxonomy)?;
            for (persona, imps) in &input.impressions {
                let survivors: BTreeSet<(&str, &str)> = out.impressions[persona]
                    .iter()
                    .map(|i| (i.control_page.site_key(), i.landing_key()))
                    .collect();
                for source in &self.sources {
                    let training = self.training(persona, source);
                    let items = imps.iter().map(|i| {
                        let survived = survivors.contains(&(i.control_page.site_key(), i.landing_key()));
                        let predicted =
                            survived && metrics::matches_training(training, self.landing_keywords(source, i.landing_key()));
                        (predicted, i.ground_truth, u64::from(i.ntimes))
                    });
                    let report = metrics::detection_performance(items)?;
                    let slot = counts.entry((persona.clone(), source.clone())).or_default();
                    *slot = slot.merge(&report);
                }
            }
        }
        let entries: Vec<PerformanceEntry> = counts
            .into_iter()
            .map(|((persona, source), performance)| PerformanceEntry { persona, source, performance })
            .collect();
        let mut per_source = BTreeMap::new();
        for source in &self.sources {
            let rows: Vec<&PerformanceReport> =
                entries.iter().filter(|e| &e.source == source).map(|e| &e.performance).collect();
            per_source.insert(source.clone(), PerformanceRange::of(&rows));
        }
        let all: Vec<&PerformanceReport> = entries.iter().map(|e| &e.performance).collect();
        Ok(ValidationReport { overall: PerformanceRange::of(&all), per_source, entries })
    }
}

fn build_groups(store: &ExperimentStore) -> Result<BTreeMap<SessionKey, PipelineInput>> {
    let categories: BTreeMap<String, Keyword> =
        store.personas.iter().map(|p| (p.id.clone(), p.category.clone())).collect();
    let mut groups: BTreeMap<SessionKey, PipelineInput> = BTreeMap::new();
    let mut clean: BTreeMap<Condition, BTreeSet<String>> = BTreeMap::new();
    let mut clean_visited: BTreeSet<Condition> = BTreeSet::new();
    for v in &store.visits {
        if v.persona_id == CLEAN_PROFILE_ID {
            clean_visited.insert(v.session.condition());
            continue;
        }
        let group = groups.entry(v.session.clone()).or_default();
        group.visited.entry(v.persona_id.clone()).or_default().insert(v.url.site_key().to_string());
    }
    for imp in &store.impressions {
        if imp.persona_id == CLEAN_PROFILE_ID {
            clean.entry(imp.session.condition()).or_default().insert(imp.landing_key().to_string());
            continue;
        }
        let group = groups.get_mut(&imp.session).ok_or_else(|| {
            ExperimentError::IncompleteCorpus(format!("impressions for session {} without visits", imp.session))
        })?;
        group.impressions.entry(imp.persona_id.clone()).or_default().push(imp.clone());
    }
    if groups.is_empty() {
        return Err(ExperimentError::IncompleteCorpus("no persona visits".into()));
    }
    for (key, group) in &mut groups {
        for p in &store.personas {
            if !group.visited.contains_key(&p.id) {
                return Err(ExperimentError::IncompleteCorpus(format!("persona {} has no visits in session {key}", p.id)));
            }
            group.impressions.entry(p.id.clone()).or_default();
        }
        group.categories = categories.clone();
        let condition = key.condition();
        if clean_visited.contains(&condition) {
            group.clean_landing = Some(clean.get(&condition).cloned().unwrap_or_default());
        }
    }
    Ok(groups)
}

/// Runs consensus, filters and metrics for every cell and writes
/// `report.json` and `report.csv` into `dir`. Corpus files are only read.
pub fn analyze(dir: &Path, opts: &AnalyzeOptions) -> Result<AnalysisReport> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let manifest = if manifest_path.exists() { Manifest::load(&manifest_path)? } else { Manifest::default() };
    let consensus = ConsensusConfig { n: opts.n.unwrap_or(manifest.consensus.n), t: opts.t.unwrap_or(manifest.consensus.t) };
    let cfg = AnalysisConfig {
        n: consensus.n,
        t: consensus.t,
        t_prime: opts.t_prime.unwrap_or(manifest.filters.t_prime),
        filter_sets: opts.filter_sets.clone().unwrap_or_else(|| manifest.filters.sets.clone()),
    };
    let analysis = Analysis::load(dir, Some(consensus))?;
    let report = analysis.run(&cfg)?;
    let mut writer = StoreWriter::create(dir)?;
    writer.write_json(REPORT_JSON, &report)?;
    writer.write_text(REPORT_CSV, &report_csv(&report))?;
    Ok(report)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// One row per condition, persona, source and filter set, averaged over
/// repetitions. Empty fields mean the metric was undefined in every
/// repetition.
pub fn report_csv(report: &AnalysisReport) -> String {
    type Key = (String, String, String, String);
    let mut rows: BTreeMap<Key, (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    for c in &report.cells {
        let key = (c.condition.clone(), c.persona.clone(), c.source.clone(), c.filters.to_string());
        let slot = rows.entry(key).or_default();
        slot.0.extend(c.ttk);
        slot.1.extend(c.bailp);
        slot.2 += 1;
    }
    let mut out = String::from("condition,persona,source,filters,ttk,bailp,repetitions\n");
    for ((condition, persona, source, filters), (ttk, bailp, n)) in rows {
        let mean = |v: &[f64]| MeanSd::of(v).map(|m| m.mean);
        out.push_str(&format!(
            "{condition},{persona},{source},{filters},{},{},{n}\n",
            fmt_opt(mean(&ttk)),
            fmt_opt(mean(&bailp))
        ));
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerformanceEntry {
    pub persona: String,
    pub source: String,
    pub performance: PerformanceReport,
}

/// Min and max of each rate across entries; `None` when no entry defines it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRange {
    pub recall: Option<(f64, f64)>,
    pub accuracy: Option<(f64, f64)>,
    pub fpr: Option<(f64, f64)>,
    pub fnr: Option<(f64, f64)>,
    pub pooled: PerformanceReport,
}

impl PerformanceRange {
    fn of(rows: &[&PerformanceReport]) -> Self {
        let range = |f: fn(&PerformanceReport) -> Option<f64>| {
            let vals: Vec<f64> = rows.iter().filter_map(|r| f(r)).collect();
            (!vals.is_empty()).then(|| {
                (vals.iter().copied().fold(f64::INFINITY, f64::min), vals.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            })
        };
        PerformanceRange {
            recall: range(|r| r.recall),
            accuracy: range(|r| r.accuracy),
            fpr: range(|r| r.fpr),
            fnr: range(|r| r.fnr),
            pooled: rows.iter().fold(PerformanceReport::default(), |acc, r| acc.merge(r)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub overall: PerformanceRange,
    pub per_source: BTreeMap<String, PerformanceRange>,
    pub entries: Vec<PerformanceEntry>,
}

/// Scores the tool's oba classification against simulator ground truth and
/// writes `performance.json`.
pub fn validate(dir: &Path, t_prime: Option<f64>) -> Result<ValidationReport> {
    let analysis = Analysis::load(dir, None)?;
    let t_prime = t_prime.unwrap_or(analysis.manifest.filters.t_prime);
    let report = analysis.validate(t_prime)?;
    StoreWriter::create(dir)?.write_json(PERFORMANCE_FILE, &report)?;
    Ok(report)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ReportOptions {
    /// Filter set whose BAiLP values are summarised; the full chain by default.
    pub filters: Option<FilterSet>,
    pub compare: Option<(Condition, Condition)>,
    /// Persona to value (CPC) file, JSON object or `persona,value` CSV.
    pub cpc: Option<PathBuf>,
    /// Condition used for the CPC correlation; the first one by default.
    pub condition: Option<Condition>,
    pub quartiles: Option<QuartileMethod>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub filters: FilterSet,
    /// Mean BAiLP per persona over sources and repetitions.
    pub bailp: ValueSeries,
    pub distribution: Option<FiveNumber>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub conditions: Vec<ConditionSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub comparison: Option<ComparisonReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub correlation: Option<CorrelationReport>,
}

/// Mean BAiLP per persona for `condition` and `filters`.
pub fn persona_bailp(report: &AnalysisReport, condition: &str, filters: &FilterSet) -> ValueSeries {
    let mut acc: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for c in report.cells.iter().filter(|c| c.condition == condition && &c.filters == filters) {
        if let Some(b) = c.bailp {
            acc.entry(c.persona.clone()).or_default().push(b);
        }
    }
    acc.into_iter().filter_map(|(p, v)| MeanSd::of(&v).map(|m| (p, m.mean))).collect()
}

pub fn read_value_series(path: &Path) -> Result<ValueSeries> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
    if let Ok(series) = serde_json::from_str::<ValueSeries>(&text) {
        return Ok(series);
    }
    let mut out = ValueSeries::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once(',')
            .ok_or_else(|| ExperimentError::Config(format!("{}:{}: expected persona,value", path.display(), i + 1)))?;
        match v.trim().parse::<f64>() {
            Ok(x) => {
                out.insert(k.trim().to_string(), x);
            }
            // A header line.
            Err(_) if i == 0 => {}
            Err(e) => return Err(ExperimentError::Config(format!("{}:{}: {e}", path.display(), i + 1))),
        }
    }
    Ok(out)
}

/// Summaries over an analysed experiment: `summary.json` always, plus
/// `comparison.json` and `correlation.json` when requested.
pub fn report(dir: &Path, opts: &ReportOptions) -> Result<SummaryReport> {
    let path = dir.join(REPORT_JSON);
    let text = std::fs::read_to_string(&path)
        .map_err(|_| ExperimentError::IncompleteCorpus(format!("{} missing; run analyze first", path.display())))?;
    let analysis: AnalysisReport = serde_json::from_str(&text).map_err(|e| CorpusError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        reason: e.to_string(),
    })?;
    let manifest_path = dir.join(MANIFEST_FILE);
    let method = match opts.quartiles {
        Some(m) => m,
        None if manifest_path.exists() => Manifest::load(&manifest_path)?.quartiles,
        None => QuartileMethod::default(),
    };
    let filters = opts.filters.clone().unwrap_or_else(FilterSet::all);
    let conditions: BTreeSet<String> = analysis.cells.iter().map(|c| c.condition.clone()).collect();
    let summaries: Vec<ConditionSummary> = conditions
        .iter()
        .map(|c| {
            let bailp = persona_bailp(&analysis, c, &filters);
            let values: Vec<f64> = bailp.values().copied().collect();
            ConditionSummary {
                condition: c.clone(),
                filters: filters.clone(),
                distribution: FiveNumber::of(&values, method).ok(),
                bailp,
            }
        })
        .collect();
    let find = |c: &Condition| {
        let name = c.to_string();
        summaries
            .iter()
            .find(|s| s.condition == name)
            .map(|s| &s.bailp)
            .ok_or_else(|| ExperimentError::Config(format!("condition {name} not in report")))
    };

    let mut writer = StoreWriter::create(dir)?;
    let comparison = match &opts.compare {
        Some((a, b)) => {
            let r = comparison_stats(find(a)?, find(b)?, method)?;
            writer.write_json(COMPARISON_FILE, &r)?;
            Some(r)
        }
        None => None,
    };
    let correlation = match &opts.cpc {
        Some(path) => {
            let values = read_value_series(path)?;
            let bailp = match &opts.condition {
                Some(c) => find(c)?,
                None => summaries.first().map(|s| &s.bailp).ok_or_else(|| {
                    ExperimentError::IncompleteCorpus("report has no cells".into())
                })?,
            };
            let r = value_correlation(bailp, &values, method)?;
            writer.write_json(CORRELATION_FILE, &r)?;
            Some(r)
        }
        None => None,
    };
    let summary = SummaryReport { conditions: summaries, comparison, correlation };
    writer.write_json(SUMMARY_FILE, &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_manifest() -> Manifest {
        Manifest {
            id: "small".into(),
            seed: 7,
            repetitions: 1,
            personas: DEFAULT_PERSONAS[..3].iter().map(|c| PersonaSpec::new(c).unwrap()).collect(),
            session: SessionDefaults { visit_budget: 60, ..SessionDefaults::default() },
            ..Manifest::default()
        }
    }

    #[test]
    fn manifest_round_trips_through_toml() {
        let m = small_manifest();
        let text = m.to_toml().unwrap();
        assert_eq!(Manifest::from_toml_str(&text).unwrap(), m);
        assert!(Manifest::from_toml_str("bogus = 1").is_err());
    }

    #[test]
    fn minimal_manifest_uses_defaults() {
        let m = Manifest::from_toml_str("id = \"x\"\nseed = 3\n").unwrap();
        assert_eq!(m.personas.len(), 10);
        assert_eq!(m.session.visit_budget, 310);
        assert_eq!(m.consensus, ConsensusConfig { n: 2, t: 2.5 });
    }

    #[test]
    fn exit_codes() {
        assert_eq!(ExperimentError::Config("x".into()).exit_code(), 2);
        assert_eq!(ExperimentError::IncompleteCorpus("x".into()).exit_code(), 3);
        assert_eq!(ExperimentError::Metrics(MetricsError::MissingGroundTruth).exit_code(), 3);
    }

    #[test]
    fn simulate_then_analyze() {
        let dir = tempfile::tempdir().unwrap();
        let summary = simulate(&small_manifest(), dir.path()).unwrap();
        assert_eq!(summary.sessions, 4);
        let report = analyze(dir.path(), &AnalyzeOptions::default()).unwrap();
        assert_eq!(report.cells.len(), 3 * 3 * 3);
        for c in &report.cells {
            for v in [c.ttk, c.bailp].into_iter().flatten() {
                assert!((0.0..=1.0).contains(&v));
            }
        }
        let csv = std::fs::read_to_string(dir.path().join(REPORT_CSV)).unwrap();
        assert_eq!(csv.lines().count(), 1 + 27);
        let perf = validate(dir.path(), None).unwrap();
        assert_eq!(perf.entries.len(), 9);
    }
}
