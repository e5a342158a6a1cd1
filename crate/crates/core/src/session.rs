//! Visit scheduling and session execution.
//!
//! A session draws `visit_budget` pages uniformly from the combined
//! training and control pool, spacing visits by exponential gaps on a
//! simulated clock. Ads seen on control pages become [`AdImpression`]s;
//! training visits only feed the harvester's tracking state.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AdImpression, AdKind, Condition, PageUrl, SessionKey, VisitKind, VisitRecord};
use crate::seed;

pub const DEFAULT_MEAN_INTERVAL_SECS: f64 = 180.0;
pub const DEFAULT_VISIT_BUDGET: u32 = 310;
pub const DEFAULT_REPETITIONS: u32 = 4;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("visit pool is empty")]
    EmptyPool,
    #[error("invalid session config: {0}")]
    InvalidConfig(String),
    #[error("harvester failed after {} visits: {reason}", partial.visits.len())]
    HarvesterFailure { reason: String, partial: Box<SessionLog> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub persona_id: String,
    pub dnt: bool,
    pub geo: String,
    /// Discard all browser state after every visit.
    pub clean_profile: bool,
    pub mean_interval_secs: f64,
    pub visit_budget: u32,
    pub rng_seed: u64,
    pub repetition: u32,
}

impl SessionConfig {
    pub fn new(persona_id: impl Into<String>, condition: &Condition, repetition: u32, rng_seed: u64) -> Self {
        SessionConfig {
            persona_id: persona_id.into(),
            dnt: condition.dnt,
            geo: condition.geo.clone(),
            clean_profile: false,
            mean_interval_secs: DEFAULT_MEAN_INTERVAL_SECS,
            visit_budget: DEFAULT_VISIT_BUDGET,
            rng_seed,
            repetition,
        }
    }

    pub fn key(&self) -> SessionKey {
        SessionKey { geo: self.geo.clone(), dnt: self.dnt, repetition: self.repetition }
    }

    fn validate(&self) -> Result<(), SessionError> {
        if self.visit_budget == 0 {
            return Err(SessionError::InvalidConfig("visit_budget must be >= 1".into()));
        }
        if !(self.mean_interval_secs.is_finite() && self.mean_interval_secs > 0.0) {
            return Err(SessionError::InvalidConfig(format!(
                "mean interval must be positive, got {}",
                self.mean_interval_secs
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisitEvent {
    pub seq: u32,
    pub timestamp: f64,
    pub page: PageUrl,
    pub kind: VisitKind,
}

/// Draws the visit sequence for one session. Fully determined by the pool
/// order and `cfg.rng_seed`.
pub fn schedule_visits(pool: &[(PageUrl, VisitKind)], cfg: &SessionConfig) -> Result<Vec<VisitEvent>, SessionError> {
    cfg.validate()?;
    if pool.is_empty() {
        return Err(SessionError::EmptyPool);
    }
    let mut rng = seed::rng(cfg.rng_seed, "schedule");
    let gaps = Exp::new(1.0 / cfg.mean_interval_secs).expect("positive rate");
    let mut clock = 0.0f64;
    let mut events = Vec::with_capacity(cfg.visit_budget as usize);
    for seq in 0..cfg.visit_budget {
        let gap: f64 = gaps.sample(&mut rng);
        // Keep timestamps strictly increasing even for a zero draw.
        let next = clock + gap;
        clock = if next > clock { next } else { f64::from_bits(clock.to_bits() + 1) };
        let (page, kind) = &pool[rng.random_range(0..pool.len())];
        events.push(VisitEvent { seq, timestamp: clock, page: page.clone(), kind: *kind });
    }
    Ok(events)
}

/// Browser-side context handed to the harvester on each visit.
#[derive(Clone, Debug)]
pub struct VisitContext<'a> {
    pub geo: &'a str,
    pub dnt: bool,
    pub timestamp: f64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ServedAd {
    pub landing_page: PageUrl,
    pub label: Option<AdKind>,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct HarvestError(pub String);

/// Something that loads a page in a browser and reports the ads on it.
pub trait Harvester {
    fn visit(&mut self, page: &PageUrl, kind: VisitKind, ctx: &VisitContext<'_>) -> Result<Vec<ServedAd>, HarvestError>;

    /// Drop cookies, history and any profile the trackers hold for this browser.
    fn reset_state(&mut self);
}

#[derive(Clone, Debug, PartialEq)]
pub struct SessionLog {
    pub persona_id: String,
    pub key: SessionKey,
    pub visits: Vec<VisitRecord>,
    pub impressions: Vec<AdImpression>,
    /// Ads served before aggregation; equals the sum of `ntimes`.
    pub raw_ads: u64,
    pub training_visits: u32,
    pub control_visits: u32,
    pub complete: bool,
}

impl SessionLog {
    /// Share of visits that went to control pages.
    pub fn control_mix(&self) -> f64 {
        let total = self.training_visits + self.control_visits;
        if total == 0 {
            0.0
        } else {
            f64::from(self.control_visits) / f64::from(total)
        }
    }
}

/// Runs one session against `harvester`.
pub fn run_session(
    training_pages: &[PageUrl],
    control_pages: &[PageUrl],
    cfg: &SessionConfig,
    harvester: &mut dyn Harvester,
) -> Result<SessionLog, SessionError> {
    let pool: Vec<(PageUrl, VisitKind)> = training_pages
        .iter()
        .map(|p| (p.clone(), VisitKind::Training))
        .chain(control_pages.iter().map(|p| (p.clone(), VisitKind::Control)))
        .collect();
    let schedule = schedule_visits(&pool, cfg)?;
    let key = cfg.key();

    let mut log = SessionLog {
        persona_id: cfg.persona_id.clone(),
        key: key.clone(),
        visits: Vec::with_capacity(schedule.len()),
        impressions: Vec::new(),
        raw_ads: 0,
        training_visits: 0,
        control_visits: 0,
        complete: true,
    };
    let mut counts: BTreeMap<(PageUrl, PageUrl), (u32, Option<AdKind>)> = BTreeMap::new();
    let mut failure = None;

    for event in schedule {
        let ctx = VisitContext { geo: &cfg.geo, dnt: cfg.dnt, timestamp: event.timestamp };
        let served = harvester.visit(&event.page, event.kind, &ctx);
        if cfg.clean_profile {
            harvester.reset_state();
        }
        let served = match served {
            Ok(s) => s,
            Err(e) => {
                failure = Some(e.0);
                break;
            }
        };
        match event.kind {
            VisitKind::Training => log.training_visits += 1,
            VisitKind::Control => {
                log.control_visits += 1;
                for ad in served {
                    log.raw_ads += 1;
                    let slot = counts.entry((event.page.clone(), ad.landing_page)).or_insert((0, ad.label));
                    slot.0 += 1;
                }
            }
        }
        log.visits.push(VisitRecord {
            persona_id: cfg.persona_id.clone(),
            session: key.clone(),
            seq: event.seq,
            timestamp: event.timestamp,
            url: event.page,
            kind: event.kind,
        });
    }

    log.impressions = counts
        .into_iter()
        .map(|((control_page, landing_page), (ntimes, ground_truth))| AdImpression {
            persona_id: cfg.persona_id.clone(),
            session: key.clone(),
            control_page,
            landing_page,
            ntimes,
            ground_truth,
        })
        .collect();

    match failure {
        Some(reason) => {
            log.complete = false;
            Err(SessionError::HarvesterFailure { reason, partial: Box::new(log) })
        }
        None => Ok(log),
    }
}

/// Replays scripted ads: each visit to a control page returns the next entry
/// of that page's script, cycling. Training visits return nothing.
#[derive(Clone, Debug, Default)]
pub struct ReplayHarvester {
    script: BTreeMap<String, Vec<Vec<ServedAd>>>,
    cursor: BTreeMap<String, usize>,
    /// Fail on the n-th visit (0-based), for exercising partial flushes.
    pub fail_at: Option<usize>,
    visits: usize,
    pub resets: usize,
}

impl ReplayHarvester {
    pub fn new(script: impl IntoIterator<Item = (PageUrl, Vec<Vec<ServedAd>>)>) -> Self {
        ReplayHarvester {
            script: script.into_iter().map(|(u, s)| (u.site_key().to_string(), s)).collect(),
            ..Default::default()
        }
    }
}

impl Harvester for ReplayHarvester {
    fn visit(&mut self, page: &PageUrl, kind: VisitKind, _ctx: &VisitContext<'_>) -> Result<Vec<ServedAd>, HarvestError> {
        if self.fail_at == Some(self.visits) {
            return Err(HarvestError(format!("scripted failure at visit {}", self.visits)));
        }
        self.visits += 1;
        if kind == VisitKind::Training {
            return Ok(Vec::new());
        }
        let key = page.site_key();
        let Some(script) = self.script.get(key).filter(|s| !s.is_empty()) else {
            return Ok(Vec::new());
        };
        let cursor = self.cursor.entry(key.to_string()).or_insert(0);
        let ads = script[*cursor % script.len()].clone();
        *cursor += 1;
        Ok(ads)
    }

    fn reset_state(&mut self) {
        self.resets += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn url(s: &str) -> PageUrl {
        PageUrl::parse(s).unwrap()
    }

    fn cfg(budget: u32) -> SessionConfig {
        let mut c = SessionConfig::new("p", &Condition::new("ES", false), 0, 42);
        c.visit_budget = budget;
        c
    }

    #[test]
    fn single_page_pool() {
        let pool = vec![(url("w.com"), VisitKind::Control)];
        let ev = schedule_visits(&pool, &cfg(50)).unwrap();
        assert_eq!(ev.len(), 50);
        assert!(ev.iter().all(|e| e.page == pool[0].0));
        assert!(ev.windows(2).all(|w| w[1].timestamp > w[0].timestamp));
    }

    #[test]
    fn default_budget_is_310() {
        let pool = vec![(url("w.com"), VisitKind::Control), (url("t.com"), VisitKind::Training)];
        let c = SessionConfig::new("p", &Condition::new("ES", false), 0, 1);
        assert_eq!(schedule_visits(&pool, &c).unwrap().len(), 310);
    }

    #[test]
    fn empty_pool_and_bad_config() {
        assert!(matches!(schedule_visits(&[], &cfg(3)), Err(SessionError::EmptyPool)));
        let pool = vec![(url("w.com"), VisitKind::Control)];
        assert!(matches!(schedule_visits(&pool, &cfg(0)), Err(SessionError::InvalidConfig(_))));
    }

    fn ad(s: &str) -> ServedAd {
        ServedAd { landing_page: url(s), label: Some(AdKind::Static) }
    }

    #[test]
    fn aggregates_ntimes_and_conserves_counts() {
        let control = url("weather.com");
        let mut h = ReplayHarvester::new([(control.clone(), vec![vec![ad("a.com"), ad("b.com")], vec![ad("a.com")]])]);
        let log = run_session(&[url("train.com")], &[control], &cfg(40), &mut h).unwrap();
        let total: u64 = log.impressions.iter().map(|i| u64::from(i.ntimes)).sum();
        assert_eq!(total, log.raw_ads);
        assert_eq!(log.impressions.len(), 2);
        assert_eq!(log.training_visits + log.control_visits, 40);
        assert_eq!(h.resets, 0);
    }

    #[test]
    fn clean_profile_resets_after_every_visit() {
        let control = url("weather.com");
        let mut h = ReplayHarvester::new([(control.clone(), vec![vec![ad("a.com")]])]);
        let mut c = cfg(25);
        c.clean_profile = true;
        run_session(&[], &[control], &c, &mut h).unwrap();
        assert_eq!(h.resets, 25);
    }

    #[test]
    fn harvester_failure_keeps_partial_log() {
        let control = url("weather.com");
        let mut h = ReplayHarvester::new([(control.clone(), vec![vec![ad("a.com")]])]);
        h.fail_at = Some(5);
        let err = run_session(&[], &[control], &cfg(20), &mut h).unwrap_err();
        let SessionError::HarvesterFailure { partial, .. } = err else { panic!() };
        assert!(!partial.complete);
        assert_eq!(partial.visits.len(), 5);
        assert_eq!(partial.impressions[0].ntimes, 5);
    }

    #[test]
    fn equal_seeds_equal_sessions() {
        let control = url("weather.com");
        let script = vec![vec![ad("a.com")], vec![ad("b.com"), ad("c.com")]];
        let run = || {
            let mut h = ReplayHarvester::new([(control.clone(), script.clone())]);
            run_session(&[url("t1.com"), url("t2.com")], std::slice::from_ref(&control), &cfg(100), &mut h).unwrap()
        };
        assert_eq!(run(), run());
    }
}
