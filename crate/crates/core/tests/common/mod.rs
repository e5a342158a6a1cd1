//! Shared fixtures for the integration and acceptance tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use oba_core::corpus::{
    AdImpression, Condition, ExperimentStore, PageRole, PageUrl, SessionKey, TagRecord, VisitKind, VisitRecord,
    WebPage, CLEAN_PROFILE_ID,
};
use oba_core::persona::Persona;
use oba_core::taxonomy::Keyword;

pub fn kw(s: &str) -> Keyword {
    Keyword::new(s).unwrap()
}

pub fn kws(list: &[&str]) -> BTreeSet<Keyword> {
    list.iter().map(|s| kw(s)).collect()
}

pub fn url(s: &str) -> PageUrl {
    PageUrl::parse(s).unwrap()
}

/// Training pages of the pool persona, as listed in the case study.
pub const POOL_TRAINING: [&str; 10] = [
    "http://poolpricer.com",
    "http://levelgroundpool.com",
    "http://whirlpool-zu-hause.de",
    "http://poolforum.se",
    "http://eauplaisir.com",
    "http://photopiscine.net",
    "http://a-pool.czm",
    "http://allas.fi",
    "http://seaglasspools.com",
    "http://piscineinfoservice.com",
];

/// Keywords the first source assigns to the pool training pages.
pub const GOOGLE_TRAINING: [&str; 6] = [
    "gems & jewellery",
    "gyms & health clubs",
    "outdoor toys & play equipment",
    "security products & services",
    "surf & swim",
    "swimming pools & spas",
];
pub const MCAFEE_TRAINING: [&str; 4] = ["home & garden", "sports", "security", "shopping"];
pub const CYREN_TRAINING: [&str; 4] = ["home & garden", "sports", "security", "health"];

/// The four keywords expected to survive consensus at N = 2, T = 2.5.
pub const FILTERED_TRAINING: [&str; 4] = [
    "outdoor toys & play equipment",
    "security products & services",
    "surf & swim",
    "swimming pools & spas",
];

/// Unique landing pages after each filter in the worked example.
pub const EXAMPLE_PAGES: [usize; 3] = [381, 155, 27];
pub const EXAMPLE_BAILP: [f64; 3] = [0.17, 0.75, 0.97];

pub fn condition() -> Condition {
    Condition::new("ES", false)
}

pub fn session() -> SessionKey {
    SessionKey::new(&condition(), 0)
}

const CONTROL: [&str; 5] = [
    "http://www.accuweather.com",
    "http://www.localconditions.com",
    "http://www.wunderground.com",
    "http://www.myforecast.com",
    "http://www.weatherbase.com",
];

/// A landing page with its per-source keywords and how often the pool
/// persona saw it.
struct Landing {
    url: String,
    keywords: BTreeSet<Keyword>,
    ntimes: u32,
}

fn landings(prefix: &str, count: usize, ntimes: impl Fn(usize) -> u32, keywords: impl Fn(usize) -> BTreeSet<Keyword>) -> Vec<Landing> {
    (0..count)
        .map(|i| Landing { url: format!("http://{prefix}{i:03}.example"), keywords: keywords(i), ntimes: ntimes(i) })
        .collect()
}

/// Splits `ntimes` sightings over up to five control pages.
fn sightings(persona: &str, landing: &PageUrl, ntimes: u32) -> Vec<AdImpression> {
    let parts = ntimes.min(CONTROL.len() as u32);
    (0..parts)
        .map(|j| AdImpression {
            persona_id: persona.into(),
            session: session(),
            control_page: url(CONTROL[j as usize]),
            landing_page: landing.clone(),
            ntimes: ntimes / parts + u32::from(j < ntimes % parts),
            ground_truth: None,
        })
        .collect()
}

fn visits(persona: &str, pages: &[PageUrl]) -> Vec<VisitRecord> {
    let mut out = Vec::new();
    let all: Vec<(PageUrl, VisitKind)> = pages
        .iter()
        .map(|p| (p.clone(), VisitKind::Training))
        .chain(CONTROL.iter().map(|c| (url(c), VisitKind::Control)))
        .collect();
    for (seq, (page, kind)) in all.into_iter().enumerate() {
        out.push(VisitRecord {
            persona_id: persona.into(),
            session: session(),
            seq: seq as u32,
            timestamp: seq as f64 * 180.0 + 1.0,
            url: page,
            kind,
        });
    }
    out
}

/// The pool-persona case study as a corpus: 381 landing pages survive F_r,
/// F_s&c removes 226, F_d&g removes 128, and BAiLP for the first source is
/// 612/3600, 600/800 and 582/600 after each stage.
pub fn worked_example() -> ExperimentStore {
    let matching = |i: usize| kws(&[FILTERED_TRAINING[i % 4]]);
    let unrelated = |i: usize| kws(&[["weather", "banking", "video games", "news"][i % 4]]);

    // Survive every filter: 24 matching pages (582 ads), 3 unrelated (18 ads).
    let mut stage3 = landings("pool-shop", 24, |i| match i {
        0 => 300,
        1 => 106,
        _ => 8,
    }, matching);
    stage3.extend(landings("other-shop", 3, |_| 6, unrelated));

    // Removed by F_d&g: 18 matching single sightings, 110 unrelated (182 ads).
    let mut broadcast = landings("regional-match", 18, |_| 1, matching);
    broadcast.extend(landings("regional", 110, |i| if i < 72 { 2 } else { 1 }, unrelated));

    // Removed by F_s&c: 12 matching single sightings, 214 unrelated (2788 ads).
    let mut contextual = landings("context-match", 12, |_| 1, matching);
    contextual.extend(landings("context", 214, |i| if i < 6 { 14 } else { 13 }, unrelated));

    let pool_training: Vec<PageUrl> = POOL_TRAINING.iter().map(|u| url(u)).collect();
    let bank_training: Vec<PageUrl> = (0..3).map(|i| url(&format!("http://bank{i}.example"))).collect();
    let tubs_training: Vec<PageUrl> = (0..3).map(|i| url(&format!("http://hottub{i}.example"))).collect();

    let personas = vec![
        Persona { id: "pools".into(), category: kw("swimming pools & spas"), sensitive: false, training_pages: pool_training.clone(), attrition: None },
        Persona { id: "banking".into(), category: kw("banking"), sensitive: false, training_pages: bank_training.clone(), attrition: None },
        Persona { id: "hot-tubs".into(), category: kw("hot tubs"), sensitive: false, training_pages: tubs_training.clone(), attrition: None },
    ];

    let mut pages: Vec<WebPage> = Vec::new();
    for p in pool_training.iter().chain(&bank_training).chain(&tubs_training) {
        pages.push(WebPage { url: p.clone(), role: PageRole::Training });
    }
    for c in CONTROL {
        pages.push(WebPage { url: url(c), role: PageRole::Control });
    }
    for l in stage3.iter().chain(&broadcast).chain(&contextual) {
        pages.push(WebPage { url: url(&l.url), role: PageRole::Landing });
    }

    // Tags: training pages per source as in the case study; landing pages are
    // tagged identically by every source.
    let mut tags: BTreeMap<String, Vec<TagRecord>> = BTreeMap::new();
    for (source, list) in [("google", &GOOGLE_TRAINING[..]), ("mcafee", &MCAFEE_TRAINING[..]), ("cyren", &CYREN_TRAINING[..])] {
        let mut records: Vec<TagRecord> = pool_training
            .iter()
            .enumerate()
            .map(|(i, u)| TagRecord { url: u.clone(), keywords: kws(&[list[i % list.len()]]) })
            .collect();
        records.extend(bank_training.iter().map(|u| TagRecord { url: u.clone(), keywords: kws(&["banking"]) }));
        records.extend(tubs_training.iter().map(|u| TagRecord { url: u.clone(), keywords: kws(&["hot tubs"]) }));
        records.extend(CONTROL.iter().map(|c| TagRecord { url: url(c), keywords: kws(&["weather"]) }));
        records.extend(
            stage3.iter().chain(&broadcast).chain(&contextual).map(|l| TagRecord { url: url(&l.url), keywords: l.keywords.clone() }),
        );
        tags.insert(source.into(), records);
    }

    let mut impressions = Vec::new();
    for l in stage3.iter().chain(&broadcast).chain(&contextual) {
        impressions.extend(sightings("pools", &url(&l.url), l.ntimes));
    }
    // Retargeting: ads pointing back at pages the persona visited.
    for t in &pool_training[..4] {
        impressions.extend(sightings("pools", t, 5));
    }
    // A taxonomy-distant persona sees every regional ad; a near one shares a
    // few of the pool shops, which must not trigger F_d&g.
    for l in &broadcast {
        impressions.extend(sightings("banking", &url(&l.url), 1));
    }
    for l in &stage3[..5] {
        impressions.extend(sightings("hot-tubs", &url(&l.url), 2));
    }
    // The clean profile sees every contextual/static ad.
    for l in &contextual {
        impressions.extend(sightings(CLEAN_PROFILE_ID, &url(&l.url), 1));
    }

    let mut all_visits = visits("pools", &pool_training);
    all_visits.extend(visits("banking", &bank_training));
    all_visits.extend(visits("hot-tubs", &tubs_training));
    all_visits.extend(visits(CLEAN_PROFILE_ID, &[]));

    ExperimentStore { personas, pages, tags, visits: all_visits, impressions }
}
