use std::collections::BTreeMap;
use std::path::Path;

use oba_core::adsim::{self, AdTarget, NoisePreset, World};
use oba_core::corpus::{AdKind, Condition, ExperimentStore, CLEAN_PROFILE_ID};
use oba_core::experiment::{self, Analysis, Manifest};
use oba_core::pipeline::{self, FilterConfig, FilterSet, FilterStage};
use oba_core::taxonomy::Taxonomy;

fn small_manifest(seed: u64) -> Manifest {
    let mut m = Manifest::default();
    m.seed = seed;
    m.repetitions = 2;
    m.session.visit_budget = 150;
    m.noise = Some(NoisePreset::Zero);
    m
}

fn run(m: &Manifest, dir: &Path) -> (World, ExperimentStore) {
    experiment::simulate(m, dir).unwrap();
    let world = adsim::build_world(&m.sim_config(), &m.personas, &Taxonomy::demo()).unwrap();
    (world, ExperimentStore::load(dir).unwrap())
}

#[test]
fn labels_agree_with_the_world() {
    let tmp = tempfile::tempdir().unwrap();
    let (world, store) = run(&small_manifest(1), tmp.path());
    assert!(!store.impressions.is_empty());
    for imp in &store.impressions {
        let ad = world.ad_by_landing(&imp.landing_page).expect("landing page is an ad");
        assert_eq!(imp.ground_truth, Some(ad.kind));
    }
}

#[test]
fn clean_profile_never_sees_profile_driven_ads() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, store) = run(&small_manifest(2), tmp.path());
    let kinds: Vec<AdKind> = store
        .impressions
        .iter()
        .filter(|i| i.persona_id == CLEAN_PROFILE_ID)
        .map(|i| i.ground_truth.unwrap())
        .collect();
    assert!(!kinds.is_empty());
    assert!(kinds.iter().all(|k| matches!(k, AdKind::Static | AdKind::Contextual | AdKind::GeoDemo)));
}

#[test]
fn honoured_dnt_blocks_tracking() {
    let tmp = tempfile::tempdir().unwrap();
    let mut m = small_manifest(3);
    m.sim.honor_dnt = true;
    m.conditions = vec![Condition::new("ES", true)];
    let (_, store) = run(&m, tmp.path());
    assert!(store
        .impressions
        .iter()
        .all(|i| !matches!(i.ground_truth, Some(AdKind::Oba | AdKind::Retargeting))));
}

#[test]
fn trained_persona_top_landings_are_its_oba_ads() {
    let tmp = tempfile::tempdir().unwrap();
    let (world, store) = run(&small_manifest(4), tmp.path());
    let persona = world.personas.iter().find(|p| p.id == "swimming-pools-spas").unwrap();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for imp in store.impressions.iter().filter(|i| i.persona_id == persona.id) {
        *counts.entry(imp.landing_key().to_string()).or_default() += u64::from(imp.ntimes);
    }
    let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    for (landing, _) in &ranked[..3] {
        let ad = world.ads.iter().find(|a| a.landing_page.site_key() == landing).unwrap();
        assert_eq!(ad.kind, AdKind::Oba, "{landing}");
        let AdTarget::Category(c) = &ad.target else { panic!("untargeted oba ad") };
        assert!(c == &persona.category || Some(c) == persona.secondary.as_ref(), "{landing} targets {c}");
    }
}

#[test]
fn retargeting_filter_removes_exactly_retargeting_ads() {
    let tmp = tempfile::tempdir().unwrap();
    experiment::simulate(&small_manifest(5), tmp.path()).unwrap();
    let analysis = Analysis::load(tmp.path(), None).unwrap();
    let cfg = FilterConfig { t_prime: 2.5, filters: FilterSet::new([FilterStage::Retargeting]) };
    for key in analysis.session_keys() {
        let input = analysis.group(key).unwrap();
        let out = pipeline::run_filters(input, &cfg, &analysis.taxonomy).unwrap();
        for (p, imps) in &input.impressions {
            let kept = &out.impressions[p];
            let expected: Vec<_> =
                imps.iter().filter(|i| i.ground_truth != Some(AdKind::Retargeting)).cloned().collect();
            assert_eq!(kept, &expected, "{key} {p}");
        }
    }
}

#[test]
fn demo_geo_attrition_grows_with_threshold() {
    let tmp = tempfile::tempdir().unwrap();
    experiment::simulate(&small_manifest(6), tmp.path()).unwrap();
    let analysis = Analysis::load(tmp.path(), None).unwrap();
    let lc_max = analysis.taxonomy.lc_max();
    for key in analysis.session_keys() {
        let input = analysis.group(key).unwrap();
        let mut previous: Option<BTreeMap<String, usize>> = None;
        for t_prime in [0.0, 2.5, lc_max] {
            let out = pipeline::run_filters(input, &FilterConfig { t_prime, filters: FilterSet::all() }, &analysis.taxonomy)
                .unwrap();
            let removed: BTreeMap<String, usize> = out
                .attrition
                .iter()
                .map(|(p, a)| (p.clone(), a.stages[1].1.landing_pages - a.stages[2].1.landing_pages))
                .collect();
            if let Some(prev) = &previous {
                for (p, r) in &removed {
                    assert!(*r >= prev[p], "{key} {p}: {r} < {} at T' = {t_prime}", prev[p]);
                }
            }
            previous = Some(removed);
        }
    }
}

#[test]
fn missing_clean_profile_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    experiment::simulate(&small_manifest(7), tmp.path()).unwrap();
    let mut store = ExperimentStore::load(tmp.path()).unwrap();
    store.visits.retain(|v| v.persona_id != CLEAN_PROFILE_ID);
    store.impressions.retain(|i| i.persona_id != CLEAN_PROFILE_ID);
    let analysis = Analysis::new(Manifest::default(), Taxonomy::demo(), store, Default::default()).unwrap();
    let err = analysis.validate(2.5).unwrap_err();
    assert_eq!(err.exit_code(), 3, "{err}");
}
