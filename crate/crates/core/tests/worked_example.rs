mod common;

use std::collections::BTreeMap;

use common::*;
use oba_core::experiment::{Analysis, AnalysisConfig, Manifest};
use oba_core::persona::{consensus_training_keywords, ConsensusConfig};
use oba_core::pipeline::{FilterSet, FilterStage};
use oba_core::taxonomy::Taxonomy;

fn analysis() -> Analysis {
    Analysis::new(Manifest::default(), Taxonomy::demo(), worked_example(), ConsensusConfig::default()).unwrap()
}

fn cumulative_config() -> AnalysisConfig {
    AnalysisConfig { n: 2, t: 2.5, t_prime: 2.5, filter_sets: FilterSet::cumulative() }
}

#[test]
fn store_is_consistent() {
    worked_example().validate().unwrap();
}

#[test]
fn consensus_keeps_four_keywords() {
    let raw: BTreeMap<String, _> = [
        ("google".to_string(), kws(&GOOGLE_TRAINING)),
        ("mcafee".to_string(), kws(&MCAFEE_TRAINING)),
        ("cyren".to_string(), kws(&CYREN_TRAINING)),
    ]
    .into();
    let kept = consensus_training_keywords(&raw, &ConsensusConfig::default(), &Taxonomy::demo()).unwrap();
    assert_eq!(kept["google"], kws(&FILTERED_TRAINING));
    assert_eq!(analysis().training("pools", "google"), &kws(&FILTERED_TRAINING));
}

#[test]
fn attrition_matches_case_study() {
    let report = analysis().run(&cumulative_config()).unwrap();
    let row = report.attrition.iter().find(|r| r.persona == "pools" && r.filters == FilterSet::all()).unwrap();
    let pages: Vec<usize> = row.attrition.stages.iter().map(|(_, c)| c.landing_pages).collect();
    assert_eq!(pages, EXAMPLE_PAGES);
    assert_eq!(row.attrition.stages[0].0, FilterStage::Retargeting);
    // Four retargeting landings are removed before anything else.
    assert_eq!(row.attrition.input.landing_pages, 385);
}

#[test]
fn ttk_and_bailp_per_stage() {
    let report = analysis().run(&cumulative_config()).unwrap();
    for (set, want) in FilterSet::cumulative().iter().zip(EXAMPLE_BAILP) {
        let cell = report
            .cells
            .iter()
            .find(|c| c.persona == "pools" && c.source == "google" && &c.filters == set)
            .unwrap();
        assert_eq!(cell.ttk, Some(1.0), "{set}");
        assert!((cell.bailp.unwrap() - want).abs() < 1e-12, "{set}: {:?}", cell.bailp);
    }
}

#[test]
fn near_persona_sharing_does_not_remove_ads() {
    let report = analysis().run(&cumulative_config()).unwrap();
    let tubs = report.attrition.iter().find(|r| r.persona == "hot-tubs" && r.filters == FilterSet::all()).unwrap();
    assert_eq!(tubs.attrition.stages.last().unwrap().1.landing_pages, 5);
}
