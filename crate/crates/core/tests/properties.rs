mod common;

use std::collections::{BTreeMap, BTreeSet};

use common::*;
use oba_core::corpus::ExperimentStore;
use oba_core::metrics;
use oba_core::persona::{consensus_training_keywords, ConsensusConfig};
use oba_core::taxonomy::{Keyword, Taxonomy};
use proptest::prelude::*;

fn demo_keywords() -> Vec<Keyword> {
    Taxonomy::demo().keywords().into_iter().collect()
}

fn keyword_set(max: usize) -> impl Strategy<Value = BTreeSet<Keyword>> {
    let all = demo_keywords();
    proptest::collection::btree_set(0..all.len(), 0..max)
        .prop_map(move |idx| idx.into_iter().map(|i| all[i].clone()).collect())
}

fn sources() -> impl Strategy<Value = BTreeMap<String, BTreeSet<Keyword>>> {
    proptest::collection::vec(keyword_set(6), 3..5)
        .prop_map(|sets| sets.into_iter().enumerate().map(|(i, s)| (format!("s{i}"), s)).collect())
}

fn subset(a: &BTreeMap<String, BTreeSet<Keyword>>, b: &BTreeMap<String, BTreeSet<Keyword>>) -> bool {
    a.iter().all(|(k, v)| v.is_subset(&b[k]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn consensus_shrinks_as_t_rises(raw in sources(), t1 in 0.0f64..3.6, t2 in 0.0f64..3.6) {
        let tax = Taxonomy::demo();
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let loose = consensus_training_keywords(&raw, &ConsensusConfig { n: 2, t: lo }, &tax).unwrap();
        let strict = consensus_training_keywords(&raw, &ConsensusConfig { n: 2, t: hi }, &tax).unwrap();
        prop_assert!(subset(&strict, &loose));
        prop_assert!(subset(&loose, &raw));
    }

    #[test]
    fn consensus_shrinks_as_n_rises(raw in sources(), t in 0.0f64..3.6) {
        let tax = Taxonomy::demo();
        let one = consensus_training_keywords(&raw, &ConsensusConfig { n: 1, t }, &tax).unwrap();
        let two = consensus_training_keywords(&raw, &ConsensusConfig { n: 2, t }, &tax).unwrap();
        prop_assert!(subset(&two, &one));
    }

    #[test]
    fn metrics_stay_in_unit_interval(
        training in keyword_set(5).prop_filter("non-empty", |s| !s.is_empty()),
        pages in proptest::collection::vec((keyword_set(4), 1u64..100), 1..10),
    ) {
        let landing: BTreeSet<Keyword> = pages.iter().flat_map(|(k, _)| k.iter().cloned()).collect();
        let t = metrics::ttk(&training, &landing).unwrap();
        let b = metrics::bailp(&training, pages.iter().map(|(k, n)| (k, *n))).unwrap();
        prop_assert!((0.0..=1.0).contains(&t));
        prop_assert!((0.0..=1.0).contains(&b));
        // BAiLP > 0 implies some training keyword reached a landing page.
        prop_assert_eq!(b > 0.0, t > 0.0);
    }

    #[test]
    fn keyword_normalization_is_idempotent(raw in "[A-Za-z_&+ /]{1,30}") {
        if let Ok(k) = Keyword::new(&raw) {
            prop_assert_eq!(Keyword::new(k.as_str()).unwrap(), k);
        }
    }
}

#[test]
fn store_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    let store = worked_example();
    store.save(tmp.path()).unwrap();
    let loaded = ExperimentStore::load(tmp.path()).unwrap();
    assert!(store.same_contents(&loaded));
    // Saving the loaded copy yields the same bytes.
    let again = tempfile::tempdir().unwrap();
    loaded.save(again.path()).unwrap();
    for entry in std::fs::read_dir(tmp.path()).unwrap() {
        let path = entry.unwrap().path();
        if path.is_file() {
            let twin = again.path().join(path.file_name().unwrap());
            assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(twin).unwrap(), "{}", path.display());
        }
    }
}
