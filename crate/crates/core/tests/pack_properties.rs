mod support;

use std::collections::BTreeMap;
use std::path::PathBuf;

use cape_core::graph::PredicateGraph;
use cape_core::number::Number;
use cape_core::packs::{run_pack, PackManifest, PolicyPack, TestCase};
use cape_core::verifier::evaluate_pack;
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn pack(seed: u64, n_policies: usize, n_cases: usize) -> (PolicyPack, BTreeMap<String, PredicateGraph>) {
    let mut policies = support::random_policies(seed, n_policies);
    let extended = policies.split_off(n_policies / 2);
    let graphs: BTreeMap<String, PredicateGraph> = (0..n_cases)
        .map(|i| (format!("case{i:02}"), support::random_graph(seed.wrapping_add(i as u64 * 7919), 24)))
        .collect();
    let test_cases =
        graphs.keys().map(|id| TestCase { id: id.clone(), prompt: String::new(), graph: None, output: None }).collect();
    let manifest = PackManifest {
        name: "generated".into(),
        version: "1.0.0".into(),
        core_pass_threshold: Number::from_ratio(1, 2),
        extended_pass_threshold: Number::zero(),
    };
    (PolicyPack { root: PathBuf::new(), manifest, core: policies, extended, test_cases }, graphs)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn profile_matches_per_case_verdicts(seed in any::<u64>(), n_policies in 2usize..8, n_cases in 1usize..12) {
        let (p, graphs) = pack(seed, n_policies, n_cases);
        let profile = run_pack(&p, &graphs).unwrap();

        let mut core_ok = 0;
        let mut ext_ok = 0;
        let mut total = 0;
        for (id, g) in &graphs {
            let core = evaluate_pack(&p.core, g, id).unwrap();
            let ext = evaluate_pack(&p.extended, g, id).unwrap();
            core_ok += usize::from(core.is_clean());
            ext_ok += usize::from(ext.is_clean());
            total += core.violations.len() + ext.violations.len();
        }
        prop_assert_eq!(&profile.core_adherence, &Number::from_ratio(core_ok as i64, n_cases as i64));
        prop_assert_eq!(&profile.extended_adherence, &Number::from_ratio(ext_ok as i64, n_cases as i64));
        prop_assert_eq!(profile.violation_distribution.values().sum::<usize>(), total);
        prop_assert_eq!(profile.cases.iter().map(|c| c.violations).sum::<usize>(), total);

        let mut shuffled = p.clone();
        shuffled.test_cases.shuffle(&mut support::rng(seed));
        prop_assert_eq!(run_pack(&shuffled, &graphs).unwrap(), profile.clone());

        if let Some(clean) = profile.cases.iter().find(|c| c.core_pass && c.extended_pass) {
            let mut bigger = p.clone();
            let mut more = graphs.clone();
            more.insert("zz-extra".into(), graphs[&clean.id].clone());
            bigger.test_cases.push(TestCase { id: "zz-extra".into(), prompt: String::new(), graph: None, output: None });
            let grown = run_pack(&bigger, &more).unwrap();
            prop_assert!(grown.core_adherence >= profile.core_adherence);
            prop_assert!(grown.extended_adherence >= profile.extended_adherence);
            prop_assert_eq!(&grown.violation_distribution, &profile.violation_distribution);
        }
    }
}

#[test]
fn missing_case_graph_is_reported() {
    let (p, mut graphs) = pack(1, 4, 3);
    graphs.remove("case01");
    assert_eq!(run_pack(&p, &graphs).unwrap_err().to_string(), "no graph for test case 'case01'");
}
