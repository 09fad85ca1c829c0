use std::collections::HashMap;

use cape_core::meta::{meta_filter, reward, Issue, RewardComponents, VerifierAnalysis};
use cape_core::number::Number;
use cape_core::provider::ProviderError;
use num_rational::BigRational;
use proptest::prelude::*;

fn twentieths() -> impl Strategy<Value = i64> {
    0i64..=20
}

fn n(k: i64) -> Number {
    Number::from_ratio(k, 20)
}

/// Issues located at `i0`, `i1`, ... with the given supports.
fn analysis(supports: &[i64]) -> (VerifierAnalysis, HashMap<String, Number>) {
    let issues: Vec<Issue> =
        (0..supports.len()).map(|i| Issue { location: format!("i{i}"), description: format!("issue {i}") }).collect();
    let table = issues.iter().zip(supports).map(|(is, &s)| (is.location.clone(), n(s))).collect();
    (VerifierAnalysis::new(Number::one(), issues).unwrap(), table)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn filter_keeps_exactly_the_supported_issues(supports in proptest::collection::vec(twentieths(), 0..12), theta in twentieths()) {
        let (a, table) = analysis(&supports);
        let meta = |_: &str, issue: &Issue| -> Result<Number, ProviderError> { Ok(table[&issue.location].clone()) };
        let kept = meta_filter("out", &a, &meta, &n(theta)).unwrap();
        let expected: Vec<Issue> = a.issues.iter().zip(&supports).filter(|(_, &s)| s > theta).map(|(i, _)| i.clone()).collect();
        prop_assert_eq!(&kept, &expected);
        let mut rest = a.issues.iter();
        prop_assert!(kept.iter().all(|k| rest.any(|i| i == k)), "not a subsequence");
    }

    #[test]
    fn zero_threshold_keeps_everything_supported(supports in proptest::collection::vec(1i64..=20, 0..12)) {
        let (a, table) = analysis(&supports);
        let meta = |_: &str, issue: &Issue| -> Result<Number, ProviderError> { Ok(table[&issue.location].clone()) };
        prop_assert_eq!(meta_filter("out", &a, &meta, &Number::zero()).unwrap(), a.issues.clone());
    }

    #[test]
    fn reward_is_an_exact_monotone_product(f in twentieths(), s in twentieths(), m in twentieths(), bump in 0i64..=20, which in 0usize..3) {
        let c = RewardComponents::new(n(f), n(s), n(m)).unwrap();
        let r = reward(&c);
        let direct = BigRational::new((f * s * m).into(), 8000.into());
        prop_assert_eq!(r.as_rational(), &direct);
        prop_assert!(r >= Number::zero() && r <= Number::one());
        let mut parts = [f, s, m];
        parts[which] = (parts[which] + bump).min(20);
        let higher = reward(&RewardComponents::new(n(parts[0]), n(parts[1]), n(parts[2])).unwrap());
        prop_assert!(higher >= r);
    }
}

#[test]
fn components_outside_the_unit_interval_are_rejected() {
    assert!(RewardComponents::new(Number::from_ratio(21, 20), Number::one(), Number::one()).is_err());
    assert!(RewardComponents::new(Number::one(), Number::from_ratio(-1, 20), Number::one()).is_err());
}
