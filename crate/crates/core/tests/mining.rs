//! Rule mining and standalone rule statistics against a nested-loop
//! enumerator on small random graphs.

mod support;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use r2n_core::rules::{head_coverage, mine, pca_confidence, rule_stats, std_confidence, support as rule_support, MineConfig};

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mined_rules_equal_the_enumeration(
        seed in any::<u64>(),
        min_support in 0u64..4,
        min_hc in prop::sample::select(vec![0.0, 0.1, 0.3]),
        two_atoms in any::<bool>(),
    ) {
        let kg = support::random_graph(&mut ChaCha8Rng::seed_from_u64(seed), 30, 4, 120);
        let max_body_atoms = if two_atoms { 2 } else { 1 };
        let mined = mine(&kg, &MineConfig { max_body_atoms, min_support, min_head_coverage: min_hc }).unwrap();
        let oracle = support::brute_force_mine(&kg, max_body_atoms, min_support, min_hc);
        prop_assert_eq!(mined.len(), oracle.len());
        for m in mined.iter() {
            let o = oracle.get(&m.rule);
            prop_assert!(o.is_some(), "{} not enumerated", m.rule.display(kg.vocab()));
            let o = o.unwrap();
            prop_assert_eq!(m.stats.support, o.support);
            prop_assert!(close(m.stats.head_coverage, o.head_coverage));
            prop_assert!(close(m.stats.std_confidence, o.std_confidence));
            prop_assert!(close(m.stats.pca_confidence, o.pca_confidence));
        }
    }

    #[test]
    fn standalone_statistics_equal_the_enumeration(seed in any::<u64>()) {
        let kg = support::random_graph(&mut ChaCha8Rng::seed_from_u64(seed), 25, 3, 80);
        for (rule, o) in support::brute_force_mine(&kg, 2, 1, 0.0) {
            prop_assert_eq!(rule_support(&rule, &kg), o.support);
            prop_assert!(close(head_coverage(&rule, &kg).unwrap(), o.head_coverage));
            prop_assert!(close(std_confidence(&rule, &kg).unwrap(), o.std_confidence));
            prop_assert!(close(pca_confidence(&rule, &kg).unwrap(), o.pca_confidence));
            let s = rule_stats(&rule, &kg).unwrap();
            prop_assert_eq!(s.support, o.support);
            prop_assert!(close(s.pca_confidence, o.pca_confidence));
        }
    }

    #[test]
    fn ratios_are_bounded_and_pca_dominates(seed in any::<u64>()) {
        let kg = support::random_graph(&mut ChaCha8Rng::seed_from_u64(seed), 40, 5, 200);
        let mined = mine(&kg, &MineConfig { max_body_atoms: 2, min_support: 1, min_head_coverage: 0.0 }).unwrap();
        for m in mined.iter() {
            let s = m.stats;
            prop_assert!(s.pca_confidence >= s.std_confidence);
            for v in [s.head_coverage, s.std_confidence, s.pca_confidence] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}

#[test]
fn self_loops_and_repeated_bindings_are_counted_like_the_enumeration() {
    // R0(a,a) lets x = y and z = x bindings satisfy chain bodies
    let kg = support::graph_from(3, 2, [(0, 0, 0), (0, 0, 1), (1, 1, 0), (0, 1, 0), (2, 0, 2), (2, 1, 2)]);
    let mined = mine(&kg, &MineConfig { max_body_atoms: 2, min_support: 1, min_head_coverage: 0.0 }).unwrap();
    let oracle = support::brute_force_mine(&kg, 2, 1, 0.0);
    assert_eq!(mined.len(), oracle.len());
    for m in mined.iter() {
        assert_eq!(m.stats.support, oracle[&m.rule].support, "{}", m.rule.display(kg.vocab()));
    }
}
