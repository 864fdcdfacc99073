//! Statistical checks of negative sampling.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use r2n_core::kg::{EntityId, RelationId, Triple};
use r2n_core::kge::NegativeSampler;

fn chi_square_p(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    let expected = total as f64 / counts.len() as f64;
    let stat: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    1.0 - ChiSquared::new((counts.len() - 1) as f64).unwrap().cdf(stat)
}

#[test]
fn replacements_are_uniform_over_the_other_entities() {
    let n = 25;
    let t = Triple::new(EntityId(3), RelationId(0), EntityId(7));
    let mut s = NegativeSampler::new(4, n, 11).unwrap();
    let mut heads = vec![0usize; n];
    let mut tails = vec![0usize; n];
    for _ in 0..10_000 {
        for c in s.sample(&t, |_| false) {
            if c.head != t.head {
                heads[c.head.index()] += 1;
            } else {
                tails[c.tail.index()] += 1;
            }
        }
    }
    assert_eq!(heads[3], 0);
    assert_eq!(tails[7], 0);
    let drop = |v: &[usize], skip: usize| v.iter().enumerate().filter(|(i, _)| *i != skip).map(|(_, &c)| c).collect::<Vec<_>>();
    let (h, tl) = (drop(&heads, 3), drop(&tails, 7));
    assert!(chi_square_p(&h) > 1e-3, "head replacements not uniform: {h:?}");
    assert!(chi_square_p(&tl) > 1e-3, "tail replacements not uniform: {tl:?}");
    // the side is a fair coin
    assert!(chi_square_p(&[h.iter().sum(), tl.iter().sum()]) > 1e-3);
}

#[test]
fn known_triples_are_avoided_until_retries_run_out() {
    let n = 10;
    let t = Triple::new(EntityId(0), RelationId(0), EntityId(1));
    let known = |c: &Triple| c.head.0.is_multiple_of(2) && !c.tail.0.is_multiple_of(2);
    let mut s = NegativeSampler::new(2, n, 5).unwrap();
    let mut known_out = 0;
    for _ in 0..5000 {
        known_out += s.sample(&t, known).iter().filter(|c| known(c)).count();
    }
    assert_eq!(known_out, s.accepted_known());

    let mut strict = NegativeSampler::new(1, n, 5).unwrap().with_max_retries(0);
    let all_known = strict.sample(&t, |_| true);
    assert_eq!(all_known.len(), 1);
    assert_eq!(strict.accepted_known(), 1);
}
