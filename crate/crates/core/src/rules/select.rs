use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{MinedRule, MinedRuleSet, RuleError};
use crate::kg::Vocabulary;

/// Quality measure used to rank rules for selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Criterion {
    HeadCoverage,
    StdConfidence,
    PcaConfidence,
}

impl Criterion {
    pub const ALL: [Criterion; 3] = [Criterion::HeadCoverage, Criterion::StdConfidence, Criterion::PcaConfidence];

    pub fn value(self, rule: &MinedRule) -> f64 {
        match self {
            Criterion::HeadCoverage => rule.stats.head_coverage,
            Criterion::StdConfidence => rule.stats.std_confidence,
            Criterion::PcaConfidence => rule.stats.pca_confidence,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Criterion::HeadCoverage => "hc",
            Criterion::StdConfidence => "conf",
            Criterion::PcaConfidence => "pca",
        }
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.key())
    }
}

impl FromStr for Criterion {
    type Err = RuleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hc" | "head_coverage" | "headcoverage" => Ok(Criterion::HeadCoverage),
            "conf" | "std" | "std_confidence" | "confidence" => Ok(Criterion::StdConfidence),
            "pca" | "pca_confidence" => Ok(Criterion::PcaConfidence),
            other => Err(RuleError::InvalidConfig(format!("unknown selection criterion `{other}`"))),
        }
    }
}

/// The `n` best rules under `criterion`. Ties break on higher support, then
/// on ascending canonical text, so the result is fully deterministic.
pub fn select_top(set: &MinedRuleSet, criterion: Criterion, n: usize, vocab: &Vocabulary) -> Vec<MinedRule> {
    let mut keyed: Vec<(String, &MinedRule)> = set.iter().map(|r| (r.rule.display(vocab), r)).collect();
    keyed.sort_by(|(ta, a), (tb, b)| {
        criterion
            .value(b)
            .total_cmp(&criterion.value(a))
            .then(b.stats.support.cmp(&a.stats.support))
            .then_with(|| ta.cmp(tb))
    });
    keyed.into_iter().take(n).map(|(_, r)| r.clone()).collect()
}
