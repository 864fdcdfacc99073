//! Exact rule statistics computed by index-backed joins.

use std::collections::HashSet;
use std::ops::ControlFlow;

use serde::{Deserialize, Serialize};

use super::matcher::{exists, for_each_body_binding};
use super::{HornRule, RuleError};
use crate::kg::{EntityId, KnowledgeGraph};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuleStats {
    pub support: u64,
    pub head_coverage: f64,
    pub std_confidence: f64,
    pub pca_confidence: f64,
}

/// Distinct `(x,y)` with the body satisfiable and `R(x,y)` in `kg`.
pub fn support(rule: &HornRule, kg: &KnowledgeGraph) -> u64 {
    let mut binding = vec![None; rule.num_vars()];
    let mut n = 0;
    for t in kg.triples_of(rule.head_relation()) {
        if rule.is_reflexive() && t.head != t.tail {
            continue;
        }
        binding[0] = Some(t.head);
        if !rule.is_reflexive() {
            binding[1] = Some(t.tail);
        }
        if exists(kg, rule.body(), &mut binding) {
            n += 1;
        }
    }
    n
}

pub fn head_coverage(rule: &HornRule, kg: &KnowledgeGraph) -> Result<f64, RuleError> {
    let heads = kg.relation_count(rule.head_relation());
    if heads == 0 {
        return Err(RuleError::EmptyHeadRelation(kg.vocab().relation_name(rule.head_relation()).to_owned()));
    }
    Ok(support(rule, kg) as f64 / heads as f64)
}

/// Distinct body pairs, and those whose `x` has some known head-relation fact.
fn body_pair_counts(rule: &HornRule, kg: &KnowledgeGraph) -> (u64, u64) {
    let mut pairs: HashSet<(EntityId, EntityId)> = HashSet::new();
    let mut binding = vec![None; rule.num_vars()];
    let _ = for_each_body_binding(kg, rule.body(), &mut binding, &mut |b| {
        let x = b[0].unwrap();
        pairs.insert((x, b[1].unwrap_or(x)));
        ControlFlow::Continue(())
    });
    let pca = pairs.iter().filter(|(x, _)| kg.has_subject(rule.head_relation(), *x)).count();
    (pairs.len() as u64, pca as u64)
}

pub fn std_confidence(rule: &HornRule, kg: &KnowledgeGraph) -> Result<f64, RuleError> {
    let (body, _) = body_pair_counts(rule, kg);
    if body == 0 {
        return Err(RuleError::NoBodyBindings);
    }
    Ok(support(rule, kg) as f64 / body as f64)
}

pub fn pca_confidence(rule: &HornRule, kg: &KnowledgeGraph) -> Result<f64, RuleError> {
    let (_, pca) = body_pair_counts(rule, kg);
    if pca == 0 {
        return Err(RuleError::NoPcaBindings);
    }
    Ok(support(rule, kg) as f64 / pca as f64)
}

/// All four statistics in one pass over the body bindings.
pub fn rule_stats(rule: &HornRule, kg: &KnowledgeGraph) -> Result<RuleStats, RuleError> {
    let heads = kg.relation_count(rule.head_relation());
    if heads == 0 {
        return Err(RuleError::EmptyHeadRelation(kg.vocab().relation_name(rule.head_relation()).to_owned()));
    }
    let supp = support(rule, kg);
    let (body, pca) = body_pair_counts(rule, kg);
    if body == 0 {
        return Err(RuleError::NoBodyBindings);
    }
    if pca == 0 {
        return Err(RuleError::NoPcaBindings);
    }
    Ok(RuleStats {
        support: supp,
        head_coverage: supp as f64 / heads as f64,
        std_confidence: supp as f64 / body as f64,
        pca_confidence: supp as f64 / pca as f64,
    })
}
