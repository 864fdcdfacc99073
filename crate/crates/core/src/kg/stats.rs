//! Relation frequencies and reflexive/symmetric/transitive statistics.
//!
//! Percentages are computed on whatever graph is passed in:
//! - symmetric: share of `R(x,y)` facts whose inverse `R(y,x)` also holds;
//! - transitive: share of premise instances `R(x,y) ∧ R(y,z)` whose
//!   conclusion `R(x,z)` holds;
//! - reflexive: share of the relation's active entities `x` with `R(x,x)`.
//!
//! A property is reported as not applicable (`None`) when the relation's
//! head and tail domains are disjoint, or when it has no premise instances.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use super::{Domain, EntityId, KgError, KnowledgeGraph, RelationId, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Grouping {
    Overall,
    ByDomainSignature,
}

/// Sets of head and tail domains observed for a relation, as bitmasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct DomainSignature {
    pub heads: u8,
    pub tails: u8,
}

fn domain_bit(d: Domain) -> u8 {
    match d {
        Domain::Gene => 1,
        Domain::Chemical => 2,
        Domain::Disease => 4,
    }
}

fn mask_label(mask: u8) -> String {
    let parts: Vec<String> = Domain::ALL
        .iter()
        .filter(|d| mask & domain_bit(**d) != 0)
        .map(|d| d.symbol().to_string())
        .collect();
    if parts.len() == 1 {
        parts[0].clone()
    } else {
        format!("({})", parts.join("+"))
    }
}

impl DomainSignature {
    pub fn label(&self) -> String {
        format!("{}x{}", mask_label(self.heads), mask_label(self.tails))
    }

    pub fn admits_same_type_pairs(&self) -> bool {
        self.heads & self.tails != 0
    }
}

/// `None` when the graph carries no domain tags.
pub fn domain_signature(kg: &KnowledgeGraph, r: RelationId) -> Option<DomainSignature> {
    if !kg.vocab().has_domains() {
        return None;
    }
    let v = kg.vocab();
    let mut sig = DomainSignature { heads: 0, tails: 0 };
    for t in kg.triples_of(r) {
        sig.heads |= domain_bit(v.entity_domain(t.head)?);
        sig.tails |= domain_bit(v.entity_domain(t.tail)?);
    }
    Some(sig)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Frequency {
    pub relation: RelationId,
    pub block: String,
    pub percent: f64,
}

/// Relative frequency of every relation with at least one triple, in
/// relation-id order. With by-signature grouping, each relation is divided
/// by the triples of all relations sharing its domain signature; graphs
/// without domain tags fall back to a single `ALL` block.
pub fn relation_frequency(kg: &KnowledgeGraph, grouping: Grouping) -> Result<Vec<Frequency>> {
    if kg.is_empty() {
        return Err(KgError::EmptyDataset);
    }
    let rels: Vec<RelationId> = (0..kg.num_relations() as u32)
        .map(RelationId)
        .filter(|r| kg.relation_count(*r) > 0)
        .collect();
    let total = kg.len() as f64;
    let use_domains = grouping == Grouping::ByDomainSignature && kg.vocab().has_domains();
    if !use_domains {
        return Ok(rels
            .iter()
            .map(|&r| Frequency {
                relation: r,
                block: "ALL".into(),
                percent: 100.0 * kg.relation_count(r) as f64 / total,
            })
            .collect());
    }
    let sigs: Vec<DomainSignature> = rels.iter().map(|&r| domain_signature(kg, r).unwrap()).collect();
    let mut block_totals: BTreeMap<DomainSignature, usize> = BTreeMap::new();
    for (r, s) in rels.iter().zip(&sigs) {
        *block_totals.entry(*s).or_default() += kg.relation_count(*r);
    }
    Ok(rels
        .iter()
        .zip(&sigs)
        .map(|(&r, s)| Frequency {
            relation: r,
            block: s.label(),
            percent: 100.0 * kg.relation_count(r) as f64 / block_totals[s] as f64,
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropertyStats {
    pub reflexive: Option<f64>,
    pub symmetric: Option<f64>,
    pub transitive: Option<f64>,
}

fn sorted_intersection_len(a: &[EntityId], b: &[EntityId]) -> usize {
    let (mut i, mut j, mut n) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                n += 1;
                i += 1;
                j += 1;
            }
        }
    }
    n
}

pub fn property_stats(kg: &KnowledgeGraph, r: RelationId) -> Result<PropertyStats> {
    if r.index() >= kg.num_relations() {
        return Err(KgError::UnknownRelation(r.0));
    }
    let count = kg.relation_count(r);
    if count == 0 {
        return Err(KgError::EmptyRelation(kg.vocab().relation_name(r).to_owned()));
    }
    if let Some(sig) = domain_signature(kg, r) {
        if !sig.admits_same_type_pairs() {
            return Ok(PropertyStats { reflexive: None, symmetric: None, transitive: None });
        }
    }
    let mut active: HashSet<EntityId> = HashSet::new();
    let mut loops = 0usize;
    let mut symmetric = 0usize;
    let mut premises = 0u64;
    let mut satisfied = 0u64;
    for t in kg.triples_of(r) {
        active.insert(t.head);
        active.insert(t.tail);
        if t.head == t.tail {
            loops += 1;
        }
        if kg.has(t.tail, r, t.head) {
            symmetric += 1;
        }
        let next = kg.tails(t.tail, r);
        premises += next.len() as u64;
        satisfied += sorted_intersection_len(kg.tails(t.head, r), next) as u64;
    }
    Ok(PropertyStats {
        reflexive: Some(100.0 * loops as f64 / active.len() as f64),
        symmetric: Some(100.0 * symmetric as f64 / count as f64),
        transitive: (premises > 0).then(|| 100.0 * satisfied as f64 / premises as f64),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelationRow {
    pub relation: String,
    pub block: String,
    pub count: usize,
    pub freq_overall: f64,
    pub freq_in_block: f64,
    pub properties: PropertyStats,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub rows: Vec<RelationRow>,
}

impl StatsReport {
    pub fn row(&self, relation: &str) -> Option<&RelationRow> {
        self.rows.iter().find(|r| r.relation == relation)
    }

    pub fn to_csv(&self) -> String {
        fn cell(v: Option<f64>) -> String {
            v.map_or_else(|| "NA".to_owned(), |x| format!("{x:.4}"))
        }
        let mut s = String::from("relation,domain_block,freq_overall,freq_in_block,reflexive,symmetric,transitive\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{:.4},{:.4},{},{},{}",
                r.relation,
                r.block,
                r.freq_overall,
                r.freq_in_block,
                cell(r.properties.reflexive),
                cell(r.properties.symmetric),
                cell(r.properties.transitive),
            );
        }
        s
    }
}

/// Full per-relation report. Relations are processed in parallel and
/// emitted in relation-id order.
pub fn stats_report(kg: &KnowledgeGraph) -> Result<StatsReport> {
    let overall = relation_frequency(kg, Grouping::Overall)?;
    let by_block = relation_frequency(kg, Grouping::ByDomainSignature)?;
    let props: Vec<Result<PropertyStats>> =
        overall.par_iter().map(|f| property_stats(kg, f.relation)).collect();
    let mut rows = Vec::with_capacity(overall.len());
    for ((o, b), p) in overall.iter().zip(&by_block).zip(props) {
        rows.push(RelationRow {
            relation: kg.vocab().relation_name(o.relation).to_owned(),
            block: b.block.clone(),
            count: kg.relation_count(o.relation),
            freq_overall: o.percent,
            freq_in_block: b.percent,
            properties: p?,
        });
    }
    Ok(StatsReport { rows })
}
