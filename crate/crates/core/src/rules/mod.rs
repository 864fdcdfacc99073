//! Closed Horn rules over binary relations and their AMIE-style statistics.
//!
//! A rule `B1 ∧ … ∧ Bn ⇒ R(x,y)` is stored in canonical form: the head is
//! always `R(x,y)`, auxiliary variables are `z1, z2, …` numbered by first
//! appearance, and body atoms are ordered so that two rules equal up to
//! variable renaming and body reordering compare equal.

mod io;
mod matcher;
mod mine;
mod select;
mod stats;

pub use io::{parse_rule, parse_rule_file, write_rule_file};
pub use matcher::for_each_body_binding;
pub use mine::{mine, MineConfig, MinedRule, MinedRuleSet};
pub use select::{select_top, Criterion};
pub use stats::{head_coverage, pca_confidence, rule_stats, std_confidence, support, RuleStats};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kg::{RelationId, Vocabulary};

#[derive(Debug, Error, PartialEq)]
pub enum RuleError {
    #[error("malformed rule `{text}`: {reason}")]
    Malformed { text: String, reason: String },
    #[error("rule file line {line}: {source}")]
    Line { line: usize, source: Box<RuleError> },
    #[error("unknown relation `{0}` in rule")]
    UnknownRelation(String),
    #[error("head relation `{0}` has no triples; head coverage undefined")]
    EmptyHeadRelation(String),
    #[error("rule body has no satisfying bindings; confidence undefined")]
    NoBodyBindings,
    #[error("rule has no PCA-eligible body bindings; PCA confidence undefined")]
    NoPcaBindings,
    #[error("invalid mining configuration: {0}")]
    InvalidConfig(String),
}

/// Variable index: 0 is `x`, 1 is `y`, `k >= 2` is `z{k-1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Var(pub u8);

impl Var {
    pub const X: Var = Var(0);
    pub const Y: Var = Var(1);

    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            0 => f.write_str("x"),
            1 => f.write_str("y"),
            k => write!(f, "z{}", k - 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RuleAtom {
    pub relation: RelationId,
    pub subject: Var,
    pub object: Var,
}

impl RuleAtom {
    pub fn new(relation: RelationId, subject: Var, object: Var) -> Self {
        RuleAtom { relation, subject, object }
    }

    fn display(&self, vocab: &Vocabulary) -> String {
        format!("{}({},{})", vocab.relation_name(self.relation), self.subject, self.object)
    }
}

/// Largest body accepted from rule files; mining itself stops at two atoms.
pub const MAX_BODY_ATOMS: usize = 4;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HornRule {
    body: Vec<RuleAtom>,
    head: RuleAtom,
    num_vars: usize,
}

impl HornRule {
    /// Validate and canonicalize a rule with head `R(x,y)`. The rule must be
    /// closed (every variable in at least two atom positions) and connected.
    /// Body atoms equal to the head are rejected.
    pub fn new(body: Vec<RuleAtom>, head_relation: RelationId) -> Result<Self, RuleError> {
        Self::with_head(body, RuleAtom::new(head_relation, Var::X, Var::Y))
    }

    /// Like [`HornRule::new`] but also accepts a reflexive head `R(x,x)`,
    /// which is how unary predicates are encoded. Such rules leave `y` unused.
    pub fn with_head(body: Vec<RuleAtom>, head: RuleAtom) -> Result<Self, RuleError> {
        let malformed = |reason: &str| RuleError::Malformed { text: format!("{body:?} => {head:?}"), reason: reason.into() };
        if head.subject != Var::X || (head.object != Var::Y && head.object != Var::X) {
            return Err(malformed("head must be R(x,y) or R(x,x)"));
        }
        let reflexive = head.object == Var::X;
        if body.is_empty() || body.len() > MAX_BODY_ATOMS {
            return Err(malformed("body must have 1..=4 atoms"));
        }
        if body.contains(&head) {
            return Err(malformed("body repeats the head atom"));
        }
        let max_var = body.iter().flat_map(|a| [a.subject.0, a.object.0]).max().unwrap_or(1).max(1);
        let n_vars = max_var as usize + 1;
        let mut occurrences = vec![0usize; n_vars];
        occurrences[head.subject.index()] += 1;
        occurrences[head.object.index()] += 1;
        for a in &body {
            occurrences[a.subject.index()] += 1;
            occurrences[a.object.index()] += 1;
        }
        if reflexive {
            if occurrences[1] != 0 {
                return Err(malformed("reflexive-head rules must not use y"));
            }
            // y is intentionally absent; keep the gap check below honest
            occurrences[1] = 2;
        }
        if occurrences.contains(&1) {
            return Err(malformed("rule is not closed"));
        }
        if occurrences.contains(&0) {
            return Err(malformed("variable numbering has gaps"));
        }
        // connectivity over atoms (head included) via shared variables
        let mut atoms: Vec<RuleAtom> = body.clone();
        atoms.push(head);
        let mut reached = vec![false; atoms.len()];
        let mut vars_seen = vec![false; n_vars];
        let mut stack = vec![atoms.len() - 1];
        reached[atoms.len() - 1] = true;
        while let Some(i) = stack.pop() {
            for v in [atoms[i].subject, atoms[i].object] {
                vars_seen[v.index()] = true;
            }
            for (j, a) in atoms.iter().enumerate() {
                if !reached[j] && (vars_seen[a.subject.index()] || vars_seen[a.object.index()]) {
                    reached[j] = true;
                    stack.push(j);
                }
            }
        }
        if reached.iter().any(|r| !r) {
            return Err(malformed("rule is not connected"));
        }
        let body = canonical_body(&body);
        let mut dedup = body.clone();
        dedup.dedup();
        if dedup.len() != body.len() {
            return Err(malformed("body repeats an atom"));
        }
        Ok(HornRule { body, head, num_vars: n_vars })
    }

    pub fn is_reflexive(&self) -> bool {
        self.head.object == Var::X
    }

    /// Variables that occur in the rule, ascending.
    pub fn used_vars(&self) -> Vec<Var> {
        (0..self.num_vars as u8).map(Var).filter(|v| !(self.is_reflexive() && *v == Var::Y)).collect()
    }

    pub fn body(&self) -> &[RuleAtom] {
        &self.body
    }

    pub fn head(&self) -> RuleAtom {
        self.head
    }

    pub fn head_relation(&self) -> RelationId {
        self.head.relation
    }

    pub fn num_vars(&self) -> usize {
        self.num_vars
    }

    /// Body atoms followed by the head: the position order of groundings.
    pub fn atoms(&self) -> impl Iterator<Item = RuleAtom> + '_ {
        self.body.iter().copied().chain(std::iter::once(self.head))
    }

    pub fn arity(&self) -> usize {
        self.body.len() + 1
    }

    /// Canonical text, e.g. `An(y,x) & Iw(y,x) => An(x,y)`.
    pub fn display(&self, vocab: &Vocabulary) -> String {
        let body: Vec<String> = self.body.iter().map(|a| a.display(vocab)).collect();
        format!("{} => {}", body.join(" & "), self.head.display(vocab))
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(n), &mut vec![false; n], &mut out);
    out
}

/// Smallest body, in (relation, subject, object) order, over all body
/// permutations with auxiliary variables renumbered by first appearance.
fn canonical_body(body: &[RuleAtom]) -> Vec<RuleAtom> {
    let mut best: Option<Vec<RuleAtom>> = None;
    for perm in permutations(body.len()) {
        let mut rename: Vec<Option<u8>> = vec![None; 256];
        rename[0] = Some(0);
        rename[1] = Some(1);
        let mut next = 2u8;
        let mut map = |v: Var| -> Var {
            let slot = &mut rename[v.index()];
            Var(*slot.get_or_insert_with(|| {
                next += 1;
                next - 1
            }))
        };
        let mut cand: Vec<RuleAtom> = perm
            .iter()
            .map(|&i| {
                let a = body[i];
                let s = map(a.subject);
                let o = map(a.object);
                RuleAtom::new(a.relation, s, o)
            })
            .collect();
        cand.sort();
        if best.as_ref().is_none_or(|b| cand < *b) {
            best = Some(cand);
        }
    }
    best.unwrap_or_default()
}
