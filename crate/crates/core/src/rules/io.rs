//! Rule text and rule files.
//!
//! Native lines are `A(x,z1) & B(z1,y) => C(x,y)` optionally followed by
//! tab-separated `support`, `head_coverage`, `std_confidence` and
//! `pca_confidence`. Files produced by [`write_rule_file`] start with a
//! version comment and are parsed strictly. Files without it are treated as
//! external miner output: lines without `=>` are skipped, and AMIE-style
//! lines (`?a R ?b  => ?a S ?b` followed by head coverage, std confidence,
//! PCA confidence and positive examples) are accepted as well.

use std::collections::HashMap;
use std::fmt::Write as _;

use super::{HornRule, MinedRule, RuleAtom, RuleError, RuleStats, Var};
use crate::kg::Vocabulary;

pub const RULE_FILE_HEADER: &str = "# r2n-rules v1";

fn malformed(text: &str, reason: impl Into<String>) -> RuleError {
    RuleError::Malformed { text: text.to_owned(), reason: reason.into() }
}

fn relation(vocab: &Vocabulary, name: &str) -> Result<crate::kg::RelationId, RuleError> {
    let name = name.trim().trim_start_matches('<').trim_end_matches('>');
    vocab.relation_id(name).ok_or_else(|| RuleError::UnknownRelation(name.to_owned()))
}

/// Builds a rule from `(relation, subject, object)` triples of names, with
/// the head's subject and object becoming `x` and `y`.
fn assemble(text: &str, body: &[(&str, &str, &str)], head: (&str, &str, &str), vocab: &Vocabulary) -> Result<HornRule, RuleError> {
    let (hr, hs, ho) = head;
    let reflexive = hs == ho;
    let mut vars: HashMap<String, u8> = HashMap::from([(hs.to_owned(), 0)]);
    if !reflexive {
        vars.insert(ho.to_owned(), 1);
    }
    let mut atoms = Vec::with_capacity(body.len());
    for &(r, s, o) in body {
        let mut var = |name: &str| -> Result<Var, RuleError> {
            // a reflexive head binds one name, but y's slot stays reserved
            let next = vars.len() + reflexive as usize;
            if next > u8::MAX as usize {
                return Err(malformed(text, "too many variables"));
            }
            Ok(Var(*vars.entry(name.to_owned()).or_insert(next as u8)))
        };
        let sv = var(s)?;
        let ov = var(o)?;
        atoms.push(RuleAtom::new(relation(vocab, r)?, sv, ov));
    }
    let head = RuleAtom::new(relation(vocab, hr)?, Var::X, if reflexive { Var::X } else { Var::Y });
    HornRule::with_head(atoms, head).map_err(|e| match e {
        RuleError::Malformed { reason, .. } => malformed(text, reason),
        other => other,
    })
}

fn parse_native_atom(text: &str, atom: &str) -> Result<(String, String, String), RuleError> {
    let atom = atom.trim();
    let open = atom.find('(').ok_or_else(|| malformed(text, format!("atom `{atom}` lacks `(`")))?;
    if !atom.ends_with(')') {
        return Err(malformed(text, format!("atom `{atom}` lacks `)`")));
    }
    let args: Vec<&str> = atom[open + 1..atom.len() - 1].split(',').map(str::trim).collect();
    if args.len() != 2 || args.iter().any(|a| a.is_empty()) {
        return Err(malformed(text, format!("atom `{atom}` must have two arguments")));
    }
    let rel = atom[..open].trim();
    if rel.is_empty() {
        return Err(malformed(text, format!("atom `{atom}` has no relation")));
    }
    Ok((rel.to_owned(), args[0].to_owned(), args[1].to_owned()))
}

/// Parse rule text in the native syntax.
pub fn parse_rule(text: &str, vocab: &Vocabulary) -> Result<HornRule, RuleError> {
    let (body, head) = text.split_once("=>").ok_or_else(|| malformed(text, "missing `=>`"))?;
    if head.contains("=>") {
        return Err(malformed(text, "more than one `=>`"));
    }
    let head = parse_native_atom(text, head)?;
    let body: Vec<(String, String, String)> =
        body.split(['&', '∧']).map(|a| parse_native_atom(text, a)).collect::<Result<_, _>>()?;
    let body_refs: Vec<(&str, &str, &str)> = body.iter().map(|(r, s, o)| (r.as_str(), s.as_str(), o.as_str())).collect();
    assemble(text, &body_refs, (&head.0, &head.1, &head.2), vocab)
}

fn parse_amie_rule(text: &str, vocab: &Vocabulary) -> Result<HornRule, RuleError> {
    let (body, head) = text.split_once("=>").ok_or_else(|| malformed(text, "missing `=>`"))?;
    let triples = |part: &str| -> Result<Vec<(String, String, String)>, RuleError> {
        let toks: Vec<&str> = part.split_whitespace().collect();
        if toks.is_empty() || !toks.len().is_multiple_of(3) {
            return Err(malformed(text, "atoms must be `?s relation ?o` triples"));
        }
        Ok(toks.chunks(3).map(|c| (c[1].to_owned(), c[0].to_owned(), c[2].to_owned())).collect())
    };
    let body = triples(body)?;
    let head = triples(head)?;
    if head.len() != 1 {
        return Err(malformed(text, "head must be a single atom"));
    }
    let body_refs: Vec<(&str, &str, &str)> = body.iter().map(|(r, s, o)| (r.as_str(), s.as_str(), o.as_str())).collect();
    let h = &head[0];
    assemble(text, &body_refs, (&h.0, &h.1, &h.2), vocab)
}

fn parse_f64(text: &str, field: &str) -> Result<f64, RuleError> {
    field.trim().parse().map_err(|_| malformed(text, format!("`{field}` is not a number")))
}

fn parse_line(line: &str, vocab: &Vocabulary) -> Result<MinedRule, RuleError> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols[0].trim_start().starts_with('?') {
        let rule = parse_amie_rule(cols[0], vocab)?;
        if cols.len() < 5 {
            return Err(malformed(line, "expected head coverage, std confidence, PCA confidence and positive examples"));
        }
        let support = parse_f64(line, cols[4])?;
        let stats = RuleStats {
            support: support as u64,
            head_coverage: parse_f64(line, cols[1])?,
            std_confidence: parse_f64(line, cols[2])?,
            pca_confidence: parse_f64(line, cols[3])?,
        };
        return Ok(MinedRule { rule, stats });
    }
    let rule = parse_rule(cols[0], vocab)?;
    let stats = match cols.len() {
        1 => RuleStats { support: 0, head_coverage: 0.0, std_confidence: 0.0, pca_confidence: 0.0 },
        5 => RuleStats {
            support: cols[1].trim().parse().map_err(|_| malformed(line, "support is not an integer"))?,
            head_coverage: parse_f64(line, cols[2])?,
            std_confidence: parse_f64(line, cols[3])?,
            pca_confidence: parse_f64(line, cols[4])?,
        },
        n => return Err(malformed(line, format!("expected 1 or 5 tab-separated columns, found {n}"))),
    };
    Ok(MinedRule { rule, stats })
}

/// Parse a whole rule file. Errors carry the 1-based line number.
pub fn parse_rule_file(content: &str, vocab: &Vocabulary) -> Result<Vec<MinedRule>, RuleError> {
    let strict = content.lines().next().is_some_and(|l| l.trim() == RULE_FILE_HEADER);
    let mut out = Vec::new();
    for (i, line) in content.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if !strict && !trimmed.contains("=>") {
            continue;
        }
        out.push(parse_line(line.trim_end_matches('\r'), vocab).map_err(|e| RuleError::Line { line: i + 1, source: Box::new(e) })?);
    }
    Ok(out)
}

/// Serialize rules in the strict native format. Floats are written in
/// shortest round-trip form so reading the file back is lossless.
pub fn write_rule_file(rules: &[MinedRule], vocab: &Vocabulary) -> String {
    let mut out = String::new();
    out.push_str(RULE_FILE_HEADER);
    out.push('\n');
    out.push_str("# rule\tsupport\thead_coverage\tstd_confidence\tpca_confidence\n");
    for r in rules {
        let s = &r.stats;
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            r.rule.display(vocab),
            s.support,
            s.head_coverage,
            s.std_confidence,
            s.pca_confidence
        );
    }
    out
}
