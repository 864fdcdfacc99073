//! Factor graph persistence.
//!
//! Text layout, one record per line:
//!
//! ```text
//! # r2n-factor-graph v1
//! rules <n>
//! <canonical rule text>            (n lines)
//! atoms <m>
//! <head>\t<relation>\t<tail>\t<T|U> (m lines, id = line order)
//! factors <k>
//! <rule index>\t<atom id> <atom id> ...
//! ```
//!
//! Binary layout, all integers little-endian `u32` unless noted:
//! magic `R2NFGRPH`, version, entity count, relation count, rule count, then
//! each rule as byte length + UTF-8 text, atom count, then per atom head,
//! relation, tail and a `u8` label (1 = known true), factor count, then per
//! factor rule index, atom count and atom ids.

use std::io::{Read, Write};

use super::{AtomId, AtomLabel, FactorGraph, GroundAtom, GroundError};
use crate::kg::{EntityId, RelationId, Triple, Vocabulary};
use crate::rules::parse_rule;

const TEXT_HEADER: &str = "# r2n-factor-graph v1";
const MAGIC: &[u8; 8] = b"R2NFGRPH";
const VERSION: u32 = 1;

fn fmt_err(msg: impl Into<String>) -> GroundError {
    GroundError::Format(msg.into())
}

pub fn write_text<W: Write>(graph: &FactorGraph, vocab: &Vocabulary, mut out: W) -> Result<(), GroundError> {
    writeln!(out, "{TEXT_HEADER}")?;
    writeln!(out, "rules {}", graph.rules.len())?;
    for r in &graph.rules {
        writeln!(out, "{}", r.display(vocab))?;
    }
    writeln!(out, "atoms {}", graph.atoms.len())?;
    for a in &graph.atoms {
        let label = if a.label == AtomLabel::KnownTrue { 'T' } else { 'U' };
        writeln!(
            out,
            "{}\t{}\t{}\t{}",
            vocab.entity_name(a.triple.head),
            vocab.relation_name(a.triple.relation),
            vocab.entity_name(a.triple.tail),
            label
        )?;
    }
    writeln!(out, "factors {}", graph.factors.len())?;
    for f in &graph.factors {
        let ids: Vec<String> = f.atoms.iter().map(|a| a.0.to_string()).collect();
        writeln!(out, "{}\t{}", f.rule, ids.join(" "))?;
    }
    Ok(())
}

pub fn read_text<R: Read>(mut input: R, vocab: &Vocabulary) -> Result<FactorGraph, GroundError> {
    let mut content = String::new();
    input.read_to_string(&mut content)?;
    let mut lines = content.lines().enumerate();
    let mut next = |what: &str| -> Result<(usize, &str), GroundError> {
        lines.next().map(|(i, l)| (i + 1, l)).ok_or_else(|| fmt_err(format!("unexpected end of file, expected {what}")))
    };
    let (_, header) = next("header")?;
    if header.trim() != TEXT_HEADER {
        return Err(fmt_err(format!("bad header `{header}`")));
    }
    let count = |(line, text): (usize, &str), key: &str| -> Result<usize, GroundError> {
        text.strip_prefix(key)
            .and_then(|rest| rest.trim().parse().ok())
            .ok_or_else(|| fmt_err(format!("line {line}: expected `{key} <count>`")))
    };
    let n_rules = count(next("rule count")?, "rules")?;
    let mut rules = Vec::with_capacity(n_rules);
    for _ in 0..n_rules {
        let (line, text) = next("rule")?;
        rules.push(parse_rule(text, vocab).map_err(|e| fmt_err(format!("line {line}: {e}")))?);
    }
    let n_atoms = count(next("atom count")?, "atoms")?;
    let mut atoms = Vec::with_capacity(n_atoms);
    for i in 0..n_atoms {
        let (line, text) = next("atom")?;
        let cols: Vec<&str> = text.split('\t').collect();
        if cols.len() != 4 {
            return Err(fmt_err(format!("line {line}: expected 4 columns")));
        }
        let ent = |n: &str| vocab.entity_id(n).ok_or_else(|| fmt_err(format!("line {line}: unknown entity `{n}`")));
        let rel = vocab.relation_id(cols[1]).ok_or_else(|| fmt_err(format!("line {line}: unknown relation `{}`", cols[1])))?;
        let label = match cols[3] {
            "T" => AtomLabel::KnownTrue,
            "U" => AtomLabel::Unknown,
            other => return Err(fmt_err(format!("line {line}: bad label `{other}`"))),
        };
        atoms.push(GroundAtom { id: AtomId(i as u32), triple: Triple::new(ent(cols[0])?, rel, ent(cols[2])?), label });
    }
    let mut graph = FactorGraph::new(rules, atoms);
    let n_factors = count(next("factor count")?, "factors")?;
    for _ in 0..n_factors {
        let (line, text) = next("factor")?;
        let (rule, ids) = text.split_once('\t').ok_or_else(|| fmt_err(format!("line {line}: expected `rule<TAB>atoms`")))?;
        let rule: u32 = rule.parse().map_err(|_| fmt_err(format!("line {line}: bad rule index")))?;
        let ids: Vec<AtomId> = ids
            .split_whitespace()
            .map(|s| s.parse().map(AtomId).map_err(|_| fmt_err(format!("line {line}: bad atom id `{s}`"))))
            .collect::<Result<_, _>>()?;
        graph.push_factor(rule, ids)?;
    }
    Ok(graph)
}

fn put(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn write_binary<W: Write>(graph: &FactorGraph, vocab: &Vocabulary, mut out: W) -> Result<(), GroundError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put(&mut buf, VERSION);
    put(&mut buf, vocab.num_entities() as u32);
    put(&mut buf, vocab.num_relations() as u32);
    put(&mut buf, graph.rules.len() as u32);
    for r in &graph.rules {
        let text = r.display(vocab);
        put(&mut buf, text.len() as u32);
        buf.extend_from_slice(text.as_bytes());
    }
    put(&mut buf, graph.atoms.len() as u32);
    for a in &graph.atoms {
        put(&mut buf, a.triple.head.0);
        put(&mut buf, a.triple.relation.0);
        put(&mut buf, a.triple.tail.0);
        buf.push((a.label == AtomLabel::KnownTrue) as u8);
    }
    put(&mut buf, graph.factors.len() as u32);
    for f in &graph.factors {
        put(&mut buf, f.rule);
        put(&mut buf, f.atoms.len() as u32);
        for a in &f.atoms {
            put(&mut buf, a.0);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], GroundError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| fmt_err("truncated binary factor graph"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, GroundError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn read_binary<R: Read>(mut input: R, vocab: &Vocabulary) -> Result<FactorGraph, GroundError> {
    let mut bytes = Vec::new();
    input.read_to_end(&mut bytes)?;
    let mut c = Cursor { bytes: &bytes, pos: 0 };
    if c.take(8)? != MAGIC {
        return Err(fmt_err("not a binary factor graph (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(fmt_err(format!("unsupported factor graph version {version}")));
    }
    let (ne, nr) = (c.u32()? as usize, c.u32()? as usize);
    if ne != vocab.num_entities() || nr != vocab.num_relations() {
        return Err(fmt_err(format!(
            "vocabulary mismatch: file has {ne} entities / {nr} relations, dataset has {} / {}",
            vocab.num_entities(),
            vocab.num_relations()
        )));
    }
    let n_rules = c.u32()?;
    let mut rules = Vec::new();
    for _ in 0..n_rules {
        let len = c.u32()? as usize;
        let text = std::str::from_utf8(c.take(len)?).map_err(|_| fmt_err("rule text is not UTF-8"))?;
        rules.push(parse_rule(text, vocab)?);
    }
    let n_atoms = c.u32()?;
    let mut atoms = Vec::new();
    for i in 0..n_atoms {
        let (h, r, t) = (c.u32()?, c.u32()?, c.u32()?);
        if h as usize >= ne || t as usize >= ne || r as usize >= nr {
            return Err(fmt_err(format!("atom {i} references ids outside the vocabulary")));
        }
        let label = match c.take(1)?[0] {
            1 => AtomLabel::KnownTrue,
            0 => AtomLabel::Unknown,
            other => return Err(fmt_err(format!("atom {i} has bad label byte {other}"))),
        };
        atoms.push(GroundAtom { id: AtomId(i), triple: Triple::new(EntityId(h), RelationId(r), EntityId(t)), label });
    }
    let mut graph = FactorGraph::new(rules, atoms);
    let n_factors = c.u32()?;
    for _ in 0..n_factors {
        let rule = c.u32()?;
        let n = c.u32()?;
        let ids = (0..n).map(|_| c.u32().map(AtomId)).collect::<Result<Vec<_>, _>>()?;
        graph.push_factor(rule, ids)?;
    }
    if c.pos != bytes.len() {
        return Err(fmt_err("trailing bytes after factor records"));
    }
    Ok(graph)
}
