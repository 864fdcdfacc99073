use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Arc;

use super::{Domain, KgError, KnowledgeGraph, Result, Triple, Vocabulary};

/// Layout of a triple file. The default is `head<TAB>relation<TAB>tail`
/// with `#` comment lines.
#[derive(Debug, Clone)]
pub struct TripleFormat {
    pub separator: char,
    pub comment_prefix: char,
}

impl Default for TripleFormat {
    fn default() -> Self {
        TripleFormat { separator: '\t', comment_prefix: '#' }
    }
}

#[derive(Debug)]
pub struct Ingested {
    pub graph: KnowledgeGraph,
    pub duplicates: usize,
}

pub(crate) fn parse_triple_lines<R: BufRead>(
    source: R,
    format: &TripleFormat,
) -> Result<Vec<(usize, [String; 3])>> {
    let mut rows = Vec::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let lineno = i + 1;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.starts_with(format.comment_prefix) {
            continue;
        }
        let fields: Vec<&str> = trimmed.split(format.separator).collect();
        if fields.len() != 3 {
            return Err(KgError::Parse {
                line: lineno,
                message: format!("expected 3 fields, found {}", fields.len()),
            });
        }
        if let Some(pos) = fields.iter().position(|f| f.trim().is_empty()) {
            return Err(KgError::Parse { line: lineno, message: format!("field {} is empty", pos + 1) });
        }
        rows.push((lineno, [fields[0].trim().to_owned(), fields[1].trim().to_owned(), fields[2].trim().to_owned()]));
    }
    Ok(rows)
}

pub(crate) fn parse_domains<R: BufRead>(source: R) -> Result<HashMap<String, Domain>> {
    let mut map = HashMap::new();
    for (i, line) in source.lines().enumerate() {
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let mut parts = trimmed.split('\t');
        let (Some(name), Some(tag), None) = (parts.next(), parts.next(), parts.next()) else {
            return Err(KgError::DomainParse { line: i + 1, message: "expected `entity<TAB>domain`".into() });
        };
        let domain = tag
            .parse::<Domain>()
            .map_err(|message| KgError::DomainParse { line: i + 1, message })?;
        map.insert(name.trim().to_owned(), domain);
    }
    Ok(map)
}

pub(crate) fn apply_domains(vocab: &mut Vocabulary, domains: &HashMap<String, Domain>) -> Result<()> {
    let ids: Vec<_> = vocab.entities().iter().map(|e| (e.id, e.name.clone())).collect();
    for (id, name) in ids {
        match domains.get(&name) {
            Some(&d) => vocab.set_domain(id, d),
            None => return Err(KgError::MissingDomain(name)),
        }
    }
    Ok(())
}

/// Parse a triple stream (and optional domain sidecar) into an indexed graph.
pub fn ingest<R: BufRead, D: BufRead>(
    source: R,
    domains: Option<D>,
    format: &TripleFormat,
) -> Result<Ingested> {
    let rows = parse_triple_lines(source, format)?;
    if rows.is_empty() {
        return Err(KgError::EmptyDataset);
    }
    let mut vocab = Vocabulary::new();
    let triples: Vec<Triple> = rows
        .iter()
        .map(|(_, [h, r, t])| {
            let h = vocab.intern_entity(h);
            let r = vocab.intern_relation(r);
            let t = vocab.intern_entity(t);
            Triple::new(h, r, t)
        })
        .collect();
    if let Some(d) = domains {
        apply_domains(&mut vocab, &parse_domains(d)?)?;
    }
    let (graph, duplicates) = KnowledgeGraph::from_triples(Arc::new(vocab), triples);
    if duplicates > 0 {
        log::warn!("dropped {duplicates} duplicate triples during ingestion");
    }
    Ok(Ingested { graph, duplicates })
}

pub fn ingest_files(triples: &Path, domains: Option<&Path>) -> Result<Ingested> {
    let src = BufReader::new(File::open(triples)?);
    let dom = domains.map(File::open).transpose()?.map(BufReader::new);
    ingest(src, dom, &TripleFormat::default())
}

/// Write triples as `head<TAB>relation<TAB>tail` using vocabulary names.
pub fn write_triples<W: Write>(vocab: &Vocabulary, triples: &[Triple], mut out: W) -> std::io::Result<()> {
    for t in triples {
        writeln!(
            out,
            "{}\t{}\t{}",
            vocab.entity_name(t.head),
            vocab.relation_name(t.relation),
            vocab.entity_name(t.tail)
        )?;
    }
    Ok(())
}
