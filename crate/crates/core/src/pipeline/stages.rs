use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::config::ExperimentConfig;
use super::experiment::{finetune_r2n, ground_training_graph, pretrain_kge, Pretrained};
use super::manifest::{RunManifest, StageRecord};
use super::PipelineError;
use crate::autodiff::Checkpoint;
use crate::eval::{evaluate, run_ablation, write_metrics_csv, EvalReport, KgeScorer, Metrics, R2nScorer, METRICS_CSV_HEADER};
use crate::fsutil::{sha256_file, write_atomic, DirLock};
use crate::ground::{read_binary, write_binary};
use crate::kg::stats::stats_report;
use crate::kg::{ingest_files, load_split, split, write_triples, KnowledgeGraph, Split, Triple, Vocabulary};
use crate::kge::KgeModel;
use crate::r2n::{rule_set_digest, R2nModel};
use crate::rules::{mine, parse_rule_file, select_top, write_rule_file, HornRule, MinedRuleSet};

pub const GRAPH: &str = "graph.tsv";
pub const DOMAINS: &str = "domains.tsv";
pub const STATS: &str = "stats.csv";
pub const TRAIN: &str = "train.tsv";
pub const VALID: &str = "valid.tsv";
pub const TEST: &str = "test.tsv";
pub const MINED: &str = "mined.rules";
pub const SELECTED: &str = "selected.rules";
pub const FACTOR_GRAPH: &str = "factor_graph.bin";
pub const KGE_CKPT: &str = "kge.ckpt";
pub const R2N_CKPT: &str = "r2n.ckpt";
pub const METRICS_CSV: &str = "metrics.csv";
pub const METRICS_JSON: &str = "metrics.json";
pub const PER_RELATION_CSV: &str = "per_relation.csv";
pub const ABLATION_CSV: &str = "ablation.csv";
pub const CONFIG_ECHO: &str = "config.txt";

enum Input {
    /// File in the experiment directory and the command that writes it.
    Artifact(&'static str, &'static str),
    /// User-supplied file and the config key naming it.
    External(PathBuf, &'static str),
}

const SPLIT_INPUTS: [(&str, &str); 3] = [(TRAIN, "split"), (VALID, "split"), (TEST, "split")];

struct StageOutput {
    files: Vec<(&'static str, Vec<u8>)>,
    summary: String,
    rule_digest: Option<String>,
}

impl StageOutput {
    fn new(files: Vec<(&'static str, Vec<u8>)>, summary: String) -> Self {
        StageOutput { files, summary, rule_digest: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageReport {
    pub stage: &'static str,
    pub skipped: bool,
    pub summary: String,
}

/// An experiment directory, locked for the lifetime of this value.
pub struct Experiment {
    dir: PathBuf,
    config: ExperimentConfig,
    force: bool,
    manifest: RunManifest,
    _lock: DirLock,
}

fn read(path: &Path) -> Result<Vec<u8>, PipelineError> {
    std::fs::read(path).map_err(|e| PipelineError::io(path, e))
}

fn triples_bytes(vocab: &Vocabulary, triples: &[Triple]) -> Vec<u8> {
    let mut buf = Vec::new();
    write_triples(vocab, triples, &mut buf).expect("writing to memory");
    buf
}

fn metrics_row(out: &mut String, criterion: &str, n_rules: usize, seed: u64, m: &Metrics) {
    let _ = writeln!(out, "{criterion},{n_rules},{seed},{},{},{},{},{}", m.mrr, m.hits1, m.hits3, m.hits10, m.n_queries);
}

impl Experiment {
    pub fn open(dir: &Path, config: ExperimentConfig, force: bool) -> Result<Self, PipelineError> {
        config.validate()?;
        let lock = DirLock::acquire(dir).map_err(|e| match e.kind() {
            std::io::ErrorKind::WouldBlock => PipelineError::Locked(dir.join(".lock")),
            _ => PipelineError::io(dir, e),
        })?;
        let manifest = RunManifest::load(dir)?;
        let exp = Experiment { dir: dir.to_path_buf(), config, force, manifest, _lock: lock };
        let echo = dir.join(CONFIG_ECHO);
        write_atomic(&echo, exp.config.to_text().as_bytes()).map_err(|e| PipelineError::io(echo, e))?;
        Ok(exp)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn manifest(&self) -> &RunManifest {
        &self.manifest
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn input_digests(&self, inputs: &[Input]) -> Result<BTreeMap<String, String>, PipelineError> {
        let mut out = BTreeMap::new();
        for input in inputs {
            match input {
                Input::Artifact(name, producer) => {
                    let path = self.path(name);
                    if !path.exists() {
                        return Err(PipelineError::MissingArtifact { what: name, path, producer });
                    }
                    let d = sha256_file(&path).map_err(|e| PipelineError::io(&path, e))?;
                    if let Some((_, rec)) = self.manifest.producer_of(name) {
                        if rec.outputs[*name] != d && !self.force {
                            return Err(PipelineError::StaleArtifact { path, expected: rec.outputs[*name].clone(), found: d, producer });
                        }
                    }
                    out.insert(name.to_string(), d);
                }
                Input::External(path, key) => {
                    if !path.exists() {
                        return Err(PipelineError::Config(format!("{key} = {} does not exist", path.display())));
                    }
                    let d = sha256_file(path).map_err(|e| PipelineError::io(path, e))?;
                    out.insert(path.display().to_string(), d);
                }
            }
        }
        Ok(out)
    }

    fn up_to_date(&self, rec: &StageRecord) -> bool {
        rec.outputs
            .iter()
            .all(|(name, d)| sha256_file(&self.path(name)).map(|found| &found == d).unwrap_or(false))
    }

    fn run_stage(
        &mut self,
        stage: &'static str,
        prefixes: &[&str],
        inputs: &[Input],
        body: impl FnOnce(&Self) -> Result<StageOutput, PipelineError>,
    ) -> Result<StageReport, PipelineError> {
        let inputs = self.input_digests(inputs)?;
        let config_digest = self.config.digest_of(prefixes);
        if let Some(rec) = self.manifest.stages.get(stage) {
            if !self.force && rec.config_digest == config_digest && rec.inputs == inputs && self.up_to_date(rec) {
                log::info!("{stage}: up to date");
                return Ok(StageReport { stage, skipped: true, summary: self.summary_of(stage) });
            }
        }
        let start = Instant::now();
        log::info!("{stage}: running");
        let out = body(self)?;
        let mut outputs = BTreeMap::new();
        for (name, bytes) in &out.files {
            let path = self.path(name);
            write_atomic(&path, bytes).map_err(|e| PipelineError::io(&path, e))?;
            outputs.insert(name.to_string(), crate::fsutil::sha256_bytes(bytes));
        }
        let summary_path = self.path(&format!(".{stage}.summary"));
        write_atomic(&summary_path, out.summary.as_bytes()).map_err(|e| PipelineError::io(&summary_path, e))?;
        if let Some(d) = out.rule_digest {
            self.manifest.rule_set_digest = Some(d);
        }
        let rec = StageRecord { config_digest, inputs, outputs, seconds: start.elapsed().as_secs_f64() };
        self.manifest.stages.insert(stage.to_string(), rec);
        self.manifest.config = self.config.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
        self.manifest.save(&self.dir)?;
        Ok(StageReport { stage, skipped: false, summary: out.summary })
    }

    fn summary_of(&self, stage: &str) -> String {
        std::fs::read_to_string(self.path(&format!(".{stage}.summary"))).unwrap_or_default()
    }

    fn split_inputs() -> Vec<Input> {
        SPLIT_INPUTS.iter().map(|(n, p)| Input::Artifact(n, p)).collect()
    }

    fn rules_input(&self) -> Input {
        match &self.config.rules_file {
            Some(p) => Input::External(p.clone(), "rules.file"),
            None => Input::Artifact(MINED, "mine"),
        }
    }

    /// Full graph over the split vocabulary, and the split itself.
    pub fn load_data(&self) -> Result<(KnowledgeGraph, Split), PipelineError> {
        Ok(load_split(&self.path(TRAIN), &self.path(VALID), &self.path(TEST), None)?)
    }

    fn load_rules(&self, path: &Path, vocab: &Vocabulary) -> Result<MinedRuleSet, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        Ok(MinedRuleSet::from_rules(parse_rule_file(&text, vocab)?))
    }

    fn load_kge(&self, vocab: &Vocabulary) -> Result<(KgeModel, crate::autodiff::ParamStore<f32>), PipelineError> {
        let ck = Checkpoint::from_bytes(&read(&self.path(KGE_CKPT))?)?;
        let (model, store, _) = KgeModel::from_checkpoint(&ck)?;
        let spec = model.spec();
        if spec.n_entities != vocab.num_entities() || spec.n_relations != vocab.num_relations() {
            return Err(PipelineError::StaleArtifact {
                path: self.path(KGE_CKPT),
                expected: format!("{} entities, {} relations", vocab.num_entities(), vocab.num_relations()),
                found: format!("{} entities, {} relations", spec.n_entities, spec.n_relations),
                producer: "pretrain",
            });
        }
        Ok((model, store))
    }

    fn load_factor_graph(&self, vocab: &Vocabulary) -> Result<crate::ground::FactorGraph, PipelineError> {
        let bytes = read(&self.path(FACTOR_GRAPH))?;
        Ok(read_binary(bytes.as_slice(), vocab)?)
    }

    pub fn ingest(&mut self) -> Result<StageReport, PipelineError> {
        let triples = self
            .config
            .data_triples
            .clone()
            .ok_or_else(|| PipelineError::Config("data.triples is not set (pass --triples or set it in the config)".into()))?;
        let domains = self.config.data_domains.clone();
        let mut inputs = vec![Input::External(triples.clone(), "data.triples")];
        if let Some(d) = &domains {
            inputs.push(Input::External(d.clone(), "data.domains"));
        }
        self.run_stage("ingest", &["data."], &inputs, |_| {
            let ing = ingest_files(&triples, domains.as_deref())?;
            let kg = &ing.graph;
            let mut files = vec![(GRAPH, triples_bytes(kg.vocab(), kg.triples()))];
            if kg.vocab().has_domains() {
                let mut s = String::new();
                for e in kg.vocab().entities() {
                    let _ = writeln!(s, "{}\t{}", e.name, kg.vocab().entity_domain(e.id).map_or('?', |d| d.symbol()));
                }
                files.push((DOMAINS, s.into_bytes()));
            }
            let summary = format!(
                "{} triples ({} duplicates dropped), {} entities, {} relations",
                kg.len(),
                ing.duplicates,
                kg.num_entities(),
                kg.num_relations()
            );
            Ok(StageOutput::new(files, summary))
        })
    }

    pub fn stats(&mut self) -> Result<StageReport, PipelineError> {
        let mut inputs = vec![Input::Artifact(GRAPH, "ingest")];
        let with_domains = self.manifest.stages.get("ingest").is_some_and(|r| r.outputs.contains_key(DOMAINS));
        if with_domains {
            inputs.push(Input::Artifact(DOMAINS, "ingest"));
        }
        self.run_stage("stats", &[], &inputs, |exp| {
            let domains = with_domains.then(|| exp.path(DOMAINS));
            let ing = ingest_files(&exp.path(GRAPH), domains.as_deref())?;
            let csv = stats_report(&ing.graph)?.to_csv();
            Ok(StageOutput::new(vec![(STATS, csv.clone().into_bytes())], csv))
        })
    }

    pub fn split(&mut self) -> Result<StageReport, PipelineError> {
        let files = self.config.split_files.clone();
        let inputs = match &files {
            Some([a, b, c]) => vec![
                Input::External(a.clone(), "split.train_file"),
                Input::External(b.clone(), "split.valid_file"),
                Input::External(c.clone(), "split.test_file"),
            ],
            None => vec![Input::Artifact(GRAPH, "ingest")],
        };
        self.run_stage("split", &["split."], &inputs, |exp| {
            let (kg, sp) = match &files {
                Some([a, b, c]) => load_split(a, b, c, None)?,
                None => {
                    let kg = ingest_files(&exp.path(GRAPH), None)?.graph;
                    let sp = split(&kg, exp.config.split, exp.config.sub_seed("split"))?;
                    (kg, sp)
                }
            };
            let v = kg.vocab();
            let summary = format!("train {} / valid {} / test {} triples", sp.train.len(), sp.valid.len(), sp.test.len());
            Ok(StageOutput::new(
                vec![(TRAIN, triples_bytes(v, &sp.train)), (VALID, triples_bytes(v, &sp.valid)), (TEST, triples_bytes(v, &sp.test))],
                summary,
            ))
        })
    }

    pub fn mine(&mut self) -> Result<StageReport, PipelineError> {
        self.run_stage("mine", &["mine."], &Self::split_inputs(), |exp| {
            let (kg, sp) = exp.load_data()?;
            let train = sp.train_graph(&kg);
            let set = mine(&train, &exp.config.mine)?;
            let summary = format!("{} rules mined from {} training triples", set.len(), train.len());
            Ok(StageOutput::new(vec![(MINED, write_rule_file(set.rules(), kg.vocab()).into_bytes())], summary))
        })
    }

    pub fn select(&mut self) -> Result<StageReport, PipelineError> {
        let mut inputs = Self::split_inputs();
        inputs.push(self.rules_input());
        self.run_stage("select", &["select.", "rules."], &inputs, |exp| {
            let (kg, _) = exp.load_data()?;
            let source = exp.config.rules_file.clone().unwrap_or_else(|| exp.path(MINED));
            let set = exp.load_rules(&source, kg.vocab())?;
            let top = select_top(&set, exp.config.select_criterion, exp.config.select_n, kg.vocab());
            let text = write_rule_file(&top, kg.vocab());
            let mut summary = format!("{} of {} rules by {}:\n", top.len(), set.len(), exp.config.select_criterion);
            for r in &top {
                let _ = writeln!(summary, "{}\t{}", r.rule.display(kg.vocab()), exp.config.select_criterion.value(r));
            }
            Ok(StageOutput::new(vec![(SELECTED, text.into_bytes())], summary.trim_end().to_string()))
        })
    }

    pub fn ground(&mut self) -> Result<StageReport, PipelineError> {
        let mut inputs = Self::split_inputs();
        inputs.push(Input::Artifact(SELECTED, "select"));
        self.run_stage("ground", &["ground."], &inputs, |exp| {
            let (kg, sp) = exp.load_data()?;
            let train = sp.train_graph(&kg);
            let rules: Vec<HornRule> = exp.load_rules(&exp.path(SELECTED), kg.vocab())?.iter().map(|r| r.rule.clone()).collect();
            let graph = ground_training_graph(&rules, &train, &exp.config.ground)?;
            let mut buf = Vec::new();
            write_binary(&graph, kg.vocab(), &mut buf)?;
            let texts: Vec<String> = graph.rules().iter().map(|r| r.display(kg.vocab())).collect();
            let summary = format!("{} rules, {} atoms, {} factors", graph.rules().len(), graph.num_atoms(), graph.num_factors());
            Ok(StageOutput { files: vec![(FACTOR_GRAPH, buf)], summary, rule_digest: Some(rule_set_digest(&texts)) })
        })
    }

    pub fn pretrain(&mut self) -> Result<StageReport, PipelineError> {
        self.run_stage("pretrain", &["kge."], &Self::split_inputs(), |exp| {
            let (kg, sp) = exp.load_data()?;
            let train = sp.train_graph(&kg);
            let cfg = exp.config.kge_config();
            let pre = pretrain_kge(&train, &cfg)?;
            let ck = pre.model.checkpoint(&pre.store, Some(&pre.adam), &cfg);
            let summary = format!("{} epochs, final loss {:.6}", cfg.epochs, pre.report.epoch_losses.last().copied().unwrap_or(f64::NAN));
            Ok(StageOutput::new(vec![(KGE_CKPT, ck.to_bytes())], summary))
        })
    }

    pub fn finetune(&mut self) -> Result<StageReport, PipelineError> {
        let mut inputs = Self::split_inputs();
        inputs.push(Input::Artifact(KGE_CKPT, "pretrain"));
        inputs.push(Input::Artifact(FACTOR_GRAPH, "ground"));
        self.run_stage("finetune", &["r2n."], &inputs, |exp| {
            let (kg, sp) = exp.load_data()?;
            let train = sp.train_graph(&kg);
            let (kge, store) = exp.load_kge(kg.vocab())?;
            let graph = exp.load_factor_graph(kg.vocab())?;
            let cfg = exp.config.r2n_config();
            let ft = finetune_r2n(&kge, store, &graph, &train, &cfg)?;
            let ck = ft.model.checkpoint(&ft.store, Some(&ft.adam));
            let summary = format!("{} epochs, final loss {:.6}", cfg.epochs, ft.report.epoch_losses.last().copied().unwrap_or(f64::NAN));
            Ok(StageOutput::new(vec![(R2N_CKPT, ck.to_bytes())], summary))
        })
    }

    pub fn evaluate(&mut self) -> Result<StageReport, PipelineError> {
        let mut inputs = Self::split_inputs();
        inputs.push(Input::Artifact(KGE_CKPT, "pretrain"));
        inputs.push(Input::Artifact(FACTOR_GRAPH, "ground"));
        inputs.push(Input::Artifact(R2N_CKPT, "finetune"));
        self.run_stage("evaluate", &["eval.", "select.criterion"], &inputs, |exp| {
            let (kg, sp) = exp.load_data()?;
            let known = sp.all_known();
            let protocol = exp.config.protocol;
            let (kge, kge_store) = exp.load_kge(kg.vocab())?;
            let kge_report = evaluate(&KgeScorer { model: &kge, store: &kge_store }, &sp.test, protocol, kg.vocab(), &known)?;
            let graph = exp.load_factor_graph(kg.vocab())?;
            let ck = Checkpoint::from_bytes(&read(&exp.path(R2N_CKPT))?)?;
            let (model, store) = R2nModel::from_checkpoint(&ck, graph.rules(), kg.vocab())?;
            let scorer = R2nScorer::new(&model, &store, &graph)?;
            let r2n_report = evaluate(&scorer, &sp.test, protocol, kg.vocab(), &known)?;

            let seed = exp.config.seed;
            let mut csv = format!("{METRICS_CSV_HEADER}\n");
            metrics_row(&mut csv, "none", 0, seed, kge_report.primary());
            metrics_row(&mut csv, exp.config.select_criterion.key(), graph.rules().len(), seed, r2n_report.primary());
            let json = serde_json::json!({ "kge": kge_report, "r2n": r2n_report });
            let per_rel = per_relation_csv(&[("kge", &kge_report), ("r2n", &r2n_report)]);
            let summary = format!(
                "{} test triples, {} ranking ({} side)\n{}\n{}",
                sp.test.len(),
                protocol.mode,
                protocol.side,
                report_line("kge", &kge_report),
                report_line("r2n", &r2n_report)
            );
            Ok(StageOutput::new(
                vec![
                    (METRICS_CSV, csv.into_bytes()),
                    (METRICS_JSON, serde_json::to_string_pretty(&json).expect("report serializes").into_bytes()),
                    (PER_RELATION_CSV, per_rel.into_bytes()),
                ],
                summary,
            ))
        })
    }

    pub fn ablate(&mut self) -> Result<StageReport, PipelineError> {
        let mut inputs = Self::split_inputs();
        inputs.push(self.rules_input());
        self.run_stage("ablate", &["ablate.", "kge.", "r2n.", "ground.", "eval.", "rules."], &inputs, |exp| {
            let (kg, sp) = exp.load_data()?;
            let train = sp.train_graph(&kg);
            let known = sp.all_known();
            let source = exp.config.rules_file.clone().unwrap_or_else(|| exp.path(MINED));
            let set = exp.load_rules(&source, kg.vocab())?;
            let protocol = exp.config.protocol;
            let mut pretrained: HashMap<u64, Pretrained> = HashMap::new();
            let cells = run_ablation(&exp.config.ablate_criteria, &exp.config.ablate_counts, &exp.config.ablate_seeds, |criterion, n, seed| {
                let cfg = ExperimentConfig { seed, ..exp.config.clone() };
                let mut run = || -> Result<Metrics, PipelineError> {
                    if let std::collections::hash_map::Entry::Vacant(e) = pretrained.entry(seed) {
                        e.insert(pretrain_kge(&train, &cfg.kge_config())?);
                    }
                    let pre = &pretrained[&seed];
                    let Some(criterion) = criterion else {
                        let r = evaluate(&KgeScorer { model: &pre.model, store: &pre.store }, &sp.test, protocol, kg.vocab(), &known)?;
                        return Ok(*r.primary());
                    };
                    let rules: Vec<HornRule> = select_top(&set, criterion, n, kg.vocab()).into_iter().map(|r| r.rule).collect();
                    let graph = ground_training_graph(&rules, &train, &cfg.ground)?;
                    let ft = finetune_r2n(&pre.model, pre.store.clone(), &graph, &train, &cfg.r2n_config())?;
                    let scorer = R2nScorer::new(&ft.model, &ft.store, &graph)?;
                    Ok(*evaluate(&scorer, &sp.test, protocol, kg.vocab(), &known)?.primary())
                };
                run().map_err(|e| e.to_string())
            });
            let csv = write_metrics_csv(&cells);
            Ok(StageOutput::new(vec![(ABLATION_CSV, csv.clone().into_bytes())], csv.trim_end().to_string()))
        })
    }

    /// Every stage in order. Ingest and stats are skipped when a published
    /// split is configured without a triple file, mining when a rule file
    /// is configured.
    pub fn run_all(&mut self) -> Result<Vec<StageReport>, PipelineError> {
        let mut out = Vec::new();
        if self.config.split_files.is_none() || self.config.data_triples.is_some() {
            out.push(self.ingest()?);
            out.push(self.stats()?);
        }
        out.push(self.split()?);
        if self.config.rules_file.is_none() {
            out.push(self.mine()?);
        }
        out.push(self.select()?);
        out.push(self.ground()?);
        out.push(self.pretrain()?);
        out.push(self.finetune()?);
        out.push(self.evaluate()?);
        Ok(out)
    }
}

fn report_line(name: &str, r: &EvalReport) -> String {
    let line = |m: &Metrics| format!("MRR {:.4} H@1 {:.4} H@3 {:.4} H@10 {:.4}", m.mrr, m.hits1, m.hits3, m.hits10);
    format!("{name}: filtered {} | raw {}", line(&r.filtered), line(&r.raw))
}

fn per_relation_csv(reports: &[(&str, &EvalReport)]) -> String {
    let mut s = String::from("model,relation,mode,mrr,hits1,hits3,hits10,n_queries\n");
    for (name, r) in reports {
        for (rel, m) in &r.per_relation {
            for (mode, m) in [("filtered", &m.filtered), ("raw", &m.raw)] {
                let _ = writeln!(s, "{name},{rel},{mode},{},{},{},{},{}", m.mrr, m.hits1, m.hits3, m.hits10, m.n_queries);
            }
        }
    }
    s
}
