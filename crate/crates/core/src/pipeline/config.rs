//! Flat `key = value` experiment configuration.
//!
//! Lines starting with `#` are comments. Every key has a default, so an
//! empty file is a valid configuration. Environment variables named
//! `R2N_<KEY>` (upper case, dots as underscores) override file values.

use std::path::PathBuf;
use std::str::FromStr;

use super::PipelineError;
use crate::eval::{Mode, Protocol, Side};
use crate::fsutil::sha256_bytes;
use crate::ground::GroundConfig;
use crate::kg::SplitRatios;
use crate::kge::{KgeConfig, ScorerKind};
use crate::r2n::{Anchor, R2nConfig};
use crate::rules::{Criterion, MineConfig};

pub const CONFIG_HEADER: &str = "# r2n experiment config v1";
pub const ENV_PREFIX: &str = "R2N_";

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data_triples: Option<PathBuf>,
    pub data_domains: Option<PathBuf>,
    pub split: SplitRatios,
    /// Published train/valid/test files, used instead of a random split.
    pub split_files: Option<[PathBuf; 3]>,
    pub mine: MineConfig,
    /// Rule file used instead of mining.
    pub rules_file: Option<PathBuf>,
    pub select_criterion: Criterion,
    pub select_n: usize,
    pub ground: GroundConfig,
    pub kge: KgeConfig,
    pub r2n: R2nConfig,
    pub protocol: Protocol,
    pub ablate_criteria: Vec<Criterion>,
    pub ablate_counts: Vec<usize>,
    pub ablate_seeds: Vec<u64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            data_triples: None,
            data_domains: None,
            split: SplitRatios::default(),
            split_files: None,
            mine: MineConfig::default(),
            rules_file: None,
            select_criterion: Criterion::StdConfidence,
            select_n: 100,
            ground: GroundConfig::default(),
            kge: KgeConfig::default(),
            r2n: R2nConfig::default(),
            protocol: Protocol::default(),
            ablate_criteria: Criterion::ALL.to_vec(),
            ablate_counts: vec![5, 10, 25, 50, 75, 100],
            ablate_seeds: vec![0],
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, PipelineError>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| PipelineError::Config(format!("{key}: cannot parse `{value}`: {e}")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, PipelineError>
where
    T::Err: std::fmt::Display,
{
    value.split(',').map(str::trim).filter(|s| !s.is_empty()).map(|s| parse(key, s)).collect()
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

fn show_path(p: &Option<PathBuf>) -> String {
    p.as_ref().map(|p| p.display().to_string()).unwrap_or_default()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Every key with its current value, in schema order.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let files = self.split_files.as_ref();
        let file = |i: usize| files.map(|f| f[i].display().to_string()).unwrap_or_default();
        vec![
            ("seed", self.seed.to_string()),
            ("data.triples", show_path(&self.data_triples)),
            ("data.domains", show_path(&self.data_domains)),
            ("split.train", self.split.train.to_string()),
            ("split.valid", self.split.valid.to_string()),
            ("split.test", self.split.test.to_string()),
            ("split.train_file", file(0)),
            ("split.valid_file", file(1)),
            ("split.test_file", file(2)),
            ("mine.max_body_atoms", self.mine.max_body_atoms.to_string()),
            ("mine.min_support", self.mine.min_support.to_string()),
            ("mine.min_head_coverage", self.mine.min_head_coverage.to_string()),
            ("rules.file", show_path(&self.rules_file)),
            ("select.criterion", self.select_criterion.key().to_string()),
            ("select.n", self.select_n.to_string()),
            ("ground.premise_filter", self.ground.premise_filter.to_string()),
            ("ground.distinct_bindings", self.ground.distinct_bindings.to_string()),
            ("ground.max_unfiltered_entities", self.ground.max_unfiltered_entities.to_string()),
            ("kge.scorer", self.kge.scorer.to_string()),
            ("kge.dim", self.kge.dim.to_string()),
            ("kge.epochs", self.kge.epochs.to_string()),
            ("kge.lr", self.kge.lr.to_string()),
            ("kge.negatives", self.kge.negatives.to_string()),
            ("kge.batch", self.kge.batch.to_string()),
            ("kge.sparse_adam", self.kge.sparse_adam.to_string()),
            ("r2n.layers", self.r2n.layers.to_string()),
            ("r2n.factor_dim", self.r2n.factor_dim.to_string()),
            ("r2n.anchor", self.r2n.anchor.to_string()),
            ("r2n.linear_messages", self.r2n.linear_messages.to_string()),
            ("r2n.freeze_kge", self.r2n.freeze_kge.to_string()),
            ("r2n.epochs", self.r2n.epochs.to_string()),
            ("r2n.lr", self.r2n.lr.to_string()),
            ("r2n.negatives", self.r2n.negatives.to_string()),
            ("r2n.batch", self.r2n.batch.to_string()),
            ("r2n.sparse_adam", self.r2n.sparse_adam.to_string()),
            ("eval.mode", self.protocol.mode.to_string()),
            ("eval.side", self.protocol.side.to_string()),
            ("ablate.criteria", self.ablate_criteria.iter().map(|c| c.key()).collect::<Vec<_>>().join(",")),
            ("ablate.counts", join(&self.ablate_counts)),
            ("ablate.seeds", join(&self.ablate_seeds)),
        ]
    }

    pub fn keys() -> Vec<&'static str> {
        ExperimentConfig::default().entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), PipelineError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "data.triples" => self.data_triples = opt_path(v),
            "data.domains" => self.data_domains = opt_path(v),
            "split.train" => self.split.train = parse(key, v)?,
            "split.valid" => self.split.valid = parse(key, v)?,
            "split.test" => self.split.test = parse(key, v)?,
            "split.train_file" | "split.valid_file" | "split.test_file" => {
                let i = ["split.train_file", "split.valid_file", "split.test_file"].iter().position(|k| *k == key).unwrap();
                let mut files = self.split_files.clone().unwrap_or_default();
                files[i] = PathBuf::from(v);
                self.split_files = if files.iter().all(|f| f.as_os_str().is_empty()) { None } else { Some(files) };
            }
            "mine.max_body_atoms" => self.mine.max_body_atoms = parse(key, v)?,
            "mine.min_support" => self.mine.min_support = parse(key, v)?,
            "mine.min_head_coverage" => self.mine.min_head_coverage = parse(key, v)?,
            "rules.file" => self.rules_file = opt_path(v),
            "select.criterion" => self.select_criterion = parse(key, v)?,
            "select.n" => self.select_n = parse(key, v)?,
            "ground.premise_filter" => self.ground.premise_filter = parse(key, v)?,
            "ground.distinct_bindings" => self.ground.distinct_bindings = parse(key, v)?,
            "ground.max_unfiltered_entities" => self.ground.max_unfiltered_entities = parse(key, v)?,
            "kge.scorer" => self.kge.scorer = parse::<ScorerKind>(key, v)?,
            "kge.dim" => self.kge.dim = parse(key, v)?,
            "kge.epochs" => self.kge.epochs = parse(key, v)?,
            "kge.lr" => self.kge.lr = parse(key, v)?,
            "kge.negatives" => self.kge.negatives = parse(key, v)?,
            "kge.batch" => self.kge.batch = parse(key, v)?,
            "kge.sparse_adam" => self.kge.sparse_adam = parse(key, v)?,
            "r2n.layers" => self.r2n.layers = parse(key, v)?,
            "r2n.factor_dim" => self.r2n.factor_dim = parse(key, v)?,
            "r2n.anchor" => self.r2n.anchor = parse::<Anchor>(key, v)?,
            "r2n.linear_messages" => self.r2n.linear_messages = parse(key, v)?,
            "r2n.freeze_kge" => self.r2n.freeze_kge = parse(key, v)?,
            "r2n.epochs" => self.r2n.epochs = parse(key, v)?,
            "r2n.lr" => self.r2n.lr = parse(key, v)?,
            "r2n.negatives" => self.r2n.negatives = parse(key, v)?,
            "r2n.batch" => self.r2n.batch = parse(key, v)?,
            "r2n.sparse_adam" => self.r2n.sparse_adam = parse(key, v)?,
            "eval.mode" => self.protocol.mode = parse::<Mode>(key, v)?,
            "eval.side" => self.protocol.side = parse::<Side>(key, v)?,
            "ablate.criteria" => self.ablate_criteria = parse_list(key, v)?,
            "ablate.counts" => self.ablate_counts = parse_list(key, v)?,
            "ablate.seeds" => self.ablate_seeds = parse_list(key, v)?,
            other => return Err(PipelineError::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{CONFIG_HEADER}\n");
        for (k, v) in self.entries() {
            s.push_str(&format!("{k} = {v}\n"));
        }
        s
    }

    /// Apply `key = value` lines on top of `self`.
    pub fn merge_text(&mut self, text: &str) -> Result<(), PipelineError> {
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| PipelineError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            self.set(k.trim(), v).map_err(|e| PipelineError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, PipelineError> {
        let mut c = ExperimentConfig::default();
        c.merge_text(text)?;
        c.validate()?;
        Ok(c)
    }

    /// Environment variable that overrides `key`.
    pub fn env_name(key: &str) -> String {
        format!("{ENV_PREFIX}{}", key.to_uppercase().replace('.', "_"))
    }

    /// Apply `R2N_*` overrides from `vars`. Variables that name no key are
    /// ignored.
    pub fn apply_env(&mut self, vars: impl IntoIterator<Item = (String, String)>) -> Result<(), PipelineError> {
        let keys = Self::keys();
        for (name, value) in vars {
            if let Some(key) = keys.iter().find(|k| Self::env_name(k) == name) {
                self.set(key, &value).map_err(|e| PipelineError::Config(format!("{name}: {e}")))?;
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let config_err = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        self.split.validate().map_err(|e| config_err(&e))?;
        self.mine.validate().map_err(|e| config_err(&e))?;
        self.kge.validate().map_err(|e| config_err(&e))?;
        self.r2n.validate().map_err(|e| config_err(&e))?;
        if let Some(files) = &self.split_files {
            if files.iter().any(|f| f.as_os_str().is_empty()) {
                return Err(PipelineError::Config("split.train_file, split.valid_file and split.test_file must be set together".into()));
            }
        }
        if self.select_n == 0 {
            return Err(PipelineError::Config("select.n must be at least 1".into()));
        }
        if self.ablate_seeds.is_empty() || self.ablate_criteria.is_empty() {
            return Err(PipelineError::Config("ablate.criteria and ablate.seeds must not be empty".into()));
        }
        Ok(())
    }

    /// Stage seed derived from the top-level seed and the stage name, so
    /// adding a stage never shifts the others.
    pub fn sub_seed(&self, stage: &str) -> u64 {
        sub_seed(self.seed, stage)
    }

    pub fn kge_config(&self) -> KgeConfig {
        KgeConfig { seed: self.sub_seed("kge"), ..self.kge }
    }

    pub fn r2n_config(&self) -> R2nConfig {
        R2nConfig { seed: self.sub_seed("r2n"), ..self.r2n }
    }

    /// Digest over the keys with one of `prefixes`, plus the seed.
    pub fn digest_of(&self, prefixes: &[&str]) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            if k == "seed" || prefixes.iter().any(|p| k.starts_with(p)) {
                s.push_str(&format!("{k}={v}\n"));
            }
        }
        sha256_bytes(s.as_bytes())
    }
}

pub fn sub_seed(seed: u64, stage: &str) -> u64 {
    let d = sha256_bytes(format!("{seed}/{stage}").as_bytes());
    u64::from_str_radix(&d[..16], 16).expect("hex digest")
}
