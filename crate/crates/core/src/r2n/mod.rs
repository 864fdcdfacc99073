//! Relational reasoning network: KGE atom embeddings refined by message
//! passing over the factor graph.
//!
//! For every layer `l` and factor `f` of rule `j`,
//! `x_f = relu(W_j [x_{a_1}; ...; x_{a_m}] + b_j)` reads the previous-layer
//! states of the factor's atoms in rule-position order. Each atom then
//! receives `MLP_{j,i}(x_f)` from every factor it occupies at position `i`,
//! and its new state is the anchor (the KGE representation by default) plus
//! the sum of those messages. Predictions apply a sigmoid output head to the
//! final state.
//!
//! Forward passes only touch the receptive field of the queried atoms:
//! atoms needed at layer `l-1` are those of the factors adjacent to the
//! atoms needed at layer `l`.

mod train;

pub use train::finetune;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Adam, AutodiffError, Checkpoint, NodeId, ParamId, ParamStore, Scalar, Tape};
use crate::fsutil::sha256_bytes;
use crate::ground::{AtomId, FactorGraph, GroundError};
use crate::kg::{Triple, Vocabulary};
use crate::kge::{KgeError, KgeModel, KgeSpec};
use crate::rules::{parse_rule, HornRule};

#[derive(Debug, Error)]
pub enum R2nError {
    #[error("invalid R2N configuration: {0}")]
    InvalidConfig(String),
    #[error("rule set does not match the model (model digest {model}, graph digest {graph})")]
    RuleSetMismatch { model: String, graph: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite { epoch: usize, batch: usize, detail: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Graph(#[from] GroundError),
    #[error(transparent)]
    Kge(#[from] KgeError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// What the residual update adds messages to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Anchor {
    /// The KGE representation, at every layer.
    Input,
    /// The previous layer's state.
    Previous,
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Anchor::Input => "input",
            Anchor::Previous => "previous",
        })
    }
}

impl FromStr for Anchor {
    type Err = R2nError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "input" => Ok(Anchor::Input),
            "previous" => Ok(Anchor::Previous),
            other => Err(R2nError::InvalidConfig(format!("anchor must be `input` or `previous`, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct R2nConfig {
    pub layers: usize,
    pub factor_dim: usize,
    pub anchor: Anchor,
    /// Drop the ReLU after the per-position atom networks.
    pub linear_messages: bool,
    pub freeze_kge: bool,
    pub epochs: usize,
    pub lr: f64,
    pub negatives: usize,
    pub batch: usize,
    pub seed: u64,
    pub sparse_adam: bool,
}

impl Default for R2nConfig {
    fn default() -> Self {
        R2nConfig {
            layers: 2,
            factor_dim: 25,
            anchor: Anchor::Input,
            linear_messages: false,
            freeze_kge: false,
            epochs: 30,
            lr: 1e-3,
            negatives: 2,
            batch: 1024,
            seed: 0,
            sparse_adam: true,
        }
    }
}

impl R2nConfig {
    pub fn validate(&self) -> Result<(), R2nError> {
        if self.layers == 0 {
            return Err(R2nError::InvalidConfig("layers must be at least 1".into()));
        }
        if self.factor_dim == 0 || self.batch == 0 || self.negatives == 0 {
            return Err(R2nError::InvalidConfig("factor_dim, batch and negatives must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(R2nError::InvalidConfig(format!("lr must be positive, got {}", self.lr)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub w: ParamId,
    pub b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
struct Layer {
    /// Per rule: `arity * d -> factor_dim`.
    factor: Vec<Affine>,
    /// Per rule and position: `factor_dim -> d`.
    atom: Vec<Vec<Affine>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct R2nModel {
    kge: KgeModel,
    config: R2nConfig,
    rules: Vec<HornRule>,
    rule_texts: Vec<String>,
    digest: String,
    layers: Vec<Layer>,
    out: Affine,
}

pub const CHECKPOINT_KIND: &str = "r2n";

/// Digest identifying a rule table, in its stored order.
pub fn rule_set_digest(rule_texts: &[String]) -> String {
    sha256_bytes(rule_texts.join("\n").as_bytes())
}

fn add_affine<T: Scalar, R: Rng>(store: &mut ParamStore<T>, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Result<Affine, R2nError> {
    Ok(Affine {
        w: store.add_uniform(&format!("{name}.w"), fan_in, fan_out, fan_in, rng)?,
        b: store.add_uniform(&format!("{name}.b"), 1, fan_out, fan_in, rng)?,
    })
}

impl R2nModel {
    /// Create layer parameters for `rules` (the factor graph's rule table,
    /// in its order) on top of an existing KGE model in `store`.
    pub fn new<T: Scalar, R: Rng>(
        kge: KgeModel,
        rules: &[HornRule],
        vocab: &Vocabulary,
        config: R2nConfig,
        store: &mut ParamStore<T>,
        rng: &mut R,
    ) -> Result<Self, R2nError> {
        config.validate()?;
        let d = kge.dim();
        let df = config.factor_dim;
        let rule_texts: Vec<String> = rules.iter().map(|r| r.display(vocab)).collect();
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let mut factor = Vec::new();
            let mut atom = Vec::new();
            for (rule, text) in rules.iter().zip(&rule_texts) {
                factor.push(add_affine(store, &format!("r2n.l{l}.factor[{text}]"), rule.arity() * d, df, rng)?);
                let per_pos = (0..rule.arity())
                    .map(|i| add_affine(store, &format!("r2n.l{l}.atom[{text}]#{i}"), df, d, rng))
                    .collect::<Result<Vec<_>, _>>()?;
                atom.push(per_pos);
            }
            layers.push(Layer { factor, atom });
        }
        let out = add_affine(store, "r2n.output", d, 1, rng)?;
        if config.freeze_kge {
            for p in kge.params() {
                store.set_trainable(p, false);
            }
        }
        let digest = rule_set_digest(&rule_texts);
        Ok(R2nModel { kge, config, rules: rules.to_vec(), rule_texts, digest, layers, out })
    }

    pub fn kge(&self) -> &KgeModel {
        &self.kge
    }

    pub fn config(&self) -> &R2nConfig {
        &self.config
    }

    pub fn rules(&self) -> &[HornRule] {
        &self.rules
    }

    pub fn rule_digest(&self) -> &str {
        &self.digest
    }

    pub fn output_head(&self) -> Affine {
        self.out
    }

    /// Factor network of rule `j` in layer `l`.
    pub fn factor_net(&self, l: usize, j: usize) -> Affine {
        self.layers[l].factor[j]
    }

    /// Atom network of rule `j`, position `i`, in layer `l`.
    pub fn atom_net(&self, l: usize, j: usize, i: usize) -> Affine {
        self.layers[l].atom[j][i]
    }

    fn check_graph(&self, graph: &FactorGraph) -> Result<(), R2nError> {
        if graph.rules() != self.rules.as_slice() {
            let texts: Vec<String> = graph.rules().iter().map(|r| format!("{r:?}")).collect();
            return Err(R2nError::RuleSetMismatch { model: self.digest.clone(), graph: rule_set_digest(&texts) });
        }
        Ok(())
    }

    fn affine<T: Scalar>(&self, tape: &mut Tape<T>, x: NodeId, a: Affine) -> Result<NodeId, R2nError> {
        let w = tape.param(a.w);
        let h = tape.matmul(x, w)?;
        let b = tape.param(a.b);
        Ok(tape.add_bias(h, b)?)
    }

    /// Initial and final states of `atoms` (`|atoms| x d` each).
    pub fn atom_states<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        graph: &FactorGraph,
        atoms: &[AtomId],
    ) -> Result<(NodeId, NodeId), R2nError> {
        self.check_graph(graph)?;
        for a in atoms {
            graph.atom(*a)?;
        }
        let n_layers = self.layers.len();
        // receptive field: level[l] = atoms whose layer-l state is needed
        let mut local: HashMap<AtomId, usize> = HashMap::new();
        let mut order: Vec<AtomId> = Vec::new();
        for &a in atoms {
            if let std::collections::hash_map::Entry::Vacant(e) = local.entry(a) {
                e.insert(order.len());
                order.push(a);
            }
        }
        let mut level_size = vec![0usize; n_layers + 1];
        level_size[n_layers] = order.len();
        let mut level_factors: Vec<Vec<u32>> = vec![Vec::new(); n_layers + 1];
        for l in (1..=n_layers).rev() {
            let mut seen_f = std::collections::HashSet::new();
            let mut fs = Vec::new();
            for &a in &order[..level_size[l]] {
                for e in graph.atom_factors(a)? {
                    if seen_f.insert(e.factor.0) {
                        fs.push(e.factor.0);
                    }
                }
            }
            fs.sort_unstable();
            for &f in &fs {
                for &b in graph.factor_atoms(crate::ground::FactorId(f))? {
                    if let std::collections::hash_map::Entry::Vacant(e) = local.entry(b) {
                        e.insert(order.len());
                        order.push(b);
                    }
                }
            }
            level_factors[l] = fs;
            level_size[l - 1] = order.len();
        }
        let triples: Vec<Triple> = order.iter().map(|a| graph.atoms()[a.index()].triple).collect();
        let x0 = if triples.is_empty() {
            tape.input(crate::autodiff::Tensor::zeros(0, self.kge.dim()))
        } else {
            self.kge.representation(tape, &triples)?
        };
        let mut prev = x0;
        for l in 1..=n_layers {
            let layer = &self.layers[l - 1];
            let n_out = level_size[l];
            let rows: Vec<usize> = (0..n_out).collect();
            let anchor = match self.config.anchor {
                Anchor::Input => tape.gather(x0, &rows)?,
                Anchor::Previous => tape.gather(prev, &rows)?,
            };
            // group this layer's factors by rule
            let mut by_rule: Vec<Vec<u32>> = vec![Vec::new(); self.rules.len()];
            for &f in &level_factors[l] {
                by_rule[graph.factors()[f as usize].rule as usize].push(f);
            }
            let mut state = anchor;
            for (j, fs) in by_rule.iter().enumerate() {
                if fs.is_empty() {
                    continue;
                }
                let arity = self.rules[j].arity();
                let mut parts = Vec::with_capacity(arity);
                for i in 0..arity {
                    let idx: Vec<usize> = fs.iter().map(|&f| local[&graph.factors()[f as usize].atoms[i]]).collect();
                    parts.push(tape.gather(prev, &idx)?);
                }
                let cat = tape.concat(&parts)?;
                let h = self.affine(tape, cat, layer.factor[j])?;
                let xf = tape.relu(h);
                for i in 0..arity {
                    // only atoms whose layer-l state is needed receive messages
                    let (src, dst): (Vec<usize>, Vec<usize>) = fs
                        .iter()
                        .enumerate()
                        .filter_map(|(k, &f)| {
                            let t = local[&graph.factors()[f as usize].atoms[i]];
                            (t < n_out).then_some((k, t))
                        })
                        .unzip();
                    if src.is_empty() {
                        continue;
                    }
                    let m = self.affine(tape, xf, layer.atom[j][i])?;
                    let m = if self.config.linear_messages { m } else { tape.relu(m) };
                    let m = if src.len() == fs.len() { m } else { tape.gather(m, &src)? };
                    let m = tape.scatter_add_rows(m, &dst, n_out)?;
                    state = tape.add(state, m)?;
                }
            }
            prev = state;
        }
        let x0_q = tape.gather(x0, &atoms.iter().map(|a| local[a]).collect::<Vec<_>>())?;
        let xl_q = tape.gather(prev, &atoms.iter().map(|a| local[a]).collect::<Vec<_>>())?;
        Ok((x0_q, xl_q))
    }

    /// Output head before the sigmoid, `n x 1`.
    pub fn head_logit<T: Scalar>(&self, tape: &mut Tape<T>, states: NodeId) -> Result<NodeId, R2nError> {
        self.affine(tape, states, self.out)
    }

    /// Output head applied to states, `n x 1` probabilities.
    pub fn head<T: Scalar>(&self, tape: &mut Tape<T>, states: NodeId) -> Result<NodeId, R2nError> {
        let z = self.head_logit(tape, states)?;
        Ok(tape.sigmoid(z))
    }

    /// Logits for atoms of the graph. Unknown ids are an error.
    pub fn forward_logits<T: Scalar>(&self, tape: &mut Tape<T>, graph: &FactorGraph, atoms: &[AtomId]) -> Result<NodeId, R2nError> {
        let (_, xl) = self.atom_states(tape, graph, atoms)?;
        self.head_logit(tape, xl)
    }

    /// Predictions for atoms of the graph. Unknown ids are an error.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, graph: &FactorGraph, atoms: &[AtomId]) -> Result<NodeId, R2nError> {
        let z = self.forward_logits(tape, graph, atoms)?;
        Ok(tape.sigmoid(z))
    }

    /// Predictions for arbitrary triples. Triples outside the graph are
    /// isolated atoms: their final state is their KGE representation.
    pub fn forward_triples<T: Scalar>(&self, tape: &mut Tape<T>, graph: &FactorGraph, triples: &[Triple]) -> Result<NodeId, R2nError> {
        let z = self.forward_triples_logits(tape, graph, triples)?;
        Ok(tape.sigmoid(z))
    }

    /// Logits for arbitrary triples, see [`R2nModel::forward_triples`].
    pub fn forward_triples_logits<T: Scalar>(&self, tape: &mut Tape<T>, graph: &FactorGraph, triples: &[Triple]) -> Result<NodeId, R2nError> {
        let n = triples.len();
        let (mut in_pos, mut in_atoms, mut out_pos, mut out_triples) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for (k, t) in triples.iter().enumerate() {
            match graph.atom_id(t) {
                Some(a) => {
                    in_pos.push(k);
                    in_atoms.push(a);
                }
                None => {
                    out_pos.push(k);
                    out_triples.push(*t);
                }
            }
        }
        let mut states = None;
        if !in_atoms.is_empty() {
            let (_, xl) = self.atom_states(tape, graph, &in_atoms)?;
            states = Some(if out_pos.is_empty() { xl } else { tape.scatter_add_rows(xl, &in_pos, n)? });
        } else {
            self.check_graph(graph)?;
        }
        if !out_triples.is_empty() {
            let rep = self.kge.representation(tape, &out_triples)?;
            let rep = if in_pos.is_empty() { rep } else { tape.scatter_add_rows(rep, &out_pos, n)? };
            states = Some(match states {
                Some(s) => tape.add(s, rep)?,
                None => rep,
            });
        }
        let states = match states {
            Some(s) => s,
            None => tape.input(crate::autodiff::Tensor::zeros(0, self.kge.dim())),
        };
        self.head_logit(tape, states)
    }

    /// Logits for every atom of the graph, computed in chunks.
    pub fn predict_all_logits(&self, store: &ParamStore<f32>, graph: &FactorGraph, chunk: usize) -> Result<Vec<f32>, R2nError> {
        let ids: Vec<AtomId> = (0..graph.num_atoms() as u32).map(AtomId).collect();
        let mut out = Vec::with_capacity(ids.len());
        for part in ids.chunks(chunk.max(1)) {
            let mut tape = Tape::new(store);
            let z = self.forward_logits(&mut tape, graph, part)?;
            out.extend_from_slice(tape.value(z).data());
        }
        Ok(out)
    }

    /// Predictions for every atom of the graph.
    pub fn predict_all(&self, store: &ParamStore<f32>, graph: &FactorGraph, chunk: usize) -> Result<Vec<f32>, R2nError> {
        Ok(self.predict_all_logits(store, graph, chunk)?.into_iter().map(crate::kge::sigmoid).collect())
    }

    /// Output head logit on a single KGE representation, without a tape.
    pub fn isolated_logit(&self, store: &ParamStore<f32>, t: &Triple) -> Result<f32, R2nError> {
        let rep = self.kge.representation_direct(store, t)?;
        let w = store.get(self.out.w).data();
        let b = store.get(self.out.b).data()[0];
        Ok(rep.iter().zip(w).map(|(x, w)| x * w).sum::<f32>() + b)
    }

    pub fn isolated_score(&self, store: &ParamStore<f32>, t: &Triple) -> Result<f32, R2nError> {
        Ok(crate::kge::sigmoid(self.isolated_logit(store, t)?))
    }

    pub fn checkpoint(&self, store: &ParamStore<f32>, adam: Option<&Adam<f32>>) -> Checkpoint {
        let echo = serde_json::json!({
            "kge": self.kge.spec(),
            "config": self.config,
            "rules": self.rule_texts,
            "rule_digest": self.digest,
        });
        Checkpoint::capture(CHECKPOINT_KIND, &echo.to_string(), store, adam)
    }

    /// Rebuild from a checkpoint. `rules` must be the rule table the model
    /// was trained with; a different set is rejected by digest.
    pub fn from_checkpoint(ck: &Checkpoint, rules: &[HornRule], vocab: &Vocabulary) -> Result<(Self, ParamStore<f32>), R2nError> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(R2nError::Checkpoint(format!("expected an `{CHECKPOINT_KIND}` checkpoint, found `{}`", ck.kind)));
        }
        let bad = |e: serde_json::Error| R2nError::Checkpoint(format!("config echo: {e}"));
        let echo: serde_json::Value = serde_json::from_str(&ck.config).map_err(bad)?;
        let spec: KgeSpec = serde_json::from_value(echo["kge"].clone()).map_err(bad)?;
        let config: R2nConfig = serde_json::from_value(echo["config"].clone()).map_err(bad)?;
        let stored: String = serde_json::from_value(echo["rule_digest"].clone()).map_err(bad)?;
        let texts: Vec<String> = rules.iter().map(|r| r.display(vocab)).collect();
        let digest = rule_set_digest(&texts);
        if digest != stored {
            return Err(R2nError::RuleSetMismatch { model: stored, graph: digest });
        }
        let stored_rules: Vec<String> = serde_json::from_value(echo["rules"].clone()).map_err(bad)?;
        for t in &stored_rules {
            parse_rule(t, vocab).map_err(|e| R2nError::Checkpoint(e.to_string()))?;
        }
        let mut store = ParamStore::new();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let kge = KgeModel::new(spec, &mut store, &mut rng)?;
        let model = R2nModel::new(kge, rules, vocab, config, &mut store, &mut rng)?;
        ck.restore(&mut store, None)?;
        Ok((model, store))
    }
}
