//! Knowledge-graph embedding scorers used as the input atom embedding layer.
//!
//! Each scorer maps a triple to a `dim`-wide atom representation and a
//! probability:
//!
//! * TransE: `e1 + r - e2`, scored `1 / (1 + |rep|)`.
//! * DistMult: `e1 * r * e2`, scored `sigmoid(sum(rep))`.
//! * ComplEx: with `dim/2` complex lanes, the representation is the real
//!   part of `e1 * r * conj(e2)` followed by its imaginary part; the score is
//!   `sigmoid` of the real half's sum.

mod sampler;
pub(crate) mod train;

pub use sampler::NegativeSampler;
pub use train::{pretrain, KgeConfig, TrainReport};

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Checkpoint, NodeId, ParamId, ParamStore, Scalar, Tape, Tensor};
use crate::kg::Triple;

#[derive(Debug, Error)]
pub enum KgeError {
    #[error("invalid KGE configuration: {0}")]
    InvalidConfig(String),
    #[error("negative sampling needs at least 2 entities, vocabulary has {0}")]
    VocabularyTooSmall(usize),
    #[error("training set is empty")]
    EmptyTrain,
    #[error("entity or relation id out of range in {0:?}")]
    InvalidId(Triple),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFinite { epoch: usize, batch: usize, detail: String },
    #[error("unknown scorer `{0}` (expected transe, distmult or complex)")]
    UnknownScorer(String),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ScorerKind {
    TransE,
    DistMult,
    ComplEx,
}

impl fmt::Display for ScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScorerKind::TransE => "transe",
            ScorerKind::DistMult => "distmult",
            ScorerKind::ComplEx => "complex",
        })
    }
}

impl FromStr for ScorerKind {
    type Err = KgeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "transe" => Ok(ScorerKind::TransE),
            "distmult" => Ok(ScorerKind::DistMult),
            "complex" => Ok(ScorerKind::ComplEx),
            other => Err(KgeError::UnknownScorer(other.to_owned())),
        }
    }
}

/// Everything needed to rebuild the parameter shapes of a model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KgeSpec {
    pub scorer: ScorerKind,
    pub dim: usize,
    pub n_entities: usize,
    pub n_relations: usize,
}

/// Handles into the parameter store; the tables themselves live there so
/// that the reasoning layers can train them jointly.
#[derive(Debug, Clone, PartialEq)]
pub struct KgeModel {
    spec: KgeSpec,
    /// Entity and relation tables; for ComplEx these are the real lanes.
    ent: ParamId,
    rel: ParamId,
    /// Imaginary lanes, ComplEx only.
    ent_im: Option<ParamId>,
    rel_im: Option<ParamId>,
}

pub const CHECKPOINT_KIND: &str = "kge";

impl KgeModel {
    pub fn new<T: Scalar, R: Rng>(spec: KgeSpec, store: &mut ParamStore<T>, rng: &mut R) -> Result<Self, KgeError> {
        if spec.dim == 0 {
            return Err(KgeError::InvalidConfig("dim must be positive".into()));
        }
        if spec.scorer == ScorerKind::ComplEx && !spec.dim.is_multiple_of(2) {
            return Err(KgeError::InvalidConfig(format!("ComplEx needs an even dim, got {}", spec.dim)));
        }
        let lanes = if spec.scorer == ScorerKind::ComplEx { spec.dim / 2 } else { spec.dim };
        let ent = store.add_uniform("kge.entity", spec.n_entities, lanes, lanes, rng)?;
        let rel = store.add_uniform("kge.relation", spec.n_relations, lanes, lanes, rng)?;
        let (ent_im, rel_im) = if spec.scorer == ScorerKind::ComplEx {
            (
                Some(store.add_uniform("kge.entity_im", spec.n_entities, lanes, lanes, rng)?),
                Some(store.add_uniform("kge.relation_im", spec.n_relations, lanes, lanes, rng)?),
            )
        } else {
            (None, None)
        };
        Ok(KgeModel { spec, ent, rel, ent_im, rel_im })
    }

    /// Rebinds handles to a store that already holds the tables.
    pub fn attach<T: Scalar>(spec: KgeSpec, store: &ParamStore<T>) -> Result<Self, KgeError> {
        let complex = spec.scorer == ScorerKind::ComplEx;
        Ok(KgeModel {
            spec,
            ent: store.id("kge.entity")?,
            rel: store.id("kge.relation")?,
            ent_im: if complex { Some(store.id("kge.entity_im")?) } else { None },
            rel_im: if complex { Some(store.id("kge.relation_im")?) } else { None },
        })
    }

    pub fn spec(&self) -> KgeSpec {
        self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn params(&self) -> Vec<ParamId> {
        [Some(self.ent), Some(self.rel), self.ent_im, self.rel_im].into_iter().flatten().collect()
    }

    fn check(&self, t: &Triple) -> Result<(), KgeError> {
        if t.head.index() >= self.spec.n_entities || t.tail.index() >= self.spec.n_entities || t.relation.index() >= self.spec.n_relations
        {
            return Err(KgeError::InvalidId(*t));
        }
        Ok(())
    }

    /// Atom representations of `triples`, one row each.
    pub fn representation<T: Scalar>(&self, tape: &mut Tape<T>, triples: &[Triple]) -> Result<NodeId, KgeError> {
        for t in triples {
            self.check(t)?;
        }
        let hs: Vec<usize> = triples.iter().map(|t| t.head.index()).collect();
        let rs: Vec<usize> = triples.iter().map(|t| t.relation.index()).collect();
        let ts: Vec<usize> = triples.iter().map(|t| t.tail.index()).collect();
        let e1 = tape.gather_param(self.ent, &hs)?;
        let r = tape.gather_param(self.rel, &rs)?;
        let e2 = tape.gather_param(self.ent, &ts)?;
        Ok(match self.spec.scorer {
            ScorerKind::TransE => {
                let s = tape.add(e1, r)?;
                tape.sub(s, e2)?
            }
            ScorerKind::DistMult => {
                let s = tape.mul(e1, r)?;
                tape.mul(s, e2)?
            }
            ScorerKind::ComplEx => {
                let (ei, ri) = (self.ent_im.expect("complex tables"), self.rel_im.expect("complex tables"));
                let (a, c, e) = (e1, r, e2);
                let b = tape.gather_param(ei, &hs)?;
                let d = tape.gather_param(ri, &rs)?;
                let f = tape.gather_param(ei, &ts)?;
                // e1*r = (ac - bd) + (ad + bc)i; times conj(e2) = e - fi
                let ac = tape.mul(a, c)?;
                let bd = tape.mul(b, d)?;
                let ad = tape.mul(a, d)?;
                let bc = tape.mul(b, c)?;
                let p = tape.sub(ac, bd)?;
                let q = tape.add(ad, bc)?;
                let pe = tape.mul(p, e)?;
                let qf = tape.mul(q, f)?;
                let qe = tape.mul(q, e)?;
                let pf = tape.mul(p, f)?;
                let re = tape.add(pe, qf)?;
                let im = tape.sub(qe, pf)?;
                tape.concat(&[re, im])?
            }
        })
    }

    /// Pre-sigmoid scores for the sigmoid scorers, `n x 1`. TransE has no
    /// logit and returns `None`.
    pub fn logit_from_rep<T: Scalar>(&self, tape: &mut Tape<T>, rep: NodeId) -> Result<Option<NodeId>, KgeError> {
        Ok(match self.spec.scorer {
            ScorerKind::TransE => None,
            ScorerKind::DistMult => Some(tape.sum_rows(rep)),
            ScorerKind::ComplEx => {
                let lanes = self.spec.dim / 2;
                let sel: Vec<T> = (0..self.spec.dim).map(|i| if i < lanes { T::one() } else { T::zero() }).collect();
                let sel = tape.input(Tensor::from_vec(self.spec.dim, 1, sel)?);
                Some(tape.matmul(rep, sel)?)
            }
        })
    }

    /// Probabilities from representations, `n x 1`.
    pub fn score_from_rep<T: Scalar>(&self, tape: &mut Tape<T>, rep: NodeId) -> Result<NodeId, KgeError> {
        Ok(match self.logit_from_rep(tape, rep)? {
            Some(z) => tape.sigmoid(z),
            None => {
                let n = tape.norm_rows(rep);
                let n = tape.add_scalar(n, T::one());
                tape.recip(n)
            }
        })
    }

    /// Mean binary cross-entropy of the scores of `triples`. Sigmoid scorers
    /// are trained on logits so saturated predictions keep their gradient.
    pub fn loss<T: Scalar>(&self, tape: &mut Tape<T>, triples: &[Triple], targets: &[T]) -> Result<NodeId, KgeError> {
        let rep = self.representation(tape, triples)?;
        Ok(match self.logit_from_rep(tape, rep)? {
            Some(z) => tape.bce_logits(z, targets)?,
            None => {
                let p = self.score_from_rep(tape, rep)?;
                tape.bce(p, targets)?
            }
        })
    }

    pub fn score<T: Scalar>(&self, tape: &mut Tape<T>, triples: &[Triple]) -> Result<NodeId, KgeError> {
        let rep = self.representation(tape, triples)?;
        self.score_from_rep(tape, rep)
    }

    /// Representation computed without a tape.
    pub fn representation_direct<T: Scalar>(&self, store: &ParamStore<T>, t: &Triple) -> Result<Vec<T>, KgeError> {
        self.check(t)?;
        let row = |p: ParamId, i: usize| store.get(p).row(i);
        let (h, r, tl) = (t.head.index(), t.relation.index(), t.tail.index());
        let (a, c, e) = (row(self.ent, h), row(self.rel, r), row(self.ent, tl));
        Ok(match self.spec.scorer {
            ScorerKind::TransE => (0..a.len()).map(|i| a[i] + c[i] - e[i]).collect(),
            ScorerKind::DistMult => (0..a.len()).map(|i| a[i] * c[i] * e[i]).collect(),
            ScorerKind::ComplEx => {
                let (b, d, f) =
                    (row(self.ent_im.unwrap(), h), row(self.rel_im.unwrap(), r), row(self.ent_im.unwrap(), tl));
                let mut re = Vec::with_capacity(a.len() * 2);
                let mut im = Vec::with_capacity(a.len());
                for i in 0..a.len() {
                    let p = a[i] * c[i] - b[i] * d[i];
                    let q = a[i] * d[i] + b[i] * c[i];
                    re.push(p * e[i] + q * f[i]);
                    im.push(q * e[i] - p * f[i]);
                }
                re.extend(im);
                re
            }
        })
    }

    pub fn score_from_rep_direct<T: Scalar>(&self, rep: &[T]) -> T {
        match self.spec.scorer {
            ScorerKind::TransE => T::one() / (T::one() + rep.iter().map(|&x| x * x).sum::<T>().sqrt()),
            ScorerKind::DistMult => sigmoid(rep.iter().copied().sum()),
            ScorerKind::ComplEx => sigmoid(rep[..self.spec.dim / 2].iter().copied().sum()),
        }
    }

    pub fn score_direct<T: Scalar>(&self, store: &ParamStore<T>, t: &Triple) -> Result<T, KgeError> {
        Ok(self.score_from_rep_direct(&self.representation_direct(store, t)?))
    }

    /// Strictly increasing function of the score that does not saturate:
    /// the logit, or the negated distance for TransE. Used for ranking.
    pub fn ranking_score_direct<T: Scalar>(&self, store: &ParamStore<T>, t: &Triple) -> Result<T, KgeError> {
        let rep = self.representation_direct(store, t)?;
        Ok(match self.spec.scorer {
            ScorerKind::TransE => -rep.iter().map(|&x| x * x).sum::<T>().sqrt(),
            ScorerKind::DistMult => rep.iter().copied().sum(),
            ScorerKind::ComplEx => rep[..self.spec.dim / 2].iter().copied().sum(),
        })
    }

    pub fn checkpoint(&self, store: &ParamStore<f32>, adam: Option<&crate::autodiff::Adam<f32>>, config: &KgeConfig) -> Checkpoint {
        let echo = serde_json::json!({ "spec": self.spec, "config": config });
        Checkpoint::capture(CHECKPOINT_KIND, &echo.to_string(), store, adam)
    }

    /// Rebuild a model and its store from a checkpoint written by
    /// [`KgeModel::checkpoint`].
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, ParamStore<f32>, KgeConfig), KgeError> {
        if ck.kind != CHECKPOINT_KIND {
            return Err(AutodiffError::Checkpoint(format!("expected a `{CHECKPOINT_KIND}` checkpoint, found `{}`", ck.kind)).into());
        }
        let echo: serde_json::Value =
            serde_json::from_str(&ck.config).map_err(|e| AutodiffError::Checkpoint(format!("config echo: {e}")))?;
        let spec: KgeSpec = serde_json::from_value(echo["spec"].clone()).map_err(|e| AutodiffError::Checkpoint(format!("spec: {e}")))?;
        let config: KgeConfig =
            serde_json::from_value(echo["config"].clone()).map_err(|e| AutodiffError::Checkpoint(format!("config: {e}")))?;
        let mut store = ParamStore::new();
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let model = KgeModel::new(spec, &mut store, &mut rng)?;
        ck.restore(&mut store, None)?;
        Ok((model, store, config))
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}
