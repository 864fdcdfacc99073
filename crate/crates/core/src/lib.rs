//! Knowledge-graph completion with mined Horn rules and relational
//! reasoning networks.
//!
//! The pipeline runs in stages, each in its own module:
//!
//! 1. [`kg`] ingests triples, builds indexes, splits and computes relation statistics;
//! 2. [`rules`] mines closed Horn rules with support, head coverage,
//!    standard and PCA confidence;
//! 3. [`ground`] instantiates selected rules into a factor graph;
//! 4. [`kge`] pretrains TransE / DistMult / ComplEx atom embeddings on top of
//!    the [`autodiff`] engine;
//! 5. [`r2n`] refines atom embeddings by message passing over the factor graph;
//! 6. [`eval`] ranks candidates (MRR, Hits@k) and drives ablation grids.
//!
//! [`pipeline`] binds the stages together behind a configuration file and
//! a run manifest.

pub mod autodiff;
pub mod eval;
pub mod fsutil;
pub mod kg;
pub mod kge;
pub mod pipeline;
pub mod r2n;
pub mod ground;
pub mod rules;
pub mod synthetic;
