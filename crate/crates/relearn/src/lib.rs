//! Re-learning video features for relevance ranking.
//!
//! Off-the-shelf video features are built for classification, where
//! fine-grained relevance structure is irrelevant; ranking "more like
//! this" candidates with raw cosine similarity therefore underperforms.
//! This crate learns an affine projection φ(v) = Wv + b that pulls a
//! video's relevant peers ahead of the rest, trained with a
//! negative-enhanced triplet ranking loss on augmented features, and
//! ranks candidates by cosine similarity in the projected space.
//!
//! The pieces, in pipeline order:
//!
//! - [`datamodel`]: feature / relevance / split file formats and the
//!   in-memory [`datamodel::Dataset`].
//! - [`augment`]: feature-level augmentation — skip sampling over frame
//!   features and random perturbation of video features.
//! - [`model`]: the projection, the loss family (TRL, ITRL, NETRL, and a
//!   contrastive baseline), and analytic gradients.
//! - [`train`]: triplet sampling, Adam, LR halving, early stopping.
//! - [`predict`]: candidate indexing and the two ranking strategies.
//! - [`eval`]: recall@k / hit@k panels and their Sum.
//! - [`synth`]: a synthetic dataset generator and independent oracles,
//!   used by the test suites.
//!
//! All randomness flows through seeded [`rand::rngs::StdRng`] instances
//! and all maps are ordered, so equal seeds give byte-identical models,
//! logs, and rankings.

pub mod augment;
pub mod datamodel;
pub mod error;
pub mod eval;
pub mod model;
pub mod predict;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
