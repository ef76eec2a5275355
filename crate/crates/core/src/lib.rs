//! Relation-oriented clustering for open relation extraction.
//!
//! Labeled instances of pre-defined relations shape a low-dimensional,
//! cluster-friendly space (center loss plus an autoencoder reconstruction
//! term). k-means in that space yields pseudo labels for unlabeled instances,
//! which in turn train a novel-relation classifier through a pairwise KL
//! contrastive loss. The two stages alternate until the pseudo labels settle.
//!
//! Module map:
//! - [`data`]: instances, datasets, entity-pair encoding, JSONL and synthetic data
//! - [`nn`]: perceptrons, Adam and finite-difference checks
//! - [`clustering`]: autoencoder, center loss, k-means
//! - [`classifier`]: relation classifiers and their losses
//! - [`trainer`]: the iterative joint training loop and checkpoints
//! - [`metrics`]: B-cubed, V-measure, ARI
//! - [`projection`]: 2-D PCA of learned representations
//! - [`verify`]: finite-difference checks of every training objective

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod clustering;
pub mod data;
pub mod metrics;
pub mod nn;
pub mod projection;
pub mod rng;
pub mod trainer;
pub mod verify;
