//! Relation instances, datasets and entity-pair encoding.

mod encode;
mod io;
mod synthetic;

pub use encode::{encode_entity_pair, EncodedBatch, EntityPairVector};
pub use io::{load_dataset, read_jsonl, write_jsonl, LoadConfig};
pub use synthetic::{generate_synthetic, SyntheticSpec};

use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("instance {id}: {message}")]
    Invalid { id: String, message: String },
    #[error("{0}")]
    Dataset(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Half-open token interval `[start, end)`, serialized as `[start, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span(pub usize, pub usize);

impl Span {
    pub fn start(self) -> usize {
        self.0
    }

    pub fn end(self) -> usize {
        self.1
    }

    pub fn len(self) -> usize {
        self.1.saturating_sub(self.0)
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }

    pub fn range(self) -> std::ops::Range<usize> {
        self.0..self.1
    }
}

/// A sentence with marked head and tail entities.
///
/// For unlabeled instances `label` holds the hidden gold relation, which only
/// evaluation code reads.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationInstance {
    pub id: String,
    pub tokens: Vec<String>,
    pub token_vecs: Vec<Vec<f32>>,
    pub head: Span,
    pub tail: Span,
    pub label: Option<usize>,
}

impl RelationInstance {
    fn invalid(&self, message: impl Into<String>) -> DataError {
        DataError::Invalid {
            id: self.id.clone(),
            message: message.into(),
        }
    }

    /// Checks span bounds and vector shapes; returns the embedding dimension.
    pub fn validate(&self) -> Result<usize, DataError> {
        let n = self.tokens.len();
        if self.token_vecs.len() != n {
            return Err(self.invalid(format!(
                "{} tokens but {} token vectors",
                n,
                self.token_vecs.len()
            )));
        }
        for (name, span) in [("head", self.head), ("tail", self.tail)] {
            if span.start() >= span.end() {
                return Err(self.invalid(format!(
                    "empty {name} span [{}, {})",
                    span.start(),
                    span.end()
                )));
            }
            if span.end() > n {
                return Err(self.invalid(format!(
                    "{name} span [{}, {}) exceeds sentence length {n}",
                    span.start(),
                    span.end()
                )));
            }
        }
        let dim = self.token_vecs[0].len();
        if dim == 0 {
            return Err(self.invalid("token vectors are empty"));
        }
        if let Some(pos) = self.token_vecs.iter().position(|v| v.len() != dim) {
            return Err(self.invalid(format!(
                "token {pos} has dimension {} but token 0 has {dim}",
                self.token_vecs[pos].len()
            )));
        }
        Ok(dim)
    }
}

/// Labeled instances of pre-defined relations plus unlabeled instances of
/// novel relations.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub labeled: Vec<RelationInstance>,
    pub unlabeled: Vec<RelationInstance>,
    pub num_predefined: usize,
    pub num_novel: usize,
    pub embedding_dim: usize,
}

impl Dataset {
    pub fn new(
        labeled: Vec<RelationInstance>,
        unlabeled: Vec<RelationInstance>,
        num_predefined: usize,
        num_novel: usize,
    ) -> Result<Self, DataError> {
        if labeled.is_empty() {
            return Err(DataError::Dataset("labeled set is empty".into()));
        }
        if unlabeled.is_empty() {
            return Err(DataError::Dataset("unlabeled set is empty".into()));
        }
        if num_novel < 2 {
            return Err(DataError::Dataset(format!(
                "need at least 2 novel relations, got {num_novel}"
            )));
        }
        let embedding_dim = labeled[0].validate()?;
        for inst in labeled.iter().chain(&unlabeled) {
            let dim = inst.validate()?;
            if dim != embedding_dim {
                return Err(inst.invalid(format!(
                    "embedding dimension {dim} differs from dataset dimension {embedding_dim}"
                )));
            }
        }
        for inst in &labeled {
            match inst.label {
                None => return Err(inst.invalid("labeled record has no label")),
                Some(l) if l >= num_predefined => {
                    return Err(inst.invalid(format!(
                        "label {l} outside the {num_predefined} pre-defined relations"
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(Self {
            labeled,
            unlabeled,
            num_predefined,
            num_novel,
            embedding_dim,
        })
    }

    /// Dimension of entity-pair vectors (`2k`).
    pub fn pair_dim(&self) -> usize {
        2 * self.embedding_dim
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn instance(
        id: &str,
        vecs: &[&[f32]],
        head: Span,
        tail: Span,
        label: Option<usize>,
    ) -> RelationInstance {
        RelationInstance {
            id: id.into(),
            tokens: (0..vecs.len()).map(|i| format!("w{i}")).collect(),
            token_vecs: vecs.iter().map(|v| v.to_vec()).collect(),
            head,
            tail,
            label,
        }
    }

    #[test]
    fn validation_catches_bad_spans() {
        let ok = instance("a", &[&[1.0], &[2.0]], Span(0, 1), Span(1, 2), Some(0));
        assert_eq!(ok.validate().unwrap(), 1);
        let bad = instance("b", &[&[1.0], &[2.0]], Span(0, 3), Span(1, 2), Some(0));
        let err = bad.validate().unwrap_err().to_string();
        assert!(err.contains("instance b"), "{err}");
        let empty = instance("c", &[&[1.0], &[2.0]], Span(1, 1), Span(1, 2), Some(0));
        assert!(empty.validate().is_err());
    }

    #[test]
    fn ragged_vectors_are_rejected() {
        let bad = instance("r", &[&[1.0, 2.0], &[2.0]], Span(0, 1), Span(1, 2), None);
        assert!(bad.validate().is_err());
    }

    #[test]
    fn dataset_invariants() {
        let l = instance("l", &[&[1.0], &[2.0]], Span(0, 1), Span(1, 2), Some(0));
        let u = instance("u", &[&[1.0], &[2.0]], Span(0, 1), Span(1, 2), None);
        assert!(Dataset::new(vec![l.clone()], vec![u.clone()], 1, 2).is_ok());
        assert!(Dataset::new(vec![l.clone()], vec![u.clone()], 1, 1).is_err());
        let err = Dataset::new(vec![l.clone()], vec![], 1, 2).unwrap_err();
        assert_eq!(err.to_string(), "unlabeled set is empty");
        let mut missing = l.clone();
        missing.label = None;
        assert!(Dataset::new(vec![missing], vec![u.clone()], 1, 2).is_err());
        let wide = instance(
            "w",
            &[&[1.0, 0.0], &[2.0, 0.0]],
            Span(0, 1),
            Span(1, 2),
            None,
        );
        assert!(Dataset::new(vec![l], vec![u, wide], 1, 2).is_err());
    }
}
