use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::{DataError, RelationInstance, Span};
use crate::nn::{Mlp, NnError, Tape};

/// Fixed-length entity-pair representation: max-pooled head span followed by
/// max-pooled tail span, `2k` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityPairVector(pub Vec<f64>);

impl EntityPairVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

fn adapter_error(id: &str, e: NnError) -> DataError {
    DataError::Invalid {
        id: id.to_string(),
        message: format!("adapter: {e}"),
    }
}

/// Encodes one instance, optionally passing each token vector through the
/// linear adapter before pooling.
pub fn encode_entity_pair(
    instance: &RelationInstance,
    adapter: Option<&Mlp>,
) -> Result<EntityPairVector, DataError> {
    let batch = EncodedBatch::encode(&[instance], adapter)?;
    Ok(EntityPairVector(batch.h.row(0).to_vec()))
}

/// Entity-pair vectors for a batch, plus what is needed to send gradients
/// back into the adapter.
#[derive(Debug, Clone)]
pub struct EncodedBatch {
    /// One row per instance, `2k` columns.
    pub h: Array2<f64>,
    tape: Option<Tape>,
    /// For entry `(b, j)` of `h`, the row of the stacked span-token matrix
    /// that won the max.
    winners: Vec<usize>,
    num_tokens: usize,
}

impl EncodedBatch {
    pub fn encode(
        instances: &[&RelationInstance],
        adapter: Option<&Mlp>,
    ) -> Result<Self, DataError> {
        let Some(first) = instances.first() else {
            return Err(DataError::Dataset("cannot encode an empty batch".into()));
        };
        let k = first.validate()?;
        let mut spans: Vec<(usize, Span)> = Vec::with_capacity(instances.len() * 2);
        let mut rows = 0;
        for inst in instances {
            let dim = inst.validate()?;
            if dim != k {
                return Err(DataError::Invalid {
                    id: inst.id.clone(),
                    message: format!("embedding dimension {dim}, expected {k}"),
                });
            }
            if let Some(a) = adapter {
                if a.input_dim() != k || a.output_dim() != k {
                    return Err(adapter_error(
                        &inst.id,
                        NnError::DimensionMismatch {
                            expected: k,
                            actual: a.input_dim(),
                        },
                    ));
                }
            }
            for span in [inst.head, inst.tail] {
                spans.push((rows, span));
                rows += span.len();
            }
        }

        let mut stacked = Array2::<f64>::zeros((rows, k));
        let mut r = 0;
        for inst in instances {
            for span in [inst.head, inst.tail] {
                for t in span.range() {
                    for (dst, &src) in stacked.row_mut(r).iter_mut().zip(&inst.token_vecs[t]) {
                        *dst = src as f64;
                    }
                    r += 1;
                }
            }
        }

        let (tokens, tape) = match adapter {
            Some(a) => {
                let (y, tape) = a
                    .forward(stacked.view())
                    .map_err(|e| adapter_error(&first.id, e))?;
                (y, Some(tape))
            }
            None => (stacked, None),
        };

        let mut h = Array2::<f64>::zeros((instances.len(), 2 * k));
        let mut winners = vec![0usize; instances.len() * 2 * k];
        for (b, pair) in spans.chunks(2).enumerate() {
            for (half, &(start, span)) in pair.iter().enumerate() {
                for j in 0..k {
                    let mut best_row = start;
                    let mut best = tokens[[start, j]];
                    for row in start + 1..start + span.len() {
                        // Strict comparison keeps the lowest index on ties.
                        if tokens[[row, j]] > best {
                            best = tokens[[row, j]];
                            best_row = row;
                        }
                    }
                    h[[b, half * k + j]] = best;
                    winners[b * 2 * k + half * k + j] = best_row;
                }
            }
        }

        Ok(Self {
            h,
            tape,
            winners,
            num_tokens: rows,
        })
    }

    pub fn len(&self) -> usize {
        self.h.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.h.nrows() == 0
    }

    /// Gradient of `⟨dh, h⟩` with respect to the adapter parameters. Each
    /// pooled entry routes its gradient to the token that won the max.
    pub fn adapter_grads(
        &self,
        adapter: &Mlp,
        dh: ArrayView2<'_, f64>,
    ) -> Result<Vec<f64>, NnError> {
        let tape = self.tape.as_ref().ok_or(NnError::StaleTape)?;
        if dh.dim() != self.h.dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.h.ncols(),
                actual: dh.ncols(),
            });
        }
        let two_k = self.h.ncols();
        let k = two_k / 2;
        let mut d_tokens = Array2::<f64>::zeros((self.num_tokens, k));
        for b in 0..self.h.nrows() {
            for j in 0..two_k {
                d_tokens[[self.winners[b * two_k + j], j % k]] += dh[[b, j]];
            }
        }
        Ok(adapter.backward(tape, d_tokens.view())?.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};
    use rand::Rng as _;

    fn inst(head: Span, tail: Span) -> RelationInstance {
        RelationInstance {
            id: "x".into(),
            tokens: vec!["a".into(), "b".into(), "c".into()],
            token_vecs: vec![vec![1.0, 2.0], vec![3.0, 0.0], vec![0.0, 5.0]],
            head,
            tail,
            label: None,
        }
    }

    #[test]
    fn single_token_spans_are_identity() {
        let h = encode_entity_pair(&inst(Span(0, 1), Span(2, 3)), None).unwrap();
        assert_eq!(h.0, vec![1.0, 2.0, 0.0, 5.0]);
    }

    #[test]
    fn multi_token_span_takes_componentwise_max() {
        let h = encode_entity_pair(&inst(Span(0, 2), Span(2, 3)), None).unwrap();
        assert_eq!(h.0, vec![3.0, 2.0, 0.0, 5.0]);
        assert_eq!(h.dim(), 4);
    }

    #[test]
    fn bad_span_names_instance() {
        let err = encode_entity_pair(&inst(Span(2, 2), Span(2, 3)), None).unwrap_err();
        assert!(err.to_string().contains("instance x"));
    }

    #[test]
    fn adapter_is_applied_before_pooling() {
        // Adapter negates the first coordinate: max then picks the smallest
        // original value.
        let a = Mlp::from_params(&[2, 2], vec![-1.0, 0.0, 0.0, 1.0, 0.0, 0.5]).unwrap();
        let h = encode_entity_pair(&inst(Span(0, 2), Span(2, 3)), Some(&a)).unwrap();
        assert_eq!(h.0, vec![-1.0, 2.5, 0.0, 5.5]);
    }

    #[test]
    fn adapter_gradient_matches_finite_differences() {
        let mut rng = stream_rng(11, Stream::Init, 0);
        let adapter = Mlp::near_identity(3, 0.2, &mut rng).unwrap();
        let instances: Vec<RelationInstance> = (0..4)
            .map(|i| RelationInstance {
                id: format!("i{i}"),
                tokens: vec![String::new(); 6],
                token_vecs: (0..6)
                    .map(|_| (0..3).map(|_| rng.random_range(-1.0f32..1.0)).collect())
                    .collect(),
                head: Span(0, 3),
                tail: Span(3, 6),
                label: None,
            })
            .collect();
        let refs: Vec<&RelationInstance> = instances.iter().collect();
        let weights: Vec<f64> = (0..4 * 6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dh = Array2::from_shape_vec((4, 6), weights.clone()).unwrap();
        let loss = |p: &[f64]| {
            let net = Mlp::from_params(&[3, 3], p.to_vec()).unwrap();
            let batch = EncodedBatch::encode(&refs, Some(&net)).unwrap();
            let value = (&batch.h * &dh).sum();
            let grad = batch.adapter_grads(&net, dh.view()).unwrap();
            (value, grad)
        };
        let r = crate::nn::finite_diff_check(loss, adapter.params(), 1e-6).unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
    }
}
