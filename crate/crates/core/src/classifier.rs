//! Relation classifiers and their losses.
//!
//! Novel relations are learned from pairwise constraints rather than cluster
//! ids, because k-means numbering changes from one epoch to the next. Two
//! instances in the same pseudo cluster should produce similar output
//! distributions (small symmetric KL); instances in different clusters should
//! be at least `σ` apart in each direction (hinge on KL).
//!
//! In each one-sided KL term the first distribution is a constant target: it
//! receives no gradient. Both directions are always computed, so every
//! instance of a pair is trained.

use ndarray::{Array2, ArrayView2};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{Mlp, NnError};
use crate::rng::Rng;

/// Lower bound applied to probabilities before taking logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ClassifierError {
    #[error("distribution length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("pair ({0}, {1}) outside the batch")]
    PairOutOfRange(usize, usize),
    #[error("{0}")]
    Mode(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Linear map from entity-pair vectors to class logits.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationClassifier {
    pub body: Mlp,
}

impl RelationClassifier {
    pub fn new(
        input_dim: usize,
        num_classes: usize,
        rng: &mut Rng,
    ) -> Result<Self, ClassifierError> {
        Ok(Self {
            body: Mlp::new(&[input_dim, num_classes], rng)?,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.body.output_dim()
    }

    pub fn logits(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClassifierError> {
        Ok(self.body.predict(h)?)
    }

    /// Class distribution for one entity-pair vector.
    pub fn classify(&self, h: &[f64]) -> Result<Vec<f64>, ClassifierError> {
        let (logits, _) = self.body.forward_vec(h)?;
        Ok(softmax(&logits))
    }

    pub fn predict(&self, h: &[f64]) -> Result<usize, ClassifierError> {
        Ok(argmax(&self.classify(h)?))
    }

    /// Predictions for every row of `h`.
    pub fn predict_batch(&self, h: ArrayView2<'_, f64>) -> Result<Vec<usize>, ClassifierError> {
        let logits = self.logits(h)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| argmax(r.as_slice().unwrap()))
            .collect())
    }
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Row-wise softmax.
pub fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = Array2::zeros(logits.dim());
    for (mut dst, src) in out.rows_mut().into_iter().zip(logits.rows()) {
        for (d, v) in dst.iter_mut().zip(softmax(&src.to_vec())) {
            *d = v;
        }
    }
    out
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `Σ p_c ln(p_c / q_c)` with natural logs and both probabilities floored at
/// [`PROB_FLOOR`]. Terms with `p_c = 0` contribute nothing.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64, ClassifierError> {
    if p.len() != q.len() {
        return Err(ClassifierError::LengthMismatch(p.len(), q.len()));
    }
    Ok(p.iter()
        .zip(q)
        .filter(|(&pc, _)| pc > 0.0)
        .map(|(&pc, &qc)| pc * (pc.max(PROB_FLOOR).ln() - qc.max(PROB_FLOOR).ln()))
        .sum())
}

/// Gradient of `KL(target ‖ softmax(z))` with respect to the logits `z`,
/// the target held constant. Floored coordinates contribute no gradient.
fn kl_grad_logits(target: &[f64], q: &[f64], out: &mut [f64], scale: f64) {
    let mut mass = 0.0;
    for (&p, &qc) in target.iter().zip(q) {
        if qc >= PROB_FLOOR {
            mass += p;
        }
    }
    for ((o, &p), &qc) in out.iter_mut().zip(target).zip(q) {
        let direct = if qc >= PROB_FLOOR { p } else { 0.0 };
        *o += scale * (qc * mass - direct);
    }
}

/// One-sided KL with an explicit zero gradient for the constant side.
#[derive(Debug, Clone, PartialEq)]
pub struct DetachedKl {
    pub value: f64,
    /// Always zero: the target distribution is treated as a constant.
    pub target_logit_grad: Vec<f64>,
    pub live_logit_grad: Vec<f64>,
}

/// `KL(P* ‖ Q)` for `P = softmax(target_logits)`,
/// `Q = softmax(live_logits)`; only `Q`'s logits receive gradient.
pub fn detached_kl(
    target_logits: &[f64],
    live_logits: &[f64],
) -> Result<DetachedKl, ClassifierError> {
    let p = softmax(target_logits);
    let q = softmax(live_logits);
    let value = kl_divergence(&p, &q)?;
    let mut live = vec![0.0; q.len()];
    kl_grad_logits(&p, &q, &mut live, 1.0);
    Ok(DetachedKl {
        value,
        target_logit_grad: vec![0.0; p.len()],
        live_logit_grad: live,
    })
}

/// `max(0, σ − e)`.
pub fn hinge(e: f64, sigma: f64) -> f64 {
    (sigma - e).max(0.0)
}

/// `KL(P*‖Q) + KL(Q*‖P)` for a pair in the same cluster.
pub fn pair_loss_same(p: &[f64], q: &[f64]) -> Result<f64, ClassifierError> {
    Ok(kl_divergence(p, q)? + kl_divergence(q, p)?)
}

/// Hinged KL in both directions for a pair in different clusters.
pub fn pair_loss_diff(p: &[f64], q: &[f64], sigma: f64) -> Result<f64, ClassifierError> {
    Ok(hinge(kl_divergence(p, q)?, sigma) + hinge(kl_divergence(q, p)?, sigma))
}

/// Unordered index pairs over an unlabeled minibatch, with same-cluster flags.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairBatch {
    pub pairs: Vec<(usize, usize)>,
    pub same: Vec<bool>,
}

impl PairBatch {
    /// All pairs `i < j` of the batch, or a seeded sample of `cap` of them,
    /// kept in sorted order.
    pub fn from_pseudo_labels(labels: &[usize], cap: Option<usize>, rng: &mut Rng) -> Self {
        let n = labels.len();
        let total = n * n.saturating_sub(1) / 2;
        let mut flat: Vec<usize> = match cap {
            Some(c) if c < total => sample(rng, total, c).into_vec(),
            _ => (0..total).collect(),
        };
        flat.sort_unstable();
        // Decode flat indices in row-major order over the upper triangle.
        let mut pairs = Vec::with_capacity(flat.len());
        let mut it = flat.into_iter().peekable();
        let mut base = 0;
        for i in 0..n {
            let row_len = n - i - 1;
            while let Some(&f) = it.peek() {
                if f >= base + row_len {
                    break;
                }
                pairs.push((i, i + 1 + (f - base)));
                it.next();
            }
            base += row_len;
        }
        let same = pairs.iter().map(|&(i, j)| labels[i] == labels[j]).collect();
        Self { pairs, same }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Loss value with its gradient on the logits that produced it.
#[derive(Debug, Clone)]
pub struct LossWithGrad {
    pub value: f64,
    pub d_logits: Array2<f64>,
}

/// Pairwise contrastive loss averaged over pairs.
///
/// `targets` supplies the constant (starred) distributions; pass `None` to
/// use the current softmax of `logits`, which is the training setting. An
/// empty pair set gives 0.
pub fn bce_loss(
    logits: ArrayView2<'_, f64>,
    targets: Option<ArrayView2<'_, f64>>,
    pairs: &PairBatch,
    sigma: f64,
) -> Result<LossWithGrad, ClassifierError> {
    let probs = softmax_rows(logits);
    let targets = match targets {
        Some(t) => {
            if t.dim() != logits.dim() {
                return Err(ClassifierError::LengthMismatch(t.ncols(), logits.ncols()));
            }
            t.to_owned()
        }
        None => probs.clone(),
    };
    let mut d_logits = Array2::zeros(logits.dim());
    if pairs.is_empty() {
        return Ok(LossWithGrad {
            value: 0.0,
            d_logits,
        });
    }
    let scale = 1.0 / pairs.len() as f64;
    let row = |m: &Array2<f64>, i: usize| m.row(i).to_vec();
    let mut total = 0.0;
    for (&(i, j), &same) in pairs.pairs.iter().zip(&pairs.same) {
        if i >= logits.nrows() || j >= logits.nrows() {
            return Err(ClassifierError::PairOutOfRange(i, j));
        }
        let (p_live, q_live) = (row(&probs, i), row(&probs, j));
        let (p_star, q_star) = (row(&targets, i), row(&targets, j));
        // KL(P*‖Q) trains j, KL(Q*‖P) trains i.
        let kl_pq = kl_divergence(&p_star, &q_live)?;
        let kl_qp = kl_divergence(&q_star, &p_live)?;
        let (value, coeff_j, coeff_i) = if same {
            (kl_pq + kl_qp, 1.0, 1.0)
        } else {
            (
                hinge(kl_pq, sigma) + hinge(kl_qp, sigma),
                if kl_pq < sigma { -1.0 } else { 0.0 },
                if kl_qp < sigma { -1.0 } else { 0.0 },
            )
        };
        total += value;
        if coeff_j != 0.0 {
            let mut g = vec![0.0; q_live.len()];
            kl_grad_logits(&p_star, &q_live, &mut g, coeff_j * scale);
            for (d, v) in d_logits.row_mut(j).iter_mut().zip(g) {
                *d += v;
            }
        }
        if coeff_i != 0.0 {
            let mut g = vec![0.0; p_live.len()];
            kl_grad_logits(&q_star, &p_live, &mut g, coeff_i * scale);
            for (d, v) in d_logits.row_mut(i).iter_mut().zip(g) {
                *d += v;
            }
        }
    }
    Ok(LossWithGrad {
        value: total * scale,
        d_logits,
    })
}

/// Mean negative log-probability of the given class per row. An empty batch
/// gives 0.
pub fn cross_entropy(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
) -> Result<LossWithGrad, ClassifierError> {
    let classes = logits.ncols();
    let n = logits.nrows();
    if labels.len() != n {
        return Err(ClassifierError::LengthMismatch(labels.len(), n));
    }
    let mut d_logits = Array2::zeros(logits.dim());
    if n == 0 {
        return Ok(LossWithGrad {
            value: 0.0,
            d_logits,
        });
    }
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(ClassifierError::LabelOutOfRange { label: y, classes });
        }
        let p = softmax(logits.row(i).as_slice().unwrap_or(&logits.row(i).to_vec()));
        total -= p[y].max(PROB_FLOOR).ln();
        if p[y] >= PROB_FLOOR {
            for (c, d) in d_logits.row_mut(i).iter_mut().enumerate() {
                *d = (p[c] - if c == y { 1.0 } else { 0.0 }) / n as f64;
            }
        }
    }
    Ok(LossWithGrad {
        value: total / n as f64,
        d_logits,
    })
}

/// Parts of the classification objective.
#[derive(Debug, Clone)]
pub struct ClsLoss {
    pub ce: f64,
    pub bce: f64,
    pub total: f64,
    pub d_labeled_logits: Array2<f64>,
    pub d_unlabeled_logits: Array2<f64>,
}

/// `L_CE` on the labeled batch plus `L_BCE` on the unlabeled batch,
/// unweighted. `include_ce = false` drops the first term.
pub fn cls_loss(
    labeled_logits: ArrayView2<'_, f64>,
    labels: &[usize],
    unlabeled_logits: ArrayView2<'_, f64>,
    targets: Option<ArrayView2<'_, f64>>,
    pairs: &PairBatch,
    sigma: f64,
    include_ce: bool,
) -> Result<ClsLoss, ClassifierError> {
    let ce = if include_ce {
        cross_entropy(labeled_logits, labels)?
    } else {
        LossWithGrad {
            value: 0.0,
            d_logits: Array2::zeros(labeled_logits.dim()),
        }
    };
    let bce = bce_loss(unlabeled_logits, targets, pairs, sigma)?;
    Ok(ClsLoss {
        ce: ce.value,
        bce: bce.value,
        total: ce.value + bce.value,
        d_labeled_logits: ce.d_logits,
        d_unlabeled_logits: bce.d_logits,
    })
}

/// Incremental cross-entropy over the extended label space:
/// `CE(labeled) + μ · CE(unlabeled, pseudo)`. The pseudo labels must already
/// be offset by the number of pre-defined relations.
#[derive(Debug, Clone)]
pub struct IncrementalCe {
    pub labeled: f64,
    pub unlabeled: f64,
    pub mu: f64,
    pub total: f64,
    pub d_labeled_logits: Array2<f64>,
    pub d_unlabeled_logits: Array2<f64>,
}

pub fn incremental_ce(
    labeled_logits: ArrayView2<'_, f64>,
    labels: &[usize],
    unlabeled_logits: ArrayView2<'_, f64>,
    shifted_pseudo: &[usize],
    mu: f64,
) -> Result<IncrementalCe, ClassifierError> {
    let l = cross_entropy(labeled_logits, labels)?;
    let u = cross_entropy(unlabeled_logits, shifted_pseudo)?;
    Ok(IncrementalCe {
        labeled: l.value,
        unlabeled: u.value,
        mu,
        total: l.value + mu * u.value,
        d_labeled_logits: l.d_logits,
        d_unlabeled_logits: u.d_logits * mu,
    })
}

/// Ramp-up weight `μ0 · exp(−5 (1 − t/T)²)`, held at `μ0` once `t ≥ T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RampUp {
    pub mu0: f64,
    pub length: f64,
}

impl RampUp {
    pub fn value(&self, t: f64) -> f64 {
        ramp_up(t, self.mu0, self.length)
    }
}

pub fn ramp_up(t: f64, mu0: f64, length: f64) -> f64 {
    if t >= length {
        return mu0;
    }
    let phase = 1.0 - t.max(0.0) / length;
    mu0 * (-5.0 * phase * phase).exp()
}
