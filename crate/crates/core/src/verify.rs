//! Finite-difference verification of every training objective on random
//! small models.
//!
//! Each configuration draws its own sizes, hyperparameters and instances,
//! builds a [`ModelState`], moves all parameters off their initial values
//! (zero biases put ReLU pre-activations exactly on the kink) and compares
//! analytic gradients with central differences for:
//!
//! - `L_C` with respect to the encoder and decoder,
//! - `L_CE`, `L_BCE` and `L_CLS` with respect to the adapter and both
//!   classifiers,
//! - the incremental cross-entropy plus `L_BCE` in incremental mode.
//!
//! Starred distributions and incremental pseudo labels are frozen at the
//! probe point, which is what the analytic gradient treats as constant.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::classifier::{detached_kl, softmax, softmax_rows, PairBatch};
use crate::clustering::ClusteringTerms;
use crate::data::{RelationInstance, Span};
use crate::nn::{finite_diff_check, GradCheck};
use crate::rng::{stream_rng, Rng, Stream};
use crate::trainer::{FrozenTargets, Mode, ModelState, TrainConfig, TrainError};

/// Result of one objective on one random configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCase {
    pub objective: String,
    pub config: usize,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradSuiteReport {
    pub seed: u64,
    pub step: f64,
    pub cases: Vec<GradCase>,
    pub max_relative_error: f64,
    /// Largest gradient magnitude reaching a starred (constant) distribution.
    /// Must be exactly 0.
    pub detached_max_abs_grad: f64,
    /// Whether the training-time pair loss gradient equals the gradient with
    /// explicitly frozen targets, bit for bit.
    pub detached_matches_frozen: bool,
}

struct Probe {
    state: ModelState,
    labeled: Vec<RelationInstance>,
    labels: Vec<usize>,
    unlabeled: Vec<RelationInstance>,
    pairs: PairBatch,
    sigma: f64,
    target_seed: u64,
}

fn random_instance(rng: &mut Rng, k: usize, id: String, label: Option<usize>) -> RelationInstance {
    let n = rng.random_range(5..=8);
    let head_len = rng.random_range(1..=2);
    let tail_len = rng.random_range(1..=2);
    let head_start = rng.random_range(0..=1);
    let tail_start = rng.random_range(head_start + head_len..=n - tail_len);
    RelationInstance {
        id,
        tokens: (0..n).map(|i| format!("t{i}")).collect(),
        token_vecs: (0..n)
            .map(|_| (0..k).map(|_| rng.random_range(-2.0f32..2.0)).collect())
            .collect(),
        head: Span(head_start, head_start + head_len),
        tail: Span(tail_start, tail_start + tail_len),
        label,
    }
}

fn build_probe(index: usize, seed: u64, mode: Mode) -> Result<Probe, TrainError> {
    let mut rng = stream_rng(seed, Stream::GradCheck, index as u64);
    let k = rng.random_range(2..=4);
    let c_l = rng.random_range(2..=3);
    let c_u = rng.random_range(2..=3);
    let config = TrainConfig {
        seed: seed.wrapping_add(index as u64),
        mode,
        use_adapter: index % 3 != 2,
        hidden_dims: vec![rng.random_range(3..=6)],
        bottleneck_dim: rng.random_range(2..=3),
        lambda: rng.random_range(0.1..1.0),
        ..TrainConfig::default()
    };
    let mut state = ModelState::new(c_l, c_u, k, &config)?;
    let mut cls = state.classification_params();
    cls.iter_mut()
        .for_each(|p| *p += rng.random_range(-0.1..0.1));
    state.set_classification_params(&cls);
    let mut clu = state.clustering_params();
    clu.iter_mut()
        .for_each(|p| *p += rng.random_range(-0.1..0.1));
    state.set_clustering_params(&clu);

    let n_l = rng.random_range(3..=6);
    let n_u = rng.random_range(3..=6);
    // Every pre-defined class appears at least once when the batch allows.
    let labels: Vec<usize> = (0..n_l)
        .map(|i| if i < c_l { i } else { rng.random_range(0..c_l) })
        .collect();
    let labeled = labels
        .iter()
        .enumerate()
        .map(|(i, &y)| random_instance(&mut rng, k, format!("L{i}"), Some(y)))
        .collect();
    let unlabeled = (0..n_u)
        .map(|i| random_instance(&mut rng, k, format!("U{i}"), None))
        .collect();
    let pseudo: Vec<usize> = (0..n_u).map(|_| rng.random_range(0..c_u)).collect();
    let pairs = PairBatch::from_pseudo_labels(&pseudo, None, &mut rng);
    Ok(Probe {
        state,
        labeled,
        labels,
        unlabeled,
        pairs,
        sigma: rng.random_range(0.5..3.0),
        target_seed: rng.random(),
    })
}

impl Probe {
    fn refs(v: &[RelationInstance]) -> Vec<&RelationInstance> {
        v.iter().collect()
    }

    /// Targets equal to the live distributions, as during training.
    fn frozen(&self) -> Result<FrozenTargets, TrainError> {
        let u = Self::refs(&self.unlabeled);
        let h = self.state.encode(&u)?.h;
        Ok(FrozenTargets {
            novel_probs: softmax_rows(self.state.eta_novel.logits(h.view())?.view()),
            shifted_pseudo: self.state.shifted_pseudo_labels(h.view())?,
        })
    }

    /// Constant targets away from the live distributions. When targets equal
    /// the live outputs, a shift shared by all logits cancels between the two
    /// one-sided terms of every pair, leaving coordinates whose exact
    /// gradient is zero and whose central difference is pure rounding.
    fn frozen_offset(&self) -> Result<FrozenTargets, TrainError> {
        let u = Self::refs(&self.unlabeled);
        let h = self.state.encode(&u)?.h;
        let mut logits = self.state.eta_novel.logits(h.view())?;
        let mut rng = stream_rng(self.target_seed, Stream::GradCheck, u64::MAX);
        logits.mapv_inplace(|v| v + rng.random_range(-1.0..1.0));
        Ok(FrozenTargets {
            novel_probs: softmax_rows(logits.view()),
            shifted_pseudo: self.state.shifted_pseudo_labels(h.view())?,
        })
    }

    /// Finite-difference check of the classification objective. `pairs` and
    /// `include_ce` select which terms are active.
    fn check_cls(
        &self,
        pairs: &PairBatch,
        include_ce: bool,
        mu: f64,
    ) -> Result<(GradCheck, usize), TrainError> {
        let frozen = self.frozen_offset()?;
        let (l, u) = (Self::refs(&self.labeled), Self::refs(&self.unlabeled));
        let params = self.state.classification_params();
        let mut probe = self.state.clone();
        let mut failure = None;
        let f = |p: &[f64]| {
            probe.set_classification_params(p);
            match probe.cls_gradients(
                &l,
                &self.labels,
                &u,
                pairs,
                self.sigma,
                include_ce,
                mu,
                Some(&frozen),
            ) {
                Ok((loss, grads)) => (loss.total, grads.flatten()),
                Err(e) => {
                    failure.get_or_insert(e);
                    (f64::NAN, vec![0.0; p.len()])
                }
            }
        };
        let result = finite_diff_check(f, &params, FD_STEP);
        if let Some(e) = failure {
            return Err(e);
        }
        Ok((result?, params.len()))
    }

    fn check_clustering(&self) -> Result<(GradCheck, usize), TrainError> {
        let l = Self::refs(&self.labeled);
        let params = self.state.clustering_params();
        let mut probe = self.state.clone();
        let mut failure = None;
        let f = |p: &[f64]| {
            probe.set_clustering_params(p);
            match probe.clustering_gradients(&l, &self.labels, ClusteringTerms::default()) {
                Ok((loss, g)) => {
                    let mut grad = g.encoder;
                    grad.extend(g.decoder);
                    (loss.total, grad)
                }
                Err(e) => {
                    failure.get_or_insert(e);
                    (f64::NAN, vec![0.0; p.len()])
                }
            }
        };
        let result = finite_diff_check(f, &params, FD_STEP);
        if let Some(e) = failure {
            return Err(e);
        }
        Ok((result?, params.len()))
    }

    /// The training-time gradient (targets taken from the live model) must
    /// equal the gradient with the same targets passed in as constants.
    fn detached_gradient_matches(&self) -> Result<bool, TrainError> {
        let frozen = self.frozen()?;
        let (l, u) = (Self::refs(&self.labeled), Self::refs(&self.unlabeled));
        let (_, live) = self.state.cls_gradients(
            &l,
            &self.labels,
            &u,
            &self.pairs,
            self.sigma,
            true,
            1.0,
            None,
        )?;
        let (_, fixed) = self.state.cls_gradients(
            &l,
            &self.labels,
            &u,
            &self.pairs,
            self.sigma,
            true,
            1.0,
            Some(&frozen),
        )?;
        Ok(live.flatten() == fixed.flatten())
    }
}

/// Central-difference step used for every objective.
pub const FD_STEP: f64 = 1e-5;

/// Runs every objective on `num_configs` random configurations.
pub fn gradient_suite(num_configs: usize, seed: u64) -> Result<GradSuiteReport, TrainError> {
    let mut cases = Vec::new();
    let mut detached_max_abs_grad = 0.0f64;
    let mut detached_matches_frozen = true;
    let push = |cases: &mut Vec<GradCase>,
                objective: &str,
                config: usize,
                (check, n): (GradCheck, usize)| {
        cases.push(GradCase {
            objective: objective.into(),
            config,
            parameters: n,
            max_relative_error: check.max_relative_error,
            worst_index: check.worst_index,
            analytic: check.analytic,
            numeric: check.numeric,
        });
    };
    for i in 0..num_configs {
        let standard = build_probe(i, seed, Mode::Standard)?;
        let no_pairs = PairBatch {
            pairs: Vec::new(),
            same: Vec::new(),
        };
        push(&mut cases, "L_C", i, standard.check_clustering()?);
        push(
            &mut cases,
            "L_CE",
            i,
            standard.check_cls(&no_pairs, true, 0.0)?,
        );
        push(
            &mut cases,
            "L_BCE",
            i,
            standard.check_cls(&standard.pairs, false, 0.0)?,
        );
        push(
            &mut cases,
            "L_CLS",
            i,
            standard.check_cls(&standard.pairs, true, 0.0)?,
        );
        detached_matches_frozen &= standard.detached_gradient_matches()?;

        let incremental = build_probe(i, seed, Mode::Incremental)?;
        let mut rng = stream_rng(seed, Stream::GradCheck, (num_configs + i) as u64);
        let mu = rng.random_range(0.0..1.0);
        push(
            &mut cases,
            "incremental_CE",
            i,
            incremental.check_cls(&no_pairs, true, mu)?,
        );
        push(
            &mut cases,
            "incremental_CE+L_BCE",
            i,
            incremental.check_cls(&incremental.pairs, true, mu)?,
        );
        detached_matches_frozen &= incremental.detached_gradient_matches()?;

        let c = rng.random_range(2..=5);
        let p: Vec<f64> = softmax(
            &(0..c)
                .map(|_| rng.random_range(-3.0..3.0))
                .collect::<Vec<_>>(),
        );
        let q: Vec<f64> = (0..c).map(|_| rng.random_range(-3.0..3.0)).collect();
        let kl = detached_kl(&p.iter().map(|v| v.ln()).collect::<Vec<_>>(), &q)?;
        detached_max_abs_grad = kl
            .target_logit_grad
            .iter()
            .fold(detached_max_abs_grad, |m, g| m.max(g.abs()));
    }
    let max_relative_error = cases
        .iter()
        .map(|c| c.max_relative_error)
        .fold(0.0, f64::max);
    Ok(GradSuiteReport {
        seed,
        step: FD_STEP,
        cases,
        max_relative_error,
        detached_max_abs_grad,
        detached_matches_frozen,
    })
}
