use ndarray::{Array2, ArrayView2};

use super::{Mode, TrainConfig, TrainError};
use crate::classifier::{
    argmax, bce_loss, cross_entropy, incremental_ce, PairBatch, RelationClassifier,
};
use crate::clustering::{
    clustering_loss, AutoencoderPair, ClusteringGrads, ClusteringLoss, ClusteringTerms,
};
use crate::data::{EncodedBatch, RelationInstance};
use crate::nn::{AdamConfig, AdamState, Mlp};
use crate::rng::{stream_rng, Stream};

/// Every trainable tensor plus the optimizer state of its group.
#[derive(Debug, Clone)]
pub struct ModelState {
    /// Θ: token adapter, absent when disabled.
    pub adapter: Option<Mlp>,
    /// Φ: encoder `g` and decoder `d`.
    pub autoencoder: AutoencoderPair,
    /// Ψ: pre-defined (or, in incremental mode, extended) classifier `η^ℓ`.
    pub eta_labeled: RelationClassifier,
    /// Ψ: novel-relation classifier `η^u`.
    pub eta_novel: RelationClassifier,
    pub opt_adapter: Option<AdamState>,
    pub opt_clustering: AdamState,
    pub opt_classifiers: AdamState,
    pub num_predefined: usize,
    pub num_novel: usize,
    pub embedding_dim: usize,
    pub mode: Mode,
}

/// Classification objective split into its parts (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ClsBreakdown {
    /// Cross-entropy on the labeled batch.
    pub ce: f64,
    pub bce: f64,
    /// Incremental mode: cross-entropy of `η^ℓ` against shifted pseudo labels,
    /// before the `μ` weight.
    pub unlabeled_ce: f64,
    pub mu: f64,
    pub total: f64,
}

/// Gradients of the classification objective.
#[derive(Debug, Clone)]
pub struct ClsGrads {
    pub adapter: Option<Vec<f64>>,
    pub eta_labeled: Vec<f64>,
    pub eta_novel: Vec<f64>,
}

impl ClsGrads {
    /// Same layout as [`ModelState::classification_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = self.adapter.clone().unwrap_or_default();
        out.extend_from_slice(&self.eta_labeled);
        out.extend_from_slice(&self.eta_novel);
        out
    }
}

/// Values held fixed when the classification objective is probed by finite
/// differences: the constant pair targets and, in incremental mode, the
/// pseudo labels of the unlabeled batch.
#[derive(Debug, Clone)]
pub struct FrozenTargets {
    pub novel_probs: Array2<f64>,
    pub shifted_pseudo: Vec<usize>,
}

fn add_into(acc: &mut [f64], other: &[f64]) {
    for (a, b) in acc.iter_mut().zip(other) {
        *a += b;
    }
}

impl ModelState {
    pub fn new(
        num_predefined: usize,
        num_novel: usize,
        embedding_dim: usize,
        config: &TrainConfig,
    ) -> Result<Self, TrainError> {
        let mut rng = stream_rng(config.seed, Stream::Init, 0);
        let adapter = if config.use_adapter {
            Some(Mlp::near_identity(
                embedding_dim,
                config.adapter_init_noise,
                &mut rng,
            )?)
        } else {
            None
        };
        let d = 2 * embedding_dim;
        let autoencoder = AutoencoderPair::new(
            d,
            &config.hidden_dims,
            config.bottleneck_dim,
            config.effective_lambda(),
            &mut rng,
        )?;
        let labeled_classes = match config.mode {
            Mode::Standard => num_predefined,
            Mode::Incremental => num_predefined + num_novel,
        };
        let eta_labeled = RelationClassifier::new(d, labeled_classes, &mut rng)?;
        let eta_novel = RelationClassifier::new(d, num_novel, &mut rng)?;
        let adam = AdamConfig::with_learning_rate(config.learning_rate);
        let opt_adapter = adapter
            .as_ref()
            .map(|a| AdamState::new(adam, &[a.params().len()]));
        let opt_clustering = AdamState::new(adam, &autoencoder.param_shapes());
        let opt_classifiers = AdamState::new(
            adam,
            &[
                eta_labeled.body.params().len(),
                eta_novel.body.params().len(),
            ],
        );
        Ok(Self {
            adapter,
            autoencoder,
            eta_labeled,
            eta_novel,
            opt_adapter,
            opt_clustering,
            opt_classifiers,
            num_predefined,
            num_novel,
            embedding_dim,
            mode: config.mode,
        })
    }

    /// Entity-pair vectors `h` (through the adapter when present).
    pub fn encode(&self, instances: &[&RelationInstance]) -> Result<EncodedBatch, TrainError> {
        Ok(EncodedBatch::encode(instances, self.adapter.as_ref())?)
    }

    /// Clustering-space representations `h' = g(h)`.
    pub fn embed(&self, instances: &[&RelationInstance]) -> Result<Array2<f64>, TrainError> {
        let h = self.encode(instances)?.h;
        Ok(self.autoencoder.embed(h.view())?)
    }

    /// Novel-relation ids from `η^u`.
    pub fn predict_novel(&self, instances: &[&RelationInstance]) -> Result<Vec<usize>, TrainError> {
        let h = self.encode(instances)?.h;
        Ok(self.eta_novel.predict_batch(h.view())?)
    }

    /// Class ids from `η^ℓ`; in incremental mode ids at or above the number
    /// of pre-defined relations denote novel relations.
    pub fn predict_labeled(
        &self,
        instances: &[&RelationInstance],
    ) -> Result<Vec<usize>, TrainError> {
        let h = self.encode(instances)?.h;
        Ok(self.eta_labeled.predict_batch(h.view())?)
    }

    /// Pseudo labels read off `η^u` and shifted past the pre-defined ids.
    pub fn shifted_pseudo_labels(&self, h: ArrayView2<'_, f64>) -> Result<Vec<usize>, TrainError> {
        let logits = self.eta_novel.logits(h)?;
        Ok(logits
            .rows()
            .into_iter()
            .map(|r| argmax(&r.to_vec()) + self.num_predefined)
            .collect())
    }

    /// Classification objective and its gradients with respect to Θ and Ψ.
    ///
    /// Standard mode: `CE(η^ℓ, labeled) + BCE(η^u, unlabeled)`.
    /// Incremental mode: `CE(η^ℓ, labeled) + μ·CE(η^ℓ, pseudo) + BCE(η^u,
    /// unlabeled)`, pseudo labels being `argmax η^u` shifted by the number of
    /// pre-defined relations. `include_ce = false` drops every cross-entropy
    /// term.
    #[allow(clippy::too_many_arguments)]
    pub fn cls_gradients(
        &self,
        labeled: &[&RelationInstance],
        labels: &[usize],
        unlabeled: &[&RelationInstance],
        pairs: &PairBatch,
        sigma: f64,
        include_ce: bool,
        mu: f64,
        frozen: Option<&FrozenTargets>,
    ) -> Result<(ClsBreakdown, ClsGrads), TrainError> {
        let enc_l = self.encode(labeled)?;
        let enc_u = self.encode(unlabeled)?;
        let (logits_ll, tape_ll) = self.eta_labeled.body.forward(enc_l.h.view())?;
        let (logits_un, tape_un) = self.eta_novel.body.forward(enc_u.h.view())?;

        let bce = bce_loss(
            logits_un.view(),
            frozen.map(|f| f.novel_probs.view()),
            pairs,
            sigma,
        )?;
        let mut out = ClsBreakdown {
            bce: bce.value,
            mu,
            ..ClsBreakdown::default()
        };
        let g_un = self
            .eta_novel
            .body
            .backward(&tape_un, bce.d_logits.view())?;
        let mut dh_u = g_un.input;
        let eta_novel = g_un.params;

        let (eta_labeled, dh_l) = match (self.mode, include_ce) {
            (_, false) => {
                let zero = Array2::zeros(logits_ll.dim());
                let g = self.eta_labeled.body.backward(&tape_ll, zero.view())?;
                (g.params, g.input)
            }
            (Mode::Standard, true) => {
                let ce = cross_entropy(logits_ll.view(), labels)?;
                out.ce = ce.value;
                let g = self
                    .eta_labeled
                    .body
                    .backward(&tape_ll, ce.d_logits.view())?;
                (g.params, g.input)
            }
            (Mode::Incremental, true) => {
                let pseudo = match frozen {
                    Some(f) => f.shifted_pseudo.clone(),
                    None => self.shifted_pseudo_labels(enc_u.h.view())?,
                };
                let (logits_lu, tape_lu) = self.eta_labeled.body.forward(enc_u.h.view())?;
                let inc = incremental_ce(logits_ll.view(), labels, logits_lu.view(), &pseudo, mu)?;
                out.ce = inc.labeled;
                out.unlabeled_ce = inc.unlabeled;
                let g_l = self
                    .eta_labeled
                    .body
                    .backward(&tape_ll, inc.d_labeled_logits.view())?;
                let g_lu = self
                    .eta_labeled
                    .body
                    .backward(&tape_lu, inc.d_unlabeled_logits.view())?;
                let mut params = g_l.params;
                add_into(&mut params, &g_lu.params);
                dh_u += &g_lu.input;
                (params, g_l.input)
            }
        };
        out.total = out.ce + mu * out.unlabeled_ce + out.bce;

        let adapter = match &self.adapter {
            Some(a) => {
                let mut g = enc_l.adapter_grads(a, dh_l.view())?;
                add_into(&mut g, &enc_u.adapter_grads(a, dh_u.view())?);
                Some(g)
            }
            None => None,
        };
        Ok((
            out,
            ClsGrads {
                adapter,
                eta_labeled,
                eta_novel,
            },
        ))
    }

    /// One Adam step on Θ and Ψ.
    pub fn apply_cls(&mut self, grads: &ClsGrads) -> Result<(), TrainError> {
        if let (Some(adapter), Some(opt), Some(g)) = (
            self.adapter.as_mut(),
            self.opt_adapter.as_mut(),
            grads.adapter.as_ref(),
        ) {
            opt.step(&mut [adapter.params_mut()], &[g])?;
        }
        let (l, u) = (&mut self.eta_labeled.body, &mut self.eta_novel.body);
        self.opt_classifiers.step(
            &mut [l.params_mut(), u.params_mut()],
            &[&grads.eta_labeled, &grads.eta_novel],
        )?;
        Ok(())
    }

    /// Clustering objective on a labeled batch and its gradients with respect
    /// to Φ. The adapter is not updated by this objective.
    pub fn clustering_gradients(
        &self,
        labeled: &[&RelationInstance],
        labels: &[usize],
        terms: ClusteringTerms,
    ) -> Result<(ClusteringLoss, ClusteringGrads), TrainError> {
        let h = self.encode(labeled)?.h;
        Ok(clustering_loss(
            h.view(),
            Some(labels),
            self.num_predefined,
            &self.autoencoder,
            terms,
        )?)
    }

    /// Θ and Ψ as one flat vector: adapter, then `η^ℓ`, then `η^u`.
    pub fn classification_params(&self) -> Vec<f64> {
        let mut out = self
            .adapter
            .as_ref()
            .map(|a| a.params().to_vec())
            .unwrap_or_default();
        out.extend_from_slice(self.eta_labeled.body.params());
        out.extend_from_slice(self.eta_novel.body.params());
        out
    }

    /// Inverse of [`Self::classification_params`].
    pub fn set_classification_params(&mut self, flat: &[f64]) {
        let mut rest = flat;
        if let Some(a) = self.adapter.as_mut() {
            let n = a.params().len();
            a.params_mut().copy_from_slice(&rest[..n]);
            rest = &rest[n..];
        }
        let n = self.eta_labeled.body.params().len();
        self.eta_labeled
            .body
            .params_mut()
            .copy_from_slice(&rest[..n]);
        self.eta_novel.body.params_mut().copy_from_slice(&rest[n..]);
    }

    /// Φ as one flat vector: encoder, then decoder.
    pub fn clustering_params(&self) -> Vec<f64> {
        let mut out = self.autoencoder.encoder.params().to_vec();
        out.extend_from_slice(self.autoencoder.decoder.params());
        out
    }

    /// Inverse of [`Self::clustering_params`].
    pub fn set_clustering_params(&mut self, flat: &[f64]) {
        let n = self.autoencoder.encoder.params().len();
        self.autoencoder
            .encoder
            .params_mut()
            .copy_from_slice(&flat[..n]);
        self.autoencoder
            .decoder
            .params_mut()
            .copy_from_slice(&flat[n..]);
    }
}
