//! Iterative joint training.
//!
//! After the autoencoder is pretrained on reconstruction alone, every outer
//! epoch does three things in order:
//!
//! 1. encode the unlabeled training instances, map them through `g` and run
//!    k-means to get fresh pseudo labels;
//! 2. update the adapter (Θ) and both classifiers (Ψ) on the classification
//!    objective, one labeled and one unlabeled minibatch per step;
//! 3. update the autoencoder (Φ) on the clustering objective over labeled
//!    minibatches.
//!
//! Training stops when fewer than `convergence_threshold` of the pseudo
//! labels change between epochs (after `min_outer_epochs`), or at
//! `max_outer_epochs`.

mod checkpoint;
mod config;
mod matching;
mod report;
mod state;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use config::{Ablation, Mode, PretrainData, Schedule, TrainConfig};
pub use matching::{change_rate, matched_agreement};
pub use report::{
    aggregate_reports, AggregateReport, DatasetSummary, EpochStats, MeanStd, TrainReport,
};
pub use state::{ClsBreakdown, ClsGrads, FrozenTargets, ModelState};

use ndarray::Axis;
use rand::seq::SliceRandom;
use thiserror::Error;

use crate::classifier::{ramp_up, ClassifierError, PairBatch};
use crate::clustering::{
    kmeans_canonical, pretrain_autoencoder, ClusterError, ClusteringTerms, PretrainOptions,
};
use crate::data::{DataError, Dataset, RelationInstance};
use crate::metrics::{MetricsError, MetricsReport};
use crate::nn::NnError;
use crate::rng::{derive_seed, stream_rng, Stream};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite {what} ({value}) at epoch {epoch}")]
    NonFinite {
        epoch: usize,
        what: String,
        value: f64,
        /// State at the start of the failing epoch; epoch 0 is pretraining.
        last_good: Box<ModelState>,
    },
    #[error("evaluation: {0}")]
    Evaluation(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Indices into the dataset's labeled and unlabeled lists, each part sorted
/// by instance id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub labeled_train: Vec<usize>,
    pub labeled_test: Vec<usize>,
    pub unlabeled_train: Vec<usize>,
    pub unlabeled_test: Vec<usize>,
}

fn split_set(
    instances: &[RelationInstance],
    fraction: f64,
    rng: &mut crate::rng::Rng,
) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..instances.len()).collect();
    idx.shuffle(rng);
    let n_test = ((fraction * instances.len() as f64).round() as usize)
        .min(instances.len().saturating_sub(1));
    let mut test = idx[..n_test].to_vec();
    let mut train = idx[n_test..].to_vec();
    train.sort_by(|&a, &b| instances[a].id.cmp(&instances[b].id).then(a.cmp(&b)));
    test.sort_by(|&a, &b| instances[a].id.cmp(&instances[b].id).then(a.cmp(&b)));
    (train, test)
}

impl Split {
    pub fn new(dataset: &Dataset, fraction: f64, seed: u64) -> Self {
        let (labeled_train, labeled_test) = split_set(
            &dataset.labeled,
            fraction,
            &mut stream_rng(seed, Stream::Split, 0),
        );
        let (unlabeled_train, unlabeled_test) = split_set(
            &dataset.unlabeled,
            fraction,
            &mut stream_rng(seed, Stream::Split, 1),
        );
        Self {
            labeled_train,
            labeled_test,
            unlabeled_train,
            unlabeled_test,
        }
    }
}

/// Trained state plus its report.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub report: TrainReport,
    pub state: ModelState,
}

fn pick<'d>(set: &'d [RelationInstance], idx: &[usize]) -> Vec<&'d RelationInstance> {
    idx.iter().map(|&i| &set[i]).collect()
}

/// Attaches the last good state to a non-finite loss raised by the
/// autoencoder.
fn with_snapshot<T>(
    result: Result<T, TrainError>,
    epoch: usize,
    snapshot: &ModelState,
) -> Result<T, TrainError> {
    result.map_err(|e| match e {
        TrainError::Cluster(ClusterError::NonFiniteLoss { what, value }) => TrainError::NonFinite {
            epoch,
            what,
            value,
            last_good: Box::new(snapshot.clone()),
        },
        other => other,
    })
}

fn finite(epoch: usize, what: &str, value: f64, snapshot: &ModelState) -> Result<(), TrainError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFinite {
            epoch,
            what: what.to_string(),
            value,
            last_good: Box::new(snapshot.clone()),
        })
    }
}

/// Drives one training run over a dataset.
pub struct Trainer<'a> {
    pub dataset: &'a Dataset,
    pub config: TrainConfig,
    pub split: Split,
    pub state: ModelState,
    pub pretrain_losses: Vec<f64>,
    previous_pseudo: Option<Vec<usize>>,
}

impl<'a> Trainer<'a> {
    pub fn new(dataset: &'a Dataset, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let split = Split::new(dataset, config.test_fraction, config.seed);
        if split.unlabeled_train.len() < dataset.num_novel {
            return Err(TrainError::Config(format!(
                "{} unlabeled training instances cannot form {} clusters",
                split.unlabeled_train.len(),
                dataset.num_novel
            )));
        }
        let state = ModelState::new(
            dataset.num_predefined,
            dataset.num_novel,
            dataset.embedding_dim,
            &config,
        )?;
        Ok(Self {
            dataset,
            config,
            split,
            state,
            pretrain_losses: Vec::new(),
            previous_pseudo: None,
        })
    }

    fn labeled_train(&self) -> Vec<&'a RelationInstance> {
        pick(&self.dataset.labeled, &self.split.labeled_train)
    }

    fn unlabeled_train(&self) -> Vec<&'a RelationInstance> {
        pick(&self.dataset.unlabeled, &self.split.unlabeled_train)
    }

    pub fn novel_test(&self) -> Vec<&'a RelationInstance> {
        pick(&self.dataset.unlabeled, &self.split.unlabeled_test)
    }

    pub fn predefined_test(&self) -> Vec<&'a RelationInstance> {
        pick(&self.dataset.labeled, &self.split.labeled_test)
    }

    /// Reconstruction-only pretraining of the autoencoder.
    pub fn pretrain(&mut self) -> Result<&[f64], TrainError> {
        let mut instances = self.labeled_train();
        if self.config.pretrain_on == PretrainData::Both {
            instances.extend(self.unlabeled_train());
        }
        let h = self.state.encode(&instances)?.h;
        let mut rng = stream_rng(self.config.seed, Stream::Shuffle, 0);
        let options = PretrainOptions {
            epochs: self.config.pretrain_epochs,
            batch_size: self.config.batch_size,
        };
        let snapshot = self.state.clone();
        let state = &mut self.state;
        let losses = pretrain_autoencoder(
            h.view(),
            &mut state.autoencoder,
            &mut state.opt_clustering,
            options,
            &mut rng,
        )
        .map_err(TrainError::from);
        self.pretrain_losses = with_snapshot(losses, 0, &snapshot)?;
        Ok(&self.pretrain_losses)
    }

    /// Pseudo labels for the unlabeled training instances: k-means on
    /// `g(f(s))` in canonical id order.
    pub fn pseudo_labels(&self, epoch: usize) -> Result<(Vec<usize>, f64), TrainError> {
        let instances = self.unlabeled_train();
        let reps = self.state.embed(&instances)?;
        let ids: Vec<&str> = instances.iter().map(|i| i.id.as_str()).collect();
        let seed = derive_seed(self.config.seed, Stream::KMeans, epoch as u64);
        let result = kmeans_canonical(
            reps.view(),
            &ids,
            self.dataset.num_novel,
            seed,
            &self.config.kmeans,
        )?;
        Ok((result.labels, result.inertia))
    }

    /// One outer epoch (numbered from 1).
    pub fn train_epoch(&mut self, epoch: usize) -> Result<EpochStats, TrainError> {
        let snapshot = self.state.clone();
        let cfg = self.config.clone();
        let labeled = self.labeled_train();
        let unlabeled = self.unlabeled_train();

        // (1) pseudo labels, regenerated before any update of this epoch.
        let (pseudo, inertia) = self.pseudo_labels(epoch)?;
        let change = match &self.previous_pseudo {
            Some(prev) => change_rate(prev, &pseudo),
            None => 1.0,
        };
        let hidden_gold: Option<Vec<usize>> = unlabeled.iter().map(|i| i.label).collect();
        let pseudo_ari = match &hidden_gold {
            Some(gold) => Some(crate::metrics::ari(&pseudo, gold)?),
            None => None,
        };

        let mu = match cfg.mode {
            Mode::Incremental => ramp_up(epoch as f64, cfg.mu0, cfg.rampup_length),
            Mode::Standard => 0.0,
        };
        let mut stats = EpochStats {
            epoch,
            mu,
            pseudo_label_change_rate: change,
            pseudo_label_ari: pseudo_ari,
            kmeans_inertia: inertia,
            ..EpochStats::default()
        };

        // (2) classification steps.
        let mut shuffle_rng = stream_rng(cfg.seed, Stream::Shuffle, epoch as u64);
        let mut pair_rng = stream_rng(cfg.seed, Stream::Pairs, epoch as u64);
        let mut l_order: Vec<usize> = (0..labeled.len()).collect();
        let mut u_order: Vec<usize> = (0..unlabeled.len()).collect();
        l_order.shuffle(&mut shuffle_rng);
        u_order.shuffle(&mut shuffle_rng);
        let l_batches: Vec<&[usize]> = l_order.chunks(cfg.batch_size).collect();
        let u_batches: Vec<&[usize]> = u_order.chunks(cfg.batch_size).collect();
        let steps = l_batches.len().max(u_batches.len());
        let terms = ClusteringTerms {
            reconstruction: !cfg.ablation.no_reconstruction,
            center: true,
        };
        self.state.autoencoder.lambda = cfg.effective_lambda();

        for step in 0..steps {
            let lb = l_batches[step % l_batches.len()];
            let ub = u_batches[step % u_batches.len()];
            let l_inst: Vec<&RelationInstance> = lb.iter().map(|&i| labeled[i]).collect();
            let l_labels: Vec<usize> = l_inst
                .iter()
                .map(|i| i.label.expect("validated labeled set"))
                .collect();
            let u_inst: Vec<&RelationInstance> = ub.iter().map(|&i| unlabeled[i]).collect();
            let u_pseudo: Vec<usize> = ub.iter().map(|&i| pseudo[i]).collect();
            let pairs = PairBatch::from_pseudo_labels(&u_pseudo, cfg.pair_cap, &mut pair_rng);
            if pairs.is_empty() {
                stats.empty_pair_batches += 1;
            }
            let (loss, grads) = self.state.cls_gradients(
                &l_inst,
                &l_labels,
                &u_inst,
                &pairs,
                cfg.sigma,
                !cfg.ablation.no_ce,
                mu,
                None,
            )?;
            finite(epoch, "classification loss", loss.total, &snapshot)?;
            stats.ce += loss.ce;
            stats.bce += loss.bce;
            stats.incremental_unlabeled_ce += loss.unlabeled_ce;
            stats.cls_total += loss.total;
            stats.cls_steps += 1;
            self.state.apply_cls(&grads)?;

            if cfg.schedule == Schedule::PerBatch {
                let (loss, grads) = with_snapshot(
                    self.state.clustering_gradients(&l_inst, &l_labels, terms),
                    epoch,
                    &snapshot,
                )?;
                finite(epoch, "clustering loss", loss.total, &snapshot)?;
                stats.add_clustering(&loss);
                let st = &mut self.state;
                st.autoencoder.apply_adam(&mut st.opt_clustering, &grads)?;
            }
        }

        // (3) clustering steps over labeled minibatches.
        if cfg.schedule == Schedule::PerEpoch {
            for lb in &l_batches {
                let l_inst: Vec<&RelationInstance> = lb.iter().map(|&i| labeled[i]).collect();
                let l_labels: Vec<usize> = l_inst
                    .iter()
                    .map(|i| i.label.expect("validated labeled set"))
                    .collect();
                let (loss, grads) = with_snapshot(
                    self.state.clustering_gradients(&l_inst, &l_labels, terms),
                    epoch,
                    &snapshot,
                )?;
                finite(epoch, "clustering loss", loss.total, &snapshot)?;
                stats.add_clustering(&loss);
                let st = &mut self.state;
                st.autoencoder.apply_adam(&mut st.opt_clustering, &grads)?;
            }
        }

        stats.finish_means();
        let novel = self.novel_test();
        if !novel.is_empty() {
            stats.novel_test = Some(evaluate(&self.state, &novel)?);
        }
        self.previous_pseudo = Some(pseudo);
        Ok(stats)
    }

    fn converged(&self, stats: &EpochStats) -> bool {
        stats.epoch >= self.config.min_outer_epochs.max(2)
            && stats.pseudo_label_change_rate < self.config.convergence_threshold
    }

    /// Pretraining, then outer epochs until convergence.
    pub fn run(mut self) -> Result<TrainOutcome, TrainError> {
        self.pretrain()?;
        let mut epochs = Vec::new();
        let mut converged = false;
        for epoch in 1..=self.config.max_outer_epochs {
            let stats = self.train_epoch(epoch)?;
            let done = self.converged(&stats);
            epochs.push(stats);
            if done {
                converged = true;
                break;
            }
        }
        let novel = self.novel_test();
        let predefined = self.predefined_test();
        let novel_test = if novel.is_empty() {
            None
        } else {
            Some(evaluate(&self.state, &novel)?)
        };
        let predefined_test_accuracy = if predefined.is_empty() {
            None
        } else {
            Some(predefined_accuracy(&self.state, &predefined)?)
        };
        let incremental_novel_test = if self.config.mode == Mode::Incremental && !novel.is_empty() {
            Some(evaluate_extended_on_novel(&self.state, &novel)?)
        } else {
            None
        };
        let report = TrainReport {
            config: self.config.clone(),
            dataset: DatasetSummary {
                num_predefined: self.dataset.num_predefined,
                num_novel: self.dataset.num_novel,
                embedding_dim: self.dataset.embedding_dim,
                labeled_train: self.split.labeled_train.len(),
                labeled_test: self.split.labeled_test.len(),
                unlabeled_train: self.split.unlabeled_train.len(),
                unlabeled_test: self.split.unlabeled_test.len(),
            },
            pretrain_losses: self.pretrain_losses.clone(),
            epochs,
            converged,
            novel_test,
            predefined_test_accuracy,
            incremental_novel_test,
            wall_clock_secs: None,
            checkpoint: None,
        };
        Ok(TrainOutcome {
            report,
            state: self.state,
        })
    }
}

/// Full training run: validation, pretraining, outer epochs, evaluation.
pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome, TrainError> {
    Trainer::new(dataset, config.clone())?.run()
}

fn gold_labels(instances: &[&RelationInstance]) -> Result<Vec<usize>, TrainError> {
    instances
        .iter()
        .map(|i| {
            i.label.ok_or_else(|| {
                TrainError::Evaluation(format!("instance {} has no gold label", i.id))
            })
        })
        .collect()
}

/// Scores novel-relation predictions (argmax of `η^u`) against gold labels.
pub fn evaluate(
    state: &ModelState,
    instances: &[&RelationInstance],
) -> Result<MetricsReport, TrainError> {
    let gold = gold_labels(instances)?;
    let pred = state.predict_novel(instances)?;
    Ok(MetricsReport::compute(&pred, &gold)?)
}

/// Accuracy of `η^ℓ` on labeled instances.
pub fn predefined_accuracy(
    state: &ModelState,
    instances: &[&RelationInstance],
) -> Result<f64, TrainError> {
    let gold = gold_labels(instances)?;
    let pred = state.predict_labeled(instances)?;
    let hits = pred.iter().zip(&gold).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / gold.len().max(1) as f64)
}

/// Clustering quality of the extended classifier restricted to novel
/// instances.
pub fn evaluate_extended_on_novel(
    state: &ModelState,
    instances: &[&RelationInstance],
) -> Result<MetricsReport, TrainError> {
    let gold = gold_labels(instances)?;
    let pred = state.predict_labeled(instances)?;
    Ok(MetricsReport::compute(&pred, &gold)?)
}

/// Rows of `h` for the given instances, for callers outside the trainer.
pub fn encode_rows(
    state: &ModelState,
    instances: &[&RelationInstance],
) -> Result<ndarray::Array2<f64>, TrainError> {
    Ok(state
        .encode(instances)?
        .h
        .select(Axis(0), &(0..instances.len()).collect::<Vec<_>>()))
}
