use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::clustering::KMeansConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// `η^ℓ` covers pre-defined relations only.
    #[default]
    Standard,
    /// `η^ℓ` is extended to pre-defined plus novel relations and trained with
    /// the ramped incremental cross-entropy.
    Incremental,
}

/// Loss terms switched off for ablation runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Center-loss weight forced to zero.
    pub no_center: bool,
    /// Reconstruction term dropped from the clustering objective.
    pub no_reconstruction: bool,
    /// Cross-entropy term dropped from the classification objective.
    pub no_ce: bool,
}

impl Ablation {
    pub fn set(&mut self, name: &str) -> Result<(), TrainError> {
        match name {
            "no_center" => self.no_center = true,
            "no_reconstruction" => self.no_reconstruction = true,
            "no_ce" => self.no_ce = true,
            other => return Err(TrainError::Config(format!("unknown ablation {other:?}"))),
        }
        Ok(())
    }
}

/// How representation/classifier updates and clustering updates alternate
/// inside one outer epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// All classification steps, then all clustering steps.
    #[default]
    PerEpoch,
    /// One clustering step after every classification step.
    PerBatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PretrainData {
    #[default]
    Both,
    Labeled,
}

/// Every knob of a training run. Defaults follow the reference
/// hyperparameters (Adam at 1e-4, batch 100, 10 pretraining epochs, σ = 2,
/// λ = 0.005, μ0 = 1, ramp-up over 10 epochs).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub pretrain_epochs: usize,
    /// Hinge margin on KL for pairs from different clusters.
    pub sigma: f64,
    /// Center-loss weight.
    pub lambda: f64,
    pub mu0: f64,
    /// Ramp-up length `T` in epochs.
    pub rampup_length: f64,
    pub max_outer_epochs: usize,
    /// Outer epochs that always run before the convergence test applies.
    pub min_outer_epochs: usize,
    /// Stop once the fraction of changed pseudo labels falls below this.
    pub convergence_threshold: f64,
    pub seed: u64,
    pub mode: Mode,
    pub ablation: Ablation,
    /// Upper bound on pairs per unlabeled minibatch; `None` uses all pairs.
    pub pair_cap: Option<usize>,
    pub schedule: Schedule,
    pub pretrain_on: PretrainData,
    /// Fraction of each set held out for evaluation.
    pub test_fraction: f64,
    /// Trainable linear map applied to token vectors before pooling.
    pub use_adapter: bool,
    /// Uniform noise amplitude on the adapter's identity initialisation.
    pub adapter_init_noise: f64,
    pub hidden_dims: Vec<usize>,
    pub bottleneck_dim: usize,
    pub kmeans: KMeansConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 100,
            pretrain_epochs: 10,
            sigma: 2.0,
            lambda: 0.005,
            mu0: 1.0,
            rampup_length: 10.0,
            max_outer_epochs: 100,
            min_outer_epochs: 50,
            convergence_threshold: 0.005,
            seed: 0,
            mode: Mode::Standard,
            ablation: Ablation::default(),
            pair_cap: None,
            schedule: Schedule::PerEpoch,
            pretrain_on: PretrainData::Both,
            test_fraction: 0.2,
            use_adapter: true,
            adapter_init_noise: 0.01,
            hidden_dims: vec![512, 512],
            bottleneck_dim: 256,
            kmeans: KMeansConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return bad(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            ));
        }
        if !(self.sigma > 0.0) {
            return bad(format!("sigma must be positive, got {}", self.sigma));
        }
        if !(self.lambda >= 0.0) {
            return bad(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.mu0 > 0.0) {
            return bad(format!("mu0 must be positive, got {}", self.mu0));
        }
        if !(self.rampup_length >= 1.0) {
            return bad(format!(
                "rampup_length must be at least 1, got {}",
                self.rampup_length
            ));
        }
        if self.batch_size < 2 {
            return bad(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            ));
        }
        if !(0.0..1.0).contains(&self.test_fraction) {
            return bad(format!(
                "test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            ));
        }
        if !(self.convergence_threshold >= 0.0) {
            return bad("convergence_threshold must be non-negative".into());
        }
        if self.bottleneck_dim == 0 || self.hidden_dims.contains(&0) {
            return bad("network dimensions must be positive".into());
        }
        if self.kmeans.n_restarts == 0 || self.kmeans.max_iter == 0 {
            return bad("k-means needs at least one restart and one iteration".into());
        }
        Ok(())
    }

    /// Center-loss weight after ablation.
    pub fn effective_lambda(&self) -> f64 {
        if self.ablation.no_center {
            0.0
        } else {
            self.lambda
        }
    }
}
