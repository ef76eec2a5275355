use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::clustering::ClusteringLoss;
use crate::metrics::MetricsReport;

/// Diagnostics for one outer epoch. Loss fields are means over the steps of
/// the epoch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Ramp-up weight in effect (0 in standard mode).
    pub mu: f64,
    /// Fraction of unlabeled training instances whose pseudo label changed,
    /// up to cluster renumbering. 1 in the first epoch.
    pub pseudo_label_change_rate: f64,
    /// ARI of the pseudo labels against hidden gold labels, when available.
    /// Monitoring only; gold labels never enter training.
    pub pseudo_label_ari: Option<f64>,
    pub kmeans_inertia: f64,
    pub ce: f64,
    pub bce: f64,
    pub incremental_unlabeled_ce: f64,
    pub cls_total: f64,
    pub reconstruction: f64,
    pub center: f64,
    pub clustering_total: f64,
    pub cls_steps: usize,
    pub clustering_steps: usize,
    /// Unlabeled minibatches that produced no pairs.
    pub empty_pair_batches: usize,
    pub novel_test: Option<MetricsReport>,
}

impl EpochStats {
    pub(crate) fn add_clustering(&mut self, loss: &ClusteringLoss) {
        self.reconstruction += loss.reconstruction;
        self.center += loss.center;
        self.clustering_total += loss.total;
        self.clustering_steps += 1;
    }

    pub(crate) fn finish_means(&mut self) {
        let c = self.cls_steps.max(1) as f64;
        self.ce /= c;
        self.bce /= c;
        self.incremental_unlabeled_ce /= c;
        self.cls_total /= c;
        let k = self.clustering_steps.max(1) as f64;
        self.reconstruction /= k;
        self.center /= k;
        self.clustering_total /= k;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub num_predefined: usize,
    pub num_novel: usize,
    pub embedding_dim: usize,
    pub labeled_train: usize,
    pub labeled_test: usize,
    pub unlabeled_train: usize,
    pub unlabeled_test: usize,
}

/// Everything recorded about one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub dataset: DatasetSummary,
    pub pretrain_losses: Vec<f64>,
    pub epochs: Vec<EpochStats>,
    /// Whether training stopped on the pseudo-label change rate rather than
    /// the epoch limit.
    pub converged: bool,
    /// `η^u` on held-out novel instances.
    pub novel_test: Option<MetricsReport>,
    /// `η^ℓ` accuracy on held-out labeled instances.
    pub predefined_test_accuracy: Option<f64>,
    /// Incremental mode: the extended `η^ℓ` on held-out novel instances.
    pub incremental_novel_test: Option<MetricsReport>,
    /// Run time; the one field that differs between identical runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
}

impl TrainReport {
    /// Named scalar results used for multi-seed aggregation.
    pub fn scalars(&self) -> BTreeMap<String, f64> {
        let mut out = BTreeMap::new();
        if let Some(m) = &self.novel_test {
            put_metrics(&mut out, "novel", m);
        }
        if let Some(m) = &self.incremental_novel_test {
            put_metrics(&mut out, "incremental_novel", m);
        }
        if let Some(a) = self.predefined_test_accuracy {
            out.insert("predefined_accuracy".into(), a);
        }
        out.insert("epochs".into(), self.epochs.len() as f64);
        out
    }
}

fn put_metrics(out: &mut BTreeMap<String, f64>, prefix: &str, m: &MetricsReport) {
    out.insert(format!("{prefix}_b3_precision"), m.b3.precision);
    out.insert(format!("{prefix}_b3_recall"), m.b3.recall);
    out.insert(format!("{prefix}_b3_f1"), m.b3.f1);
    out.insert(format!("{prefix}_v_homogeneity"), m.v.homogeneity);
    out.insert(format!("{prefix}_v_completeness"), m.v.completeness);
    out.insert(format!("{prefix}_v_f1"), m.v.f1);
    out.insert(format!("{prefix}_ari"), m.ari);
}

/// Mean and sample standard deviation across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator); 0 for a single run.
    pub std: f64,
    pub runs: usize,
    /// `mean ± std` with three decimals.
    pub display: String,
}

impl MeanStd {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n.max(1) as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Self {
            mean,
            std,
            runs: n,
            display: format!("{mean:.3} ± {std:.3}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    pub metrics: BTreeMap<String, MeanStd>,
}

/// Per-metric mean ± std over runs. Metrics missing from some runs are
/// aggregated over the runs that have them.
pub fn aggregate_reports(reports: &[TrainReport]) -> AggregateReport {
    let mut values: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in reports {
        for (k, v) in r.scalars() {
            values.entry(k).or_default().push(v);
        }
    }
    AggregateReport {
        seeds: reports.iter().map(|r| r.config.seed).collect(),
        metrics: values
            .into_iter()
            .map(|(k, v)| (k, MeanStd::from_values(&v)))
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_std_uses_sample_deviation() {
        let m = MeanStd::from_values(&[0.785, 0.796, 0.807]);
        assert!((m.mean - 0.796).abs() < 1e-12);
        assert!((m.std - 0.011).abs() < 1e-12);
        assert_eq!(m.display, "0.796 ± 0.011");
        assert_eq!(MeanStd::from_values(&[0.5]).std, 0.0);
    }
}
