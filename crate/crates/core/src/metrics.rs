//! Clustering evaluation metrics.
//!
//! Three families compare a predicted partition against gold classes:
//! B-cubed precision/recall/F1, V-measure (homogeneity, completeness and
//! their harmonic mean) and the Adjusted Rand Index. All of them only look at
//! which items share a label, so they are invariant to renaming cluster ids.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised while scoring a labelling.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("label length mismatch: predicted={predicted}, gold={gold}")]
    LengthMismatch { predicted: usize, gold: usize },
    #[error("cannot score an empty labelling")]
    Empty,
}

/// B-cubed scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BCubed {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// V-measure scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VMeasure {
    pub homogeneity: f64,
    pub completeness: f64,
    pub f1: f64,
}

/// Every metric for one prediction/gold pairing.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub b3: BCubed,
    pub v: VMeasure,
    pub ari: f64,
}

impl MetricsReport {
    pub fn compute(pred: &[usize], gold: &[usize]) -> Result<Self, MetricsError> {
        Ok(Self {
            b3: b_cubed(pred, gold)?,
            v: v_measure(pred, gold)?,
            ari: ari(pred, gold)?,
        })
    }
}

/// Harmonic mean, defined as 0 when both inputs are 0.
pub fn harmonic_f1(a: f64, b: f64) -> f64 {
    if a + b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

fn check(pred: &[usize], gold: &[usize]) -> Result<(), MetricsError> {
    if pred.len() != gold.len() {
        return Err(MetricsError::LengthMismatch {
            predicted: pred.len(),
            gold: gold.len(),
        });
    }
    if pred.is_empty() {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

struct Contingency {
    n: usize,
    pred_sizes: HashMap<usize, usize>,
    gold_sizes: HashMap<usize, usize>,
    joint: HashMap<(usize, usize), usize>,
}

impl Contingency {
    fn new(pred: &[usize], gold: &[usize]) -> Self {
        let mut pred_sizes = HashMap::new();
        let mut gold_sizes = HashMap::new();
        let mut joint = HashMap::new();
        for (&p, &g) in pred.iter().zip(gold) {
            *pred_sizes.entry(p).or_insert(0) += 1;
            *gold_sizes.entry(g).or_insert(0) += 1;
            *joint.entry((p, g)).or_insert(0) += 1;
        }
        Self {
            n: pred.len(),
            pred_sizes,
            gold_sizes,
            joint,
        }
    }

    /// Joint cells in a fixed order so floating-point sums are reproducible.
    fn sorted_cells(&self) -> Vec<((usize, usize), usize)> {
        let mut cells: Vec<_> = self.joint.iter().map(|(&k, &v)| (k, v)).collect();
        cells.sort_unstable();
        cells
    }
}

fn sorted_counts(map: &HashMap<usize, usize>) -> Vec<usize> {
    let mut items: Vec<_> = map.iter().map(|(&k, &v)| (k, v)).collect();
    items.sort_unstable();
    items.into_iter().map(|(_, v)| v).collect()
}

/// B-cubed precision, recall and F1.
///
/// Each item contributes `|C ∩ G| / |C|` to precision and `|C ∩ G| / |G|` to
/// recall, where `C` is its predicted cluster and `G` its gold class (both
/// including the item itself). Items sharing a contingency cell contribute
/// identically, so the sums run over cells.
pub fn b_cubed(pred: &[usize], gold: &[usize]) -> Result<BCubed, MetricsError> {
    check(pred, gold)?;
    let table = Contingency::new(pred, gold);
    let mut precision = 0.0;
    let mut recall = 0.0;
    for ((p, g), count) in table.sorted_cells() {
        let c = count as f64;
        precision += c * c / table.pred_sizes[&p] as f64;
        recall += c * c / table.gold_sizes[&g] as f64;
    }
    let n = table.n as f64;
    let precision = precision / n;
    let recall = recall / n;
    Ok(BCubed {
        precision,
        recall,
        f1: harmonic_f1(precision, recall),
    })
}

fn entropy(counts: &[usize], n: f64) -> f64 {
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Homogeneity, completeness and V-measure with natural-log entropies.
///
/// A single gold class gives homogeneity 1; a single predicted cluster gives
/// completeness 1.
pub fn v_measure(pred: &[usize], gold: &[usize]) -> Result<VMeasure, MetricsError> {
    check(pred, gold)?;
    let table = Contingency::new(pred, gold);
    let n = table.n as f64;
    let h_gold = entropy(&sorted_counts(&table.gold_sizes), n);
    let h_pred = entropy(&sorted_counts(&table.pred_sizes), n);

    // Conditional entropies H(gold | pred) and H(pred | gold).
    let mut h_gold_given_pred = 0.0;
    let mut h_pred_given_gold = 0.0;
    for ((p, g), count) in table.sorted_cells() {
        let c = count as f64;
        h_gold_given_pred -= c / n * (c / table.pred_sizes[&p] as f64).ln();
        h_pred_given_gold -= c / n * (c / table.gold_sizes[&g] as f64).ln();
    }

    let homogeneity = if h_gold == 0.0 {
        1.0
    } else {
        1.0 - h_gold_given_pred / h_gold
    };
    let completeness = if h_pred == 0.0 {
        1.0
    } else {
        1.0 - h_pred_given_gold / h_pred
    };
    Ok(VMeasure {
        homogeneity,
        completeness,
        f1: harmonic_f1(homogeneity, completeness),
    })
}

fn comb2(n: usize) -> f64 {
    let n = n as f64;
    n * (n - 1.0) / 2.0
}

/// Adjusted Rand Index from the contingency table.
///
/// When both partitions are trivial in the same way (the expected and maximal
/// index coincide) the labellings are identical up to renaming and the score
/// is 1.
pub fn ari(pred: &[usize], gold: &[usize]) -> Result<f64, MetricsError> {
    check(pred, gold)?;
    let table = Contingency::new(pred, gold);
    let index: f64 = table.sorted_cells().iter().map(|&(_, c)| comb2(c)).sum();
    let sum_pred: f64 = sorted_counts(&table.pred_sizes)
        .into_iter()
        .map(comb2)
        .sum();
    let sum_gold: f64 = sorted_counts(&table.gold_sizes)
        .into_iter()
        .map(comb2)
        .sum();
    let total = comb2(table.n);
    if total == 0.0 {
        return Ok(1.0);
    }
    let expected = sum_pred * sum_gold / total;
    let max_index = 0.5 * (sum_pred + sum_gold);
    let denom = max_index - expected;
    if denom == 0.0 {
        return Ok(1.0);
    }
    Ok((index - expected) / denom)
}
