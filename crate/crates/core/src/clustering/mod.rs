//! Relation-oriented clustering: the nonlinear map `g`, its decoder, center
//! loss, the reconstruction-regularized clustering objective and k-means
//! pseudo labels.

mod kmeans;

pub use kmeans::{kmeans, kmeans_canonical, ClusterAssignment, KMeansConfig};

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{AdamState, Mlp, NnError};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("k-means needs at least k points: got {points} for k = {k}")]
    TooFewPoints { points: usize, k: usize },
    #[error("label {label} has no centroid in this batch")]
    MissingCentroid { label: usize },
    #[error("label {label} outside {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("non-finite {what}: {value}")]
    NonFiniteLoss { what: String, value: f64 },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Nn(#[from] NnError),
}

/// Encoder `g: R^d → R^m` and decoder `d: R^m → R^d`, with the center-loss
/// weight.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AutoencoderPair {
    pub encoder: Mlp,
    pub decoder: Mlp,
    pub lambda: f64,
}

impl AutoencoderPair {
    /// `d–h1–…–m` encoder and the mirrored decoder.
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        bottleneck: usize,
        lambda: f64,
        rng: &mut Rng,
    ) -> Result<Self, ClusterError> {
        if !(lambda >= 0.0) {
            return Err(ClusterError::Config(format!(
                "lambda must be non-negative, got {lambda}"
            )));
        }
        let mut enc = vec![input_dim];
        enc.extend_from_slice(hidden);
        enc.push(bottleneck);
        let dec: Vec<usize> = enc.iter().rev().copied().collect();
        Ok(Self {
            encoder: Mlp::new(&enc, rng)?,
            decoder: Mlp::new(&dec, rng)?,
            lambda,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    pub fn bottleneck(&self) -> usize {
        self.encoder.output_dim()
    }

    /// `h' = g(h)` for every row.
    pub fn embed(&self, h: ArrayView2<'_, f64>) -> Result<Array2<f64>, ClusterError> {
        Ok(self.encoder.predict(h)?)
    }

    pub fn param_shapes(&self) -> [usize; 2] {
        [self.encoder.params().len(), self.decoder.params().len()]
    }

    pub fn apply_adam(
        &mut self,
        state: &mut AdamState,
        grads: &ClusteringGrads,
    ) -> Result<(), NnError> {
        let (enc, dec) = (&mut self.encoder, &mut self.decoder);
        state.step(
            &mut [enc.params_mut(), dec.params_mut()],
            &[&grads.encoder, &grads.decoder],
        )
    }
}

/// Per-class means of a batch. Classes absent from the batch have no centroid.
#[derive(Debug, Clone, PartialEq)]
pub struct Centroids(pub Vec<Option<Vec<f64>>>);

impl Centroids {
    pub fn get(&self, label: usize) -> Option<&[f64]> {
        self.0.get(label).and_then(|c| c.as_deref())
    }
}

pub fn compute_centroids(
    reps: ArrayView2<'_, f64>,
    labels: &[usize],
    num_classes: usize,
) -> Result<Centroids, ClusterError> {
    let dim = reps.ncols();
    let mut sums = vec![vec![0.0; dim]; num_classes];
    let mut counts = vec![0usize; num_classes];
    for (row, &l) in reps.axis_iter(Axis(0)).zip(labels) {
        if l >= num_classes {
            return Err(ClusterError::LabelOutOfRange {
                label: l,
                classes: num_classes,
            });
        }
        counts[l] += 1;
        for (s, &v) in sums[l].iter_mut().zip(row) {
            *s += v;
        }
    }
    Ok(Centroids(
        sums.into_iter()
            .zip(counts)
            .map(|(mut s, c)| {
                (c > 0).then(|| {
                    s.iter_mut().for_each(|v| *v /= c as f64);
                    s
                })
            })
            .collect(),
    ))
}

/// `(1/2N) Σ ‖h'_i − c_{y_i}‖²` and its gradient with respect to `reps`, the
/// centroids held constant.
pub fn center_loss_with_grad(
    reps: ArrayView2<'_, f64>,
    labels: &[usize],
    centroids: &Centroids,
) -> Result<(f64, Array2<f64>), ClusterError> {
    let n = reps.nrows() as f64;
    let mut grad = Array2::zeros(reps.dim());
    let mut value = 0.0;
    for (i, &l) in labels.iter().enumerate() {
        let c = centroids
            .get(l)
            .ok_or(ClusterError::MissingCentroid { label: l })?;
        for j in 0..reps.ncols() {
            let diff = reps[[i, j]] - c[j];
            value += diff * diff;
            grad[[i, j]] = diff / n;
        }
    }
    Ok((value / (2.0 * n), grad))
}

pub fn center_loss(
    reps: ArrayView2<'_, f64>,
    labels: &[usize],
    centroids: &Centroids,
) -> Result<f64, ClusterError> {
    center_loss_with_grad(reps, labels, centroids).map(|(v, _)| v)
}

/// Which summands of the clustering objective are active.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusteringTerms {
    pub reconstruction: bool,
    pub center: bool,
}

impl Default for ClusteringTerms {
    fn default() -> Self {
        Self {
            reconstruction: true,
            center: true,
        }
    }
}

/// Value of the clustering objective split into its parts. `center` is the
/// unweighted center loss; `total = reconstruction + λ·center` over the
/// active terms.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusteringLoss {
    pub reconstruction: f64,
    pub center: f64,
    pub total: f64,
}

#[derive(Debug, Clone)]
pub struct ClusteringGrads {
    pub encoder: Vec<f64>,
    pub decoder: Vec<f64>,
}

/// Reconstruction loss `(1/2N) Σ ‖d(g(h_i)) − h_i‖²` plus `λ` times the
/// center loss on `h' = g(h)`. Gradients flow into both networks; the
/// centroids are recomputed from this batch and held constant.
pub fn clustering_loss(
    h: ArrayView2<'_, f64>,
    labels: Option<&[usize]>,
    num_classes: usize,
    ae: &AutoencoderPair,
    terms: ClusteringTerms,
) -> Result<(ClusteringLoss, ClusteringGrads), ClusterError> {
    let n = h.nrows() as f64;
    if h.nrows() == 0 {
        return Err(ClusterError::Config(
            "clustering loss on an empty batch".into(),
        ));
    }
    let (reps, g_tape) = ae.encoder.forward(h)?;
    let mut d_reps = Array2::<f64>::zeros(reps.dim());
    let mut out = ClusteringLoss::default();
    let mut decoder_grad = vec![0.0; ae.decoder.params().len()];

    if terms.reconstruction {
        let (recon, d_tape) = ae.decoder.forward(reps.view())?;
        let diff = &recon - &h;
        out.reconstruction = diff.iter().map(|v| v * v).sum::<f64>() / (2.0 * n);
        let d_out = diff / n;
        let grads = ae.decoder.backward(&d_tape, d_out.view())?;
        decoder_grad = grads.params;
        d_reps += &grads.input;
    }

    if terms.center {
        let labels =
            labels.ok_or_else(|| ClusterError::Config("center loss needs labels".into()))?;
        let centroids = compute_centroids(reps.view(), labels, num_classes)?;
        let (value, grad) = center_loss_with_grad(reps.view(), labels, &centroids)?;
        out.center = value;
        if ae.lambda != 0.0 {
            d_reps.scaled_add(ae.lambda, &grad);
        }
    }

    out.total = out.reconstruction + ae.lambda * out.center;
    if !out.total.is_finite() {
        return Err(ClusterError::NonFiniteLoss {
            what: "clustering loss".into(),
            value: out.total,
        });
    }
    let enc = ae.encoder.backward(&g_tape, d_reps.view())?;
    Ok((
        out,
        ClusteringGrads {
            encoder: enc.params,
            decoder: decoder_grad,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PretrainOptions {
    pub epochs: usize,
    pub batch_size: usize,
}

/// Minimizes reconstruction loss alone over the rows of `h` for the given
/// number of epochs. Returns the sample-weighted mean loss of every epoch.
pub fn pretrain_autoencoder(
    h: ArrayView2<'_, f64>,
    ae: &mut AutoencoderPair,
    optimizer: &mut AdamState,
    options: PretrainOptions,
    rng: &mut Rng,
) -> Result<Vec<f64>, ClusterError> {
    if options.batch_size == 0 {
        return Err(ClusterError::Config("batch_size must be positive".into()));
    }
    let terms = ClusteringTerms {
        reconstruction: true,
        center: false,
    };
    let mut order: Vec<usize> = (0..h.nrows()).collect();
    let mut history = Vec::with_capacity(options.epochs);
    for epoch in 0..options.epochs {
        order.shuffle(rng);
        let mut sum = 0.0;
        for chunk in order.chunks(options.batch_size) {
            let batch = h.select(Axis(0), chunk);
            let (loss, grads) =
                clustering_loss(batch.view(), None, 0, ae, terms).map_err(|e| match e {
                    ClusterError::NonFiniteLoss { value, .. } => ClusterError::NonFiniteLoss {
                        what: format!("pretraining reconstruction loss at epoch {}", epoch + 1),
                        value,
                    },
                    other => other,
                })?;
            sum += loss.reconstruction * chunk.len() as f64;
            ae.apply_adam(optimizer, &grads)?;
        }
        history.push(sum / h.nrows().max(1) as f64);
    }
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_diff_check, AdamConfig};
    use crate::rng::{stream_rng, Stream};
    use ndarray::array;
    use rand::Rng as _;

    #[test]
    fn centroid_of_single_point_is_the_point() {
        let reps = array![[1.0, 2.0], [3.0, -1.0]];
        let c = compute_centroids(reps.view(), &[0, 1], 2).unwrap();
        assert_eq!(c.get(0).unwrap(), &[1.0, 2.0]);
        assert_eq!(c.get(1).unwrap(), &[3.0, -1.0]);
        assert_eq!(center_loss(reps.view(), &[0, 1], &c).unwrap(), 0.0);
    }

    #[test]
    fn centroid_is_arithmetic_mean() {
        let reps = array![[0.0, 0.0], [2.0, 0.0]];
        let c = compute_centroids(reps.view(), &[0, 0], 3).unwrap();
        assert_eq!(c.get(0).unwrap(), &[1.0, 0.0]);
        assert!(c.get(1).is_none());
        assert_eq!(center_loss(reps.view(), &[0, 0], &c).unwrap(), 0.5);
    }

    #[test]
    fn centroid_minimizes_within_class_scatter() {
        let mut rng = stream_rng(1, Stream::Init, 0);
        let reps = Array2::from_shape_fn((12, 3), |_| rng.random_range(-2.0..2.0));
        let labels: Vec<usize> = (0..12).map(|i| i % 3).collect();
        let c = compute_centroids(reps.view(), &labels, 3).unwrap();
        let scatter = |class: usize, centre: &[f64]| -> f64 {
            (0..12)
                .filter(|&i| labels[i] == class)
                .map(|i| {
                    (0..3)
                        .map(|j| (reps[[i, j]] - centre[j]).powi(2))
                        .sum::<f64>()
                })
                .sum()
        };
        for class in 0..3 {
            let base = scatter(class, c.get(class).unwrap());
            for probe in 0..20 {
                let mut moved = c.get(class).unwrap().to_vec();
                moved[probe % 3] += if probe % 2 == 0 { 1e-3 } else { -1e-3 } * (1 + probe) as f64;
                assert!(scatter(class, &moved) > base);
            }
        }
    }

    #[test]
    fn missing_centroid_is_an_error() {
        let reps = array![[0.0]];
        let c = Centroids(vec![None]);
        assert!(matches!(
            center_loss(reps.view(), &[0], &c),
            Err(ClusterError::MissingCentroid { label: 0 })
        ));
    }

    fn tiny_ae(lambda: f64, seed: u64) -> AutoencoderPair {
        let mut rng = stream_rng(seed, Stream::Init, 0);
        AutoencoderPair::new(4, &[6, 5], 3, lambda, &mut rng).unwrap()
    }

    fn batch(seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = stream_rng(seed, Stream::GradCheck, 0);
        let h = Array2::from_shape_fn((6, 4), |_| rng.random_range(-1.5..1.5));
        (h, vec![0, 1, 0, 2, 1, 2])
    }

    #[test]
    fn zero_lambda_is_pure_reconstruction() {
        let ae = tiny_ae(0.0, 2);
        let (h, labels) = batch(2);
        let (with, _) =
            clustering_loss(h.view(), Some(&labels), 3, &ae, ClusteringTerms::default()).unwrap();
        let (recon_only, _) = clustering_loss(
            h.view(),
            None,
            3,
            &ae,
            ClusteringTerms {
                reconstruction: true,
                center: false,
            },
        )
        .unwrap();
        assert_eq!(with.total, recon_only.total);
        assert_eq!(with.total, with.reconstruction);
    }

    /// Straight-line evaluation of the objective with explicit loops.
    fn reference_objective(ae: &AutoencoderPair, h: &Array2<f64>, labels: &[usize]) -> f64 {
        let forward = |net: &Mlp, x: &[f64]| -> Vec<f64> {
            let mut a = x.to_vec();
            for l in 0..net.num_layers() {
                let (w, b) = net.layer(l);
                let mut z: Vec<f64> = (0..w.nrows())
                    .map(|r| b[r] + (0..w.ncols()).map(|c| w[[r, c]] * a[c]).sum::<f64>())
                    .collect();
                if l + 1 < net.num_layers() {
                    z.iter_mut().for_each(|v| *v = v.max(0.0));
                }
                a = z;
            }
            a
        };
        let n = h.nrows();
        let reps: Vec<Vec<f64>> = (0..n)
            .map(|i| forward(&ae.encoder, h.row(i).as_slice().unwrap()))
            .collect();
        let mut recon = 0.0;
        for (rep, row) in reps.iter().zip(h.rows()) {
            let r = forward(&ae.decoder, rep);
            recon += r.iter().zip(row).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        }
        let mut center = 0.0;
        for (i, rep) in reps.iter().enumerate() {
            let members: Vec<usize> = (0..n).filter(|&j| labels[j] == labels[i]).collect();
            for (d, v) in rep.iter().enumerate() {
                let mean = members.iter().map(|&j| reps[j][d]).sum::<f64>() / members.len() as f64;
                center += (v - mean).powi(2);
            }
        }
        recon / (2.0 * n as f64) + ae.lambda * center / (2.0 * n as f64)
    }

    #[test]
    fn objective_matches_reference_evaluation() {
        let ae = tiny_ae(0.3, 3);
        let (h, labels) = batch(3);
        let (loss, _) =
            clustering_loss(h.view(), Some(&labels), 3, &ae, ClusteringTerms::default()).unwrap();
        let expected = reference_objective(&ae, &h, &labels);
        assert!(
            (loss.total - expected).abs() < 1e-12,
            "{} vs {expected}",
            loss.total
        );
        assert!(loss.total >= ae.lambda * loss.center && loss.total >= loss.reconstruction);
    }

    #[test]
    fn gradients_pass_finite_difference_check() {
        let ae = tiny_ae(0.7, 4);
        let (h, labels) = batch(4);
        let (ne, nd) = (ae.encoder.params().len(), ae.decoder.params().len());
        // Zero biases put pre-activations exactly on the ReLU kink; move off it.
        let mut rng = stream_rng(4, Stream::GradCheck, 1);
        let mut params = ae.encoder.params().to_vec();
        params.extend_from_slice(ae.decoder.params());
        params
            .iter_mut()
            .for_each(|p| *p += rng.random_range(-0.1..0.1));
        let f = |p: &[f64]| {
            let mut probe = ae.clone();
            probe.encoder.params_mut().copy_from_slice(&p[..ne]);
            probe.decoder.params_mut().copy_from_slice(&p[ne..ne + nd]);
            let (loss, g) = clustering_loss(
                h.view(),
                Some(&labels),
                3,
                &probe,
                ClusteringTerms::default(),
            )
            .unwrap();
            let mut grad = g.encoder;
            grad.extend(g.decoder);
            (loss.total, grad)
        };
        let r = finite_diff_check(f, &params, 1e-5).unwrap();
        assert!(r.max_relative_error < 1e-4, "{r:?}");
    }

    #[test]
    fn zero_pretraining_epochs_leave_parameters() {
        let mut ae = tiny_ae(0.0, 5);
        let before = ae.clone();
        let mut opt = AdamState::new(AdamConfig::default(), &ae.param_shapes());
        let (h, _) = batch(5);
        let mut rng = stream_rng(5, Stream::Shuffle, 0);
        let hist = pretrain_autoencoder(
            h.view(),
            &mut ae,
            &mut opt,
            PretrainOptions {
                epochs: 0,
                batch_size: 4,
            },
            &mut rng,
        )
        .unwrap();
        assert!(hist.is_empty());
        assert_eq!(ae.encoder.params(), before.encoder.params());
        assert_eq!(ae.decoder.params(), before.decoder.params());
    }

    #[test]
    fn pretraining_reconstructs_one_dimensional_data() {
        let mut rng = stream_rng(6, Stream::Init, 0);
        let mut ae = AutoencoderPair::new(1, &[32, 32], 8, 0.0, &mut rng).unwrap();
        let h: Array2<f64> = Array2::from_shape_fn((64, 1), |_| rng.random_range(-2.0..2.0));
        let mean = h.mean().unwrap();
        let variance = h.mapv(|v| (v - mean).powi(2)).mean().unwrap();
        let mut opt = AdamState::new(AdamConfig::with_learning_rate(1e-3), &ae.param_shapes());
        let hist = pretrain_autoencoder(
            h.view(),
            &mut ae,
            &mut opt,
            PretrainOptions {
                epochs: 50,
                batch_size: 8,
            },
            &mut rng,
        )
        .unwrap();
        assert_eq!(hist.len(), 50);
        assert!(hist.last().unwrap() <= hist.first().unwrap());
        // The loss carries a factor 1/2, so the mean squared error is twice it.
        let mse = 2.0
            * clustering_loss(
                h.view(),
                None,
                0,
                &ae,
                ClusteringTerms {
                    reconstruction: true,
                    center: false,
                },
            )
            .unwrap()
            .0
            .reconstruction;
        assert!(mse < 0.01 * variance, "mse {mse} variance {variance}");
    }
}
