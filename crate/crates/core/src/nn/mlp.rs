use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};

use super::NnError;
use crate::rng::Rng;

static NEXT_VERSION: AtomicU64 = AtomicU64::new(1);

fn fresh_version() -> u64 {
    NEXT_VERSION.fetch_add(1, Ordering::Relaxed)
}

/// Fully connected network: affine layers with ReLU between them and an
/// identity output.
///
/// All weights and biases live in one flat buffer. Layer `i` stores its
/// `out × in` weight matrix (row-major) followed by its `out` biases. Keeping
/// a single buffer makes optimizer updates, checkpoints and finite-difference
/// probes uniform across every network in the crate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    params: Vec<f64>,
    #[serde(skip, default = "fresh_version")]
    version: u64,
}

/// Activations recorded by [`Mlp::forward`], consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct Tape {
    version: u64,
    /// Layer inputs `a_0 .. a_L`; `a_L` is the output.
    activations: Vec<Array2<f64>>,
}

impl Tape {
    pub fn output(&self) -> &Array2<f64> {
        self.activations
            .last()
            .expect("tape holds at least the input")
    }

    pub fn input(&self) -> &Array2<f64> {
        &self.activations[0]
    }
}

/// Gradients of `⟨dy, y⟩` from one backward pass.
#[derive(Debug, Clone)]
pub struct MlpGrads {
    /// Same layout as [`Mlp::params`].
    pub params: Vec<f64>,
    /// Gradient with respect to the batch input.
    pub input: Array2<f64>,
}

pub fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// All-zero parameters.
    pub fn zeros(sizes: &[usize]) -> Result<Self, NnError> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(NnError::InvalidShape(sizes.to_vec()));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            params: vec![0.0; param_count(sizes)],
            version: fresh_version(),
        })
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn new(sizes: &[usize], rng: &mut Rng) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes)?;
        let mut offset = 0;
        for w in sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut net.params[offset..offset + fan_in * fan_out] {
                *p = rng.random_range(-limit..limit);
            }
            offset += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    /// Single square layer initialised to the identity plus uniform noise of
    /// the given amplitude on every weight.
    pub fn near_identity(dim: usize, noise: f64, rng: &mut Rng) -> Result<Self, NnError> {
        let mut net = Self::zeros(&[dim, dim])?;
        for r in 0..dim {
            for c in 0..dim {
                let base = if r == c { 1.0 } else { 0.0 };
                let jitter = if noise > 0.0 {
                    rng.random_range(-noise..noise)
                } else {
                    0.0
                };
                net.params[r * dim + c] = base + jitter;
            }
        }
        Ok(net)
    }

    pub fn from_params(sizes: &[usize], params: Vec<f64>) -> Result<Self, NnError> {
        let mut net = Self::zeros(sizes)?;
        if params.len() != net.params.len() {
            return Err(NnError::ParamCount {
                expected: net.params.len(),
                actual: params.len(),
            });
        }
        net.params = params;
        Ok(net)
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Mutable access to the flat parameter buffer. Invalidates every tape
    /// recorded so far.
    pub fn params_mut(&mut self) -> &mut [f64] {
        self.version = fresh_version();
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        param_count(&self.sizes[..=layer])
    }

    /// Weight matrix (`out × in`) and bias of one layer.
    pub fn layer(&self, layer: usize) -> (ArrayView2<'_, f64>, ArrayView1<'_, f64>) {
        let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
        let off = self.layer_offset(layer);
        let w =
            ArrayView2::from_shape((fan_out, fan_in), &self.params[off..off + fan_in * fan_out])
                .expect("layer slice matches its shape");
        let b = ArrayView1::from(
            &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out],
        );
        (w, b)
    }

    fn check_input(&self, x: &ArrayView2<'_, f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.ncols(),
            });
        }
        Ok(())
    }

    fn affine(&self, layer: usize, a: &ArrayView2<'_, f64>) -> Array2<f64> {
        let (w, b) = self.layer(layer);
        let mut z = Array2::zeros((a.nrows(), w.nrows()));
        z.assign(&b.broadcast((a.nrows(), w.nrows())).unwrap());
        general_mat_mul(1.0, a, &w.t(), 1.0, &mut z);
        z
    }

    /// Batch forward pass; rows of `x` are samples.
    pub fn forward(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Tape), NnError> {
        self.check_input(&x)?;
        let mut activations = Vec::with_capacity(self.sizes.len());
        activations.push(x.to_owned());
        for layer in 0..self.num_layers() {
            let mut z = self.affine(layer, &activations[layer].view());
            if layer + 1 < self.num_layers() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            activations.push(z);
        }
        let y = activations.last().unwrap().clone();
        Ok((
            y,
            Tape {
                version: self.version,
                activations,
            },
        ))
    }

    /// Forward pass without recording a tape.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let mut a = x.to_owned();
        for layer in 0..self.num_layers() {
            let mut z = self.affine(layer, &a.view());
            if layer + 1 < self.num_layers() {
                z.mapv_inplace(|v| v.max(0.0));
            }
            a = z;
        }
        Ok(a)
    }

    /// Single-sample forward pass.
    pub fn forward_vec(&self, x: &[f64]) -> Result<(Vec<f64>, Tape), NnError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        let (y, tape) = self.forward(view)?;
        Ok((y.into_raw_vec_and_offset().0, tape))
    }

    /// Reverse-mode gradients of `⟨dy, y⟩` for the forward call that produced
    /// `tape`. The ReLU derivative at exactly zero is taken as zero.
    pub fn backward(&self, tape: &Tape, dy: ArrayView2<'_, f64>) -> Result<MlpGrads, NnError> {
        if tape.version != self.version || tape.activations.len() != self.sizes.len() {
            return Err(NnError::StaleTape);
        }
        let out = tape.output();
        if dy.dim() != out.dim() {
            return Err(NnError::DimensionMismatch {
                expected: out.ncols(),
                actual: dy.ncols(),
            });
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = dy.to_owned();
        for layer in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[layer], self.sizes[layer + 1]);
            if layer + 1 < self.num_layers() {
                // relu'(z) = 1 iff the stored post-activation is positive.
                ndarray::Zip::from(&mut delta)
                    .and(&tape.activations[layer + 1])
                    .for_each(|d, &a| {
                        if a <= 0.0 {
                            *d = 0.0;
                        }
                    });
            }
            let a_in = &tape.activations[layer];
            let off = self.layer_offset(layer);
            {
                let (wg, bg) =
                    grads[off..off + fan_in * fan_out + fan_out].split_at_mut(fan_in * fan_out);
                let mut wg = ArrayViewMut2::from_shape((fan_out, fan_in), wg).unwrap();
                general_mat_mul(1.0, &delta.t(), a_in, 0.0, &mut wg);
                for (g, s) in bg.iter_mut().zip(delta.sum_axis(Axis(0))) {
                    *g = s;
                }
            }
            let (w, _) = self.layer(layer);
            delta = delta.dot(&w);
        }
        Ok(MlpGrads {
            params: grads,
            input: delta,
        })
    }
}
