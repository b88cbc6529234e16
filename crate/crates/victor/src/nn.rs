//! Small feed-forward networks with hand-written backpropagation.
//!
//! Every model in this crate is an MLP over `ndarray` matrices: tanh hidden
//! layers, a linear output layer, explicit activation caches, and a `backward`
//! that produces both parameter gradients and the input gradient so heads can
//! chain into a shared encoder. Arithmetic runs in f64; parameters serialize
//! as float32 blobs so checkpoints are compact and reload exactly.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use thiserror::Error;

use crate::error::{Classify, ErrorClass};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("parameter blob has {got} values, expected {expected}")]
    ParamLen { expected: usize, got: usize },
    #[error("network needs at least an input and an output dimension, got {0:?}")]
    BadDims(Vec<usize>),
}

impl Classify for NnError {
    fn class(&self) -> ErrorClass {
        ErrorClass::Validation
    }
}

/// One affine layer `y = x Wᵀ + b` with `W: (out × in)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array1<f64>,
}

impl Linear {
    fn new<R: Rng>(in_dim: usize, out_dim: usize, gain: f64, rng: &mut R) -> Linear {
        // Xavier-uniform weights scaled by `gain`, zero biases.
        let limit = gain * (6.0 / (in_dim + out_dim) as f64).sqrt();
        let w = Array2::from_shape_fn((out_dim, in_dim), |_| rng.random_range(-limit..limit));
        Linear { w, b: Array1::zeros(out_dim) }
    }

    fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w.t()) + &self.b
    }
}

/// Parameter gradients for an [`Mlp`], in layer order.
#[derive(Clone, Debug)]
pub struct MlpGrads {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl MlpGrads {
    pub fn zeros(mlp: &Mlp) -> MlpGrads {
        MlpGrads {
            layers: mlp
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.w.dim()), Array1::zeros(l.b.dim())))
                .collect(),
        }
    }

    /// Accumulates `other` into `self`.
    pub fn add(&mut self, other: &MlpGrads) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }

    /// Gradients flattened in the same order as [`Mlp::params_f64`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for (w, b) in &self.layers {
            flat.extend(w.iter());
            flat.extend(b.iter());
        }
        flat
    }
}

/// A multi-layer perceptron: tanh on hidden layers, linear output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    pub layers: Vec<Linear>,
}

impl Mlp {
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Mlp, NnError> {
        Mlp::with_gain(dims, 1.0, rng)
    }

    /// Xavier-uniform initialization with the limit multiplied by `gain`.
    ///
    /// Contrastive heads trained on short budgets start much closer to their
    /// unit-norm targets with a small gain than with the classic limit.
    pub fn with_gain<R: Rng>(dims: &[usize], gain: f64, rng: &mut R) -> Result<Mlp, NnError> {
        if dims.len() < 2 || dims.contains(&0) || !(gain.is_finite() && gain > 0.0) {
            return Err(NnError::BadDims(dims.to_vec()));
        }
        let layers = dims
            .windows(2)
            .map(|pair| Linear::new(pair[0], pair[1], gain, rng))
            .collect();
        Ok(Mlp { dims: dims.to_vec(), layers })
    }

    /// Zero-initialized network, used as a shell when loading checkpoints.
    pub fn zeros(dims: &[usize]) -> Result<Mlp, NnError> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(NnError::BadDims(dims.to_vec()));
        }
        let layers = dims
            .windows(2)
            .map(|pair| Linear {
                w: Array2::zeros((pair[1], pair[0])),
                b: Array1::zeros(pair[1]),
            })
            .collect();
        Ok(Mlp { dims: dims.to_vec(), layers })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn in_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    /// Forward pass for a `(batch × in_dim)` matrix.
    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_cached(x).0
    }

    /// Forward pass that keeps every activation (input first, output last)
    /// for a later [`Mlp::backward`].
    pub fn forward_cached(&self, x: &Array2<f64>) -> (Array2<f64>, Vec<Array2<f64>>) {
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.clone());
        for (idx, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(activations.last().unwrap());
            let a = if idx + 1 < self.layers.len() { z.mapv(f64::tanh) } else { z };
            activations.push(a);
        }
        (activations.last().unwrap().clone(), activations)
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the network output, summed
    /// over the batch by the caller's loss) through cached activations.
    /// Returns parameter gradients and the gradient w.r.t. the input.
    pub fn backward(&self, activations: &[Array2<f64>], grad_out: &Array2<f64>) -> (MlpGrads, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut g = grad_out.clone();
        for idx in (0..self.layers.len()).rev() {
            let gz = if idx + 1 < self.layers.len() {
                // Hidden layer: undo the tanh using its cached output.
                let a = &activations[idx + 1];
                g * a.mapv(|v| 1.0 - v * v)
            } else {
                g
            };
            let dw = gz.t().dot(&activations[idx]);
            let db = gz.sum_axis(Axis(0));
            g = gz.dot(&self.layers[idx].w);
            grads.push((dw, db));
        }
        grads.reverse();
        (MlpGrads { layers: grads }, g)
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// All parameters as one f64 vector (layer order, weights then bias).
    pub fn params_f64(&self) -> Vec<f64> {
        let mut flat = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            flat.extend(layer.w.iter());
            flat.extend(layer.b.iter());
        }
        flat
    }

    /// Inverse of [`Mlp::params_f64`].
    pub fn set_params_f64(&mut self, flat: &[f64]) -> Result<(), NnError> {
        if flat.len() != self.param_count() {
            return Err(NnError::ParamLen { expected: self.param_count(), got: flat.len() });
        }
        let mut it = flat.iter();
        for layer in &mut self.layers {
            for v in layer.w.iter_mut() {
                *v = *it.next().unwrap();
            }
            for v in layer.b.iter_mut() {
                *v = *it.next().unwrap();
            }
        }
        Ok(())
    }

    /// Parameters as a float32 blob for checkpoints.
    pub fn params_f32(&self) -> Vec<f32> {
        self.params_f64().iter().map(|&v| v as f32).collect()
    }

    /// Loads a float32 parameter blob (the inverse of [`Mlp::params_f32`]).
    pub fn set_params_f32(&mut self, blob: &[f32]) -> Result<(), NnError> {
        let flat: Vec<f64> = blob.iter().map(|&v| v as f64).collect();
        self.set_params_f64(&flat)
    }
}

/// Floor on row norms so normalization never divides by zero (e.g. the
/// all-zero output of a freshly loaded shell network).
const NORM_FLOOR: f64 = 1e-12;

/// Projects every row of `x` onto the unit sphere. Returns the normalized
/// matrix and the (floored) row norms needed by [`unit_rows_backward`].
pub fn unit_rows(x: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let mut y = x.clone();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in y.rows_mut() {
        let n = row.iter().map(|v| v * v).sum::<f64>().sqrt().max(NORM_FLOOR);
        row.mapv_inplace(|v| v / n);
        norms.push(n);
    }
    (y, norms)
}

/// Gradient of [`unit_rows`]: maps dL/dy back to dL/dx given the normalized
/// rows `y` and their pre-normalization norms. Row-wise this is
/// (g − (g·y) y) / ‖x‖ — the component of g tangent to the sphere, rescaled.
pub fn unit_rows_backward(
    grad_out: &Array2<f64>,
    normed: &Array2<f64>,
    norms: &[f64],
) -> Array2<f64> {
    let mut g_in = grad_out.clone();
    for (r, mut row) in g_in.rows_mut().into_iter().enumerate() {
        let y = normed.row(r);
        let radial: f64 = row.iter().zip(y.iter()).map(|(g, v)| g * v).sum();
        for (g, v) in row.iter_mut().zip(y.iter()) {
            *g = (*g - radial * v) / norms[r];
        }
    }
    g_in
}

/// Unit-normalizes a single vector in place (no-op on the zero vector,
/// up to the same floor as [`unit_rows`]).
pub fn unit_vec(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(NORM_FLOOR);
    for x in v {
        *x /= n;
    }
}

/// Adam optimizer over a flat parameter vector; one instance per network.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Adam {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    /// Applies one moment-corrected update in place.
    pub fn step_slice(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len(), "optimizer/parameter size mismatch");
        assert_eq!(grads.len(), self.m.len(), "optimizer/gradient size mismatch");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    /// Convenience wrapper that flattens an [`Mlp`] and its gradients.
    pub fn step_mlp(&mut self, mlp: &mut Mlp, grads: &MlpGrads) {
        let mut params = mlp.params_f64();
        let flat = grads.to_flat();
        self.step_slice(&mut params, &flat);
        mlp.set_params_f64(&params).expect("flat length preserved");
    }
}
