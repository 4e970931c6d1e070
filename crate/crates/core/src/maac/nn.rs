//! Dense layers and MLPs on `ndarray` with hand-written backward passes.
//! Every trainable tensor is an `Array2` (biases are `1 x out` rows) so
//! optimizers, target averaging and checkpoints treat all parameters alike.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub const LEAKY_SLOPE: f64 = 0.01;

#[inline]
pub fn leaky(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        LEAKY_SLOPE * x
    }
}

#[inline]
pub fn leaky_slope(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        LEAKY_SLOPE
    }
}

pub fn leaky_array(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(leaky)
}

/// `dy * leaky'(pre)`
pub fn leaky_backward(pre: &Array2<f64>, dy: &Array2<f64>) -> Array2<f64> {
    let mut out = dy.clone();
    out.zip_mut_with(pre, |d, &p| *d *= leaky_slope(p));
    out
}

/// Row-wise log-softmax.
pub fn log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.mapv_inplace(|v| v - lse);
    }
    out
}

/// Row-wise dot product of two equally shaped matrices.
pub fn row_dot(a: &Array2<f64>, b: &Array2<f64>) -> Array1<f64> {
    (a * b).sum_axis(Axis(1))
}

/// Uniform fan-in initialisation, `U(-1/sqrt(in), 1/sqrt(in))`.
pub fn init_matrix<R: Rng>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound))
}

/// Flat, ordered access to every parameter tensor of a model.
pub trait Parameters {
    fn tensors(&self) -> Vec<&Array2<f64>>;
    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>>;

    fn zeros_like(&self) -> Self
    where
        Self: Clone,
    {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn grad_norm(&self) -> f64 {
        self.tensors().iter().map(|t| t.iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt()
    }

    fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// `self += scale * other`
    fn add_scaled(&mut self, other: &Self, scale: f64) {
        for (p, g) in self.tensors_mut().into_iter().zip(other.tensors()) {
            p.scaled_add(scale, g);
        }
    }

    fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.mapv_inplace(|v| v * factor);
        }
    }

    /// Polyak averaging toward `online`: `self <- rate * online + (1 - rate) * self`.
    fn soft_update(&mut self, online: &Self, rate: f64) {
        for (t, o) in self.tensors_mut().into_iter().zip(online.tensors()) {
            t.zip_mut_with(o, |a, &b| *a = rate * b + (1.0 - rate) * *a);
        }
    }
}

/// Plain gradient step with global-norm clipping. Returns the pre-clip norm.
pub fn sgd_step<P: Parameters>(params: &mut P, grads: &P, lr: f64, clip: f64) -> f64 {
    let norm = grads.grad_norm();
    let factor = if clip > 0.0 && norm > clip { clip / norm } else { 1.0 };
    params.add_scaled(grads, -lr * factor);
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: Array2<f64>,
    pub b: Array2<f64>,
}

impl Linear {
    pub fn new<R: Rng>(inputs: usize, outputs: usize, rng: &mut R) -> Self {
        Self { w: init_matrix(inputs, outputs, inputs, rng), b: init_matrix(1, outputs, inputs, rng) }
    }

    pub fn inputs(&self) -> usize {
        self.w.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.w.ncols()
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        x.dot(&self.w) + &self.b
    }

    /// Accumulates parameter gradients into `grad` and returns `dL/dx`.
    pub fn backward(&self, x: &Array2<f64>, dy: &Array2<f64>, grad: &mut Linear) -> Array2<f64> {
        grad.w += &x.t().dot(dy);
        grad.b += &dy.sum_axis(Axis(0)).insert_axis(Axis(0));
        dy.dot(&self.w.t())
    }
}

impl Parameters for Linear {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        vec![&self.w, &self.b]
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        vec![&mut self.w, &mut self.b]
    }
}

/// Fully connected network with leaky-ReLU between layers and a linear
/// output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Linear>,
}

/// Activations kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MlpTrace {
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
}

impl Mlp {
    /// `sizes = [input, hidden..., output]`
    pub fn new<R: Rng>(sizes: &[usize], rng: &mut R) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        Self { layers: sizes.windows(2).map(|w| Linear::new(w[0], w[1], rng)).collect() }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().expect("non-empty").outputs()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.inputs()];
        s.extend(self.layers.iter().map(Linear::outputs));
        s
    }

    pub fn forward(&self, x: &Array2<f64>) -> Array2<f64> {
        self.forward_traced(x).0
    }

    pub fn forward_traced(&self, x: &Array2<f64>) -> (Array2<f64>, MlpTrace) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.forward(&h);
            inputs.push(h);
            h = if l == last { z.clone() } else { leaky_array(&z) };
            pre.push(z);
        }
        (h, MlpTrace { inputs, pre })
    }

    /// Accumulates into `grad`; returns `dL/dx`.
    pub fn backward(&self, trace: &MlpTrace, dout: &Array2<f64>, grad: &mut Mlp) -> Array2<f64> {
        let mut d = dout.clone();
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            if l != last {
                d = leaky_backward(&trace.pre[l], &d);
            }
            d = self.layers[l].backward(&trace.inputs[l], &d, &mut grad.layers[l]);
        }
        d
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.layers.iter().flat_map(|l| l.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut()).collect()
    }
}

impl<P: Parameters> Parameters for Vec<P> {
    fn tensors(&self) -> Vec<&Array2<f64>> {
        self.iter().flat_map(|p| p.tensors()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        self.iter_mut().flat_map(|p| p.tensors_mut()).collect()
    }
}

/// Relative error between analytic and numeric gradients of one tensor,
/// `|a - n| / max(|a|, |n|)` in the Frobenius norm (0 when both vanish).
pub fn relative_error(analytic: &Array2<f64>, numeric: &Array2<f64>) -> f64 {
    let diff = (analytic - numeric).mapv(|v| v * v).sum().sqrt();
    let scale = analytic.mapv(|v| v * v).sum().sqrt().max(numeric.mapv(|v| v * v).sum().sqrt());
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Central finite differences of `loss` with respect to every parameter.
pub fn numeric_gradient<P, F>(params: &P, step: f64, mut loss: F) -> P
where
    P: Parameters + Clone,
    F: FnMut(&P) -> f64,
{
    let mut grad = params.zeros_like();
    let mut probe = params.clone();
    let counts: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
    for (t, &count) in counts.iter().enumerate() {
        for idx in 0..count {
            let original = probe.tensors()[t].as_slice().expect("contiguous")[idx];
            probe.tensors_mut()[t].as_slice_mut().expect("contiguous")[idx] = original + step;
            let up = loss(&probe);
            probe.tensors_mut()[t].as_slice_mut().expect("contiguous")[idx] = original - step;
            let down = loss(&probe);
            probe.tensors_mut()[t].as_slice_mut().expect("contiguous")[idx] = original;
            grad.tensors_mut()[t].as_slice_mut().expect("contiguous")[idx] = (up - down) / (2.0 * step);
        }
    }
    grad
}
