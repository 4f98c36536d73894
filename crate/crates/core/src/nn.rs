//! Minimal dense feed-forward networks with manual backpropagation and Adam.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::util::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Tanh => z.mapv_inplace(f64::tanh),
            Activation::Sigmoid => z.mapv_inplace(crate::util::sigmoid),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => f64::from(u8::from(a > 0.0)),
            Activation::Tanh => 1.0 - a * a,
            Activation::Sigmoid => a * (1.0 - a),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `inputs x outputs`.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
}

pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Mlp {
    /// `sizes` lists every layer width including input and output.
    pub fn new(sizes: &[usize], activations: &[Activation], rng: &mut Rng) -> Self {
        assert_eq!(sizes.len(), activations.len() + 1, "one activation per layer");
        let layers = sizes
            .windows(2)
            .zip(activations)
            .map(|(w, &activation)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let std = match activation {
                    Activation::Relu => (2.0 / fan_in as f64).sqrt(),
                    _ => (2.0 / (fan_in + fan_out) as f64).sqrt(),
                };
                let normal = Normal::new(0.0, std).expect("finite std");
                Dense {
                    w: Array2::from_shape_fn((fan_in, fan_out), |_| normal.sample(rng)),
                    b: Array1::zeros(fan_out),
                    activation,
                }
            })
            .collect();
        Self { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.ncols())
    }

    /// Activations of every layer, input first.
    pub fn forward(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        self.forward_n(x, self.layers.len())
    }

    /// Activations through the first `n` layers.
    pub fn forward_n(&self, x: ArrayView2<f64>, n: usize) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        for layer in &self.layers[..n] {
            let mut z = acts.last().unwrap().dot(&layer.w);
            z += &layer.b;
            layer.activation.apply(&mut z);
            acts.push(z);
        }
        acts
    }

    pub fn predict(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).pop().unwrap()
    }

    /// Backpropagates `delta`, the loss gradient with respect to the last
    /// layer's pre-activation.
    pub fn backward(&self, acts: &[Array2<f64>], mut delta: Array2<f64>) -> Gradients {
        let mut grads = Vec::with_capacity(self.layers.len());
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let gw = acts[l].t().dot(&delta);
            let gb = delta.sum_axis(Axis(0));
            grads.push((gw, gb));
            if l > 0 {
                let mut prev = delta.dot(&layer.w.t());
                let act = self.layers[l - 1].activation;
                prev.zip_mut_with(&acts[l], |d, &a| *d *= act.derivative(a));
                delta = prev;
            }
        }
        grads.reverse();
        Gradients { layers: grads }
    }

    /// Derivative of the output activation, for callers that turn an
    /// output gradient into a pre-activation delta.
    pub fn output_derivative(&self, output: &Array2<f64>) -> Array2<f64> {
        let act = self.layers.last().unwrap().activation;
        output.mapv(|a| act.derivative(a))
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend(l.w.iter());
            out.extend(l.b.iter());
        }
        out
    }

    pub fn set_flat_params(&mut self, params: &[f64]) {
        let mut it = params.iter();
        for l in &mut self.layers {
            l.w.iter_mut().for_each(|w| *w = *it.next().expect("parameter count"));
            l.b.iter_mut().for_each(|b| *b = *it.next().expect("parameter count"));
        }
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.w.iter().chain(l.b.iter()).all(|v| v.is_finite()))
    }
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

pub struct Adam {
    pub learning_rate: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: Vec<(Array2<f64>, Array1<f64>)>,
    v: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Adam {
    pub fn new(net: &Mlp, learning_rate: f64) -> Self {
        let zeros = || {
            net.layers
                .iter()
                .map(|l| (Array2::zeros(l.w.raw_dim()), Array1::zeros(l.b.len())))
                .collect::<Vec<_>>()
        };
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr = self.learning_rate;
        let eps = self.eps;
        for (l, layer) in net.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[l];
            let (mw, mb) = &mut self.m[l];
            let (vw, vb) = &mut self.v[l];
            update(&mut layer.w, gw, mw, vw, b1, b2, c1, c2, lr, eps);
            update(&mut layer.b, gb, mb, vb, b1, b2, c1, c2, lr, eps);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn update<D: ndarray::Dimension>(
    p: &mut ndarray::Array<f64, D>,
    g: &ndarray::Array<f64, D>,
    m: &mut ndarray::Array<f64, D>,
    v: &mut ndarray::Array<f64, D>,
    b1: f64,
    b2: f64,
    c1: f64,
    c2: f64,
    lr: f64,
    eps: f64,
) {
    ndarray::Zip::from(p)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|p, &g, m, v| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        });
}
