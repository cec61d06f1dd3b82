//! Fully connected layers with hand-written backpropagation.
//!
//! Batches are row-major: one sample per row.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::optim::{Adam, AdamConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Parameter gradients of a [`Dense`] layer.
#[derive(Debug, Clone)]
pub struct DenseGrad {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Weights and biases drawn from `U(-bound, bound)`.
    pub fn uniform<R: Rng>(
        inputs: usize,
        outputs: usize,
        bound: f64,
        bias_bound: f64,
        rng: &mut R,
    ) -> Self {
        let mut sample = |b: f64| {
            if b > 0.0 {
                rng.random_range(-b..b)
            } else {
                0.0
            }
        };
        let weight = Array2::from_shape_fn((outputs, inputs), |_| sample(bound));
        let bias = Array1::from_shape_fn(outputs, |_| sample(bias_bound));
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        Self::forward_with(x, self.weight.view(), &self.bias)
    }

    /// Affine map using `weight` in place of the stored weights (e.g. a
    /// fake-quantized copy).
    pub fn forward_with(
        x: ArrayView2<f64>,
        weight: ArrayView2<f64>,
        bias: &Array1<f64>,
    ) -> Array2<f64> {
        let mut y = x.dot(&weight.t());
        y += bias;
        y
    }

    /// Returns parameter gradients and the gradient with respect to the input.
    pub fn backward(
        x: ArrayView2<f64>,
        weight: ArrayView2<f64>,
        grad_out: ArrayView2<f64>,
    ) -> (DenseGrad, Array2<f64>) {
        let gw = grad_out.t().dot(&x);
        let gb = grad_out.sum_axis(Axis(0));
        let gx = grad_out.dot(&weight);
        (
            DenseGrad {
                weight: gw,
                bias: gb,
            },
            gx,
        )
    }

    pub fn soft_update_from(&mut self, source: &Dense, tau: f64) {
        self.weight
            .zip_mut_with(&source.weight, |t, &s| *t += tau * (s - *t));
        self.bias
            .zip_mut_with(&source.bias, |t, &s| *t += tau * (s - *t));
    }

    pub fn params(&self) -> impl Iterator<Item = f64> + '_ {
        self.weight.iter().chain(self.bias.iter()).copied()
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.weight.iter_mut().chain(self.bias.iter_mut())
    }
}

/// Adam moments for one [`Dense`] layer.
#[derive(Debug, Clone)]
pub struct DenseAdam {
    weight: Adam,
    bias: Adam,
}

impl DenseAdam {
    pub fn new(layer: &Dense, config: AdamConfig) -> Self {
        Self {
            weight: Adam::new(layer.weight.len(), config),
            bias: Adam::new(layer.bias.len(), config),
        }
    }

    pub fn step(&mut self, layer: &mut Dense, grad: &DenseGrad) {
        let w = layer.weight.as_slice_mut().expect("standard layout");
        self.weight
            .step(w, grad.weight.as_standard_layout().as_slice().unwrap());
        let b = layer.bias.as_slice_mut().expect("standard layout");
        self.bias.step(b, grad.bias.as_slice().unwrap());
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output `y`.
    #[inline]
    pub fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Stack of dense layers: ReLU between layers, configurable output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub output: Activation,
}

/// Per-layer inputs and the final output of one forward pass.
#[derive(Debug, Clone)]
pub struct MlpTrace {
    inputs: Vec<Array2<f64>>,
    pub output: Array2<f64>,
}

impl Mlp {
    /// PyTorch-style `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` initialization.
    pub fn new<R: Rng>(sizes: &[usize], output: Activation, rng: &mut R) -> Self {
        let layers = sizes
            .windows(2)
            .map(|w| {
                let bound = 1.0 / (w[0] as f64).sqrt();
                Dense::uniform(w[0], w[1], bound, bound, rng)
            })
            .collect();
        Self { layers, output }
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            Activation::Relu
        }
    }

    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward_traced(x).output
    }

    pub fn forward_traced(&self, x: ArrayView2<f64>) -> MlpTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let act = self.activation(i);
            let y = layer.forward(h.view()).mapv_into(|v| act.apply(v));
            inputs.push(h);
            h = y;
        }
        MlpTrace { inputs, output: h }
    }

    /// Backpropagates `grad_output` (gradient w.r.t. the activated output).
    pub fn backward(
        &self,
        trace: &MlpTrace,
        grad_output: ArrayView2<f64>,
    ) -> (Vec<DenseGrad>, Array2<f64>) {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut out = trace.output.clone();
        let mut g = grad_output.to_owned();
        for i in (0..self.layers.len()).rev() {
            let act = self.activation(i);
            g.zip_mut_with(&out, |gv, &y| *gv *= act.grad_from_output(y));
            let x = &trace.inputs[i];
            let (grad, gx) = Dense::backward(x.view(), self.layers[i].weight.view(), g.view());
            grads.push(grad);
            g = gx;
            out = x.clone();
        }
        grads.reverse();
        (grads, g)
    }

    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) {
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            t.soft_update_from(s, tau);
        }
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Dense::param_count).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    pub fn set_params(&mut self, values: &[f64]) {
        assert_eq!(values.len(), self.param_count());
        for (p, &v) in self
            .layers
            .iter_mut()
            .flat_map(|l| l.params_mut())
            .zip(values)
        {
            *p = v;
        }
    }
}

/// Adam state for every layer of an [`Mlp`].
#[derive(Debug, Clone)]
pub struct MlpAdam(Vec<DenseAdam>);

impl MlpAdam {
    pub fn new(mlp: &Mlp, config: AdamConfig) -> Self {
        Self(
            mlp.layers
                .iter()
                .map(|l| DenseAdam::new(l, config))
                .collect(),
        )
    }

    pub fn step(&mut self, mlp: &mut Mlp, grads: &[DenseGrad]) {
        for ((opt, layer), g) in self.0.iter_mut().zip(&mut mlp.layers).zip(grads) {
            opt.step(layer, g);
        }
    }
}
