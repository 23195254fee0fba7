//! Layers with explicit forward and analytic backward rules.
//!
//! A [`LayerStack`] is the composite used for the backbone, the projector and
//! both halves of the autoencoder. Inputs are batched along the leading axis;
//! shapes are validated per sample when the stack is built.

mod activation;
mod conv;
mod dense;
mod gradcheck;

pub use activation::{sigmoid, Activation};
pub use conv::{conv_out_extent, AvgPool2d, Conv2d};
pub use dense::{glorot_bound, Dense};
pub use gradcheck::{grad_check, GradCheckReport, LossFn};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub enum Layer {
    Dense(Dense),
    Conv2d(Conv2d),
    Activation(Activation),
    AvgPool2d(AvgPool2d),
    Flatten,
}

/// Mutable view of one parameter tensor and its accumulated gradient.
pub struct Param<'a> {
    pub value: &'a mut Tensor,
    pub grad: &'a Tensor,
    pub frozen: bool,
}

impl Layer {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match self {
            Layer::Dense(d) => match input {
                [n] if *n == d.input_dim() => Ok(vec![d.output_dim()]),
                _ => Err(Error::ShapeMismatch {
                    op: "dense",
                    lhs: input.to_vec(),
                    rhs: d.weight.shape().to_vec(),
                }),
            },
            Layer::Conv2d(c) => c.output_shape(input),
            Layer::AvgPool2d(p) => p.output_shape(input),
            Layer::Activation(_) => Ok(input.to_vec()),
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.forward(x),
            Layer::Conv2d(c) => c.forward(x),
            Layer::AvgPool2d(p) => p.forward(x),
            Layer::Activation(a) => a.forward(x),
            Layer::Flatten => x.reshape(&[x.rows(), x.row_len()]),
        }
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        match self {
            Layer::Dense(d) => d.backward(input, grad_out),
            Layer::Conv2d(c) => c.backward(input, grad_out),
            Layer::AvgPool2d(p) => p.backward(input, grad_out),
            Layer::Activation(a) => a.backward(input, grad_out),
            Layer::Flatten => grad_out.reshape(input.shape()),
        }
    }

    pub fn params(&mut self) -> Vec<Param<'_>> {
        match self {
            Layer::Dense(Dense {
                weight,
                bias,
                grad_weight,
                grad_bias,
                frozen,
            })
            | Layer::Conv2d(Conv2d {
                weight,
                bias,
                grad_weight,
                grad_bias,
                frozen,
                ..
            }) => vec![
                Param {
                    value: weight,
                    grad: grad_weight,
                    frozen: *frozen,
                },
                Param {
                    value: bias,
                    grad: grad_bias,
                    frozen: *frozen,
                },
            ],
            _ => Vec::new(),
        }
    }

    /// Parameter tensors in `(weight, bias)` order; empty for stateless layers.
    pub fn param_values(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.weight, &d.bias],
            Layer::Conv2d(c) => vec![&c.weight, &c.bias],
            _ => Vec::new(),
        }
    }

    pub fn param_value_mut(&mut self, which: usize) -> Option<&mut Tensor> {
        match (self, which) {
            (Layer::Dense(d), 0) => Some(&mut d.weight),
            (Layer::Dense(d), 1) => Some(&mut d.bias),
            (Layer::Conv2d(c), 0) => Some(&mut c.weight),
            (Layer::Conv2d(c), 1) => Some(&mut c.bias),
            _ => None,
        }
    }

    pub fn grads(&self) -> Vec<&Tensor> {
        match self {
            Layer::Dense(d) => vec![&d.grad_weight, &d.grad_bias],
            Layer::Conv2d(c) => vec![&c.grad_weight, &c.grad_bias],
            _ => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        match self {
            Layer::Dense(d) => {
                d.grad_weight = Tensor::zeros(d.weight.shape());
                d.grad_bias = Tensor::zeros(d.bias.shape());
            }
            Layer::Conv2d(c) => {
                c.grad_weight = Tensor::zeros(c.weight.shape());
                c.grad_bias = Tensor::zeros(c.bias.shape());
            }
            _ => {}
        }
    }

    pub fn is_frozen(&self) -> bool {
        match self {
            Layer::Dense(d) => d.frozen,
            Layer::Conv2d(c) => c.frozen,
            _ => false,
        }
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        match self {
            Layer::Dense(d) => d.frozen = frozen,
            Layer::Conv2d(c) => c.frozen = frozen,
            _ => {}
        }
    }

    pub fn init_params(&mut self, rng: &mut Rng) -> Result<()> {
        match self {
            Layer::Dense(d) => d.init_params(rng),
            Layer::Conv2d(c) => c.init_params(rng),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerStack {
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
    layers: Vec<Layer>,
    recorded: Option<Vec<Tensor>>,
}

impl LayerStack {
    /// Validates that every layer accepts its predecessor's per-sample output.
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer>) -> Result<Self> {
        let mut shape = input_shape.clone();
        for layer in &layers {
            shape = layer.output_shape(&shape)?;
        }
        Ok(LayerStack {
            input_shape,
            output_shape: shape,
            layers,
            recorded: None,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.param_values())
            .map(Tensor::len)
            .sum()
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.ndim() == 0 || x.shape()[1..] != self.input_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "stack input",
                lhs: x.shape().to_vec(),
                rhs: self.input_shape.clone(),
            });
        }
        Ok(())
    }

    /// Inference-only pass; never touches recorded state.
    pub fn infer(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let mut h = x.clone();
        for layer in &self.layers {
            h = layer.forward(&h)?;
        }
        Ok(h)
    }

    /// Forward pass; with `record`, keeps per-layer inputs for [`Self::backward`].
    pub fn forward(&mut self, x: &Tensor, record: bool) -> Result<Tensor> {
        if !record {
            self.recorded = None;
            return self.infer(x);
        }
        self.check_input(x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for layer in &self.layers {
            let next = layer.forward(&h)?;
            inputs.push(h);
            h = next;
        }
        self.recorded = Some(inputs);
        Ok(h)
    }

    /// Consumes the recorded forward, accumulates gradients into every
    /// non-frozen parameter and returns the gradient w.r.t. the stack input.
    pub fn backward(&mut self, upstream: &Tensor) -> Result<Tensor> {
        let inputs = self.recorded.take().ok_or(Error::NoRecordedForward)?;
        let mut g = upstream.clone();
        for (layer, input) in self.layers.iter_mut().zip(&inputs).rev() {
            g = layer.backward(input, &g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for layer in &mut self.layers {
            layer.zero_grad();
        }
    }

    pub fn params(&mut self) -> Vec<Param<'_>> {
        self.layers.iter_mut().flat_map(Layer::params).collect()
    }

    pub fn param_values(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(Layer::param_values).collect()
    }

    pub fn init_params(&mut self, rng: &mut Rng) -> Result<()> {
        for layer in &mut self.layers {
            layer.init_params(rng)?;
        }
        Ok(())
    }

    /// Dense layers in order, paired with their index in the stack.
    pub fn dense_layers(&self) -> impl Iterator<Item = (usize, &Dense)> {
        self.layers.iter().enumerate().filter_map(|(i, l)| match l {
            Layer::Dense(d) => Some((i, d)),
            _ => None,
        })
    }
}
