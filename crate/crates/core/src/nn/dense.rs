use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Fully connected layer computing `y = x·Wᵀ + b` on `[batch × in]` inputs.
#[derive(Debug, Clone)]
pub struct Dense {
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    pub frozen: bool,
}

/// Glorot-uniform bound `√(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl Dense {
    pub fn new(input: usize, output: usize, rng: &mut Rng) -> Result<Self> {
        let mut layer = Dense::zeros(input, output);
        layer.init_params(rng)?;
        Ok(layer)
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weight: Tensor::zeros(&[output, input]),
            bias: Tensor::zeros(&[output]),
            grad_weight: Tensor::zeros(&[output, input]),
            grad_bias: Tensor::zeros(&[output]),
            frozen: false,
        }
    }

    /// Builds a layer from explicit parameters; gradients start at zero.
    pub fn from_params(weight: Tensor, bias: Tensor) -> Result<Self> {
        match (weight.shape(), bias.shape()) {
            ([out, _], [b]) if out == b => {}
            _ => {
                return Err(Error::ShapeMismatch {
                    op: "Dense::from_params",
                    lhs: weight.shape().to_vec(),
                    rhs: bias.shape().to_vec(),
                })
            }
        }
        Ok(Dense {
            grad_weight: Tensor::zeros(weight.shape()),
            grad_bias: Tensor::zeros(bias.shape()),
            weight,
            bias,
            frozen: false,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Glorot-uniform weights, zero bias.
    pub fn init_params(&mut self, rng: &mut Rng) -> Result<()> {
        let bound = glorot_bound(self.input_dim(), self.output_dim());
        self.weight = Tensor::uniform(rng, -bound, bound, self.weight.shape())?;
        self.bias = Tensor::zeros(self.bias.shape());
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 2 || x.shape()[1] != self.input_dim() {
            return Err(Error::ShapeMismatch {
                op: "dense forward",
                lhs: x.shape().to_vec(),
                rhs: self.weight.shape().to_vec(),
            });
        }
        let mut out = x.matmul_nt(&self.weight)?;
        let bias = self.bias.data();
        for r in 0..out.rows() {
            for (v, b) in out.row_mut(r).iter_mut().zip(bias) {
                *v += b;
            }
        }
        out.ensure_finite("dense forward")?;
        Ok(out)
    }

    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.ndim() != 2
            || grad_out.shape()[1] != self.output_dim()
            || grad_out.rows() != input.rows()
        {
            return Err(Error::ShapeMismatch {
                op: "dense backward",
                lhs: grad_out.shape().to_vec(),
                rhs: vec![input.rows(), self.output_dim()],
            });
        }
        if !self.frozen {
            let gw = grad_out.matmul_tn(input)?;
            for (acc, g) in self.grad_weight.data_mut().iter_mut().zip(gw.data()) {
                *acc += g;
            }
            let gb = self.grad_bias.data_mut();
            for r in 0..grad_out.rows() {
                for (acc, g) in gb.iter_mut().zip(grad_out.row(r)) {
                    *acc += g;
                }
            }
        }
        grad_out.matmul(&self.weight)
    }
}
