use crate::error::{Error, Result};
use crate::nn::dense::glorot_bound;
use crate::rng::Rng;
use crate::tensor::Tensor;

/// 2-D convolution over `[batch × C × H × W]` with zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub grad_weight: Tensor,
    pub grad_bias: Tensor,
    pub stride: usize,
    pub padding: usize,
    pub frozen: bool,
}

/// `floor((n + 2p − k) / s) + 1`, or `None` if the kernel does not fit.
pub fn conv_out_extent(n: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = n + 2 * padding;
    if stride == 0 || padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut Rng,
    ) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(Error::invalid("conv kernel and stride must be positive"));
        }
        let shape = [out_channels, in_channels, kernel, kernel];
        let mut layer = Conv2d {
            weight: Tensor::zeros(&shape),
            bias: Tensor::zeros(&[out_channels]),
            grad_weight: Tensor::zeros(&shape),
            grad_bias: Tensor::zeros(&[out_channels]),
            stride,
            padding,
            frozen: false,
        };
        layer.init_params(rng)?;
        Ok(layer)
    }

    fn dims(&self) -> (usize, usize, usize, usize) {
        let s = self.weight.shape();
        (s[0], s[1], s[2], s[3])
    }

    pub fn init_params(&mut self, rng: &mut Rng) -> Result<()> {
        let (oc, ic, kh, kw) = self.dims();
        let bound = glorot_bound(ic * kh * kw, oc * kh * kw);
        self.weight = Tensor::uniform(rng, -bound, bound, self.weight.shape())?;
        self.bias = Tensor::zeros(self.bias.shape());
        Ok(())
    }

    /// Per-sample output shape for a per-sample `[C, H, W]` input.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let (oc, ic, kh, kw) = self.dims();
        match input {
            [c, h, w] if *c == ic => {
                let oh = conv_out_extent(*h, kh, self.stride, self.padding);
                let ow = conv_out_extent(*w, kw, self.stride, self.padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![oc, oh, ow]),
                    _ => Err(Error::InvalidShape {
                        shape: input.to_vec(),
                        reason: "input smaller than convolution kernel".into(),
                    }),
                }
            }
            _ => Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: self.weight.shape().to_vec(),
            }),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 4 {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "conv2d expects [batch, C, H, W]".into(),
            });
        }
        let out_shape = self.output_shape(&x.shape()[1..])?;
        let (oc, ic, kh, kw) = self.dims();
        let (b, h, w) = (x.shape()[0], x.shape()[2], x.shape()[3]);
        let (oh, ow) = (out_shape[1], out_shape[2]);
        let (s, p) = (self.stride as isize, self.padding as isize);
        let xd = x.data();
        let wd = self.weight.data();
        let mut out = vec![0.0; b * oc * oh * ow];
        for n in 0..b {
            for o in 0..oc {
                let base = (n * oc + o) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = self.bias.data()[o];
                        for c in 0..ic {
                            for ky in 0..kh {
                                let iy = oy as isize * s + ky as isize - p;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = ox as isize * s + kx as isize - p;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((n * ic + c) * h + iy as usize) * w + ix as usize;
                                    let wi = ((o * ic + c) * kh + ky) * kw + kx;
                                    acc += wd[wi] * xd[xi];
                                }
                            }
                        }
                        out[base + oy * ow + ox] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![b, oc, oh, ow], out)
    }

    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let out_shape = self.output_shape(&input.shape()[1..])?;
        let (oc, ic, kh, kw) = self.dims();
        let (b, h, w) = (input.shape()[0], input.shape()[2], input.shape()[3]);
        let (oh, ow) = (out_shape[1], out_shape[2]);
        if grad_out.shape() != [b, oc, oh, ow] {
            return Err(Error::ShapeMismatch {
                op: "conv2d backward",
                lhs: grad_out.shape().to_vec(),
                rhs: vec![b, oc, oh, ow],
            });
        }
        let (s, p) = (self.stride as isize, self.padding as isize);
        let xd = input.data();
        let gd = grad_out.data();
        let mut dx = vec![0.0; input.len()];
        let frozen = self.frozen;
        let wd = self.weight.data().to_vec();
        let gw = self.grad_weight.data_mut();
        let mut gb = vec![0.0; oc];
        for n in 0..b {
            for o in 0..oc {
                let base = (n * oc + o) * oh * ow;
                for oy in 0..oh {
                    for ox in 0..ow {
                        let g = gd[base + oy * ow + ox];
                        gb[o] += g;
                        for c in 0..ic {
                            for ky in 0..kh {
                                let iy = oy as isize * s + ky as isize - p;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = ox as isize * s + kx as isize - p;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((n * ic + c) * h + iy as usize) * w + ix as usize;
                                    let wi = ((o * ic + c) * kh + ky) * kw + kx;
                                    if !frozen {
                                        gw[wi] += g * xd[xi];
                                    }
                                    dx[xi] += g * wd[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
        if !frozen {
            for (acc, g) in self.grad_bias.data_mut().iter_mut().zip(gb) {
                *acc += g;
            }
        }
        Tensor::new(input.shape().to_vec(), dx)
    }
}

/// Non-overlapping average pooling with a square window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AvgPool2d {
    pub size: usize,
}

impl AvgPool2d {
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match input {
            [c, h, w] if *h >= self.size && *w >= self.size && self.size > 0 => {
                Ok(vec![*c, h / self.size, w / self.size])
            }
            _ => Err(Error::InvalidShape {
                shape: input.to_vec(),
                reason: format!("cannot {0}x{0} pool", self.size),
            }),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        if x.ndim() != 4 {
            return Err(Error::InvalidShape {
                shape: x.shape().to_vec(),
                reason: "pool expects [batch, C, H, W]".into(),
            });
        }
        let os = self.output_shape(&x.shape()[1..])?;
        let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (oh, ow, k) = (os[1], os[2], self.size);
        let norm = 1.0 / (k * k) as f64;
        let xd = x.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let src = &xd[plane * h * w..(plane + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for dy in 0..k {
                        for dx in 0..k {
                            acc += src[(oy * k + dy) * w + ox * k + dx];
                        }
                    }
                    out.push(acc * norm);
                }
            }
        }
        Tensor::new(vec![b, c, oh, ow], out)
    }

    pub fn backward(&self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        let os = self.output_shape(&input.shape()[1..])?;
        let (b, c, h, w) = (
            input.shape()[0],
            input.shape()[1],
            input.shape()[2],
            input.shape()[3],
        );
        let (oh, ow, k) = (os[1], os[2], self.size);
        if grad_out.shape() != [b, c, oh, ow] {
            return Err(Error::ShapeMismatch {
                op: "pool backward",
                lhs: grad_out.shape().to_vec(),
                rhs: vec![b, c, oh, ow],
            });
        }
        let norm = 1.0 / (k * k) as f64;
        let gd = grad_out.data();
        let mut dx = vec![0.0; input.len()];
        for plane in 0..b * c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let g = gd[(plane * oh + oy) * ow + ox] * norm;
                    for dy in 0..k {
                        for ddx in 0..k {
                            dx[plane * h * w + (oy * k + dy) * w + ox * k + ddx] += g;
                        }
                    }
                }
            }
        }
        Tensor::new(input.shape().to_vec(), dx)
    }
}
