#![allow(dead_code)]

use aeproj::nn::{Activation, AvgPool2d, Conv2d, Dense, Layer, LayerStack};
use aeproj::{Rng, Tensor};

/// Direct evaluation of the NT-Xent definition: for each anchor `a` with
/// partner `p`, `−log(exp(s_ap/τ) / Σ_{k≠a} exp(s_ak/τ))`, averaged over all
/// `2N` anchors. No max-shift, no shared intermediates.
pub fn brute_force_nt_xent(rows: &[Vec<f64>], tau: f64) -> f64 {
    let two_n = rows.len();
    let n = two_n / 2;
    let sim = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        dot / (na * nb)
    };
    let mut total = 0.0;
    for a in 0..two_n {
        let p = if a < n { a + n } else { a - n };
        let num = (sim(&rows[a], &rows[p]) / tau).exp();
        let mut den = 0.0;
        for k in 0..two_n {
            if k != a {
                den += (sim(&rows[a], &rows[k]) / tau).exp();
            }
        }
        total += -(num / den).ln();
    }
    total / two_n as f64
}

pub fn random_rows(rng: &mut Rng, count: usize, d: usize) -> Vec<Vec<f64>> {
    (0..count)
        .map(|_| (0..d).map(|_| rng.uniform(-1.0, 1.0)).collect())
        .collect()
}

pub fn pick_activation(rng: &mut Rng) -> Activation {
    [
        Activation::Relu,
        Activation::Silu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Identity,
    ][rng.below(5) as usize]
}

/// A small stack touching every layer kind: conv, activation, optional pool,
/// flatten, dense, activation, dense.
pub fn random_stack(rng: &mut Rng) -> (LayerStack, Tensor) {
    let c = 1 + rng.below(3) as usize;
    let h = 4 + rng.below(4) as usize;
    let k = 1 + rng.below(3) as usize;
    let stride = 1 + rng.below(2) as usize;
    let pad = rng.below(2) as usize;
    let oc = 1 + rng.below(3) as usize;
    let mut layers = vec![
        Layer::Conv2d(Conv2d::new(c, oc, k, stride, pad, rng).unwrap()),
        Layer::Activation(pick_activation(rng)),
    ];
    let conv_side = (h + 2 * pad - k) / stride + 1;
    if conv_side >= 2 && rng.bernoulli(0.5) {
        layers.push(Layer::AvgPool2d(AvgPool2d { size: 2 }));
    }
    layers.push(Layer::Flatten);
    let probe = LayerStack::new(vec![c, h, h], layers.clone()).unwrap();
    let flat = probe.output_shape()[0];
    let hidden = 1 + rng.below(4) as usize;
    let out = 1 + rng.below(3) as usize;
    layers.push(Layer::Dense(Dense::new(flat, hidden, rng).unwrap()));
    layers.push(Layer::Activation(pick_activation(rng)));
    layers.push(Layer::Dense(Dense::new(hidden, out, rng).unwrap()));
    for layer in &mut layers {
        // Non-zero biases so every parameter is exercised.
        if let Some(b) = layer.param_value_mut(1) {
            for v in b.data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
    }
    let stack = LayerStack::new(vec![c, h, h], layers).unwrap();
    let batch = 1 + rng.below(2) as usize;
    let x = Tensor::uniform(rng, -1.0, 1.0, &[batch, c, h, h]).unwrap();
    (stack, x)
}

/// Smallest |pre-activation| feeding any ReLU; central differences are only
/// meaningful away from the kink.
pub fn relu_margin(stack: &LayerStack, x: &Tensor) -> f64 {
    let mut h = x.clone();
    let mut margin = f64::INFINITY;
    for layer in stack.layers() {
        if matches!(layer, Layer::Activation(Activation::Relu)) {
            margin = margin.min(h.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs())));
        }
        h = layer.forward(&h).unwrap();
    }
    margin
}

/// `Σ c·out + ½ Σ out²` with fixed coefficients derived from the shape.
pub fn mixed_loss(out: &Tensor) -> aeproj::Result<(f64, Tensor)> {
    let coeffs: Vec<f64> = (0..out.len()).map(|i| ((i as f64) * 0.7 + 0.3).sin()).collect();
    let loss = out
        .data()
        .iter()
        .zip(&coeffs)
        .map(|(o, c)| c * o + 0.5 * o * o)
        .sum();
    let grad = out.data().iter().zip(&coeffs).map(|(o, c)| c + o).collect();
    Ok((loss, Tensor::new(out.shape().to_vec(), grad)?))
}

/// Draws stacks until one keeps every ReLU input at least `min_margin` from 0.
pub fn smooth_random_stack(seed: u64, min_margin: f64) -> (LayerStack, Tensor) {
    let root = Rng::new(seed, 0x6C);
    for attempt in 0.. {
        let (stack, x) = random_stack(&mut root.child(attempt));
        if relu_margin(&stack, &x) > min_margin {
            return (stack, x);
        }
    }
    unreachable!()
}
