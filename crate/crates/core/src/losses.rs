//! Objective functions with analytic gradients.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean squared error `(1/m)·Σ(xᵢ − x′ᵢ)²` over all elements.
pub fn mse(x: &Tensor, x_prime: &Tensor) -> Result<f64> {
    same_shape("mse", x, x_prime)?;
    if x.is_empty() {
        return Err(Error::invalid("mse of empty tensors"));
    }
    let sum = x
        .data()
        .iter()
        .zip(x_prime.data())
        .fold(0.0, |acc, (a, b)| acc + (a - b) * (a - b));
    Ok(sum / x.len() as f64)
}

/// MSE of `pred` against `target` and its gradient w.r.t. `pred`.
pub fn mse_with_grad(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    let loss = mse(pred, target)?;
    let scale = 2.0 / pred.len() as f64;
    let grad = pred.sub(target)?.scale(scale)?;
    Ok((loss, grad))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |acc, x| acc + x * x).sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0, |acc, (x, y)| acc + x * y)
}

pub fn cosine_sim(u: &Tensor, v: &Tensor) -> Result<f64> {
    same_shape("cosine_sim", u, v)?;
    let (nu, nv) = (norm(u.data()), norm(v.data()));
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm("cosine_sim"));
    }
    Ok((dot(u.data(), v.data()) / (nu * nv)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtXentConfig {
    pub temperature: f64,
}

impl Default for NtXentConfig {
    fn default() -> Self {
        NtXentConfig { temperature: 0.5 }
    }
}

impl NtXentConfig {
    pub fn new(temperature: f64) -> Result<Self> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(Error::invalid("temperature must be positive and finite"));
        }
        Ok(NtXentConfig { temperature })
    }
}

/// Row index of the positive partner in the `[i₁…i_N, j₁…j_N]` layout.
pub fn partner(row: usize, n_pairs: usize) -> usize {
    (row + n_pairs) % (2 * n_pairs)
}

/// Per-anchor NT-Xent terms `ℓ_r` for each of the 2N rows.
///
/// `ℓ_r = −s(r, partner(r))/τ + log Σ_{k≠r} exp(s(r,k)/τ)`, with cosine
/// similarity `s`. The denominator excludes only the anchor itself.
pub fn nt_xent_terms(projections: &Tensor, cfg: &NtXentConfig) -> Result<Vec<f64>> {
    Ok(nt_xent_inner(projections, cfg, false)?.0)
}

/// Mean NT-Xent over the 2N ordered positive pairs and its gradient w.r.t.
/// the raw (unnormalized) projections.
pub fn nt_xent(projections: &Tensor, cfg: &NtXentConfig) -> Result<(f64, Tensor)> {
    let (terms, grad) = nt_xent_inner(projections, cfg, true)?;
    let loss = terms.iter().fold(0.0, |a, b| a + b) / terms.len() as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("nt_xent"));
    }
    Ok((loss, grad.expect("gradient requested")))
}

fn nt_xent_inner(
    projections: &Tensor,
    cfg: &NtXentConfig,
    want_grad: bool,
) -> Result<(Vec<f64>, Option<Tensor>)> {
    let (rows, d) = match projections.shape() {
        [r, d] if *r >= 2 && r % 2 == 0 && *d > 0 => (*r, *d),
        s => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                reason: "nt_xent expects [2N, d] with N >= 1".into(),
            })
        }
    };
    let n = rows / 2;
    let tau = cfg.temperature;

    let norms: Vec<f64> = (0..rows).map(|r| norm(projections.row(r))).collect();
    if norms.iter().any(|&v| v == 0.0) {
        return Err(Error::ZeroNorm("nt_xent"));
    }
    let mut unit = projections.clone();
    for (r, &nr) in norms.iter().enumerate() {
        for v in unit.row_mut(r) {
            *v /= nr;
        }
    }
    let sim = unit.matmul_nt(&unit)?;

    let mut terms = Vec::with_capacity(rows);
    // coeff[r][k] = ∂(mean loss)/∂s(r,k), filled per anchor.
    let mut coeff = vec![0.0; rows * rows];
    let inv_count = 1.0 / rows as f64;
    for r in 0..rows {
        let p = partner(r, n);
        let logits: Vec<f64> = (0..rows).map(|k| sim.row(r)[k] / tau).collect();
        let max = (0..rows)
            .filter(|&k| k != r)
            .map(|k| logits[k])
            .fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = (0..rows)
            .filter(|&k| k != r)
            .fold(0.0, |acc, k| acc + (logits[k] - max).exp());
        let lse = max + denom.ln();
        terms.push(lse - logits[p]);
        if want_grad {
            for k in (0..rows).filter(|&k| k != r) {
                let softmax = (logits[k] - max).exp() / denom;
                let target = if k == p { 1.0 } else { 0.0 };
                coeff[r * rows + k] = (softmax - target) * inv_count / tau;
            }
        }
    }
    if !want_grad {
        return Ok((terms, None));
    }

    // s(r,k) = u_r·u_k, so ∂L/∂u_r = Σ_k (c[r,k] + c[k,r]) u_k.
    let mut grad = Tensor::zeros(&[rows, d]);
    for r in 0..rows {
        let mut gu = vec![0.0; d];
        for k in 0..rows {
            let c = coeff[r * rows + k] + coeff[k * rows + r];
            if c != 0.0 {
                for (g, u) in gu.iter_mut().zip(unit.row(k)) {
                    *g += c * u;
                }
            }
        }
        // Through u = z/‖z‖: ∂L/∂z = (g − u (u·g)) / ‖z‖.
        let ur = unit.row(r);
        let proj = dot(ur, &gu);
        for ((out, g), u) in grad.row_mut(r).iter_mut().zip(&gu).zip(ur) {
            *out = (g - u * proj) / norms[r];
        }
    }
    grad.ensure_finite("nt_xent gradient")?;
    Ok((terms, Some(grad)))
}

/// Mean softmax cross-entropy over rows and its gradient `(softmax − onehot)/n`.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (n, k) = match logits.shape() {
        [n, k] if *n == labels.len() && *k > 0 && *n > 0 => (*n, *k),
        s => {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: s.to_vec(),
                rhs: vec![labels.len()],
            })
        }
    };
    let mut grad = Tensor::zeros(&[n, k]);
    let mut total = 0.0;
    for (r, &label) in labels.iter().enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange {
                label,
                num_classes: k,
            });
        }
        let row = logits.row(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let denom: f64 = row.iter().fold(0.0, |acc, v| acc + (v - max).exp());
        total += max + denom.ln() - row[label];
        for (c, g) in grad.row_mut(r).iter_mut().enumerate() {
            let p = (row[c] - max).exp() / denom;
            *g = (p - if c == label { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    Ok((total / n as f64, grad))
}

/// Row-wise softmax probabilities.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let mut out = logits.clone();
    for r in 0..logits.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            denom += *v;
        }
        for v in row.iter_mut() {
            *v /= denom;
        }
    }
    out.ensure_finite("softmax")?;
    Ok(out)
}
