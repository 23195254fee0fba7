use crate::error::{Error, Result};
use crate::nn::LayerStack;
use crate::tensor::Tensor;

/// Maps a stack output to `(loss, ∂loss/∂output)`.
pub type LossFn<'a> = dyn Fn(&Tensor) -> Result<(f64, Tensor)> + 'a;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// Worst relative error over all non-frozen scalar parameters.
    pub max_rel_error: f64,
    /// Worst relative error over the input gradient.
    pub input_max_rel_error: f64,
    pub params_checked: usize,
}

fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-8);
    (analytic - numeric).abs() / denom
}

fn eval_loss(stack: &LayerStack, loss_fn: &LossFn<'_>, x: &Tensor) -> Result<f64> {
    let (loss, _) = loss_fn(&stack.infer(x)?)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("grad_check loss"));
    }
    Ok(loss)
}

/// Compares analytic gradients against central differences
/// `(L(θ+ε) − L(θ−ε)) / 2ε` for every non-frozen scalar parameter and every
/// input entry. The stack passed in is left untouched.
pub fn grad_check(
    stack: &LayerStack,
    loss_fn: &LossFn<'_>,
    x: &Tensor,
    eps: f64,
) -> Result<GradCheckReport> {
    if !(eps > 0.0) {
        return Err(Error::invalid("grad_check eps must be positive"));
    }
    let mut work = stack.clone();
    work.zero_grad();
    let out = work.forward(x, true)?;
    let (loss, upstream) = loss_fn(&out)?;
    if !loss.is_finite() {
        return Err(Error::NonFinite("grad_check loss"));
    }
    let input_grad = work.backward(&upstream)?;

    let mut max_rel_error = 0.0f64;
    let mut params_checked = 0;
    for li in 0..work.layers().len() {
        if work.layers()[li].is_frozen() {
            continue;
        }
        let analytic: Vec<Tensor> = work.layers()[li].grads().into_iter().cloned().collect();
        for (which, grad) in analytic.iter().enumerate() {
            for e in 0..grad.len() {
                let original = work.layers_mut()[li].param_value_mut(which).expect("param").data()[e];
                let probe = |value: f64, work: &mut LayerStack| -> Result<f64> {
                    work.layers_mut()[li].param_value_mut(which).expect("param").data_mut()[e] = value;
                    eval_loss(work, loss_fn, x)
                };
                let plus = probe(original + eps, &mut work)?;
                let minus = probe(original - eps, &mut work)?;
                work.layers_mut()[li].param_value_mut(which).expect("param").data_mut()[e] = original;
                let numeric = (plus - minus) / (2.0 * eps);
                max_rel_error = max_rel_error.max(rel_error(grad.data()[e], numeric));
                params_checked += 1;
            }
        }
    }

    let mut input_max_rel_error = 0.0f64;
    let mut xp = x.clone();
    for e in 0..x.len() {
        let original = x.data()[e];
        xp.data_mut()[e] = original + eps;
        let plus = eval_loss(&work, loss_fn, &xp)?;
        xp.data_mut()[e] = original - eps;
        let minus = eval_loss(&work, loss_fn, &xp)?;
        xp.data_mut()[e] = original;
        let numeric = (plus - minus) / (2.0 * eps);
        input_max_rel_error = input_max_rel_error.max(rel_error(input_grad.data()[e], numeric));
    }

    Ok(GradCheckReport {
        max_rel_error,
        input_max_rel_error,
        params_checked,
    })
}
