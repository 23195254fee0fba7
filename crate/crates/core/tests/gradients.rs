mod common;

use aeproj::losses::{mse_with_grad, nt_xent, softmax_cross_entropy, NtXentConfig};
use aeproj::nn::{grad_check, Activation, Dense, Layer, LayerStack};
use aeproj::{Rng, Tensor};
use proptest::prelude::*;

use common::{mixed_loss, smooth_random_stack};

fn numeric_grad(f: impl Fn(&Tensor) -> f64, x: &Tensor, eps: f64) -> Tensor {
    let mut g = Tensor::zeros(x.shape());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        xp.data_mut()[i] = orig + eps;
        let plus = f(&xp);
        xp.data_mut()[i] = orig - eps;
        let minus = f(&xp);
        xp.data_mut()[i] = orig;
        g.data_mut()[i] = (plus - minus) / (2.0 * eps);
    }
    g
}

fn max_rel(a: &Tensor, n: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(n.data())
        .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn random_stacks_match_central_differences(seed in any::<u64>()) {
        let (stack, x) = smooth_random_stack(seed, 1e-3);
        let report = grad_check(&stack, &mixed_loss, &x, 1e-5).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{:?}", report);
        prop_assert!(report.input_max_rel_error < 1e-4, "{:?}", report);
    }

    #[test]
    fn nt_xent_gradient_matches(seed in any::<u64>(), n in 1usize..5, d in 2usize..6, t in 0usize..3) {
        let tau = [0.1, 0.5, 1.0][t];
        let cfg = NtXentConfig::new(tau).unwrap();
        let z = Tensor::uniform(&mut Rng::new(seed, 0), -1.0, 1.0, &[2 * n, d]).unwrap();
        let (_, analytic) = nt_xent(&z, &cfg).unwrap();
        let numeric = numeric_grad(|p| nt_xent(p, &cfg).unwrap().0, &z, 1e-6);
        prop_assert!(max_rel(&analytic, &numeric) < 1e-4);
    }

    #[test]
    fn cross_entropy_gradient_matches(seed in any::<u64>(), b in 1usize..5, k in 2usize..5) {
        let mut rng = Rng::new(seed, 1);
        let logits = Tensor::uniform(&mut rng, -3.0, 3.0, &[b, k]).unwrap();
        let labels: Vec<usize> = (0..b).map(|_| rng.below(k as u64) as usize).collect();
        let (_, analytic) = softmax_cross_entropy(&logits, &labels).unwrap();
        let numeric = numeric_grad(|l| softmax_cross_entropy(l, &labels).unwrap().0, &logits, 1e-6);
        prop_assert!(max_rel(&analytic, &numeric) < 1e-5);
    }

    #[test]
    fn mse_gradient_matches(seed in any::<u64>(), len in 1usize..20) {
        let mut rng = Rng::new(seed, 2);
        let p = Tensor::uniform(&mut rng, -1.0, 1.0, &[len]).unwrap();
        let t = Tensor::uniform(&mut rng, -1.0, 1.0, &[len]).unwrap();
        let (_, analytic) = mse_with_grad(&p, &t).unwrap();
        let numeric = numeric_grad(|q| mse_with_grad(q, &t).unwrap().0, &p, 1e-6);
        prop_assert!(max_rel(&analytic, &numeric) < 1e-6);
    }
}

#[test]
fn frozen_layers_get_no_gradient_but_pass_it_through() {
    let mut rng = Rng::new(4, 0);
    let mut first = Dense::new(3, 4, &mut rng).unwrap();
    first.frozen = true;
    let mut stack = LayerStack::new(
        vec![3],
        vec![
            Layer::Dense(first),
            Layer::Activation(Activation::Tanh),
            Layer::Dense(Dense::new(4, 2, &mut rng).unwrap()),
        ],
    )
    .unwrap();
    let x = Tensor::uniform(&mut rng, -1.0, 1.0, &[3, 3]).unwrap();
    let out = stack.forward(&x, true).unwrap();
    let (_, g) = mixed_loss(&out).unwrap();
    let gx = stack.backward(&g).unwrap();
    assert!(gx.max_abs() > 0.0);
    for g in stack.layers()[0].grads() {
        assert_eq!(g.max_abs(), 0.0);
    }
    let report = grad_check(&stack, &mixed_loss, &x, 1e-5).unwrap();
    assert_eq!(report.params_checked, 4 * 2 + 2);
    assert!(report.input_max_rel_error < 1e-4);
}

#[test]
fn every_activation_in_a_dense_sandwich() {
    for (i, act) in [
        Activation::Relu,
        Activation::Silu,
        Activation::Sigmoid,
        Activation::Tanh,
        Activation::Identity,
    ]
    .into_iter()
    .enumerate()
    {
        let mut rng = Rng::new(20 + i as u64, 0);
        let stack = LayerStack::new(
            vec![5],
            vec![
                Layer::Dense(Dense::new(5, 6, &mut rng).unwrap()),
                Layer::Activation(act),
                Layer::Dense(Dense::new(6, 3, &mut rng).unwrap()),
            ],
        )
        .unwrap();
        let x = Tensor::uniform(&mut rng, -1.0, 1.0, &[4, 5]).unwrap();
        if common::relu_margin(&stack, &x) < 1e-3 {
            continue;
        }
        let report = grad_check(&stack, &mixed_loss, &x, 1e-5).unwrap();
        assert!(report.max_rel_error < 1e-4, "{act}: {report:?}");
    }
}
