//! Neural substrate: every loss composed with a two-layer network checked
//! against central differences, closed-form minima, optimizer behavior and
//! bitwise determinism of training.

use flexihorizon::fdk::{fdk_distance, fdk_distance_grad, FdkParams};
use flexihorizon::nnet::loss::{huber_loss_grad, laplace_nll_grad, softmax_cross_entropy_grad, softmax_kl_grad, squared_error_grad};
use flexihorizon::nnet::{
    cross_entropy, finite_diff_check, huber_loss, kl_divergence, optimizer_step, softmax, squared_error, Activation, AdamW, Mlp, MlpSpec, OptimState, Tensor,
};
use flexihorizon::trajgeo::{Point2, Trajectory};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const IN: usize = 3;
const OUT: usize = 4;
const BATCH: usize = 5;

/// A loss on the network output rows: value and gradient with respect to
/// the output.
type Head = fn(&[f64], usize) -> (f64, Vec<f64>);

fn flat(m: &Mlp) -> Vec<f64> {
    m.tensors().iter().flat_map(|t| t.data().to_vec()).collect()
}

fn load(m: &mut Mlp, theta: &[f64]) {
    let mut at = 0;
    for t in m.tensors_mut() {
        let n = t.len();
        t.data_mut().copy_from_slice(&theta[at..at + n]);
        at += n;
    }
}

fn network(seed: u64) -> (Mlp, Tensor) {
    let mlp = MlpSpec::new(vec![IN, 6, OUT], Activation::Tanh, seed).unwrap().init();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = mlp;
    for t in m.tensors_mut() {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.2..0.2));
    }
    let x = Tensor::new(vec![BATCH, IN], (0..BATCH * IN).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap();
    (m, x)
}

/// Mean of `head` over the batch rows, with the parameter gradient.
fn composed(m: &Mlp, x: &Tensor, head: Head) -> (f64, Vec<f64>) {
    let (y, cache) = m.forward(x).unwrap();
    let mut g = Tensor::zeros(&[BATCH, OUT]);
    let mut loss = 0.0;
    for r in 0..BATCH {
        let (l, gr) = head(y.row(r), r);
        loss += l / BATCH as f64;
        for (dst, v) in g.row_mut(r).iter_mut().zip(gr) {
            *dst = v / BATCH as f64;
        }
    }
    let (grads, _) = m.backward(&cache, &g, None).unwrap();
    (loss, flat(&grads))
}

fn target(r: usize) -> Vec<f64> {
    (0..OUT).map(|j| ((r * OUT + j) as f64 * 0.37).sin()).collect()
}

fn squared_head(y: &[f64], r: usize) -> (f64, Vec<f64>) {
    squared_error_grad(y, &target(r)).unwrap()
}

fn huber_head(y: &[f64], r: usize) -> (f64, Vec<f64>) {
    huber_loss_grad(y, &target(r), 0.5).unwrap()
}

fn cross_entropy_head(y: &[f64], r: usize) -> (f64, Vec<f64>) {
    softmax_cross_entropy_grad(y, r % OUT).unwrap()
}

/// Two outputs are locations, two are log-scales.
fn laplace_head(y: &[f64], r: usize) -> (f64, Vec<f64>) {
    let scale: Vec<f64> = y[2..].iter().map(|v| v.exp()).collect();
    let (l, g_loc, g_scale) = laplace_nll_grad(&y[..2], &scale, &target(r)[..2]).unwrap();
    let mut g = g_loc;
    g.extend(g_scale.iter().zip(&scale).map(|(gs, s)| gs * s));
    (l, g)
}

fn kl_head(y: &[f64], r: usize) -> (f64, Vec<f64>) {
    softmax_kl_grad(y, &target(r)).unwrap()
}

#[test]
fn every_loss_through_a_two_layer_network_matches_finite_differences() {
    let heads: [(&str, Head); 5] = [
        ("squared", squared_head),
        ("huber", huber_head),
        ("cross-entropy", cross_entropy_head),
        ("laplace", laplace_head),
        ("kl", kl_head),
    ];
    for (name, head) in heads {
        for seed in 0..5 {
            let (m, x) = network(seed);
            let theta = flat(&m);
            let mut work = m.clone();
            let err = finite_diff_check(
                |t| {
                    load(&mut work, t);
                    composed(&work, &x, head)
                },
                &theta,
                1e-5,
                None,
            );
            assert!(err <= 1e-4, "{name} seed {seed}: relative error {err:e}");
        }
    }
}

#[test]
fn linear_objective_is_checked_to_round_off() {
    let c: Vec<f64> = (0..20).map(|i| (i as f64 * 0.7).cos() + 2.0).collect();
    let theta: Vec<f64> = (0..20).map(|i| i as f64 * 0.1 - 1.0).collect();
    let err = finite_diff_check(|t| (t.iter().zip(&c).map(|(a, b)| a * b).sum(), c.clone()), &theta, 1e-5, None);
    assert!(err <= 1e-10, "{err:e}");
}

/// The default `beta` is covered against a high-precision forward pass in
/// the kernel's own gradient test; at a moderate `beta` plain double
/// precision differences resolve every component.
#[test]
fn smooth_frechet_as_a_loss_over_prediction_coordinates() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let p = FdkParams::default().with_beta(10.0);
    for _ in 0..10 {
        let y: Vec<Point2> = (0..5).map(|i| Point2::new(i as f64, rng.gen_range(-1.0..1.0))).collect();
        let y = Trajectory::new(y, 0.1).unwrap();
        let theta: Vec<f64> = (0..10).map(|i| (i / 2) as f64 * (1 - i % 2) as f64 + rng.gen_range(-0.8..0.8)).collect();
        let as_traj = |t: &[f64]| Trajectory::new(t.chunks(2).map(|c| Point2::new(c[0], c[1])).collect(), 0.1).unwrap();
        let err = finite_diff_check(
            |t| {
                let x = as_traj(t);
                let g = fdk_distance_grad(&x, &y, &p).unwrap();
                (fdk_distance(&x, &y, &p).unwrap(), g.iter().flat_map(|q| [q.x, q.y]).collect())
            },
            &theta,
            1e-5,
            None,
        );
        assert!(err <= 1e-4, "{err:e}");
    }
}

#[test]
fn zero_gradient_without_decay_is_a_no_op() {
    let cfg = AdamW {
        weight_decay: 0.0,
        ..AdamW::default()
    };
    let mut p = Tensor::from_vec(vec![0.3, -1.2, 4.0]);
    let before = p.clone();
    let g = Tensor::zeros(&[3]);
    let mut state = OptimState::default();
    for _ in 0..5 {
        optimizer_step(&mut [&mut p], &[&g], &mut state, &cfg).unwrap();
    }
    assert_eq!(p, before);
}

#[test]
fn hand_computed_second_step() {
    let cfg = AdamW {
        lr: 0.1,
        weight_decay: 0.0,
        ..AdamW::default()
    };
    let mut p = Tensor::from_vec(vec![1.0]);
    let mut state = OptimState::default();
    optimizer_step(&mut [&mut p], &[&Tensor::from_vec(vec![2.0])], &mut state, &cfg).unwrap();
    optimizer_step(&mut [&mut p], &[&Tensor::from_vec(vec![1.0])], &mut state, &cfg).unwrap();
    // m = 0.9·0.2 + 0.1·1 = 0.28, v = 0.999·0.004 + 0.001·1 = 0.004996
    let (m, v) = (0.28, 0.004996);
    let step2 = (m / (1.0 - 0.81)) / ((v / (1.0 - 0.998001f64)).sqrt() + 1e-8);
    let expected = 1.0 - 0.1 * (2.0 / (2.0 + 1e-8)) - 0.1 * step2;
    assert!((p.data()[0] - expected).abs() <= 1e-12, "{} vs {expected}", p.data()[0]);
}

#[test]
fn convex_quadratic_decreases_at_every_step() {
    let a = [1.0, 4.0, 0.5, 2.0];
    let c = [3.0, -2.0, 7.0, -5.0];
    let loss = |x: &[f64]| x.iter().zip(&a).zip(&c).map(|((x, a), c)| a * (x - c) * (x - c)).sum::<f64>();
    let mut p = Tensor::from_vec(vec![-20.0, 20.0, -20.0, 20.0]);
    let mut state = OptimState::default();
    let cfg = AdamW {
        lr: 0.01,
        ..AdamW::default()
    };
    let mut prev = loss(p.data());
    for step in 0..300 {
        let g = Tensor::from_vec(p.data().iter().zip(&a).zip(&c).map(|((x, a), c)| 2.0 * a * (x - c)).collect());
        optimizer_step(&mut [&mut p], &[&g], &mut state, &cfg).unwrap();
        let now = loss(p.data());
        assert!(now < prev, "step {step}: {now} >= {prev}");
        prev = now;
    }
}

fn train_once(seed: u64) -> Vec<f64> {
    let (mut m, x) = network(seed);
    let mut state = OptimState::default();
    let cfg = AdamW::default();
    for _ in 0..20 {
        let (y, cache) = m.forward(&x).unwrap();
        let mut g = Tensor::zeros(&[BATCH, OUT]);
        for r in 0..BATCH {
            let (_, gr) = squared_head(y.row(r), r);
            g.row_mut(r).copy_from_slice(&gr);
        }
        let (grads, _) = m.backward(&cache, &g, None).unwrap();
        let gt: Vec<&Tensor> = grads.tensors();
        let mut pt = m.tensors_mut();
        optimizer_step(&mut pt, &gt, &mut state, &cfg).unwrap();
    }
    flat(&m)
}

#[test]
fn training_is_bitwise_reproducible() {
    let a = train_once(3);
    let b = train_once(3);
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_ne!(a, train_once(4));
}

proptest! {
    #[test]
    fn losses_are_nonnegative_and_vanish_at_their_minimum(
        pred in proptest::collection::vec(-10.0f64..10.0, 1..8),
        shift in proptest::collection::vec(-10.0f64..10.0, 8),
        delta in 0.1f64..3.0,
        class in 0usize..8,
    ) {
        let n = pred.len();
        let target: Vec<f64> = pred.iter().zip(&shift).map(|(p, s)| p + s).collect();
        prop_assert!(squared_error(&pred, &target).unwrap() >= 0.0);
        prop_assert!(huber_loss(&pred, &target, delta).unwrap() >= 0.0);
        prop_assert_eq!(squared_error(&pred, &pred).unwrap(), 0.0);
        prop_assert_eq!(huber_loss(&pred, &pred, delta).unwrap(), 0.0);

        let p = softmax(&pred);
        let q = softmax(&target);
        prop_assert!(kl_divergence(&p, &q).unwrap() >= -1e-15);
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);

        let mut one_hot = vec![0.0; n];
        one_hot[class % n] = 1.0;
        prop_assert!(cross_entropy(&p, &one_hot).unwrap() >= 0.0);
        prop_assert_eq!(cross_entropy(&one_hot, &one_hot).unwrap(), 0.0);
    }
}
