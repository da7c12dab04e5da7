//! Shared fixtures for the adaptive-horizon model tests: a small
//! configuration, random batches, parameter-block views and the per-block
//! finite-difference check of the training objective.

#![allow(dead_code)]

use flexihorizon::fsn::{
    batch_loss_grad_target, batch_outputs, distillation_pairs, history_features, FsnConfig, FsnGrads, FsnModel, RegressionLoss, TrainItem,
};
use flexihorizon::nnet::{finite_diff_check, Activation, Tensor};
use flexihorizon::trajgeo::{HorizonSet, Point2, Trajectory};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn small_config(seed: u64, regression: RegressionLoss) -> FsnConfig {
    FsnConfig {
        history_len: 6,
        horizons: HorizonSet::new(vec![3, 5]).unwrap(),
        k: 3,
        latent_dim: 8,
        encoder_hidden: vec![8],
        apm_hidden: vec![8],
        decoder_hidden: vec![8, 8],
        activation: Activation::Relu,
        regression,
        lambda: 0.5,
        seed,
    }
}

pub fn random_history(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
    let mut p = Point2::new(rng.gen_range(-20.0..20.0), rng.gen_range(-20.0..20.0));
    let mut pts = vec![p];
    for _ in 1..n {
        p = p + Point2::new(rng.gen_range(-1.0..1.5), rng.gen_range(-1.0..1.0));
        pts.push(p);
    }
    Trajectory::new(pts, 0.1).unwrap()
}

/// Four samples covering both horizons, with random local futures and scores.
pub fn random_batch(rng: &mut ChaCha8Rng, cfg: &FsnConfig) -> Vec<TrainItem> {
    let fmax = cfg.horizons.max();
    (0..4)
        .map(|i| {
            let (input, _) = history_features(&random_history(rng, cfg.history_len), cfg.history_len).unwrap();
            TrainItem {
                agent_id: format!("a{i}"),
                input,
                future: (0..fmax)
                    .map(|t| Point2::new(t as f64 * rng.gen_range(0.5..1.5), rng.gen_range(-1.0..1.0)))
                    .collect(),
                horizon: cfg.horizons.as_slice()[i % cfg.horizons.len()],
                score: Some(rng.gen_range(0.0..1.0)),
            }
        })
        .collect()
}

pub fn param_blocks(model: &FsnModel) -> Vec<&Tensor> {
    let mut v = model.encoder.tensors();
    for d in model.decoders.decoders.values() {
        v.extend(d.tensors());
    }
    v
}

pub fn param_blocks_mut(model: &mut FsnModel) -> Vec<&mut Tensor> {
    let mut v = model.encoder.tensors_mut();
    for d in model.decoders.decoders.values_mut() {
        v.extend(d.tensors_mut());
    }
    v
}

pub fn grad_blocks(g: &FsnGrads) -> Vec<&Tensor> {
    let mut v = g.encoder.tensors();
    for d in g.decoders.values() {
        v.extend(d.tensors());
    }
    v
}

/// A model at a generic parameter point: the initialization (zero biases)
/// jittered so that no ReLU sits exactly on its kink.
pub fn random_instance(cfg: FsnConfig, seed: u64) -> FsnModel {
    let mut model = FsnModel::new(cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    for t in param_blocks_mut(&mut model) {
        t.data_mut().iter_mut().for_each(|v| *v += rng.gen_range(-0.1..0.1));
    }
    model
}

/// Features of the batch's distillation teacher at the current parameters.
pub fn teacher_features(model: &FsnModel, batch: &[&TrainItem]) -> Option<Vec<f64>> {
    let scores: Vec<f64> = batch.iter().map(|it| it.score.unwrap()).collect();
    let (teacher, _) = distillation_pairs(&scores)?;
    Some(batch_outputs(model, batch).unwrap()[teacher].features.clone())
}

/// Index of the shared mode-logit bias within each decoder's output-bias
/// block, keyed by block position. Adding a constant to every mode logit
/// leaves the softmax unchanged, so the loss is exactly invariant along this
/// coordinate; its true derivative is zero and central differences there are
/// pure round-off.
pub fn invariant_coordinates(model: &FsnModel) -> Vec<(usize, usize)> {
    let mut pos = model.encoder.tensors().len();
    let mut out = Vec::new();
    for d in model.decoders.decoders.values() {
        pos += d.tensors().len();
        out.push((pos - 1, d.tensors().last().unwrap().len() - 1));
    }
    out
}

/// Largest per-coordinate relative error over every parameter block. The
/// teacher is a stop-gradient target, so the finite differences perturb the
/// objective with the teacher features frozen at the base parameters.
pub fn worst_block_error(model: &FsnModel, batch: &[TrainItem], lambda: f64) -> f64 {
    let refs: Vec<&TrainItem> = batch.iter().collect();
    let teacher = teacher_features(model, &refs);
    let invariant = invariant_coordinates(model);
    let loss_and_grad = |m: &FsnModel, b: usize| {
        let (loss, grads, _) = batch_loss_grad_target(m, &refs, lambda, teacher.as_deref()).unwrap();
        (loss.total, grad_blocks(&grads)[b].data().to_vec())
    };
    let mut worst = 0.0f64;
    for b in 0..param_blocks(model).len() {
        let start = param_blocks(model)[b].data().to_vec();
        let coords: Vec<usize> = (0..start.len()).filter(|&i| !invariant.contains(&(b, i))).collect();
        let mut m = model.clone();
        let err = finite_diff_check(
            |theta| {
                param_blocks_mut(&mut m)[b].data_mut().copy_from_slice(theta);
                loss_and_grad(&m, b)
            },
            &start,
            1e-5,
            Some(&coords),
        );
        worst = worst.max(err);
    }
    for &(b, i) in &invariant {
        let (_, g) = loss_and_grad(model, b);
        assert!(g[i].abs() <= 1e-12, "shared logit bias gradient {}", g[i]);
        let at = |d: f64| {
            let mut m = model.clone();
            param_blocks_mut(&mut m)[b].data_mut()[i] += d;
            loss_and_grad(&m, b).0
        };
        assert!(((at(1e-5) - at(-1e-5)) / 2e-5).abs() <= 1e-9);
    }
    worst
}
