//! Training objectives: the horizon-classifier loss, feature distillation
//! and the combined decoder loss.

use super::model::{ApmOutput, RegressionLoss};
use crate::error::{invalid, Result};
use crate::nnet::loss::{
    huber_loss_grad, laplace_nll_grad, softmax, softmax_backward, softmax_cross_entropy_grad, softmax_kl_grad,
};
use crate::nnet::{cross_entropy, squared_error};
use crate::scoring::HorizonLabel;
use crate::trajgeo::{HorizonSet, Point2};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApmLoss {
    pub l_cls: f64,
    pub l_reg: f64,
    pub total: f64,
}

/// Cross-entropy on the horizon classes plus the squared error between the
/// expected horizon and the label.
pub fn apm_loss(output: &ApmOutput, label: &HorizonLabel, horizons: &HorizonSet) -> Result<ApmLoss> {
    check_label(output.horizon_probs.len(), label, horizons)?;
    let l_cls = cross_entropy(&output.horizon_probs, &label.one_hot)?;
    let l_reg = squared_error(&[output.f_soft], &[label.f_gt as f64])?;
    Ok(ApmLoss {
        l_cls,
        l_reg,
        total: l_cls + l_reg,
    })
}

fn check_label(classes: usize, label: &HorizonLabel, horizons: &HorizonSet) -> Result<()> {
    if !horizons.contains(label.f_gt) {
        return invalid(format!("label horizon {} is not a configured class", label.f_gt));
    }
    if classes != horizons.len() || label.one_hot.len() != horizons.len() {
        return invalid("label and output disagree on the number of horizon classes");
    }
    Ok(())
}

/// [`apm_loss`] for raw head logits, with the gradient with respect to them.
pub fn apm_loss_grad(logits: &[f64], f_gt: usize, horizons: &HorizonSet) -> Result<(ApmLoss, Vec<f64>)> {
    let class = horizons
        .index_of(f_gt)
        .ok_or_else(|| crate::Error::InvalidInput(format!("label horizon {f_gt} is not a configured class")))?;
    if logits.len() != horizons.len() {
        return invalid("logit count does not match the horizon classes");
    }
    let (l_cls, g_cls) = softmax_cross_entropy_grad(logits, class)?;
    let p = softmax(logits);
    let f_soft: f64 = p.iter().zip(horizons.iter()).map(|(p, f)| p * f as f64).sum();
    let r = f_soft - f_gt as f64;
    let g_probs: Vec<f64> = horizons.iter().map(|f| 2.0 * r * f as f64).collect();
    let g_reg = softmax_backward(&p, &g_probs);
    let l_reg = r * r;
    let grad = g_cls.iter().zip(&g_reg).map(|(a, b)| a + b).collect();
    Ok((
        ApmLoss {
            l_cls,
            l_reg,
            total: l_cls + l_reg,
        },
        grad,
    ))
}

/// Teacher and students of a batch: the best-scoring sample teaches the
/// `floor(n / 2)` worst-scoring ones. Ties in score keep batch order.
pub fn distillation_pairs(scores: &[f64]) -> Option<(usize, Vec<usize>)> {
    if scores.len() < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let n_students = scores.len() / 2;
    Some((order[0], order[scores.len() - n_students..].to_vec()))
}

/// Mean `KL(softmax(V_student) || softmax(V_teacher))` over the students of
/// the batch; zero for batches smaller than two.
pub fn kl_feature_distill(features: &[Vec<f64>], scores: &[f64]) -> Result<f64> {
    Ok(kl_feature_distill_grad(features, scores)?.0)
}

/// As [`kl_feature_distill`], with the gradient with respect to every
/// sample's features (zero for the teacher, which is held constant).
pub fn kl_feature_distill_grad(features: &[Vec<f64>], scores: &[f64]) -> Result<(f64, Vec<Vec<f64>>)> {
    kl_feature_distill_grad_target(features, scores, None)
}

/// As [`kl_feature_distill_grad`], with the teacher's features replaced by
/// `target` when given. Since the teacher is a stop-gradient constant, the
/// returned gradient is the exact derivative of this function with the
/// target frozen at its current value.
pub fn kl_feature_distill_grad_target(features: &[Vec<f64>], scores: &[f64], target: Option<&[f64]>) -> Result<(f64, Vec<Vec<f64>>)> {
    if features.len() != scores.len() {
        return invalid("one score per feature vector is required");
    }
    let mut grads: Vec<Vec<f64>> = features.iter().map(|v| vec![0.0; v.len()]).collect();
    let Some((teacher, students)) = distillation_pairs(scores) else {
        return Ok((0.0, grads));
    };
    let teacher_features = target.unwrap_or(&features[teacher]);
    if teacher_features.len() != features[teacher].len() {
        return invalid("frozen teacher features have the wrong width");
    }
    let n = students.len() as f64;
    let mut total = 0.0;
    for &s in &students {
        let (kl, g) = softmax_kl_grad(&features[s], teacher_features)?;
        total += kl;
        for (dst, v) in grads[s].iter_mut().zip(g) {
            *dst += v / n;
        }
    }
    Ok((total / n, grads))
}

/// Local-frame decoder output for one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleOutput {
    /// `K` paths of `f` positions.
    pub positions: Vec<Vec<Point2>>,
    /// Laplace scales matching `positions`, when the Laplace head is enabled.
    pub scales: Option<Vec<Vec<Point2>>>,
    /// `K` mode logits.
    pub logits: Vec<f64>,
    /// Mode-averaged penultimate decoder features.
    pub features: Vec<f64>,
}

/// Gradient of the loss with respect to a [`SampleOutput`].
#[derive(Debug, Clone, PartialEq)]
pub struct SampleGrad {
    pub positions: Vec<Vec<Point2>>,
    pub scales: Option<Vec<Vec<Point2>>>,
    pub logits: Vec<f64>,
    pub features: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FsnLoss {
    pub l_reg: f64,
    pub l_cls: f64,
    pub l_kl: f64,
    pub total: f64,
}

/// Mode with the lowest average displacement error (ties: lowest index).
pub fn best_mode(positions: &[Vec<Point2>], gt: &[Point2]) -> usize {
    let mut best = 0;
    let mut best_ade = f64::INFINITY;
    for (k, path) in positions.iter().enumerate() {
        let ade: f64 = path.iter().zip(gt).map(|(a, b)| a.dist(*b)).sum::<f64>() / gt.len() as f64;
        if ade < best_ade {
            best_ade = ade;
            best = k;
        }
    }
    best
}

fn flatten(points: &[Point2]) -> Vec<f64> {
    points.iter().flat_map(|p| [p.x, p.y]).collect()
}

fn unflatten(v: &[f64]) -> Vec<Point2> {
    v.chunks_exact(2).map(|c| Point2::new(c[0], c[1])).collect()
}

/// Combined loss `L_reg + L_cls + lambda * L_KL` over a batch.
///
/// `gts[i]` is sample `i`'s local-frame ground truth at its active horizon.
/// `scores` rank samples for distillation and are only needed when
/// `lambda > 0`.
pub fn fsn_loss(
    outputs: &[SampleOutput],
    gts: &[&[Point2]],
    scores: Option<&[f64]>,
    regression: &RegressionLoss,
    lambda: f64,
) -> Result<FsnLoss> {
    Ok(fsn_loss_grad(outputs, gts, scores, regression, lambda)?.0)
}

pub fn fsn_loss_grad(
    outputs: &[SampleOutput],
    gts: &[&[Point2]],
    scores: Option<&[f64]>,
    regression: &RegressionLoss,
    lambda: f64,
) -> Result<(FsnLoss, Vec<SampleGrad>)> {
    fsn_loss_grad_target(outputs, gts, scores, regression, lambda, None)
}

/// As [`fsn_loss_grad`], with the distillation teacher's features frozen at
/// `teacher` when given (see [`kl_feature_distill_grad_target`]).
pub fn fsn_loss_grad_target(
    outputs: &[SampleOutput],
    gts: &[&[Point2]],
    scores: Option<&[f64]>,
    regression: &RegressionLoss,
    lambda: f64,
    teacher: Option<&[f64]>,
) -> Result<(FsnLoss, Vec<SampleGrad>)> {
    if outputs.len() != gts.len() {
        return invalid("one ground truth per sample is required");
    }
    if outputs.is_empty() {
        return invalid("empty batch");
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return invalid("distillation weight must be >= 0");
    }
    let b = outputs.len() as f64;
    let mut loss = FsnLoss::default();
    let mut grads = Vec::with_capacity(outputs.len());
    for (out, gt) in outputs.iter().zip(gts) {
        let k = out.positions.len();
        if k == 0 || out.logits.len() != k {
            return invalid("mode count mismatch in decoder output");
        }
        let f = out.positions[0].len();
        if out.positions.iter().any(|p| p.len() != f) || gt.len() != f {
            return invalid(format!("prediction horizon {f} does not match ground truth of {} steps", gt.len()));
        }
        let kb = best_mode(&out.positions, gt);
        let pred = flatten(&out.positions[kb]);
        let target = flatten(gt);
        let mut g_pos = vec![vec![Point2::ORIGIN; f]; k];
        let mut g_scales = out.scales.as_ref().map(|_| vec![vec![Point2::ORIGIN; f]; k]);
        let l_reg = match regression {
            RegressionLoss::Huber { delta } => {
                let (l, g) = huber_loss_grad(&pred, &target, *delta)?;
                g_pos[kb] = unflatten(&g).iter().map(|p| *p * (1.0 / b)).collect();
                l
            }
            RegressionLoss::Laplace => {
                let scales = out
                    .scales
                    .as_ref()
                    .ok_or_else(|| crate::Error::InvalidInput("Laplace loss needs predicted scales".into()))?;
                let (l, gl, gs) = laplace_nll_grad(&pred, &flatten(&scales[kb]), &target)?;
                g_pos[kb] = unflatten(&gl).iter().map(|p| *p * (1.0 / b)).collect();
                g_scales.as_mut().expect("scales present")[kb] = unflatten(&gs).iter().map(|p| *p * (1.0 / b)).collect();
                l
            }
        };
        let (l_cls, g_logits) = softmax_cross_entropy_grad(&out.logits, kb)?;
        loss.l_reg += l_reg / b;
        loss.l_cls += l_cls / b;
        grads.push(SampleGrad {
            positions: g_pos,
            scales: g_scales,
            logits: g_logits.iter().map(|v| v / b).collect(),
            features: vec![0.0; out.features.len()],
        });
    }
    if lambda > 0.0 {
        let scores = scores.ok_or_else(|| crate::Error::InvalidInput("distillation needs per-sample scores".into()))?;
        let feats: Vec<Vec<f64>> = outputs.iter().map(|o| o.features.clone()).collect();
        let (l_kl, g_feat) = kl_feature_distill_grad_target(&feats, scores, teacher)?;
        loss.l_kl = l_kl;
        for (g, gf) in grads.iter_mut().zip(g_feat) {
            g.features = gf.iter().map(|v| lambda * v).collect();
        }
    }
    loss.total = loss.l_reg + loss.l_cls + lambda * loss.l_kl;
    Ok((loss, grads))
}
