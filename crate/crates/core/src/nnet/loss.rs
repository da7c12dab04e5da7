//! Loss functions. Every loss comes with a `_grad` companion returning the
//! value and the gradient with respect to its first argument.

use crate::error::{invalid, Result};

/// Floor applied inside logarithms of probabilities.
pub const LOG_FLOOR: f64 = 1e-12;

/// Numerically stable softmax (max shifted).
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    if logits.is_empty() {
        return Vec::new();
    }
    let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Pulls a gradient on softmax outputs back to the logits.
pub fn softmax_backward(probs: &[f64], grad_probs: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(grad_probs).map(|(p, g)| p * g).sum();
    probs
        .iter()
        .zip(grad_probs)
        .map(|(p, g)| p * (g - inner))
        .collect()
}

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return invalid(format!("{what}: length mismatch {a} vs {b}"));
    }
    if a == 0 {
        return invalid(format!("{what}: empty input"));
    }
    Ok(())
}

/// `-sum t_i ln max(p_i, floor)` for a probability vector and a target
/// distribution (usually one-hot).
pub fn cross_entropy(probs: &[f64], target: &[f64]) -> Result<f64> {
    check_len(probs.len(), target.len(), "cross_entropy")?;
    Ok(-probs
        .iter()
        .zip(target)
        .map(|(&p, &t)| if t == 0.0 { 0.0 } else { t * p.max(LOG_FLOOR).ln() })
        .sum::<f64>())
}

/// Cross-entropy of `softmax(logits)` against a class index, with the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy_grad(logits: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    if class >= logits.len() {
        return invalid(format!("class {class} out of range for {} logits", logits.len()));
    }
    let p = softmax(logits);
    let loss = -p[class].max(LOG_FLOOR).ln();
    let mut g = p;
    g[class] -= 1.0;
    Ok((loss, g))
}

/// Mean squared error over all elements.
pub fn squared_error(pred: &[f64], target: &[f64]) -> Result<f64> {
    Ok(squared_error_grad(pred, target)?.0)
}

pub fn squared_error_grad(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), target.len(), "squared_error")?;
    let n = pred.len() as f64;
    let r: Vec<f64> = pred.iter().zip(target).map(|(p, t)| p - t).collect();
    let loss = r.iter().map(|v| v * v).sum::<f64>() / n;
    Ok((loss, r.into_iter().map(|v| 2.0 * v / n).collect()))
}

/// Smooth-L1 with threshold `delta`, averaged over elements:
/// `r²/2` inside, `delta(|r| - delta/2)` outside.
pub fn huber_loss(pred: &[f64], target: &[f64], delta: f64) -> Result<f64> {
    Ok(huber_loss_grad(pred, target, delta)?.0)
}

pub fn huber_loss_grad(pred: &[f64], target: &[f64], delta: f64) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), target.len(), "huber_loss")?;
    if !(delta > 0.0 && delta.is_finite()) {
        return invalid(format!("huber threshold must be positive, got {delta}"));
    }
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(p, t)| {
            let r = p - t;
            if r.abs() <= delta {
                loss += 0.5 * r * r;
                r / n
            } else {
                loss += delta * (r.abs() - 0.5 * delta);
                delta * r.signum() / n
            }
        })
        .collect();
    Ok((loss / n, grad))
}

/// Laplace negative log-likelihood averaged over elements:
/// `ln(2b) + |x - mu| / b`. Scales must be positive.
pub fn laplace_nll(loc: &[f64], scale: &[f64], target: &[f64]) -> Result<f64> {
    Ok(laplace_nll_grad(loc, scale, target)?.0)
}

/// Value plus gradients with respect to the location and the scale.
pub fn laplace_nll_grad(loc: &[f64], scale: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    check_len(loc.len(), target.len(), "laplace_nll")?;
    check_len(scale.len(), target.len(), "laplace_nll")?;
    if scale.iter().any(|&b| !(b > 0.0)) {
        return invalid("laplace scales must be positive");
    }
    let n = loc.len() as f64;
    let mut loss = 0.0;
    let mut g_loc = Vec::with_capacity(loc.len());
    let mut g_scale = Vec::with_capacity(loc.len());
    for ((&m, &b), &x) in loc.iter().zip(scale).zip(target) {
        let r = m - x;
        loss += (2.0 * b).ln() + r.abs() / b;
        g_loc.push(r.signum() / b / n);
        g_scale.push((1.0 / b - r.abs() / (b * b)) / n);
    }
    Ok((loss / n, g_loc, g_scale))
}

/// `KL(p || q) = sum p_i (ln p_i - ln q_i)` with logarithms floored.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    check_len(p.len(), q.len(), "kl_divergence")?;
    Ok(p
        .iter()
        .zip(q)
        .map(|(&pi, &qi)| {
            if pi == 0.0 {
                0.0
            } else {
                pi * (pi.max(LOG_FLOOR).ln() - qi.max(LOG_FLOOR).ln())
            }
        })
        .sum())
}

/// `KL(softmax(student) || softmax(teacher))` and its gradient with respect to
/// the student logits; the teacher is treated as a constant.
pub fn softmax_kl_grad(student: &[f64], teacher: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(student.len(), teacher.len(), "softmax_kl")?;
    let p = softmax(student);
    let q = softmax(teacher);
    let loss = kl_divergence(&p, &q)?;
    let g: Vec<f64> = p
        .iter()
        .zip(&q)
        .map(|(&pi, &qi)| pi.max(LOG_FLOOR).ln() - qi.max(LOG_FLOOR).ln())
        .collect();
    Ok((loss, softmax_backward(&p, &g)))
}
