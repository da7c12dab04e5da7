//! Independent 256-bit re-implementation of the smooth Fréchet kernel's
//! forward pass, used as a finite-difference oracle for its gradient.
//!
//! At `beta = 100` many gradient components are legitimately tiny (1e-10 and
//! below) because the tempered weights concentrate on one predecessor. A
//! double-precision forward pass cannot resolve such components with finite
//! differences, so the differences are taken on this forward pass instead;
//! the analytic gradient under test is still the `f64` one.

#![allow(dead_code)]

use flexihorizon::fdk::{fdk_distance_grad, FdkParams};
use flexihorizon::trajgeo::{Point2, Trajectory};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rug::ops::Pow;
use rug::Float;

pub const PREC: u32 = 256;

pub fn f(v: f64) -> Float {
    Float::with_val(PREC, v)
}

pub fn huber(z: &Float, delta: &Float) -> Float {
    let a = Float::with_val(PREC, z.abs_ref());
    if a <= *delta {
        Float::with_val(PREC, z * z) / 2u32
    } else {
        let half = Float::with_val(PREC, delta / 2u32);
        Float::with_val(PREC, delta * (a - half))
    }
}

/// Huber-weighted geometric mean; zero if any argument is zero.
pub fn smin(v: &[Float], beta: &Float, delta: &Float) -> Float {
    if v.len() == 1 {
        return v[0].clone();
    }
    if v.iter().any(|x| *x <= 0) {
        return f(0.0);
    }
    let w: Vec<Float> = v
        .iter()
        .map(|x| {
            let e = Float::with_val(PREC, beta * huber(x, delta));
            (-e).exp()
        })
        .collect();
    let total = w.iter().fold(f(0.0), |a, b| a + b);
    let mut log_mean = f(0.0);
    for (x, wi) in v.iter().zip(&w) {
        log_mean += Float::with_val(PREC, wi * x.clone().ln()) / &total;
    }
    log_mean.exp()
}

/// `(s^p + m^p)^(1/p)` with `p = beta`.
pub fn smax(s: &Float, m: &Float, beta: &Float) -> Float {
    let top = if s > m { s.clone() } else { m.clone() };
    if top <= 0 {
        return f(0.0);
    }
    let rs = Float::with_val(PREC, s / &top).pow(beta);
    let rm = Float::with_val(PREC, m / &top).pow(beta);
    let inv = Float::with_val(PREC, 1u32 / beta.clone());
    top * Float::with_val(PREC, rs + rm).pow(inv)
}

pub fn distance_hp(xs: &[(Float, Float)], ys: &[Point2], p: &FdkParams) -> Float {
    let (beta, delta, gamma) = (f(p.beta), f(p.delta), f(p.gamma));
    let (m, n) = (xs.len(), ys.len());
    let mut val: Vec<Float> = vec![f(0.0); m * n];
    for i in 0..m {
        for j in 0..n {
            let dx = Float::with_val(PREC, &xs[i].0 - ys[j].x);
            let dy = Float::with_val(PREC, &xs[i].1 - ys[j].y);
            let d = Float::with_val(PREC, dx.hypot(&dy));
            let cell = d / &gamma;
            let mut preds = Vec::new();
            if i > 0 && j > 0 {
                preds.push(val[(i - 1) * n + j - 1].clone());
            }
            if i > 0 {
                preds.push(val[(i - 1) * n + j].clone());
            }
            if j > 0 {
                preds.push(val[i * n + j - 1].clone());
            }
            val[i * n + j] = if preds.is_empty() {
                cell
            } else {
                smax(&cell, &smin(&preds, &beta, &delta), &beta)
            };
        }
    }
    val[m * n - 1].clone() * gamma
}

pub fn random_traj(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Trajectory {
    let pts = (0..n)
        .map(|_| Point2::new(rng.gen_range(-scale..scale), rng.gen_range(-scale..scale)))
        .collect();
    Trajectory::new(pts, 0.1).unwrap()
}

/// `|a - fd| / max(1e-8, |fd|)` maximized over all coordinates of `x`.
pub fn max_relative_error(x: &Trajectory, y: &Trajectory, p: &FdkParams, h: f64) -> f64 {
    let analytic = fdk_distance_grad(x, y, p).unwrap();
    let base: Vec<(Float, Float)> = x.points().iter().map(|q| (f(q.x), f(q.y))).collect();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        for c in 0..2 {
            let eval = |s: f64| {
                let mut pts = base.clone();
                if c == 0 {
                    pts[i].0 += s;
                } else {
                    pts[i].1 += s;
                }
                distance_hp(&pts, y.points(), p)
            };
            let diff = eval(h) - eval(-h);
            let fd = (diff / (2.0 * h)).to_f64();
            let a = if c == 0 { analytic[i].x } else { analytic[i].y };
            worst = worst.max((a - fd).abs() / fd.abs().max(1e-8));
        }
    }
    worst
}
