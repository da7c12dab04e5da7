//! Huber-smoothed Fréchet distance kernel (FDK).
//!
//! The kernel replaces the hard `min`/`max` of the Fréchet coupling program
//! with Huber-tempered soft operators, evaluated over the `|X| x |Y|` lattice
//! instead of over the (exponentially many) couplings. Cell values are the
//! normalized distances `u = d / gamma = -ln(phi)`, so the lattice runs in
//! the log-similarity domain:
//!
//! ```text
//! D(i, j) = smax(u_ij, smin(D(i-1, j), D(i, j-1), D(i-1, j-1)))
//! similarity = exp(-D(m-1, n-1)),   distance = gamma * D(m-1, n-1)
//! ```
//!
//! `smin` is a geometric mean with Huber-tempered weights
//! `exp(-beta * H(v, delta))`; `smax` is a `p`-norm with `p = beta`. Both
//! are permutation symmetric and collapse to the hard operators as
//! `beta -> inf`. Neither ever undershoots its hard counterpart, so the soft
//! value bounds the exact Fréchet distance from above and tightens as `beta`
//! grows. The geometric mean is zero whenever an argument is zero and the
//! `p`-norm of `(0, 0)` is zero, which keeps `distance(X, X) == 0`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::trajgeo::{Point2, Trajectory};

/// Pairs closer than this count as coincident for the `epsilon` bonus.
pub const COINCIDENCE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdkParams {
    /// Soft-min sharpness.
    pub beta: f64,
    /// Length scale in meters.
    pub gamma: f64,
    /// Huber threshold.
    pub delta: f64,
    /// Log-similarity bonus for coincident point pairs.
    pub epsilon: f64,
}

impl Default for FdkParams {
    fn default() -> Self {
        Self {
            beta: 100.0,
            gamma: 1.0,
            delta: 0.1,
            epsilon: 0.0,
        }
    }
}

impl FdkParams {
    pub fn with_beta(self, beta: f64) -> Self {
        Self { beta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.beta) {
            return invalid(format!("beta must be positive, got {}", self.beta));
        }
        if !ok(self.gamma) {
            return invalid(format!("gamma must be positive, got {}", self.gamma));
        }
        if !ok(self.delta) {
            return invalid(format!("delta must be positive, got {}", self.delta));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return invalid(format!("epsilon must be >= 0, got {}", self.epsilon));
        }
        Ok(())
    }
}

/// Huber smoothing: `z^2/2` inside `[-delta, delta]`, linear outside.
pub fn huber(z: f64, delta: f64) -> f64 {
    let a = z.abs();
    if a <= delta {
        0.5 * z * z
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to `z`.
pub fn huber_grad(z: f64, delta: f64) -> f64 {
    if z.abs() <= delta {
        z
    } else {
        delta * z.signum()
    }
}

/// Normalized weights `exp(sign * beta * H(v)) / sum`, computed with a
/// max-shifted exponent so large `beta` cannot underflow every term.
fn tempered_weights(values: &[f64], sign: f64, beta: f64, delta: f64, out: &mut [f64]) {
    let mut top = f64::NEG_INFINITY;
    for (o, &v) in out.iter_mut().zip(values) {
        *o = sign * beta * huber(v, delta);
        top = top.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = (*o - top).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

/// Huber-tempered soft minimum: `sum(v * w) / sum(w)` with
/// `w = exp(-beta * H(v, delta))`.
pub fn soft_min_weighted(values: &[f64], beta: f64, delta: f64) -> Result<f64> {
    if values.is_empty() {
        return invalid("soft_min_weighted of an empty sequence");
    }
    if !(beta > 0.0) || !(delta > 0.0) {
        return invalid("soft_min_weighted needs beta > 0 and delta > 0");
    }
    let mut w = vec![0.0; values.len()];
    tempered_weights(values, -1.0, beta, delta, &mut w);
    Ok(values.iter().zip(&w).map(|(v, w)| v * w).sum())
}

/// Geometric soft-min over non-negative `v`, with partials written to `grad`.
fn smin_geo(v: &[f64], beta: f64, delta: f64, grad: &mut [f64]) -> f64 {
    if v.len() == 1 {
        grad[0] = 1.0;
        return v[0];
    }
    if v.iter().any(|&x| x <= 0.0) {
        // zero is absorbing; subgradient zero
        grad.iter_mut().for_each(|g| *g = 0.0);
        return 0.0;
    }
    let mut a = [0.0f64; 3];
    let a = &mut a[..v.len()];
    tempered_weights(v, -1.0, beta, delta, a);
    let log_mean: f64 = v.iter().zip(a.iter()).map(|(x, w)| w * x.ln()).sum();
    let g = log_mean.exp();
    for j in 0..v.len() {
        let dl = a[j] * (1.0 / v[j] - beta * huber_grad(v[j], delta) * (v[j].ln() - log_mean));
        grad[j] = g * dl;
    }
    g
}

/// Soft-max over two non-negative values as a `p`-norm with `p = beta`,
/// with partials. Never below the hard max; exact at `(0, 0)`.
fn smax_pair(s: f64, m: f64, beta: f64, _delta: f64) -> (f64, f64, f64) {
    let top = s.max(m);
    if top <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let rs = (s / top).powf(beta);
    let rm = (m / top).powf(beta);
    let total = rs + rm;
    let out = top * total.powf(1.0 / beta);
    let ds = if s > 0.0 { out / total * rs / s } else { 0.0 };
    let dm = if m > 0.0 { out / total * rm / m } else { 0.0 };
    (out, ds, dm)
}

/// Forward lattice with everything the backward pass needs.
struct Lattice {
    m: usize,
    n: usize,
    /// Shifted cell values `u - eps*[coincident] + eps`.
    cell: Vec<f64>,
    /// Raw pair distances.
    dist: Vec<f64>,
    value: Vec<f64>,
    /// dD/d(cell) and dD/d(soft-min of predecessors).
    d_cell: Vec<f64>,
    d_pred_min: Vec<f64>,
    /// Predecessor indices and partials of the soft-min, up to three.
    preds: Vec<[(usize, f64); 3]>,
    npreds: Vec<u8>,
}

impl Lattice {
    fn run(xs: &[Point2], ys: &[Point2], p: &FdkParams) -> Lattice {
        let (m, n) = (xs.len(), ys.len());
        let size = m * n;
        let mut lat = Lattice {
            m,
            n,
            cell: vec![0.0; size],
            dist: vec![0.0; size],
            value: vec![0.0; size],
            d_cell: vec![0.0; size],
            d_pred_min: vec![0.0; size],
            preds: vec![[(0, 0.0); 3]; size],
            npreds: vec![0; size],
        };
        for i in 0..m {
            for j in 0..n {
                let idx = i * n + j;
                let d = xs[i].dist(ys[j]);
                let bonus = if d <= COINCIDENCE_TOL { p.epsilon } else { 0.0 };
                let s = d / p.gamma - bonus + p.epsilon;
                lat.dist[idx] = d;
                lat.cell[idx] = s;

                // Predecessors in a transpose-invariant order: diagonal first,
                // then the two axis neighbours sorted by value.
                let mut pv = [(0usize, 0.0f64); 3];
                let mut np = 0;
                if i > 0 && j > 0 {
                    let k = (i - 1) * n + (j - 1);
                    pv[np] = (k, lat.value[k]);
                    np += 1;
                }
                let mut axis = [(0usize, 0.0f64); 2];
                let mut na = 0;
                if i > 0 {
                    let k = (i - 1) * n + j;
                    axis[na] = (k, lat.value[k]);
                    na += 1;
                }
                if j > 0 {
                    let k = i * n + (j - 1);
                    axis[na] = (k, lat.value[k]);
                    na += 1;
                }
                if na == 2 && axis[1].1 < axis[0].1 {
                    axis.swap(0, 1);
                }
                for a in &axis[..na] {
                    pv[np] = *a;
                    np += 1;
                }

                if np == 0 {
                    lat.value[idx] = s;
                    lat.d_cell[idx] = 1.0;
                    continue;
                }
                let vals: Vec<f64> = pv[..np].iter().map(|x| x.1).collect();
                let mut g = [0.0f64; 3];
                let mn = smin_geo(&vals, p.beta, p.delta, &mut g[..np]);
                let (out, ds, dm) = smax_pair(s, mn, p.beta, p.delta);
                lat.value[idx] = out;
                lat.d_cell[idx] = ds;
                lat.d_pred_min[idx] = dm;
                for t in 0..np {
                    lat.preds[idx][t] = (pv[t].0, g[t]);
                }
                lat.npreds[idx] = np as u8;
            }
        }
        lat
    }

    fn result(&self) -> f64 {
        self.value[self.m * self.n - 1]
    }

    /// Adjoint of the final value with respect to every cell value.
    fn cell_adjoints(&self) -> Vec<f64> {
        let size = self.m * self.n;
        let mut adj = vec![0.0; size];
        adj[size - 1] = 1.0;
        let mut out = vec![0.0; size];
        for idx in (0..size).rev() {
            let a = adj[idx];
            if a == 0.0 {
                continue;
            }
            out[idx] = a * self.d_cell[idx];
            let through = a * self.d_pred_min[idx];
            for t in 0..self.npreds[idx] as usize {
                let (k, g) = self.preds[idx][t];
                adj[k] += through * g;
            }
        }
        out
    }
}

fn check_inputs(x: &Trajectory, y: &Trajectory, params: &FdkParams) -> Result<()> {
    params.validate()?;
    if x.is_empty() || y.is_empty() {
        return invalid("FDK of an empty trajectory");
    }
    Ok(())
}

/// Smooth Fréchet similarity in `(0, 1]` (for `epsilon == 0`).
pub fn fdk_similarity(x: &Trajectory, y: &Trajectory, params: &FdkParams) -> Result<f64> {
    check_inputs(x, y, params)?;
    let lat = Lattice::run(x.points(), y.points(), params);
    Ok((params.epsilon - lat.result()).exp())
}

fn require_zero_epsilon(params: &FdkParams) -> Result<()> {
    if params.epsilon != 0.0 {
        return invalid("the distance form of the kernel requires epsilon == 0");
    }
    Ok(())
}

/// `-gamma * ln(fdk_similarity)`; tends to the discrete Fréchet distance as
/// `beta` grows.
pub fn fdk_distance(x: &Trajectory, y: &Trajectory, params: &FdkParams) -> Result<f64> {
    check_inputs(x, y, params)?;
    require_zero_epsilon(params)?;
    fdk_distance_points(x.points(), y.points(), params)
}

pub(crate) fn fdk_distance_points(xs: &[Point2], ys: &[Point2], params: &FdkParams) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return invalid("FDK of an empty trajectory");
    }
    Ok(params.gamma * Lattice::run(xs, ys, params).result())
}

/// Gradient of [`fdk_distance`] with respect to every point of `x`.
/// Zero-distance pairs contribute nothing.
pub fn fdk_distance_grad(x: &Trajectory, y: &Trajectory, params: &FdkParams) -> Result<Vec<Point2>> {
    check_inputs(x, y, params)?;
    require_zero_epsilon(params)?;
    let (xs, ys) = (x.points(), y.points());
    let lat = Lattice::run(xs, ys, params);
    let adj = lat.cell_adjoints();
    let n = ys.len();
    let mut grad = vec![Point2::ORIGIN; xs.len()];
    for (i, g) in grad.iter_mut().enumerate() {
        for j in 0..n {
            let idx = i * n + j;
            let d = lat.dist[idx];
            if adj[idx] == 0.0 || d <= COINCIDENCE_TOL {
                continue;
            }
            // distance = gamma * D and cell = d / gamma, so the gammas cancel
            *g = *g + (xs[i] - ys[j]) * (adj[idx] / d);
        }
    }
    Ok(grad)
}
