//! Trajectory data model, exact discrete Fréchet distance and the usual
//! displacement metrics (minADE / minFDE / miss rate).

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Default miss-rate threshold in meters.
pub const DEFAULT_MISS_THRESHOLD: f64 = 2.0;

/// Largest curve length accepted by [`brute_force_frechet`].
pub const BRUTE_FORCE_MAX_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const ORIGIN: Point2 = Point2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn dist(self, other: Point2) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point2 {
    type Output = Point2;
    fn add(self, rhs: Point2) -> Point2 {
        Point2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Point2 {
    type Output = Point2;
    fn sub(self, rhs: Point2) -> Point2 {
        Point2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Point2 {
    type Output = Point2;
    fn mul(self, rhs: f64) -> Point2 {
        Point2::new(self.x * rhs, self.y * rhs)
    }
}

impl From<(f64, f64)> for Point2 {
    fn from((x, y): (f64, f64)) -> Self {
        Point2::new(x, y)
    }
}

/// Uniformly sampled 2D path. `dt` is metadata; all distances are spatial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    points: Vec<Point2>,
    dt: f64,
}

impl Trajectory {
    pub fn new(points: Vec<Point2>, dt: f64) -> Result<Self> {
        if points.is_empty() {
            return invalid("trajectory must contain at least one point");
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return invalid(format!("dt must be positive and finite, got {dt}"));
        }
        if let Some(i) = points.iter().position(|p| !p.is_finite()) {
            return invalid(format!("non-finite point at index {i}"));
        }
        Ok(Self { points, dt })
    }

    pub fn from_xy(coords: &[(f64, f64)], dt: f64) -> Result<Self> {
        Self::new(coords.iter().copied().map(Point2::from).collect(), dt)
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn into_points(self) -> Vec<Point2> {
        self.points
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        self.points[self.points.len() - 1]
    }

    /// The first `n` points.
    pub fn prefix(&self, n: usize) -> Result<Trajectory> {
        if n == 0 || n > self.len() {
            return invalid(format!(
                "cannot take a {n}-point prefix of a {}-point trajectory",
                self.len()
            ));
        }
        Ok(Trajectory {
            points: self.points[..n].to_vec(),
            dt: self.dt,
        })
    }

    pub fn translated(&self, offset: Point2) -> Trajectory {
        Trajectory {
            points: self.points.iter().map(|&p| p + offset).collect(),
            dt: self.dt,
        }
    }
}

/// Strictly increasing set of positive prediction horizons (in steps).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HorizonSet(Vec<usize>);

impl HorizonSet {
    pub fn new(horizons: Vec<usize>) -> Result<Self> {
        if horizons.is_empty() {
            return invalid("horizon set must not be empty");
        }
        if horizons[0] == 0 {
            return invalid("horizons must be >= 1");
        }
        if horizons.windows(2).any(|w| w[0] >= w[1]) {
            return invalid(format!(
                "horizons must be strictly increasing, got {horizons:?}"
            ));
        }
        Ok(Self(horizons))
    }

    pub fn single(f: usize) -> Result<Self> {
        Self::new(vec![f])
    }

    /// Every integer horizon in `lo..=hi`.
    pub fn dense(lo: usize, hi: usize) -> Result<Self> {
        Self::new((lo..=hi).collect())
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> usize {
        self.0[self.0.len() - 1]
    }

    pub fn min(&self) -> usize {
        self.0[0]
    }

    /// Class index of `f`, if it is a member.
    pub fn index_of(&self, f: usize) -> Option<usize> {
        self.0.binary_search(&f).ok()
    }

    pub fn contains(&self, f: usize) -> bool {
        self.index_of(f).is_some()
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.0.iter().copied()
    }
}

impl Default for HorizonSet {
    fn default() -> Self {
        Self(vec![5, 10, 15, 20, 25, 30])
    }
}

/// K predicted trajectories of identical length with their probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct ModeSet {
    trajectories: Vec<Trajectory>,
    probs: Vec<f64>,
}

impl ModeSet {
    pub fn new(trajectories: Vec<Trajectory>, probs: Vec<f64>) -> Result<Self> {
        if trajectories.is_empty() {
            return invalid("mode set needs at least one trajectory");
        }
        if probs.len() != trajectories.len() {
            return invalid(format!(
                "{} trajectories but {} probabilities",
                trajectories.len(),
                probs.len()
            ));
        }
        let len = trajectories[0].len();
        let dt = trajectories[0].dt();
        if trajectories.iter().any(|t| t.len() != len || t.dt() != dt) {
            return invalid("all modes must share length and dt");
        }
        if probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return invalid("mode probabilities must be finite and non-negative");
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-6 {
            return invalid(format!("mode probabilities sum to {total}, expected 1"));
        }
        Ok(Self { trajectories, probs })
    }

    /// Equal-probability mode set.
    pub fn uniform(trajectories: Vec<Trajectory>) -> Result<Self> {
        let k = trajectories.len().max(1);
        let probs = vec![1.0 / k as f64; trajectories.len()];
        Self::new(trajectories, probs)
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn k(&self) -> usize {
        self.trajectories.len()
    }

    pub fn horizon(&self) -> usize {
        self.trajectories[0].len()
    }

    /// Every mode cut to its first `f` points; probabilities are unchanged.
    pub fn truncated(&self, f: usize) -> Result<ModeSet> {
        let trajectories = self
            .trajectories
            .iter()
            .map(|t| t.prefix(f))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModeSet {
            trajectories,
            probs: self.probs.clone(),
        })
    }
}

/// `p[t] = l[t+1] - l[t]`.
pub fn relative_displacements(traj: &Trajectory) -> Result<Vec<Point2>> {
    if traj.len() < 2 {
        return invalid("relative displacements need at least two points");
    }
    Ok(traj.points().windows(2).map(|w| w[1] - w[0]).collect())
}

fn check_same_len(pred: &Trajectory, gt: &Trajectory) -> Result<()> {
    if pred.len() != gt.len() {
        return invalid(format!(
            "length mismatch: prediction has {} points, ground truth {}",
            pred.len(),
            gt.len()
        ));
    }
    Ok(())
}

/// Average displacement error.
pub fn ade(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_same_len(pred, gt)?;
    let sum: f64 = pred
        .points()
        .iter()
        .zip(gt.points())
        .map(|(a, b)| a.dist(*b))
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Final displacement error.
pub fn fde(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    check_same_len(pred, gt)?;
    Ok(pred.last().dist(gt.last()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BestModeMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    /// FDE argmin; ties resolve to the lowest index.
    pub best_index: usize,
}

pub fn best_mode_metrics(modes: &ModeSet, gt: &Trajectory) -> Result<BestModeMetrics> {
    let mut min_ade = f64::INFINITY;
    let mut min_fde = f64::INFINITY;
    let mut best_index = 0;
    for (k, traj) in modes.trajectories().iter().enumerate() {
        let a = ade(traj, gt)?;
        let f = fde(traj, gt)?;
        min_ade = min_ade.min(a);
        if f < min_fde {
            min_fde = f;
            best_index = k;
        }
    }
    Ok(BestModeMetrics {
        min_ade,
        min_fde,
        best_index,
    })
}

/// Fraction of agents whose best-mode final displacement exceeds `threshold`.
pub fn miss_rate(per_agent_modes: &[ModeSet], gts: &[Trajectory], threshold: f64) -> Result<f64> {
    if per_agent_modes.len() != gts.len() {
        return invalid(format!(
            "{} mode sets but {} ground-truth trajectories",
            per_agent_modes.len(),
            gts.len()
        ));
    }
    if !(threshold > 0.0) {
        return invalid("miss threshold must be positive");
    }
    if gts.is_empty() {
        return Ok(0.0);
    }
    let mut misses = 0usize;
    for (modes, gt) in per_agent_modes.iter().zip(gts) {
        if best_mode_metrics(modes, gt)?.min_fde > threshold {
            misses += 1;
        }
    }
    Ok(misses as f64 / gts.len() as f64)
}

/// Exact discrete Fréchet distance (Eiter & Mannila dynamic program).
pub fn discrete_frechet(x: &Trajectory, y: &Trajectory) -> Result<f64> {
    frechet_points(x.points(), y.points())
}

pub(crate) fn frechet_points(xs: &[Point2], ys: &[Point2]) -> Result<f64> {
    if xs.is_empty() || ys.is_empty() {
        return invalid("Fréchet distance of an empty curve");
    }
    let n = ys.len();
    // Rolling rows of the coupling table.
    let mut prev = vec![0.0f64; n];
    let mut cur = vec![0.0f64; n];
    for (i, xi) in xs.iter().enumerate() {
        for (j, yj) in ys.iter().enumerate() {
            let d = xi.dist(*yj);
            cur[j] = match (i, j) {
                (0, 0) => d,
                (0, _) => d.max(cur[j - 1]),
                (_, 0) => d.max(prev[0]),
                _ => d.max(prev[j].min(cur[j - 1]).min(prev[j - 1])),
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    Ok(prev[n - 1])
}

/// Fréchet distance by explicit enumeration of every monotone coupling.
/// Test oracle; both curves must have at most [`BRUTE_FORCE_MAX_LEN`] points.
pub fn brute_force_frechet(x: &Trajectory, y: &Trajectory) -> Result<f64> {
    let (m, n) = (x.len(), y.len());
    if m > BRUTE_FORCE_MAX_LEN || n > BRUTE_FORCE_MAX_LEN {
        return Err(Error::Resource(format!(
            "brute-force Fréchet limited to {BRUTE_FORCE_MAX_LEN} points per curve, got {m}x{n}"
        )));
    }
    let mut best = f64::INFINITY;
    for coupling in monotone_couplings(m, n) {
        let worst = coupling
            .iter()
            .map(|&(i, j)| x.points()[i].dist(y.points()[j]))
            .fold(f64::NEG_INFINITY, f64::max);
        best = best.min(worst);
    }
    Ok(best)
}

/// All monotone couplings of an `m`-point curve with an `n`-point curve, as
/// index-pair sequences from `(0, 0)` to `(m-1, n-1)`.
pub fn monotone_couplings(m: usize, n: usize) -> Vec<Vec<(usize, usize)>> {
    fn walk(
        i: usize,
        j: usize,
        m: usize,
        n: usize,
        path: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        path.push((i, j));
        if i + 1 == m && j + 1 == n {
            out.push(path.clone());
        } else {
            if i + 1 < m {
                walk(i + 1, j, m, n, path, out);
            }
            if j + 1 < n {
                walk(i, j + 1, m, n, path, out);
            }
            if i + 1 < m && j + 1 < n {
                walk(i + 1, j + 1, m, n, path, out);
            }
        }
        path.pop();
    }
    let mut out = Vec::new();
    if m > 0 && n > 0 {
        walk(0, 0, m, n, &mut Vec::new(), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn traj(c: &[(f64, f64)]) -> Trajectory {
        Trajectory::from_xy(c, 0.1).unwrap()
    }

    fn random_traj(rng: &mut ChaCha8Rng, n: usize) -> Trajectory {
        let pts: Vec<(f64, f64)> = (0..n)
            .map(|_| (rng.gen_range(-10.0..10.0), rng.gen_range(-10.0..10.0)))
            .collect();
        traj(&pts)
    }

    #[test]
    fn trajectory_validation() {
        assert!(Trajectory::new(vec![], 0.1).is_err());
        assert!(Trajectory::from_xy(&[(0.0, 0.0)], 0.0).is_err());
        assert!(Trajectory::from_xy(&[(f64::NAN, 0.0)], 0.1).is_err());
    }

    #[test]
    fn horizon_set_validation() {
        assert!(HorizonSet::new(vec![]).is_err());
        assert!(HorizonSet::new(vec![0, 5]).is_err());
        assert!(HorizonSet::new(vec![5, 5]).is_err());
        assert!(HorizonSet::new(vec![10, 5]).is_err());
        let h = HorizonSet::default();
        assert_eq!(h.as_slice(), &[5, 10, 15, 20, 25, 30]);
        assert_eq!(h.index_of(20), Some(3));
        assert_eq!(h.index_of(7), None);
        assert_eq!(HorizonSet::dense(5, 8).unwrap().as_slice(), &[5, 6, 7, 8]);
    }

    #[test]
    fn mode_set_validation() {
        let a = traj(&[(0.0, 0.0), (1.0, 0.0)]);
        let b = traj(&[(0.0, 0.0)]);
        assert!(ModeSet::new(vec![a.clone(), b], vec![0.5, 0.5]).is_err());
        assert!(ModeSet::new(vec![a.clone()], vec![0.9]).is_err());
        assert!(ModeSet::new(vec![], vec![]).is_err());
        assert!(ModeSet::new(vec![a], vec![1.0]).is_ok());
    }

    #[test]
    fn displacements_examples() {
        let d = relative_displacements(&traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)])).unwrap();
        assert_eq!(d, vec![Point2::new(1.0, 0.0); 2]);
        let d = relative_displacements(&traj(&[(0.0, 0.0), (0.0, 0.0)])).unwrap();
        assert_eq!(d, vec![Point2::ORIGIN]);
        assert!(relative_displacements(&traj(&[(0.0, 0.0)])).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let t = random_traj(&mut rng, 5);
        let d = relative_displacements(&t).unwrap();
        assert_eq!(d.len(), 4);
        for k in 0..4 {
            let (a, b) = (t.points()[k + 1], t.points()[k]);
            assert_eq!(d[k].x, a.x - b.x);
            assert_eq!(d[k].y, a.y - b.y);
        }
    }

    #[test]
    fn ade_fde_examples() {
        let gt = traj(&[(0.0, 0.0), (1.0, 1.0), (2.0, 3.0)]);
        assert_eq!(ade(&gt, &gt).unwrap(), 0.0);
        assert_eq!(fde(&gt, &gt).unwrap(), 0.0);
        let shifted = gt.translated(Point2::new(1.0, 0.0));
        assert!((ade(&shifted, &gt).unwrap() - 1.0).abs() < 1e-15);
        let a = traj(&[(9.0, 9.0), (0.0, 0.0)]);
        let b = traj(&[(1.0, 1.0), (3.0, 4.0)]);
        assert_eq!(fde(&a, &b).unwrap(), 5.0);
        assert!(ade(&a, &gt).is_err());
        assert!(fde(&a, &gt).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let p = random_traj(&mut rng, 6);
        let g = random_traj(&mut rng, 6);
        let mut sum = 0.0;
        for i in 0..6 {
            let dx = p.points()[i].x - g.points()[i].x;
            let dy = p.points()[i].y - g.points()[i].y;
            sum += (dx * dx + dy * dy).sqrt();
        }
        assert!((ade(&p, &g).unwrap() - sum / 6.0).abs() < 1e-12);
        let dx = p.points()[5].x - g.points()[5].x;
        let dy = p.points()[5].y - g.points()[5].y;
        assert!((fde(&p, &g).unwrap() - (dx * dx + dy * dy).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn best_mode_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let gt = random_traj(&mut rng, 4);
        let single = ModeSet::uniform(vec![random_traj(&mut rng, 4)]).unwrap();
        let m = best_mode_metrics(&single, &gt).unwrap();
        assert_eq!(m.min_ade, ade(&single.trajectories()[0], &gt).unwrap());
        assert_eq!(m.min_fde, fde(&single.trajectories()[0], &gt).unwrap());
        assert_eq!(m.best_index, 0);

        let mut modes: Vec<_> = (0..6).map(|_| random_traj(&mut rng, 4)).collect();
        modes[3] = gt.clone();
        let m = best_mode_metrics(&ModeSet::uniform(modes).unwrap(), &gt).unwrap();
        assert_eq!((m.min_ade, m.min_fde, m.best_index), (0.0, 0.0, 3));

        // ties go to the lowest index
        let same = ModeSet::uniform(vec![gt.clone(), gt.clone()]).unwrap();
        assert_eq!(best_mode_metrics(&same, &gt).unwrap().best_index, 0);

        let modes: Vec<_> = (0..3).map(|_| random_traj(&mut rng, 4)).collect();
        let ms = ModeSet::uniform(modes.clone()).unwrap();
        let m = best_mode_metrics(&ms, &gt).unwrap();
        let ades: Vec<f64> = modes.iter().map(|t| ade(t, &gt).unwrap()).collect();
        let fdes: Vec<f64> = modes.iter().map(|t| fde(t, &gt).unwrap()).collect();
        let scan_ade = ades.iter().cloned().fold(f64::INFINITY, f64::min);
        let mut scan_idx = 0;
        for k in 1..3 {
            if fdes[k] < fdes[scan_idx] {
                scan_idx = k;
            }
        }
        assert_eq!(m.min_ade, scan_ade);
        assert_eq!(m.best_index, scan_idx);
        assert_eq!(m.min_fde, fdes[scan_idx]);

        let short = traj(&[(0.0, 0.0)]);
        assert!(best_mode_metrics(&ms, &short).is_err());
    }

    #[test]
    fn miss_rate_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let gts: Vec<_> = (0..10).map(|_| random_traj(&mut rng, 5)).collect();
        let perfect: Vec<_> = gts
            .iter()
            .map(|g| ModeSet::uniform(vec![g.clone()]).unwrap())
            .collect();
        assert_eq!(miss_rate(&perfect, &gts, 2.0).unwrap(), 0.0);

        let off: Vec<_> = gts
            .iter()
            .map(|g| ModeSet::uniform(vec![g.translated(Point2::new(10.0, 0.0))]).unwrap())
            .collect();
        assert_eq!(miss_rate(&off, &gts, 2.0).unwrap(), 1.0);

        // mixed: agent i offset by i meters along x
        let mixed: Vec<_> = gts
            .iter()
            .enumerate()
            .map(|(i, g)| ModeSet::uniform(vec![g.translated(Point2::new(i as f64 * 0.5, 0.0))]).unwrap())
            .collect();
        let expected = (0..10)
            .filter(|&i| {
                let t = &mixed[i].trajectories()[0];
                fde(t, &gts[i]).unwrap() > 2.0
            })
            .count() as f64
            / 10.0;
        assert_eq!(miss_rate(&mixed, &gts, 2.0).unwrap(), expected);
        assert!(miss_rate(&mixed[..3], &gts, 2.0).is_err());
        assert!(miss_rate(&mixed, &gts, 0.0).is_err());
    }

    #[test]
    fn frechet_examples() {
        let a = traj(&[(0.0, 0.0), (1.0, 2.0), (3.0, 1.0)]);
        assert_eq!(discrete_frechet(&a, &a).unwrap(), 0.0);
        let p = traj(&[(1.0, 1.0)]);
        let q = traj(&[(4.0, 5.0)]);
        assert_eq!(discrete_frechet(&p, &q).unwrap(), 5.0);
        assert_eq!(brute_force_frechet(&p, &q).unwrap(), 5.0);
        assert_eq!(brute_force_frechet(&a, &a).unwrap(), 0.0);

        let c1 = traj(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0)]);
        let c2 = traj(&[(0.0, 1.0), (1.0, 1.0), (2.0, 1.0)]);
        let dp = discrete_frechet(&c1, &c2).unwrap();
        let bf = brute_force_frechet(&c1, &c2).unwrap();
        assert!((dp - bf).abs() <= 1e-12);
        assert_eq!(dp, 1.0);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_traj(&mut rng, 5);
        let y = random_traj(&mut rng, 5);
        assert_eq!(discrete_frechet(&x, &y).unwrap(), brute_force_frechet(&x, &y).unwrap());
    }

    #[test]
    fn brute_force_size_limit() {
        let long = Trajectory::new(vec![Point2::ORIGIN; 9], 0.1).unwrap();
        let short = traj(&[(0.0, 0.0)]);
        assert!(matches!(brute_force_frechet(&long, &short), Err(Error::Resource(_))));
    }

    #[test]
    fn coupling_counts_are_delannoy_numbers() {
        // D(m-1, n-1): 1, 3, 13, 63, 321
        let counts: Vec<usize> = (1..=5).map(|k| monotone_couplings(k, k).len()).collect();
        assert_eq!(counts, vec![1, 3, 13, 63, 321]);
    }

    fn arb_curve(max: usize) -> impl Strategy<Value = Trajectory> {
        prop::collection::vec((-10.0f64..10.0, -10.0f64..10.0), 1..=max)
            .prop_map(|c| Trajectory::from_xy(&c, 0.1).unwrap())
    }

    proptest! {
        #[test]
        fn frechet_matches_enumeration(x in arb_curve(6), y in arb_curve(6)) {
            prop_assert_eq!(discrete_frechet(&x, &y).unwrap(), brute_force_frechet(&x, &y).unwrap());
        }

        #[test]
        fn frechet_symmetric_and_bounded(x in arb_curve(10), y in arb_curve(10)) {
            let d = discrete_frechet(&x, &y).unwrap();
            prop_assert_eq!(d, discrete_frechet(&y, &x).unwrap());
            let ends = x.first().dist(y.first()).max(x.last().dist(y.last()));
            prop_assert!(d >= ends);
            prop_assert_eq!(discrete_frechet(&x, &x).unwrap(), 0.0);
        }

        #[test]
        fn metrics_translation_invariant(
            x in arb_curve(8),
            dx in -50.0f64..50.0,
            dy in -50.0f64..50.0,
        ) {
            let n = x.len();
            let g = Trajectory::new(x.points().iter().rev().copied().collect(), 0.1).unwrap();
            let off = Point2::new(dx, dy);
            let (xt, gt) = (x.translated(off), g.translated(off));
            prop_assert!((ade(&x, &g).unwrap() - ade(&xt, &gt).unwrap()).abs() < 1e-9);
            prop_assert!((fde(&x, &g).unwrap() - fde(&xt, &gt).unwrap()).abs() < 1e-9);
            let m0 = miss_rate(&[ModeSet::uniform(vec![x.clone()]).unwrap()], std::slice::from_ref(&g), 2.0).unwrap();
            let m1 = miss_rate(&[ModeSet::uniform(vec![xt.clone()]).unwrap()], std::slice::from_ref(&gt), 2.0).unwrap();
            prop_assert_eq!(m0, m1);
            // ADE never exceeds the largest aligned per-step distance
            let worst = (0..n).map(|i| x.points()[i].dist(g.points()[i])).fold(0.0, f64::max);
            prop_assert!(ade(&x, &g).unwrap() <= worst + 1e-12);
            prop_assert!(discrete_frechet(&x, &g).unwrap() <= worst + 1e-12);
        }
    }
}
