use crate::error::{invalid, Result};
use crate::trajgeo::{Point2, Trajectory};

/// Displacements shorter than this leave the heading undefined; the frame
/// then keeps the world orientation.
const MIN_HEADING_NORM: f64 = 1e-9;

/// Agent-centric frame: origin at the last observed point, +x along the last
/// observed displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub origin: Point2,
    pub cos: f64,
    pub sin: f64,
}

impl Frame {
    pub fn identity() -> Self {
        Self {
            origin: Point2::ORIGIN,
            cos: 1.0,
            sin: 0.0,
        }
    }

    pub fn of_history(history: &Trajectory) -> Self {
        let pts = history.points();
        let origin = history.last();
        let (cos, sin) = if pts.len() >= 2 {
            let d = pts[pts.len() - 1] - pts[pts.len() - 2];
            let n = d.norm();
            if n > MIN_HEADING_NORM {
                (d.x / n, d.y / n)
            } else {
                (1.0, 0.0)
            }
        } else {
            (1.0, 0.0)
        };
        Self { origin, cos, sin }
    }

    /// Rotates a world-frame vector into the local frame.
    pub fn rotate_in(&self, v: Point2) -> Point2 {
        Point2::new(self.cos * v.x + self.sin * v.y, -self.sin * v.x + self.cos * v.y)
    }

    /// Rotates a local vector into the world frame.
    pub fn rotate_out(&self, v: Point2) -> Point2 {
        Point2::new(self.cos * v.x - self.sin * v.y, self.sin * v.x + self.cos * v.y)
    }

    pub fn to_local(&self, p: Point2) -> Point2 {
        self.rotate_in(p - self.origin)
    }

    pub fn to_world(&self, p: Point2) -> Point2 {
        self.rotate_out(p) + self.origin
    }
}

/// Encoder input: the history's step displacements in the local frame,
/// flattened as `[dx0, dy0, dx1, dy1, ...]`.
pub fn history_features(history: &Trajectory, history_len: usize) -> Result<(Vec<f64>, Frame)> {
    if history.len() != history_len {
        return invalid(format!(
            "history has {} points, the model expects {history_len}",
            history.len()
        ));
    }
    let frame = Frame::of_history(history);
    let pts = history.points();
    let mut feats = Vec::with_capacity(2 * (pts.len() - 1));
    for w in pts.windows(2) {
        let d = frame.rotate_in(w[1] - w[0]);
        feats.push(d.x);
        feats.push(d.y);
    }
    Ok((feats, frame))
}
