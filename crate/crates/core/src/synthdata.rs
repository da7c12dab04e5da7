//! Deterministic synthetic driving scenarios and their JSONL persistence.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::io::{open_reader, open_writer};
use crate::scoring::AgentPredictions;
use crate::trajgeo::{HorizonSet, ModeSet, Point2, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioKind {
    ConstantVelocity,
    ConstantTurn,
    LaneChange,
    StopAndGo,
    LateManeuver,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::ConstantVelocity,
        ScenarioKind::ConstantTurn,
        ScenarioKind::LaneChange,
        ScenarioKind::StopAndGo,
        ScenarioKind::LateManeuver,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::ConstantVelocity => "constant-velocity",
            ScenarioKind::ConstantTurn => "constant-turn",
            ScenarioKind::LaneChange => "lane-change",
            ScenarioKind::StopAndGo => "stop-and-go",
            ScenarioKind::LateManeuver => "late-maneuver",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown scenario kind {name:?}")))
    }
}

/// Kinematic description of one generated agent.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scenario {
    pub kind: ScenarioKind,
    pub start: Point2,
    /// Initial heading in radians.
    pub heading: f64,
    /// Initial speed in m/s.
    pub speed: f64,
    /// Yaw rate in rad/s (maneuver amplitude for lane changes and late
    /// maneuvers).
    pub turn_rate: f64,
    /// Longitudinal acceleration in m/s² (braking for stop-and-go).
    pub accel: f64,
    /// Future step (0-based) at which the maneuver starts.
    pub onset: usize,
    /// Maneuver duration in steps.
    pub duration: usize,
    /// Standard deviation of the position noise on the history, in meters.
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// History points.
    pub history_len: usize,
    /// Future points.
    pub future_len: usize,
    pub dt: f64,
    /// History position noise in meters.
    pub noise_sigma: f64,
    /// Relative weights of the scenario kinds, in [`ScenarioKind::ALL`] order.
    pub mixture: [f64; 5],
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            history_len: 20,
            future_len: 30,
            dt: 0.1,
            noise_sigma: 0.05,
            mixture: [0.2; 5],
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.history_len < 2 || self.future_len < 1 {
            return Err(Error::Config("history needs >= 2 points and future >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be >= 0".into()));
        }
        if self.mixture.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || self.mixture.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config(format!(
                "mixture weights must be non-negative with a positive sum, got {:?}",
                self.mixture
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub agent_id: String,
    pub kind: ScenarioKind,
    pub history: Trajectory,
    pub future: Trajectory,
}

fn pick_kind(rng: &mut ChaCha8Rng, mixture: &[f64; 5]) -> ScenarioKind {
    let total: f64 = mixture.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (k, w) in ScenarioKind::ALL.into_iter().zip(mixture) {
        if u < *w {
            return k;
        }
        u -= w;
    }
    // rounding at the top end: last kind with positive weight
    let last = mixture.iter().rposition(|w| *w > 0.0).expect("positive total");
    ScenarioKind::ALL[last]
}

fn sign(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen::<bool>() {
        1.0
    } else {
        -1.0
    }
}

/// Draws the kinematic parameters of one agent.
pub fn draw_scenario(kind: ScenarioKind, cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Scenario {
    let f = cfg.future_len;
    let start = Point2::new(rng.gen_range(-50.0..50.0), rng.gen_range(-50.0..50.0));
    let heading = rng.gen_range(-PI..PI);
    let mut s = Scenario {
        kind,
        start,
        heading,
        speed: rng.gen_range(3.0..12.0),
        turn_rate: 0.0,
        accel: 0.0,
        onset: 0,
        duration: 0,
        sigma: cfg.noise_sigma,
    };
    match kind {
        ScenarioKind::ConstantVelocity => {
            s.speed = rng.gen_range(1.0..15.0);
        }
        ScenarioKind::ConstantTurn => {
            s.turn_rate = sign(rng) * rng.gen_range(0.1..0.4);
        }
        ScenarioKind::LaneChange => {
            s.turn_rate = sign(rng) * rng.gen_range(0.3..0.6);
            s.onset = rng.gen_range(0..f.saturating_sub(f / 3).max(1));
            s.duration = rng.gen_range((f / 2).max(1)..=f.max(1));
        }
        ScenarioKind::StopAndGo => {
            s.accel = -rng.gen_range(2.0..5.0);
            s.onset = rng.gen_range(0..(f / 2).max(1));
            s.duration = rng.gen_range((f / 6).max(1)..=(f / 3).max(1));
        }
        ScenarioKind::LateManeuver => {
            s.turn_rate = sign(rng) * rng.gen_range(0.8..1.5);
            s.onset = rng.gen_range((f / 6).min(f - 1)..=(5 * f / 6).min(f - 1));
        }
    }
    s
}

/// Integrates a scenario: returns `history_len + future_len` clean points.
pub fn simulate(s: &Scenario, cfg: &SynthConfig) -> Vec<Point2> {
    let n = cfg.history_len + cfg.future_len;
    // absolute step index of the first future point is history_len
    let onset = cfg.history_len - 1 + s.onset;
    let mut pos = s.start;
    let mut heading = s.heading;
    let mut speed = s.speed;
    let mut pts = Vec::with_capacity(n);
    let mut stopped_at = None;
    for t in 0..n {
        pts.push(pos);
        let (omega, accel) = match s.kind {
            ScenarioKind::ConstantVelocity => (0.0, 0.0),
            ScenarioKind::ConstantTurn => (s.turn_rate, 0.0),
            ScenarioKind::LaneChange => {
                if t >= onset && t < onset + s.duration {
                    let phase = 2.0 * PI * (t - onset) as f64 / s.duration as f64;
                    (s.turn_rate * phase.sin(), 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
            ScenarioKind::StopAndGo => {
                if t < onset {
                    (0.0, 0.0)
                } else if speed > 0.0 && stopped_at.is_none() {
                    (0.0, s.accel)
                } else {
                    let since = t - *stopped_at.get_or_insert(t);
                    if since >= s.duration {
                        (0.0, -0.5 * s.accel)
                    } else {
                        (0.0, 0.0)
                    }
                }
            }
            ScenarioKind::LateManeuver => {
                if t >= onset {
                    (s.turn_rate, 0.0)
                } else {
                    (0.0, 0.0)
                }
            }
        };
        heading += omega * cfg.dt;
        speed = (speed + accel * cfg.dt).max(0.0);
        pos = pos + Point2::new(heading.cos(), heading.sin()) * (speed * cfg.dt);
    }
    pts
}

/// Generates `n` samples; a pure function of `(cfg, seed)`.
pub fn generate(n: usize, cfg: &SynthConfig, seed: u64) -> Result<Vec<Sample>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let kind = pick_kind(&mut rng, &cfg.mixture);
        let sc = draw_scenario(kind, cfg, &mut rng);
        let pts = simulate(&sc, cfg);
        let (hist, fut) = pts.split_at(cfg.history_len);
        let hist: Vec<Point2> = hist
            .iter()
            .map(|p| {
                if cfg.noise_sigma > 0.0 {
                    Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
                } else {
                    *p
                }
            })
            .collect();
        out.push(Sample {
            agent_id: format!("agent-{i:06}"),
            kind,
            history: Trajectory::new(hist, cfg.dt)?,
            future: Trajectory::new(fut.to_vec(), cfg.dt)?,
        });
    }
    Ok(out)
}

/// Horizon-classification data whose label is a deterministic function of
/// the agent's speed: constant-velocity agents whose speed falls in one of
/// `horizons.len()` disjoint bands, labeled with that band's horizon.
pub fn separable_dataset(n: usize, horizons: &HorizonSet, cfg: &SynthConfig, seed: u64) -> Result<(Vec<Sample>, Vec<usize>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::Config(e.to_string()))?;
    let mut samples = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = rng.gen_range(0..horizons.len());
        // bands of width 1.5 m/s separated by 0.5 m/s gaps, starting at 1 m/s
        let lo = 1.0 + 2.0 * class as f64;
        let mut sc = draw_scenario(ScenarioKind::ConstantVelocity, cfg, &mut rng);
        sc.speed = rng.gen_range(lo..lo + 1.5);
        let pts = simulate(&sc, cfg);
        let (hist, fut) = pts.split_at(cfg.history_len);
        let hist: Vec<Point2> = hist
            .iter()
            .map(|p| {
                if cfg.noise_sigma > 0.0 {
                    Point2::new(p.x + noise.sample(&mut rng), p.y + noise.sample(&mut rng))
                } else {
                    *p
                }
            })
            .collect();
        samples.push(Sample {
            agent_id: format!("sep-{i:06}"),
            kind: ScenarioKind::ConstantVelocity,
            history: Trajectory::new(hist, cfg.dt)?,
            future: Trajectory::new(fut.to_vec(), cfg.dt)?,
        });
        labels.push(horizons.as_slice()[class]);
    }
    Ok((samples, labels))
}

/// Predictions of an idealized predictor: the true future corrupted by
/// `k` random modes whose error grows linearly with the step index.
/// `growth` is the noise standard deviation at the last future step.
pub fn oracle_predictions(samples: &[Sample], horizons: &HorizonSet, k: usize, growth: f64, seed: u64) -> Result<Vec<AgentPredictions>> {
    if k == 0 {
        return invalid("need at least one mode");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Normal::new(0.0, 1.0).expect("valid normal");
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let gt = s.future.points();
        let horizon_len = gt.len();
        let mut per_horizon = BTreeMap::new();
        for f in horizons.iter() {
            if f > horizon_len {
                return invalid(format!("horizon {f} exceeds the {horizon_len}-step future"));
            }
            let modes = (0..k)
                .map(|_| {
                    // a per-mode lateral bias plus per-step jitter, both growing with time
                    let bias = Point2::new(unit.sample(&mut rng), unit.sample(&mut rng));
                    let pts = gt[..f]
                        .iter()
                        .enumerate()
                        .map(|(t, p)| {
                            let scale = growth * (t + 1) as f64 / horizon_len as f64;
                            let jitter = Point2::new(unit.sample(&mut rng), unit.sample(&mut rng));
                            *p + (bias + jitter * 0.3) * scale
                        })
                        .collect();
                    Trajectory::new(pts, s.future.dt())
                })
                .collect::<Result<Vec<_>>>()?;
            per_horizon.insert(f, ModeSet::uniform(modes)?);
        }
        out.push(AgentPredictions {
            agent_id: s.agent_id.clone(),
            per_horizon,
            gt: s.future.clone(),
        });
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    agent_id: String,
    kind: ScenarioKind,
    dt: f64,
    history: Vec<[f64; 2]>,
    future: Vec<[f64; 2]>,
}

fn coords(t: &Trajectory) -> Vec<[f64; 2]> {
    t.points().iter().map(|p| [p.x, p.y]).collect()
}

fn to_traj(c: &[[f64; 2]], dt: f64) -> Result<Trajectory> {
    Trajectory::new(c.iter().map(|&[x, y]| Point2::new(x, y)).collect(), dt)
}

/// One JSON record per line. Coordinates use the shortest decimal that
/// reads back to the identical `f64`.
pub fn write_jsonl(samples: &[Sample], path: &Path) -> Result<()> {
    let mut w = open_writer(path)?;
    for s in samples {
        let rec = SampleRecord {
            agent_id: s.agent_id.clone(),
            kind: s.kind,
            dt: s.history.dt(),
            history: coords(&s.history),
            future: coords(&s.future),
        };
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::InvalidInput(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let reader = open_reader(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse { line: i + 1, msg };
        let rec: SampleRecord = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let history = to_traj(&rec.history, rec.dt).map_err(|e| parse_err(e.to_string()))?;
        let future = to_traj(&rec.future, rec.dt).map_err(|e| parse_err(e.to_string()))?;
        out.push(Sample {
            agent_id: rec.agent_id,
            kind: rec.kind,
            history,
            future,
        });
    }
    Ok(out)
}

/// Deterministic train/validation split: a seeded shuffle, then the first
/// `round(n * (1 - val_fraction))` samples train.
pub fn split(samples: &[Sample], val_fraction: f64, seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    use rand::seq::SliceRandom;
    if !(0.0..1.0).contains(&val_fraction) {
        return invalid(format!("validation fraction must lie in [0, 1), got {val_fraction}"));
    }
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((samples.len() as f64) * (1.0 - val_fraction)).round() as usize;
    let train = idx[..n_train].iter().map(|&i| samples[i].clone()).collect();
    let val = idx[n_train..].iter().map(|&i| samples[i].clone()).collect();
    Ok((train, val))
}
