//! Horizon scoring: the per-step score `q = d / f`, optimal-horizon labels
//! and label-set persistence.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fdk::{fdk_distance, FdkParams};
use crate::io::{open_reader, open_writer};
use crate::trajgeo::{ade, discrete_frechet, fde, HorizonSet, ModeSet, Trajectory};

/// Distance used to compare a predicted mode with the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ScoreKernel {
    /// Smooth Fréchet distance.
    Fdk(FdkParams),
    /// Exact discrete Fréchet distance.
    Frechet,
    Ade,
    Fde,
}

impl Default for ScoreKernel {
    fn default() -> Self {
        ScoreKernel::Fdk(FdkParams::default())
    }
}

impl ScoreKernel {
    pub fn distance(&self, pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
        match self {
            ScoreKernel::Fdk(p) => fdk_distance(pred, gt, p),
            ScoreKernel::Frechet => discrete_frechet(pred, gt),
            ScoreKernel::Ade => ade(pred, gt),
            ScoreKernel::Fde => fde(pred, gt),
        }
    }

    /// Short name used in tables and configuration files.
    pub fn name(&self) -> &'static str {
        match self {
            ScoreKernel::Fdk(_) => "fdk",
            ScoreKernel::Frechet => "frechet",
            ScoreKernel::Ade => "ade",
            ScoreKernel::Fde => "fde",
        }
    }

    pub fn parse(name: &str, fdk: FdkParams) -> Result<Self> {
        match name {
            "fdk" => Ok(ScoreKernel::Fdk(fdk)),
            "frechet" => Ok(ScoreKernel::Frechet),
            "ade" => Ok(ScoreKernel::Ade),
            "fde" => Ok(ScoreKernel::Fde),
            other => Err(Error::Config(format!(
                "unknown score kernel {other:?} (expected fdk, frechet, ade or fde)"
            ))),
        }
    }
}

/// Meters per predicted step.
pub fn step_score(d: f64, f: usize) -> Result<f64> {
    if f == 0 {
        return invalid("step count must be at least 1");
    }
    if !(d >= 0.0 && d.is_finite()) {
        return invalid(format!("distance must be finite and non-negative, got {d}"));
    }
    Ok(d / f as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreEntry {
    pub f: usize,
    pub d: f64,
    pub q: f64,
}

/// Per-horizon distances and scores for one agent, in increasing `f`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScoreTable {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreTable {
    /// Builds a table from `(f, d)` pairs, computing `q = d / f`.
    pub fn from_distances(pairs: &[(usize, f64)]) -> Result<Self> {
        let mut entries = pairs
            .iter()
            .map(|&(f, d)| Ok(ScoreEntry { f, d, q: step_score(d, f)? }))
            .collect::<Result<Vec<_>>>()?;
        entries.sort_by_key(|e| e.f);
        if entries.windows(2).any(|w| w[0].f == w[1].f) {
            return invalid("duplicate horizon in score table");
        }
        Ok(Self { entries })
    }

    /// The entry with the smallest `q`; equal scores resolve to the smallest
    /// horizon.
    pub fn best(&self) -> Option<&ScoreEntry> {
        self.entries
            .iter()
            .fold(None, |best: Option<&ScoreEntry>, e| match best {
                Some(b) if b.q <= e.q => Some(b),
                _ => Some(e),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonLabel {
    pub agent_id: String,
    pub f_gt: usize,
    /// Best score.
    pub q: f64,
    /// Indicator over the horizon classes.
    pub one_hot: Vec<f64>,
}

impl HorizonLabel {
    pub fn new(agent_id: impl Into<String>, f_gt: usize, q: f64, horizons: &HorizonSet) -> Result<Self> {
        let class = horizons
            .index_of(f_gt)
            .ok_or_else(|| Error::InvalidInput(format!("horizon {f_gt} is not a configured class")))?;
        let mut one_hot = vec![0.0; horizons.len()];
        one_hot[class] = 1.0;
        Ok(Self {
            agent_id: agent_id.into(),
            f_gt,
            q,
            one_hot,
        })
    }

    pub fn class(&self) -> usize {
        self.one_hot.iter().position(|&v| v == 1.0).expect("one-hot label")
    }
}

/// Scores every horizon for one agent and picks the optimal one.
pub fn best_horizon(
    agent_id: &str,
    preds_per_horizon: &BTreeMap<usize, ModeSet>,
    gt: &Trajectory,
    kernel: &ScoreKernel,
) -> Result<(HorizonLabel, ScoreTable)> {
    if preds_per_horizon.is_empty() {
        return invalid("no horizons to score");
    }
    let mut pairs = Vec::with_capacity(preds_per_horizon.len());
    for (&f, modes) in preds_per_horizon {
        if f > gt.len() {
            return invalid(format!("horizon {f} exceeds the {}-step ground truth", gt.len()));
        }
        if modes.horizon() != f {
            return invalid(format!("predictions for horizon {f} have {} steps", modes.horizon()));
        }
        let truth = gt.prefix(f)?;
        let mut d = f64::INFINITY;
        for mode in modes.trajectories() {
            d = d.min(kernel.distance(mode, &truth)?);
        }
        pairs.push((f, d));
    }
    let table = ScoreTable::from_distances(&pairs)?;
    let best = *table.best().expect("non-empty table");
    let horizons = HorizonSet::new(table.entries.iter().map(|e| e.f).collect())?;
    let label = HorizonLabel::new(agent_id, best.f, best.q, &horizons)?;
    Ok((label, table))
}

/// Predictions of every fixed-horizon collector for one agent.
#[derive(Debug, Clone)]
pub struct AgentPredictions {
    pub agent_id: String,
    pub per_horizon: BTreeMap<usize, ModeSet>,
    pub gt: Trajectory,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelSet {
    pub labels: Vec<HorizonLabel>,
    pub tables: Vec<ScoreTable>,
    /// Number of agents per optimal horizon.
    pub counts: BTreeMap<usize, usize>,
}

impl LabelSet {
    pub fn records(&self) -> Vec<LabelRecord> {
        self.labels
            .iter()
            .zip(&self.tables)
            .map(|(l, t)| LabelRecord {
                agent_id: l.agent_id.clone(),
                f_gt: l.f_gt,
                scores: t.entries.clone(),
            })
            .collect()
    }

    pub fn from_records(records: Vec<LabelRecord>, horizons: &HorizonSet) -> Result<Self> {
        let mut set = LabelSet::default();
        for r in records {
            let table = ScoreTable { entries: r.scores };
            if table.entries.iter().map(|e| e.f).ne(horizons.iter()) {
                return invalid(format!("label for {} does not cover the configured horizons", r.agent_id));
            }
            let q = table
                .entries
                .iter()
                .find(|e| e.f == r.f_gt)
                .map(|e| e.q)
                .ok_or_else(|| Error::InvalidInput(format!("f_gt {} missing from the score table", r.f_gt)))?;
            *set.counts.entry(r.f_gt).or_default() += 1;
            set.labels.push(HorizonLabel::new(r.agent_id, r.f_gt, q, horizons)?);
            set.tables.push(table);
        }
        Ok(set)
    }

    pub fn get(&self, agent_id: &str) -> Option<&HorizonLabel> {
        self.labels.iter().find(|l| l.agent_id == agent_id)
    }
}

/// Labels every agent (in input order) with its optimal horizon.
pub fn label_dataset(agents: &[AgentPredictions], horizons: &HorizonSet, kernel: &ScoreKernel) -> Result<LabelSet> {
    let results: Vec<Result<(HorizonLabel, ScoreTable)>> = agents
        .par_iter()
        .map(|a| {
            for f in horizons.iter() {
                if !a.per_horizon.contains_key(&f) {
                    return invalid(format!("agent {} has no predictions for horizon {f}", a.agent_id));
                }
            }
            if a.per_horizon.len() != horizons.len() {
                return invalid(format!("agent {} has predictions outside the horizon set", a.agent_id));
            }
            let (label, table) = best_horizon(&a.agent_id, &a.per_horizon, &a.gt, kernel)?;
            // re-express the one-hot over the full class list
            let label = HorizonLabel::new(label.agent_id, label.f_gt, label.q, horizons)?;
            Ok((label, table))
        })
        .collect();
    let mut set = LabelSet::default();
    for r in results {
        let (label, table) = r?;
        *set.counts.entry(label.f_gt).or_default() += 1;
        set.labels.push(label);
        set.tables.push(table);
    }
    Ok(set)
}

/// JSONL form of one label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelRecord {
    pub agent_id: String,
    pub f_gt: usize,
    pub scores: Vec<ScoreEntry>,
}

pub fn write_labels(path: &Path, set: &LabelSet) -> Result<()> {
    let mut w = open_writer(path)?;
    for rec in set.records() {
        serde_json::to_writer(&mut w, &rec).map_err(|e| Error::InvalidInput(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_labels(path: &Path, horizons: &HorizonSet) -> Result<LabelSet> {
    let reader = open_reader(path)?;
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: LabelRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        records.push(rec);
    }
    LabelSet::from_records(records, horizons)
}
