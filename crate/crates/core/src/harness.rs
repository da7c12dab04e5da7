//! Experiment protocols (isolated training, intercepted results, the
//! adaptive-horizon pipeline and the scoring ablation), evaluation and
//! report emission.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fsn::{
    apm_items, items_at_horizon, items_from_labels, train_apm, train_decoders, train_fsn, FsnConfig, FsnModel,
    HorizonChoice, TrainConfig, TrainLog,
};
use crate::scoring::{label_dataset, AgentPredictions, LabelSet, ScoreKernel};
use crate::synthdata::{oracle_predictions, Sample};
use crate::trajgeo::{best_mode_metrics, HorizonSet, ModeSet, Trajectory, DEFAULT_MISS_THRESHOLD};

/// Where the optimal-horizon labels come from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelSource {
    /// Predictions of the fixed-horizon (IT) models.
    Collectors,
    /// Ground truth corrupted by noise growing to `growth` meters.
    Oracle { growth: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Model shape shared by every protocol (its horizon set is the class set).
    pub model: FsnConfig,
    /// Baseline training (IT and IR).
    pub train: TrainConfig,
    /// Decoder-bank training of the adaptive model; the encoder shared with
    /// the classifier stays frozen by default.
    pub fsn_train: TrainConfig,
    /// Horizon-classifier pre-training.
    pub apm_train: TrainConfig,
    pub kernel: ScoreKernel,
    pub labels: LabelSource,
    pub miss_threshold: f64,
    /// Initialize the decoder bank from the longest-horizon baseline.
    pub warm_start: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            model: FsnConfig::default(),
            train: TrainConfig::default(),
            fsn_train: TrainConfig {
                freeze_encoder: true,
                ..TrainConfig::default()
            },
            apm_train: TrainConfig {
                freeze_encoder: true,
                ..TrainConfig::default()
            },
            kernel: ScoreKernel::default(),
            labels: LabelSource::Collectors,
            miss_threshold: DEFAULT_MISS_THRESHOLD,
            warm_start: true,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.fsn_train.validate()?;
        self.apm_train.validate()?;
        if !(self.miss_threshold > 0.0 && self.miss_threshold.is_finite()) {
            return invalid("miss threshold must be positive");
        }
        if let ScoreKernel::Fdk(p) = &self.kernel {
            p.validate()?;
        }
        Ok(())
    }

    pub fn horizons(&self) -> &HorizonSet {
        &self.model.horizons
    }

    fn single_horizon_model(&self, f: usize) -> Result<FsnConfig> {
        Ok(FsnConfig {
            horizons: HorizonSet::single(f)?,
            ..self.model.clone()
        })
    }
}

/// One report row. `horizon == None` marks the adaptive row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub horizon: Option<usize>,
    pub min_fde: f64,
    pub min_ade: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricsTable {
    pub rows: Vec<MetricsRow>,
}

impl MetricsTable {
    pub fn extend(&mut self, rows: impl IntoIterator<Item = MetricsRow>) {
        self.rows.extend(rows);
    }

    pub fn get(&self, method: &str, horizon: Option<usize>) -> Option<&MetricsRow> {
        self.rows.iter().find(|r| r.method == method && r.horizon == horizon)
    }

    /// `method,horizon,minFDE,minADE,MR`, one row per line.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("method,horizon,minFDE,minADE,MR\n");
        for r in &self.rows {
            let h = r.horizon.map_or_else(|| "adaptive".to_string(), |f| f.to_string());
            writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.method, h, r.min_fde, r.min_ade, r.miss_rate).expect("string write");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_text(path, &self.to_csv())
    }
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(path, text)?;
    Ok(())
}

/// Aggregates best-of-modes metrics over agents. Each prediction is compared
/// with the ground-truth prefix of its own length.
pub fn metrics_row(method: &str, horizon: Option<usize>, preds: &[ModeSet], futures: &[Trajectory], threshold: f64) -> Result<MetricsRow> {
    if preds.len() != futures.len() {
        return invalid("one prediction per agent is required");
    }
    if preds.is_empty() {
        return invalid("no agents to evaluate");
    }
    let (mut ade, mut fde, mut misses) = (0.0, 0.0, 0usize);
    for (p, gt) in preds.iter().zip(futures) {
        let m = best_mode_metrics(p, &gt.prefix(p.horizon())?)?;
        ade += m.min_ade;
        fde += m.min_fde;
        misses += usize::from(m.min_fde > threshold);
    }
    let n = preds.len() as f64;
    Ok(MetricsRow {
        method: method.to_string(),
        horizon,
        min_fde: fde / n,
        min_ade: ade / n,
        miss_rate: misses as f64 / n,
    })
}

/// Per-horizon rows, horizons ascending.
pub fn evaluate(
    method: &str,
    per_horizon: &BTreeMap<usize, Vec<ModeSet>>,
    futures: &[Trajectory],
    horizons: &HorizonSet,
    threshold: f64,
) -> Result<Vec<MetricsRow>> {
    horizons
        .iter()
        .map(|f| {
            let preds = per_horizon
                .get(&f)
                .ok_or_else(|| Error::InvalidInput(format!("no predictions at horizon {f}")))?;
            if preds.iter().any(|m| m.horizon() != f) {
                return invalid(format!("predictions listed under horizon {f} have another length"));
            }
            metrics_row(method, Some(f), preds, futures, threshold)
        })
        .collect()
}

fn futures(samples: &[Sample]) -> Vec<Trajectory> {
    samples.iter().map(|s| s.future.clone()).collect()
}

fn histories(samples: &[Sample]) -> Vec<Trajectory> {
    samples.iter().map(|s| s.history.clone()).collect()
}

fn check_split(train: &[Sample], val: &[Sample]) -> Result<()> {
    if train.is_empty() || val.is_empty() {
        return invalid("both the training and the validation split must be non-empty");
    }
    Ok(())
}

fn modes_only(preds: Vec<(usize, ModeSet)>) -> Vec<ModeSet> {
    preds.into_iter().map(|(_, m)| m).collect()
}

#[derive(Debug, Clone)]
pub struct ItResult {
    pub models: BTreeMap<usize, FsnModel>,
    pub logs: BTreeMap<usize, TrainLog>,
    pub rows: Vec<MetricsRow>,
}

/// Isolated training: one single-horizon model per horizon, each evaluated
/// at its own horizon.
pub fn run_it(train: &[Sample], val: &[Sample], cfg: &ExperimentConfig) -> Result<ItResult> {
    cfg.validate()?;
    check_split(train, val)?;
    let (hist, fut) = (histories(val), futures(val));
    let mut out = ItResult {
        models: BTreeMap::new(),
        logs: BTreeMap::new(),
        rows: Vec::new(),
    };
    for f in cfg.horizons().iter() {
        let mut model = FsnModel::new(cfg.single_horizon_model(f)?)?;
        let items = items_at_horizon(&model, train, f)?;
        let log = train_decoders(&mut model, &items, &cfg.train, 0.0)?;
        let preds = modes_only(model.predict_batch(&hist, HorizonChoice::Fixed(f))?);
        out.rows.push(metrics_row("IT", Some(f), &preds, &fut, cfg.miss_threshold)?);
        out.models.insert(f, model);
        out.logs.insert(f, log);
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct IrResult {
    pub model: FsnModel,
    pub log: TrainLog,
    pub rows: Vec<MetricsRow>,
}

/// Per-horizon rows of a longest-horizon model whose predictions are cut to
/// each horizon.
pub fn evaluate_truncated(method: &str, model: &FsnModel, val: &[Sample], horizons: &HorizonSet, threshold: f64) -> Result<Vec<MetricsRow>> {
    let fmax = model.horizons().max();
    let full = modes_only(model.predict_batch(&histories(val), HorizonChoice::Fixed(fmax))?);
    let mut per_horizon = BTreeMap::new();
    for f in horizons.iter() {
        per_horizon.insert(f, full.iter().map(|m| m.truncated(f)).collect::<Result<Vec<_>>>()?);
    }
    evaluate(method, &per_horizon, &futures(val), horizons, threshold)
}

/// Intercepted results: one model at the longest horizon, truncated for
/// every shorter one. `trained` reuses an identically configured model (the
/// longest-horizon IT model is exactly that).
pub fn run_ir(train: &[Sample], val: &[Sample], cfg: &ExperimentConfig, trained: Option<(&FsnModel, &TrainLog)>) -> Result<IrResult> {
    cfg.validate()?;
    check_split(train, val)?;
    let fmax = cfg.horizons().max();
    let (model, log) = match trained {
        Some((m, l)) => {
            if m.config != cfg.single_horizon_model(fmax)? {
                return invalid("the reused model is not a longest-horizon baseline of this configuration");
            }
            (m.clone(), l.clone())
        }
        None => {
            let mut model = FsnModel::new(cfg.single_horizon_model(fmax)?)?;
            let items = items_at_horizon(&model, train, fmax)?;
            let log = train_decoders(&mut model, &items, &cfg.train, 0.0)?;
            (model, log)
        }
    };
    let rows = evaluate_truncated("IR", &model, val, cfg.horizons(), cfg.miss_threshold)?;
    Ok(IrResult { model, log, rows })
}

/// Fixed-horizon predictions of every collector for every agent.
pub fn collector_predictions(collectors: &BTreeMap<usize, FsnModel>, samples: &[Sample], horizons: &HorizonSet) -> Result<Vec<AgentPredictions>> {
    let hist = histories(samples);
    let mut per_f: BTreeMap<usize, Vec<ModeSet>> = BTreeMap::new();
    for f in horizons.iter() {
        let model = collectors
            .get(&f)
            .ok_or_else(|| Error::MissingArtifact {
                path: format!("collector for horizon {f}").into(),
                msg: format!("no fixed-horizon model for horizon {f}"),
            })?;
        per_f.insert(f, modes_only(model.predict_batch(&hist, HorizonChoice::Fixed(f))?));
    }
    Ok(samples
        .iter()
        .enumerate()
        .map(|(i, s)| AgentPredictions {
            agent_id: s.agent_id.clone(),
            per_horizon: per_f.iter().map(|(&f, v)| (f, v[i].clone())).collect(),
            gt: s.future.clone(),
        })
        .collect())
}

/// Optimal-horizon labels for `samples` from the configured source.
pub fn make_labels(samples: &[Sample], cfg: &ExperimentConfig, collectors: Option<&BTreeMap<usize, FsnModel>>) -> Result<LabelSet> {
    let preds = match (cfg.labels, collectors) {
        (LabelSource::Oracle { growth, seed }, _) => oracle_predictions(samples, cfg.horizons(), cfg.model.k, growth, seed)?,
        (LabelSource::Collectors, Some(c)) => collector_predictions(c, samples, cfg.horizons())?,
        (LabelSource::Collectors, None) => {
            return Err(Error::Config("collector labels need the fixed-horizon models".into()));
        }
    };
    label_dataset(&preds, cfg.horizons(), &cfg.kernel)
}

#[derive(Debug, Clone)]
pub struct FsnResult {
    pub model: FsnModel,
    pub train_labels: LabelSet,
    pub val_labels: LabelSet,
    pub apm_log: TrainLog,
    pub fsn_log: TrainLog,
    pub rows: Vec<MetricsRow>,
    /// Validation agents per classifier-selected horizon (every configured
    /// horizon is listed).
    pub histogram: BTreeMap<usize, usize>,
}

/// The adaptive pipeline: label with the collectors, pre-train the horizon
/// classifier on the shared baseline encoder, train the decoder bank
/// teacher-forced on the labels, evaluate every horizon by override and the
/// classifier-selected horizons as the adaptive row.
pub fn run_fsn(train: &[Sample], val: &[Sample], cfg: &ExperimentConfig, it: &ItResult) -> Result<FsnResult> {
    run_fsn_named("FSN", train, val, cfg, it)
}

fn run_fsn_named(method: &str, train: &[Sample], val: &[Sample], cfg: &ExperimentConfig, it: &ItResult) -> Result<FsnResult> {
    cfg.validate()?;
    check_split(train, val)?;
    let fmax = cfg.horizons().max();
    let base = it
        .models
        .get(&fmax)
        .ok_or_else(|| Error::Config(format!("no baseline at the longest horizon {fmax}")))?;
    let train_labels = make_labels(train, cfg, Some(&it.models))?;
    let val_labels = make_labels(val, cfg, Some(&it.models))?;

    let mut model = FsnModel::new(cfg.model.clone())?;
    if cfg.warm_start {
        model.warm_start_from(base)?;
    } else {
        model.encoder = base.encoder.clone();
    }
    let apm_train = apm_items(&model, train, &train_labels)?;
    let apm_val = apm_items(&model, val, &val_labels)?;
    let apm_log = train_apm(&mut model, &apm_train, Some(&apm_val), &cfg.apm_train)?;

    let items = items_from_labels(&model, train, &train_labels)?;
    let fsn_log = train_fsn(&mut model, &items, &cfg.fsn_train)?;

    let mut rows = evaluate_override(method, &model, val, cfg.miss_threshold)?;
    let (adaptive, histogram) = evaluate_adaptive(method, &model, val, cfg.miss_threshold)?;
    rows.push(adaptive);
    Ok(FsnResult {
        model,
        train_labels,
        val_labels,
        apm_log,
        fsn_log,
        rows,
        histogram,
    })
}

/// Per-horizon rows of a multi-horizon model, each decoder forced in turn.
pub fn evaluate_override(method: &str, model: &FsnModel, val: &[Sample], threshold: f64) -> Result<Vec<MetricsRow>> {
    let hist = histories(val);
    let mut per_horizon = BTreeMap::new();
    for f in model.horizons().iter() {
        per_horizon.insert(f, modes_only(model.predict_batch(&hist, HorizonChoice::Fixed(f))?));
    }
    evaluate(method, &per_horizon, &futures(val), model.horizons(), threshold)
}

/// The adaptive row (classifier-selected horizons) and the histogram of
/// selected horizons, every configured horizon listed.
pub fn evaluate_adaptive(method: &str, model: &FsnModel, val: &[Sample], threshold: f64) -> Result<(MetricsRow, BTreeMap<usize, usize>)> {
    let adaptive = model.predict_batch(&histories(val), HorizonChoice::Adaptive)?;
    let mut histogram: BTreeMap<usize, usize> = model.horizons().iter().map(|f| (f, 0)).collect();
    for (f, _) in &adaptive {
        *histogram.get_mut(f).expect("classifier picks configured horizons") += 1;
    }
    let row = metrics_row(method, None, &modes_only(adaptive), &futures(val), threshold)?;
    Ok((row, histogram))
}

/// `horizon,count` lines.
pub fn histogram_csv(histogram: &BTreeMap<usize, usize>) -> String {
    let mut s = String::from("horizon,count\n");
    for (f, c) in histogram {
        writeln!(s, "{f},{c}").expect("string write");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// Score kernel name: `fdk` (smooth Fréchet), `frechet`, `ade` or `fde`.
    pub score: String,
    pub kl: bool,
    pub min_fde: f64,
    pub min_ade: f64,
    pub miss_rate: f64,
}

#[derive(Debug, Clone)]
pub struct AblationResult {
    pub rows: Vec<AblationRow>,
    /// Decoder-training logs per configuration, in row order.
    pub logs: Vec<TrainLog>,
}

impl AblationResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("score,kl,minFDE,minADE,MR\n");
        for r in &self.rows {
            let kl = if r.kl { "on" } else { "off" };
            writeln!(s, "{},{},{:.6},{:.6},{:.6}", r.score, kl, r.min_fde, r.min_ade, r.miss_rate).expect("string write");
        }
        s
    }
}

/// The four ablation configurations: FDE and ADE scoring with distillation,
/// then the configured Fréchet-type kernel without and with distillation.
pub fn ablation_configs(cfg: &ExperimentConfig) -> Vec<(ScoreKernel, bool)> {
    let frechet = match cfg.kernel {
        k @ (ScoreKernel::Fdk(_) | ScoreKernel::Frechet) => k,
        _ => ScoreKernel::default(),
    };
    vec![
        (ScoreKernel::Fde, true),
        (ScoreKernel::Ade, true),
        (frechet, false),
        (frechet, true),
    ]
}

/// Re-runs labeling, classifier pre-training and decoder training for each
/// ablation configuration; rows report the longest horizon (decoder forced).
pub fn ablation_scores(train: &[Sample], val: &[Sample], cfg: &ExperimentConfig, it: &ItResult) -> Result<AblationResult> {
    let fmax = cfg.horizons().max();
    let lambda_on = if cfg.model.lambda > 0.0 { cfg.model.lambda } else { 0.5 };
    let mut out = AblationResult {
        rows: Vec::new(),
        logs: Vec::new(),
    };
    for (kernel, kl) in ablation_configs(cfg) {
        let mut c = cfg.clone();
        c.kernel = kernel;
        c.model.lambda = if kl { lambda_on } else { 0.0 };
        let res = run_fsn_named("ablation", train, val, &c, it)?;
        let row = res
            .rows
            .iter()
            .find(|r| r.horizon == Some(fmax))
            .expect("every horizon evaluated");
        out.rows.push(AblationRow {
            score: kernel.name().to_string(),
            kl,
            min_fde: row.min_fde,
            min_ade: row.min_ade,
            miss_rate: row.miss_rate,
        });
        out.logs.push(res.fsn_log);
    }
    Ok(out)
}

/// Seed of the named stream `name` derived from one run seed (first eight
/// bytes of SHA-256 over the seed and the name).
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
}

/// Run manifest written next to the reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub protocol: String,
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub train_agents: Vec<String>,
    pub val_agents: Vec<String>,
    pub checkpoints: Vec<String>,
    pub reports: Vec<String>,
    pub wall_clock_seconds: f64,
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::InvalidInput(e.to_string()))?;
        write_text(path, &(text + "\n"))
    }
}
