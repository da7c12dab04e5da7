//! Subcommand implementations. Every command is a pure function of its
//! flags, configuration and seeds; reports are byte-reproducible.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use flexihorizon::fdk::{fdk_distance, FdkParams};
use flexihorizon::fsn::{apm_accuracy, apm_items, train_apm, FsnModel, HorizonChoice, TrainLog};
use flexihorizon::harness::{
    ablation_scores, evaluate, evaluate_adaptive, evaluate_override, evaluate_truncated, histogram_csv, make_labels,
    metrics_row, run_fsn, run_ir, run_it, sub_seed, ItResult, Manifest, MetricsRow, MetricsTable,
};
use flexihorizon::scoring::{read_labels, write_labels, LabelSet};
use flexihorizon::synthdata::{generate as synth_generate, oracle_predictions, read_jsonl, split, write_jsonl, Sample};
use flexihorizon::trajgeo::{discrete_frechet, HorizonSet, Point2, Trajectory};
use flexihorizon::{Error, Result};

use crate::config::{Overrides, RunConfig};

pub enum Protocol {
    It,
    Ir,
    Fsn,
    Apm { base: PathBuf, labels: PathBuf },
}

#[derive(Debug, Clone, Copy)]
pub enum Split {
    Train,
    Val,
    All,
}

pub enum EvalSource {
    Checkpoint(PathBuf),
    Oracle(f64),
}

/// Collects the artifacts of a run for its manifest.
struct Outputs<'a> {
    root: &'a Path,
    checkpoints: Vec<String>,
    reports: Vec<String>,
}

impl<'a> Outputs<'a> {
    fn new(root: &'a Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root,
            checkpoints: Vec::new(),
            reports: Vec::new(),
        })
    }

    fn model(&mut self, rel: &str, model: &FsnModel) -> Result<()> {
        model.save(&self.root.join(rel))?;
        self.checkpoints.push(rel.to_string());
        Ok(())
    }

    fn log(&mut self, rel_epochs: &str, rel_steps: &str, log: &TrainLog) -> Result<()> {
        log.write_csv(&self.root.join(rel_epochs))?;
        log.write_steps_csv(&self.root.join(rel_steps))?;
        self.reports.push(rel_epochs.to_string());
        self.reports.push(rel_steps.to_string());
        Ok(())
    }

    fn text(&mut self, rel: &str, text: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, text)?;
        self.reports.push(rel.to_string());
        Ok(())
    }

    fn labels(&mut self, rel: &str, set: &LabelSet) -> Result<()> {
        write_labels(&self.root.join(rel), set)?;
        self.reports.push(rel.to_string());
        Ok(())
    }

    fn manifest(self, protocol: &str, cfg: &RunConfig, train: &[Sample], val: &[Sample], started: Instant) -> Result<()> {
        let seeds = BTreeMap::from([
            ("run".to_string(), cfg.seed),
            ("dataset".to_string(), cfg.dataset_seed()),
            ("split".to_string(), cfg.split_seed()),
            ("init".to_string(), cfg.experiment.model.seed),
            ("shuffle".to_string(), cfg.experiment.train.seed),
            ("oracle".to_string(), sub_seed(cfg.seed, "oracle")),
        ]);
        Manifest {
            protocol: protocol.to_string(),
            config: cfg.to_json(),
            seeds,
            train_agents: train.iter().map(|s| s.agent_id.clone()).collect(),
            val_agents: val.iter().map(|s| s.agent_id.clone()).collect(),
            checkpoints: self.checkpoints,
            reports: self.reports,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        }
        .write(&self.root.join("manifest.json"))
    }
}

fn check_samples(samples: &[Sample], cfg: &RunConfig) -> Result<()> {
    let need = cfg.horizons().max();
    for s in samples {
        if s.history.len() != cfg.data.history_len {
            return Err(Error::Config(format!(
                "agent {} has {} history points, the configuration expects {}",
                s.agent_id,
                s.history.len(),
                cfg.data.history_len
            )));
        }
        if s.future.len() < need {
            return Err(Error::Config(format!(
                "agent {} has {} future points, the longest horizon is {need}",
                s.agent_id,
                s.future.len()
            )));
        }
    }
    Ok(())
}

fn load_data(cfg: &RunConfig, data: Option<&Path>) -> Result<Vec<Sample>> {
    let samples = match data {
        Some(p) => read_jsonl(p)?,
        None => synth_generate(cfg.n, &cfg.data, cfg.dataset_seed())?,
    };
    check_samples(&samples, cfg)?;
    Ok(samples)
}

fn label_summary(set: &LabelSet) -> String {
    let parts: Vec<String> = set.counts.iter().map(|(f, c)| format!("{f}:{c}")).collect();
    format!("optimal-horizon classes ({} distinct): {}", set.counts.len(), parts.join(" "))
}

pub fn generate(cfg_path: Option<&Path>, over: &Overrides, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(cfg_path, over)?;
    let samples = synth_generate(cfg.n, &cfg.data, cfg.dataset_seed())?;
    write_jsonl(&samples, out)?;
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for s in &samples {
        *counts.entry(s.kind.name()).or_default() += 1;
    }
    let mut text = String::from("kind,count\n");
    for (k, c) in counts {
        writeln!(text, "{k},{c}").expect("string write");
    }
    print!("{text}");
    Ok(())
}

/// Loads `dir/horizon_{f}.ckpt` for every horizon and checks each is a
/// fixed-horizon model at `f` compatible with the data.
fn load_collectors(dir: &Path, cfg: &RunConfig) -> Result<BTreeMap<usize, FsnModel>> {
    let mut models = BTreeMap::new();
    for f in cfg.horizons().iter() {
        let path = dir.join(format!("horizon_{f}.ckpt"));
        let model = FsnModel::load(&path).map_err(|e| match e {
            Error::MissingArtifact { path, .. } => Error::MissingArtifact {
                path,
                msg: format!("no fixed-horizon checkpoint for horizon {f}"),
            },
            other => other,
        })?;
        if model.horizons().as_slice() != [f] || model.config.history_len != cfg.data.history_len {
            return Err(Error::Checkpoint(format!(
                "{} is not a fixed-horizon model at horizon {f} for {}-point histories",
                path.display(),
                cfg.data.history_len
            )));
        }
        models.insert(f, model);
    }
    Ok(models)
}

pub fn label(cfg_path: Option<&Path>, over: &Overrides, data: &Path, checkpoints: Option<&Path>, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(cfg_path, over)?;
    let samples = read_jsonl(data)?;
    check_samples(&samples, &cfg)?;
    let set = match checkpoints {
        Some(dir) => {
            let models = load_collectors(dir, &cfg)?;
            make_labels(&samples, &cfg.experiment, Some(&models))?
        }
        None => make_labels(&samples, &cfg.experiment, None)?,
    };
    write_labels(out, &set)?;
    eprintln!("{}", label_summary(&set));
    Ok(())
}

fn save_it(it: &ItResult, out: &mut Outputs) -> Result<()> {
    for (f, model) in &it.models {
        out.model(&format!("it/horizon_{f}.ckpt"), model)?;
        out.log(&format!("it/log_{f}.csv"), &format!("it/steps_{f}.csv"), &it.logs[f])?;
    }
    Ok(())
}

pub fn train(cfg_path: Option<&Path>, over: &Overrides, protocol: Protocol, data: Option<&Path>, out_dir: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = RunConfig::load(cfg_path, over)?;
    let samples = load_data(&cfg, data)?;
    let (train, val) = split(&samples, cfg.val_fraction, cfg.split_seed())?;
    let exp = &cfg.experiment;
    let fmax = cfg.horizons().max();
    let mut out = Outputs::new(out_dir)?;
    let mut table = MetricsTable::default();
    let name = match protocol {
        Protocol::It => {
            let it = run_it(&train, &val, exp)?;
            save_it(&it, &mut out)?;
            table.extend(it.rows);
            "it"
        }
        Protocol::Ir => {
            let ir = run_ir(&train, &val, exp, None)?;
            out.model("ir/model.ckpt", &ir.model)?;
            out.log("ir/log.csv", "ir/steps.csv", &ir.log)?;
            table.extend(ir.rows);
            "ir"
        }
        Protocol::Fsn => {
            eprintln!("training {} fixed-horizon baselines", cfg.horizons().len());
            let it = run_it(&train, &val, exp)?;
            save_it(&it, &mut out)?;
            let ir = run_ir(&train, &val, exp, Some((&it.models[&fmax], &it.logs[&fmax])))?;
            eprintln!("labeling, classifier pre-training and decoder-bank training");
            let fsn = run_fsn(&train, &val, exp, &it)?;
            eprintln!("{}", label_summary(&fsn.train_labels));
            out.labels("labels/train.jsonl", &fsn.train_labels)?;
            out.labels("labels/val.jsonl", &fsn.val_labels)?;
            out.model("fsn/model.ckpt", &fsn.model)?;
            out.log("fsn/apm_log.csv", "fsn/apm_steps.csv", &fsn.apm_log)?;
            out.log("fsn/log.csv", "fsn/steps.csv", &fsn.fsn_log)?;
            out.text("histogram.csv", &histogram_csv(&fsn.histogram))?;
            table.extend(it.rows);
            table.extend(ir.rows);
            table.extend(fsn.rows);
            "fsn"
        }
        Protocol::Apm { base, labels } => {
            let base = FsnModel::load(&base)?;
            if base.horizons().as_slice() != [fmax] || base.config.history_len != cfg.data.history_len {
                return Err(Error::Checkpoint(format!(
                    "the base checkpoint must be a fixed-horizon model at horizon {fmax} for {}-point histories",
                    cfg.data.history_len
                )));
            }
            let labels = read_labels(&labels, cfg.horizons())?;
            let mut model = FsnModel::new(exp.model.clone())?;
            if exp.warm_start {
                model.warm_start_from(&base)?;
            } else {
                model.encoder = base.encoder.clone();
            }
            let train_items = apm_items(&model, &train, &labels)?;
            let val_items = apm_items(&model, &val, &labels)?;
            let log = train_apm(&mut model, &train_items, Some(&val_items), &exp.apm_train)?;
            let acc = apm_accuracy(&model, &val_items)?;
            out.model("apm/model.ckpt", &model)?;
            out.log("apm/log.csv", "apm/steps.csv", &log)?;
            out.text("apm/accuracy.csv", &format!("split,accuracy\nval,{acc:.6}\n"))?;
            println!("held-out horizon accuracy {acc:.6}");
            "apm"
        }
    };
    if !table.rows.is_empty() {
        out.text("metrics.csv", &table.to_csv())?;
        print!("{}", table.to_csv());
    }
    out.manifest(name, &cfg, &train, &val, started)
}

fn select(samples: Vec<Sample>, cfg: &RunConfig, which: Split) -> Result<Vec<Sample>> {
    Ok(match which {
        Split::All => samples,
        Split::Train => split(&samples, cfg.val_fraction, cfg.split_seed())?.0,
        Split::Val => split(&samples, cfg.val_fraction, cfg.split_seed())?.1,
    })
}

fn plot_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from("method,horizon,minADE,minFDE,MR\n");
    for r in rows {
        if let Some(f) = r.horizon {
            writeln!(s, "{},{f},{:.6},{:.6},{:.6}", r.method, r.min_ade, r.min_fde, r.miss_rate).expect("string write");
        }
    }
    s
}

#[allow(clippy::too_many_arguments)]
pub fn eval(
    cfg_path: Option<&Path>,
    over: &Overrides,
    source: EvalSource,
    data: &Path,
    which: Split,
    method: Option<String>,
    out: &Path,
    plot: Option<&Path>,
) -> Result<()> {
    let cfg = RunConfig::load(cfg_path, over)?;
    let samples = select(read_jsonl(data)?, &cfg, which)?;
    let threshold = cfg.experiment.miss_threshold;
    let rows = match source {
        EvalSource::Oracle(growth) => {
            check_samples(&samples, &cfg)?;
            let method = method.unwrap_or_else(|| "oracle".to_string());
            let preds = oracle_predictions(&samples, cfg.horizons(), cfg.experiment.model.k, growth, sub_seed(cfg.seed, "oracle"))?;
            let per_horizon = cfg
                .horizons()
                .iter()
                .map(|f| (f, preds.iter().map(|p| p.per_horizon[&f].clone()).collect()))
                .collect();
            let futures: Vec<Trajectory> = samples.iter().map(|s| s.future.clone()).collect();
            evaluate(&method, &per_horizon, &futures, cfg.horizons(), threshold)?
        }
        EvalSource::Checkpoint(path) => {
            let model = FsnModel::load(&path)?;
            let hs = model.horizons().clone();
            if let Some(s) = samples
                .iter()
                .find(|s| s.history.len() != model.config.history_len || s.future.len() < hs.max())
            {
                return Err(Error::Checkpoint(format!(
                    "{} expects {}-point histories and {} future points; agent {} has {} and {}",
                    path.display(),
                    model.config.history_len,
                    hs.max(),
                    s.agent_id,
                    s.history.len(),
                    s.future.len()
                )));
            }
            if hs.len() == 1 {
                let f = hs.max();
                let shorter = HorizonSet::new(cfg.horizons().iter().filter(|&g| g <= f).collect())
                    .map_err(|_| Error::Checkpoint(format!("no configured horizon fits the checkpoint horizon {f}")))?;
                if shorter.max() == f && shorter.len() > 1 {
                    evaluate_truncated(&method.unwrap_or_else(|| "IR".to_string()), &model, &samples, &shorter, threshold)?
                } else {
                    let preds = model.predict_batch(&samples.iter().map(|s| s.history.clone()).collect::<Vec<_>>(), HorizonChoice::Fixed(f))?;
                    let preds: Vec<_> = preds.into_iter().map(|(_, m)| m).collect();
                    let futures: Vec<Trajectory> = samples.iter().map(|s| s.future.clone()).collect();
                    vec![metrics_row(&method.unwrap_or_else(|| "IT".to_string()), Some(f), &preds, &futures, threshold)?]
                }
            } else {
                let method = method.unwrap_or_else(|| "FSN".to_string());
                let mut rows = evaluate_override(&method, &model, &samples, threshold)?;
                if model.apm.is_some() {
                    let (row, histogram) = evaluate_adaptive(&method, &model, &samples, threshold)?;
                    rows.push(row);
                    eprintln!("{}", histogram_csv(&histogram).trim_end().replace('\n', " "));
                }
                rows
            }
        }
    };
    let table = MetricsTable { rows };
    table.write_csv(out)?;
    if let Some(p) = plot {
        std::fs::write(p, plot_csv(&table.rows))?;
    }
    print!("{}", table.to_csv());
    Ok(())
}

/// Reads one `x,y` or `x y` point per non-empty line.
fn read_points(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path)?;
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse = |t: &str| {
            t.trim().parse::<f64>().map_err(|e| Error::Parse {
                line: i + 1,
                msg: format!("{}: {e}", path.display()),
            })
        };
        let fields: Vec<&str> = line.split(|c: char| c == ',' || c.is_whitespace()).filter(|t| !t.is_empty()).collect();
        if fields.len() != 2 {
            return Err(Error::Parse {
                line: i + 1,
                msg: format!("{}: expected two coordinates", path.display()),
            });
        }
        points.push(Point2::new(parse(fields[0])?, parse(fields[1])?));
    }
    Trajectory::new(points, 0.1)
}

pub fn frechet(a: &Path, b: &Path, beta: f64, gamma: f64, delta: f64) -> Result<()> {
    let (x, y) = (read_points(a)?, read_points(b)?);
    let params = FdkParams {
        beta,
        gamma,
        delta,
        epsilon: 0.0,
    };
    params.validate()?;
    let exact = discrete_frechet(&x, &y)?;
    let smooth = fdk_distance(&x, &y, &params)?;
    println!("discrete_frechet,fdk_distance,beta,gamma,delta");
    println!("{exact},{smooth},{beta},{gamma},{delta}");
    Ok(())
}

pub fn ablate(cfg_path: Option<&Path>, over: &Overrides, data: Option<&Path>, out_dir: &Path) -> Result<()> {
    let started = Instant::now();
    let cfg = RunConfig::load(cfg_path, over)?;
    let samples = load_data(&cfg, data)?;
    let (train, val) = split(&samples, cfg.val_fraction, cfg.split_seed())?;
    let mut out = Outputs::new(out_dir)?;
    let it = run_it(&train, &val, &cfg.experiment)?;
    save_it(&it, &mut out)?;
    let res = ablation_scores(&train, &val, &cfg.experiment, &it)?;
    for (row, log) in res.rows.iter().zip(&res.logs) {
        let tag = format!("{}_kl-{}", row.score, if row.kl { "on" } else { "off" });
        out.log(&format!("ablation/log_{tag}.csv"), &format!("ablation/steps_{tag}.csv"), log)?;
    }
    out.text("ablation.csv", &res.to_csv())?;
    print!("{}", res.to_csv());
    out.manifest("ablate", &cfg, &train, &val, started)
}
