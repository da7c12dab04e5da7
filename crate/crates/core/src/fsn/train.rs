//! Mini-batch training of the decoder bank (with the shared encoder) and of
//! the horizon classifier.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::frame::history_features;
use super::loss::{apm_loss_grad, fsn_loss_grad_target, FsnLoss, SampleOutput};
use super::model::{sample_output, sample_output_backward, Apm, ApmOutput, Encoder, FsnModel};
use crate::error::{invalid, Error, Result};
use crate::io::open_writer;
use crate::nnet::{optimizer_step, AdamW, Mlp, OptimState, Tensor};
use crate::scoring::LabelSet;
use crate::synthdata::Sample;
use crate::trajgeo::Point2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamW,
    /// Seed of the per-epoch shuffles.
    pub seed: u64,
    /// Keep the encoder fixed.
    pub freeze_encoder: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 64,
            batch_size: 32,
            optimizer: AdamW::default(),
            seed: 0,
            freeze_encoder: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        self.optimizer.validate()
    }
}

/// One preprocessed training sample.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainItem {
    pub agent_id: String,
    /// Flattened local-frame history displacements.
    pub input: Vec<f64>,
    /// Local-frame future (all available steps).
    pub future: Vec<Point2>,
    /// Horizon whose decoder the sample trains.
    pub horizon: usize,
    /// Score used to rank samples for distillation.
    pub score: Option<f64>,
}

/// Builds training items decoded at a fixed horizon (no labels).
pub fn items_at_horizon(model: &FsnModel, samples: &[Sample], horizon: usize) -> Result<Vec<TrainItem>> {
    model.decoders.get(horizon)?;
    samples.iter().map(|s| make_item(model, s, horizon, None)).collect()
}

/// Builds training items teacher-forced at each sample's labeled horizon.
pub fn items_from_labels(model: &FsnModel, samples: &[Sample], labels: &LabelSet) -> Result<Vec<TrainItem>> {
    let by_id: BTreeMap<&str, _> = labels.labels.iter().map(|l| (l.agent_id.as_str(), l)).collect();
    samples
        .iter()
        .map(|s| {
            let l = by_id
                .get(s.agent_id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("no label for agent {}", s.agent_id)))?;
            make_item(model, s, l.f_gt, Some(l.q))
        })
        .collect()
}

fn make_item(model: &FsnModel, s: &Sample, horizon: usize, score: Option<f64>) -> Result<TrainItem> {
    let (input, frame) = history_features(&s.history, model.config.history_len)?;
    if s.future.len() < horizon {
        return invalid(format!("agent {} has a {}-step future, shorter than {horizon}", s.agent_id, s.future.len()));
    }
    Ok(TrainItem {
        agent_id: s.agent_id.clone(),
        input,
        future: s.future.points().iter().map(|p| frame.to_local(*p)).collect(),
        horizon,
        score,
    })
}

/// Gradients of the decoder objective for every parameter block.
#[derive(Debug, Clone, PartialEq)]
pub struct FsnGrads {
    pub encoder: Encoder,
    /// Every decoder of the bank; inactive ones stay exactly zero.
    pub decoders: BTreeMap<usize, Mlp>,
    /// Horizons that had at least one sample in the batch.
    pub active: BTreeSet<usize>,
}

/// Loss and gradients of one batch. Also returns how many samples had their
/// most probable mode equal to the best mode.
pub fn batch_loss_grad(model: &FsnModel, batch: &[&TrainItem], lambda: f64) -> Result<(FsnLoss, FsnGrads, usize)> {
    batch_loss_grad_target(model, batch, lambda, None)
}

/// Decoder outputs of a batch, each sample at its own horizon (forward only).
pub fn batch_outputs(model: &FsnModel, batch: &[&TrainItem]) -> Result<Vec<SampleOutput>> {
    let cfg = &model.config;
    let inputs = stack_items(model, batch)?;
    let (h, _) = model.encoder.forward(&inputs)?;
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, it) in batch.iter().enumerate() {
        groups.entry(it.horizon).or_default().push(i);
    }
    let mut outputs = vec![None; batch.len()];
    for (f, members) in groups {
        let rows = model.encoder.latent_rows(&h, &members);
        let (out, cache) = model.decoders.get(f)?.forward(&rows)?;
        for (j, &i) in members.iter().enumerate() {
            outputs[i] = Some(sample_output(cfg, f, &out, &cache, j * cfg.k));
        }
    }
    Ok(outputs.into_iter().map(|o| o.expect("decoded")).collect())
}

fn stack_items(model: &FsnModel, batch: &[&TrainItem]) -> Result<Tensor> {
    if batch.is_empty() {
        return invalid("empty batch");
    }
    let width = model.config.input_width();
    let mut inputs = Vec::with_capacity(batch.len() * width);
    for it in batch {
        if it.input.len() != width {
            return invalid("training item does not match the model's history length");
        }
        inputs.extend_from_slice(&it.input);
    }
    Tensor::new(vec![batch.len(), width], inputs)
}

/// As [`batch_loss_grad`], with the distillation teacher's features frozen
/// at `teacher` when given. The gradient of the stop-gradient objective is
/// the exact derivative of this function with the teacher held fixed, which
/// is what finite differences can check.
pub fn batch_loss_grad_target(
    model: &FsnModel,
    batch: &[&TrainItem],
    lambda: f64,
    teacher: Option<&[f64]>,
) -> Result<(FsnLoss, FsnGrads, usize)> {
    if batch.is_empty() {
        return invalid("empty batch");
    }
    let cfg = &model.config;
    let inputs = stack_items(model, batch)?;
    let (h, enc_cache) = model.encoder.forward(&inputs)?;

    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, it) in batch.iter().enumerate() {
        groups.entry(it.horizon).or_default().push(i);
    }
    struct Group {
        f: usize,
        members: Vec<usize>,
        out: Tensor,
        cache: crate::nnet::MlpCache,
    }
    let mut outputs = vec![None; batch.len()];
    let mut group_data = Vec::with_capacity(groups.len());
    for (f, members) in groups {
        let rows = model.encoder.latent_rows(&h, &members);
        let (out, cache) = model.decoders.get(f)?.forward(&rows)?;
        for (j, &i) in members.iter().enumerate() {
            outputs[i] = Some(sample_output(cfg, f, &out, &cache, j * cfg.k));
        }
        group_data.push(Group { f, members, out, cache });
    }
    let outputs: Vec<_> = outputs.into_iter().map(|o| o.expect("decoded")).collect();
    let gts: Vec<&[Point2]> = batch
        .iter()
        .map(|it| {
            if it.future.len() < it.horizon {
                return invalid("future shorter than the active horizon");
            }
            Ok(&it.future[..it.horizon])
        })
        .collect::<Result<_>>()?;
    let scores: Option<Vec<f64>> = batch.iter().map(|it| it.score).collect();
    let (loss, sample_grads) = fsn_loss_grad_target(&outputs, &gts, scores.as_deref(), &cfg.regression, lambda, teacher)?;

    let mut correct = 0;
    for (o, gt) in outputs.iter().zip(&gts) {
        let best = super::loss::best_mode(&o.positions, gt);
        let mut top = 0;
        for (m, &l) in o.logits.iter().enumerate() {
            if l > o.logits[top] {
                top = m;
            }
        }
        correct += usize::from(top == best);
    }

    let mut grads = FsnGrads {
        encoder: model.encoder.zeros_like(),
        decoders: model.decoders.decoders.iter().map(|(&f, d)| (f, d.zeros_like())).collect(),
        active: BTreeSet::new(),
    };
    let mut grad_h = Tensor::zeros(&[batch.len(), cfg.latent_dim]);
    for g in &group_data {
        let n_rows = g.members.len() * cfg.k;
        let mut gy = Tensor::zeros(&[n_rows, g.out.cols()]);
        let mut gfeat = Tensor::zeros(&[n_rows, cfg.feature_width()]);
        for (j, &i) in g.members.iter().enumerate() {
            let (rows, feat_rows) = sample_output_backward(cfg, g.f, &g.out, j * cfg.k, &sample_grads[i]);
            for m in 0..cfg.k {
                gy.row_mut(j * cfg.k + m).copy_from_slice(&rows[m]);
                gfeat.row_mut(j * cfg.k + m).copy_from_slice(&feat_rows[m]);
            }
        }
        let dec = model.decoders.get(g.f)?;
        let dec_grad = grads.decoders.get_mut(&g.f).expect("bank covers every horizon");
        let g_lat = dec
            .backward_into(&g.cache, &gy, Some(&gfeat), dec_grad, true)?
            .expect("input gradient requested");
        grads.active.insert(g.f);
        for (j, &i) in g.members.iter().enumerate() {
            for m in 0..cfg.k {
                let r = g_lat.row(j * cfg.k + m);
                for (a, b) in grad_h.row_mut(i).iter_mut().zip(r) {
                    *a += b;
                }
                for (a, b) in grads.encoder.mode_emb.row_mut(m).iter_mut().zip(r) {
                    *a += b;
                }
            }
        }
    }
    model
        .encoder
        .mlp
        .backward_into(&enc_cache, &grad_h, None, &mut grads.encoder.mlp, false)?;
    Ok((loss, grads, correct))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub l_reg: f64,
    pub l_cls: f64,
    pub l_kl: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_reg: f64,
    pub l_cls: f64,
    pub l_kl: f64,
    pub total: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<StepLog>,
}

impl TrainLog {
    /// Per-epoch CSV: `epoch,L_reg,L_cls,L_KL,total,accuracy`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = open_writer(path)?;
        writeln!(w, "epoch,L_reg,L_cls,L_KL,total,accuracy")?;
        for e in &self.epochs {
            writeln!(w, "{},{},{},{},{},{}", e.epoch, e.l_reg, e.l_cls, e.l_kl, e.total, e.accuracy)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-step CSV: `epoch,step,L_reg,L_cls,L_KL,total`.
    pub fn write_steps_csv(&self, path: &Path) -> Result<()> {
        let mut w = open_writer(path)?;
        writeln!(w, "epoch,step,L_reg,L_cls,L_KL,total")?;
        for s in &self.steps {
            writeln!(w, "{},{},{},{},{},{}", s.epoch, s.step, s.l_reg, s.l_cls, s.l_kl, s.total)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn batches(n: usize, epoch_rng: &mut ChaCha8Rng, batch_size: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(epoch_rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Trains the encoder (unless frozen) and the decoder bank on `items`, each
/// sample decoded at its own horizon. Decoders without samples in a batch
/// are left untouched by that step.
pub fn train_decoders(model: &mut FsnModel, items: &[TrainItem], cfg: &TrainConfig, lambda: f64) -> Result<TrainLog> {
    cfg.validate()?;
    if items.is_empty() {
        return invalid("empty training set");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut enc_state = OptimState::default();
    let mut dec_states: BTreeMap<usize, OptimState> = BTreeMap::new();
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let mut sums = EpochLog {
            epoch,
            l_reg: 0.0,
            l_cls: 0.0,
            l_kl: 0.0,
            total: 0.0,
            accuracy: 0.0,
        };
        for idx in batches(items.len(), &mut rng, cfg.batch_size) {
            let batch: Vec<&TrainItem> = idx.iter().map(|&i| &items[i]).collect();
            let (loss, grads, correct) = batch_loss_grad(model, &batch, lambda)?;
            let w = batch.len() as f64;
            sums.l_reg += loss.l_reg * w;
            sums.l_cls += loss.l_cls * w;
            sums.l_kl += loss.l_kl * w;
            sums.total += loss.total * w;
            sums.accuracy += correct as f64;
            log.steps.push(StepLog {
                epoch,
                step,
                l_reg: loss.l_reg,
                l_cls: loss.l_cls,
                l_kl: loss.l_kl,
                total: loss.total,
            });
            step += 1;

            for f in &grads.active {
                let dec = model.decoders.decoders.get_mut(f).expect("active decoder exists");
                let g = &grads.decoders[f];
                optimizer_step(
                    &mut dec.tensors_mut(),
                    &g.tensors(),
                    dec_states.entry(*f).or_default(),
                    &cfg.optimizer,
                )?;
            }
            if !cfg.freeze_encoder {
                optimizer_step(
                    &mut model.encoder.tensors_mut(),
                    &grads.encoder.tensors(),
                    &mut enc_state,
                    &cfg.optimizer,
                )?;
            }
        }
        let n = items.len() as f64;
        log.epochs.push(EpochLog {
            epoch,
            l_reg: sums.l_reg / n,
            l_cls: sums.l_cls / n,
            l_kl: sums.l_kl / n,
            total: sums.total / n,
            accuracy: sums.accuracy / n,
        });
    }
    Ok(log)
}

/// Trains the decoder bank of a model that already carries a horizon
/// classifier, using its configured distillation weight.
pub fn train_fsn(model: &mut FsnModel, items: &[TrainItem], cfg: &TrainConfig) -> Result<TrainLog> {
    if model.apm.is_none() {
        return Err(Error::Config("FSN training needs a pre-trained horizon classifier".into()));
    }
    let lambda = model.config.lambda;
    train_decoders(model, items, cfg, lambda)
}

/// Training item for the horizon classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ApmItem {
    pub input: Vec<f64>,
    pub f_gt: usize,
}

pub fn apm_items(model: &FsnModel, samples: &[Sample], labels: &LabelSet) -> Result<Vec<ApmItem>> {
    let by_id: BTreeMap<&str, usize> = labels.labels.iter().map(|l| (l.agent_id.as_str(), l.f_gt)).collect();
    samples
        .iter()
        .map(|s| {
            let f_gt = *by_id
                .get(s.agent_id.as_str())
                .ok_or_else(|| Error::InvalidInput(format!("no label for agent {}", s.agent_id)))?;
            let (input, _) = history_features(&s.history, model.config.history_len)?;
            Ok(ApmItem { input, f_gt })
        })
        .collect()
}

fn stack_inputs(model: &FsnModel, items: &[&ApmItem]) -> Result<Tensor> {
    let width = model.config.input_width();
    let mut data = Vec::with_capacity(items.len() * width);
    for it in items {
        if it.input.len() != width {
            return invalid("classifier item does not match the model's history length");
        }
        data.extend_from_slice(&it.input);
    }
    Tensor::new(vec![items.len(), width], data)
}

/// Horizon-classification accuracy of the model's classifier.
pub fn apm_accuracy(model: &FsnModel, items: &[ApmItem]) -> Result<f64> {
    if items.is_empty() {
        return invalid("no items to evaluate");
    }
    let apm = model
        .apm
        .as_ref()
        .ok_or_else(|| Error::Config("the model has no horizon classifier".into()))?;
    let refs: Vec<&ApmItem> = items.iter().collect();
    let mut correct = 0;
    for chunk in refs.chunks(256) {
        let x = stack_inputs(model, chunk)?;
        let (h, _) = model.encoder.forward(&x)?;
        let (logits, _) = apm.mlp.forward(&Apm::pool(&h, &model.encoder.mode_emb))?;
        for (i, it) in chunk.iter().enumerate() {
            let out = ApmOutput::from_logits(logits.row(i).to_vec(), &apm.horizons)?;
            correct += usize::from(out.f_pred == it.f_gt);
        }
    }
    Ok(correct as f64 / items.len() as f64)
}

/// Pre-trains the horizon classifier (creating it if absent). The encoder is
/// updated jointly unless `cfg.freeze_encoder`. The log's accuracy column is
/// measured on `held_out` when given, otherwise on the training items; its
/// `L_reg`/`L_cls` columns hold the classifier's regression and
/// classification terms.
pub fn train_apm(model: &mut FsnModel, items: &[ApmItem], held_out: Option<&[ApmItem]>, cfg: &TrainConfig) -> Result<TrainLog> {
    cfg.validate()?;
    if items.is_empty() {
        return invalid("empty training set");
    }
    if model.apm.is_none() {
        model.apm = Some(Apm::new(&model.config)?);
    }
    let horizons = model.config.horizons.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut apm_state = OptimState::default();
    let mut enc_state = OptimState::default();
    let mut log = TrainLog::default();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        let (mut s_cls, mut s_reg) = (0.0, 0.0);
        for idx in batches(items.len(), &mut rng, cfg.batch_size) {
            let batch: Vec<&ApmItem> = idx.iter().map(|&i| &items[i]).collect();
            let b = batch.len() as f64;
            let x = stack_inputs(model, &batch)?;
            let (h, enc_cache) = model.encoder.forward(&x)?;
            let pooled = Apm::pool(&h, &model.encoder.mode_emb);
            let apm = model.apm.as_ref().expect("created above");
            let (logits, cache) = apm.mlp.forward(&pooled)?;
            let mut g_logits = Tensor::zeros(&[batch.len(), horizons.len()]);
            let (mut l_cls, mut l_reg) = (0.0, 0.0);
            for (i, it) in batch.iter().enumerate() {
                let (l, g) = apm_loss_grad(logits.row(i), it.f_gt, &horizons)?;
                l_cls += l.l_cls / b;
                l_reg += l.l_reg / b;
                for (dst, v) in g_logits.row_mut(i).iter_mut().zip(g) {
                    *dst = v / b;
                }
            }
            let (apm_grad, g_pooled) = apm.mlp.backward(&cache, &g_logits, None)?;
            log.steps.push(StepLog {
                epoch,
                step,
                l_reg,
                l_cls,
                l_kl: 0.0,
                total: l_cls + l_reg,
            });
            step += 1;
            s_cls += l_cls * b;
            s_reg += l_reg * b;
            let apm = model.apm.as_mut().expect("created above");
            optimizer_step(&mut apm.mlp.tensors_mut(), &apm_grad.tensors(), &mut apm_state, &cfg.optimizer)?;
            if !cfg.freeze_encoder {
                let mut enc_grad = model.encoder.zeros_like();
                let k = model.encoder.mode_emb.rows();
                for r in 0..g_pooled.rows() {
                    for m in 0..k {
                        for (a, v) in enc_grad.mode_emb.row_mut(m).iter_mut().zip(g_pooled.row(r)) {
                            *a += v / k as f64;
                        }
                    }
                }
                model
                    .encoder
                    .mlp
                    .backward_into(&enc_cache, &g_pooled, None, &mut enc_grad.mlp, false)?;
                optimizer_step(
                    &mut model.encoder.tensors_mut(),
                    &enc_grad.tensors(),
                    &mut enc_state,
                    &cfg.optimizer,
                )?;
            }
        }
        let n = items.len() as f64;
        let accuracy = apm_accuracy(model, held_out.unwrap_or(items))?;
        log.epochs.push(EpochLog {
            epoch,
            l_reg: s_reg / n,
            l_cls: s_cls / n,
            l_kl: 0.0,
            total: (s_reg + s_cls) / n,
            accuracy,
        });
    }
    Ok(log)
}
