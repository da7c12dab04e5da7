//! Encoder, horizon classifier (APM) and per-horizon decoder bank.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::frame::{history_features, Frame};
use super::loss::SampleOutput;
use crate::error::{invalid, Error, Result};
use crate::nnet::{softmax, Activation, Checkpoint, Mlp, MlpCache, MlpSpec, Tensor};
use crate::trajgeo::{HorizonSet, ModeSet, Point2, Trajectory};

/// Lower bound added to Laplace scales after the softplus.
pub const SCALE_FLOOR: f64 = 1e-3;

/// Rows per chunk when predicting many agents.
const PREDICT_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressionLoss {
    Huber { delta: f64 },
    Laplace,
}

impl Default for RegressionLoss {
    fn default() -> Self {
        RegressionLoss::Huber { delta: 1.0 }
    }
}

impl RegressionLoss {
    pub fn is_laplace(&self) -> bool {
        matches!(self, RegressionLoss::Laplace)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FsnConfig {
    /// History length in points.
    pub history_len: usize,
    pub horizons: HorizonSet,
    /// Number of modes.
    pub k: usize,
    /// Latent width.
    pub latent_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub apm_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub activation: Activation,
    pub regression: RegressionLoss,
    /// Weight of the feature-distillation term.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for FsnConfig {
    fn default() -> Self {
        Self {
            history_len: 20,
            horizons: HorizonSet::default(),
            k: 6,
            latent_dim: 64,
            encoder_hidden: vec![64],
            apm_hidden: vec![64, 64],
            decoder_hidden: vec![64, 128],
            activation: Activation::Relu,
            regression: RegressionLoss::default(),
            lambda: 0.5,
            seed: 0,
        }
    }
}

impl FsnConfig {
    pub fn validate(&self) -> Result<()> {
        HorizonSet::new(self.horizons.as_slice().to_vec())?;
        if self.history_len < 2 {
            return invalid("history must have at least two points");
        }
        if self.k == 0 || self.latent_dim == 0 {
            return invalid("mode count and latent width must be positive");
        }
        if self.decoder_hidden.is_empty() {
            return invalid("the decoder needs a hidden layer to expose distillation features");
        }
        let widths = self.encoder_hidden.iter().chain(&self.apm_hidden).chain(&self.decoder_hidden);
        if widths.into_iter().any(|&w| w == 0) {
            return invalid("hidden widths must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return invalid(format!("distillation weight must be >= 0, got {}", self.lambda));
        }
        if let RegressionLoss::Huber { delta } = self.regression {
            if !(delta > 0.0 && delta.is_finite()) {
                return invalid("huber threshold must be positive");
            }
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        2 * (self.history_len - 1)
    }

    /// Output width of the decoder for horizon `f`.
    pub fn decoder_width(&self, f: usize) -> usize {
        let per_coord = if self.regression.is_laplace() { 4 } else { 2 };
        per_coord * f + 1
    }

    /// Width of the distillation features (last decoder hidden layer).
    pub fn feature_width(&self) -> usize {
        *self.decoder_hidden.last().expect("validated")
    }
}

fn component_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Shared displacement MLP plus learned per-mode embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub mlp: Mlp,
    /// `[K, D]`
    pub mode_emb: Tensor,
}

impl Encoder {
    fn new(cfg: &FsnConfig) -> Result<Self> {
        let mut widths = vec![cfg.input_width()];
        widths.extend(&cfg.encoder_hidden);
        widths.push(cfg.latent_dim);
        let mut rng = component_rng(cfg.seed, 1);
        let mlp = MlpSpec::new(widths, cfg.activation, cfg.seed)?.init_with(&mut rng);
        let limit = (6.0 / (cfg.k + cfg.latent_dim) as f64).sqrt();
        let emb = (0..cfg.k * cfg.latent_dim).map(|_| rng.gen_range(-limit..=limit)).collect();
        Ok(Self {
            mlp,
            mode_emb: Tensor::new(vec![cfg.k, cfg.latent_dim], emb)?,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            mlp: self.mlp.zeros_like(),
            mode_emb: Tensor::zeros_like(&self.mode_emb),
        }
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut t = self.mlp.tensors();
        t.push(&self.mode_emb);
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut t = self.mlp.tensors_mut();
        t.push(&mut self.mode_emb);
        t
    }

    /// Shared pathway for a batch of flattened histories: `[B, D]`.
    pub fn forward(&self, inputs: &Tensor) -> Result<(Tensor, MlpCache)> {
        self.mlp.forward(inputs)
    }

    /// Per-mode latents `h[s] + emb[k]` for the listed batch rows, stacked as
    /// `[samples.len() * K, D]` (sample-major).
    pub fn latent_rows(&self, h: &Tensor, samples: &[usize]) -> Tensor {
        let (k, d) = (self.mode_emb.rows(), self.mode_emb.cols());
        let mut out = Tensor::zeros(&[samples.len() * k, d]);
        for (i, &s) in samples.iter().enumerate() {
            let hs = h.row(s);
            for m in 0..k {
                let row = out.row_mut(i * k + m);
                for ((o, a), b) in row.iter_mut().zip(hs).zip(self.mode_emb.row(m)) {
                    *o = a + b;
                }
            }
        }
        out
    }
}

/// Per-mode latent vectors of one agent and its normalization frame.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLatent {
    /// `[K, D]`
    pub values: Tensor,
    pub frame: Frame,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ApmOutput {
    pub logits: Vec<f64>,
    pub horizon_probs: Vec<f64>,
    /// Most probable horizon; ties resolve to the smallest.
    pub f_pred: usize,
    /// Probability-weighted horizon.
    pub f_soft: f64,
}

impl ApmOutput {
    pub fn from_logits(logits: Vec<f64>, horizons: &HorizonSet) -> Result<Self> {
        if logits.len() != horizons.len() {
            return invalid(format!("{} logits for {} horizon classes", logits.len(), horizons.len()));
        }
        let probs = softmax(&logits);
        let mut out = Self::from_probs(probs, horizons)?;
        out.logits = logits;
        Ok(out)
    }

    pub fn from_probs(probs: Vec<f64>, horizons: &HorizonSet) -> Result<Self> {
        if probs.len() != horizons.len() {
            return invalid(format!("{} probabilities for {} horizon classes", probs.len(), horizons.len()));
        }
        let mut best = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > probs[best] {
                best = i;
            }
        }
        let f_soft = probs.iter().zip(horizons.iter()).map(|(p, f)| p * f as f64).sum();
        Ok(Self {
            logits: probs.iter().map(|p| p.max(1e-300).ln()).collect(),
            f_pred: horizons.as_slice()[best],
            f_soft,
            horizon_probs: probs,
        })
    }
}

/// Horizon classifier head over mode-pooled latents.
#[derive(Debug, Clone, PartialEq)]
pub struct Apm {
    pub mlp: Mlp,
    pub horizons: HorizonSet,
}

impl Apm {
    pub fn new(cfg: &FsnConfig) -> Result<Self> {
        let mut widths = vec![cfg.latent_dim];
        widths.extend(&cfg.apm_hidden);
        widths.push(cfg.horizons.len());
        let mut rng = component_rng(cfg.seed, 2);
        Ok(Self {
            mlp: MlpSpec::new(widths, cfg.activation, cfg.seed)?.init_with(&mut rng),
            horizons: cfg.horizons.clone(),
        })
    }

    /// Mean over modes of `h + emb[k]`, i.e. `h + mean(emb)`, for every row.
    pub fn pool(h: &Tensor, mode_emb: &Tensor) -> Tensor {
        let (k, d) = (mode_emb.rows(), mode_emb.cols());
        let mut mean = vec![0.0; d];
        for m in 0..k {
            for (a, b) in mean.iter_mut().zip(mode_emb.row(m)) {
                *a += b;
            }
        }
        mean.iter_mut().for_each(|v| *v /= k as f64);
        let mut out = h.clone();
        for r in 0..out.rows() {
            for (a, b) in out.row_mut(r).iter_mut().zip(&mean) {
                *a += b;
            }
        }
        out
    }
}

/// One decoder per horizon; only the requested horizon's network runs.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderBank {
    pub decoders: BTreeMap<usize, Mlp>,
}

impl DecoderBank {
    fn new(cfg: &FsnConfig) -> Result<Self> {
        let mut decoders = BTreeMap::new();
        for f in cfg.horizons.iter() {
            let mut widths = vec![cfg.latent_dim];
            widths.extend(&cfg.decoder_hidden);
            widths.push(cfg.decoder_width(f));
            let mut rng = component_rng(cfg.seed, 1000 + f as u64);
            decoders.insert(f, MlpSpec::new(widths, cfg.activation, cfg.seed)?.init_with(&mut rng));
        }
        Ok(Self { decoders })
    }

    pub fn get(&self, f: usize) -> Result<&Mlp> {
        self.decoders
            .get(&f)
            .ok_or_else(|| Error::InvalidInput(format!("no decoder for horizon {f}")))
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Turns decoder rows of one sample (`K` consecutive rows) into positions,
/// scales, mode logits and mode-averaged penultimate features.
pub(crate) fn sample_output(cfg: &FsnConfig, f: usize, out: &Tensor, cache: &MlpCache, first_row: usize) -> SampleOutput {
    let k = cfg.k;
    let laplace = cfg.regression.is_laplace();
    let feat = cache.penultimate();
    let mut positions = Vec::with_capacity(k);
    let mut scales = laplace.then(|| Vec::with_capacity(k));
    let mut logits = Vec::with_capacity(k);
    let mut features = vec![0.0; feat.cols()];
    for m in 0..k {
        let r = out.row(first_row + m);
        let mut acc = Point2::ORIGIN;
        let mut path = Vec::with_capacity(f);
        for s in 0..f {
            acc = acc + Point2::new(r[2 * s], r[2 * s + 1]);
            path.push(acc);
        }
        positions.push(path);
        if let Some(sc) = scales.as_mut() {
            let raw = &r[2 * f..4 * f];
            sc.push(
                (0..f)
                    .map(|s| Point2::new(softplus(raw[2 * s]) + SCALE_FLOOR, softplus(raw[2 * s + 1]) + SCALE_FLOOR))
                    .collect(),
            );
        }
        logits.push(r[r.len() - 1]);
        for (a, b) in features.iter_mut().zip(feat.row(first_row + m)) {
            *a += b / k as f64;
        }
    }
    SampleOutput {
        positions,
        scales,
        logits,
        features,
    }
}

/// Pulls a gradient on a [`SampleOutput`] back to the sample's decoder rows.
/// Returns the output-row gradient (`K` rows) and the penultimate-feature
/// gradient (`K` rows).
pub(crate) fn sample_output_backward(
    cfg: &FsnConfig,
    f: usize,
    out: &Tensor,
    first_row: usize,
    grad: &super::loss::SampleGrad,
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let k = cfg.k;
    let width = out.cols();
    let mut rows = Vec::with_capacity(k);
    let mut feat_rows = Vec::with_capacity(k);
    for m in 0..k {
        let mut g = vec![0.0; width];
        // positions are cumulative sums of the step displacements
        let gp = &grad.positions[m];
        let mut acc = Point2::ORIGIN;
        for s in (0..f).rev() {
            acc = acc + gp[s];
            g[2 * s] = acc.x;
            g[2 * s + 1] = acc.y;
        }
        if let Some(gs) = grad.scales.as_ref() {
            let raw = &out.row(first_row + m)[2 * f..4 * f];
            for s in 0..f {
                g[2 * f + 2 * s] = gs[m][s].x * sigmoid(raw[2 * s]);
                g[2 * f + 2 * s + 1] = gs[m][s].y * sigmoid(raw[2 * s + 1]);
            }
        }
        g[width - 1] = grad.logits[m];
        rows.push(g);
        feat_rows.push(grad.features.iter().map(|v| v / k as f64).collect());
    }
    (rows, feat_rows)
}

/// How the output horizon is chosen at prediction time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HorizonChoice {
    /// Force a decoder.
    Fixed(usize),
    /// Use the horizon classifier (or the only decoder of a single-horizon model).
    Adaptive,
}

/// A decoded prediction for one agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub horizon: usize,
    /// World-frame modes.
    pub modes: ModeSet,
    /// Local-frame raw output.
    pub local: SampleOutput,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FsnModel {
    pub config: FsnConfig,
    pub encoder: Encoder,
    pub apm: Option<Apm>,
    pub decoders: DecoderBank,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    config: FsnConfig,
    has_apm: bool,
}

impl FsnModel {
    /// Fresh model without a horizon classifier.
    pub fn new(config: FsnConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            encoder: Encoder::new(&config)?,
            decoders: DecoderBank::new(&config)?,
            apm: None,
            config,
        })
    }

    pub fn horizons(&self) -> &HorizonSet {
        &self.config.horizons
    }

    pub fn encode(&self, history: &Trajectory) -> Result<EncoderLatent> {
        let (x, frame) = history_features(history, self.config.history_len)?;
        let input = Tensor::new(vec![1, x.len()], x)?;
        let (h, _) = self.encoder.forward(&input)?;
        Ok(EncoderLatent {
            values: self.encoder.latent_rows(&h, &[0]),
            frame,
        })
    }

    fn check_latent(&self, latent: &EncoderLatent) -> Result<()> {
        if latent.values.shape() != [self.config.k, self.config.latent_dim] {
            return invalid(format!(
                "latent shape {:?}, model expects [{}, {}]",
                latent.values.shape(),
                self.config.k,
                self.config.latent_dim
            ));
        }
        Ok(())
    }

    fn require_apm(&self) -> Result<&Apm> {
        self.apm
            .as_ref()
            .ok_or_else(|| Error::Config("the model has no trained horizon classifier".into()))
    }

    pub fn apm_forward(&self, latent: &EncoderLatent) -> Result<ApmOutput> {
        self.check_latent(latent)?;
        let apm = self.require_apm()?;
        let k = latent.values.rows();
        let mut pooled = vec![0.0; latent.values.cols()];
        for m in 0..k {
            for (a, b) in pooled.iter_mut().zip(latent.values.row(m)) {
                *a += b;
            }
        }
        pooled.iter_mut().for_each(|v| *v /= k as f64);
        let input = Tensor::new(vec![1, pooled.len()], pooled)?;
        let (logits, _) = apm.mlp.forward(&input)?;
        ApmOutput::from_logits(logits.into_data(), &apm.horizons)
    }

    pub fn decode(&self, latent: &EncoderLatent, f: usize, dt: f64) -> Result<Decoded> {
        self.check_latent(latent)?;
        let dec = self.decoders.get(f)?;
        let (out, cache) = dec.forward(&latent.values)?;
        let local = sample_output(&self.config, f, &out, &cache, 0);
        let modes = to_world_modes(&local, &latent.frame, dt)?;
        Ok(Decoded {
            horizon: f,
            modes,
            local,
        })
    }

    /// Encodes, picks a horizon (classifier or override) and decodes.
    pub fn infer(&self, history: &Trajectory, horizon_override: Option<usize>) -> Result<(usize, ModeSet)> {
        let latent = self.encode(history)?;
        let f = match horizon_override {
            Some(f) => f,
            None => self.adaptive_horizon(&latent)?,
        };
        let d = self.decode(&latent, f, history.dt())?;
        Ok((f, d.modes))
    }

    fn adaptive_horizon(&self, latent: &EncoderLatent) -> Result<usize> {
        if self.apm.is_none() && self.config.horizons.len() == 1 {
            return Ok(self.config.horizons.max());
        }
        Ok(self.apm_forward(latent)?.f_pred)
    }

    /// Batched [`FsnModel::infer`] over many agents, in input order.
    pub fn predict_batch(&self, histories: &[Trajectory], choice: HorizonChoice) -> Result<Vec<(usize, ModeSet)>> {
        if let HorizonChoice::Fixed(f) = choice {
            self.decoders.get(f)?;
        } else if self.apm.is_none() && self.config.horizons.len() > 1 {
            self.require_apm()?;
        }
        let chunks: Vec<Result<Vec<(usize, ModeSet)>>> = histories
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| self.predict_chunk(chunk, choice))
            .collect();
        let mut out = Vec::with_capacity(histories.len());
        for c in chunks {
            out.extend(c?);
        }
        Ok(out)
    }

    fn predict_chunk(&self, histories: &[Trajectory], choice: HorizonChoice) -> Result<Vec<(usize, ModeSet)>> {
        let mut inputs = Vec::with_capacity(histories.len() * self.config.input_width());
        let mut frames = Vec::with_capacity(histories.len());
        for h in histories {
            let (x, fr) = history_features(h, self.config.history_len)?;
            inputs.extend(x);
            frames.push(fr);
        }
        let inputs = Tensor::new(vec![histories.len(), self.config.input_width()], inputs)?;
        let (h, _) = self.encoder.forward(&inputs)?;
        let horizons: Vec<usize> = match (choice, &self.apm) {
            (HorizonChoice::Fixed(f), _) => vec![f; histories.len()],
            (HorizonChoice::Adaptive, None) => vec![self.config.horizons.max(); histories.len()],
            (HorizonChoice::Adaptive, Some(apm)) => {
                let pooled = Apm::pool(&h, &self.encoder.mode_emb);
                let (logits, _) = apm.mlp.forward(&pooled)?;
                (0..histories.len())
                    .map(|i| Ok(ApmOutput::from_logits(logits.row(i).to_vec(), &apm.horizons)?.f_pred))
                    .collect::<Result<_>>()?
            }
        };
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &f) in horizons.iter().enumerate() {
            groups.entry(f).or_default().push(i);
        }
        let mut results: Vec<Option<(usize, ModeSet)>> = vec![None; histories.len()];
        for (f, members) in groups {
            let rows = self.encoder.latent_rows(&h, &members);
            let (out, cache) = self.decoders.get(f)?.forward(&rows)?;
            for (j, &i) in members.iter().enumerate() {
                let local = sample_output(&self.config, f, &out, &cache, j * self.config.k);
                results[i] = Some((f, to_world_modes(&local, &frames[i], histories[i].dt())?));
            }
        }
        Ok(results.into_iter().map(|r| r.expect("every agent decoded")).collect())
    }

    /// Copies the encoder of `base` and initializes every decoder from the
    /// decoder of `base`'s longest horizon, keeping only the output rows of
    /// the first `f` steps.
    pub fn warm_start_from(&mut self, base: &FsnModel) -> Result<()> {
        if base.encoder.mlp.in_width() != self.encoder.mlp.in_width()
            || base.encoder.mode_emb.shape() != self.encoder.mode_emb.shape()
            || base.config.decoder_hidden != self.config.decoder_hidden
            || base.config.encoder_hidden != self.config.encoder_hidden
            || base.config.regression.is_laplace() != self.config.regression.is_laplace()
        {
            return invalid("warm start needs matching encoder and decoder shapes");
        }
        let fb = base.config.horizons.max();
        let src = base.decoders.get(fb)?;
        self.encoder = base.encoder.clone();
        let laplace = self.config.regression.is_laplace();
        for (&f, dst) in self.decoders.decoders.iter_mut() {
            if f > fb {
                return invalid(format!("cannot warm start horizon {f} from a {fb}-step decoder"));
            }
            let n = dst.layers.len();
            for l in 0..n - 1 {
                dst.layers[l] = src.layers[l].clone();
            }
            let (sl, dl) = (&src.layers[n - 1], &mut dst.layers[n - 1]);
            let fan_in = sl.fan_in();
            let mut map: Vec<usize> = (0..2 * f).collect();
            if laplace {
                map.extend((0..2 * f).map(|r| 2 * fb + r));
            }
            map.push(sl.fan_out() - 1);
            for (dr, &sr) in map.iter().enumerate() {
                dl.w.row_mut(dr).copy_from_slice(&sl.w.data()[sr * fan_in..(sr + 1) * fan_in]);
                dl.b.data_mut()[dr] = sl.b.data()[sr];
            }
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let meta = CheckpointMeta {
            config: self.config.clone(),
            has_apm: self.apm.is_some(),
        };
        let mut ck = Checkpoint::new(serde_json::to_string(&meta).expect("serializable config"));
        for (name, t) in self.encoder.mlp.named_tensors("encoder/mlp") {
            ck.push(name, t.clone());
        }
        ck.push("encoder/mode_emb", self.encoder.mode_emb.clone());
        if let Some(apm) = &self.apm {
            for (name, t) in apm.mlp.named_tensors("apm") {
                ck.push(name, t.clone());
            }
        }
        for (f, dec) in &self.decoders.decoders {
            for (name, t) in dec.named_tensors(&format!("decoder/{f}")) {
                ck.push(name, t.clone());
            }
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let meta: CheckpointMeta = serde_json::from_str(&ck.meta)
            .map_err(|e| Error::Config(format!("checkpoint metadata is not a model description: {e}")))?;
        let mut model = FsnModel::new(meta.config).map_err(|e| Error::Config(format!("checkpoint config: {e}")))?;
        if meta.has_apm {
            model.apm = Some(Apm::new(&model.config)?);
        }
        let load_mlp = |mlp: &mut Mlp, prefix: &str| -> Result<()> {
            for (i, layer) in mlp.layers.iter_mut().enumerate() {
                ck.load_into(&format!("{prefix}/layer{i}/w"), &mut layer.w)?;
                ck.load_into(&format!("{prefix}/layer{i}/b"), &mut layer.b)?;
            }
            Ok(())
        };
        load_mlp(&mut model.encoder.mlp, "encoder/mlp")?;
        ck.load_into("encoder/mode_emb", &mut model.encoder.mode_emb)?;
        if let Some(apm) = model.apm.as_mut() {
            load_mlp(&mut apm.mlp, "apm")?;
        }
        for (f, dec) in model.decoders.decoders.iter_mut() {
            load_mlp(dec, &format!("decoder/{f}"))?;
        }
        if ck.blocks.len() != model.to_checkpoint().blocks.len() {
            return Err(Error::Checkpoint("checkpoint has blocks the model does not use".into()));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Maps a local-frame output to world-frame modes.
pub fn to_world_modes(local: &SampleOutput, frame: &Frame, dt: f64) -> Result<ModeSet> {
    let trajectories = local
        .positions
        .iter()
        .map(|p| Trajectory::new(p.iter().map(|q| frame.to_world(*q)).collect(), dt))
        .collect::<Result<Vec<_>>>()?;
    ModeSet::new(trajectories, softmax(&local.logits))
}
