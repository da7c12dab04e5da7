//! Run configuration: a TOML file whose sections mirror the library modules,
//! overridden by command-line flags, validated before any work starts.

use std::path::Path;

use flexihorizon::fdk::FdkParams;
use flexihorizon::fsn::{FsnConfig, RegressionLoss, TrainConfig};
use flexihorizon::harness::{sub_seed, ExperimentConfig, LabelSource};
use flexihorizon::nnet::{Activation, AdamW};
use flexihorizon::scoring::ScoreKernel;
use flexihorizon::synthdata::SynthConfig;
use flexihorizon::trajgeo::{HorizonSet, DEFAULT_MISS_THRESHOLD};
use flexihorizon::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    pub run: RunSection,
    pub synthdata: DataSection,
    pub trajgeo: GeoSection,
    pub fdk: FdkSection,
    pub scoring: ScoringSection,
    pub fsn: FsnSection,
    pub nnet: NnetSection,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub seed: Option<u64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub n: Option<usize>,
    pub history_len: Option<usize>,
    pub future_len: Option<usize>,
    pub dt: Option<f64>,
    pub noise_sigma: Option<f64>,
    pub mixture: Option<[f64; 5]>,
    pub val_fraction: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeoSection {
    pub horizons: Option<Vec<usize>>,
    pub miss_threshold: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FdkSection {
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub delta: Option<f64>,
    pub epsilon: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScoringSection {
    pub kernel: Option<String>,
    /// Use noise-corrupted ground truth instead of the fixed-horizon models.
    pub oracle_growth: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FsnSection {
    pub k: Option<usize>,
    pub latent_dim: Option<usize>,
    pub encoder_hidden: Option<Vec<usize>>,
    pub apm_hidden: Option<Vec<usize>>,
    pub decoder_hidden: Option<Vec<usize>>,
    pub activation: Option<String>,
    pub regression: Option<String>,
    pub huber_delta: Option<f64>,
    pub lambda: Option<f64>,
    pub warm_start: Option<bool>,
    pub freeze_encoder: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NnetSection {
    pub lr: Option<f64>,
    pub weight_decay: Option<f64>,
    pub beta1: Option<f64>,
    pub beta2: Option<f64>,
    pub eps: Option<f64>,
    pub epochs: Option<usize>,
    pub apm_epochs: Option<usize>,
    pub batch_size: Option<usize>,
}

/// Command-line overrides shared by the subcommands.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n: Option<usize>,
    pub epochs: Option<usize>,
    pub lambda: Option<f64>,
    pub kernel: Option<String>,
    pub horizons: Option<Vec<usize>>,
    pub oracle_growth: Option<f64>,
    pub beta: Option<f64>,
}

/// The effective configuration, echoed into every run manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub seed: u64,
    pub n: usize,
    pub val_fraction: f64,
    pub data: SynthConfig,
    pub experiment: ExperimentConfig,
}

fn activation(name: &str) -> Result<Activation> {
    match name {
        "relu" => Ok(Activation::Relu),
        "tanh" => Ok(Activation::Tanh),
        "identity" => Ok(Activation::Identity),
        other => Err(Error::Config(format!("unknown activation {other:?} (expected relu, tanh or identity)"))),
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies `over`, validates.
    pub fn load(path: Option<&Path>, over: &Overrides) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read config {}: {e}", p.display())))?;
                toml::from_str::<FileConfig>(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
            }
            None => FileConfig::default(),
        };
        Self::build(file, over)
    }

    pub fn build(file: FileConfig, over: &Overrides) -> Result<Self> {
        let seed = over.seed.or(file.run.seed).unwrap_or(0);
        let d = SynthConfig::default();
        let data = SynthConfig {
            history_len: file.synthdata.history_len.unwrap_or(d.history_len),
            future_len: file.synthdata.future_len.unwrap_or(d.future_len),
            dt: file.synthdata.dt.unwrap_or(d.dt),
            noise_sigma: file.synthdata.noise_sigma.unwrap_or(d.noise_sigma),
            mixture: file.synthdata.mixture.unwrap_or(d.mixture),
        };
        data.validate()?;
        let n = over.n.or(file.synthdata.n).unwrap_or(2500);
        if n == 0 {
            return Err(Error::Config("dataset size must be positive".into()));
        }
        let val_fraction = file.synthdata.val_fraction.unwrap_or(0.2);

        let horizons = HorizonSet::new(over.horizons.clone().or(file.trajgeo.horizons).unwrap_or_else(|| HorizonSet::default().as_slice().to_vec()))?;
        if horizons.max() > data.future_len {
            return Err(Error::Config(format!(
                "longest horizon {} exceeds the future length {}",
                horizons.max(),
                data.future_len
            )));
        }
        let fd = FdkParams::default();
        let fdk = FdkParams {
            beta: over.beta.or(file.fdk.beta).unwrap_or(fd.beta),
            gamma: file.fdk.gamma.unwrap_or(fd.gamma),
            delta: file.fdk.delta.unwrap_or(fd.delta),
            epsilon: file.fdk.epsilon.unwrap_or(fd.epsilon),
        };
        let kernel = ScoreKernel::parse(over.kernel.as_deref().or(file.scoring.kernel.as_deref()).unwrap_or("fdk"), fdk)?;
        let labels = match over.oracle_growth.or(file.scoring.oracle_growth) {
            Some(growth) => LabelSource::Oracle {
                growth,
                seed: sub_seed(seed, "oracle"),
            },
            None => LabelSource::Collectors,
        };

        let m = FsnConfig::default();
        let regression = match file.fsn.regression.as_deref().unwrap_or("huber") {
            "huber" => RegressionLoss::Huber {
                delta: file.fsn.huber_delta.unwrap_or(1.0),
            },
            "laplace" => RegressionLoss::Laplace,
            other => return Err(Error::Config(format!("unknown regression loss {other:?} (expected huber or laplace)"))),
        };
        let model = FsnConfig {
            history_len: data.history_len,
            horizons,
            k: file.fsn.k.unwrap_or(m.k),
            latent_dim: file.fsn.latent_dim.unwrap_or(m.latent_dim),
            encoder_hidden: file.fsn.encoder_hidden.unwrap_or(m.encoder_hidden),
            apm_hidden: file.fsn.apm_hidden.unwrap_or(m.apm_hidden),
            decoder_hidden: file.fsn.decoder_hidden.unwrap_or(m.decoder_hidden),
            activation: activation(file.fsn.activation.as_deref().unwrap_or("relu"))?,
            regression,
            lambda: over.lambda.or(file.fsn.lambda).unwrap_or(m.lambda),
            seed: sub_seed(seed, "init"),
        };

        let o = AdamW::default();
        let optimizer = AdamW {
            lr: file.nnet.lr.unwrap_or(o.lr),
            weight_decay: file.nnet.weight_decay.unwrap_or(o.weight_decay),
            beta1: file.nnet.beta1.unwrap_or(o.beta1),
            beta2: file.nnet.beta2.unwrap_or(o.beta2),
            eps: file.nnet.eps.unwrap_or(o.eps),
        };
        let epochs = over.epochs.or(file.nnet.epochs).unwrap_or(64);
        let train = TrainConfig {
            epochs,
            batch_size: file.nnet.batch_size.unwrap_or(32),
            optimizer,
            seed: sub_seed(seed, "shuffle"),
            freeze_encoder: false,
        };
        let experiment = ExperimentConfig {
            model,
            fsn_train: TrainConfig {
                freeze_encoder: file.fsn.freeze_encoder.unwrap_or(true),
                ..train.clone()
            },
            apm_train: TrainConfig {
                epochs: over.epochs.or(file.nnet.apm_epochs).unwrap_or(epochs),
                freeze_encoder: file.fsn.freeze_encoder.unwrap_or(true),
                ..train.clone()
            },
            train,
            kernel,
            labels,
            miss_threshold: file.trajgeo.miss_threshold.unwrap_or(DEFAULT_MISS_THRESHOLD),
            warm_start: file.fsn.warm_start.unwrap_or(true),
        };
        experiment.validate()?;
        let cfg = RunConfig {
            seed,
            n,
            val_fraction,
            data,
            experiment,
        };
        if !(cfg.val_fraction > 0.0 && cfg.val_fraction < 1.0) {
            return Err(Error::Config("val_fraction must lie in (0, 1)".into()));
        }
        Ok(cfg)
    }

    pub fn dataset_seed(&self) -> u64 {
        sub_seed(self.seed, "dataset")
    }

    pub fn split_seed(&self) -> u64 {
        sub_seed(self.seed, "split")
    }

    pub fn horizons(&self) -> &HorizonSet {
        self.experiment.horizons()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("configuration serializes")
    }
}
