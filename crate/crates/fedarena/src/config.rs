//! Experiment configuration: strict TOML in, resolved run plan out.
//!
//! Parsing rejects unknown keys outright. Sections with a `kind` selector
//! (dataset, aggregator, adversaries) are parsed as flat structs and then
//! validated so that each kind accepts exactly its own parameters and a typo
//! fails with the offending field named. Defaults follow the standard
//! hyperparameter table: B=16, E=1, lr 0.15 below 10 participants and 0.25
//! from 10 up, decay 0.977, 60 rounds, alpha 0.8.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::AdversaryKind;
use crate::data::SplitScheme;
use crate::model::SGDConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {field}: {message}")]
    Validation { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Validation {
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::rounds")]
    pub rounds: usize,
    /// Test examples used for per-round accuracy tracking; 0 means the full
    /// test set. Final metrics always use the full test set.
    #[serde(default = "defaults::eval_subset")]
    pub eval_subset: usize,
    /// Free-text note carried into the echo; no effect on the run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub comment: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub dataset: DatasetConfig,
    pub split: SplitConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub sgd: SgdSection,
    pub aggregator: AggregatorConfig,
    #[serde(default)]
    pub adversaries: Vec<AdversaryGroup>,
}

mod defaults {
    pub fn seed() -> u64 {
        42
    }
    pub fn rounds() -> usize {
        60
    }
    pub fn eval_subset() -> usize {
        1000
    }
    pub fn hidden_dim() -> usize {
        64
    }
    pub fn lr_decay() -> f64 {
        0.977
    }
    pub fn batch_size() -> usize {
        16
    }
    pub fn local_epochs() -> usize {
        1
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: String,
    /// mnist: directory holding the four IDX files; defaults to
    /// FEDARENA_DATA_DIR or data/mnist.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
}

/// Dataset choice after validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Dataset {
    Mnist { dir: PathBuf },
    Synth { classes: usize, dim: usize, n: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitConfig {
    pub scheme: SplitScheme,
    /// Honest participant count; adversaries come on top of this.
    pub participants: usize,
    pub total_examples: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    #[serde(default = "defaults::hidden_dim")]
    pub hidden_dim: usize,
    /// Derived from the dataset; may be given explicitly and is then checked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden_dim: defaults::hidden_dim(),
            input_dim: None,
            num_classes: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SgdSection {
    /// Defaults to 0.15 below 10 total participants, 0.25 from 10 up.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default = "defaults::lr_decay")]
    pub lr_decay: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    #[serde(default = "defaults::local_epochs")]
    pub local_epochs: usize,
}

impl Default for SgdSection {
    fn default() -> Self {
        Self {
            learning_rate: None,
            lr_decay: defaults::lr_decay(),
            batch_size: defaults::batch_size(),
            local_epochs: defaults::local_epochs(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregatorConfig {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold_fraction: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalize_uploads: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clip_ratio: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub server_lr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub momentum: Option<f64>,
}

/// Aggregation rule after validation, defaults applied.
#[derive(Debug, Clone, PartialEq)]
pub enum Aggregator {
    Rffl {
        alpha: f64,
        threshold_fraction: f64,
        normalize_uploads: bool,
    },
    FedAvg,
    Qffl {
        q: f64,
        sample_ratio: f64,
    },
    MultiKrum {
        clip_ratio: f64,
    },
    FoolsGold {
        confidence: f64,
    },
    SignSgd {
        /// None: follow the decayed round learning rate.
        server_lr: Option<f64>,
        momentum: f64,
    },
    Median,
    Standalone,
}

impl Aggregator {
    /// Baselines that hand every participant the same aggregate. The
    /// reputation rule (per-participant allocations) and standalone (no
    /// server at all) are the exceptions.
    pub fn is_global_model(&self) -> bool {
        !matches!(self, Aggregator::Rffl { .. } | Aggregator::Standalone)
    }

    pub fn name(&self) -> &'static str {
        match self {
            Aggregator::Rffl { .. } => "rffl",
            Aggregator::FedAvg => "fedavg",
            Aggregator::Qffl { .. } => "qffl",
            Aggregator::MultiKrum { .. } => "multikrum",
            Aggregator::FoolsGold { .. } => "foolsgold",
            Aggregator::SignSgd { .. } => "signsgd",
            Aggregator::Median => "median",
            Aggregator::Standalone => "standalone",
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdversaryGroup {
    pub count: usize,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub src: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dst: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
}

/// Everything an experiment run needs, validated and with defaults filled.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// Echo-ready copy of the input with the learning rate made explicit.
    pub config: ExperimentConfig,
    pub dataset: Dataset,
    pub aggregator: Aggregator,
    /// (count, kind) per configured group, in file order.
    pub adversaries: Vec<(usize, AdversaryKind)>,
    pub total_participants: usize,
    pub sgd: SGDConfig,
}

pub fn parse_config(path: &Path) -> Result<Resolved, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config_str(&text)
}

pub fn parse_config_str(text: &str) -> Result<Resolved, ConfigError> {
    let config: ExperimentConfig = toml::from_str(text)?;
    resolve(config)
}

pub fn resolve(mut config: ExperimentConfig) -> Result<Resolved, ConfigError> {
    let dataset = resolve_dataset(&config.dataset)?;
    let adversaries = resolve_adversaries(&config.adversaries)?;
    let aggregator = resolve_aggregator(&config.aggregator)?;

    if config.split.participants < 2 {
        return Err(invalid(
            "split.participants",
            "need at least 2 honest participants",
        ));
    }
    let adversary_count: usize = adversaries.iter().map(|(c, _)| c).sum();
    let total_participants = config.split.participants + adversary_count;

    let (input_dim, num_classes) = match &dataset {
        Dataset::Mnist { .. } => (784, 10),
        Dataset::Synth { classes, dim, .. } => (*dim, *classes),
    };
    match config.model.input_dim {
        None => config.model.input_dim = Some(input_dim),
        Some(given) if given == input_dim => {}
        Some(given) => {
            return Err(invalid(
                "model.input_dim",
                format!("dataset provides {input_dim}-dimensional features, config says {given}"),
            ))
        }
    }
    match config.model.num_classes {
        None => config.model.num_classes = Some(num_classes),
        Some(given) if given == num_classes => {}
        Some(given) => {
            return Err(invalid(
                "model.num_classes",
                format!("dataset has {num_classes} classes, config says {given}"),
            ))
        }
    }

    let lr = config.sgd.learning_rate.unwrap_or(if total_participants >= 10 {
        0.25
    } else {
        0.15
    });
    config.sgd.learning_rate = Some(lr);
    let sgd = SGDConfig {
        learning_rate: lr,
        lr_decay: config.sgd.lr_decay,
        batch_size: config.sgd.batch_size,
        local_epochs: config.sgd.local_epochs,
    };
    if !(lr > 0.0) {
        return Err(invalid("sgd.learning_rate", "must be positive"));
    }
    if !(sgd.lr_decay > 0.0 && sgd.lr_decay <= 1.0) {
        return Err(invalid("sgd.lr_decay", "must lie in (0, 1]"));
    }
    if sgd.batch_size == 0 {
        return Err(invalid("sgd.batch_size", "must be positive"));
    }
    if sgd.local_epochs == 0 {
        return Err(invalid("sgd.local_epochs", "must be positive"));
    }
    if config.split.total_examples < total_participants {
        return Err(invalid(
            "split.total_examples",
            format!("cannot cover {total_participants} participants"),
        ));
    }
    if let Dataset::Synth { n, .. } = &dataset {
        let train_n = n * 8 / 10;
        if config.split.total_examples > train_n {
            return Err(invalid(
                "split.total_examples",
                format!("synthetic training set holds only {train_n} examples"),
            ));
        }
    }

    Ok(Resolved {
        config,
        dataset,
        aggregator,
        adversaries,
        total_participants,
        sgd,
    })
}

fn resolve_dataset(d: &DatasetConfig) -> Result<Dataset, ConfigError> {
    let kind = d.kind.clone();
    let reject = move |field: &str, set: bool| -> Result<(), ConfigError> {
        if set {
            Err(invalid(
                &format!("dataset.{field}"),
                format!("not applicable to dataset kind '{kind}'"),
            ))
        } else {
            Ok(())
        }
    };
    match d.kind.as_str() {
        "mnist" => {
            reject("classes", d.classes.is_some())?;
            reject("dim", d.dim.is_some())?;
            reject("n", d.n.is_some())?;
            let dir = d
                .dir
                .clone()
                .unwrap_or_else(crate::data::default_data_dir);
            for file in [
                "train-images-idx3-ubyte",
                "train-labels-idx1-ubyte",
                "t10k-images-idx3-ubyte",
                "t10k-labels-idx1-ubyte",
            ] {
                if !dir.join(file).is_file() {
                    return Err(invalid(
                        "dataset.dir",
                        format!("{} is missing {file}", dir.display()),
                    ));
                }
            }
            Ok(Dataset::Mnist { dir })
        }
        "synth" => {
            reject("dir", d.dir.is_some())?;
            let classes = d
                .classes
                .ok_or_else(|| invalid("dataset.classes", "required for synth"))?;
            let dim = d.dim.ok_or_else(|| invalid("dataset.dim", "required for synth"))?;
            let n = d.n.ok_or_else(|| invalid("dataset.n", "required for synth"))?;
            if classes < 2 || classes > 256 {
                return Err(invalid("dataset.classes", "must lie in 2..=256"));
            }
            if dim == 0 {
                return Err(invalid("dataset.dim", "must be positive"));
            }
            Ok(Dataset::Synth { classes, dim, n })
        }
        other => Err(invalid(
            "dataset.kind",
            format!("unknown dataset '{other}' (expected mnist or synth)"),
        )),
    }
}

fn resolve_aggregator(a: &AggregatorConfig) -> Result<Aggregator, ConfigError> {
    // Track which optional fields the chosen kind consumed; anything left
    // over is a misconfiguration.
    let mut allowed: Vec<&str> = Vec::new();
    let agg = match a.kind.as_str() {
        "rffl" => {
            allowed.extend(["alpha", "threshold_fraction", "normalize_uploads"]);
            let alpha = a.alpha.unwrap_or(0.8);
            let threshold_fraction = a.threshold_fraction.unwrap_or(1.0 / 3.0);
            if !(0.0..=1.0).contains(&alpha) {
                return Err(invalid("aggregator.alpha", "must lie in [0, 1]"));
            }
            if !(0.0..1.0).contains(&threshold_fraction) {
                return Err(invalid("aggregator.threshold_fraction", "must lie in [0, 1)"));
            }
            Aggregator::Rffl {
                alpha,
                threshold_fraction,
                normalize_uploads: a.normalize_uploads.unwrap_or(true),
            }
        }
        "fedavg" => Aggregator::FedAvg,
        "qffl" => {
            allowed.extend(["q", "sample_ratio"]);
            let q = a.q.unwrap_or(0.1);
            let sample_ratio = a.sample_ratio.unwrap_or(0.8);
            if q < 0.0 {
                return Err(invalid("aggregator.q", "must be nonnegative"));
            }
            if !(sample_ratio > 0.0 && sample_ratio <= 1.0) {
                return Err(invalid("aggregator.sample_ratio", "must lie in (0, 1]"));
            }
            Aggregator::Qffl { q, sample_ratio }
        }
        "multikrum" => {
            allowed.push("clip_ratio");
            let clip_ratio = a.clip_ratio.unwrap_or(0.2);
            if !(clip_ratio > 0.0 && clip_ratio < 1.0) {
                return Err(invalid("aggregator.clip_ratio", "must lie in (0, 1)"));
            }
            Aggregator::MultiKrum { clip_ratio }
        }
        "foolsgold" => {
            allowed.push("confidence");
            let confidence = a.confidence.unwrap_or(1.0);
            if confidence <= 0.0 {
                return Err(invalid("aggregator.confidence", "must be positive"));
            }
            Aggregator::FoolsGold { confidence }
        }
        "signsgd" => {
            allowed.extend(["server_lr", "momentum"]);
            let momentum = a.momentum.unwrap_or(0.8);
            if !(0.0..1.0).contains(&momentum) {
                return Err(invalid("aggregator.momentum", "must lie in [0, 1)"));
            }
            if let Some(lr) = a.server_lr {
                if lr <= 0.0 {
                    return Err(invalid("aggregator.server_lr", "must be positive"));
                }
            }
            Aggregator::SignSgd {
                server_lr: a.server_lr,
                momentum,
            }
        }
        "median" => Aggregator::Median,
        "standalone" => Aggregator::Standalone,
        other => {
            return Err(invalid(
                "aggregator.kind",
                format!("unknown aggregator '{other}'"),
            ))
        }
    };
    let set: [(&str, bool); 9] = [
        ("alpha", a.alpha.is_some()),
        ("threshold_fraction", a.threshold_fraction.is_some()),
        ("normalize_uploads", a.normalize_uploads.is_some()),
        ("q", a.q.is_some()),
        ("sample_ratio", a.sample_ratio.is_some()),
        ("clip_ratio", a.clip_ratio.is_some()),
        ("confidence", a.confidence.is_some()),
        ("server_lr", a.server_lr.is_some()),
        ("momentum", a.momentum.is_some()),
    ];
    for (field, present) in set {
        if present && !allowed.contains(&field) {
            return Err(invalid(
                &format!("aggregator.{field}"),
                format!("not applicable to aggregator '{}'", a.kind),
            ));
        }
    }
    Ok(agg)
}

fn resolve_adversaries(groups: &[AdversaryGroup]) -> Result<Vec<(usize, AdversaryKind)>, ConfigError> {
    let mut out = Vec::with_capacity(groups.len());
    for (i, g) in groups.iter().enumerate() {
        let field = |name: &str| format!("adversaries[{i}].{name}");
        let mut allowed: Vec<&str> = Vec::new();
        let kind = match g.kind.as_str() {
            "label_flip" => {
                allowed.extend(["src", "dst"]);
                let src = g
                    .src
                    .ok_or_else(|| invalid(&field("src"), "required for label_flip"))?;
                let dst = g
                    .dst
                    .ok_or_else(|| invalid(&field("dst"), "required for label_flip"))?;
                if src == dst {
                    return Err(invalid(&field("dst"), "must differ from src"));
                }
                AdversaryKind::LabelFlip { src, dst }
            }
            "rescale" => {
                allowed.push("factor");
                let factor = g
                    .factor
                    .ok_or_else(|| invalid(&field("factor"), "required for rescale"))?;
                if factor == 0.0 {
                    return Err(invalid(&field("factor"), "must be nonzero"));
                }
                AdversaryKind::Rescale { factor }
            }
            "sign_randomize" => AdversaryKind::SignRandomize,
            "value_invert" => {
                allowed.push("prob");
                let prob = g.prob.unwrap_or(0.5);
                if !(prob > 0.0 && prob <= 1.0) {
                    return Err(invalid(&field("prob"), "must lie in (0, 1]"));
                }
                AdversaryKind::ValueInvert { prob }
            }
            "free_rider" => AdversaryKind::FreeRider,
            other => {
                return Err(invalid(
                    &field("kind"),
                    format!("unknown adversary '{other}'"),
                ))
            }
        };
        let set: [(&str, bool); 4] = [
            ("src", g.src.is_some()),
            ("dst", g.dst.is_some()),
            ("factor", g.factor.is_some()),
            ("prob", g.prob.is_some()),
        ];
        for (name, present) in set {
            if present && !allowed.contains(&name) {
                return Err(invalid(
                    &field(name),
                    format!("not applicable to adversary '{}'", g.kind),
                ));
            }
        }
        out.push((g.count, kind));
    }
    Ok(out)
}
