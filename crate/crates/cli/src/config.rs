//! Experiment configuration files.
//!
//! ```toml
//! schema_version = 1
//! mode = "ae_message_wise"
//! seed = 1
//! output = "out/messagewise_16_7"
//!
//! [code]
//! n = 7
//! class_sizes = [8, 8]
//!
//! [train]
//! hidden_encoder = [16]
//! hidden_decoder = [16]
//! ebn0_db = 3.0
//! batch_size = 256
//! iterations = 20000
//!
//! [sweep]
//! lambda_grid = [0.1, 0.5, 0.9]
//! snr_grid_db = [1.0, 3.0, 5.0, 7.0]
//!
//! [stopping]
//! min_errors_per_class = 100
//! max_trials = 100000000
//! ```
//!
//! Unknown keys anywhere are rejected.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use uep_core::autoencoder::TrainConfig;
use uep_core::baselines::{CosetSpec, Normalization, SuperpositionSpec};
use uep_core::montecarlo::{DecoderKind, StoppingRule};
use uep_core::nn::AdamConfig;
use uep_core::uep::BitwiseLoss;
use uep_core::{ClassPartition, LossWeights};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    AeMessageWise,
    AeBitWise,
    AeProgressive,
    BaselineCoset,
    BaselineSuperposition,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::AeMessageWise => "ae_message_wise",
            Mode::AeBitWise => "ae_bit_wise",
            Mode::AeProgressive => "ae_progressive",
            Mode::BaselineCoset => "baseline_coset",
            Mode::BaselineSuperposition => "baseline_superposition",
        }
    }

    pub fn is_ae(self) -> bool {
        matches!(self, Mode::AeMessageWise | Mode::AeBitWise | Mode::AeProgressive)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    #[serde(default)]
    pub output: Option<PathBuf>,
    pub code: CodeSection,
    #[serde(default)]
    pub train: Option<TrainSection>,
    pub sweep: SweepSection,
    #[serde(default)]
    pub stopping: StoppingSection,
    #[serde(default)]
    pub baseline: Option<BaselineSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CodeSection {
    pub n: usize,
    /// Message-wise class sizes `|M_i|`.
    #[serde(default)]
    pub class_sizes: Option<Vec<usize>>,
    /// Submessage lengths `k_i` (bit-wise, progressive, coset, superposition).
    #[serde(default)]
    pub class_bits: Option<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub hidden_encoder: Vec<usize>,
    pub hidden_decoder: Vec<usize>,
    /// Omit for a noiseless training channel.
    #[serde(default)]
    pub ebn0_db: Option<f64>,
    pub batch_size: usize,
    pub iterations: usize,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default)]
    pub bitwise_loss: BitwiseLoss,
}

fn default_lr() -> f64 {
    AdamConfig::default().alpha
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub lambda_grid: Vec<f64>,
    pub snr_grid_db: Vec<f64>,
    #[serde(default)]
    pub decoder: DecoderKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoppingSection {
    pub min_errors_per_class: u64,
    pub max_trials: u64,
}

impl Default for StoppingSection {
    fn default() -> Self {
        let d = StoppingRule::default();
        Self {
            min_errors_per_class: d.min_errors_per_class,
            max_trials: d.max_trials,
        }
    }
}

impl From<StoppingSection> for StoppingRule {
    fn from(s: StoppingSection) -> Self {
        StoppingRule {
            min_errors_per_class: s.min_errors_per_class,
            max_trials: s.max_trials,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineFamily {
    #[default]
    Coset,
    Superposition,
}

/// Which partition baseline codes are scored against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalPartition {
    /// The code's own class structure.
    #[default]
    Native,
    /// The partition of the autoencoder experiment in the same file.
    Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaselineSection {
    /// Only read when the mode is an autoencoder mode.
    #[serde(default)]
    pub family: BaselineFamily,
    pub count: usize,
    /// Coset class dimensions `k_i`; defaults to `code.class_bits`.
    #[serde(default)]
    pub class_bits: Option<Vec<u32>>,
    #[serde(default)]
    pub mu_grid: Vec<f64>,
    #[serde(default)]
    pub normalization: Normalization,
    #[serde(default)]
    pub eval_partition: EvalPartition,
}

/// A configuration problem, located in the source text when possible.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

/// 1-based line of the first `key =` assignment, optionally inside `[table]`.
fn locate(source: &str, table: Option<&str>, key: &str) -> Option<usize> {
    let mut current: Option<String> = None;
    for (i, raw) in source.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = Some(name.trim().to_string());
            if table == Some(name.trim()) && key.is_empty() {
                return Some(i + 1);
            }
            continue;
        }
        if current.as_deref() != table {
            continue;
        }
        if let Some((k, _)) = line.split_once('=') {
            if k.trim() == key {
                return Some(i + 1);
            }
        }
    }
    None
}

fn span_line(source: &str, offset: usize) -> usize {
    source[..offset.min(source.len())].matches('\n').count() + 1
}

pub fn parse_config(source: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = toml::from_str(source).map_err(|e| ConfigError {
        line: e.span().map(|s| span_line(source, s.start)),
        message: e.message().trim().to_string(),
    })?;
    config.validate(source)?;
    Ok(config)
}

pub fn load_config(path: &Path) -> anyhow::Result<ExperimentConfig> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| anyhow::anyhow!("cannot read {}: {e}", path.display()))?;
    parse_config(&source).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
}

impl ExperimentConfig {
    fn validate(&self, source: &str) -> Result<(), ConfigError> {
        let err = |table: Option<&str>, key: &str, message: String| ConfigError {
            line: locate(source, table, key),
            message,
        };
        if self.schema_version != SCHEMA_VERSION {
            return Err(err(
                None,
                "schema_version",
                format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if self.sweep.snr_grid_db.is_empty() {
            return Err(err(Some("sweep"), "snr_grid_db", "snr_grid_db must not be empty".into()));
        }
        if self.sweep.snr_grid_db.iter().any(|v| v.is_nan()) {
            return Err(err(Some("sweep"), "snr_grid_db", "snr_grid_db contains NaN".into()));
        }
        StoppingRule::from(self.stopping)
            .validate()
            .map_err(|e| err(Some("stopping"), "min_errors_per_class", e.to_string()))?;
        if self.mode.is_ae() {
            if self.sweep.lambda_grid.is_empty() {
                return Err(err(Some("sweep"), "lambda_grid", "lambda_grid must not be empty".into()));
            }
            for &l in &self.sweep.lambda_grid {
                if !(0.0..=1.0).contains(&l) {
                    return Err(err(Some("sweep"), "lambda_grid", format!("lambda {l} outside [0, 1]")));
                }
            }
            let train = self.train.as_ref().ok_or_else(|| err(None, "mode", "autoencoder modes need a [train] table".into()))?;
            for &l in &self.sweep.lambda_grid {
                self.train_config(train, l)
                    .and_then(|c| c.validate().map_err(anyhow::Error::from))
                    .map_err(|e| err(Some("code"), "n", e.to_string()))?;
            }
        } else if self.baseline.is_none() {
            return Err(err(None, "mode", "baseline modes need a [baseline] table".into()));
        }
        if let Some(b) = &self.baseline {
            let family = self.baseline_family();
            if b.count == 0 {
                return Err(err(Some("baseline"), "count", "count must be >= 1".into()));
            }
            if family == BaselineFamily::Superposition {
                if b.mu_grid.is_empty() {
                    return Err(err(Some("baseline"), "mu_grid", "mu_grid must not be empty".into()));
                }
                for &mu in &b.mu_grid {
                    self.superposition_spec(mu)
                        .and_then(|s| s.validate().map_err(anyhow::Error::from))
                        .map_err(|e| err(Some("baseline"), "mu_grid", e.to_string()))?;
                }
            } else {
                let spec = self.coset_spec().map_err(|e| err(Some("baseline"), "class_bits", e.to_string()))?;
                spec.validate().map_err(|e| err(Some("baseline"), "class_bits", e.to_string()))?;
            }
            if b.eval_partition == EvalPartition::Experiment {
                let ae = self
                    .experiment_partition()
                    .map_err(|e| err(Some("baseline"), "eval_partition", e.to_string()))?;
                let m = match family {
                    BaselineFamily::Coset => self.coset_spec().and_then(|s| Ok(s.partition()?.num_messages())),
                    BaselineFamily::Superposition => {
                        let (k1, k2) = self.superposition_bits().map_err(|e| err(Some("code"), "class_bits", e.to_string()))?;
                        Ok(1usize << (k1 + k2))
                    }
                }
                .map_err(|e| err(Some("baseline"), "class_bits", e.to_string()))?;
                if m != ae.num_messages() {
                    return Err(err(
                        Some("baseline"),
                        "eval_partition",
                        format!("baseline codes have {m} messages, experiment {}", ae.num_messages()),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Baseline family: fixed by baseline modes, read from the table otherwise.
    pub fn baseline_family(&self) -> BaselineFamily {
        match self.mode {
            Mode::BaselineCoset => BaselineFamily::Coset,
            Mode::BaselineSuperposition => BaselineFamily::Superposition,
            _ => self.baseline.as_ref().map(|b| b.family).unwrap_or_default(),
        }
    }

    fn class_bits(&self) -> anyhow::Result<&[u32]> {
        self.code
            .class_bits
            .as_deref()
            .ok_or_else(|| anyhow::anyhow!("code.class_bits is required for mode {}", self.mode.name()))
    }

    /// Class structure of the experiment's own codes.
    pub fn experiment_partition(&self) -> anyhow::Result<ClassPartition> {
        Ok(match self.mode {
            Mode::AeMessageWise => {
                let sizes = self
                    .code
                    .class_sizes
                    .as_deref()
                    .ok_or_else(|| anyhow::anyhow!("code.class_sizes is required for ae_message_wise"))?;
                ClassPartition::message_wise(sizes)?
            }
            Mode::AeBitWise => ClassPartition::bit_wise(self.class_bits()?)?,
            Mode::AeProgressive => ClassPartition::progressive(self.class_bits()?)?,
            Mode::BaselineCoset => self.coset_spec()?.partition()?,
            Mode::BaselineSuperposition => {
                let (k1, k2) = self.superposition_bits()?;
                ClassPartition::bit_wise(&[k1, k2])?
            }
        })
    }

    pub fn train_config(&self, train: &TrainSection, lambda: f64) -> anyhow::Result<TrainConfig> {
        Ok(TrainConfig {
            partition: self.experiment_partition()?,
            n: self.code.n,
            weights: LossWeights::pair(lambda)?,
            bitwise_loss: train.bitwise_loss,
            hidden_encoder: train.hidden_encoder.clone(),
            hidden_decoder: train.hidden_decoder.clone(),
            train_ebn0_db: train.ebn0_db.unwrap_or(f64::INFINITY),
            batch_size: train.batch_size,
            num_iterations: train.iterations,
            adam: AdamConfig {
                alpha: train.learning_rate,
                ..AdamConfig::default()
            },
            seed: self.seed,
        })
    }

    pub fn coset_spec(&self) -> anyhow::Result<CosetSpec> {
        let bits = match self.baseline.as_ref().and_then(|b| b.class_bits.clone()) {
            Some(b) => b,
            None => self.class_bits()?.to_vec(),
        };
        Ok(CosetSpec {
            class_bits: bits,
            n: self.code.n,
        })
    }

    fn superposition_bits(&self) -> anyhow::Result<(u32, u32)> {
        let bits = match self.baseline.as_ref().and_then(|b| b.class_bits.clone()) {
            Some(b) => b,
            None => self.class_bits()?.to_vec(),
        };
        match bits.as_slice() {
            [k1, k2] => Ok((*k1, *k2)),
            _ => anyhow::bail!("superposition codes need exactly two class_bits entries"),
        }
    }

    pub fn superposition_spec(&self, mu: f64) -> anyhow::Result<SuperpositionSpec> {
        let (k1, k2) = self.superposition_bits()?;
        Ok(SuperpositionSpec {
            k1,
            k2,
            n: self.code.n,
            mu,
            normalization: self.baseline.as_ref().map(|b| b.normalization).unwrap_or_default(),
        })
    }

    pub fn stopping_rule(&self) -> StoppingRule {
        self.stopping.into()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
mode = "ae_message_wise"
seed = 3

[code]
n = 7
class_sizes = [8, 8]

[train]
hidden_encoder = [16]
hidden_decoder = [16]
ebn0_db = 3.0
batch_size = 32
iterations = 10

[sweep]
lambda_grid = [0.5]
snr_grid_db = [3.0]
"#;

    #[test]
    fn minimal_config_parses() {
        let c = parse_config(MINIMAL).unwrap();
        assert_eq!(c.mode, Mode::AeMessageWise);
        assert_eq!(c.stopping_rule(), StoppingRule::default());
        assert_eq!(c.experiment_partition().unwrap().num_classes(), 2);
    }

    #[test]
    fn unknown_key_is_located() {
        let src = MINIMAL.replace("iterations = 10", "iterations = 10\nlearnin_rate = 0.1");
        let e = parse_config(&src).unwrap_err();
        assert!(e.message.contains("learnin_rate"), "{e}");
        assert_eq!(e.line, Some(16));
    }

    #[test]
    fn empty_lambda_grid_is_located() {
        let src = MINIMAL.replace("lambda_grid = [0.5]", "lambda_grid = []");
        let e = parse_config(&src).unwrap_err();
        assert_eq!(e.line, Some(18));
        assert!(e.to_string().starts_with("line 18:"));
    }

    #[test]
    fn wrong_schema_version() {
        let e = parse_config(&MINIMAL.replace("schema_version = 1", "schema_version = 2")).unwrap_err();
        assert_eq!(e.line, Some(2));
    }

    #[test]
    fn missing_class_sizes() {
        assert!(parse_config(&MINIMAL.replace("class_sizes = [8, 8]", "")).is_err());
    }

    #[test]
    fn class_sizes_must_fill_a_power_of_two() {
        assert!(parse_config(&MINIMAL.replace("class_sizes = [8, 8]", "class_sizes = [8, 7]")).is_err());
    }
}
