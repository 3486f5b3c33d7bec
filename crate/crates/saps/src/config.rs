//! Experiment configuration, read from JSON.

use std::path::{Path, PathBuf};

use saps_core::matching::PeerSelection;
use saps_core::objectives::Partition;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SapsError};

fn default_t_thres() -> i64 {
    10
}

fn default_batch_size() -> usize {
    16
}

fn default_hidden() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Workers.
    pub n: usize,
    /// Model dimension.
    #[serde(rename = "N")]
    pub dim: usize,
    /// Rounds.
    #[serde(rename = "T")]
    pub rounds: u64,
    /// Compression ratio.
    pub c: u32,
    pub gamma: f64,
    #[serde(rename = "T_thres", default = "default_t_thres")]
    pub t_thres: i64,
    /// Bytes/s; the median positive link speed when absent.
    #[serde(rename = "B_thres", default)]
    pub b_thres: Option<f64>,
    pub master_seed: u64,
    pub objective: ObjectiveSpec,
    #[serde(default)]
    pub partition: PartitionSpec,
    #[serde(default)]
    pub transport: TransportSpec,
    #[serde(default)]
    pub peer_selection: PeerSelectionSpec,
    pub bandwidth: BandwidthSource,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    /// `½‖x − b_i‖²` with `b_i ~ N(0, I)`.
    Quadratic,
    /// ℓ₂-regularized logistic regression; the model has `N − 1` features plus a bias.
    Logistic {
        #[serde(default)]
        samples: Option<usize>,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
        /// Binary dataset file instead of synthetic clusters.
        #[serde(default)]
        dataset: Option<PathBuf>,
    },
    /// One hidden tanh layer; needs `N = hidden·(inputs + 2) + 1`.
    Mlp {
        inputs: usize,
        #[serde(default = "default_hidden")]
        hidden: usize,
        #[serde(default)]
        samples: Option<usize>,
        #[serde(default = "default_batch_size")]
        batch_size: usize,
        #[serde(default)]
        dataset: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PartitionSpec {
    #[default]
    Iid,
    #[serde(alias = "label_skew")]
    LabelSkew,
}

impl From<PartitionSpec> for Partition {
    fn from(p: PartitionSpec) -> Self {
        match p {
            PartitionSpec::Iid => Partition::Iid,
            PartitionSpec::LabelSkew => Partition::LabelSkew,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TransportSpec {
    Named(TransportKind),
    Tcp { kind: TransportKind, bind: String },
}

impl Default for TransportSpec {
    fn default() -> Self {
        TransportSpec::Named(TransportKind::Sim)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    Sim,
    Tcp,
}

impl TransportSpec {
    pub fn kind(&self) -> TransportKind {
        match self {
            TransportSpec::Named(k) | TransportSpec::Tcp { kind: k, .. } => *k,
        }
    }

    /// Address the TCP endpoints bind to.
    pub fn bind(&self) -> &str {
        match self {
            TransportSpec::Tcp { bind, .. } => bind,
            _ => "127.0.0.1",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeerSelectionSpec {
    #[default]
    Adaptive,
    Random,
    Ring,
}

impl From<PeerSelectionSpec> for PeerSelection {
    fn from(p: PeerSelectionSpec) -> Self {
        match p {
            PeerSelectionSpec::Adaptive => PeerSelection::Adaptive,
            PeerSelectionSpec::Random => PeerSelection::Random,
            PeerSelectionSpec::Ring => PeerSelection::Ring,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum BandwidthSource {
    /// Whitespace-separated `n×n` matrix in bytes/s; `#` starts a comment.
    File { path: PathBuf },
    /// Independent link speeds uniform in `(lo, hi]` bytes/s.
    Uniform { lo: f64, hi: f64 },
    /// Bundled synthetic fourteen-site matrix; requires `n = 14`.
    FourteenCity,
}

fn invalid(msg: impl Into<String>) -> SapsError {
    SapsError::Core(saps_core::Error::Validation(msg.into()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Relative paths inside the config resolve against the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg = Self::from_json(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let BandwidthSource::File { path } = &mut cfg.bandwidth {
            resolve(path);
        }
        match &mut cfg.objective {
            ObjectiveSpec::Logistic { dataset: Some(p), .. } | ObjectiveSpec::Mlp { dataset: Some(p), .. } => resolve(p),
            _ => {}
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 {
            return Err(invalid(format!("n must be >= 2, got {}", self.n)));
        }
        if self.dim == 0 {
            return Err(invalid("N must be >= 1"));
        }
        if self.rounds == 0 {
            return Err(invalid("T must be >= 1"));
        }
        if self.c == 0 {
            return Err(invalid("c must be >= 1"));
        }
        if !self.gamma.is_finite() || self.gamma < 0.0 {
            return Err(invalid(format!("gamma must be finite and >= 0, got {}", self.gamma)));
        }
        if self.t_thres < 1 {
            return Err(invalid(format!("T_thres must be >= 1, got {}", self.t_thres)));
        }
        if let Some(b) = self.b_thres {
            if !b.is_finite() || b < 0.0 {
                return Err(invalid(format!("B_thres must be finite and >= 0, got {b}")));
            }
        }
        match &self.bandwidth {
            BandwidthSource::Uniform { lo, hi } => {
                if !(lo.is_finite() && hi.is_finite() && *lo >= 0.0 && lo < hi) {
                    return Err(invalid(format!("uniform bandwidth needs 0 <= lo < hi, got ({lo}, {hi}]")));
                }
            }
            BandwidthSource::FourteenCity if self.n != 14 => {
                return Err(invalid(format!("the fourteen-city preset needs n = 14, got {}", self.n)));
            }
            _ => {}
        }
        match &self.objective {
            ObjectiveSpec::Quadratic => {}
            ObjectiveSpec::Logistic {
                samples,
                batch_size,
                dataset,
            } => {
                if *batch_size == 0 {
                    return Err(invalid("batch_size must be >= 1"));
                }
                if self.dim < 2 {
                    return Err(invalid("logistic needs N >= 2 (features plus bias)"));
                }
                if dataset.is_none() && samples.is_some_and(|s| s < self.n) {
                    return Err(invalid("need at least one sample per worker"));
                }
            }
            ObjectiveSpec::Mlp {
                inputs,
                hidden,
                samples,
                batch_size,
                ..
            } => {
                if *batch_size == 0 || *hidden == 0 || *inputs < 2 {
                    return Err(invalid("mlp needs batch_size >= 1, hidden >= 1 and inputs >= 2"));
                }
                let expected = saps_core::objectives::Mlp::param_count(*inputs, *hidden);
                if self.dim != expected {
                    return Err(invalid(format!(
                        "mlp with {inputs} inputs and {hidden} hidden units has {expected} parameters, N is {}",
                        self.dim
                    )));
                }
                if samples.is_some_and(|s| s < self.n) {
                    return Err(invalid("need at least one sample per worker"));
                }
            }
        }
        Ok(())
    }
}
