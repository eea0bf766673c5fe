//! Orchestration: run configuration, checkpointing, dataset loading, and the
//! train / eval / infer / agreement / gradcheck commands.

pub mod agreement;
pub mod checkpoint;
pub mod data;
pub mod evaluate;
pub mod infer;
pub mod train;
pub mod verify;

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imgproc::AugmentConfig;
use crate::losses::LossConfig;
use crate::model::{ModelConfig, ModelError};
use crate::optim::OptimConfig;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Png {
        path: PathBuf,
        source: image::ImageError,
    },
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] crate::tensor::TensorError),
    #[error(transparent)]
    Metrics(#[from] crate::metrics::MetricsError),
    #[error(transparent)]
    Synth(#[from] crate::synthgen::SynthError),
    #[error(transparent)]
    Checkpoint(#[from] checkpoint::CkptError),
    #[error("training diverged: loss is not finite at step {step} (batch {batch_ids:?})")]
    NonFiniteLoss { step: u64, batch_ids: Vec<String> },
}

pub fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    pub eval_every: u64,
    pub seed: u64,
    /// Optional early-stop targets checked at each validation pass.
    pub target_iou: Option<f64>,
    pub target_tip_px: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 4,
            max_steps: 2000,
            eval_every: 50,
            seed: 0,
            target_iou: None,
            target_tip_px: None,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub train_dir: Option<PathBuf>,
    pub val_dir: Option<PathBuf>,
    pub test_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        self.model.validate().map_err(PipelineError::Model)?;
        self.loss
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.optim.validate().map_err(PipelineError::Config)?;
        self.augment
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        if self.train.batch_size < 1 {
            return Err(PipelineError::Config("train.batch_size must be >= 1".into()));
        }
        if self.train.eval_every < 1 {
            return Err(PipelineError::Config("train.eval_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Strict parse: unknown keys anywhere are rejected.
    pub fn from_json_file(path: &Path) -> Result<Self, PipelineError> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        let cfg: RunConfig =
            serde_json::from_slice(&bytes).map_err(|source| PipelineError::Json {
                path: path.to_path_buf(),
                source,
            })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Temp-file-and-rename write; readers never observe partial output.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))?;
    Ok(())
}

/// RFC 4180: quote fields containing commas, quotes, or line breaks; CRLF
/// record separators.
pub fn csv_row(fields: &[String]) -> String {
    let quoted: Vec<String> = fields
        .iter()
        .map(|f| {
            if f.contains(',') || f.contains('"') || f.contains('\n') || f.contains('\r') {
                format!("\"{}\"", f.replace('"', "\"\""))
            } else {
                f.clone()
            }
        })
        .collect();
    format!("{}\r\n", quoted.join(","))
}

/// Honor the ICSINET_THREADS cap; no-op if the pool is already built.
pub fn init_thread_pool() {
    if let Ok(v) = std::env::var("ICSINET_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}
