//! Resumable, manifest-tracked orchestration of the whole pipeline:
//! generate, parse, dedup, analyze, rebalance and stats.
//!
//! Every stage reads and writes files under one output directory:
//!
//! ```text
//! manifest.json
//! raw/<split>.jsonl               raw completions, one per request id
//! parsed/<split>.jsonl            conversations
//! parsed/<split>.failures.jsonl
//! dedup/<split>.jsonl
//! dataset.jsonl                   rebalanced result
//! reports/{parse,dedup,analysis,rebalance,stats}.json, reports/stats.csv
//! summary.json
//! ```

mod config;
mod generate;
mod manifest;
mod stages;

use std::path::{Path, PathBuf};

pub use config::{AnalysisConfig, ConfigError, EmbedderConfig, Pipeline, PipelineConfig, SplitConfig};
pub use generate::{cmd_generate, parse_request_id, request_id, GenerateOptions, GenerateOutcome};
pub use manifest::{write_atomic, JobManifest, RangeSet, SplitProgress, StageState, STAGES};
pub use stages::{
    analyze_datasets, booster_contrast, cmd_analyze, cmd_dedup, cmd_parse, cmd_rebalance, cmd_run, cmd_stats,
    AnalysisOutput, AnalyzeOptions, ParseSplitReport, RebalanceOutput, RunOptions, RunSummary, SplitSummary,
};

use crate::assemble::AssembleError;
use crate::diversity::DiversityError;

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Data(#[from] AssembleError),
    #[error(transparent)]
    Analysis(#[from] DiversityError),
    #[error("{stage} needs {path}; run `{needs}` first")]
    MissingInput {
        stage: &'static str,
        needs: &'static str,
        path: PathBuf,
    },
    #[error("generation stopped with {remaining} of {count} items outstanding in split `{split}`")]
    Interrupted { split: String, count: u64, remaining: u64 },
}

impl PipelineError {
    /// Process exit status for this error class. These values are stable.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Config(_) => 3,
            PipelineError::Io { .. } | PipelineError::Data(AssembleError::Io { .. }) => 4,
            PipelineError::Data(AssembleError::SchemaViolation { .. }) => 5,
            PipelineError::Data(_) => 6,
            PipelineError::Analysis(_) => 7,
            PipelineError::MissingInput { .. } => 8,
            PipelineError::Interrupted { .. } => 9,
        }
    }
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Opens or creates the job manifest in `out`, refusing to mix configs or
/// seeds within one directory.
pub fn open_job(p: &Pipeline, out: &Path, seed: u64) -> Result<JobManifest, PipelineError> {
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    match JobManifest::load(out).map_err(io_err(&JobManifest::path(out)))? {
        Some(m) => {
            if m.config_digest != p.digest {
                return Err(ConfigError::JobMismatch {
                    dir: out.to_path_buf(),
                    what: "config",
                }
                .into());
            }
            if m.seed != seed {
                return Err(ConfigError::JobMismatch {
                    dir: out.to_path_buf(),
                    what: "seed",
                }
                .into());
            }
            Ok(m)
        }
        None => {
            let m = JobManifest::new(&p.config.job_id, &p.digest, seed);
            m.save(out).map_err(io_err(&JobManifest::path(out)))?;
            Ok(m)
        }
    }
}

pub(crate) fn save_manifest(m: &JobManifest, out: &Path) -> Result<(), PipelineError> {
    m.save(out).map_err(io_err(&JobManifest::path(out)))
}
