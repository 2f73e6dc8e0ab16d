//! On-disk layout of a pipeline run.

use std::path::{Path, PathBuf};

/// Intervention tag of the unperturbed reference experiment.
pub const BASELINE: &str = "baseline";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Generated synthetic corpus.
    pub fn corpus_dir(&self) -> PathBuf {
        self.root.join("corpus")
    }

    /// Feature cache of the unperturbed corpus.
    pub fn feature_cache_dir(&self) -> PathBuf {
        self.root.join("features")
    }

    /// Materialized dataset of one (intervention, configuration) pair.
    pub fn cell_dir(&self, intervention: &str, config: &str) -> PathBuf {
        self.root.join("perturbed").join(intervention).join(config)
    }

    pub fn manifest_path(&self, intervention: &str, config: &str) -> PathBuf {
        self.cell_dir(intervention, config).join("manifest.csv")
    }

    pub fn model_dir(&self, intervention: &str, config: &str) -> PathBuf {
        self.root.join("models").join(intervention).join(config)
    }

    pub fn score_dir(&self, intervention: &str, config: &str) -> PathBuf {
        self.root.join("scores").join(intervention).join(config)
    }

    pub fn scores_path(&self, intervention: &str, config: &str) -> PathBuf {
        self.score_dir(intervention, config).join("scores.txt")
    }

    pub fn sidecar_path(&self, intervention: &str, config: &str) -> PathBuf {
        self.score_dir(intervention, config).join("scores.meta.csv")
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }
}

pub fn wav_path(dir: &Path, utt_id: &str) -> PathBuf {
    dir.join(format!("{utt_id}.wav"))
}
