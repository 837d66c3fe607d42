//! Training pipelines for the predictor and the decision agent.

mod agent;
mod cache;
mod predictor;

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::Config;
use crate::error::Result;

pub use agent::{
    build_decision_net, greedy_action, replay_route_as_episode, train_agent, AgentEpochLog, AgentTrainer,
    AgentTrainingState, Episode, RequestRecord,
};
pub use cache::{request_key, PredictionCache};
pub use predictor::{
    capped, fit_predictor, predict_totals, score_difficulty, train_expert, train_predictor, validation_mape,
    PredictorEpochLog, PredictorSamples,
};

/// Output directory of one pipeline stage.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub fn create(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    /// Writes the resolved configuration as `config.toml`.
    pub fn write_config(&self, cfg: &Config) -> Result<()> {
        std::fs::write(self.path("config.toml"), cfg.to_toml_string())?;
        Ok(())
    }

    /// Writes `rows` as a CSV with a header.
    pub fn write_csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<()> {
        write_csv(&self.path(name), rows)
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
