//! Travel time estimators and the per-trip inference memory.

mod avg;
mod memory;
mod neural;

use crate::data::Request;
use crate::error::Result;
use crate::features::FeatureContext;

pub use avg::{avg_predict, AvgPredictor};
pub use memory::{InferenceMemory, PredictionRecord};
pub use neural::{NeuralPredictor, PredictorInput, TrainReport};

/// Estimates the travel time of every remaining segment of a request.
pub trait Predictor: Send + Sync {
    fn name(&self) -> &str;

    /// One positive value per segment of `request.remaining()`.
    fn predict(&self, ctx: &FeatureContext<'_>, request: &Request<'_>) -> Result<Vec<f64>>;

    fn predict_total(&self, ctx: &FeatureContext<'_>, request: &Request<'_>) -> Result<f64> {
        Ok(self.predict(ctx, request)?.iter().sum())
    }
}
