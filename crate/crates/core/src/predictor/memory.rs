use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{Request, RouteId};
use crate::error::{Error, Result};

/// Most recent per-segment prediction of one trip.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub route_id: RouteId,
    /// Seconds per segment for positions `stored_split..m`.
    pub predicted: Vec<f64>,
    /// Request time (seconds since departure) of the prediction.
    pub stored_at: f64,
    pub stored_split: usize,
}

impl PredictionRecord {
    pub fn end(&self) -> usize {
        self.stored_split + self.predicted.len()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct InferenceMemory {
    records: HashMap<RouteId, PredictionRecord>,
}

impl InferenceMemory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Replaces the route's record with `predictions` for the request's
    /// remaining segments.
    pub fn store(&mut self, request: &Request<'_>, predictions: Vec<f64>) -> Result<()> {
        let expected = request.remaining().len();
        if predictions.len() != expected {
            return Err(Error::Consistency(format!(
                "route {}: {} predictions for {expected} remaining segments",
                request.route.route_id,
                predictions.len()
            )));
        }
        self.records.insert(
            request.route.route_id,
            PredictionRecord {
                route_id: request.route.route_id,
                predicted: predictions,
                stored_at: request.t,
                stored_split: request.split_index,
            },
        );
        Ok(())
    }

    /// Sum of the stored predictions for segments `split..m`.
    pub fn lookup(&self, route_id: RouteId, split: usize) -> Result<f64> {
        let rec = self.records.get(&route_id).ok_or(Error::MemoryMiss(route_id))?;
        if split < rec.stored_split {
            return Err(Error::Consistency(format!(
                "route {route_id}: lookup at position {split} precedes stored position {}",
                rec.stored_split
            )));
        }
        if split > rec.end() {
            return Err(Error::Consistency(format!(
                "route {route_id}: lookup at position {split} is past the trip end {}",
                rec.end()
            )));
        }
        Ok(rec.predicted[split - rec.stored_split..].iter().sum())
    }

    pub fn record(&self, route_id: RouteId) -> Option<&PredictionRecord> {
        self.records.get(&route_id)
    }

    pub fn evict(&mut self, route_id: RouteId) -> Option<PredictionRecord> {
        self.records.remove(&route_id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dump_json(&self, path: &Path) -> Result<()> {
        let mut recs: Vec<&PredictionRecord> = self.records.values().collect();
        recs.sort_by_key(|r| r.route_id);
        std::fs::write(path, serde_json::to_string_pretty(&recs)?)?;
        Ok(())
    }
}
