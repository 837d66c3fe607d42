use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::features::{OfflineFeatures, OnlineFeatures};

/// Environment state observed by the decision maker at one request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentState {
    pub offline: Arc<OfflineFeatures>,
    pub online: OnlineFeatures,
    /// Index of the first untraveled segment.
    pub position: usize,
    /// Seconds since the last re-prediction on this trip.
    pub sigma: f64,
}

impl AgentState {
    pub fn new(offline: Arc<OfflineFeatures>, online: OnlineFeatures, sigma: f64) -> Self {
        let position = online.len();
        Self {
            offline,
            online,
            position,
            sigma,
        }
    }

    pub fn n_segments(&self) -> usize {
        self.offline.len()
    }
}
