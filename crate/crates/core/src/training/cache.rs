use std::collections::HashMap;

use rayon::prelude::*;

use crate::data::{request_times, Request, RouteId, TravelRoute};
use crate::error::{Error, Result};
use crate::features::FeatureContext;
use crate::predictor::Predictor;

/// Request identity: route and request time rounded to milliseconds.
pub fn request_key(route_id: RouteId, t: f64) -> (RouteId, i64) {
    (route_id, (t * 1000.0).round() as i64)
}

/// Frozen predictor outputs for a fixed set of requests. Serves as a
/// [`Predictor`] that fails on requests it was not built for.
#[derive(Clone, Debug, Default)]
pub struct PredictionCache {
    name: String,
    map: HashMap<(RouteId, i64), Vec<f64>>,
}

impl PredictionCache {
    /// Runs `predictor` once for every request time of every interval.
    pub fn build(
        ctx: &FeatureContext<'_>,
        predictor: &dyn Predictor,
        routes: &[TravelRoute],
        intervals_s: &[f64],
    ) -> Result<Self> {
        if intervals_s.iter().any(|&d| !(d > 0.0)) {
            return Err(Error::Config("request interval must be > 0".into()));
        }
        let per_route = routes
            .par_iter()
            .map(|r| {
                let mut times: Vec<f64> = intervals_s.iter().flat_map(|&d| request_times(r, d)).collect();
                times.sort_by(f64::total_cmp);
                times.dedup();
                times
                    .into_iter()
                    .map(|t| {
                        let req = Request::new(r, t)?;
                        Ok((request_key(r.route_id, t), predictor.predict(ctx, &req)?))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            name: format!("cached:{}", predictor.name()),
            map: per_route.into_iter().flatten().collect(),
        })
    }

    pub fn get(&self, route_id: RouteId, t: f64) -> Option<&[f64]> {
        self.map.get(&request_key(route_id, t)).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Predictor for PredictionCache {
    fn name(&self) -> &str {
        &self.name
    }

    fn predict(&self, _ctx: &FeatureContext<'_>, request: &Request<'_>) -> Result<Vec<f64>> {
        self.get(request.route.route_id, request.t)
            .map(<[f64]>::to_vec)
            .ok_or_else(|| {
                Error::State(format!(
                    "no cached prediction for route {} at t={}",
                    request.route.route_id, request.t
                ))
            })
    }
}
