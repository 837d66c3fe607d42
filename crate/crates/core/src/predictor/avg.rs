use super::Predictor;
use crate::data::Request;
use crate::error::Result;
use crate::features::{weekly_slot, FeatureContext};

/// `length / v_avg` per remaining segment, using the slot of the request
/// time.
pub fn avg_predict(ctx: &FeatureContext<'_>, request: &Request<'_>) -> Result<Vec<f64>> {
    let slot = weekly_slot(request.wall_clock(), ctx.store.slot_minutes());
    request
        .remaining()
        .iter()
        .map(|l| {
            let len = ctx.network.segment(l.segment)?.length_m;
            Ok(len / ctx.store.get(l.segment, slot).v_avg)
        })
        .collect()
}

/// Historical-average baseline.
#[derive(Clone, Copy, Debug, Default)]
pub struct AvgPredictor;

impl Predictor for AvgPredictor {
    fn name(&self) -> &str {
        "avg"
    }

    fn predict(&self, ctx: &FeatureContext<'_>, request: &Request<'_>) -> Result<Vec<f64>> {
        avg_predict(ctx, request)
    }
}
