//! End-to-end online simulation, metrics, sweeps and exports.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agent::{AgentState, DqnAgent, QModel};
use crate::data::{request_times, Request, RouteId, TravelRoute};
use crate::error::{Error, Result};
use crate::features::{FeatureContext, HistoryMark};
use crate::predictor::{InferenceMemory, Predictor};
use crate::reward::{LOOKUP, REPREDICT};
use crate::training::write_csv;

/// True remaining times below this are left out of MAPE.
pub const MAPE_MIN_TRUTH_S: f64 = 1.0;

/// Who decides between lookup and re-prediction.
pub enum Policy<'a, M: QModel<State = AgentState>> {
    Learned(&'a DqnAgent<M>),
    AlwaysRepredict,
    NeverAfterFirst,
}

impl<M: QModel<State = AgentState>> Policy<'_, M> {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Learned(_) => "learned",
            Policy::AlwaysRepredict => "always",
            Policy::NeverAfterFirst => "never-after-first",
        }
    }
}

/// One answered request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub route_id: RouteId,
    pub t: f64,
    pub action: usize,
    pub y_hat: f64,
    pub y_true: f64,
    pub sigma: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent; `None` when every truth was excluded.
    pub mape: Option<f64>,
    pub mape_excluded: usize,
}

/// MAE, RMSE and MAPE (%) of `predictions` against `truths`. Truths under
/// [`MAPE_MIN_TRUTH_S`] only count towards MAE and RMSE.
pub fn compute_metrics(truths: &[f64], predictions: &[f64]) -> Result<Metrics> {
    if truths.len() != predictions.len() {
        return Err(Error::Consistency(format!(
            "{} truths for {} predictions",
            truths.len(),
            predictions.len()
        )));
    }
    if truths.is_empty() {
        return Err(Error::Data("no requests to score".into()));
    }
    let n = truths.len() as f64;
    let (mut abs, mut sq, mut pct, mut kept) = (0.0, 0.0, 0.0, 0usize);
    for (&y, &p) in truths.iter().zip(predictions) {
        let e = p - y;
        abs += e.abs();
        sq += e * e;
        if y >= MAPE_MIN_TRUTH_S {
            pct += e.abs() / y;
            kept += 1;
        }
    }
    Ok(Metrics {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
        mape: (kept > 0).then(|| 100.0 * pct / kept as f64),
        mape_excluded: truths.len() - kept,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RouteMetrics {
    pub route_id: RouteId,
    pub requests: usize,
    pub repredictions: usize,
    pub mae: f64,
    pub rmse: f64,
    pub mape: Option<f64>,
    pub mape_excluded: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub policy: String,
    pub predictor: String,
    pub interval_s: f64,
    pub routes: Vec<RouteMetrics>,
    /// Means over routes.
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    /// Re-predictions over all requests (%).
    pub mur: f64,
    pub requests: usize,
    pub repredictions: usize,
    pub mape_excluded: usize,
    pub wall_clock_s: f64,
}

impl EvalReport {
    /// Aggregates per-route metrics; the order of `routes` is kept.
    pub fn from_routes(
        policy: &str,
        predictor: &str,
        interval_s: f64,
        routes: Vec<RouteMetrics>,
        wall_clock_s: f64,
    ) -> Result<Self> {
        if routes.is_empty() {
            return Err(Error::Data("no routes to evaluate".into()));
        }
        let n = routes.len() as f64;
        let mapes: Vec<f64> = routes.iter().filter_map(|r| r.mape).collect();
        let requests: usize = routes.iter().map(|r| r.requests).sum();
        let repredictions: usize = routes.iter().map(|r| r.repredictions).sum();
        Ok(Self {
            policy: policy.to_string(),
            predictor: predictor.to_string(),
            interval_s,
            mae: routes.iter().map(|r| r.mae).sum::<f64>() / n,
            rmse: routes.iter().map(|r| r.rmse).sum::<f64>() / n,
            mape: if mapes.is_empty() {
                0.0
            } else {
                mapes.iter().sum::<f64>() / mapes.len() as f64
            },
            mur: 100.0 * repredictions as f64 / requests as f64,
            requests,
            repredictions,
            mape_excluded: routes.iter().map(|r| r.mape_excluded).sum(),
            routes,
            wall_clock_s,
        })
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn write_routes_csv(&self, path: &Path) -> Result<()> {
        write_csv(path, &self.routes)
    }
}

fn route_metrics(route_id: RouteId, events: &[&Event]) -> Result<RouteMetrics> {
    let truths: Vec<f64> = events.iter().map(|e| e.y_true).collect();
    let preds: Vec<f64> = events.iter().map(|e| e.y_hat).collect();
    let m = compute_metrics(&truths, &preds)?;
    Ok(RouteMetrics {
        route_id,
        requests: events.len(),
        repredictions: events.iter().filter(|e| e.action == REPREDICT).count(),
        mae: m.mae,
        rmse: m.rmse,
        mape: m.mape,
        mape_excluded: m.mape_excluded,
    })
}

/// Rebuilds per-route metrics from an event stream, routes in order of
/// first appearance.
pub fn report_from_events(events: &[Event], policy: &str, predictor: &str, interval_s: f64) -> Result<EvalReport> {
    let mut order: Vec<RouteId> = Vec::new();
    let mut groups: std::collections::HashMap<RouteId, Vec<&Event>> = Default::default();
    for e in events {
        groups
            .entry(e.route_id)
            .or_insert_with(|| {
                order.push(e.route_id);
                Vec::new()
            })
            .push(e);
    }
    let routes = order
        .iter()
        .map(|id| route_metrics(*id, &groups[id]))
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_routes(policy, predictor, interval_s, routes, 0.0)
}

fn simulate_route<M: QModel<State = AgentState>>(
    ctx: &FeatureContext<'_>,
    route: &TravelRoute,
    policy: &Policy<'_, M>,
    predictor: &dyn Predictor,
    interval_s: f64,
) -> Result<Vec<Event>> {
    let mut memory = InferenceMemory::new();
    let mut history = vec![HistoryMark::None; route.len()];
    let mut last_rp: Option<f64> = None;
    let mut out = Vec::new();
    for t in request_times(route, interval_s) {
        let req = Request::new(route, t)?;
        let split = req.split_index;
        let sigma = last_rp.map_or(0.0, |s| t - s);
        let stored = match memory.lookup(route.route_id, split) {
            Ok(v) => Some(v),
            Err(Error::MemoryMiss(_)) => None,
            Err(e) => return Err(e),
        };
        let action = match (stored, policy) {
            (None, _) | (_, Policy::AlwaysRepredict) => REPREDICT,
            (Some(_), Policy::NeverAfterFirst) => LOOKUP,
            (Some(_), Policy::Learned(agent)) => {
                let offline = Arc::new(ctx.offline(&req)?);
                let online = ctx.online(&req, &history[..split])?;
                agent.greedy(&AgentState::new(offline, online, sigma))?
            }
        };
        let y_hat = if action == REPREDICT {
            let preds = predictor.predict(ctx, &req)?;
            let total = preds.iter().sum();
            memory.store(&req, preds)?;
            last_rp = Some(t);
            total
        } else {
            stored.expect("lookup only with a stored record")
        };
        if split < history.len() {
            let mark = if action == REPREDICT {
                HistoryMark::Repredict
            } else {
                HistoryMark::Lookup
            };
            history[split] = history[split].merge(mark);
        }
        out.push(Event {
            route_id: route.route_id,
            t,
            action,
            y_hat,
            y_true: req.remaining_time_s(),
            sigma,
        });
    }
    Ok(out)
}

/// Issues requests at `0, Δt, …` along every route. Each route runs with
/// its own memory; the event stream is in route order.
pub fn simulate_online<M: QModel<State = AgentState> + Sync>(
    ctx: &FeatureContext<'_>,
    routes: &[TravelRoute],
    policy: &Policy<'_, M>,
    predictor: &dyn Predictor,
    interval_s: f64,
) -> Result<(EvalReport, Vec<Event>)> {
    if !(interval_s > 0.0) {
        return Err(Error::Config("eval.interval_s: must be > 0".into()));
    }
    let start = Instant::now();
    let per_route = routes
        .par_iter()
        .map(|r| simulate_route(ctx, r, policy, predictor, interval_s))
        .collect::<Result<Vec<_>>>()?;
    let metrics = routes
        .iter()
        .zip(&per_route)
        .map(|(r, ev)| route_metrics(r.route_id, &ev.iter().collect::<Vec<_>>()))
        .collect::<Result<Vec<_>>>()?;
    let report = EvalReport::from_routes(
        policy.name(),
        predictor.name(),
        interval_s,
        metrics,
        start.elapsed().as_secs_f64(),
    )?;
    Ok((report, per_route.into_iter().flatten().collect()))
}

/// Scores the predictor on every request without the memory or a policy.
pub fn evaluate_predictor(
    ctx: &FeatureContext<'_>,
    routes: &[TravelRoute],
    predictor: &dyn Predictor,
    interval_s: f64,
) -> Result<EvalReport> {
    let start = Instant::now();
    let metrics = routes
        .par_iter()
        .map(|r| {
            let mut truths = Vec::new();
            let mut preds = Vec::new();
            for t in request_times(r, interval_s) {
                let req = Request::new(r, t)?;
                truths.push(req.remaining_time_s());
                preds.push(predictor.predict_total(ctx, &req)?);
            }
            let m = compute_metrics(&truths, &preds)?;
            Ok(RouteMetrics {
                route_id: r.route_id,
                requests: truths.len(),
                repredictions: truths.len(),
                mae: m.mae,
                rmse: m.rmse,
                mape: m.mape,
                mape_excluded: m.mape_excluded,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    EvalReport::from_routes(
        "predictor-only",
        predictor.name(),
        interval_s,
        metrics,
        start.elapsed().as_secs_f64(),
    )
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    for e in events {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_events(path: &Path) -> Result<Vec<Event>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::parse(path, i + 1, e.to_string())))
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub interval_s: f64,
    pub mae: f64,
    pub rmse: f64,
    pub mape: f64,
    pub mur: f64,
}

/// One simulation per interval, rows sorted by interval.
pub fn interval_sweep<M: QModel<State = AgentState> + Sync>(
    ctx: &FeatureContext<'_>,
    routes: &[TravelRoute],
    policy: &Policy<'_, M>,
    predictor: &dyn Predictor,
    intervals_s: &[f64],
) -> Result<Vec<SweepRow>> {
    let mut sorted = intervals_s.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted
        .into_iter()
        .map(|dt| {
            let (r, _) = simulate_online(ctx, routes, policy, predictor, dt)?;
            Ok(SweepRow {
                interval_s: dt,
                mae: r.mae,
                rmse: r.rmse,
                mape: r.mape,
                mur: r.mur,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CasePoint {
    pub route_id: RouteId,
    pub t: f64,
    pub actual: f64,
    pub estimated: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseStudy {
    /// Every request of `k` randomly chosen routes.
    pub sampled: Vec<CasePoint>,
    /// The `k` routes with the highest MAPE, worst first.
    pub worst: Vec<RouteMetrics>,
}

/// `k` random routes (seeded) and the `k` worst routes by MAPE; `k` is
/// truncated to the number of routes in the stream.
pub fn case_study(events: &[Event], k: usize, seed: u64) -> Result<CaseStudy> {
    if events.is_empty() {
        return Err(Error::Data("empty event stream".into()));
    }
    let report = report_from_events(events, "", "", 0.0)?;
    let n = report.routes.len();
    let k = if k > n {
        warn!("case study asked for {k} routes but only {n} are available");
        n
    } else {
        k
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<usize> = sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    let chosen: Vec<RouteId> = picked.iter().map(|&i| report.routes[i].route_id).collect();
    let sampled = events
        .iter()
        .filter(|e| chosen.contains(&e.route_id))
        .map(|e| CasePoint {
            route_id: e.route_id,
            t: e.t,
            actual: e.y_true,
            estimated: e.y_hat,
        })
        .collect();
    let mut worst = report.routes;
    worst.sort_by(|a, b| {
        b.mape
            .unwrap_or(f64::NEG_INFINITY)
            .total_cmp(&a.mape.unwrap_or(f64::NEG_INFINITY))
            .then(a.route_id.cmp(&b.route_id))
    });
    worst.truncate(k);
    Ok(CaseStudy { sampled, worst })
}

/// Writes `case_random.csv` and `case_worst.csv` into `dir`.
pub fn export_case_study(events: &[Event], k: usize, seed: u64, dir: &Path) -> Result<CaseStudy> {
    let cs = case_study(events, k, seed)?;
    std::fs::create_dir_all(dir)?;
    write_csv(&dir.join("case_random.csv"), &cs.sampled)?;
    write_csv(&dir.join("case_worst.csv"), &cs.worst)?;
    Ok(cs)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityRow {
    pub fraction: f64,
    pub routes: usize,
    pub mape: f64,
}

/// Seeded subset of `round(fraction · n)` routes in their original order;
/// a fraction of 1 returns every route.
pub fn subsample_routes(routes: &[TravelRoute], fraction: f64, seed: u64) -> Result<Vec<TravelRoute>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!("scalability fraction {fraction} outside (0, 1]")));
    }
    let n = routes.len();
    let k = ((n as f64 * fraction).round() as usize).clamp(1.min(n), n);
    if k == n {
        return Ok(routes.to_vec());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample(&mut rng, n, k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| routes[i].clone()).collect())
}

/// Retrains through `eval_fn` on each route fraction and records its MAPE.
pub fn scalability_run(
    train_routes: &[TravelRoute],
    fractions: &[f64],
    seed: u64,
    eval_fn: &mut dyn FnMut(&[TravelRoute]) -> Result<f64>,
) -> Result<Vec<ScalabilityRow>> {
    fractions
        .iter()
        .map(|&f| {
            let subset = subsample_routes(train_routes, f, seed)?;
            Ok(ScalabilityRow {
                fraction: f,
                routes: subset.len(),
                mape: eval_fn(&subset)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(route_id: RouteId, action: usize, y_hat: f64, y_true: f64) -> Event {
        Event {
            route_id,
            t: 0.0,
            action,
            y_hat,
            y_true,
            sigma: 0.0,
        }
    }

    #[test]
    fn metric_hand_case() {
        let m = compute_metrics(&[100.0], &[110.0]).unwrap();
        assert_eq!((m.mae, m.rmse, m.mape), (10.0, 10.0, Some(10.0)));
        let z = compute_metrics(&[5.0, 7.0], &[5.0, 7.0]).unwrap();
        assert_eq!((z.mae, z.rmse, z.mape), (0.0, 0.0, Some(0.0)));
    }

    #[test]
    fn small_truths_leave_mape() {
        let m = compute_metrics(&[0.5, 100.0], &[1.5, 90.0]).unwrap();
        assert_eq!(m.mape_excluded, 1);
        assert_eq!(m.mape, Some(10.0));
        assert!(compute_metrics(&[1.0], &[]).is_err());
    }

    #[test]
    fn aggregates_are_route_means() {
        let events = vec![
            ev(1, REPREDICT, 110.0, 100.0),
            ev(1, LOOKUP, 50.0, 50.0),
            ev(2, REPREDICT, 80.0, 100.0),
        ];
        let r = report_from_events(&events, "x", "y", 30.0).unwrap();
        assert_eq!(r.routes.len(), 2);
        assert!((r.mae - (5.0 + 20.0) / 2.0).abs() < 1e-12);
        assert!((r.mur - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn case_study_truncates() {
        let events = vec![ev(1, REPREDICT, 110.0, 100.0), ev(2, REPREDICT, 150.0, 100.0)];
        let cs = case_study(&events, 5, 1).unwrap();
        assert_eq!(cs.worst.len(), 2);
        assert_eq!(cs.worst[0].route_id, 2);
        assert_eq!(cs.sampled.len(), 2);
        let one = case_study(&events, 1, 1).unwrap();
        assert_eq!((one.sampled.len(), one.worst.len()), (1, 1));
    }

    #[test]
    fn full_fraction_keeps_all_routes() {
        let r = crate::data::TravelRoute::new(
            1,
            0,
            0,
            vec![crate::data::Link {
                segment: 0,
                time_s: 1.0,
            }],
        )
        .unwrap();
        let routes = vec![r.clone(), r.clone(), r];
        assert_eq!(subsample_routes(&routes, 1.0, 3).unwrap().len(), 3);
        assert_eq!(subsample_routes(&routes, 0.34, 3).unwrap().len(), 1);
        assert!(subsample_routes(&routes, 0.0, 3).is_err());
    }
}
