use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::curriculum::{difficulty, enumerate_samples, EpochPlan, MetasetGrid, Scheduler, TrainingSample};
use crate::data::{Request, TravelRoute};
use crate::error::{Error, Result};
use crate::features::FeatureContext;
use crate::grad::{Adam, AdamConfig};
use crate::predictor::{NeuralPredictor, PredictorInput, TrainReport};

/// Prepared inputs and targets for every request of a route set.
#[derive(Clone, Debug, Default)]
pub struct PredictorSamples {
    pub samples: Vec<TrainingSample>,
    pub inputs: Vec<PredictorInput>,
    /// Per-segment remaining travel times.
    pub targets: Vec<Vec<f64>>,
}

impl PredictorSamples {
    pub fn build(
        ctx: &FeatureContext<'_>,
        model: &NeuralPredictor,
        routes: &[TravelRoute],
        interval_s: f64,
    ) -> Result<Self> {
        let samples = enumerate_samples(routes, ctx.network, interval_s)?;
        let prepared = samples
            .par_iter()
            .map(|s| {
                let req = Request::new(&routes[s.route_index], s.t)?;
                let targets = req.remaining().iter().map(|l| l.time_s).collect::<Vec<_>>();
                Ok((model.prepare(ctx, &req)?, targets))
            })
            .collect::<Result<Vec<_>>>()?;
        let (inputs, targets) = prepared.into_iter().unzip();
        Ok(Self {
            samples,
            inputs,
            targets,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn truths(&self) -> Vec<f64> {
        self.targets.iter().map(|t| t.iter().sum()).collect()
    }
}

/// Remaining-total estimates for every sample.
pub fn predict_totals(model: &NeuralPredictor, set: &PredictorSamples) -> Vec<f64> {
    let idx: Vec<usize> = (0..set.len()).collect();
    idx.par_chunks(256)
        .flat_map_iter(|chunk| {
            let inputs: Vec<&PredictorInput> = chunk.iter().map(|&i| &set.inputs[i]).collect();
            model.predict_inputs(&inputs).into_iter().map(|v| v.iter().sum::<f64>())
        })
        .collect()
}

/// MAPE (%) on remaining totals, skipping truths under one second.
pub fn validation_mape(model: &NeuralPredictor, set: &PredictorSamples) -> f64 {
    let pred = predict_totals(model, set);
    let (mut sum, mut n) = (0.0, 0usize);
    for (y, p) in set.truths().into_iter().zip(pred) {
        if y >= 1.0 {
            sum += (p - y).abs() / y;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        100.0 * sum / n as f64
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct PredictorEpochLog {
    pub epoch: usize,
    pub circle: usize,
    pub pool: usize,
    pub train_loss: f64,
    pub validation_mape: f64,
}

/// Trains `model` on `train`, uniformly shuffled or following the
/// curriculum of `grid`, keeping the parameters with the best validation
/// MAPE.
pub fn train_predictor(
    cfg: &Config,
    mut model: NeuralPredictor,
    train: &PredictorSamples,
    validation: &PredictorSamples,
    grid: Option<&MetasetGrid>,
    on_epoch: &mut dyn FnMut(&PredictorEpochLog),
) -> Result<(NeuralPredictor, TrainReport)> {
    let tc = &cfg.train;
    let mut scheduler = if cfg.curriculum.enabled {
        let grid = grid.ok_or_else(|| Error::State("curriculum training needs a metaset grid".into()))?;
        if !grid.is_scored() {
            return Err(Error::State("curriculum training needs difficulty scores".into()));
        }
        if grid.n_samples() != train.len() {
            return Err(Error::Consistency(
                "metaset grid does not match the training samples".into(),
            ));
        }
        Some((grid, Scheduler::new(grid.n, grid.m, &cfg.curriculum)?))
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut opt = Adam::new(AdamConfig::with_lr(tc.lr), &model.store);
    let mut report = TrainReport::default();
    let mut best = (f64::INFINITY, model.store.clone());
    let mut stale = 0usize;

    for epoch in 1..=tc.epochs {
        let (plan, mut pool): (Option<EpochPlan>, Vec<usize>) = match &mut scheduler {
            Some((grid, s)) => match s.next_epoch() {
                Some(p) => {
                    let pool = grid.released(&p.cells, p.released_fraction);
                    (Some(p), pool)
                }
                None => break,
            },
            None => (None, (0..train.len()).collect()),
        };
        if pool.is_empty() {
            return Err(Error::Schedule(format!("epoch {epoch}: empty training pool")));
        }
        pool.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in pool.chunks(tc.batch_size) {
            let batch: Vec<(&PredictorInput, &[f64])> = chunk
                .iter()
                .filter(|&&i| !train.inputs[i].is_empty())
                .map(|&i| (&train.inputs[i], train.targets[i].as_slice()))
                .collect();
            if batch.is_empty() {
                continue;
            }
            loss_sum += model.train_step(&mut opt, &batch, tc.grad_clip);
            batches += 1;
        }
        let train_loss = loss_sum / batches.max(1) as f64;
        let val = validation_mape(&model, validation);
        report.epochs = epoch;
        report.train_loss.push(train_loss);
        report.validation_mape.push(val);
        let log = PredictorEpochLog {
            epoch,
            circle: plan.as_ref().map_or(0, |p| p.circle),
            pool: pool.len(),
            train_loss,
            validation_mape: val,
        };
        info!(
            "predictor epoch {epoch}: pool {} loss {train_loss:.3} val MAPE {val:.3}",
            pool.len()
        );
        on_epoch(&log);

        if val < best.0 - tc.tolerance {
            best = (val, model.store.clone());
            stale = 0;
        } else {
            stale += 1;
        }
        match &mut scheduler {
            Some((_, s)) => {
                s.report_validation(val);
            }
            None if stale >= tc.patience => {
                report.stopped_early = true;
                break;
            }
            None => {}
        }
    }
    if !best.0.is_finite() {
        warn!("no validation improvement recorded; keeping final parameters");
    } else {
        model.store = best.1;
    }
    model.mark_trained();
    Ok((model, report))
}

/// The expert used for difficulty scoring: uniform training, no curriculum.
pub fn train_expert(
    cfg: &Config,
    model: NeuralPredictor,
    train: &PredictorSamples,
    validation: &PredictorSamples,
) -> Result<(NeuralPredictor, TrainReport)> {
    let mut c = cfg.clone();
    c.curriculum.enabled = false;
    train_predictor(&c, model, train, validation, None, &mut |_| {})
}

/// `(mae, mape, mu)` of the expert on every sample's remaining total.
pub fn score_difficulty(expert: &NeuralPredictor, set: &PredictorSamples) -> Vec<(f64, f64, f64)> {
    predict_totals(expert, set)
        .into_iter()
        .zip(set.truths())
        .map(|(p, y)| difficulty(y, p))
        .collect()
}

/// Full predictor fit on `train` routes: features, then either uniform
/// training or expert scoring followed by curriculum training.
pub fn fit_predictor(
    cfg: &Config,
    ctx: &FeatureContext<'_>,
    train: &[TravelRoute],
    validation: &[TravelRoute],
) -> Result<(NeuralPredictor, TrainReport)> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let model = NeuralPredictor::new(&cfg.predictor, ctx.network.n_segments(), &mut rng)?;
    let dt = cfg.train.interval_s;
    let train_set = PredictorSamples::build(ctx, &model, train, dt)?;
    let val_routes = capped(validation, cfg.train.max_validation_routes);
    let val_set = PredictorSamples::build(ctx, &model, val_routes, dt)?;
    if !cfg.curriculum.enabled {
        return train_predictor(cfg, model, &train_set, &val_set, None, &mut |_| {});
    }
    let (expert, _) = train_expert(cfg, model.clone(), &train_set, &val_set)?;
    let mut grid = crate::curriculum::partition(&train_set.samples, cfg.curriculum.subsets, cfg.curriculum.metasets)?;
    grid.apply_scores(score_difficulty(&expert, &train_set))?;
    train_predictor(cfg, model, &train_set, &val_set, Some(&grid), &mut |_| {})
}

/// The first `cap` routes, or all of them when `cap` is 0.
pub fn capped(routes: &[TravelRoute], cap: usize) -> &[TravelRoute] {
    if cap == 0 {
        routes
    } else {
        &routes[..cap.min(routes.len())]
    }
}
