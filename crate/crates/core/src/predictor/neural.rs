use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Predictor;
use crate::config::PredictorConfig;
use crate::data::calendar::minutes_since_monday;
use crate::data::{Request, WEATHER_CATEGORIES};
use crate::error::{Error, Result};
use crate::features::{spatial_vector, weekly_slot, FeatureContext, SPATIAL_DIM};
use crate::grad::{Adam, Mat, ParamId, ParamStore, Tape, Var};
use crate::nn::{encode, EncoderBlock, Linear};

const HOURS_PER_WEEK: usize = 168;
const D_WEATHER: usize = 4;
/// Spatial attributes, reference speed, calendar flags, driver summary
/// and position within the remaining route.
const NUMERIC: usize = SPATIAL_DIM + 1 + 2 + 4 + 2;
/// Number of most recent traveled segments in the short-term driver ratio.
const RECENT: usize = 3;

/// Parameter-independent model inputs for one request.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictorInput {
    pub segments: Vec<usize>,
    pub hours: Vec<usize>,
    pub weather: usize,
    /// n×NUMERIC numeric features.
    pub numeric: Mat,
    /// n×4 historical statistics at the request slot, scaled by 1/10.
    pub traffic: Mat,
    /// `length / reference speed` per segment: the output scale.
    pub scale: Vec<f64>,
}

impl PredictorInput {
    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub train_loss: Vec<f64>,
    pub validation_mape: Vec<f64>,
    pub stopped_early: bool,
}

/// Compact attention travel-time model: embeddings, encoder blocks over the
/// remaining segments and a per-segment head with an exponential link.
#[derive(Clone, Debug)]
pub struct NeuralPredictor {
    pub config: PredictorConfig,
    pub n_segments: usize,
    pub store: ParamStore,
    segment: ParamId,
    hour: ParamId,
    weather: ParamId,
    traffic: Linear,
    dense: Linear,
    blocks: Vec<EncoderBlock>,
    head: Linear,
    trained: bool,
}

impl NeuralPredictor {
    pub fn new<R: Rng + ?Sized>(config: &PredictorConfig, n_segments: usize, rng: &mut R) -> Result<Self> {
        let std = config.init_std;
        let d = config.d_model;
        let mut store = ParamStore::new();
        let segment = store.add_normal("pred/segment", n_segments, config.d_segment, std, rng);
        let hour = store.add_normal("pred/hour", HOURS_PER_WEEK, config.d_time, std, rng);
        let weather = store.add_normal("pred/weather", WEATHER_CATEGORIES as usize, D_WEATHER, std, rng);
        let traffic = Linear::new(&mut store, "pred/traffic", 4, config.d_traffic, std, true, rng);
        let d_in = config.d_segment + config.d_time + D_WEATHER + config.d_traffic + NUMERIC;
        let dense = Linear::new(&mut store, "pred/dense", d_in, d, std, true, rng);
        let mut blocks = Vec::new();
        for k in 0..config.depth {
            blocks.push(EncoderBlock::new(
                &mut store,
                &format!("pred/block{k}"),
                d,
                config.heads,
                std,
                rng,
            )?);
        }
        let head = Linear::new(&mut store, "pred/head", d, 1, std, true, rng);
        Ok(Self {
            config: config.clone(),
            n_segments,
            store,
            segment,
            hour,
            weather,
            traffic,
            dense,
            blocks,
            head,
            trained: false,
        })
    }

    pub fn is_trained(&self) -> bool {
        self.trained
    }

    pub fn mark_trained(&mut self) {
        self.trained = true;
    }

    pub fn head(&self) -> &Linear {
        &self.head
    }

    /// Builds the model inputs for the request's remaining segments.
    pub fn prepare(&self, ctx: &FeatureContext<'_>, request: &Request<'_>) -> Result<PredictorInput> {
        let route = request.route;
        let remaining = request.remaining();
        let n = remaining.len();
        let traveled = request.traveled();
        let mut log_ratios = Vec::with_capacity(traveled.len());
        for l in traveled {
            let len = ctx.network.segment(l.segment)?.length_m;
            log_ratios.push((len / l.time_s / ctx.store.reference_speed(l.segment)).ln());
        }
        let mean = |xs: &[f64]| {
            if xs.is_empty() {
                0.0
            } else {
                xs.iter().sum::<f64>() / xs.len() as f64
            }
        };
        let driver_all = mean(&log_ratios);
        let driver_recent = mean(&log_ratios[log_ratios.len().saturating_sub(RECENT)..]);
        let has_traveled = (!traveled.is_empty()) as u8 as f64;
        let frac = request.split_index as f64 / route.len() as f64;
        let now = request.wall_clock();
        let slot = weekly_slot(now, ctx.store.slot_minutes());
        let bg = route.background;

        let mut out = PredictorInput {
            segments: Vec::with_capacity(n),
            hours: Vec::with_capacity(n),
            weather: bg.weather as usize,
            numeric: Mat::zeros((n, NUMERIC)),
            traffic: Mat::zeros((n, 4)),
            scale: Vec::with_capacity(n),
        };
        let mut offset = 0.0;
        for (k, l) in remaining.iter().enumerate() {
            if l.segment as usize >= self.n_segments {
                return Err(Error::Data(format!(
                    "segment {} is outside the embedding vocabulary",
                    l.segment
                )));
            }
            let len = ctx.network.segment(l.segment)?.length_m;
            let v_ref = ctx.store.reference_speed(l.segment);
            let entry = now + offset as i64;
            out.segments.push(l.segment as usize);
            out.hours
                .push(((minutes_since_monday(entry) / 60) as usize) % HOURS_PER_WEEK);
            let sp = spatial_vector(ctx.network, l.segment)?;
            let mut row = out.numeric.row_mut(k);
            for (j, v) in sp.iter().enumerate() {
                row[j] = *v;
            }
            let base = SPATIAL_DIM;
            row[base] = (v_ref / 10.0).ln();
            row[base + 1] = bg.holiday as u8 as f64;
            row[base + 2] = bg.rush_hour as u8 as f64;
            row[base + 3] = driver_all;
            row[base + 4] = driver_recent;
            row[base + 5] = has_traveled;
            row[base + 6] = frac;
            row[base + 7] = k as f64 / 30.0;
            row[base + 8] = offset / 600.0;
            let stats = ctx.store.get(l.segment, slot).as_array();
            for j in 0..4 {
                out.traffic[[k, j]] = stats[j] / 10.0;
            }
            out.scale.push(len / v_ref);
            offset += len / v_ref;
        }
        Ok(out)
    }

    /// Per-segment predicted seconds for every row of the batch, stacked
    /// (R×1, R = total remaining segments).
    pub fn forward_batch(&self, tape: &mut Tape<'_>, batch: &[&PredictorInput]) -> Var {
        let rows: usize = batch.iter().map(|b| b.len()).sum();
        let mut segs = Vec::with_capacity(rows);
        let mut hours = Vec::with_capacity(rows);
        let mut weather = Vec::with_capacity(rows);
        let mut numeric = Mat::zeros((rows, NUMERIC));
        let mut traffic = Mat::zeros((rows, 4));
        let mut scale = Mat::zeros((rows, 1));
        let mut r = 0;
        for b in batch {
            segs.extend_from_slice(&b.segments);
            hours.extend_from_slice(&b.hours);
            weather.extend(std::iter::repeat_n(b.weather, b.len()));
            for k in 0..b.len() {
                numeric.row_mut(r).assign(&b.numeric.row(k));
                traffic.row_mut(r).assign(&b.traffic.row(k));
                scale[[r, 0]] = b.scale[k];
                r += 1;
            }
        }
        let h_s = tape.gather(self.segment, &segs);
        let h_t = tape.gather(self.hour, &hours);
        let h_w = tape.gather(self.weather, &weather);
        let tr = tape.input(traffic);
        let h_st = self.traffic.forward(tape, tr);
        let num = tape.input(numeric);
        let x = tape.concat_cols(&[h_s, h_t, h_w, h_st, num]);
        let h = self.dense.forward(tape, x);
        let mut h = tape.relu(h);
        if !self.blocks.is_empty() {
            let mut parts = Vec::with_capacity(batch.len());
            let mut start = 0;
            for b in batch {
                let part = if batch.len() == 1 {
                    h
                } else {
                    tape.slice_rows(h, start, b.len())
                };
                parts.push(encode(&self.blocks, tape, part));
                start += b.len();
            }
            h = if parts.len() == 1 {
                parts[0]
            } else {
                tape.concat_rows(&parts)
            };
        }
        let z = self.head.forward(tape, h);
        let e = tape.exp(z);
        let s = tape.input(scale);
        tape.mul(e, s)
    }

    /// Mean absolute per-segment error of the batch.
    pub fn batch_loss(&self, tape: &mut Tape<'_>, batch: &[(&PredictorInput, &[f64])]) -> Var {
        let inputs: Vec<&PredictorInput> = batch.iter().map(|(x, _)| *x).collect();
        let pred = self.forward_batch(tape, &inputs);
        let y: Vec<f64> = batch.iter().flat_map(|(_, y)| y.iter().copied()).collect();
        let y = tape.input(Mat::from_shape_vec((y.len(), 1), y).expect("target length"));
        let diff = tape.sub(pred, y);
        let a = tape.abs(diff);
        tape.mean_all(a)
    }

    /// One optimiser step; returns the batch loss before the update.
    pub fn train_step(&mut self, opt: &mut Adam, batch: &[(&PredictorInput, &[f64])], grad_clip: f64) -> f64 {
        let (loss, mut grads) = {
            let mut tape = Tape::new(&self.store);
            let l = self.batch_loss(&mut tape, batch);
            (tape.scalar(l), tape.backward(l))
        };
        if grad_clip > 0.0 {
            grads.clip_global_norm(grad_clip);
        }
        opt.step(&mut self.store, &grads);
        loss
    }

    /// Forward pass without the trained check; used during training.
    pub fn predict_input(&self, input: &PredictorInput) -> Vec<f64> {
        if input.is_empty() {
            return Vec::new();
        }
        let mut tape = Tape::new(&self.store);
        let out = self.forward_batch(&mut tape, &[input]);
        tape.value(out).iter().copied().collect()
    }

    pub fn predict_inputs(&self, inputs: &[&PredictorInput]) -> Vec<Vec<f64>> {
        let nonempty: Vec<&PredictorInput> = inputs.iter().copied().filter(|i| !i.is_empty()).collect();
        let mut flat = if nonempty.is_empty() {
            Vec::new()
        } else {
            let mut tape = Tape::new(&self.store);
            let out = self.forward_batch(&mut tape, &nonempty);
            tape.value(out).iter().copied().collect::<Vec<_>>()
        }
        .into_iter();
        inputs
            .iter()
            .map(|i| (0..i.len()).map(|_| flat.next().expect("row count")).collect())
            .collect()
    }

    pub fn dims(&self) -> serde_json::Value {
        serde_json::json!({
            "n_segments": self.n_segments,
            "d_segment": self.config.d_segment,
            "d_time": self.config.d_time,
            "d_traffic": self.config.d_traffic,
            "d_model": self.config.d_model,
            "heads": self.config.heads,
            "depth": self.config.depth,
        })
    }
}

impl Predictor for NeuralPredictor {
    fn name(&self) -> &str {
        "neural"
    }

    fn predict(&self, ctx: &FeatureContext<'_>, request: &Request<'_>) -> Result<Vec<f64>> {
        if !self.trained {
            return Err(Error::State("neural predictor has not been trained".into()));
        }
        let input = self.prepare(ctx, request)?;
        Ok(self.predict_input(&input))
    }
}
