use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::{encode, fuse, info_nce, EncoderBlock, Linear};
use crate::agent::AgentState;
use crate::config::ModelConfig;
use crate::data::WEATHER_CATEGORIES;
use crate::error::{Error, Result};
use crate::features::{HistoryMark, SPATIAL_DIM};
use crate::grad::{Mat, ParamId, ParamStore, Tape, Var};

/// Vocabulary sizes and sequence depth fixed by the dataset.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub n_segments: usize,
    pub n_slots: usize,
    /// Number of slots per temporal feature, `p + 1`.
    pub depth: usize,
}

const OFFLINE_FLAGS: usize = 3;
const ONLINE_NUMERIC: usize = 3;

#[derive(Clone, Debug)]
pub struct Embeddings {
    pub segment: ParamId,
    pub timeslot: ParamId,
    pub traffic: Linear,
    pub weather: ParamId,
    pub history: ParamId,
    pub offline_dense: Linear,
    pub online_dense: Linear,
    pub start: ParamId,
}

/// Forward outputs for one state.
#[derive(Clone, Copy, Debug)]
pub struct StateOutputs {
    /// 1×2 Q-values, column 0 = lookup, column 1 = re-predict.
    pub q: Var,
    /// 1×d_p projected online representation.
    pub online_proj: Var,
    /// 1×d_p projected offline representation.
    pub offline_proj: Var,
}

/// Main value network: feature embedding, offline and online encoders,
/// contrastive projections, fusion attention and the Q head.
#[derive(Clone, Debug)]
pub struct DecisionNet {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub emb: Embeddings,
    pub offline_blocks: Vec<EncoderBlock>,
    pub online_blocks: Vec<EncoderBlock>,
    pub g_n: Linear,
    pub g_f: Linear,
    pub head: Linear,
}

impl DecisionNet {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, vocab: Vocab, rng: &mut R) -> Result<Self> {
        if !(config.temperature > 0.0) {
            return Err(Error::Config("model.temperature: must be > 0".into()));
        }
        if vocab.depth == 0 {
            return Err(Error::Config("data.past_slots: temporal depth must be ≥ 1".into()));
        }
        let std = config.init_std;
        let d = config.d_model;
        let mut store = ParamStore::new();
        let segment = store.add_normal("emb/segment", vocab.n_segments, config.d_segment, std, rng);
        let timeslot = store.add_normal("emb/timeslot", vocab.n_slots, config.d_time, std, rng);
        let traffic = Linear::new(&mut store, "emb/traffic", 4, config.d_traffic, std, true, rng);
        let weather = store.add_normal("emb/weather", WEATHER_CATEGORIES as usize, config.d_weather, std, rng);
        let history = store.add_normal("emb/history", HistoryMark::COUNT, config.d_history, std, rng);
        let d_off = config.d_segment
            + SPATIAL_DIM
            + vocab.depth * (config.d_time + config.d_traffic)
            + config.d_weather
            + OFFLINE_FLAGS;
        let offline_dense = Linear::new(&mut store, "emb/offline_dense", d_off, d, std, true, rng);
        let online_dense = Linear::new(
            &mut store,
            "emb/online_dense",
            ONLINE_NUMERIC + config.d_history,
            d,
            std,
            true,
            rng,
        );
        let start = store.add_normal("emb/start", 1, d, std, rng);
        let emb = Embeddings {
            segment,
            timeslot,
            traffic,
            weather,
            history,
            offline_dense,
            online_dense,
            start,
        };
        let mut offline_blocks = Vec::new();
        for k in 0..config.offline_depth {
            offline_blocks.push(EncoderBlock::new(
                &mut store,
                &format!("offline/block{k}"),
                d,
                config.heads,
                std,
                rng,
            )?);
        }
        let mut online_blocks = Vec::new();
        for k in 0..config.online_depth {
            online_blocks.push(EncoderBlock::new(
                &mut store,
                &format!("online/block{k}"),
                d,
                config.heads,
                std,
                rng,
            )?);
        }
        let dp = config.projection_dim();
        let g_n = Linear::new(&mut store, "contrastive/g_n", d, dp, std, false, rng);
        let g_f = Linear::new(&mut store, "contrastive/g_f", d, dp, std, false, rng);
        let head = Linear::new(&mut store, "head", 2 * d, 2, std, true, rng);
        Ok(Self {
            config: config.clone(),
            vocab,
            store,
            emb,
            offline_blocks,
            online_blocks,
            g_n,
            g_f,
            head,
        })
    }

    fn check_state(&self, state: &AgentState) -> Result<()> {
        let off = &state.offline;
        if off.is_empty() {
            return Err(Error::Data("state has no route segments".into()));
        }
        if let Some(&s) = off.segments.iter().find(|&&s| s as usize >= self.vocab.n_segments) {
            return Err(Error::Data(format!("segment {s} is outside the embedding vocabulary")));
        }
        if off.depth() != self.vocab.depth {
            return Err(Error::Data(format!(
                "temporal depth {} does not match the network's {}",
                off.depth(),
                self.vocab.depth
            )));
        }
        if let Some(&s) = off.temporal[0].iter().find(|&&s| s as usize >= self.vocab.n_slots) {
            return Err(Error::Data(format!(
                "time slot {s} is outside the embedding vocabulary"
            )));
        }
        if off.background.weather >= WEATHER_CATEGORIES {
            return Err(Error::Data("weather code out of range".into()));
        }
        Ok(())
    }

    /// Dense offline (n×d) and online (max(i_t,1)×d) sequences.
    pub fn embed_state(&self, tape: &mut Tape<'_>, state: &AgentState) -> Result<(Var, Var)> {
        self.check_state(state)?;
        let off = &state.offline;
        let n = off.len();
        let seg_rows: Vec<usize> = off.segments.iter().map(|&s| s as usize).collect();
        let h_s = tape.gather(self.emb.segment, &seg_rows);
        let spatial = tape.input(Mat::from_shape_fn((n, SPATIAL_DIM), |(i, j)| off.spatial[i][j]));

        // every segment shares the request's slots
        let slots: Vec<usize> = off.temporal[0].iter().map(|&s| s as usize).collect();
        let mut parts = vec![h_s, spatial];
        for &slot in &slots {
            let row = tape.gather(self.emb.timeslot, &[slot]);
            parts.push(tape.repeat_rows(row, n));
        }
        for k in 0..slots.len() {
            let x = tape.input(Mat::from_shape_fn((n, 4), |(i, j)| {
                off.traffic[i][k].as_array()[j] / 10.0
            }));
            parts.push(self.emb.traffic.forward(tape, x));
        }
        let w = tape.gather(self.emb.weather, &[off.background.weather as usize]);
        parts.push(tape.repeat_rows(w, n));
        let bg = off.background;
        let flags = tape.input(Mat::from_shape_fn((n, OFFLINE_FLAGS), |(i, j)| match j {
            0 => bg.holiday as u8 as f64,
            1 => bg.rush_hour as u8 as f64,
            _ => (i < state.position) as u8 as f64,
        }));
        parts.push(flags);
        let x = tape.concat_cols(&parts);
        let hx = self.emb.offline_dense.forward(tape, x);
        let hx = tape.relu(hx);

        let on = &state.online;
        let hf = if on.is_empty() {
            tape.param(self.emb.start)
        } else {
            let m = on.len();
            let sigma = state.sigma / 60.0;
            let numeric = tape.input(Mat::from_shape_fn((m, ONLINE_NUMERIC), |(i, j)| match j {
                0 => on.speeds[i] / 10.0,
                1 => on.log_ratio[i],
                _ => sigma,
            }));
            let marks: Vec<usize> = on.history.iter().map(|h| h.code()).collect();
            let h_h = tape.gather(self.emb.history, &marks);
            let x = tape.concat_cols(&[numeric, h_h]);
            self.emb.online_dense.forward(tape, x)
        };
        Ok((hx, hf))
    }

    pub fn forward(&self, tape: &mut Tape<'_>, state: &AgentState) -> Result<StateOutputs> {
        let (hx, hf) = self.embed_state(tape, state)?;
        let off = encode(&self.offline_blocks, tape, hx);
        let on = encode(&self.online_blocks, tape, hf);
        let on_pool = tape.mean_rows(on);
        let off_pool = tape.mean_rows(off);
        let online_proj = self.g_n.forward(tape, on_pool);
        let online_proj = tape.l2_normalize_rows(online_proj);
        let offline_proj = self.g_f.forward(tape, off_pool);
        let offline_proj = tape.l2_normalize_rows(offline_proj);
        let (hc, _) = fuse(tape, on, off);
        let pooled = tape.mean_rows(hc);
        let pooled = tape.concat_cols(&[pooled, on_pool]);
        let q = self.head.forward(tape, pooled);
        Ok(StateOutputs {
            q,
            online_proj,
            offline_proj,
        })
    }

    /// Q-values for one state: `[lookup, re-predict]`.
    pub fn q_values(&self, state: &AgentState) -> Result<[f64; 2]> {
        let mut tape = Tape::new(&self.store);
        let out = self.forward(&mut tape, state)?;
        let q = tape.value(out.q);
        Ok([q[[0, 0]], q[[0, 1]]])
    }

    /// Contrastive loss over the batch's projected pairs.
    pub fn contrastive_loss(&self, tape: &mut Tape<'_>, outs: &[StateOutputs]) -> Var {
        let on: Vec<Var> = outs.iter().map(|o| o.online_proj).collect();
        let off: Vec<Var> = outs.iter().map(|o| o.offline_proj).collect();
        let on = tape.concat_rows(&on);
        let off = tape.concat_rows(&off);
        info_nce(tape, on, off, self.config.temperature)
    }
}
