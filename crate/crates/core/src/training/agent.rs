use std::path::Path;
use std::sync::Arc;

use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agent::{epsilon_at, AgentState, DqnAgent, QModel};
use crate::config::{Config, RewardConfig, SyncUnit};
use crate::data::{request_times, Request, RouteId, TravelRoute};
use crate::error::{Error, Result};
use crate::features::{FeatureContext, HistoryMark, TrafficConditionStore};
use crate::grad::Mat;
use crate::nn::checkpoint::{load_into_store, read_archive, save_store, write_archive, DType};
use crate::nn::{DecisionNet, Vocab};
use crate::predictor::{InferenceMemory, Predictor};
use crate::replay::{ReplayBuffer, Transition};
use crate::reward::{reward, RewardParts, REPREDICT};

/// Audit record of one training request, with both candidate answers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RequestRecord {
    pub route_id: RouteId,
    pub t: f64,
    pub position: usize,
    pub action: usize,
    /// Set when the memory had no record and re-prediction was forced.
    pub forced: bool,
    pub y_rp: f64,
    /// `None` when nothing was stored yet.
    pub y_dl: Option<f64>,
    pub y_true: f64,
    pub sigma: f64,
    pub reward: f64,
    pub r_performance: f64,
    pub r_efficiency: f64,
    pub r_frequency: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Episode {
    pub transitions: Vec<Transition<AgentState>>,
    pub records: Vec<RequestRecord>,
}

/// Network sized for the data: segment vocabulary, weekly slots and the
/// configured temporal depth.
pub fn build_decision_net<R: Rng + ?Sized>(
    cfg: &Config,
    n_segments: usize,
    store: &TrafficConditionStore,
    rng: &mut R,
) -> Result<DecisionNet> {
    let vocab = Vocab {
        n_segments,
        n_slots: store.slots_per_week() as usize,
        depth: cfg.data.past_slots + 1,
    };
    DecisionNet::new(&cfg.model, vocab, rng)
}

/// Drives one trip as a request stream: at each request the agent picks an
/// action, both candidate answers are computed for the reward, and the
/// memory is refreshed on re-prediction.
#[allow(clippy::too_many_arguments)]
pub fn replay_route_as_episode<M, R>(
    ctx: &FeatureContext<'_>,
    route: &TravelRoute,
    interval_s: f64,
    agent: &DqnAgent<M>,
    predictor: &dyn Predictor,
    memory: &mut InferenceMemory,
    reward_cfg: &RewardConfig,
    epsilon: f64,
    rng: &mut R,
) -> Result<Episode>
where
    M: QModel<State = AgentState>,
    R: Rng + ?Sized,
{
    let times = request_times(route, interval_s);
    let mut history = vec![HistoryMark::None; route.len()];
    let mut last_rp: Option<f64> = None;
    let mut ep = Episode::default();
    let mut states = Vec::with_capacity(times.len());
    let mut actions = Vec::with_capacity(times.len());
    let mut rewards = Vec::with_capacity(times.len());

    for &t in &times {
        let req = Request::new(route, t)?;
        let split = req.split_index;
        let offline = Arc::new(ctx.offline(&req)?);
        let online = ctx.online(&req, &history[..split])?;
        let sigma = last_rp.map_or(0.0, |s| t - s);
        let state = AgentState::new(offline, online, sigma);

        let stored = match memory.lookup(route.route_id, split) {
            Ok(v) => Some(v),
            Err(Error::MemoryMiss(_)) => None,
            Err(e) => return Err(e),
        };
        let action = agent.select_action(&state, epsilon, stored.is_none(), rng)?;
        let preds = predictor.predict(ctx, &req)?;
        let y_rp: f64 = preds.iter().sum();
        let y_true = req.remaining_time_s();
        let parts: RewardParts = reward(reward_cfg, y_rp, stored.unwrap_or(y_rp), y_true, action, sigma)?;
        if action == REPREDICT {
            memory.store(&req, preds)?;
            last_rp = Some(t);
        }
        if split < history.len() {
            let mark = if action == REPREDICT {
                HistoryMark::Repredict
            } else {
                HistoryMark::Lookup
            };
            history[split] = history[split].merge(mark);
        }
        ep.records.push(RequestRecord {
            route_id: route.route_id,
            t,
            position: split,
            action,
            forced: stored.is_none(),
            y_rp,
            y_dl: stored,
            y_true,
            sigma,
            reward: parts.total,
            r_performance: parts.performance,
            r_efficiency: parts.efficiency,
            r_frequency: parts.frequency,
        });
        states.push(state);
        actions.push(action);
        rewards.push(parts.total);
    }
    memory.evict(route.route_id);

    let mut next: Option<AgentState> = None;
    let mut out = Vec::with_capacity(states.len());
    for ((state, action), reward) in states.into_iter().zip(actions).zip(rewards).rev() {
        out.push(Transition {
            state: state.clone(),
            action,
            reward,
            next: next.take(),
        });
        next = Some(state);
    }
    out.reverse();
    ep.transitions = out;
    debug_assert_eq!(ep.transitions.len(), ep.records.len());
    Ok(ep)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentEpochLog {
    pub epoch: usize,
    pub requests: u64,
    pub updates: u64,
    pub syncs: u64,
    pub epsilon: f64,
    pub mean_td: f64,
    pub mean_contrastive: f64,
    pub mean_loss: f64,
    /// Share of re-predictions among this epoch's requests (%).
    pub mur: f64,
    pub mean_reward: f64,
}

/// Counters and RNG streams needed to resume training exactly.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AgentTrainingState {
    pub epochs_done: usize,
    pub requests: u64,
    pub updates: u64,
    pub syncs: u64,
    pub adam_steps: u64,
    pub rng: ChaCha8Rng,
    pub buffer_rng: ChaCha8Rng,
    pub config_hash: String,
    pub log: Vec<AgentEpochLog>,
}

/// Agent training loop with replay and target synchronisation.
#[derive(Clone, Debug)]
pub struct AgentTrainer<M: QModel<State = AgentState>> {
    pub config: Config,
    pub agent: DqnAgent<M>,
    pub buffer: ReplayBuffer<AgentState>,
    pub epochs_done: usize,
    pub requests: u64,
    pub log: Vec<AgentEpochLog>,
    rng: ChaCha8Rng,
}

impl<M: QModel<State = AgentState>> AgentTrainer<M> {
    pub fn new(config: &Config, model: M) -> Result<Self> {
        let a = &config.agent;
        Ok(Self {
            agent: DqnAgent::new(a, model)?,
            buffer: ReplayBuffer::new(a.buffer_capacity, config.train.seed ^ 0x5eed_b0ff)?,
            epochs_done: 0,
            requests: 0,
            log: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(config.train.seed),
            config: config.clone(),
        })
    }

    fn maybe_sync_steps(&mut self) {
        let a = &self.agent.config;
        if a.sync_unit == SyncUnit::Steps && self.agent.updates.is_multiple_of(a.target_update) {
            self.agent.sync_target();
        }
    }

    /// One pass over `routes` in a freshly shuffled order.
    pub fn run_epoch(
        &mut self,
        ctx: &FeatureContext<'_>,
        routes: &[TravelRoute],
        predictor: &dyn Predictor,
        audit: &mut dyn FnMut(&RequestRecord),
    ) -> Result<AgentEpochLog> {
        let acfg = self.agent.config.clone();
        let interval = self.config.train.interval_s;
        let mut order: Vec<usize> = (0..routes.len()).collect();
        order.shuffle(&mut self.rng);
        let mut memory = InferenceMemory::new();
        let (mut td, mut lc, mut tot, mut n_upd) = (0.0, 0.0, 0.0, 0usize);
        let (mut n_req, mut n_rp, mut r_sum) = (0u64, 0u64, 0.0);
        let mut epsilon = epsilon_at(&acfg, self.requests);
        for &ri in &order {
            epsilon = epsilon_at(&acfg, self.requests);
            let ep = replay_route_as_episode(
                ctx,
                &routes[ri],
                interval,
                &self.agent,
                predictor,
                &mut memory,
                &self.config.reward,
                epsilon,
                &mut self.rng,
            )?;
            for rec in &ep.records {
                audit(rec);
                n_rp += (rec.action == REPREDICT) as u64;
                r_sum += rec.reward;
            }
            n_req += ep.records.len() as u64;
            for t in ep.transitions {
                self.buffer.push(t);
                self.requests += 1;
                if self.requests.is_multiple_of(acfg.train_step) && self.buffer.len() >= acfg.warmup.max(1) {
                    let sample = self.buffer.sample(acfg.batch_size)?;
                    let parts = self.agent.update(&sample.items)?;
                    td += parts.td;
                    lc += parts.contrastive;
                    tot += parts.total;
                    n_upd += 1;
                    self.maybe_sync_steps();
                }
            }
        }
        self.epochs_done += 1;
        if acfg.sync_unit == SyncUnit::Epochs && (self.epochs_done as u64).is_multiple_of(acfg.target_update) {
            self.agent.sync_target();
        }
        let k = n_upd.max(1) as f64;
        let log = AgentEpochLog {
            epoch: self.epochs_done,
            requests: self.requests,
            updates: self.agent.updates,
            syncs: self.agent.syncs,
            epsilon,
            mean_td: td / k,
            mean_contrastive: lc / k,
            mean_loss: tot / k,
            mur: 100.0 * n_rp as f64 / n_req.max(1) as f64,
            mean_reward: r_sum / n_req.max(1) as f64,
        };
        info!(
            "agent epoch {}: {} updates, loss {:.4}, train MUR {:.1}%, eps {:.3}",
            log.epoch, n_upd, log.mean_loss, log.mur, log.epsilon
        );
        self.log.push(log.clone());
        Ok(log)
    }

    /// Runs the remaining epochs up to `agent.epochs`.
    pub fn train(
        &mut self,
        ctx: &FeatureContext<'_>,
        routes: &[TravelRoute],
        predictor: &dyn Predictor,
        on_epoch: &mut dyn FnMut(&AgentTrainer<M>, &AgentEpochLog) -> Result<()>,
    ) -> Result<()> {
        if routes.is_empty() {
            return Err(Error::Data("no training routes".into()));
        }
        while self.epochs_done < self.config.agent.epochs {
            let log = self.run_epoch(ctx, routes, predictor, &mut |_| {})?;
            on_epoch(self, &log)?;
        }
        Ok(())
    }

    pub fn training_state(&self) -> AgentTrainingState {
        AgentTrainingState {
            epochs_done: self.epochs_done,
            requests: self.requests,
            updates: self.agent.updates,
            syncs: self.agent.syncs,
            adam_steps: self.agent.optimizer.steps(),
            rng: self.rng.clone(),
            buffer_rng: self.buffer.rng_state().clone(),
            config_hash: self.config.content_hash(),
            log: self.log.clone(),
        }
    }

    /// Writes everything needed for an exact resume into `dir`.
    pub fn save_state(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        save_store(&dir.join("main.params"), self.agent.main.params(), DType::F64)?;
        save_store(&dir.join("target.params"), self.agent.target.params(), DType::F64)?;
        let (m, v) = self.agent.optimizer.moments();
        let names: Vec<String> = self
            .agent
            .main
            .params()
            .iter()
            .flat_map(|(n, _)| [format!("m/{n}"), format!("v/{n}")])
            .collect();
        let tensors: Vec<(&str, &Mat)> = names
            .iter()
            .map(String::as_str)
            .zip(m.iter().zip(v.iter()).flat_map(|(a, b)| [a, b]))
            .collect();
        write_archive(&dir.join("adam.params"), &tensors, DType::F64)?;
        self.buffer.dump(&dir.join("replay.bin"))?;
        let state = serde_json::to_string_pretty(&self.training_state())?;
        std::fs::write(dir.join("training_state.json"), state)?;
        Ok(())
    }

    /// Restores a trainer saved by [`save_state`](Self::save_state); `model`
    /// supplies the architecture.
    pub fn resume(config: &Config, model: M, dir: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(dir.join("training_state.json"))?;
        let st: AgentTrainingState = serde_json::from_str(&text)?;
        if st.config_hash != config.content_hash() {
            return Err(Error::State(format!(
                "{}: saved with a different configuration",
                dir.display()
            )));
        }
        let mut tr = Self::new(config, model)?;
        load_into_store(&dir.join("main.params"), tr.agent.main.params_mut())?;
        load_into_store(&dir.join("target.params"), tr.agent.target.params_mut())?;
        let adam = read_archive(&dir.join("adam.params"))?;
        let n = tr.agent.main.params().len();
        if adam.len() != 2 * n {
            return Err(Error::Consistency("optimizer state does not match the network".into()));
        }
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for pair in adam.chunks(2) {
            m.push(pair[0].1.clone());
            v.push(pair[1].1.clone());
        }
        tr.agent.optimizer.restore(st.adam_steps, m, v);
        tr.agent.updates = st.updates;
        tr.agent.syncs = st.syncs;
        let mut buffer = ReplayBuffer::restore(&dir.join("replay.bin"), 0)?;
        buffer.set_rng_state(st.buffer_rng);
        tr.buffer = buffer;
        tr.rng = st.rng;
        tr.epochs_done = st.epochs_done;
        tr.requests = st.requests;
        tr.log = st.log;
        Ok(tr)
    }
}

/// Trains a fresh decision network against a frozen predictor.
pub fn train_agent(
    cfg: &Config,
    ctx: &FeatureContext<'_>,
    routes: &[TravelRoute],
    predictor: &dyn Predictor,
) -> Result<AgentTrainer<DecisionNet>> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed.wrapping_add(1));
    let net = build_decision_net(cfg, ctx.network.n_segments(), ctx.store, &mut rng)?;
    let mut tr = AgentTrainer::new(cfg, net)?;
    tr.train(ctx, routes, predictor, &mut |_, _| Ok(()))?;
    Ok(tr)
}

/// Greedy action of a trained agent; lookups are impossible on a miss.
pub fn greedy_action<M: QModel<State = AgentState>>(
    agent: &DqnAgent<M>,
    state: &AgentState,
    memory_miss: bool,
) -> Result<usize> {
    if memory_miss {
        Ok(REPREDICT)
    } else {
        agent.greedy(state)
    }
}
