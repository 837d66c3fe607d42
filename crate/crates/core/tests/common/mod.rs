#![allow(dead_code)]

use std::time::Instant;

use ertte::agent::AgentState;
use ertte::config::Config;
use ertte::data::{chronological_split, generate_synthetic_world};
use ertte::eval::{interval_sweep, simulate_online, EvalReport, Policy, SweepRow};
use ertte::features::{FeatureContext, TrafficConditionStore};
use ertte::nn::DecisionNet;
use ertte::predictor::NeuralPredictor;
use ertte::training::{train_agent, train_predictor, PredictionCache, PredictorSamples};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Learned<'a> = Policy<'a, DecisionNet>;

/// Small-model settings that keep a full synthetic run within minutes on
/// one core.
pub fn desk_config(seed: u64) -> Config {
    let mut c = Config::default();
    c.data.seed = seed;
    c.train.seed = seed;
    c.eval.seed = seed;
    c.predictor.d_segment = 8;
    c.predictor.d_time = 4;
    c.predictor.d_traffic = 4;
    c.predictor.d_model = 16;
    c.predictor.heads = 2;
    c.predictor.depth = 1;
    c.train.lr = 3e-3;
    c.train.batch_size = 256;
    c.train.epochs = 6;
    c.train.patience = 2;
    c.train.max_validation_routes = 200;
    c.curriculum.enabled = false;
    c.model.d_segment = 4;
    c.model.d_time = 4;
    c.model.d_traffic = 4;
    c.model.d_weather = 2;
    c.model.d_history = 2;
    c.model.d_model = 16;
    c.model.d_hidden = 16;
    c.model.heads = 2;
    c.model.offline_depth = 1;
    c.model.online_depth = 1;
    c.data.past_slots = 1;
    c.agent.batch_size = 32;
    c.agent.buffer_capacity = 50_000;
    c.agent.target_update = 250;
    c.agent.train_step = 8;
    c.agent.warmup = 500;
    c.agent.epochs = 2;
    c.agent.lr = 1e-3;
    c.agent.epsilon_decay_steps = 20_000;
    c
}

pub struct Outcome {
    pub learned: EvalReport,
    pub always: EvalReport,
    pub sweep: Vec<SweepRow>,
    pub timings: Vec<(&'static str, f64)>,
}

pub fn run_pipeline(cfg: &Config, agent_routes: usize, sweep: &[f64]) -> Outcome {
    let mut timings = Vec::new();
    let mut clock = Instant::now();
    let mut lap = |name: &'static str, timings: &mut Vec<(&'static str, f64)>| {
        timings.push((name, clock.elapsed().as_secs_f64()));
        clock = Instant::now();
    };
    let world = generate_synthetic_world(&cfg.data).unwrap();
    let split = chronological_split(&world.routes, cfg.data.split_ratios);
    let net = &world.network;
    let store = TrafficConditionStore::build(&split.train, cfg.data.slot_minutes, net).unwrap();
    let ctx = FeatureContext::new(net, &store, cfg.data.past_slots);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let model = NeuralPredictor::new(&cfg.predictor, net.n_segments(), &mut rng).unwrap();
    let dt = cfg.train.interval_s;
    let train = PredictorSamples::build(&ctx, &model, &split.train, dt).unwrap();
    let n_val = cfg.train.max_validation_routes.min(split.validation.len()).max(1);
    let val = PredictorSamples::build(&ctx, &model, &split.validation[..n_val], dt).unwrap();
    lap("features", &mut timings);
    let (pred, _) = train_predictor(cfg, model, &train, &val, None, &mut |_| {}).unwrap();
    lap("predictor", &mut timings);
    let agent_set = &split.train[..agent_routes.min(split.train.len())];
    let mut intervals = vec![dt, cfg.eval.interval_s];
    intervals.extend_from_slice(sweep);
    let mut cached = agent_set.to_vec();
    cached.extend_from_slice(&split.test);
    let cache = PredictionCache::build(&ctx, &pred, &cached, &intervals).unwrap();
    lap("cache", &mut timings);
    let trainer = train_agent(cfg, &ctx, agent_set, &cache).unwrap();
    lap("agent", &mut timings);
    let policy: Learned = Policy::Learned(&trainer.agent);
    let (learned, _) = simulate_online(&ctx, &split.test, &policy, &cache, cfg.eval.interval_s).unwrap();
    let always_p: Learned = Policy::AlwaysRepredict;
    let (always, _) = simulate_online(&ctx, &split.test, &always_p, &cache, cfg.eval.interval_s).unwrap();
    let sweep = if sweep.is_empty() {
        Vec::new()
    } else {
        interval_sweep(&ctx, &split.test, &policy, &cache, sweep).unwrap()
    };
    lap("eval", &mut timings);
    let _ = AgentState::n_segments;
    Outcome {
        learned,
        always,
        sweep,
        timings,
    }
}
