use std::collections::BTreeMap;

use ertte::agent::DqnAgent;
use ertte::config::Config;
use ertte::curriculum::{enumerate_samples, partition};
use ertte::data::{chronological_split, generate_synthetic_world, request_times, Request, SyntheticWorld, TravelRoute};
use ertte::eval::{case_study, read_events, report_from_events, simulate_online, write_events, Policy};
use ertte::features::{weekly_slot, FeatureContext, HistoryMark, TrafficConditionStore};
use ertte::nn::DecisionNet;
use ertte::predictor::{avg_predict, AvgPredictor, InferenceMemory, NeuralPredictor};
use ertte::reward::{LOOKUP, REPREDICT};
use ertte::training::{
    build_decision_net, replay_route_as_episode, score_difficulty, train_expert, train_predictor, validation_mape,
    AgentTrainer, PredictorSamples,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Fixture {
    cfg: Config,
    world: SyntheticWorld,
    train: Vec<TravelRoute>,
    test: Vec<TravelRoute>,
    store: TrafficConditionStore,
}

impl Fixture {
    fn new(seed: u64) -> Self {
        let mut cfg = Config::default();
        cfg.data.seed = seed;
        cfg.train.seed = seed;
        cfg.data.grid_size = 6;
        cfg.data.n_routes = 150;
        cfg.data.n_days = 5;
        cfg.data.past_slots = 1;
        cfg.model.d_segment = 4;
        cfg.model.d_time = 2;
        cfg.model.d_traffic = 2;
        cfg.model.d_weather = 2;
        cfg.model.d_history = 2;
        cfg.model.d_model = 8;
        cfg.model.d_hidden = 8;
        cfg.model.d_projection = 4;
        cfg.model.heads = 2;
        cfg.model.offline_depth = 1;
        cfg.model.online_depth = 1;
        cfg.agent.batch_size = 16;
        cfg.agent.warmup = 64;
        cfg.agent.buffer_capacity = 4000;
        cfg.agent.target_update = 40;
        cfg.agent.epochs = 2;
        cfg.agent.lr = 1e-3;
        cfg.predictor.d_segment = 4;
        cfg.predictor.d_time = 2;
        cfg.predictor.d_traffic = 2;
        cfg.predictor.d_model = 8;
        cfg.predictor.heads = 2;
        cfg.predictor.depth = 1;
        cfg.train.epochs = 4;
        cfg.train.batch_size = 64;
        cfg.train.lr = 3e-3;
        cfg.curriculum.enabled = false;
        let world = generate_synthetic_world(&cfg.data).unwrap();
        let split = chronological_split(&world.routes, cfg.data.split_ratios);
        let store = TrafficConditionStore::build(&split.train, cfg.data.slot_minutes, &world.network).unwrap();
        Self {
            cfg,
            train: split.train,
            test: split.test,
            world,
            store,
        }
    }

    fn ctx(&self) -> FeatureContext<'_> {
        FeatureContext::new(&self.world.network, &self.store, self.cfg.data.past_slots)
    }

    fn net(&self, seed: u64) -> DecisionNet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        build_decision_net(&self.cfg, self.world.network.n_segments(), &self.store, &mut rng).unwrap()
    }

    fn trainer(&self) -> AgentTrainer<DecisionNet> {
        AgentTrainer::new(&self.cfg, self.net(3)).unwrap()
    }

    fn agent_routes(&self) -> &[TravelRoute] {
        &self.train[..30]
    }
}

fn random_requests<'a>(routes: &'a [TravelRoute], n: usize, seed: u64) -> Vec<Request<'a>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let r = &routes[rng.random_range(0..routes.len())];
            Request::new(r, rng.random::<f64>() * r.total_time_s()).unwrap()
        })
        .collect()
}

#[test]
fn avg_predict_matches_direct_lookup_on_random_requests() {
    let f = Fixture::new(5);
    let ctx = f.ctx();
    for req in random_requests(&f.test, 1000, 1) {
        let slot = weekly_slot(req.wall_clock(), f.store.slot_minutes());
        let got = avg_predict(&ctx, &req).unwrap();
        assert_eq!(got.len(), req.remaining().len());
        for (l, y) in req.remaining().iter().zip(got) {
            let len = f.world.network.segments()[l.segment as usize].length_m;
            let v = f.store.observed(l.segment, slot).unwrap_or(f.store.fallback()).v_avg;
            assert_eq!(y, len / v);
        }
    }
}

#[test]
fn features_follow_the_store_and_the_traveled_prefix() {
    let f = Fixture::new(6);
    let ctx = f.ctx();
    for req in random_requests(&f.test, 300, 2) {
        let off = ctx.offline(&req).unwrap();
        assert_eq!(off, ctx.offline(&req).unwrap());
        assert_eq!(off.len(), req.route.len());
        assert_eq!(off.depth(), f.cfg.data.past_slots + 1);
        for (k, l) in req.route.links.iter().enumerate() {
            for (slot, st) in off.temporal[k].iter().zip(&off.traffic[k]) {
                assert_eq!(*st, f.store.get(l.segment, *slot));
            }
        }
        let marks = vec![HistoryMark::Lookup; req.split_index];
        let on = ctx.online(&req, &marks).unwrap();
        assert_eq!(on.len(), req.split_index);
        let later = Request::new(req.route, req.route.total_time_s()).unwrap();
        let on2 = ctx
            .online(&later, &vec![HistoryMark::Lookup; later.split_index])
            .unwrap();
        assert_eq!(on.speeds[..], on2.speeds[..on.len()]);
        assert_eq!(on.log_ratio[..], on2.log_ratio[..on.len()]);
    }
}

#[test]
fn decision_net_stays_finite_under_random_parameters() {
    let f = Fixture::new(7);
    let ctx = f.ctx();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let routes = f.agent_routes();
    let agent = DqnAgent::new(&f.cfg.agent, f.net(1)).unwrap();
    let mut memory = InferenceMemory::new();
    let ep = replay_route_as_episode(
        &ctx,
        &routes[0],
        30.0,
        &agent,
        &AvgPredictor,
        &mut memory,
        &f.cfg.reward,
        1.0,
        &mut rng,
    )
    .unwrap();
    for draw in 0..5 {
        let mut net = f.net(draw);
        let ids: Vec<_> = net.store.ids().collect();
        for id in ids {
            net.store.get_mut(id).mapv_inplace(|_| rng.random_range(-1.0..1.0));
        }
        for t in &ep.transitions {
            let q = net.q_values(&t.state).unwrap();
            assert!(q.iter().all(|x| x.is_finite()), "draw {draw}: {q:?}");
        }
    }
}

#[test]
fn episodes_form_a_consistent_transition_chain() {
    let f = Fixture::new(8);
    let ctx = f.ctx();
    let agent = DqnAgent::new(&f.cfg.agent, f.net(2)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for route in f.agent_routes() {
        let mut memory = InferenceMemory::new();
        let ep = replay_route_as_episode(
            &ctx,
            route,
            30.0,
            &agent,
            &AvgPredictor,
            &mut memory,
            &f.cfg.reward,
            0.5,
            &mut rng,
        )
        .unwrap();
        let times = request_times(route, 30.0);
        assert_eq!(ep.records.len(), times.len());
        assert_eq!(ep.transitions.len(), times.len());
        assert!(memory.is_empty(), "memory outlives the trip");

        let first = &ep.records[0];
        assert!(first.forced && first.action == REPREDICT && first.sigma == 0.0);
        assert_eq!(first.r_performance, 0.0);
        let mut last_rp = 0.0;
        for (i, rec) in ep.records.iter().enumerate() {
            assert_eq!(rec.t, times[i]);
            assert!(rec.y_rp.is_finite());
            assert_eq!(rec.forced, rec.y_dl.is_none());
            if i > 0 {
                assert!(rec.position >= ep.records[i - 1].position);
                assert!(!rec.forced);
                assert_eq!(rec.sigma, rec.t - last_rp);
            }
            if rec.action == REPREDICT {
                last_rp = rec.t;
            }
            let parts = rec.r_performance + rec.r_efficiency + rec.r_frequency;
            assert_eq!(rec.reward, parts);
        }
        for w in ep.transitions.windows(2) {
            let next = w[0].next.as_ref().expect("non-terminal");
            assert_eq!(next.sigma, w[1].state.sigma);
            assert_eq!(next.online.len(), w[1].state.online.len());
            assert!(w[1].state.online.len() >= w[0].state.online.len());
        }
        assert!(ep.transitions.last().unwrap().next.is_none());
    }
}

#[test]
fn single_request_route_gives_one_terminal_transition() {
    let f = Fixture::new(9);
    let ctx = f.ctx();
    let agent = DqnAgent::new(&f.cfg.agent, f.net(2)).unwrap();
    let route = &f.train[0];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let ep = replay_route_as_episode(
        &ctx,
        route,
        route.total_time_s() + 1.0,
        &agent,
        &AvgPredictor,
        &mut InferenceMemory::new(),
        &f.cfg.reward,
        0.0,
        &mut rng,
    )
    .unwrap();
    assert_eq!(ep.transitions.len(), 1);
    assert!(ep.transitions[0].next.is_none());
    assert_eq!(ep.transitions[0].action, REPREDICT);
}

#[test]
fn epoch_request_count_matches_sample_enumeration() {
    let f = Fixture::new(10);
    let ctx = f.ctx();
    let routes = f.agent_routes();
    let mut trainer = f.trainer();
    let mut audited = 0usize;
    let log = trainer
        .run_epoch(&ctx, routes, &AvgPredictor, &mut |r| {
            assert!(r.y_rp.is_finite() && r.y_true.is_finite());
            audited += 1;
        })
        .unwrap();
    let expected = enumerate_samples(routes, &f.world.network, f.cfg.train.interval_s)
        .unwrap()
        .len();
    assert_eq!(audited, expected);
    assert_eq!(log.requests as usize, expected);
    assert_eq!(trainer.buffer.len(), expected.min(f.cfg.agent.buffer_capacity));
}

#[test]
fn train_step_beyond_request_count_never_updates() {
    let mut f = Fixture::new(11);
    f.cfg.agent.train_step = 1_000_000;
    f.cfg.agent.epochs = 1;
    let ctx = f.ctx();
    let mut trainer = f.trainer();
    let init = trainer.agent.main.store.clone();
    trainer
        .train(&ctx, f.agent_routes(), &AvgPredictor, &mut |_, _| Ok(()))
        .unwrap();
    assert_eq!(trainer.agent.updates, 0);
    assert!(trainer.agent.main.store.bitwise_eq(&init));
    assert!(trainer.agent.nets_equal());
}

#[test]
fn epsilon_one_explores_evenly_and_zero_is_greedy() {
    let f = Fixture::new(12);
    let ctx = f.ctx();
    let agent = DqnAgent::new(&f.cfg.agent, f.net(5)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let ep = replay_route_as_episode(
        &ctx,
        &f.train[1],
        30.0,
        &agent,
        &AvgPredictor,
        &mut InferenceMemory::new(),
        &f.cfg.reward,
        0.0,
        &mut rng,
    )
    .unwrap();
    let state = &ep.transitions.last().unwrap().state;
    let n = 10_000;
    let ones: usize = (0..n)
        .map(|_| agent.select_action(state, 1.0, false, &mut rng).unwrap())
        .sum();
    let sd = (n as f64 * 0.25).sqrt();
    assert!(
        (ones as f64 - n as f64 / 2.0).abs() <= 3.0 * sd,
        "{ones} re-predictions in {n}"
    );

    let greedy = agent.greedy(state).unwrap();
    for _ in 0..50 {
        assert_eq!(agent.select_action(state, 0.0, false, &mut rng).unwrap(), greedy);
    }
    assert_eq!(agent.select_action(state, 0.0, true, &mut rng).unwrap(), REPREDICT);
}

#[test]
fn target_sync_and_bias_shift_invariance() {
    let f = Fixture::new(13);
    let ctx = f.ctx();
    let mut trainer = f.trainer();
    assert!(trainer.agent.nets_equal());
    trainer
        .run_epoch(&ctx, f.agent_routes(), &AvgPredictor, &mut |_| {})
        .unwrap();
    assert!(trainer.agent.updates > 0);
    let probe = trainer.buffer.iter().next().unwrap().state.clone();
    let agent = &mut trainer.agent;
    agent.sync_target();
    agent.sync_target();
    assert!(agent.nets_equal());
    assert_eq!(
        agent.main.q_values(&probe).unwrap(),
        agent.target.q_values(&probe).unwrap()
    );

    let batch: Vec<_> = trainer.buffer.iter().take(16).collect();
    for _ in 0..3 {
        trainer.agent.update(&batch).unwrap();
    }
    assert!(!trainer.agent.nets_equal());
    let agent = &trainer.agent;
    assert_ne!(
        agent.main.q_values(&probe).unwrap(),
        agent.target.q_values(&probe).unwrap()
    );

    let mut shifted = agent.main.clone();
    let b = shifted.head.b.unwrap();
    shifted.store.get_mut(b).mapv_inplace(|x| x + 7.5);
    for t in trainer.buffer.iter().take(50) {
        let q = agent.main.q_values(&t.state).unwrap();
        let qs = shifted.q_values(&t.state).unwrap();
        assert!((qs[0] - q[0] - 7.5).abs() < 1e-9 && (qs[1] - q[1] - 7.5).abs() < 1e-9);
        let greedy = ertte::agent::argmax2(q);
        if (q[0] - q[1]).abs() > 1e-9 {
            assert_eq!(ertte::agent::argmax2(qs), greedy);
        }
    }
}

#[test]
fn combined_loss_falls_on_a_frozen_batch() {
    let f = Fixture::new(14);
    let ctx = f.ctx();
    let mut cfg = f.cfg.clone();
    cfg.agent.train_step = 1_000_000;
    let mut trainer = AgentTrainer::new(&cfg, f.net(3)).unwrap();
    trainer
        .run_epoch(&ctx, f.agent_routes(), &AvgPredictor, &mut |_| {})
        .unwrap();
    let batch: Vec<_> = trainer.buffer.iter().step_by(7).take(32).cloned().collect();
    let refs: Vec<_> = batch.iter().collect();
    let mut agent = trainer.agent.clone();
    let losses: Vec<f64> = (0..200).map(|_| agent.update(&refs).unwrap().total).collect();
    let window = |k: usize| losses[k * 20..(k + 1) * 20].iter().sum::<f64>() / 20.0;
    for k in 1..10 {
        assert!(
            window(k) <= window(k - 1) * 1.05,
            "window {k}: {} after {}",
            window(k),
            window(k - 1)
        );
    }
    assert!(window(9) < window(0) * 0.95, "{:?}", (window(0), window(9)));
}

#[test]
fn lambda_zero_loss_is_the_td_loss() {
    let f = Fixture::new(15);
    let ctx = f.ctx();
    let mut cfg = f.cfg.clone();
    cfg.agent.contrastive_weight = 0.0;
    cfg.agent.train_step = 1_000_000;
    let mut trainer = AgentTrainer::new(&cfg, f.net(3)).unwrap();
    trainer
        .run_epoch(&ctx, f.agent_routes(), &AvgPredictor, &mut |_| {})
        .unwrap();
    let batch: Vec<_> = trainer.buffer.iter().take(16).collect();
    let parts = trainer.agent.clone().update(&batch).unwrap();
    assert_eq!(parts.total, parts.td);
    trainer.agent.config.contrastive_weight = 0.1;
    let with_c = trainer.agent.clone().update(&batch).unwrap();
    assert_eq!(with_c.td, parts.td);
    assert!(with_c.total > with_c.td);
}

#[test]
fn ablations_are_single_key_config_changes() {
    let base = Config::default();
    let flat = |c: &Config| {
        let mut out = BTreeMap::new();
        let v = toml::Value::try_from(c).unwrap();
        for (section, table) in v.as_table().unwrap() {
            for (k, x) in table.as_table().unwrap() {
                out.insert(format!("{section}.{k}"), x.to_string());
            }
        }
        out
    };
    let b = flat(&base);
    for (over, key) in [
        ("agent.contrastive_weight=0", "agent.contrastive_weight"),
        ("curriculum.enabled=false", "curriculum.enabled"),
    ] {
        let a = flat(&base.with_overrides(&[over.to_string()]).unwrap());
        let diff: Vec<_> = b.keys().filter(|k| a[*k] != b[*k]).collect();
        assert_eq!(diff, vec![key]);
    }
}

#[test]
fn agent_training_is_deterministic_and_resumes_exactly() {
    let f = Fixture::new(16);
    let ctx = f.ctx();
    let routes = f.agent_routes();
    let mut a = f.trainer();
    a.train(&ctx, routes, &AvgPredictor, &mut |_, _| Ok(())).unwrap();
    let mut b = f.trainer();
    b.train(&ctx, routes, &AvgPredictor, &mut |_, _| Ok(())).unwrap();
    assert!(a.agent.main.store.bitwise_eq(&b.agent.main.store));
    assert!(a.agent.updates > 0);

    let dir = tempfile::tempdir().unwrap();
    let mut c = f.trainer();
    c.run_epoch(&ctx, routes, &AvgPredictor, &mut |_| {}).unwrap();
    c.save_state(dir.path()).unwrap();
    drop(c);
    let mut d = AgentTrainer::resume(&f.cfg, f.net(3), dir.path()).unwrap();
    assert_eq!(d.epochs_done, 1);
    d.train(&ctx, routes, &AvgPredictor, &mut |_, _| Ok(())).unwrap();
    assert!(a.agent.main.store.bitwise_eq(&d.agent.main.store));
    assert!(a.agent.target.store.bitwise_eq(&d.agent.target.store));
    assert_eq!(a.agent.updates, d.agent.updates);
    assert_eq!(a.log, d.log);

    let mut other = f.cfg.clone();
    other.agent.lr *= 2.0;
    assert!(AgentTrainer::resume(&other, f.net(3), dir.path()).is_err());
}

#[test]
fn event_stream_reproduces_the_report_and_worst_routes() {
    let f = Fixture::new(17);
    let ctx = f.ctx();
    let mut trainer = f.trainer();
    trainer
        .run_epoch(&ctx, f.agent_routes(), &AvgPredictor, &mut |_| {})
        .unwrap();
    let policy: Policy<'_, DecisionNet> = Policy::Learned(&trainer.agent);
    let (report, events) = simulate_online(&ctx, &f.test, &policy, &AvgPredictor, 30.0).unwrap();
    assert!(events.iter().all(|e| e.action == LOOKUP || e.action == REPREDICT));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("events.ndjson");
    write_events(&path, &events).unwrap();
    let back = read_events(&path).unwrap();
    assert_eq!(back, events);
    let again = report_from_events(&back, "learned", "avg", 30.0).unwrap();
    assert_eq!(again.routes, report.routes);
    for (x, y) in [
        (again.mae, report.mae),
        (again.rmse, report.rmse),
        (again.mape, report.mape),
        (again.mur, report.mur),
    ] {
        assert!((x - y).abs() <= 1e-12 * (1.0 + y.abs()));
    }
    let rp = events.iter().filter(|e| e.action == REPREDICT).count();
    assert!((report.mur - 100.0 * rp as f64 / events.len() as f64).abs() < 1e-12);

    let mut per_route: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
    for e in &events {
        let s = per_route.entry(e.route_id).or_default();
        if e.y_true >= 1.0 {
            s.0 += (e.y_hat - e.y_true).abs() / e.y_true;
            s.1 += 1;
        }
    }
    let mut oracle: Vec<(u64, f64)> = per_route
        .into_iter()
        .map(|(id, (s, n))| {
            (
                id,
                if n == 0 {
                    f64::NEG_INFINITY
                } else {
                    100.0 * s / n as f64
                },
            )
        })
        .collect();
    oracle.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let study = case_study(&events, 10, 3).unwrap();
    let got: Vec<u64> = study.worst.iter().map(|r| r.route_id).collect();
    let want: Vec<u64> = oracle.iter().take(10).map(|x| x.0).collect();
    assert_eq!(got, want);
    for (r, (_, m)) in study.worst.iter().zip(&oracle) {
        assert!((r.mape.unwrap() - m).abs() < 1e-9);
    }
    let sampled: std::collections::BTreeSet<u64> = study.sampled.iter().map(|p| p.route_id).collect();
    assert_eq!(sampled.len(), 10);
}

#[test]
fn predictor_training_is_reproducible_and_beats_the_average() {
    let f = Fixture::new(18);
    let ctx = f.ctx();
    let fit = || {
        let mut rng = ChaCha8Rng::seed_from_u64(f.cfg.train.seed);
        let model = NeuralPredictor::new(&f.cfg.predictor, f.world.network.n_segments(), &mut rng).unwrap();
        let train = PredictorSamples::build(&ctx, &model, &f.train, 30.0).unwrap();
        let val = PredictorSamples::build(&ctx, &model, &f.test, 30.0).unwrap();
        let (m, report) = train_predictor(&f.cfg, model, &train, &val, None, &mut |_| {}).unwrap();
        (m, report, val)
    };
    let (a, report, val) = fit();
    let (b, _, _) = fit();
    assert!(a.store.bitwise_eq(&b.store));
    let l = &report.train_loss;
    assert!(l.last().unwrap() < &l[0], "{l:?}");

    let mut sum = 0.0;
    let mut n = 0;
    for (i, s) in val.samples.iter().enumerate() {
        let route = f.test.iter().find(|r| r.route_id == s.route_id).unwrap();
        let req = Request::new(route, s.t).unwrap();
        let y: f64 = val.targets[i].iter().sum();
        if y >= 1.0 {
            let p: f64 = avg_predict(&ctx, &req).unwrap().iter().sum();
            sum += (p - y).abs() / y;
            n += 1;
        }
    }
    let avg_mape = 100.0 * sum / n as f64;
    let model_mape = validation_mape(&a, &val);
    assert!(model_mape < avg_mape, "model {model_mape:.2}% vs avg {avg_mape:.2}%");
}

#[test]
fn first_request_is_forced_even_with_exploration_off() {
    let f = Fixture::new(19);
    let ctx = f.ctx();
    let mut net = f.net(2);
    let b = net.head.b.unwrap();
    net.store.get_mut(b)[[0, LOOKUP]] = 1e6;
    let agent = DqnAgent::new(&f.cfg.agent, net).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for route in f.agent_routes().iter().take(5) {
        let ep = replay_route_as_episode(
            &ctx,
            route,
            30.0,
            &agent,
            &AvgPredictor,
            &mut InferenceMemory::new(),
            &f.cfg.reward,
            0.0,
            &mut rng,
        )
        .unwrap();
        assert_eq!(ep.records[0].action, REPREDICT);
        assert!(ep.records[1..].iter().all(|r| r.action == LOOKUP));
    }
}

fn paired_curriculum_run(seed: u64) -> (f64, f64) {
    let mut f = Fixture::new(seed);
    f.cfg.train.epochs = 6;
    f.cfg.train.patience = 6;
    f.cfg.curriculum.circles = 2;
    f.cfg.curriculum.epochs_per_circle = 3;
    f.cfg.curriculum.subsets = 3;
    f.cfg.curriculum.metasets = 2;
    let ctx = f.ctx();
    let mut rng = ChaCha8Rng::seed_from_u64(f.cfg.train.seed);
    let model = NeuralPredictor::new(&f.cfg.predictor, f.world.network.n_segments(), &mut rng).unwrap();
    let train = PredictorSamples::build(&ctx, &model, &f.train, 30.0).unwrap();
    let val = PredictorSamples::build(&ctx, &model, &f.test, 30.0).unwrap();
    let (uniform, _) = train_predictor(&f.cfg, model.clone(), &train, &val, None, &mut |_| {}).unwrap();
    let (expert, _) = train_expert(&f.cfg, model.clone(), &train, &val).unwrap();
    let c = &f.cfg.curriculum;
    let mut grid = partition(&train.samples, c.subsets, c.metasets).unwrap();
    grid.apply_scores(score_difficulty(&expert, &train)).unwrap();
    let mut on = f.cfg.clone();
    on.curriculum.enabled = true;
    let mut epochs = 0;
    let (cur, _) = train_predictor(&on, model, &train, &val, Some(&grid), &mut |_| epochs += 1).unwrap();
    assert!(epochs <= f.cfg.train.epochs);
    (validation_mape(&uniform, &val), validation_mape(&cur, &val))
}

#[test]
fn curriculum_matches_uniform_training_within_the_same_budget() {
    let runs: Vec<(f64, f64)> = [20, 21, 22].into_iter().map(paired_curriculum_run).collect();
    let wins = runs.iter().filter(|(u, k)| k <= u).count();
    println!("uniform vs curriculum validation MAPE: {runs:?}");
    assert!(
        wins >= 2,
        "curriculum reached the uniform validation MAPE on {wins}/3 seeds: {runs:?}"
    );
}

#[test]
fn less_training_data_does_not_help() {
    let f = Fixture::new(23);
    let ctx = f.ctx();
    let val = &f.train[f.train.len() - 20..];
    let rows = ertte::eval::scalability_run(&f.train, &[0.2, 1.0], 5, &mut |subset| {
        let (m, _) = ertte::training::fit_predictor(&f.cfg, &ctx, subset, val)?;
        Ok(ertte::eval::evaluate_predictor(&ctx, &f.test, &m, 30.0)?.mape)
    })
    .unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].routes < rows[1].routes);
    assert_eq!(rows[1].routes, f.train.len());
    assert!(rows[0].mape >= rows[1].mape, "{rows:?}");
}
