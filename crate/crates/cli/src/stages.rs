use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use ertte::agent::DqnAgent;
use ertte::config::Config;
use ertte::curriculum::{partition, MetasetGrid};
use ertte::data::io::{read_network, read_routes, write_network, write_routes};
use ertte::data::{chronological_split, generate_synthetic_world, DatasetSplit, RoadNetwork};
use ertte::error::{Error, Result};
use ertte::eval::{
    evaluate_predictor, export_case_study, interval_sweep, read_events, scalability_run, simulate_online, write_events,
    Policy,
};
use ertte::features::{FeatureContext, TrafficConditionStore};
use ertte::nn::checkpoint::{load_into_store, manifest_for, save_checkpoint, DType};
use ertte::nn::DecisionNet;
use ertte::predictor::NeuralPredictor;
use ertte::training::{
    build_decision_net, capped, fit_predictor, score_difficulty, train_expert, train_predictor, write_csv,
    AgentTrainer, PredictionCache, PredictorSamples, RunDir,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::{Command, Common, PolicyArg, Switch};

/// Provenance record written next to every stage's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config_path: Option<PathBuf>,
    pub overrides: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub config_hash: String,
    pub created_unix_s: u64,
}

pub struct Stage<'a> {
    common: &'a Common,
    cfg: Config,
    overrides: Vec<String>,
    command: &'static str,
}

struct World {
    network: RoadNetwork,
    split: DatasetSplit,
}

impl<'a> Stage<'a> {
    pub fn new(common: &'a Common, cfg: Config, overrides: Vec<String>, command: &'static str) -> Self {
        Self {
            common,
            cfg,
            overrides,
            command,
        }
    }

    fn dir(&self, name: &str) -> PathBuf {
        self.common.run_root.join(name)
    }

    fn open(&self, name: &str) -> Result<RunDir> {
        let d = RunDir::create(&self.dir(name))?;
        d.write_config(&self.cfg)?;
        Ok(d)
    }

    fn finish(&self, dir: &RunDir, inputs: Vec<PathBuf>, outputs: Vec<PathBuf>) -> Result<()> {
        for o in &outputs {
            if !o.exists() {
                return Err(Error::State(format!("declared output {} was not written", o.display())));
            }
        }
        let m = RunManifest {
            subcommand: self.command.to_string(),
            config_path: self.common.config.clone(),
            overrides: self.overrides.clone(),
            seed: self.cfg.train.seed,
            inputs,
            outputs,
            config_hash: self.cfg.content_hash(),
            created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        };
        std::fs::write(dir.path("manifest.json"), serde_json::to_string_pretty(&m)?)?;
        log::info!("{}: wrote {}", self.command, dir.root().display());
        Ok(())
    }

    fn network_path(&self) -> PathBuf {
        self.dir("data").join("network.csv")
    }

    fn routes_path(&self) -> PathBuf {
        self.dir("data").join("routes.txt")
    }

    fn traffic_path(&self) -> PathBuf {
        self.dir("traffic").join("traffic.csv")
    }

    fn world(&self) -> Result<World> {
        let network = read_network(&require(&self.network_path())?)?;
        let routes = read_routes(&require(&self.routes_path())?, Some(&network))?;
        let split = chronological_split(&routes, self.cfg.data.split_ratios);
        Ok(World { network, split })
    }

    fn store(&self, network: &RoadNetwork) -> Result<TrafficConditionStore> {
        TrafficConditionStore::read_csv(
            &require(&self.traffic_path())?,
            self.cfg.data.slot_minutes,
            network.n_segments(),
        )
    }

    fn load_predictor(&self, stage: &str, network: &RoadNetwork) -> Result<(NeuralPredictor, PathBuf)> {
        let path = require(&self.dir(stage).join("predictor.params"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.train.seed);
        let mut p = NeuralPredictor::new(&self.cfg.predictor, network.n_segments(), &mut rng)?;
        load_into_store(&path, &mut p.store)?;
        p.mark_trained();
        Ok((p, path))
    }

    fn load_agent(
        &self,
        network: &RoadNetwork,
        store: &TrafficConditionStore,
    ) -> Result<(DqnAgent<DecisionNet>, PathBuf)> {
        let path = require(&self.dir("agent").join("agent.params"))?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.train.seed);
        let mut net = build_decision_net(&self.cfg, network.n_segments(), store, &mut rng)?;
        load_into_store(&path, &mut net.store)?;
        Ok((DqnAgent::new(&self.cfg.agent, net)?, path))
    }

    fn save_predictor(&self, dir: &RunDir, p: &NeuralPredictor) -> Result<()> {
        let m = manifest_for("predictor", &p.store, p.dims(), &self.cfg.content_hash(), DType::F32);
        save_checkpoint(dir.root(), "predictor", &p.store, &m)
    }
}

fn require(path: &Path) -> Result<PathBuf> {
    if path.exists() {
        Ok(path.to_path_buf())
    } else {
        Err(Error::Data(format!("missing input {}", path.display())))
    }
}

pub fn run(st: &Stage<'_>, command: &Command) -> Result<()> {
    match command {
        Command::SynthGen => synth_gen(st),
        Command::BuildTraffic => build_traffic(st),
        Command::TrainExpert => train_expert_stage(st),
        Command::ScoreDifficulty => score_stage(st),
        Command::TrainPredictor { curriculum } => train_predictor_stage(st, *curriculum),
        Command::TrainAgent { resume } => train_agent_stage(st, *resume),
        Command::Evaluate { interval, policy } => evaluate_stage(st, *interval, *policy),
        Command::SweepInterval { policy } => sweep_stage(st, *policy),
        Command::Scalability => scalability_stage(st),
        Command::ExportCaseStudy { events, k } => case_study_stage(st, events.clone(), *k),
    }
}

fn synth_gen(st: &Stage<'_>) -> Result<()> {
    let world = generate_synthetic_world(&st.cfg.data)?;
    let dir = st.open("data")?;
    write_network(&world.network, &st.network_path())?;
    write_routes(&world.routes, &st.routes_path())?;
    let profiles: Vec<_> = world.routes.iter().map(|r| r.route_id).zip(&world.profiles).collect();
    std::fs::write(dir.path("profiles.json"), serde_json::to_string(&profiles)?)?;
    std::fs::write(
        dir.path("traffic_model.json"),
        serde_json::to_string_pretty(&world.traffic)?,
    )?;
    st.finish(
        &dir,
        vec![],
        vec![st.network_path(), st.routes_path(), dir.path("profiles.json")],
    )
}

fn build_traffic(st: &Stage<'_>) -> Result<()> {
    let w = st.world()?;
    let store = TrafficConditionStore::build(&w.split.train, st.cfg.data.slot_minutes, &w.network)?;
    let dir = st.open("traffic")?;
    store.write_csv(&st.traffic_path())?;
    st.finish(&dir, vec![st.network_path(), st.routes_path()], vec![st.traffic_path()])
}

struct Prepared {
    world: World,
    store: TrafficConditionStore,
}

fn prepared(st: &Stage<'_>) -> Result<Prepared> {
    let world = st.world()?;
    let store = st.store(&world.network)?;
    Ok(Prepared { world, store })
}

fn sample_sets(
    st: &Stage<'_>,
    ctx: &FeatureContext<'_>,
    p: &Prepared,
) -> Result<(NeuralPredictor, PredictorSamples, PredictorSamples)> {
    let mut rng = ChaCha8Rng::seed_from_u64(st.cfg.train.seed);
    let model = NeuralPredictor::new(&st.cfg.predictor, p.world.network.n_segments(), &mut rng)?;
    let dt = st.cfg.train.interval_s;
    let train = PredictorSamples::build(ctx, &model, &p.world.split.train, dt)?;
    let val_routes = capped(&p.world.split.validation, st.cfg.train.max_validation_routes);
    let val = PredictorSamples::build(ctx, &model, val_routes, dt)?;
    Ok((model, train, val))
}

fn train_expert_stage(st: &Stage<'_>) -> Result<()> {
    let p = prepared(st)?;
    let ctx = FeatureContext::new(&p.world.network, &p.store, st.cfg.data.past_slots);
    let (model, train, val) = sample_sets(st, &ctx, &p)?;
    let (expert, report) = train_expert(&st.cfg, model, &train, &val)?;
    let dir = st.open("expert")?;
    st.save_predictor(&dir, &expert)?;
    std::fs::write(dir.path("report.json"), serde_json::to_string_pretty(&report)?)?;
    st.finish(
        &dir,
        vec![st.routes_path(), st.traffic_path()],
        vec![dir.path("predictor.params"), dir.path("predictor.json")],
    )
}

fn score_stage(st: &Stage<'_>) -> Result<()> {
    let p = prepared(st)?;
    let ctx = FeatureContext::new(&p.world.network, &p.store, st.cfg.data.past_slots);
    let (expert, expert_path) = st.load_predictor("expert", &p.world.network)?;
    let train = PredictorSamples::build(&ctx, &expert, &p.world.split.train, st.cfg.train.interval_s)?;
    let c = &st.cfg.curriculum;
    let mut grid = partition(&train.samples, c.subsets, c.metasets)?;
    grid.apply_scores(score_difficulty(&expert, &train))?;
    let dir = st.open("difficulty")?;
    grid.write_scores_csv(&train.samples, &dir.path("difficulty.csv"))?;
    std::fs::write(dir.path("grid.json"), serde_json::to_string(&grid)?)?;
    st.finish(
        &dir,
        vec![expert_path, st.routes_path()],
        vec![dir.path("difficulty.csv"), dir.path("grid.json")],
    )
}

fn train_predictor_stage(st: &Stage<'_>, curriculum: Option<Switch>) -> Result<()> {
    let mut cfg = st.cfg.clone();
    if let Some(s) = curriculum {
        cfg.curriculum.enabled = s == Switch::On;
    }
    let st = Stage::new(st.common, cfg, st.overrides.clone(), st.command);
    let p = prepared(&st)?;
    let ctx = FeatureContext::new(&p.world.network, &p.store, st.cfg.data.past_slots);
    let (model, train, val) = sample_sets(&st, &ctx, &p)?;
    let mut inputs = vec![st.routes_path(), st.traffic_path()];
    let grid: Option<MetasetGrid> = if st.cfg.curriculum.enabled {
        let path = require(&st.dir("difficulty").join("grid.json"))?;
        let g: MetasetGrid = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        inputs.push(path);
        Some(g)
    } else {
        None
    };
    let mut logs = Vec::new();
    let (model, report) = train_predictor(&st.cfg, model, &train, &val, grid.as_ref(), &mut |l| {
        logs.push(l.clone())
    })?;
    let dir = st.open("predictor")?;
    st.save_predictor(&dir, &model)?;
    dir.write_csv("metrics.csv", &logs)?;
    std::fs::write(dir.path("report.json"), serde_json::to_string_pretty(&report)?)?;
    st.finish(
        &dir,
        inputs,
        vec![dir.path("predictor.params"), dir.path("metrics.csv")],
    )
}

fn train_agent_stage(st: &Stage<'_>, resume: bool) -> Result<()> {
    let p = prepared(st)?;
    let ctx = FeatureContext::new(&p.world.network, &p.store, st.cfg.data.past_slots);
    let (predictor, pred_path) = st.load_predictor("predictor", &p.world.network)?;
    let routes = capped(&p.world.split.train, st.cfg.train.agent_routes);
    let cache = PredictionCache::build(&ctx, &predictor, routes, &[st.cfg.train.interval_s])?;
    let dir = st.open("agent")?;
    let state_dir = dir.path("state");
    let mut rng = ChaCha8Rng::seed_from_u64(st.cfg.train.seed.wrapping_add(1));
    let net = build_decision_net(&st.cfg, p.world.network.n_segments(), &p.store, &mut rng)?;
    let mut trainer = if resume && state_dir.join("training_state.json").exists() {
        let t = AgentTrainer::resume(&st.cfg, net, &state_dir)?;
        log::info!("resuming after epoch {}", t.epochs_done);
        t
    } else {
        AgentTrainer::new(&st.cfg, net)?
    };
    let metrics = dir.path("metrics.csv");
    trainer.train(&ctx, routes, &cache, &mut |t, _| {
        t.save_state(&state_dir)?;
        write_csv(&metrics, &t.log)
    })?;
    let net = &trainer.agent.main;
    let dims = serde_json::json!({ "model": st.cfg.model, "vocab": [net.vocab.n_segments, net.vocab.n_slots, net.vocab.depth] });
    let m = manifest_for("agent", &net.store, dims, &st.cfg.content_hash(), DType::F32);
    save_checkpoint(dir.root(), "agent", &net.store, &m)?;
    if !metrics.exists() {
        write_csv(&metrics, &trainer.log)?;
    }
    st.finish(
        &dir,
        vec![pred_path, st.routes_path(), st.traffic_path()],
        vec![dir.path("agent.params"), dir.path("agent.json"), metrics],
    )
}

fn evaluate_stage(st: &Stage<'_>, interval: Option<f64>, policy: PolicyArg) -> Result<()> {
    let p = prepared(st)?;
    let ctx = FeatureContext::new(&p.world.network, &p.store, st.cfg.data.past_slots);
    let (predictor, pred_path) = st.load_predictor("predictor", &p.world.network)?;
    let dt = interval.unwrap_or(st.cfg.eval.interval_s);
    if !(dt > 0.0) {
        return Err(Error::Config("--interval: must be > 0".into()));
    }
    let mut inputs = vec![pred_path, st.routes_path()];
    let agent = if policy == PolicyArg::Learned {
        let (a, path) = st.load_agent(&p.world.network, &p.store)?;
        inputs.push(path);
        Some(a)
    } else {
        None
    };
    let pol = make_policy(policy, agent.as_ref());
    let (report, events) = simulate_online(&ctx, &p.world.split.test, &pol, &predictor, dt)?;
    let dir = st.open("eval")?;
    report.write_json(&dir.path("report.json"))?;
    report.write_routes_csv(&dir.path("routes.csv"))?;
    write_events(&dir.path("events.ndjson"), &events)?;
    log::info!(
        "policy {}: MAE {:.2} s, RMSE {:.2} s, MAPE {:.2}%, MUR {:.2}%",
        report.policy,
        report.mae,
        report.rmse,
        report.mape,
        report.mur
    );
    st.finish(
        &dir,
        inputs,
        vec![
            dir.path("report.json"),
            dir.path("routes.csv"),
            dir.path("events.ndjson"),
        ],
    )
}

fn make_policy(arg: PolicyArg, agent: Option<&DqnAgent<DecisionNet>>) -> Policy<'_, DecisionNet> {
    match (arg, agent) {
        (PolicyArg::Learned, Some(a)) => Policy::Learned(a),
        (PolicyArg::NeverAfterFirst, _) => Policy::NeverAfterFirst,
        _ => Policy::AlwaysRepredict,
    }
}

fn sweep_stage(st: &Stage<'_>, policy: PolicyArg) -> Result<()> {
    let p = prepared(st)?;
    let ctx = FeatureContext::new(&p.world.network, &p.store, st.cfg.data.past_slots);
    let (predictor, pred_path) = st.load_predictor("predictor", &p.world.network)?;
    let mut inputs = vec![pred_path, st.routes_path()];
    let agent = if policy == PolicyArg::Learned {
        let (a, path) = st.load_agent(&p.world.network, &p.store)?;
        inputs.push(path);
        Some(a)
    } else {
        None
    };
    let intervals = &st.cfg.eval.sweep_intervals_s;
    let cache = PredictionCache::build(&ctx, &predictor, &p.world.split.test, intervals)?;
    let rows = interval_sweep(
        &ctx,
        &p.world.split.test,
        &make_policy(policy, agent.as_ref()),
        &cache,
        intervals,
    )?;
    let dir = st.open("sweep")?;
    dir.write_csv("sweep.csv", &rows)?;
    st.finish(&dir, inputs, vec![dir.path("sweep.csv")])
}

fn scalability_stage(st: &Stage<'_>) -> Result<()> {
    let p = prepared(st)?;
    let ctx = FeatureContext::new(&p.world.network, &p.store, st.cfg.data.past_slots);
    let e = &st.cfg.eval;
    let rows = scalability_run(&p.world.split.train, &e.scalability_fractions, e.seed, &mut |subset| {
        let (model, _) = fit_predictor(&st.cfg, &ctx, subset, &p.world.split.validation)?;
        Ok(evaluate_predictor(&ctx, &p.world.split.test, &model, e.interval_s)?.mape)
    })?;
    let dir = st.open("scalability")?;
    dir.write_csv("scalability.csv", &rows)?;
    st.finish(
        &dir,
        vec![st.routes_path(), st.traffic_path()],
        vec![dir.path("scalability.csv")],
    )
}

fn case_study_stage(st: &Stage<'_>, events: Option<PathBuf>, k: Option<usize>) -> Result<()> {
    let path = require(&events.unwrap_or_else(|| st.dir("eval").join("events.ndjson")))?;
    let ev = read_events(&path)?;
    let dir = st.open("case_study")?;
    export_case_study(&ev, k.unwrap_or(st.cfg.eval.case_study_k), st.cfg.eval.seed, dir.root())?;
    st.finish(
        &dir,
        vec![path],
        vec![dir.path("case_random.csv"), dir.path("case_worst.csv")],
    )
}
