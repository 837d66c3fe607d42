//! Run configuration. Every section carries defaults and can be loaded from
//! TOML, then patched with `section.key=value` overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub predictor: PredictorConfig,
    pub reward: RewardConfig,
    pub agent: AgentConfig,
    pub curriculum: CurriculumConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileMix {
    /// Fraction of routes whose driver keeps one speed ratio throughout.
    pub constant: f64,
    /// Fraction of routes whose speed ratio jumps once mid-trip.
    pub regime_shift: f64,
}

impl Default for ProfileMix {
    fn default() -> Self {
        Self {
            constant: 0.7,
            regime_shift: 0.3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    /// Vertices per side of the square street grid.
    pub grid_size: usize,
    pub n_routes: usize,
    pub profile_mix: ProfileMix,
    pub mean_segments: usize,
    pub min_segments: usize,
    pub max_segments: usize,
    pub n_days: u32,
    /// Epoch seconds of midnight on the first simulated day.
    pub start_epoch: i64,
    /// Time-slot length in minutes.
    pub slot_minutes: u32,
    /// Number of past slots in temporal and traffic features.
    pub past_slots: usize,
    pub split_ratios: [f64; 3],
    /// Log-scale spread of per-driver base speed ratios.
    pub driver_spread: f64,
    /// Log-scale spread of the speed jump on regime-shift routes.
    pub shift_spread: f64,
    /// Log-scale per-segment jitter on regime-shift routes.
    pub segment_jitter: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            grid_size: 8,
            n_routes: 5000,
            profile_mix: ProfileMix::default(),
            mean_segments: 16,
            min_segments: 6,
            max_segments: 26,
            n_days: 30,
            // Monday 2024-01-01 00:00:00 UTC
            start_epoch: 1_704_067_200,
            slot_minutes: 5,
            past_slots: 4,
            split_ratios: [0.7, 0.1, 0.2],
            driver_spread: 0.2,
            shift_spread: 0.35,
            segment_jitter: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_segment: usize,
    pub d_time: usize,
    pub d_traffic: usize,
    pub d_weather: usize,
    pub d_history: usize,
    /// Encoder and fusion width.
    pub d_model: usize,
    pub d_hidden: usize,
    /// Contrastive projection width; `0` means `2 * d_hidden`.
    pub d_projection: usize,
    pub heads: usize,
    pub offline_depth: usize,
    pub online_depth: usize,
    pub temperature: f64,
    pub init_std: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_segment: 8,
            d_time: 8,
            d_traffic: 8,
            d_weather: 4,
            d_history: 4,
            d_model: 128,
            d_hidden: 32,
            d_projection: 0,
            heads: 4,
            offline_depth: 6,
            online_depth: 6,
            temperature: 0.1,
            init_std: 0.02,
        }
    }
}

impl ModelConfig {
    pub fn projection_dim(&self) -> usize {
        if self.d_projection == 0 {
            2 * self.d_hidden
        } else {
            self.d_projection
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct PredictorConfig {
    pub d_segment: usize,
    pub d_time: usize,
    pub d_traffic: usize,
    pub d_model: usize,
    pub heads: usize,
    pub depth: usize,
    pub init_std: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            d_segment: 8,
            d_time: 8,
            d_traffic: 8,
            d_model: 32,
            heads: 4,
            depth: 2,
            init_std: 0.02,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum PerformanceMode {
    /// Compare the absolute errors of both candidates against ground truth.
    ErrorDiff,
    /// Compare the raw candidate values, literally.
    RawDiff,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// Re-prediction penalty, added as-is (must be ≤ 0).
    pub omega_p: f64,
    pub alpha: f64,
    pub beta: f64,
    pub performance_mode: PerformanceMode,
    /// Seconds of error per unit of performance reward.
    pub performance_scale_s: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            omega_p: -0.5,
            alpha: 0.02,
            beta: -1.0,
            performance_mode: PerformanceMode::ErrorDiff,
            performance_scale_s: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum TargetForm {
    /// Main network selects the next action, target network evaluates it.
    Double,
    /// Max over the target network.
    Max,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SyncUnit {
    /// Count gradient updates.
    Steps,
    /// Count passes over the training routes.
    Epochs,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub gamma: f64,
    pub buffer_capacity: usize,
    pub target_update: u64,
    pub sync_unit: SyncUnit,
    /// Requests between gradient updates.
    pub train_step: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub epochs: usize,
    pub huber_delta: f64,
    pub contrastive_weight: f64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub target_form: TargetForm,
    /// Minimum buffer fill before the first update.
    pub warmup: usize,
    pub grad_clip: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.9,
            buffer_capacity: 500_000,
            target_update: 2_000,
            sync_unit: SyncUnit::Steps,
            train_step: 4,
            batch_size: 512,
            lr: 1e-4,
            epochs: 100,
            huber_delta: 1.0,
            contrastive_weight: 0.1,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_decay_steps: 50_000,
            target_form: TargetForm::Double,
            warmup: 1_000,
            grad_clip: 10.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum Neighborhood {
    Eight,
    Four,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub enabled: bool,
    pub subsets: usize,
    pub metasets: usize,
    pub kappa_s: f64,
    pub kappa_m: f64,
    pub circles: usize,
    pub epochs_per_circle: usize,
    pub tolerance: f64,
    pub neighborhood: Neighborhood,
}

impl Default for CurriculumConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            subsets: 8,
            metasets: 4,
            kappa_s: 0.5,
            kappa_m: 0.4,
            circles: 3,
            epochs_per_circle: 100,
            tolerance: 1e-3,
            neighborhood: Neighborhood::Eight,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub seed: u64,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Seconds between simulated requests.
    pub interval_s: f64,
    /// Early-stopping tolerance on validation MAPE (percentage points).
    pub tolerance: f64,
    /// Cap on validation routes used per early-stopping check (0 = all).
    pub max_validation_routes: usize,
    /// Epochs without an improvement above `tolerance` before stopping.
    pub patience: usize,
    pub grad_clip: f64,
    /// Cap on training routes replayed by the agent (0 = all).
    pub agent_routes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            lr: 1e-4,
            epochs: 100,
            batch_size: 512,
            interval_s: 30.0,
            tolerance: 1e-3,
            max_validation_routes: 0,
            patience: 5,
            grad_clip: 5.0,
            agent_routes: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub interval_s: f64,
    pub sweep_intervals_s: Vec<f64>,
    pub case_study_k: usize,
    pub scalability_fractions: Vec<f64>,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            interval_s: 30.0,
            sweep_intervals_s: vec![15.0, 30.0, 60.0, 120.0, 180.0],
            case_study_k: 50,
            scalability_fractions: vec![0.2, 0.4, 0.6, 0.8, 1.0],
            seed: 7,
        }
    }
}

fn check(cond: bool, field: &str, what: &str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::Config(format!("{field}: {what}")))
    }
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    /// Applies `section.key=value` overrides (flags win over the file).
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        if overrides.is_empty() {
            return Ok(self.clone());
        }
        let mut root: toml::Table = toml::from_str(&self.to_toml_string()).map_err(|e| Error::Config(e.to_string()))?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{ov}` is not key=value")))?;
            let path: Vec<&str> = key.trim().split('.').collect();
            let value = parse_value(raw.trim());
            let mut table = &mut root;
            for part in &path[..path.len() - 1] {
                table = table
                    .get_mut(*part)
                    .and_then(toml::Value::as_table_mut)
                    .ok_or_else(|| Error::Config(format!("{key}: unknown section `{part}`")))?;
            }
            let leaf = path[path.len() - 1];
            if !table.contains_key(leaf) {
                return Err(Error::Config(format!("{key}: unknown field")));
            }
            table.insert(leaf.to_string(), value);
        }
        let text = toml::to_string(&root).map_err(|e| Error::Config(e.to_string()))?;
        Self::from_toml_str(&text)
    }

    /// Hex SHA-256 of the canonical TOML rendering.
    pub fn content_hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml_string().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.data;
        check(d.grid_size >= 2, "data.grid_size", "must be ≥ 2")?;
        check(d.n_routes >= 1, "data.n_routes", "must be ≥ 1")?;
        let mix = &d.profile_mix;
        check(
            mix.constant >= 0.0 && mix.regime_shift >= 0.0 && (mix.constant + mix.regime_shift - 1.0).abs() < 1e-9,
            "data.profile_mix",
            "fractions must be non-negative and sum to 1",
        )?;
        check(
            d.min_segments >= 1 && d.min_segments <= d.mean_segments && d.mean_segments <= d.max_segments,
            "data.mean_segments",
            "need 1 ≤ min ≤ mean ≤ max",
        )?;
        check(
            d.slot_minutes > 0 && 60 % d.slot_minutes == 0,
            "data.slot_minutes",
            "must divide 60",
        )?;
        check(d.n_days >= 1, "data.n_days", "must be ≥ 1")?;
        let r = d.split_ratios;
        check(
            r.iter().all(|x| *x >= 0.0) && (r.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            "data.split_ratios",
            "must be non-negative and sum to 1",
        )?;

        let m = &self.model;
        check(m.heads >= 1, "model.heads", "must be ≥ 1")?;
        check(
            m.d_model.is_multiple_of(m.heads),
            "model.d_model",
            "must be divisible by model.heads",
        )?;
        check(m.temperature > 0.0, "model.temperature", "must be > 0")?;
        let p = &self.predictor;
        check(
            p.heads >= 1 && p.d_model.is_multiple_of(p.heads),
            "predictor.d_model",
            "must be divisible by predictor.heads",
        )?;

        let rw = &self.reward;
        check(rw.omega_p <= 0.0, "reward.omega_p", "must be ≤ 0")?;
        check(rw.alpha > 0.0, "reward.alpha", "must be > 0")?;
        check(rw.beta < 0.0, "reward.beta", "must be < 0")?;
        check(
            rw.performance_scale_s > 0.0,
            "reward.performance_scale_s",
            "must be > 0",
        )?;

        let a = &self.agent;
        check(a.gamma > 0.0 && a.gamma <= 1.0, "agent.gamma", "must lie in (0, 1]")?;
        check(a.buffer_capacity >= 1, "agent.buffer_capacity", "must be ≥ 1")?;
        check(a.batch_size >= 1, "agent.batch_size", "must be ≥ 1")?;
        check(a.train_step >= 1, "agent.train_step", "must be ≥ 1")?;
        check(a.target_update >= 1, "agent.target_update", "must be ≥ 1")?;
        check(a.huber_delta > 0.0, "agent.huber_delta", "must be > 0")?;
        check(a.contrastive_weight >= 0.0, "agent.contrastive_weight", "must be ≥ 0")?;
        for (v, name) in [
            (a.epsilon_start, "agent.epsilon_start"),
            (a.epsilon_end, "agent.epsilon_end"),
        ] {
            check((0.0..=1.0).contains(&v), name, "must lie in [0, 1]")?;
        }

        let c = &self.curriculum;
        check(c.subsets >= 1, "curriculum.subsets", "must be ≥ 1")?;
        check(c.metasets >= 1, "curriculum.metasets", "must be ≥ 1")?;
        for (v, name) in [(c.kappa_s, "curriculum.kappa_s"), (c.kappa_m, "curriculum.kappa_m")] {
            check(v > 0.0 && v < 1.0, name, "must lie in (0, 1)")?;
        }
        check(c.circles >= 1, "curriculum.circles", "must be ≥ 1")?;

        let t = &self.train;
        check(t.interval_s > 0.0, "train.interval_s", "must be > 0")?;
        check(t.batch_size >= 1, "train.batch_size", "must be ≥ 1")?;
        check(t.lr > 0.0, "train.lr", "must be > 0")?;
        check(t.patience >= 1, "train.patience", "must be ≥ 1")?;
        let e = &self.eval;
        check(e.interval_s > 0.0, "eval.interval_s", "must be > 0")?;
        check(
            e.sweep_intervals_s.iter().all(|x| *x > 0.0),
            "eval.sweep_intervals_s",
            "must be positive",
        )?;
        check(
            e.scalability_fractions.iter().all(|x| *x > 0.0 && *x <= 1.0),
            "eval.scalability_fractions",
            "must lie in (0, 1]",
        )?;
        Ok(())
    }
}

fn parse_value(raw: &str) -> toml::Value {
    let probe = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&probe) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        Config::default().validate().unwrap();
    }

    #[test]
    fn override_replaces_value() {
        let cfg = Config::default()
            .with_overrides(&["agent.gamma=0.5", "reward.performance_mode=raw_diff"])
            .unwrap();
        assert_eq!(cfg.agent.gamma, 0.5);
        assert_eq!(cfg.reward.performance_mode, PerformanceMode::RawDiff);
    }

    #[test]
    fn unknown_field_is_named() {
        let err = Config::default().with_overrides(&["agent.gama=0.5"]).unwrap_err();
        assert!(err.to_string().contains("agent.gama"), "{err}");
        let err = Config::from_toml_str("[agent]\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
    }

    #[test]
    fn invalid_value_is_named() {
        let err = Config::default().with_overrides(&["reward.alpha=-1.0"]).unwrap_err();
        assert!(err.to_string().contains("reward.alpha"), "{err}");
        let err = Config::default()
            .with_overrides(&["data.profile_mix.constant=0.9"])
            .unwrap_err();
        assert!(err.to_string().contains("profile_mix"), "{err}");
    }

    #[test]
    fn toml_round_trip_and_hash_stability() {
        let cfg = Config::default();
        let again = Config::from_toml_str(&cfg.to_toml_string()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.content_hash(), again.content_hash());
        let other = cfg.with_overrides(&["train.seed=8"]).unwrap();
        assert_ne!(cfg.content_hash(), other.content_hash());
    }
}
