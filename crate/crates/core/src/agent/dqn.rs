use rand::Rng;

use crate::config::{AgentConfig, TargetForm};
use crate::error::{Error, Result};
use crate::grad::{huber_value, Adam, AdamConfig, Grads, Mat, ParamStore, Tape, Var};
use crate::replay::Transition;
use crate::reward::{LOOKUP, REPREDICT};

/// Loss components of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub td: f64,
    pub contrastive: f64,
    pub total: f64,
}

/// A parametric action-value function over two actions.
pub trait QModel: Clone {
    type State;

    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;

    /// `[Q(s, lookup), Q(s, re-predict)]`.
    fn q_values(&self, state: &Self::State) -> Result<[f64; 2]>;

    /// Builds the B×2 Q matrix of `states` on `tape`, plus an optional
    /// auxiliary loss (used for the contrastive term).
    fn forward_batch(&self, tape: &mut Tape<'_>, states: &[&Self::State], with_aux: bool)
        -> Result<(Var, Option<Var>)>;
}

pub fn huber_td_loss(q: f64, q_target: f64, delta: f64) -> f64 {
    huber_value(q - q_target, delta)
}

pub fn combined_loss(l_td: f64, l_c: f64, lambda: f64) -> f64 {
    l_td + lambda * l_c
}

pub fn argmax2(q: [f64; 2]) -> usize {
    // ties go to the cheaper action
    if q[REPREDICT] > q[LOOKUP] {
        REPREDICT
    } else {
        LOOKUP
    }
}

/// Linear annealing from `epsilon_start` to `epsilon_end`.
pub fn epsilon_at(cfg: &AgentConfig, step: u64) -> f64 {
    if cfg.epsilon_decay_steps == 0 {
        return cfg.epsilon_end;
    }
    let f = (step as f64 / cfg.epsilon_decay_steps as f64).min(1.0);
    cfg.epsilon_start + f * (cfg.epsilon_end - cfg.epsilon_start)
}

/// Double DQN agent over any [`QModel`].
#[derive(Clone, Debug)]
pub struct DqnAgent<M: QModel> {
    pub config: AgentConfig,
    pub main: M,
    pub target: M,
    pub optimizer: Adam,
    pub updates: u64,
    pub syncs: u64,
}

impl<M: QModel> DqnAgent<M> {
    /// The target starts as an exact copy of `main`.
    pub fn new(config: &AgentConfig, main: M) -> Result<Self> {
        if !(config.gamma > 0.0 && config.gamma <= 1.0) {
            return Err(Error::Config("agent.gamma: must lie in (0, 1]".into()));
        }
        if !(config.huber_delta > 0.0) {
            return Err(Error::Config("agent.huber_delta: must be > 0".into()));
        }
        let target = main.clone();
        let optimizer = Adam::new(AdamConfig::with_lr(config.lr), main.params());
        Ok(Self {
            config: config.clone(),
            main,
            target,
            optimizer,
            updates: 0,
            syncs: 0,
        })
    }

    /// ε-greedy over the main network; a memory miss forces a re-prediction.
    pub fn select_action<R: Rng + ?Sized>(
        &self,
        state: &M::State,
        epsilon: f64,
        memory_miss: bool,
        rng: &mut R,
    ) -> Result<usize> {
        if memory_miss {
            return Ok(REPREDICT);
        }
        if epsilon > 0.0 && rng.random::<f64>() < epsilon {
            return Ok(rng.random_range(0..2));
        }
        Ok(argmax2(self.main.q_values(state)?))
    }

    pub fn greedy(&self, state: &M::State) -> Result<usize> {
        Ok(argmax2(self.main.q_values(state)?))
    }

    pub fn td_target(&self, t: &Transition<M::State>) -> Result<f64> {
        let Some(next) = &t.next else {
            return Ok(t.reward);
        };
        let q_t = self.target.q_values(next)?;
        let bootstrap = match self.config.target_form {
            TargetForm::Double => q_t[argmax2(self.main.q_values(next)?)],
            TargetForm::Max => q_t[0].max(q_t[1]),
        };
        Ok(t.reward + self.config.gamma * bootstrap)
    }

    /// Builds the combined loss for `batch` with precomputed targets.
    pub fn loss_on_tape(
        &self,
        tape: &mut Tape<'_>,
        batch: &[&Transition<M::State>],
        targets: &[f64],
    ) -> Result<(Var, LossParts)> {
        let states: Vec<&M::State> = batch.iter().map(|t| &t.state).collect();
        let lambda = self.config.contrastive_weight;
        let (q, aux) = self.main.forward_batch(tape, &states, lambda > 0.0)?;
        let actions: Vec<usize> = batch.iter().map(|t| t.action).collect();
        let q_a = tape.pick(q, &actions);
        let y = tape.input(Mat::from_shape_vec((targets.len(), 1), targets.to_vec()).expect("one target per row"));
        let diff = tape.sub(q_a, y);
        let h = tape.huber(diff, self.config.huber_delta);
        let l_td = tape.mean_all(h);
        let td = tape.scalar(l_td);
        let (loss, contrastive) = match aux {
            Some(l_c) if lambda > 0.0 => {
                let c = tape.scalar(l_c);
                let scaled = tape.scale(l_c, lambda);
                (tape.add(l_td, scaled), c)
            }
            _ => (l_td, 0.0),
        };
        let total = tape.scalar(loss);
        Ok((loss, LossParts { td, contrastive, total }))
    }

    pub fn gradients(&self, batch: &[&Transition<M::State>]) -> Result<(Grads, LossParts)> {
        let targets = batch.iter().map(|t| self.td_target(t)).collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new(self.main.params());
        let (loss, parts) = self.loss_on_tape(&mut tape, batch, &targets)?;
        Ok((tape.backward(loss), parts))
    }

    /// One gradient step on the main network.
    pub fn update(&mut self, batch: &[&Transition<M::State>]) -> Result<LossParts> {
        if batch.is_empty() {
            return Err(Error::State("empty update batch".into()));
        }
        let (mut grads, parts) = self.gradients(batch)?;
        if self.config.grad_clip > 0.0 {
            grads.clip_global_norm(self.config.grad_clip);
        }
        self.optimizer.step(self.main.params_mut(), &grads);
        self.updates += 1;
        Ok(parts)
    }

    pub fn sync_target(&mut self) {
        self.target.params_mut().copy_from(self.main.params());
        self.syncs += 1;
    }

    pub fn nets_equal(&self) -> bool {
        self.main.params().bitwise_eq(self.target.params())
    }
}
