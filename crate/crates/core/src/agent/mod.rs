//! Double DQN decision maker.

mod dqn;
mod state;
mod tabular;

use crate::error::Result;
use crate::grad::{ParamStore, Tape, Var};
use crate::nn::DecisionNet;

pub use dqn::{argmax2, combined_loss, epsilon_at, huber_td_loss, DqnAgent, LossParts, QModel};
pub use state::AgentState;
pub use tabular::TabularQ;

impl QModel for DecisionNet {
    type State = AgentState;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn q_values(&self, state: &AgentState) -> Result<[f64; 2]> {
        DecisionNet::q_values(self, state)
    }

    fn forward_batch(&self, tape: &mut Tape<'_>, states: &[&AgentState], with_aux: bool) -> Result<(Var, Option<Var>)> {
        let outs = states
            .iter()
            .map(|s| self.forward(tape, s))
            .collect::<Result<Vec<_>>>()?;
        let qs: Vec<Var> = outs.iter().map(|o| o.q).collect();
        let q = tape.concat_rows(&qs);
        let aux = with_aux.then(|| self.contrastive_loss(tape, &outs));
        Ok((q, aux))
    }
}

/// Decision-maker agent used by the training and evaluation pipelines.
pub type Agent = DqnAgent<DecisionNet>;
