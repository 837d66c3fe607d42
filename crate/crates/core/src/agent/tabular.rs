use super::dqn::QModel;
use crate::error::{Error, Result};
use crate::grad::{ParamId, ParamStore, Tape, Var};

/// Lookup-table Q function over a small discrete state space.
#[derive(Clone, Debug)]
pub struct TabularQ {
    store: ParamStore,
    table: ParamId,
    n_states: usize,
}

impl TabularQ {
    pub fn new(n_states: usize) -> Self {
        let mut store = ParamStore::new();
        let table = store.add_zeros("q_table", n_states, 2);
        Self { store, table, n_states }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn table(&self) -> &crate::grad::Mat {
        self.store.get(self.table)
    }
}

impl QModel for TabularQ {
    type State = usize;

    fn params(&self) -> &ParamStore {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn q_values(&self, state: &usize) -> Result<[f64; 2]> {
        if *state >= self.n_states {
            return Err(Error::Data(format!("state {state} outside 0..{}", self.n_states)));
        }
        let t = self.store.get(self.table);
        Ok([t[[*state, 0]], t[[*state, 1]]])
    }

    fn forward_batch(&self, tape: &mut Tape<'_>, states: &[&usize], _with_aux: bool) -> Result<(Var, Option<Var>)> {
        let rows: Vec<usize> = states.iter().map(|s| **s).collect();
        if let Some(bad) = rows.iter().find(|&&s| s >= self.n_states) {
            return Err(Error::Data(format!("state {bad} outside 0..{}", self.n_states)));
        }
        Ok((tape.gather(self.table, &rows), None))
    }
}
