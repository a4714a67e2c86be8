use crate::autodiff::{Graph, Tensor, Var};
use crate::error::Result;

use super::Model;

/// Hidden vector plus the append-only key and value caches.
#[derive(Clone, Debug)]
pub struct CbrState {
    pub h: Var,
    pub keys: Vec<Var>,
    pub values: Vec<Var>,
    pub t: usize,
    /// Attention reads performed so far (one per step for the full model).
    pub retrievals: usize,
    zero: Var,
}

impl CbrState {
    pub(super) fn new(g: &mut Graph<'_>, d: usize) -> Self {
        let zero = g.constant(Tensor::zeros(vec![d]));
        CbrState { h: zero, keys: Vec::new(), values: Vec::new(), t: 0, retrievals: 0, zero }
    }

    pub fn cache_len(&self) -> usize {
        debug_assert_eq!(self.keys.len(), self.values.len());
        self.keys.len()
    }
}

impl Model {
    /// Single retrieval over the caches. Empty memory yields the zero vector
    /// and no weights.
    fn retrieve(&self, g: &mut Graph<'_>, state: &mut CbrState, query: Var) -> (Var, Option<Var>) {
        state.retrievals += 1;
        if state.keys.is_empty() {
            return (state.zero, None);
        }
        let keys = g.stack_rows(&state.keys);
        let mut scores = g.matmul(keys, query);
        if self.config.scale_attention {
            scores = g.scale(scores, 1.0 / (self.config.hidden_dim as f64).sqrt());
        }
        let weights = g.softmax(scores, 0);
        let values = g.stack_rows(&state.values);
        (g.matmul(weights, values), Some(weights))
    }

    pub(super) fn cbr_step(
        &self,
        g: &mut Graph<'_>,
        state: &mut CbrState,
        emb: Var,
        attend: bool,
    ) -> Result<Option<Var>> {
        let qx = g.concat(&[emb, state.h]);
        let (qw, qb) = (g.param(self.pid("query.weight")), g.param(self.pid("query.bias")));
        let q = g.matmul(qw, qx);
        let q = g.add(q, qb);
        let query = g.tanh(q);

        let (context, weights) = if attend { self.retrieve(g, state, query) } else { (state.zero, None) };

        let ff_in = if self.config.ff_includes_hidden {
            g.concat(&[context, emb, query, state.h])
        } else {
            g.concat(&[context, emb, query])
        };
        let (w1, b1) = (g.param(self.pid("ff1.weight")), g.param(self.pid("ff1.bias")));
        let (w2, b2) = (g.param(self.pid("ff2.weight")), g.param(self.pid("ff2.bias")));
        let z = g.matmul(w1, ff_in);
        let z = g.add(z, b1);
        let z = g.tanh(z);
        let z = g.matmul(w2, z);
        let z = g.add(z, b2);
        let [key, value, hidden] = g.split_thirds(z)?;

        if attend {
            state.keys.push(key);
            state.values.push(value);
        }
        state.h = hidden;
        state.t += 1;
        assert!(!attend || state.cache_len() == state.t, "cache rows out of step with time");
        Ok(weights)
    }
}
