use crate::autodiff::{Graph, Tensor, Var};

use super::Model;

/// Per-layer `(h, c)` pairs.
#[derive(Clone, Debug)]
pub struct LstmState {
    pub layers: Vec<(Var, Var)>,
    pub t: usize,
}

impl LstmState {
    pub(super) fn new(g: &mut Graph<'_>, d: usize, layers: usize) -> Self {
        let zero = g.constant(Tensor::zeros(vec![d]));
        LstmState { layers: vec![(zero, zero); layers], t: 0 }
    }
}

impl Model {
    /// Standard gated recurrence; gate rows are ordered input, forget, cell, output.
    pub(super) fn lstm_step(&self, g: &mut Graph<'_>, state: &mut LstmState, emb: Var) {
        let d = self.config.hidden_dim;
        let mut x = emb;
        for (layer, (h, c)) in state.layers.iter_mut().enumerate() {
            let w = g.param(self.pid(&format!("lstm.{layer}.weight")));
            let b = g.param(self.pid(&format!("lstm.{layer}.bias")));
            let xh = g.concat(&[x, *h]);
            let pre = g.matmul(w, xh);
            let pre = g.add(pre, b);
            let i = g.slice_last(pre, 0, d);
            let i = g.sigmoid(i);
            let f = g.slice_last(pre, d, d);
            let f = g.sigmoid(f);
            let cand = g.slice_last(pre, 2 * d, d);
            let cand = g.tanh(cand);
            let o = g.slice_last(pre, 3 * d, d);
            let o = g.sigmoid(o);
            let keep = g.mul(f, *c);
            let write = g.mul(i, cand);
            *c = g.add(keep, write);
            let squashed = g.tanh(*c);
            *h = g.mul(o, squashed);
            x = *h;
        }
        state.t += 1;
    }
}
