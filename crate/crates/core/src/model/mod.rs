//! The CBR-RNN cell and its baselines.
//!
//! All variants share the same outer interface: an embedding lookup, a
//! recurrent update, and two linear heads over the hidden state (next-word
//! logits and supertag logits). Only the full CBR-RNN exposes attention.

mod cbr;
mod checkpoint;
mod lstm;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, ParamId, ParamStore, Tensor, Var};
use crate::error::{Error, Result};

pub use cbr::CbrState;
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use lstm::LstmState;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "cbr-rnn")]
    CbrRnn,
    /// CBR-RNN with the retrieved context forced to zero.
    #[serde(rename = "cbr-rnn-ablated")]
    CbrRnnAblated,
    #[serde(rename = "lstm-1")]
    Lstm1,
    #[serde(rename = "lstm-2")]
    Lstm2,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::CbrRnn, Variant::CbrRnnAblated, Variant::Lstm1, Variant::Lstm2];

    pub fn name(self) -> &'static str {
        match self {
            Variant::CbrRnn => "cbr-rnn",
            Variant::CbrRnnAblated => "cbr-rnn-ablated",
            Variant::Lstm1 => "lstm-1",
            Variant::Lstm2 => "lstm-2",
        }
    }

    pub fn has_attention(self) -> bool {
        self == Variant::CbrRnn
    }

    fn lstm_layers(self) -> usize {
        match self {
            Variant::Lstm1 => 1,
            Variant::Lstm2 => 2,
            _ => 0,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown model variant `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub variant: Variant,
    pub vocab_size: usize,
    /// Supertag classes, including the no-tag sentinel.
    pub tag_count: usize,
    pub embed_dim: usize,
    /// Hidden width `d`; keys and values share it.
    pub hidden_dim: usize,
    /// Width of the first of the two post-retrieval layers (CBR variants).
    pub ff_dim: usize,
    pub seed: u64,
    /// Divide attention scores by sqrt(d).
    #[serde(default)]
    pub scale_attention: bool,
    /// Feed the previous hidden state into the post-retrieval layers.
    #[serde(default = "default_true")]
    pub ff_includes_hidden: bool,
}

fn default_true() -> bool {
    true
}

impl ModelConfig {
    /// Embedding width equals `hidden_dim`; the first post-retrieval layer is `4 * hidden_dim` wide.
    pub fn new(variant: Variant, vocab_size: usize, tag_count: usize, hidden_dim: usize) -> Self {
        ModelConfig {
            variant,
            vocab_size,
            tag_count,
            embed_dim: hidden_dim,
            hidden_dim,
            ff_dim: 4 * hidden_dim,
            seed: 0,
            scale_attention: false,
            ff_includes_hidden: true,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_size", self.vocab_size),
            ("tag_count", self.tag_count),
            ("embed_dim", self.embed_dim),
            ("hidden_dim", self.hidden_dim),
            ("ff_dim", self.ff_dim),
        ];
        match dims.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(Error::Config(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }

    /// Width of the input to the first post-retrieval layer.
    fn ff_input_dim(&self) -> usize {
        let d = self.hidden_dim;
        d + self.embed_dim + d + if self.ff_includes_hidden { d } else { 0 }
    }

    /// Parameter names and shapes in creation order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (v, t, e, d) = (self.vocab_size, self.tag_count, self.embed_dim, self.hidden_dim);
        let mut shapes = vec![("embed.weight".to_string(), vec![v, e])];
        match self.variant {
            Variant::CbrRnn | Variant::CbrRnnAblated => {
                shapes.push(("query.weight".into(), vec![d, e + d]));
                shapes.push(("query.bias".into(), vec![d]));
                shapes.push(("ff1.weight".into(), vec![self.ff_dim, self.ff_input_dim()]));
                shapes.push(("ff1.bias".into(), vec![self.ff_dim]));
                shapes.push(("ff2.weight".into(), vec![3 * d, self.ff_dim]));
                shapes.push(("ff2.bias".into(), vec![3 * d]));
            }
            Variant::Lstm1 | Variant::Lstm2 => {
                for layer in 0..self.variant.lstm_layers() {
                    let input = if layer == 0 { e } else { d };
                    shapes.push((format!("lstm.{layer}.weight"), vec![4 * d, input + d]));
                    shapes.push((format!("lstm.{layer}.bias"), vec![4 * d]));
                }
            }
        }
        shapes.push(("lm_head.weight".into(), vec![v, d]));
        shapes.push(("lm_head.bias".into(), vec![v]));
        shapes.push(("ccg_head.weight".into(), vec![t, d]));
        shapes.push(("ccg_head.bias".into(), vec![t]));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.param_shapes().iter().map(|(_, s)| s.iter().product::<usize>()).sum()
    }

    /// Two-layer LSTM whose width brings its parameter count closest to `self`.
    pub fn matched_lstm2(&self) -> ModelConfig {
        let target = self.param_count() as i64;
        let candidate = |w: usize| ModelConfig {
            variant: Variant::Lstm2,
            embed_dim: w,
            hidden_dim: w,
            ff_dim: w,
            ..self.clone()
        };
        let mut best = candidate(1);
        let mut best_gap = i64::MAX;
        for w in 1..=4 * self.hidden_dim.max(self.embed_dim) {
            let c = candidate(w);
            let gap = (c.param_count() as i64 - target).abs();
            if gap < best_gap {
                best_gap = gap;
                best = c;
            }
        }
        best
    }
}

/// Per-step readout.
#[derive(Clone, Debug, PartialEq)]
pub struct StepOutput {
    pub lm_logits: Vec<f64>,
    pub ccg_logits: Vec<f64>,
    /// Weights over positions `0..t-1`; empty at the first step and for variants without attention.
    pub attention: Vec<f64>,
}

/// Graph handles produced by one recurrent step.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub lm_logits: Var,
    pub ccg_logits: Var,
    pub attention: Option<Var>,
}

impl StepVars {
    pub fn read(&self, g: &Graph<'_>) -> StepOutput {
        StepOutput {
            lm_logits: g.value(self.lm_logits).to_vec(),
            ccg_logits: g.value(self.ccg_logits).to_vec(),
            attention: self.attention.map(|a| g.value(a).to_vec()).unwrap_or_default(),
        }
    }
}

/// Sequence-local recurrent state, bound to one graph.
#[derive(Clone, Debug)]
pub enum ModelState {
    Cbr(CbrState),
    Lstm(LstmState),
}

impl ModelState {
    /// Steps taken so far.
    pub fn t(&self) -> usize {
        match self {
            ModelState::Cbr(s) => s.t,
            ModelState::Lstm(s) => s.t,
        }
    }

    /// Top-layer hidden vector.
    pub fn hidden(&self) -> Var {
        match self {
            ModelState::Cbr(s) => s.h,
            ModelState::Lstm(s) => s.layers.last().expect("lstm without layers").0,
        }
    }

    pub fn cbr(&self) -> Option<&CbrState> {
        match self {
            ModelState::Cbr(s) => Some(s),
            ModelState::Lstm(_) => None,
        }
    }
}

#[derive(Clone, Debug)]
struct Heads {
    embed: ParamId,
    lm_w: ParamId,
    lm_b: ParamId,
    ccg_w: ParamId,
    ccg_b: ParamId,
}

/// Model configuration plus its parameters.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamStore,
    heads: Heads,
}

impl Model {
    /// Initializes every weight and bias from U(-1/sqrt(fan_in), 1/sqrt(fan_in)),
    /// drawn in creation order from a ChaCha8 stream seeded with `config.seed`.
    /// Embedding rows use fan-in 1.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut params = ParamStore::new();
        let mut fan_in = 1;
        for (name, shape) in config.param_shapes() {
            if name.ends_with(".weight") {
                fan_in = if name == "embed.weight" { 1 } else { shape[1] };
            }
            let bound = 1.0 / (fan_in as f64).sqrt();
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
            params.insert(name, Tensor::new(shape, data))?;
        }
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter store, checking names and shapes against `config`.
    pub fn from_params(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        let expected = config.param_shapes();
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} parameters for {}, found {}",
                expected.len(),
                config.variant,
                params.len()
            )));
        }
        for (name, shape) in &expected {
            let p = params.by_name(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter `{name}`")))?;
            if p.value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{name}` has shape {:?}, expected {shape:?}",
                    p.value.shape()
                )));
            }
        }
        let id = |n: &str| params.id(n).expect("checked above");
        let heads = Heads {
            embed: id("embed.weight"),
            lm_w: id("lm_head.weight"),
            lm_b: id("lm_head.bias"),
            ccg_w: id("ccg_head.weight"),
            ccg_b: id("ccg_head.bias"),
        };
        Ok(Model { config, params, heads })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.scalar_count()
    }

    fn pid(&self, name: &str) -> ParamId {
        self.params.id(name).unwrap_or_else(|| panic!("parameter `{name}` missing"))
    }

    /// Zero hidden state and empty caches.
    pub fn initial_state(&self, g: &mut Graph<'_>) -> ModelState {
        let d = self.config.hidden_dim;
        match self.config.variant {
            Variant::CbrRnn | Variant::CbrRnnAblated => ModelState::Cbr(CbrState::new(g, d)),
            Variant::Lstm1 | Variant::Lstm2 => ModelState::Lstm(LstmState::new(g, d, self.config.variant.lstm_layers())),
        }
    }

    /// One recurrent step on `token`, appending to the state's caches.
    pub fn step(&self, g: &mut Graph<'_>, state: &mut ModelState, token: usize) -> Result<StepVars> {
        if token >= self.config.vocab_size {
            return Err(Error::Invalid(format!("token id {token} out of range for vocabulary of {}", self.config.vocab_size)));
        }
        let table = g.param(self.heads.embed);
        let emb = g.embedding(table, token);
        let attention = match (self.config.variant, &mut *state) {
            (Variant::CbrRnn, ModelState::Cbr(s)) => self.cbr_step(g, s, emb, true)?,
            (Variant::CbrRnnAblated, ModelState::Cbr(s)) => self.cbr_step(g, s, emb, false)?,
            (Variant::Lstm1 | Variant::Lstm2, ModelState::Lstm(s)) => {
                self.lstm_step(g, s, emb);
                None
            }
            (v, _) => panic!("state does not belong to a {v} model"),
        };
        let h = state.hidden();
        let (lm_w, lm_b, ccg_w, ccg_b) = (
            g.param(self.heads.lm_w),
            g.param(self.heads.lm_b),
            g.param(self.heads.ccg_w),
            g.param(self.heads.ccg_b),
        );
        let lm = g.matmul(lm_w, h);
        let lm_logits = g.add(lm, lm_b);
        let ccg = g.matmul(ccg_w, h);
        let ccg_logits = g.add(ccg, ccg_b);
        Ok(StepVars { lm_logits, ccg_logits, attention })
    }

    /// Runs the model over `tokens` from a fresh state without recording gradients.
    pub fn forward_sequence(&self, tokens: &[usize]) -> Result<Vec<StepOutput>> {
        if tokens.is_empty() {
            return Err(Error::Empty("forward_sequence needs at least one token".into()));
        }
        let mut g = Graph::inference(&self.params);
        let mut state = self.initial_state(&mut g);
        let mut out = Vec::with_capacity(tokens.len());
        for &tok in tokens {
            let vars = self.step(&mut g, &mut state, tok)?;
            out.push(vars.read(&g));
        }
        Ok(out)
    }

    /// `-ln p(tokens[position] | tokens[..position])` in nats.
    pub fn surprisal(&self, tokens: &[usize], position: usize) -> Result<f64> {
        if position == 0 || position >= tokens.len() {
            return Err(Error::Invalid(format!(
                "surprisal position {position} must be in 1..{}",
                tokens.len()
            )));
        }
        let outputs = self.forward_sequence(&tokens[..position])?;
        Ok(neg_log_softmax(&outputs[position - 1].lm_logits, tokens[position]))
    }

    /// Surprisal of every token after the first, from a single pass.
    pub fn surprisals(&self, tokens: &[usize]) -> Result<Vec<f64>> {
        if tokens.len() < 2 {
            return Ok(Vec::new());
        }
        let outputs = self.forward_sequence(&tokens[..tokens.len() - 1])?;
        Ok(outputs.iter().zip(&tokens[1..]).map(|(o, &t)| neg_log_softmax(&o.lm_logits, t)).collect())
    }

    /// Attention weights when `tokens[position]` is the current word, or
    /// `None` for variants without attention.
    pub fn attention_at(&self, tokens: &[usize], position: usize) -> Result<Option<Vec<f64>>> {
        if !self.config.variant.has_attention() {
            return Ok(None);
        }
        if position >= tokens.len() {
            return Err(Error::Invalid(format!("position {position} beyond sequence of {}", tokens.len())));
        }
        let mut outputs = self.forward_sequence(&tokens[..=position])?;
        Ok(outputs.pop().map(|o| o.attention))
    }
}

/// `-log softmax(logits)[target]`, max-shifted.
pub fn neg_log_softmax(logits: &[f64], target: usize) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let total: f64 = logits.iter().map(|v| (v - max).exp()).sum();
    total.ln() - (logits[target] - max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(variant: Variant) -> Model {
        Model::new(ModelConfig::new(variant, 9, 4, 6).with_seed(3)).unwrap()
    }

    #[test]
    fn same_seed_same_bytes() {
        for variant in Variant::ALL {
            let a = tiny(variant);
            let b = tiny(variant);
            for ((_, pa), (_, pb)) in a.params().iter().zip(b.params().iter()) {
                let ba: Vec<u64> = pa.value.data().iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = pb.value.data().iter().map(|v| v.to_bits()).collect();
                assert_eq!(ba, bb, "{}", pa.name);
            }
        }
        let other = Model::new(ModelConfig::new(Variant::CbrRnn, 9, 4, 6).with_seed(4)).unwrap();
        assert_ne!(other.params().get(other.pid("embed.weight")).value, tiny(Variant::CbrRnn).params().get(other.pid("embed.weight")).value);
    }

    #[test]
    fn initial_state_is_empty() {
        let m = tiny(Variant::CbrRnn);
        let mut g = Graph::inference(m.params());
        let s = m.initial_state(&mut g);
        let cbr = s.cbr().unwrap();
        assert!(g.value(cbr.h).iter().all(|&v| v == 0.0));
        assert_eq!(cbr.keys.len(), 0);
        assert_eq!(cbr.values.len(), 0);
        assert_eq!(s.t(), 0);
    }

    #[test]
    fn full_scale_parameter_count() {
        // shape sums worked out by hand for V = 50000, 426 tags, d = 256, ff = 1024
        let cfg = ModelConfig::new(Variant::CbrRnn, 50_000, 426, 256);
        assert_eq!(cfg.param_count(), 27_727_610);
        let lstm1 = ModelConfig { variant: Variant::Lstm1, ..cfg.clone() };
        assert_eq!(lstm1.param_count(), 26_284_794);
        let lstm2 = cfg.matched_lstm2();
        assert_eq!(lstm2.hidden_dim, 264);
        assert_eq!(lstm2.param_count(), 27_680_138);
        let gap = (lstm2.param_count() as f64 - cfg.param_count() as f64).abs() / cfg.param_count() as f64;
        assert!(gap < 0.02);
    }

    #[test]
    fn built_model_reports_config_count() {
        for variant in Variant::ALL {
            let m = tiny(variant);
            assert_eq!(m.param_count(), m.config().param_count());
        }
    }

    #[test]
    fn first_step_has_no_memory() {
        let m = tiny(Variant::CbrRnn);
        let out = m.forward_sequence(&[4]).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].attention.is_empty());
    }

    #[test]
    fn attention_lengths_grow_and_normalize() {
        let m = tiny(Variant::CbrRnn);
        let out = m.forward_sequence(&[1, 2, 3, 4, 5, 6, 7, 8]).unwrap();
        for (t, o) in out.iter().enumerate() {
            assert_eq!(o.attention.len(), t);
            if t > 0 {
                assert!((o.attention.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_query_gives_uniform_attention() {
        let mut m = tiny(Variant::CbrRnn);
        for name in ["query.weight", "query.bias"] {
            let id = m.pid(name);
            m.params_mut().get_mut(id).value.data_mut().fill(0.0);
        }
        let out = m.forward_sequence(&[3, 5, 2]).unwrap();
        assert_eq!(out[2].attention, vec![0.5, 0.5]);
    }

    #[test]
    fn retrieval_count_is_one_per_step() {
        let m = tiny(Variant::CbrRnn);
        let mut g = Graph::inference(m.params());
        let mut s = m.initial_state(&mut g);
        for (i, tok) in [2, 7, 1, 1, 5].into_iter().enumerate() {
            m.step(&mut g, &mut s, tok).unwrap();
            let c = s.cbr().unwrap();
            assert_eq!(c.retrievals, i + 1);
            assert_eq!(c.cache_len(), i + 1);
        }
    }

    #[test]
    fn ablated_has_no_attention() {
        let m = tiny(Variant::CbrRnnAblated);
        let out = m.forward_sequence(&[1, 2, 3, 4]).unwrap();
        assert!(out.iter().all(|o| o.attention.is_empty()));
        assert_eq!(m.attention_at(&[1, 2, 3], 2).unwrap(), None);
    }

    #[test]
    fn zero_lstm_has_constant_logits() {
        for variant in [Variant::Lstm1, Variant::Lstm2] {
            let mut m = tiny(variant);
            let ids: Vec<ParamId> = m.params().iter().map(|(id, _)| id).collect();
            for id in ids {
                m.params_mut().get_mut(id).value.data_mut().fill(0.0);
            }
            let out = m.forward_sequence(&[1, 5, 3, 8]).unwrap();
            assert!(out.windows(2).all(|w| w[0].lm_logits == w[1].lm_logits && w[0].ccg_logits == w[1].ccg_logits));
        }
    }

    #[test]
    fn uniform_output_surprisal_is_log_vocab() {
        let mut m = tiny(Variant::CbrRnn);
        for name in ["lm_head.weight", "lm_head.bias"] {
            let id = m.pid(name);
            m.params_mut().get_mut(id).value.data_mut().fill(0.0);
        }
        let s = m.surprisal(&[1, 4, 2], 2).unwrap();
        assert!((s - 9f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn surprisal_matches_cross_entropy() {
        let m = tiny(Variant::CbrRnn);
        let tokens = [3, 1, 4, 1, 5];
        let out = m.forward_sequence(&tokens).unwrap();
        for pos in 1..tokens.len() {
            let mut g = Graph::new();
            let logits = g.constant(Tensor::vector(out[pos - 1].lm_logits.clone()));
            let ce = g.cross_entropy(logits, tokens[pos]).unwrap();
            let s = m.surprisal(&tokens, pos).unwrap();
            assert!((g.scalar(ce) - s).abs() < 1e-12);
            let p = (-s).exp();
            assert!((-p.ln() - s).abs() < 1e-12);
        }
        let all = m.surprisals(&tokens).unwrap();
        for pos in 1..tokens.len() {
            assert_eq!(all[pos - 1], m.surprisal(&tokens, pos).unwrap());
        }
    }

    #[test]
    fn surprisal_rejects_position_zero() {
        let m = tiny(Variant::Lstm1);
        assert!(m.surprisal(&[1, 2], 0).is_err());
        assert!(m.surprisal(&[1, 2], 2).is_err());
    }

    #[test]
    fn out_of_range_token_is_rejected() {
        let m = tiny(Variant::CbrRnn);
        assert!(m.forward_sequence(&[1, 9]).is_err());
        assert!(m.forward_sequence(&[]).is_err());
    }

    #[test]
    fn variant_names_parse() {
        for v in Variant::ALL {
            assert_eq!(v.name().parse::<Variant>().unwrap(), v);
        }
        assert!("gru".parse::<Variant>().is_err());
    }
}
