#![allow(dead_code)]

use cbrnn::autodiff::Graph;
use cbrnn::corpus::{parse_tagged_corpus, TaggedCorpus, Vocabulary};
use cbrnn::model::{Model, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use cbrnn::synth::{generate, lexicon, token_lines, GrammarConfig};

/// Central finite differences of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let up = f(&probe);
            probe[i] = x[i] - step;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Relative error. Below 1e-5 the scale is floored: central differences of
/// an O(10) loss at step 1e-5 carry ~1e-10 of rounding noise, so vanishing
/// gradients are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5)
}

/// Sum of next-word and supertag cross entropies over a sequence, evaluated
/// without recording gradients.
pub fn sequence_loss(model: &Model, tokens: &[usize], tags: &[usize]) -> f64 {
    let mut g = Graph::inference(model.params());
    let mut state = model.initial_state(&mut g);
    let mut total = 0.0;
    for i in 0..tokens.len() - 1 {
        let out = model.step(&mut g, &mut state, tokens[i]).unwrap();
        let lm = g.cross_entropy(out.lm_logits, tokens[i + 1]).unwrap();
        let ccg = g.cross_entropy(out.ccg_logits, tags[i]).unwrap();
        total += g.scalar(lm) + g.scalar(ccg);
    }
    total
}

/// Flattened parameter vector of `model`.
pub fn flat_params(model: &Model) -> Vec<f64> {
    model.params().iter().flat_map(|(_, p)| p.value.data().to_vec()).collect()
}

pub fn set_flat_params(model: &mut Model, flat: &[f64]) {
    let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
    let mut offset = 0;
    for id in ids {
        let p = model.params_mut().get_mut(id);
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&flat[offset..offset + n]);
        offset += n;
    }
}

/// Vocabulary over the whole grammar lexicon and a tagged corpus of `n`
/// generated sentences, one document per sentence.
pub fn synth_corpus(n: usize, seed: u64, cfg: &GrammarConfig) -> (Vocabulary, TaggedCorpus) {
    let sentences = generate(n, seed, cfg);
    let words = token_lines(sentences.iter().map(|s| s.words.iter().map(String::as_str).collect()));
    let tags = token_lines(sentences.iter().map(|s| s.tags.iter().map(String::as_str).collect()));
    let vocab = Vocabulary::build(lexicon(), 1000).unwrap();
    let corpus = parse_tagged_corpus(&words, &tags, &vocab, None).unwrap();
    (vocab, corpus)
}

/// Worst relative error between backpropagated and central-difference
/// gradients of the summed LM and CCG loss, over every weight of a small
/// randomly drawn model (d <= 8) on a random 5 to 7 token sequence.
pub fn model_gradient_error(variant: Variant, seed: u64, step: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let d = rng.gen_range(2..=8);
    let vocab = rng.gen_range(4..=10);
    let tags = rng.gen_range(2..=5);
    let len = rng.gen_range(5..=7);
    let mut cfg = ModelConfig::new(variant, vocab, tags, d).with_seed(seed);
    cfg.ff_dim = rng.gen_range(2..=2 * d);
    cfg.scale_attention = seed % 2 == 1;
    let mut model = Model::new(cfg).unwrap();
    let tokens: Vec<usize> = (0..len).map(|_| rng.gen_range(0..vocab)).collect();
    let tag_ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..tags)).collect();

    let mut g = Graph::with_params(model.params());
    let mut state = model.initial_state(&mut g);
    let mut losses = Vec::new();
    for i in 0..len - 1 {
        let out = model.step(&mut g, &mut state, tokens[i]).unwrap();
        losses.push(g.cross_entropy(out.lm_logits, tokens[i + 1]).unwrap());
        losses.push(g.cross_entropy(out.ccg_logits, tag_ids[i]).unwrap());
    }
    let total = g.add_n(&losses);
    let grads = g.backward(total).unwrap();
    let analytic: Vec<f64> = model
        .params()
        .iter()
        .flat_map(|(id, p)| grads.get(id).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; p.value.len()]))
        .collect();
    drop(g);

    let base = flat_params(&model);
    let numeric = numeric_gradient(
        |x| {
            set_flat_params(&mut model, x);
            sequence_loss(&model, &tokens, &tag_ids)
        },
        &base,
        step,
    );
    analytic.iter().zip(&numeric).map(|(a, n)| rel_err(*a, *n)).fold(0.0, f64::max)
}
