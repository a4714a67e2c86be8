//! Fixtures shared by the benchmarks.

use cbrnn::attraction::{Condition, ItemMeasure};
use cbrnn::trainer::TrainingSequence;
use cbrnn::{Model, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const VOCAB: usize = 1000;
pub const TAGS: usize = 50;

pub fn model(variant: Variant, hidden_dim: usize) -> Model {
    Model::new(ModelConfig::new(variant, VOCAB, TAGS, hidden_dim).with_seed(1)).expect("valid benchmark config")
}

pub fn tokens(len: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(0..VOCAB)).collect()
}

/// A sequence of `inputs + 1` tokens with every input position tagged.
pub fn sequence(inputs: usize, seed: u64) -> TrainingSequence {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    TrainingSequence { tokens: tokens(inputs + 1, seed), tags: (0..inputs).map(|_| rng.gen_range(1..TAGS)).collect() }
}

/// Full eight-condition measures for `items` items and `seeds` seeds.
pub fn measures(items: usize, seeds: u64) -> Vec<ItemMeasure> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut out = Vec::new();
    for item in 0..items {
        for seed in 1..=seeds {
            for condition in Condition::ALL {
                let v: f64 = rng.gen_range(0.2..0.8);
                out.push(ItemMeasure {
                    item: item.to_string(),
                    condition,
                    seed,
                    alpha: 1.0,
                    rel_attn: v,
                    surprisal: 4.0 + v,
                    attn_subj: 0.3 * v,
                    attn_nonsubj: 0.3 * (1.0 - v),
                });
            }
        }
    }
    out
}
