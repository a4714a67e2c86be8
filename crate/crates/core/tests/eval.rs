mod common;

use cbrnn::attraction::*;
use cbrnn::corpus::{DependencyRecord, TokenSequence};
use cbrnn::eval::*;
use cbrnn::model::neg_log_softmax;
use cbrnn::synth::{attraction_items, generate_documents, GrammarConfig};
use cbrnn::trainer::{sequences_from_tagged, train, TrainConfig};
use cbrnn::{Model, ModelConfig, Variant};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn trained_toy() -> (cbrnn::Vocabulary, Model, Vec<TokenSequence>) {
    let (vocab, corpus) = common::synth_corpus(40, 3, &GrammarConfig::default());
    let base = ModelConfig::new(Variant::CbrRnn, vocab.len(), corpus.tags.len(), 12).with_seed(2);
    let cfg = TrainConfig { alpha: 1.0, epochs: 2, ..TrainConfig::default() };
    let (model, _) = train(Model::new(base).unwrap(), &sequences_from_tagged(&corpus, 128), &cfg).unwrap();
    let docs = corpus.docs.iter().map(|(t, _)| t.clone()).collect();
    (vocab, model, docs)
}

#[test]
fn perplexity_is_exp_of_mean_surprisal() {
    let (_, model, docs) = trained_toy();
    let held = &docs[..10];
    let (mut sum, mut n) = (0.0, 0usize);
    for d in held {
        let outputs = model.forward_sequence(&d.ids).unwrap();
        for (i, o) in outputs.iter().take(d.ids.len() - 1).enumerate() {
            sum += neg_log_softmax(&o.lm_logits, d.ids[i + 1]);
            n += 1;
        }
    }
    let expected = (sum / n as f64).exp();
    let got = perplexity(&model, held).unwrap();
    assert!((got - expected).abs() <= 1e-9 * expected, "{got} vs {expected}");
}

fn toy_dependencies() -> (Vec<TokenSequence>, Vec<DependencyRecord>) {
    let docs = generate_documents(300, 4, 9, &GrammarConfig::default());
    let records: Vec<DependencyRecord> = docs.iter().enumerate().flat_map(|(i, d)| d.dependency_records(i)).collect();
    let tokens = docs.iter().enumerate().map(|(i, d)| TokenSequence { doc_id: i, ids: vec![2; d.words().len()] }).collect();
    (tokens, records)
}

#[test]
fn any_token_baseline_matches_monte_carlo() {
    let (_, records) = toy_dependencies();
    let chance = chance_baselines(&records, BucketBy::Length).last().unwrap().chance_token;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let draws = 100_000;
    let hits = (0..draws)
        .filter(|_| {
            let r = &records[rng.gen_range(0..records.len())];
            rng.gen_range(0..r.verb_pos) == r.subj_pos
        })
        .count();
    let mc = hits as f64 / draws as f64;
    assert!((mc - chance).abs() < 0.005, "monte carlo {mc} vs closed form {chance}");
}

#[test]
fn noun_baseline_matches_monte_carlo() {
    let (_, records) = toy_dependencies();
    let chance = chance_baselines(&records, BucketBy::Length).last().unwrap().chance_noun.unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let draws = 100_000;
    let hits = (0..draws)
        .filter(|_| {
            let r = &records[rng.gen_range(0..records.len())];
            let (lo, hi) = r.span();
            let nouns: Vec<usize> = r.noun_positions.as_ref().unwrap().iter().copied().filter(|&p| p >= lo && p < hi).collect();
            nouns[rng.gen_range(0..nouns.len())] == r.subj_pos
        })
        .count();
    let mc = hits as f64 / draws as f64;
    assert!((mc - chance).abs() < 0.005, "monte carlo {mc} vs closed form {chance}");
}

#[test]
fn bucket_rows_aggregate_to_the_overall_row() {
    let (docs, records) = toy_dependencies();
    for by in [BucketBy::Length, BucketBy::Intervening] {
        let eval = subject_attention_rate(&RandomAttention { seed: 4 }, &docs, &records, by).unwrap();
        let (buckets, overall) = eval.rows.split_at(eval.rows.len() - 1);
        let overall = &overall[0];
        assert_eq!(buckets.iter().map(|r| r.n).sum::<usize>(), overall.n);
        assert_eq!(buckets.iter().map(|r| r.hits.unwrap()).sum::<usize>(), overall.hits.unwrap());
        let weighted: f64 = buckets.iter().map(|r| r.subject_rate.unwrap() * r.n as f64).sum::<f64>() / overall.n as f64;
        assert!((weighted - overall.subject_rate.unwrap()).abs() < 1e-12);
    }
}

#[test]
fn ablated_model_rate_is_undefined() {
    let (docs, records) = toy_dependencies();
    let model = Model::new(ModelConfig::new(Variant::CbrRnnAblated, 40, 8, 6)).unwrap();
    let eval = subject_attention_rate(&model, &docs, &records[..20], BucketBy::Length).unwrap();
    assert!(eval.rows.iter().all(|r| r.subject_rate.is_none() && r.hits.is_none()));
    assert!(format_dependency_results(&eval.rows).lines().skip(1).all(|l| l.split('\t').nth(2) == Some("NA")));
}

#[test]
fn model_probe_agrees_with_attention_at() {
    let (vocab, model, _) = trained_toy();
    let docs = generate_documents(5, 3, 21, &GrammarConfig::default());
    for (i, d) in docs.iter().enumerate() {
        let ids = vocab.ids(d.words());
        for r in d.dependency_records(i) {
            let via_probe = model.attention(i, &ids, r.verb_pos).unwrap().unwrap();
            let outputs = model.forward_sequence(&ids).unwrap();
            assert_eq!(via_probe, outputs[r.verb_pos].attention);
        }
    }
}

#[test]
fn measures_recompute_rel_attn_from_raw_weights() {
    let (vocab, model, _) = trained_toy();
    let items = attraction_items(6, 2);
    let runs = [CheckpointRun { seed: 2, alpha: 1.0, model: model.clone() }];
    let measures = run_stimuli(&runs, &vocab, &items).unwrap();
    assert_eq!(measures.len(), items.len());
    for m in &measures {
        let item = items.iter().find(|i| i.item_id == m.item && i.condition == m.condition).unwrap();
        let ids = vocab.ids(item.tokens.iter().map(String::as_str));
        let attn = model.attention_at(&ids, item.verb_pos).unwrap().unwrap();
        assert_eq!(m.attn_subj, attn[item.subj_pos]);
        assert_eq!(m.attn_nonsubj, attn[item.attractor_pos]);
        assert_eq!(m.rel_attn, attn[item.subj_pos] / (attn[item.subj_pos] + attn[item.attractor_pos]));
        assert!((m.surprisal - model.surprisal(&ids, item.verb_pos).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn ablated_measures_have_no_attention() {
    let (vocab, _, _) = trained_toy();
    let model = Model::new(ModelConfig::new(Variant::CbrRnnAblated, vocab.len(), 8, 6)).unwrap();
    let measures = run_stimuli(&[CheckpointRun { seed: 1, alpha: 0.0, model }], &vocab, &attraction_items(2, 1)).unwrap();
    assert!(measures.iter().all(|m| m.rel_attn.is_nan() && m.surprisal.is_finite()));
}
