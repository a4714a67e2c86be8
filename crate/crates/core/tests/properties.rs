use cbrnn::attraction::*;
use cbrnn::trainer::chunk_documents;
use cbrnn::{Model, ModelConfig, Variant};
use proptest::prelude::*;

const VOCAB: usize = 11;

fn model(variant: Variant, seed: u64) -> Model {
    Model::new(ModelConfig::new(variant, VOCAB, 5, 6).with_seed(seed)).unwrap()
}

fn tokens(max_len: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(0..VOCAB, 1..max_len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn outputs_ignore_future_tokens(seq in tokens(14), cut in 0usize..14, seed in 0u64..4, replacement in tokens(14)) {
        let cut = cut % seq.len();
        let mut other = seq[..=cut].to_vec();
        other.extend(replacement);
        for variant in Variant::ALL {
            let m = model(variant, seed);
            let a = m.forward_sequence(&seq).unwrap();
            let b = m.forward_sequence(&other).unwrap();
            for t in 0..=cut {
                prop_assert_eq!(&a[t], &b[t]);
            }
        }
    }

    #[test]
    fn attention_is_a_distribution_over_the_past(seq in tokens(16), seed in 0u64..4, scaled in any::<bool>()) {
        let mut cfg = ModelConfig::new(Variant::CbrRnn, VOCAB, 5, 6).with_seed(seed);
        cfg.scale_attention = scaled;
        let m = Model::new(cfg).unwrap();
        for (t, out) in m.forward_sequence(&seq).unwrap().iter().enumerate() {
            prop_assert_eq!(out.attention.len(), t);
            if t > 0 {
                let total: f64 = out.attention.iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-9);
                prop_assert!(out.attention.iter().all(|&w| (0.0..=1.0).contains(&w)));
            }
        }
    }

    #[test]
    fn models_without_attention_report_none(seq in tokens(8)) {
        for variant in [Variant::CbrRnnAblated, Variant::Lstm1, Variant::Lstm2] {
            let outputs = model(variant, 1).forward_sequence(&seq).unwrap();
            prop_assert!(outputs.iter().all(|o| o.attention.is_empty()));
        }
    }

    #[test]
    fn rel_attn_is_symmetric_and_bounded(s in 1e-12f64..1.0, n in 1e-12f64..1.0) {
        let r = rel_attn_pair(s, n).unwrap();
        prop_assert!((0.0..=1.0).contains(&r));
        prop_assert!((r + rel_attn_pair(n, s).unwrap() - 1.0).abs() < 1e-12);
        prop_assert_eq!(rel_attn_pair(s, s).unwrap(), 0.5);
        prop_assert_eq!(rel_attn_pair(s, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn rel_attn_ignores_other_positions(s in 1e-6f64..1.0, n in 1e-6f64..1.0, rest in prop::collection::vec(0.0f64..1.0, 1..6)) {
        let mut attn = vec![s, n];
        attn.extend(&rest);
        let total: f64 = attn.iter().sum();
        let normalized: Vec<f64> = attn.iter().map(|w| w / total).collect();
        let direct = rel_attn(&normalized, 0, 1).unwrap();
        let mut shifted = normalized.clone();
        let moved = shifted[2] * 0.5;
        shifted[2] -= moved;
        let last = shifted.len() - 1;
        shifted[last] += moved;
        prop_assert!((direct - rel_attn(&shifted, 0, 1).unwrap()).abs() < 1e-12);
        prop_assert!((direct - s / (s + n)).abs() < 1e-12);
    }

    #[test]
    fn chunks_cover_each_document(doc in prop::collection::vec(0usize..50, 0..40), max_len in 1usize..9) {
        let chunks = chunk_documents([(&doc[..], None)], max_len);
        let mut rebuilt: Vec<usize> = Vec::new();
        for (i, c) in chunks.iter().enumerate() {
            prop_assert!(c.inputs() >= 1 && c.inputs() <= max_len);
            if i == 0 {
                rebuilt.extend(&c.tokens);
            } else {
                prop_assert_eq!(rebuilt.last(), c.tokens.first());
                rebuilt.extend(&c.tokens[1..]);
            }
        }
        let targets: usize = chunks.iter().map(|c| c.inputs()).sum();
        prop_assert_eq!(targets, doc.len().saturating_sub(1));
        if doc.len() > 1 {
            prop_assert_eq!(rebuilt, doc);
        }
    }

    #[test]
    fn contrasts_do_not_depend_on_row_order(shift in -0.2f64..0.2, seed in 0u64..1000) {
        let mut measures = Vec::new();
        for item in 0..6 {
            for (k, c) in [Condition::A, Condition::B].into_iter().enumerate() {
                let v = 0.5 + shift * k as f64 + 0.01 * ((item * 7 + k * 3) % 5) as f64;
                measures.push(ItemMeasure {
                    item: item.to_string(),
                    condition: c,
                    seed: 1,
                    alpha: 1.0,
                    rel_attn: v,
                    surprisal: v,
                    attn_subj: v,
                    attn_nonsubj: 1.0 - v,
                });
            }
        }
        let cfg = BootstrapConfig { resamples: 200, seed, ..BootstrapConfig::default() };
        let forward = contrasts(&measures, &cfg);
        measures.reverse();
        prop_assert_eq!(forward, contrasts(&measures, &cfg));
    }
}
