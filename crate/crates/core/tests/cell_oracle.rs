//! Three steps of a d = 2 cell with hand-set weights, checked against values
//! produced by `tests/oracles/cell_oracle.py` (plain numpy, written
//! independently of the crate).

use cbrnn::model::{Model, ModelConfig, Variant};

fn hand_value(p: usize, k: usize) -> f64 {
    0.05 * ((k * 37 + p * 11) % 17) as f64 - 0.4
}

fn hand_model() -> Model {
    let mut cfg = ModelConfig::new(Variant::CbrRnn, 3, 2, 2);
    cfg.ff_dim = 3;
    let mut model = Model::new(cfg).unwrap();
    let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
    for (p, id) in ids.into_iter().enumerate() {
        for (k, w) in model.params_mut().get_mut(id).value.data_mut().iter_mut().enumerate() {
            *w = hand_value(p, k);
        }
    }
    model
}

fn assert_close(label: &str, got: &[f64], want: &[f64]) {
    assert_eq!(got.len(), want.len(), "{label}");
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-12, "{label}: got {got:?}, want {want:?}");
    }
}

#[test]
fn three_step_hand_weights_match_reference() {
    let model = hand_model();
    let out = model.forward_sequence(&[0, 2, 1]).unwrap();

    assert!(out[0].attention.is_empty());
    assert_close("lm 1", &out[0].lm_logits, &[-0.2137256799664773, -0.07691568095605777, 0.0038324003762163147]);
    assert_close("ccg 1", &out[0].ccg_logits, &[0.006595935112480939, 0.08734401644475508]);

    assert_close("attn 2", &out[1].attention, &[1.0]);
    assert_close("lm 2", &out[1].lm_logits, &[-0.2308784362860919, -0.06297311889908014, 0.015009772957126223]);
    assert_close("ccg 2", &out[1].ccg_logits, &[0.026204522949563464, 0.10418741480576989]);

    assert_close("attn 3", &out[2].attention, &[0.49673620652629896, 0.5032637934737011]);
    assert_close("lm 3", &out[2].lm_logits, &[-0.22278867321454762, -0.07131438977638124, 0.010494840261568147]);
    assert_close("ccg 3", &out[2].ccg_logits, &[0.015342312918841902, 0.09715154295679133]);
}

#[test]
fn equal_keys_give_uniform_weights() {
    use cbrnn::autodiff::Graph;
    let model = hand_model();
    let mut g = Graph::inference(model.params());
    let mut state = model.initial_state(&mut g);
    model.step(&mut g, &mut state, 0).unwrap();
    model.step(&mut g, &mut state, 2).unwrap();
    if let cbrnn::model::ModelState::Cbr(s) = &mut state {
        s.keys[1] = s.keys[0];
    }
    let out = model.step(&mut g, &mut state, 1).unwrap().read(&g);
    assert_eq!(out.attention, vec![0.5, 0.5]);
}
