//! Per-item attention and surprisal measures at the verb.

use std::cmp::Ordering;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::stimuli::{Condition, StimulusItem};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::model::{neg_log_softmax, Model};

pub const MEASURE_HEADER: &str = "item,condition,seed,alpha,rel_attn,surprisal,attn_subj,attn_nonsubj";

/// `attn[subject] / (attn[subject] + attn[nonsubject])`.
///
/// Both positions must index into `attn`. A zero denominator is an error.
pub fn rel_attn(attn: &[f64], subject: usize, nonsubject: usize) -> Result<f64> {
    let (s, n) = match (attn.get(subject), attn.get(nonsubject)) {
        (Some(&s), Some(&n)) => (s, n),
        _ => {
            return Err(Error::Invalid(format!(
                "positions {subject} and {nonsubject} must precede the verb (context of {})",
                attn.len()
            )))
        }
    };
    rel_attn_pair(s, n)
}

pub fn rel_attn_pair(subject: f64, nonsubject: f64) -> Result<f64> {
    let denom = subject + nonsubject;
    if !(denom > 0.0) {
        return Err(Error::Invalid(format!("attention on subject and non-subject sums to {denom}")));
    }
    Ok(subject / denom)
}

/// One (item, checkpoint) observation. `rel_attn` and the raw weights are NaN
/// for models without attention or when both weights are zero.
#[derive(Clone, Debug, PartialEq)]
pub struct ItemMeasure {
    pub item: String,
    pub condition: Condition,
    pub seed: u64,
    pub alpha: f64,
    pub rel_attn: f64,
    pub surprisal: f64,
    pub attn_subj: f64,
    pub attn_nonsubj: f64,
}

/// A trained model together with the matrix cell it came from.
#[derive(Clone, Debug)]
pub struct CheckpointRun {
    pub seed: u64,
    pub alpha: f64,
    pub model: Model,
}

fn item_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        (Err(_), Err(_)) => a.cmp(b),
    }
}

/// Sorts by item (numeric ids first, by value), seed, alpha, then condition.
pub fn sort_measures(measures: &mut [ItemMeasure]) {
    measures.sort_by(|a, b| {
        item_order(&a.item, &b.item)
            .then(a.seed.cmp(&b.seed))
            .then(a.alpha.total_cmp(&b.alpha))
            .then(a.condition.cmp(&b.condition))
    });
}

/// Measures one item: a single forward pass up to and including the verb.
pub fn measure_item(model: &Model, vocab: &Vocabulary, item: &StimulusItem) -> Result<(f64, f64, f64, f64)> {
    let ids = vocab.ids(item.tokens[..=item.verb_pos].iter().map(String::as_str));
    let outputs = model.forward_sequence(&ids)?;
    let surprisal = neg_log_softmax(&outputs[item.verb_pos - 1].lm_logits, ids[item.verb_pos]);
    if !model.config().variant.has_attention() {
        return Ok((f64::NAN, surprisal, f64::NAN, f64::NAN));
    }
    let attn = &outputs[item.verb_pos].attention;
    let (s, n) = (attn[item.subj_pos], attn[item.attractor_pos]);
    let rel = rel_attn_pair(s, n).unwrap_or_else(|e| {
        log::warn!("item {} seed {}: {e}", item.item_id, model.config().seed);
        f64::NAN
    });
    Ok((rel, surprisal, s, n))
}

/// One measure per (item, run), computed in parallel and returned sorted.
pub fn run_stimuli(runs: &[CheckpointRun], vocab: &Vocabulary, items: &[StimulusItem]) -> Result<Vec<ItemMeasure>> {
    let pairs: Vec<(&CheckpointRun, &StimulusItem)> = runs.iter().flat_map(|r| items.iter().map(move |i| (r, i))).collect();
    let mut measures = pairs
        .par_iter()
        .map(|(run, item)| {
            let (rel_attn, surprisal, attn_subj, attn_nonsubj) = measure_item(&run.model, vocab, item)?;
            Ok(ItemMeasure {
                item: item.item_id.clone(),
                condition: item.condition,
                seed: run.seed,
                alpha: run.alpha,
                rel_attn,
                surprisal,
                attn_subj,
                attn_nonsubj,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    sort_measures(&mut measures);
    Ok(measures)
}

pub fn measures_to_csv(measures: &[ItemMeasure]) -> String {
    let mut sorted = measures.to_vec();
    sort_measures(&mut sorted);
    let mut s = format!("{MEASURE_HEADER}\n");
    for m in &sorted {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            m.item,
            m.condition.to_string().to_uppercase(),
            m.seed,
            m.alpha,
            m.rel_attn,
            m.surprisal,
            m.attn_subj,
            m.attn_nonsubj
        ));
    }
    s
}

pub fn measures_from_csv(text: &str, source: &str) -> Result<Vec<ItemMeasure>> {
    let mut lines = text.lines().enumerate();
    if lines.next().map(|(_, h)| h.trim_end()) != Some(MEASURE_HEADER) {
        return Err(Error::Parse { path: source.into(), line: 1, message: format!("header must be `{MEASURE_HEADER}`") });
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let bad = |m: String| Error::Parse { path: source.into(), line: i + 1, message: m };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(bad(format!("expected 8 fields, found {}", f.len())));
        }
        let num = |k: usize| f[k].parse::<f64>().map_err(|_| bad(format!("`{}` is not a number", f[k])));
        out.push(ItemMeasure {
            item: f[0].to_string(),
            condition: f[1].parse().map_err(bad)?,
            seed: f[2].parse().map_err(|_| bad(format!("`{}` is not a seed", f[2])))?,
            alpha: num(3)?,
            rel_attn: num(4)?,
            surprisal: num(5)?,
            attn_subj: num(6)?,
            attn_nonsubj: num(7)?,
        });
    }
    Ok(out)
}

/// Writes the measure table atomically.
pub fn export_csv(measures: &[ItemMeasure], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, measures_to_csv(measures)).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn import_csv(path: impl AsRef<Path>) -> Result<Vec<ItemMeasure>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    measures_from_csv(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rel_attn_examples() {
        assert_eq!(rel_attn(&[0.3, 0.3, 0.4], 0, 1).unwrap(), 0.5);
        assert!((rel_attn(&[0.6, 0.2, 0.2], 0, 1).unwrap() - 0.75).abs() < 1e-15);
        assert_eq!(rel_attn(&[0.5, 0.0, 0.5], 0, 1).unwrap(), 1.0);
        assert!(rel_attn(&[0.0, 0.0, 1.0], 0, 1).is_err());
        assert!(rel_attn(&[0.5, 0.5], 0, 2).is_err());
    }

    fn m(item: &str, seed: u64, c: Condition) -> ItemMeasure {
        ItemMeasure { item: item.into(), condition: c, seed, alpha: 1.0, rel_attn: 0.25, surprisal: 3.5, attn_subj: 0.1, attn_nonsubj: 0.3 }
    }

    #[test]
    fn csv_is_ordered_and_round_trips() {
        let ms = vec![m("10", 1, Condition::A), m("2", 2, Condition::B), m("2", 1, Condition::A)];
        let text = measures_to_csv(&ms);
        let items: Vec<&str> = text.lines().skip(1).map(|l| &l[..l.find(',').unwrap()]).collect();
        assert_eq!(items, vec!["2", "2", "10"]);
        let mut sorted = ms.clone();
        sort_measures(&mut sorted);
        assert_eq!(measures_from_csv(&text, "t").unwrap(), sorted);
        assert_eq!(measures_to_csv(&[]), format!("{MEASURE_HEADER}\n"));
    }
}
