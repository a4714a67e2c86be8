//! Perplexity, supertagging accuracy and subject-verb attention tracking.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{DependencyRecord, TaggedCorpus, TokenSequence, NO_TAG};
use crate::error::{Error, Result};
use crate::model::Model;

/// `exp` of the mean next-token surprisal over every document.
pub fn perplexity(model: &Model, docs: &[TokenSequence]) -> Result<f64> {
    let per_doc = docs.par_iter().map(|d| model.surprisals(&d.ids)).collect::<Result<Vec<_>>>()?;
    let (sum, n) = per_doc.iter().flatten().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        return Err(Error::Empty("perplexity needs at least one predicted token".into()));
    }
    Ok((sum / n as f64).exp())
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(xs: &[f64]) -> Option<usize> {
    xs.iter().enumerate().fold(None, |best, (i, &x)| match best {
        Some((_, b)) if b >= x => best,
        _ => Some((i, x)),
    })
    .map(|(i, _)| i)
}

/// Share of `(logits, gold)` pairs whose argmax is the gold tag. Pairs with
/// gold [`NO_TAG`] are ignored.
pub fn tagging_accuracy<'a>(pairs: impl IntoIterator<Item = (&'a [f64], usize)>) -> Result<f64> {
    let (mut hit, mut n) = (0usize, 0usize);
    for (logits, gold) in pairs {
        if gold == NO_TAG {
            continue;
        }
        n += 1;
        hit += usize::from(argmax(logits) == Some(gold));
    }
    if n == 0 {
        return Err(Error::Empty("no tagged positions".into()));
    }
    Ok(hit as f64 / n as f64)
}

pub fn ccg_accuracy(model: &Model, corpus: &TaggedCorpus) -> Result<f64> {
    let per_doc = corpus
        .docs
        .par_iter()
        .map(|(tokens, tags)| {
            let outputs = model.forward_sequence(&tokens.ids)?;
            Ok(outputs.into_iter().zip(tags.ids.iter().copied()).map(|(o, t)| (o.ccg_logits, t)).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    tagging_accuracy(per_doc.iter().flatten().map(|(l, t)| (l.as_slice(), *t)))
}

/// Anything that can report attention weights at a position of a document.
pub trait AttentionProbe: Sync {
    /// Weights over positions `0..position` while `tokens[position]` is the
    /// current input, or `None` when the probe has no attention.
    fn attention(&self, doc_id: usize, tokens: &[usize], position: usize) -> Result<Option<Vec<f64>>>;
}

impl AttentionProbe for Model {
    fn attention(&self, _doc_id: usize, tokens: &[usize], position: usize) -> Result<Option<Vec<f64>>> {
        self.attention_at(tokens, position)
    }
}

/// Attention drawn uniformly from the probability simplex, independently for
/// every (document, position). Its argmax is uniform over the context and it
/// never ties.
#[derive(Clone, Copy, Debug)]
pub struct RandomAttention {
    pub seed: u64,
}

impl AttentionProbe for RandomAttention {
    fn attention(&self, doc_id: usize, _tokens: &[usize], position: usize) -> Result<Option<Vec<f64>>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(((doc_id as u64) << 32) ^ position as u64);
        let draws: Vec<f64> = (0..position).map(|_| exp1(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        Ok(Some(draws.into_iter().map(|x| x / total).collect()))
    }
}

/// All attention on a chosen position.
#[derive(Clone, Debug)]
pub enum ForcedAttention {
    /// The same position everywhere (clamped to the last context token).
    Position(usize),
    /// Per `(doc_id, position)` targets; the first context token otherwise.
    Targets(HashMap<(usize, usize), usize>),
}

impl ForcedAttention {
    /// Attends to each record's subject at its verb.
    pub fn subjects(records: &[DependencyRecord]) -> Self {
        ForcedAttention::Targets(records.iter().map(|r| ((r.doc_id, r.verb_pos), r.subj_pos)).collect())
    }
}

impl AttentionProbe for ForcedAttention {
    fn attention(&self, doc_id: usize, _tokens: &[usize], position: usize) -> Result<Option<Vec<f64>>> {
        if position == 0 {
            return Ok(Some(Vec::new()));
        }
        let target = match self {
            ForcedAttention::Position(p) => (*p).min(position - 1),
            ForcedAttention::Targets(map) => map.get(&(doc_id, position)).copied().unwrap_or(0),
        };
        let mut w = vec![0.0; position];
        w[target] = 1.0;
        Ok(Some(w))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BucketBy {
    /// `verb_pos - subj_pos`.
    Length,
    Intervening,
}

impl FromStr for BucketBy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "length" => Ok(BucketBy::Length),
            "nouns" | "intervening" => Ok(BucketBy::Intervening),
            _ => Err(Error::Config(format!("unknown bucketing `{s}` (expected length or nouns)"))),
        }
    }
}

impl BucketBy {
    fn key(self, r: &DependencyRecord) -> usize {
        match self {
            BucketBy::Length => r.length(),
            BucketBy::Intervening => r.intervening_nouns,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Bucket {
    Value(usize),
    All,
}

impl fmt::Display for Bucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Bucket::Value(v) => write!(f, "{v}"),
            Bucket::All => f.write_str("all"),
        }
    }
}

/// Aggregate over the records of one bucket.
#[derive(Clone, Debug, PartialEq)]
pub struct DependencyResultRow {
    pub bucket: Bucket,
    pub n: usize,
    /// Records whose subject strictly has the largest weight. `None` when the
    /// probe has no attention.
    pub hits: Option<usize>,
    pub subject_rate: Option<f64>,
    /// Mean of `1 / verb_pos`.
    pub chance_token: f64,
    /// Mean of `1 / nouns_in_span` over records with at least one noun.
    pub chance_noun: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DependencyEval {
    /// Per-bucket rows in ascending order followed by the overall row.
    pub rows: Vec<DependencyResultRow>,
    /// Records with the verb at position 0.
    pub skipped: usize,
}

impl DependencyEval {
    pub fn overall(&self) -> &DependencyResultRow {
        self.rows.last().expect("overall row")
    }
}

/// Whether `attn[subject]` is strictly greater than every other weight.
pub fn subject_wins(attn: &[f64], subject: usize) -> bool {
    attn.get(subject).is_some_and(|&s| attn.iter().enumerate().all(|(j, &w)| j == subject || w < s))
}

#[derive(Default)]
struct Acc {
    n: usize,
    hits: usize,
    token: f64,
    noun: f64,
    noun_n: usize,
}

impl Acc {
    fn add(&mut self, r: &DependencyRecord, hit: bool) {
        self.n += 1;
        self.hits += usize::from(hit);
        self.token += 1.0 / r.verb_pos as f64;
        let nouns = r.nouns_in_span();
        if nouns > 0 {
            self.noun += 1.0 / nouns as f64;
            self.noun_n += 1;
        }
    }

    fn row(&self, bucket: Bucket, attention: bool) -> DependencyResultRow {
        DependencyResultRow {
            bucket,
            n: self.n,
            hits: attention.then_some(self.hits),
            subject_rate: attention.then(|| self.hits as f64 / self.n as f64),
            chance_token: self.token / self.n as f64,
            chance_noun: (self.noun_n > 0).then(|| self.noun / self.noun_n as f64),
        }
    }
}

fn doc_index(docs: &[TokenSequence]) -> HashMap<usize, &TokenSequence> {
    docs.iter().map(|d| (d.doc_id, d)).collect()
}

fn check_record<'a>(index: &HashMap<usize, &'a TokenSequence>, r: &DependencyRecord) -> Result<&'a TokenSequence> {
    let doc = index.get(&r.doc_id).ok_or_else(|| Error::Invalid(format!("record refers to unknown document {}", r.doc_id)))?;
    if r.verb_pos >= doc.ids.len() {
        return Err(Error::Invalid(format!("verb position {} beyond document {} of {} tokens", r.verb_pos, r.doc_id, doc.ids.len())));
    }
    Ok(doc)
}

/// Runs the probe at every record's verb and tests whether the subject gets
/// the largest weight. Ties at the maximum count as misses. Records with the
/// verb at position 0 are skipped.
pub fn subject_attention_rate(
    probe: &dyn AttentionProbe,
    docs: &[TokenSequence],
    records: &[DependencyRecord],
    bucket_by: BucketBy,
) -> Result<DependencyEval> {
    let index = doc_index(docs);
    let usable: Vec<&DependencyRecord> = records.iter().filter(|r| r.verb_pos > 0).collect();
    let skipped = records.len() - usable.len();
    if skipped > 0 {
        log::warn!("{skipped} records with the verb at position 0 skipped");
    }
    let outcomes = usable
        .par_iter()
        .map(|r| {
            let doc = check_record(&index, r)?;
            Ok(probe.attention(r.doc_id, &doc.ids, r.verb_pos)?.map(|a| subject_wins(&a, r.subj_pos)))
        })
        .collect::<Result<Vec<Option<bool>>>>()?;
    let attention = outcomes.iter().all(Option::is_some);
    let mut buckets: BTreeMap<usize, Acc> = BTreeMap::new();
    let mut all = Acc::default();
    for (r, hit) in usable.iter().zip(&outcomes) {
        let hit = hit.unwrap_or(false);
        buckets.entry(bucket_by.key(r)).or_default().add(r, hit);
        all.add(r, hit);
    }
    if all.n == 0 {
        return Err(Error::Empty("no dependency records with a non-initial verb".into()));
    }
    let mut rows: Vec<DependencyResultRow> = buckets.iter().map(|(&k, a)| a.row(Bucket::Value(k), attention)).collect();
    rows.push(all.row(Bucket::All, attention));
    Ok(DependencyEval { rows, skipped })
}

/// Both chance baselines per bucket, plus the overall row.
pub fn chance_baselines(records: &[DependencyRecord], bucket_by: BucketBy) -> Vec<DependencyResultRow> {
    let mut buckets: BTreeMap<usize, Acc> = BTreeMap::new();
    let mut all = Acc::default();
    for r in records.iter().filter(|r| r.verb_pos > 0) {
        buckets.entry(bucket_by.key(r)).or_default().add(r, false);
        all.add(r, false);
    }
    let mut rows: Vec<DependencyResultRow> = buckets.iter().map(|(&k, a)| a.row(Bucket::Value(k), false)).collect();
    if all.n > 0 {
        rows.push(all.row(Bucket::All, false));
    }
    rows
}

pub const DEPENDENCY_RESULT_HEADER: &str = "bucket\tn\tsubject_rate\tchance_token\tchance_noun";

/// Tab-separated table; undefined values are written as `NA`.
pub fn format_dependency_results(rows: &[DependencyResultRow]) -> String {
    let na = |v: Option<f64>| v.map_or("NA".to_string(), |x| x.to_string());
    let mut s = format!("{DEPENDENCY_RESULT_HEADER}\n");
    for r in rows {
        s.push_str(&format!("{}\t{}\t{}\t{}\t{}\n", r.bucket, r.n, na(r.subject_rate), r.chance_token, na(r.chance_noun)));
    }
    s
}

/// Standard exponential draw.
fn exp1(rng: &mut impl Rng) -> f64 {
    // 1 - u lies in (0, 1].
    -(1.0 - rng.gen::<f64>()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};

    fn rec(doc: usize, verb: usize, subj: usize, nouns: usize) -> DependencyRecord {
        DependencyRecord::new(doc, verb, subj, nouns)
    }

    fn docs(n: usize, len: usize) -> Vec<TokenSequence> {
        (0..n).map(|d| TokenSequence { doc_id: d, ids: vec![2; len] }).collect()
    }

    #[test]
    fn chance_examples() {
        let mut r = rec(0, 4, 1, 1);
        r.noun_positions = Some(vec![1, 3]);
        let rows = chance_baselines(&[r], BucketBy::Length);
        assert_eq!(rows[0].chance_token, 0.25);
        assert_eq!(rows[0].chance_noun, Some(0.5));
    }

    #[test]
    fn zero_noun_records_leave_noun_baseline() {
        let mut r = rec(0, 4, 1, 0);
        r.noun_positions = Some(vec![]);
        let rows = chance_baselines(&[r, rec(0, 2, 0, 0)], BucketBy::Length);
        assert_eq!(rows.last().unwrap().chance_noun, Some(1.0));
    }

    #[test]
    fn single_candidate_always_wins() {
        let eval = subject_attention_rate(&RandomAttention { seed: 3 }, &docs(1, 5), &[rec(0, 1, 0, 0)], BucketBy::Length).unwrap();
        assert_eq!(eval.overall().subject_rate, Some(1.0));
    }

    #[test]
    fn forced_position_zero() {
        let records = [rec(0, 1, 0, 0), rec(1, 3, 1, 0)];
        let eval = subject_attention_rate(&ForcedAttention::Position(0), &docs(2, 5), &records, BucketBy::Length).unwrap();
        let rates: Vec<Option<f64>> = eval.rows.iter().map(|r| r.subject_rate).collect();
        assert_eq!(rates, vec![Some(1.0), Some(0.0), Some(0.5)]);
    }

    #[test]
    fn ties_are_misses_and_verb_zero_is_skipped() {
        assert!(!subject_wins(&[0.5, 0.5], 0));
        assert!(subject_wins(&[0.6, 0.4], 0));
        let records = [rec(0, 0, 0, 0), rec(0, 2, 0, 0)];
        let eval = subject_attention_rate(&ForcedAttention::Position(0), &docs(1, 3), &records, BucketBy::Length).unwrap();
        assert_eq!(eval.skipped, 1);
        assert_eq!(eval.overall().n, 1);
        assert_eq!(eval.overall().subject_rate, Some(1.0));
    }

    #[test]
    fn ablated_model_has_no_rate() {
        let model = Model::new(ModelConfig::new(Variant::CbrRnnAblated, 4, 2, 3)).unwrap();
        let eval = subject_attention_rate(&model, &docs(1, 4), &[rec(0, 3, 1, 0)], BucketBy::Intervening).unwrap();
        assert!(eval.rows.iter().all(|r| r.subject_rate.is_none() && r.hits.is_none()));
        assert!(format_dependency_results(&eval.rows).contains("\tNA\t"));
    }

    #[test]
    fn one_hot_gold_logits_are_perfect() {
        let gold = [1usize, 3, 0, 2];
        let logits: Vec<Vec<f64>> = gold.iter().map(|&g| (0..4).map(|k| f64::from(u8::from(k == g))).collect()).collect();
        assert_eq!(tagging_accuracy(logits.iter().map(Vec::as_slice).zip(gold)).unwrap(), 1.0);
        assert!(tagging_accuracy([(&[1.0][..], NO_TAG)]).is_err());
    }
}
