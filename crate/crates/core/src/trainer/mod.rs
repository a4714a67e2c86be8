//! Dual-objective training: next-word prediction plus CCG supertagging.
//!
//! The combined loss of a batch is `L_LM + alpha * L_CCG`, each term a mean of
//! per-token cross-entropies. Documents are truncated into chunks of at most
//! `max_seq_len` input tokens; hidden state and caches start fresh per chunk.

mod config;
mod matrix;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Gradients, Graph, Optimizer, Var};
use crate::corpus::{TaggedCorpus, TokenSequence, NO_TAG};
use crate::error::{Error, Result};
use crate::model::Checkpoint;
use crate::model::{Model, StepVars};

pub use config::{ExperimentConfig, ModelSpec, TrainConfig, CONFIG_KEYS};
pub use matrix::{cell_dir_name, run_matrix, Manifest, ManifestEntry, RunStatus, MANIFEST_FILE, MANIFEST_HEADER};

/// One truncated training chunk. `tags[i]` is the supertag of `tokens[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSequence {
    pub tokens: Vec<usize>,
    pub tags: Vec<usize>,
}

impl TrainingSequence {
    /// Positions that receive an LM target.
    pub fn inputs(&self) -> usize {
        self.tokens.len().saturating_sub(1)
    }

    pub fn tagged_inputs(&self) -> usize {
        self.tags[..self.inputs()].iter().filter(|&&t| t != NO_TAG).count()
    }
}

/// Splits documents into chunks of at most `max_len` inputs. Adjacent chunks
/// share one boundary token, which is the last target of the first chunk and
/// the first input of the next. Chunks with no targets are dropped.
pub fn chunk_documents<'a>(
    docs: impl IntoIterator<Item = (&'a [usize], Option<&'a [usize]>)>,
    max_len: usize,
) -> Vec<TrainingSequence> {
    assert!(max_len > 0, "max_len must be positive");
    let mut out = Vec::new();
    for (tokens, tags) in docs {
        let mut start = 0;
        while start + 1 < tokens.len() {
            let end = (start + max_len + 1).min(tokens.len());
            out.push(TrainingSequence {
                tokens: tokens[start..end].to_vec(),
                tags: match tags {
                    Some(t) => t[start..end].to_vec(),
                    None => vec![NO_TAG; end - start],
                },
            });
            start += max_len;
        }
    }
    out
}

pub fn sequences_from_tagged(corpus: &TaggedCorpus, max_len: usize) -> Vec<TrainingSequence> {
    chunk_documents(corpus.docs.iter().map(|(t, g)| (t.ids.as_slice(), Some(g.ids.as_slice()))), max_len)
}

pub fn sequences_from_tokens(docs: &[TokenSequence], max_len: usize) -> Vec<TrainingSequence> {
    chunk_documents(docs.iter().map(|t| (t.ids.as_slice(), None)), max_len)
}

/// Graph value of a loss and its two components.
#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    /// Summed LM cross-entropy.
    pub lm_sum: f64,
    /// Summed CCG cross-entropy over tagged positions.
    pub ccg_sum: f64,
    pub lm_count: usize,
    pub tag_count: usize,
}

/// Per-token mean LM loss plus `alpha` times the mean CCG loss over tagged
/// positions of this sequence. With `alpha == 0` the total is the LM term.
pub fn compute_loss(
    g: &mut Graph<'_>,
    outputs: &[StepVars],
    next_tokens: &[usize],
    tags: &[usize],
    alpha: f64,
) -> Result<LossParts> {
    let tag_count = tags.iter().filter(|&&t| t != NO_TAG).count();
    compute_loss_scaled(g, outputs, next_tokens, tags, alpha, outputs.len(), tag_count)
}

/// Like [`compute_loss`] but divides by externally supplied counts, so that
/// per-sequence totals sum to a batch-level mean.
pub fn compute_loss_scaled(
    g: &mut Graph<'_>,
    outputs: &[StepVars],
    next_tokens: &[usize],
    tags: &[usize],
    alpha: f64,
    lm_denominator: usize,
    tag_denominator: usize,
) -> Result<LossParts> {
    if outputs.len() != next_tokens.len() || outputs.len() != tags.len() {
        return Err(Error::Invalid(format!(
            "loss inputs disagree in length: {} outputs, {} targets, {} tags",
            outputs.len(),
            next_tokens.len(),
            tags.len()
        )));
    }
    if outputs.is_empty() {
        return Err(Error::Empty("loss over an empty sequence".into()));
    }
    let mut lm_terms = Vec::with_capacity(outputs.len());
    let mut ccg_terms = Vec::new();
    for ((o, &next), &tag) in outputs.iter().zip(next_tokens).zip(tags) {
        lm_terms.push(g.cross_entropy(o.lm_logits, next)?);
        if tag != NO_TAG {
            ccg_terms.push(g.cross_entropy(o.ccg_logits, tag)?);
        }
    }
    let lm_sum_var = g.add_n(&lm_terms);
    let lm_sum = g.scalar(lm_sum_var);
    let lm_mean = g.scale(lm_sum_var, 1.0 / lm_denominator as f64);
    let (total, ccg_sum) = if ccg_terms.is_empty() {
        (lm_mean, 0.0)
    } else {
        let ccg_sum_var = g.add_n(&ccg_terms);
        let ccg_sum = g.scalar(ccg_sum_var);
        if alpha == 0.0 {
            (lm_mean, ccg_sum)
        } else {
            let weighted = g.scale(ccg_sum_var, alpha / tag_denominator as f64);
            (g.add(lm_mean, weighted), ccg_sum)
        }
    };
    Ok(LossParts { total, lm_sum, ccg_sum, lm_count: outputs.len(), tag_count: ccg_terms.len() })
}

/// Loss record of one optimizer update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub epoch: usize,
    pub step: usize,
    pub lm: f64,
    pub ccg: f64,
    /// Graph value of the optimized objective.
    pub combined: f64,
    pub tokens: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Token-weighted mean LM loss over the epoch.
    pub lm: f64,
    /// Mean CCG loss over tagged positions of the epoch.
    pub ccg: f64,
    /// `lm + alpha * ccg`.
    pub combined: f64,
    pub tokens: usize,
    /// Wall-clock throughput; not reproducible across runs.
    pub tokens_per_sec: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub alpha: f64,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl TrainLog {
    pub fn last_epoch(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }

    /// Copy with wall-clock fields zeroed, for determinism comparisons.
    pub fn without_timing(&self) -> TrainLog {
        let mut log = self.clone();
        for e in &mut log.epochs {
            e.tokens_per_sec = 0.0;
        }
        log
    }
}

/// Everything needed to continue training bit-for-bit.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: Optimizer,
    pub log: TrainLog,
    pub epochs_done: usize,
}

#[derive(Serialize, Deserialize)]
struct SavedTrainer {
    epochs_done: usize,
    optimizer: Optimizer,
    config: TrainConfig,
    log: TrainLog,
}

impl TrainState {
    pub fn new(model: Model, cfg: &TrainConfig) -> Self {
        TrainState {
            model,
            optimizer: Optimizer::new(cfg.optimizer),
            log: TrainLog { alpha: cfg.alpha, ..TrainLog::default() },
            epochs_done: 0,
        }
    }

    pub fn to_checkpoint(&self, cfg: &TrainConfig) -> Checkpoint {
        let saved = SavedTrainer {
            epochs_done: self.epochs_done,
            optimizer: self.optimizer.clone(),
            config: cfg.clone(),
            log: self.log.clone(),
        };
        self.model.to_checkpoint(true, serde_json::to_value(saved).expect("trainer state serializes"))
    }

    /// Restores the state and the training configuration it was saved with.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<(Self, TrainConfig)> {
        let saved: SavedTrainer = serde_json::from_value(ckpt.extra.clone())
            .map_err(|e| Error::Checkpoint(format!("no trainer state: {e}")))?;
        let model = Model::from_checkpoint(ckpt)?;
        Ok((
            TrainState { model, optimizer: saved.optimizer, log: saved.log, epochs_done: saved.epochs_done },
            saved.config,
        ))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, TrainConfig)> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Where and how often checkpoints are written.
#[derive(Clone, Debug)]
pub struct CheckpointPolicy {
    pub dir: PathBuf,
}

impl CheckpointPolicy {
    pub fn epoch_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("epoch-{epoch:04}.ckpt"))
    }

    pub fn final_path(&self) -> PathBuf {
        self.dir.join("final.ckpt")
    }
}

fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (epoch as u64).wrapping_add(1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

struct SequenceResult {
    grads: Gradients,
    total: f64,
    lm_sum: f64,
    ccg_sum: f64,
}

fn run_sequence(model: &Model, seq: &TrainingSequence, alpha: f64, lm_den: usize, tag_den: usize) -> Result<SequenceResult> {
    let mut g = Graph::with_params(model.params());
    let mut state = model.initial_state(&mut g);
    let n = seq.inputs();
    let mut outputs = Vec::with_capacity(n);
    for &tok in &seq.tokens[..n] {
        outputs.push(model.step(&mut g, &mut state, tok)?);
    }
    let parts = compute_loss_scaled(&mut g, &outputs, &seq.tokens[1..], &seq.tags[..n], alpha, lm_den, tag_den)?;
    let total = g.scalar(parts.total);
    let grads = g.backward(parts.total)?;
    Ok(SequenceResult { grads, total, lm_sum: parts.lm_sum, ccg_sum: parts.ccg_sum })
}

/// Trains until `cfg.epochs` epochs are done or `stop_after` more epochs have
/// run. Sequences within a batch are processed in parallel and their
/// gradients summed in batch order.
///
/// With a checkpoint policy, a checkpoint with optimizer moments is written
/// every `cfg.checkpoint_every` epochs and at the end. A non-finite loss
/// aborts with [`Error::NonFiniteLoss`], leaving earlier checkpoints intact.
pub fn run_training(
    state: &mut TrainState,
    sequences: &[TrainingSequence],
    cfg: &TrainConfig,
    checkpoints: Option<&CheckpointPolicy>,
    stop_after: Option<usize>,
) -> Result<()> {
    cfg.validate()?;
    if sequences.is_empty() {
        return Err(Error::Empty("no training sequences".into()));
    }
    if let Some(p) = checkpoints {
        std::fs::create_dir_all(&p.dir).map_err(|e| Error::io(&p.dir, e))?;
    }
    let seed = state.model.config().seed;
    let last_epoch = match stop_after {
        Some(n) => cfg.epochs.min(state.epochs_done + n),
        None => cfg.epochs,
    };
    while state.epochs_done < last_epoch {
        let epoch = state.epochs_done;
        let mut order: Vec<usize> = (0..sequences.len()).collect();
        if cfg.shuffle {
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(epoch_seed(seed, epoch)));
        }
        let started = Instant::now();
        let (mut lm_total, mut ccg_total, mut tokens, mut tagged, mut steps) = (0.0, 0.0, 0usize, 0usize, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let lm_den: usize = batch.iter().map(|&i| sequences[i].inputs()).sum();
            let tag_den: usize = batch.iter().map(|&i| sequences[i].tagged_inputs()).sum();
            let model = &state.model;
            let results: Vec<Result<SequenceResult>> = batch
                .par_iter()
                .map(|&i| run_sequence(model, &sequences[i], cfg.alpha, lm_den, tag_den))
                .collect();
            let step = state.optimizer.steps as usize;
            let (mut total, mut lm_sum, mut ccg_sum) = (0.0, 0.0, 0.0);
            let params = state.model.params_mut();
            for r in results {
                let r = r?;
                total += r.total;
                lm_sum += r.lm_sum;
                ccg_sum += r.ccg_sum;
                params.accumulate(&r.grads);
            }
            if !total.is_finite() {
                params.zero_grad();
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            state.optimizer.step(params, cfg.lr_at(step), cfg.clip_norm).map_err(|e| {
                log::error!("update {step} rejected: {e}");
                Error::NonFiniteLoss { epoch, step }
            })?;
            state.log.steps.push(StepRecord {
                epoch,
                step,
                lm: lm_sum / lm_den as f64,
                ccg: if tag_den > 0 { ccg_sum / tag_den as f64 } else { 0.0 },
                combined: total,
                tokens: lm_den,
            });
            lm_total += lm_sum;
            ccg_total += ccg_sum;
            tokens += lm_den;
            tagged += tag_den;
            steps += 1;
        }
        let lm = lm_total / tokens as f64;
        let ccg = if tagged > 0 { ccg_total / tagged as f64 } else { 0.0 };
        let elapsed = started.elapsed().as_secs_f64();
        state.log.epochs.push(EpochRecord {
            epoch,
            steps,
            lm,
            ccg,
            combined: lm + cfg.alpha * ccg,
            tokens,
            tokens_per_sec: if elapsed > 0.0 { tokens as f64 / elapsed } else { 0.0 },
        });
        log::info!("epoch {epoch}: L_LM {lm:.4} L_CCG {ccg:.4} ({steps} updates)");
        state.epochs_done += 1;
        if let Some(p) = checkpoints {
            if cfg.checkpoint_every > 0 && state.epochs_done.is_multiple_of(cfg.checkpoint_every) {
                state.to_checkpoint(cfg).save(p.epoch_path(state.epochs_done))?;
            }
        }
    }
    if let Some(p) = checkpoints {
        state.to_checkpoint(cfg).save(p.final_path())?;
    }
    Ok(())
}

/// Trains a fresh state for `cfg.epochs` epochs without checkpoints.
pub fn train(model: Model, sequences: &[TrainingSequence], cfg: &TrainConfig) -> Result<(Model, TrainLog)> {
    let mut state = TrainState::new(model, cfg);
    run_training(&mut state, sequences, cfg, None, None)?;
    Ok((state.model, state.log))
}
