//! `cbrnn`: corpus preparation, training, evaluation and the attraction
//! experiment from the command line.
//!
//! Exit codes: 0 on success, 1 on internal failure, 2 on bad input. Every
//! command writes `run_manifest.json` into its output directory, also when it
//! fails.

mod manifest;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use cbrnn::attraction::{contrasts, export_csv, format_report, load_stimuli, run_stimuli, BootstrapConfig, CheckpointRun, ReplacementList};
use cbrnn::corpus::{load_dependency_corpus, load_token_corpus, parse_tagged_corpus, TagVocabulary, Vocabulary};
use cbrnn::eval::{ccg_accuracy, format_dependency_results, perplexity, subject_attention_rate, BucketBy};
use cbrnn::synth::{write_bundle, BundleSpec, BUNDLE_FILES};
use cbrnn::trainer::{run_matrix, sequences_from_tagged, sequences_from_tokens, ExperimentConfig, Manifest, RunStatus, CONFIG_KEYS, MANIFEST_FILE};
use cbrnn::Model;
use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use serde_json::json;

use manifest::{digests, write_atomic, RunManifest};

#[derive(Parser, Debug)]
#[command(name = "cbrnn", version, about = "Cue-based retrieval RNN language model experiments")]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the vocabulary and tag inventory and write id-encoded corpora.
    Prepare(PrepareArgs),
    /// Train one run per seed, or the full seed x alpha matrix.
    Train(TrainArgs),
    /// Perplexity, supertagging accuracy or subject attention rates.
    Eval(EvalArgs),
    /// Per-item measures and condition contrasts on attraction stimuli.
    Attraction(AttractionArgs),
    /// Write the synthetic toy data bundle.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
struct PrepareArgs {
    /// Whitespace-tokenized corpus, one document per line.
    #[arg(long)]
    tokens: PathBuf,
    /// Supertags aligned with `--tokens`.
    #[arg(long)]
    tags: Option<PathBuf>,
    #[arg(long, default_value_t = 50_000)]
    max_vocab: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    tokens: PathBuf,
    /// Supertags aligned with `--tokens`; without them only the LM objective is trained.
    #[arg(long)]
    tags: Option<PathBuf>,
    /// Existing vocabulary; built from `--tokens` otherwise.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long, default_value_t = 50_000)]
    max_vocab: usize,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set hidden_dim=128`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Supertagging weight of a single run (ignored with `--matrix`).
    #[arg(long)]
    alpha: Option<f64>,
    /// Comma separated seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Train every (seed, alpha) pair from `seeds` and `alphas`.
    #[arg(long)]
    matrix: bool,
    /// Continue each cell from its latest epoch checkpoint.
    #[arg(long)]
    resume: bool,
    /// Only run these cells, as `seed:alpha` (repeatable).
    #[arg(long = "cell", value_name = "SEED:ALPHA")]
    cells: Vec<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Which {
    Ppl,
    Ccg,
    Deps,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long, value_enum)]
    which: Which,
    /// Evaluation corpus, one document per line.
    #[arg(long)]
    tokens: PathBuf,
    /// Gold supertags for `--which ccg`.
    #[arg(long)]
    tags: Option<PathBuf>,
    /// Tag inventory written by `train` (for `--which ccg`).
    #[arg(long)]
    tagset: Option<PathBuf>,
    /// Dependency annotations for `--which deps`.
    #[arg(long)]
    deps: Option<PathBuf>,
    /// `length` or `nouns`.
    #[arg(long, default_value = "length")]
    bucket_by: String,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AttractionArgs {
    /// Output directory of `train` (holds manifest.tsv and vocab.txt).
    #[arg(long)]
    runs: PathBuf,
    /// Defaults to `<runs>/vocab.txt`.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[arg(long)]
    stimuli: PathBuf,
    /// Replacement tables applied before scoring (repeatable, in order).
    #[arg(long = "replacements")]
    replacements: Vec<PathBuf>,
    /// Restrict to these alphas (repeatable); all successful runs otherwise.
    #[arg(long = "alpha")]
    alphas: Vec<f64>,
    #[arg(long, default_value_t = 10_000)]
    resamples: usize,
    #[arg(long, default_value_t = 0)]
    bootstrap_seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Problems with the user's input that are not raised by the library.
#[derive(Debug)]
struct InputError(String);

impl fmt::Display for InputError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for InputError {}

fn input_error(msg: impl Into<String>) -> anyhow::Error {
    InputError(msg.into()).into()
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(err) = cause.downcast_ref::<cbrnn::Error>() {
            return if err.is_input_error() { 2 } else { 1 };
        }
        if cause.is::<InputError>() {
            return 2;
        }
    }
    1
}

/// Inputs, outputs and resolved settings collected while a command runs.
#[derive(Default)]
struct Record {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    config: serde_json::Value,
}

impl Record {
    fn input(&mut self, path: &Path) -> anyhow::Result<()> {
        self.inputs.push(path.to_path_buf());
        if !path.is_file() {
            return Err(input_error(format!("missing input: {}", path.display())));
        }
        Ok(())
    }

    fn write(&mut self, path: PathBuf, text: &str) -> anyhow::Result<()> {
        write_atomic(&path, text).with_context(|| format!("writing {}", path.display()))?;
        self.outputs.push(path);
        Ok(())
    }
}

fn prepare(args: &PrepareArgs, rec: &mut Record) -> anyhow::Result<()> {
    rec.input(&args.tokens)?;
    if let Some(t) = &args.tags {
        rec.input(t)?;
    }
    rec.config = json!({ "max_vocab": args.max_vocab });
    let text = fs::read_to_string(&args.tokens)?;
    let vocab = Vocabulary::build(text.split_whitespace(), args.max_vocab)?;
    fs::create_dir_all(&args.out)?;
    rec.write(args.out.join("vocab.txt"), &vocab.to_text())?;
    let ids = |rows: Vec<Vec<usize>>| -> String {
        rows.iter().map(|r| r.iter().map(usize::to_string).collect::<Vec<_>>().join(" ") + "\n").collect()
    };
    match &args.tags {
        Some(tags_path) => {
            let corpus = parse_tagged_corpus(&text, &fs::read_to_string(tags_path)?, &vocab, None)?;
            let tagset = args.out.join("tags.txt");
            corpus.tags.save(&tagset)?;
            rec.outputs.push(tagset);
            rec.write(args.out.join("corpus.ids"), &ids(corpus.docs.iter().map(|(t, _)| t.ids.clone()).collect()))?;
            rec.write(args.out.join("corpus.tag_ids"), &ids(corpus.docs.iter().map(|(_, g)| g.ids.clone()).collect()))?;
        }
        None => {
            let docs: Vec<Vec<usize>> = text.lines().enumerate().map(|(i, l)| vocab.encode(l, i).ids).collect();
            rec.write(args.out.join("corpus.ids"), &ids(docs))?;
        }
    }
    println!("vocabulary {} types, tag inventory written: {}", vocab.len(), args.tags.is_some());
    Ok(())
}

fn parse_cell(s: &str) -> anyhow::Result<(u64, f64)> {
    let bad = || input_error(format!("cell `{s}`: expected SEED:ALPHA"));
    let (seed, alpha) = s.split_once(':').ok_or_else(bad)?;
    Ok((seed.trim().parse().map_err(|_| bad())?, alpha.trim().parse().map_err(|_| bad())?))
}

fn train(args: &TrainArgs, rec: &mut Record) -> anyhow::Result<()> {
    rec.input(&args.tokens)?;
    for p in [&args.tags, &args.vocab, &args.config].into_iter().flatten() {
        rec.input(p)?;
    }
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::parse(&fs::read_to_string(p)?).with_context(|| p.display().to_string())?,
        None => ExperimentConfig::default(),
    };
    for o in &args.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| input_error(format!("override `{o}`: expected KEY=VALUE")))?;
        cfg.set(k.trim(), v)?;
    }
    if let Some(a) = args.alpha {
        cfg.set("alpha", &a.to_string())?;
    }
    if let Some(s) = &args.seeds {
        cfg.set("seeds", s)?;
    }
    if !args.matrix {
        cfg.train.alphas = vec![cfg.train.alpha];
    }
    cfg.train.validate()?;
    let cells = args.cells.iter().map(|c| parse_cell(c)).collect::<anyhow::Result<Vec<_>>>()?;
    rec.config = json!({ "config": cfg.to_text(), "matrix": args.matrix, "resume": args.resume, "cells": args.cells });

    let text = fs::read_to_string(&args.tokens)?;
    let vocab = match &args.vocab {
        Some(p) => Vocabulary::load(p)?,
        None => Vocabulary::build(text.split_whitespace(), args.max_vocab)?,
    };
    let (sequences, tags) = match &args.tags {
        Some(p) => {
            let corpus = parse_tagged_corpus(&text, &fs::read_to_string(p)?, &vocab, None)?;
            (sequences_from_tagged(&corpus, cfg.train.max_seq_len), Some(corpus.tags))
        }
        None => {
            let docs: Vec<_> = text.lines().enumerate().map(|(i, l)| vocab.encode(l, i)).collect();
            (sequences_from_tokens(&docs, cfg.train.max_seq_len), None)
        }
    };
    if sequences.is_empty() {
        bail!(input_error(format!("{}: no trainable sequences", args.tokens.display())));
    }
    fs::create_dir_all(&args.out)?;
    rec.write(args.out.join("vocab.txt"), &vocab.to_text())?;
    rec.write(args.out.join("config.txt"), &cfg.to_text())?;
    if let Some(t) = &tags {
        let p = args.out.join("tags.txt");
        t.save(&p)?;
        rec.outputs.push(p);
    }
    let tag_count = tags.as_ref().map_or(1, TagVocabulary::len);
    let base = cfg.model.model_config(vocab.len(), tag_count, 0);
    base.validate()?;
    let manifest = run_matrix(&base, &cfg.train, &sequences, &args.out, (!cells.is_empty()).then_some(&cells[..]), args.resume)?;
    rec.outputs.push(args.out.join(MANIFEST_FILE));
    for e in &manifest.entries {
        println!("seed {}\talpha {}\t{}\tL_LM {:.4}\tL_CCG {:.4}", e.seed, e.alpha, e.status, e.final_lm, e.final_ccg);
        if let Some(c) = &e.checkpoint {
            rec.outputs.push(args.out.join(c));
        }
    }
    let failed = manifest.entries.iter().filter(|e| e.status == RunStatus::Failed).count();
    if failed > 0 {
        bail!("{failed} of {} runs failed; rerun them with --cell SEED:ALPHA", manifest.entries.len());
    }
    Ok(())
}

fn eval(args: &EvalArgs, rec: &mut Record) -> anyhow::Result<()> {
    for p in [&args.checkpoint, &args.vocab, &args.tokens] {
        rec.input(p)?;
    }
    rec.config = json!({ "which": format!("{:?}", args.which).to_lowercase(), "bucket_by": args.bucket_by });
    let model = Model::load(&args.checkpoint)?;
    let vocab = Vocabulary::load(&args.vocab)?;
    if vocab.len() != model.config().vocab_size {
        bail!(input_error(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            model.config().vocab_size
        )));
    }
    fs::create_dir_all(&args.out)?;
    match args.which {
        Which::Ppl => {
            let docs = load_token_corpus(&args.tokens, &vocab)?;
            let ppl = perplexity(&model, &docs)?;
            println!("perplexity {ppl:.4}");
            rec.write(args.out.join("ppl.tsv"), &format!("metric\tvalue\nperplexity\t{ppl}\n"))?;
        }
        Which::Ccg => {
            let (tags, tagset) = match (&args.tags, &args.tagset) {
                (Some(t), Some(s)) => (t, s),
                _ => bail!(input_error("--which ccg needs --tags and --tagset")),
            };
            rec.input(tags)?;
            rec.input(tagset)?;
            let inventory = TagVocabulary::load(tagset)?;
            let corpus = parse_tagged_corpus(&fs::read_to_string(&args.tokens)?, &fs::read_to_string(tags)?, &vocab, Some(inventory))?;
            let acc = ccg_accuracy(&model, &corpus)?;
            println!("supertag accuracy {acc:.4}");
            rec.write(args.out.join("ccg.tsv"), &format!("metric\tvalue\naccuracy\t{acc}\n"))?;
        }
        Which::Deps => {
            let deps = args.deps.as_ref().ok_or_else(|| input_error("--which deps needs --deps"))?;
            rec.input(deps)?;
            let bucket_by: BucketBy = args.bucket_by.parse()?;
            let docs = load_token_corpus(&args.tokens, &vocab)?;
            let records = load_dependency_corpus(deps)?.records;
            let result = subject_attention_rate(&model, &docs, &records, bucket_by)?;
            let table = format_dependency_results(&result.rows);
            print!("{table}");
            rec.write(args.out.join("deps.tsv"), &table)?;
        }
    }
    Ok(())
}

fn attraction(args: &AttractionArgs, rec: &mut Record) -> anyhow::Result<()> {
    let vocab_path = args.vocab.clone().unwrap_or_else(|| args.runs.join("vocab.txt"));
    for p in [&args.runs.join(MANIFEST_FILE), &vocab_path, &args.stimuli] {
        rec.input(p)?;
    }
    let mut replacements = ReplacementList::default();
    for p in &args.replacements {
        rec.input(p)?;
        replacements.extend(&ReplacementList::load(p)?);
    }
    rec.config = json!({ "alphas": args.alphas, "resamples": args.resamples, "bootstrap_seed": args.bootstrap_seed });
    let vocab = Vocabulary::load(&vocab_path)?;
    let manifest = Manifest::load(&args.runs)?;
    let mut runs = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.status == RunStatus::Ok) {
        if !args.alphas.is_empty() && !args.alphas.contains(&e.alpha) {
            continue;
        }
        let Some(c) = &e.checkpoint else { continue };
        let path = args.runs.join(c);
        rec.input(&path)?;
        runs.push(CheckpointRun { seed: e.seed, alpha: e.alpha, model: Model::load(&path)? });
    }
    if runs.is_empty() {
        bail!(input_error(format!("{}: no successful runs to evaluate", args.runs.display())));
    }
    let stimuli = load_stimuli(&args.stimuli, &replacements, Some(&vocab))?;
    if stimuli.items.is_empty() {
        bail!(input_error(format!("{}: every item was excluded", args.stimuli.display())));
    }
    let measures = run_stimuli(&runs, &vocab, &stimuli.items)?;
    fs::create_dir_all(&args.out)?;
    let csv = args.out.join("measures.csv");
    export_csv(&measures, &csv)?;
    rec.outputs.push(csv);
    let cfg = BootstrapConfig { resamples: args.resamples, seed: args.bootstrap_seed, ..BootstrapConfig::default() };
    let report = format_report(&contrasts(&measures, &cfg));
    print!("{report}");
    rec.write(args.out.join("contrasts.tsv"), &report)?;
    let mut excluded = String::from("item_id\tcondition\treason\n");
    for (item, reason) in &stimuli.excluded {
        excluded.push_str(&format!("{}\t{}\t{reason}\n", item.item_id, item.condition.to_string().to_uppercase()));
    }
    rec.write(args.out.join("excluded.tsv"), &excluded)?;
    log::info!("{} runs, {} items, {} excluded", runs.len(), stimuli.items.len(), stimuli.excluded.len());
    Ok(())
}

fn synth(args: &SynthArgs, rec: &mut Record) -> anyhow::Result<()> {
    let spec = BundleSpec { seed: args.seed, ..BundleSpec::default() };
    rec.config = json!({ "seed": args.seed });
    write_bundle(&args.out, &spec)?;
    rec.outputs.extend(BUNDLE_FILES.iter().map(|f| args.out.join(f)));
    println!("wrote {} files to {}", BUNDLE_FILES.len(), args.out.display());
    Ok(())
}

fn config_help() -> String {
    let width = CONFIG_KEYS.iter().map(|(k, _, _)| k.len()).max().unwrap_or(0);
    let mut s = String::from("Configuration keys (config file `key = value` or --set key=value):\n");
    for (key, default, doc) in CONFIG_KEYS {
        s.push_str(&format!("  {key:width$}  {doc} [default: {default}]\n"));
    }
    s
}

fn main() -> ExitCode {
    let matches = Cli::command().mut_subcommand("train", |c| c.after_help(config_help())).get_matches();
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let started = Instant::now();
    let mut rec = Record::default();
    let (result, out) = match &cli.command {
        Command::Prepare(a) => (prepare(a, &mut rec), &a.out),
        Command::Train(a) => (train(a, &mut rec), &a.out),
        Command::Eval(a) => (eval(a, &mut rec), &a.out),
        Command::Attraction(a) => (attraction(a, &mut rec), &a.out),
        Command::Synth(a) => (synth(a, &mut rec), &a.out),
    };
    let code = match &result {
        Ok(()) => 0,
        Err(e) => exit_code(e),
    };
    let manifest = RunManifest {
        command: std::env::args().collect(),
        config: rec.config,
        inputs: digests(&rec.inputs),
        outputs: rec.outputs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        exit_status: code.into(),
        error: result.as_ref().err().map(|e| format!("{e:#}")),
    };
    if let Err(e) = manifest.write(out) {
        log::error!("could not write run manifest to {}: {e}", out.display());
    }
    if let Err(e) = result {
        eprintln!("error: {e:#}");
    }
    ExitCode::from(code)
}
