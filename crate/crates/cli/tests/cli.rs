use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cbrnn::trainer::{Manifest, CONFIG_KEYS};

fn toy(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/toy").join(name)
}

fn cbrnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cbrnn")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn run_manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("run_manifest.json")).unwrap()).unwrap()
}

/// Small, fast training flags on the toy corpus.
fn train_args<'a>(out: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut v: Vec<String> = vec![
        "train".into(),
        "--tokens".into(),
        s(&toy("train.tokens")).into(),
        "--tags".into(),
        s(&toy("train.tags")).into(),
        "--set".into(),
        "hidden_dim=8".into(),
        "--set".into(),
        "epochs=2".into(),
        "--out".into(),
        s(out).into(),
    ];
    v.extend(extra.iter().map(|x| x.to_string()));
    v
}

fn train(out: &Path, extra: &[&str]) -> Output {
    let args = train_args(out, extra);
    cbrnn(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

#[test]
fn missing_input_exits_with_2_and_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("no-such-corpus.txt");
    let out = dir.path().join("out");
    let o = cbrnn(&["prepare", "--tokens", s(&missing), "--out", s(&out)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no-such-corpus.txt"));
    let m = run_manifest(&out);
    assert_eq!(m["exit_status"], 2);
    assert!(m["inputs"][0]["sha256"].is_null());
}

#[test]
fn prepare_is_deterministic_and_matches_the_type_count() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = cbrnn(&["prepare", "--tokens", s(&toy("train.tokens")), "--tags", s(&toy("train.tags")), "--out", s(out)]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["vocab.txt", "tags.txt", "corpus.ids", "corpus.tag_ids"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    // The toy corpus is lowercase, so every distinct token is a type, plus <unk> and <eot>.
    let text = fs::read_to_string(toy("train.tokens")).unwrap();
    let types: BTreeSet<&str> = text.split_whitespace().collect();
    assert_eq!(fs::read_to_string(a.join("vocab.txt")).unwrap().lines().count(), types.len() + 2);
    let ids = fs::read_to_string(a.join("corpus.ids")).unwrap();
    assert_eq!(ids.lines().count(), text.lines().count());
    assert!(ids.lines().zip(text.lines()).all(|(i, t)| i.split(' ').count() == t.split_whitespace().count() + 1));
}

#[test]
fn run_manifest_records_input_digests() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("p");
    cbrnn(&["prepare", "--tokens", s(&toy("train.tokens")), "--out", s(&out)]);
    let m = run_manifest(&out);
    assert_eq!(m["exit_status"], 0);
    assert_eq!(m["command"][1], "prepare");
    let bytes = fs::read(toy("train.tokens")).unwrap();
    let digest = sha2_hex(&bytes);
    assert_eq!(m["inputs"][0]["sha256"], digest);
    assert!(!dir.path().join("p/run_manifest.json.tmp").exists());
}

fn sha2_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

#[test]
fn single_run_writes_one_manifest_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("single");
    let o = train(&out, &["--alpha", "0", "--seeds", "1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let m = Manifest::load(&out).unwrap();
    assert_eq!(m.entries.len(), 1);
    assert_eq!((m.entries[0].seed, m.entries[0].alpha), (1, 0.0));
    assert!(out.join("seed1-alpha0/final.ckpt").is_file());
}

#[test]
fn matrix_writes_one_row_per_cell() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("matrix");
    let o = train(&out, &["--matrix", "--seeds", "1,2", "--set", "alphas=0,1"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(Manifest::load(&out).unwrap().entries.len(), 4);
}

#[test]
fn resumed_run_matches_an_uninterrupted_one() {
    let dir = tempfile::tempdir().unwrap();
    let (cut, full) = (dir.path().join("cut"), dir.path().join("full"));
    assert!(train(&cut, &["--alpha", "1"]).status.success());
    let o = train(&cut, &["--alpha", "1", "--set", "epochs=4", "--resume"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(train(&full, &["--alpha", "1", "--set", "epochs=4"]).status.success());
    let a = Manifest::load(&cut).unwrap().entries[0].final_lm;
    let b = Manifest::load(&full).unwrap().entries[0].final_lm;
    assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
}

#[test]
fn bad_configuration_is_an_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = train(&dir.path().join("x"), &["--set", "no_such_key=1"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("no_such_key"));
    let o = train(&dir.path().join("y"), &["--set", "learning_rate=-1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn train_help_documents_every_key() {
    let help = String::from_utf8(cbrnn(&["train", "--help"]).stdout).unwrap();
    for (key, default, _) in CONFIG_KEYS {
        assert!(help.contains(key) && help.contains(default), "{key}");
    }
}

#[test]
fn eval_and_attraction_produce_their_tables() {
    let dir = tempfile::tempdir().unwrap();
    let runs = dir.path().join("runs");
    assert!(train(&runs, &["--alpha", "1", "--seeds", "1,2"]).status.success());
    let ckpt = runs.join("seed1-alpha1/final.ckpt");
    let vocab = runs.join("vocab.txt");
    let base = ["eval", "--checkpoint", s(&ckpt), "--vocab", s(&vocab)];
    let (heldout, heldout_tags) = (toy("heldout.tokens"), toy("heldout.tags"));
    let (deps_tokens, deps) = (toy("deps.tokens"), toy("deps.tsv"));

    let out = dir.path().join("ppl");
    let o = cbrnn(&[&base[..], &["--which", "ppl", "--tokens", s(&toy("heldout.tokens")), "--out", s(&out)]].concat());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let ppl: f64 = fs::read_to_string(out.join("ppl.tsv")).unwrap().lines().nth(1).unwrap().split('\t').nth(1).unwrap().parse().unwrap();
    assert!(ppl > 1.0 && ppl.is_finite());

    let out = dir.path().join("ccg");
    let tagset = runs.join("tags.txt");
    let args = ["--which", "ccg", "--tokens", s(&heldout), "--tags", s(&heldout_tags), "--tagset", s(&tagset)];
    assert!(cbrnn(&[&base[..], &args, &["--out", s(&out)]].concat()).status.success());
    assert!(fs::read_to_string(out.join("ccg.tsv")).unwrap().starts_with("metric\tvalue\naccuracy\t"));
    // Tags without an inventory cannot be scored.
    let o = cbrnn(&[&base[..], &["--which", "ccg", "--tokens", s(&toy("heldout.tokens")), "--out", s(&out)]].concat());
    assert_eq!(o.status.code(), Some(2));

    let out = dir.path().join("deps");
    let args = ["--which", "deps", "--tokens", s(&deps_tokens), "--deps", s(&deps), "--out", s(&out)];
    assert!(cbrnn(&[&base[..], &args].concat()).status.success());
    let table = fs::read_to_string(out.join("deps.tsv")).unwrap();
    assert!(table.lines().last().unwrap().starts_with("all\t5000\t"));

    let out = dir.path().join("attraction");
    let o = cbrnn(&["attraction", "--runs", s(&runs), "--stimuli", s(&toy("stimuli.tsv")), "--resamples", "200", "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(out.join("measures.csv")).unwrap();
    // Two seeds times 96 rows.
    assert_eq!(csv.lines().count(), 1 + 2 * 96);
    assert!(fs::read_to_string(out.join("contrasts.tsv")).unwrap().lines().any(|l| l.starts_with("A-B\trel_attn\t1\t")));
    let again = dir.path().join("attraction2");
    cbrnn(&["attraction", "--runs", s(&runs), "--stimuli", s(&toy("stimuli.tsv")), "--resamples", "200", "--out", s(&again)]);
    for f in ["measures.csv", "contrasts.tsv", "excluded.tsv"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn synth_reproduces_the_bundled_data() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("toy");
    assert!(cbrnn(&["synth", "--out", s(&out)]).status.success());
    for f in cbrnn::synth::BUNDLE_FILES {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(toy(f)).unwrap(), "{f}");
    }
}
