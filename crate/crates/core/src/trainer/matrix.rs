//! Seed x alpha experiment matrix with a TSV manifest.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{run_training, CheckpointPolicy, TrainConfig, TrainState, TrainingSequence};
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};

pub const MANIFEST_HEADER: &str = "seed\talpha\tstatus\tcheckpoint_path\tfinal_L_LM\tfinal_L_CCG";
pub const MANIFEST_FILE: &str = "manifest.tsv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Ok,
    Failed,
}

impl fmt::Display for RunStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RunStatus::Ok => "ok",
            RunStatus::Failed => "failed",
        })
    }
}

/// One trained cell. `checkpoint` is relative to the manifest directory.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub seed: u64,
    pub alpha: f64,
    pub status: RunStatus,
    pub checkpoint: Option<PathBuf>,
    pub final_lm: f64,
    pub final_ccg: f64,
}

impl ManifestEntry {
    fn key(&self) -> (u64, u64) {
        (self.seed, self.alpha.to_bits())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h.trim_end() == MANIFEST_HEADER => {}
            _ => return Err(Error::Parse { path: MANIFEST_FILE.into(), line: 1, message: "bad header".into() }),
        }
        let mut entries = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let bad = |m: &str| Error::Parse { path: MANIFEST_FILE.into(), line: i + 1, message: m.into() };
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 6 {
                return Err(bad("expected 6 fields"));
            }
            entries.push(ManifestEntry {
                seed: f[0].parse().map_err(|_| bad("seed"))?,
                alpha: f[1].parse().map_err(|_| bad("alpha"))?,
                status: match f[2] {
                    "ok" => RunStatus::Ok,
                    "failed" => RunStatus::Failed,
                    _ => return Err(bad("status")),
                },
                checkpoint: (f[3] != "-").then(|| PathBuf::from(f[3])),
                final_lm: f[4].parse().map_err(|_| bad("final_L_LM"))?,
                final_ccg: f[5].parse().map_err(|_| bad("final_L_CCG"))?,
            });
        }
        Ok(Manifest { entries })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("{MANIFEST_HEADER}\n");
        for e in &self.entries {
            let path = e.checkpoint.as_ref().map_or("-".to_string(), |p| p.display().to_string());
            s.push_str(&format!("{}\t{}\t{}\t{}\t{}\t{}\n", e.seed, e.alpha, e.status, path, e.final_lm, e.final_ccg));
        }
        s
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        match fs::read_to_string(&path) {
            Ok(text) => Self::parse(&text),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(Manifest::default()),
            Err(e) => Err(Error::io(path, e)),
        }
    }

    /// Atomic write of `manifest.tsv` in `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_FILE);
        let tmp = dir.join(format!("{MANIFEST_FILE}.tmp"));
        fs::write(&tmp, self.to_text()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(path, e))
    }

    /// Inserts or replaces the entry for the same (seed, alpha).
    pub fn upsert(&mut self, entry: ManifestEntry) {
        match self.entries.iter_mut().find(|e| e.key() == entry.key()) {
            Some(slot) => *slot = entry,
            None => self.entries.push(entry),
        }
    }

    pub fn get(&self, seed: u64, alpha: f64) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.seed == seed && e.alpha.to_bits() == alpha.to_bits())
    }

    /// Absolute checkpoint paths of successful cells with the given alpha.
    pub fn checkpoints_for(&self, dir: &Path, alpha: f64) -> Vec<(u64, PathBuf)> {
        self.entries
            .iter()
            .filter(|e| e.status == RunStatus::Ok && e.alpha == alpha)
            .filter_map(|e| e.checkpoint.as_ref().map(|p| (e.seed, dir.join(p))))
            .collect()
    }
}

pub fn cell_dir_name(seed: u64, alpha: f64) -> String {
    format!("seed{seed}-alpha{alpha}")
}

fn latest_checkpoint(dir: &Path) -> Option<PathBuf> {
    let mut found: Vec<PathBuf> = fs::read_dir(dir)
        .ok()?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("epoch-") && n.ends_with(".ckpt")))
        .collect();
    found.sort();
    found.pop()
}

fn run_cell(
    base: &ModelConfig,
    cfg: &TrainConfig,
    sequences: &[TrainingSequence],
    out_dir: &Path,
    seed: u64,
    alpha: f64,
    resume: bool,
) -> Result<(PathBuf, f64, f64)> {
    let rel = PathBuf::from(cell_dir_name(seed, alpha));
    let policy = CheckpointPolicy { dir: out_dir.join(&rel) };
    let cell_cfg = TrainConfig { alpha, ..cfg.clone() };
    let mut state = match latest_checkpoint(&policy.dir).filter(|_| resume) {
        Some(path) => {
            log::info!("resuming seed {seed} alpha {alpha} from {}", path.display());
            TrainState::load(&path)?.0
        }
        None => TrainState::new(Model::new(base.clone().with_seed(seed))?, &cell_cfg),
    };
    run_training(&mut state, sequences, &cell_cfg, Some(&policy), None)?;
    let last = state.log.last_epoch();
    Ok((rel.join("final.ckpt"), last.map_or(f64::NAN, |e| e.lm), last.map_or(f64::NAN, |e| e.ccg)))
}

/// Trains every (seed, alpha) cell of `cfg` (or only `cells`) in parallel
/// under `out_dir`, then merges the results into `out_dir/manifest.tsv`.
/// Entries for cells not run this time are kept. A failing cell is recorded
/// as `failed` and does not stop the others.
pub fn run_matrix(
    base: &ModelConfig,
    cfg: &TrainConfig,
    sequences: &[TrainingSequence],
    out_dir: &Path,
    cells: Option<&[(u64, f64)]>,
    resume: bool,
) -> Result<Manifest> {
    cfg.validate()?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let all: Vec<(u64, f64)> = cfg.seeds.iter().flat_map(|&s| cfg.alphas.iter().map(move |&a| (s, a))).collect();
    let todo: Vec<(u64, f64)> = cells.map_or(all, <[_]>::to_vec);
    let results: Vec<ManifestEntry> = todo
        .par_iter()
        .map(|&(seed, alpha)| match run_cell(base, cfg, sequences, out_dir, seed, alpha, resume) {
            Ok((path, lm, ccg)) => ManifestEntry {
                seed,
                alpha,
                status: RunStatus::Ok,
                checkpoint: Some(path),
                final_lm: lm,
                final_ccg: ccg,
            },
            Err(e) => {
                log::error!("cell seed {seed} alpha {alpha} failed: {e}");
                ManifestEntry { seed, alpha, status: RunStatus::Failed, checkpoint: None, final_lm: f64::NAN, final_ccg: f64::NAN }
            }
        })
        .collect();
    let mut manifest = Manifest::load(out_dir)?;
    for r in results {
        manifest.upsert(r);
    }
    manifest.entries.sort_by(|a, b| a.seed.cmp(&b.seed).then(a.alpha.total_cmp(&b.alpha)));
    manifest.save(out_dir)?;
    Ok(manifest)
}
