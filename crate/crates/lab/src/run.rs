//! Training runs on disk.
//!
//! ```text
//! <out_dir>/<name>/
//!     config.echo    effective config, preceded by the data protocol as a comment
//!     metrics.csv    one row per epoch
//!     final.txt      test accuracy and run summary
//!     ckpt/last.ckpt model, optimizer and counters (cadence and end of run)
//!     ckpt/best.ckpt model at the best validation accuracy
//!     ckpt/final.ckpt model after the last epoch
//!     grids/         images written by `gen-grid`
//! ```
//!
//! A config with `train.seeds` writes one such layout per seed under
//! `<out_dir>/<name>/seed-<s>/`.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use ugan_core::eval::test_accuracy;
use ugan_core::models::FourPlayerModel;
use ugan_core::train::{TrainData, Trainer};

use crate::checkpoint::{capture, restore, restore_model, Checkpoint, RunState};
use crate::config::{Config, DataKind};
use crate::datasets::{load_run_data, RunData};
use crate::error::{LabError, Result};
use crate::metrics::{encode_csv, read_csv, write_csv, EpochRecord, RunSummary};

pub const CONFIG_ECHO: &str = "config.echo";
pub const METRICS: &str = "metrics.csv";
pub const SUMMARY: &str = "final.txt";
pub const LAST: &str = "ckpt/last.ckpt";
pub const BEST: &str = "ckpt/best.ckpt";
pub const FINAL: &str = "ckpt/final.ckpt";

/// Where a config's run lives: `<out_dir>/<name>`, plus `seed-<s>` inside a seed list.
pub fn run_dir(out_dir: &Path, cfg: &Config, in_seed_list: bool) -> PathBuf {
    let base = out_dir.join(&cfg.run.name);
    if in_seed_list {
        base.join(format!("seed-{}", cfg.train.seed))
    } else {
        base
    }
}

/// Data dimension and class count of a dataset kind.
pub fn dims(kind: DataKind) -> (usize, usize) {
    match kind {
        DataKind::Moons => (2, 2),
        DataKind::Mnist => (784, 10),
    }
}

pub fn build_trainer(cfg: &Config) -> Result<Trainer> {
    let (d, k) = dims(cfg.data.kind);
    let model = FourPlayerModel::build(&cfg.model_config(d, k), cfg.train.seed)?;
    Ok(Trainer::new(model, cfg.schedule())?)
}

/// A trainer whose model weights come from `ckpt`.
pub fn load_model(cfg: &Config, ckpt: &Path) -> Result<Trainer> {
    let mut t = build_trainer(cfg)?;
    restore_model(&Checkpoint::read(ckpt)?, &mut t)?;
    Ok(t)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Progress {
    Quiet,
    /// About twenty lines per run on stderr.
    Periodic,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub summary: RunSummary,
    pub records: Vec<EpochRecord>,
}

fn mkdir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| LabError::io(path, e))
}

fn append_record(path: &Path, rec: &EpochRecord) -> Result<()> {
    let text = encode_csv(std::slice::from_ref(rec))?;
    let row = &text[text.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1)..];
    let mut f = OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| LabError::io(path, e))?;
    f.write_all(row).map_err(|e| LabError::io(path, e))
}

/// Trains one configuration (no seed list) into `dir`.
///
/// With `resume`, an existing `ckpt/last.ckpt` of the same config continues
/// the run and the metrics file is cut back to the epochs it covers.
pub fn train_one(cfg: &Config, dir: &Path, resume: bool, progress: Progress) -> Result<RunOutcome> {
    let data = load_run_data(cfg)?;
    train_with_data(cfg, &data, dir, resume, progress)
}

pub fn train_with_data(cfg: &Config, data: &RunData, dir: &Path, resume: bool, progress: Progress) -> Result<RunOutcome> {
    let (d, k) = dims(cfg.data.kind);
    if (data.data_dim(), data.num_classes()) != (d, k) {
        return Err(LabError::Consistency(format!(
            "data has dimension {} and {} classes, expected {d} and {k}",
            data.data_dim(),
            data.num_classes()
        )));
    }
    let hash = cfg.hash();
    let mut trainer = build_trainer(cfg)?;
    mkdir(&dir.join("ckpt"))?;
    mkdir(&dir.join("grids"))?;
    let echo = format!("# {}\n{}", data.protocol, cfg.echo());
    fs::write(dir.join(CONFIG_ECHO), echo).map_err(|e| LabError::io(dir.join(CONFIG_ECHO), e))?;

    let last = dir.join(LAST);
    let metrics = dir.join(METRICS);
    let mut state = RunState {
        epoch: 0,
        iteration: 0,
        best_val: f64::NEG_INFINITY,
        best_epoch: 0,
    };
    let mut records = Vec::new();
    if resume && last.exists() {
        let ckpt = Checkpoint::read(&last)?;
        if ckpt.config_hash != hash {
            return Err(LabError::Consistency(format!(
                "{} was written by a different config",
                last.display()
            )));
        }
        state = restore(&ckpt, &mut trainer)?;
        records = read_csv(&metrics)?;
        if (records.len() as u64) < state.epoch {
            return Err(LabError::Consistency(format!(
                "{} has {} rows but the checkpoint is at epoch {}",
                metrics.display(),
                records.len(),
                state.epoch
            )));
        }
        records.truncate(state.epoch as usize);
    }
    write_csv(&metrics, &records)?;

    let epochs = cfg.train.epochs;
    let every = cfg.run.checkpoint_every;
    let report_every = (epochs / 20).max(1);
    let train = TrainData {
        labeled: &data.labeled,
        unlabeled: &data.unlabeled,
    };
    while trainer.epoch < epochs {
        let epoch = trainer.epoch;
        let losses = trainer.train_epoch(train)?;
        let val_acc = test_accuracy(&trainer.model.classifier, &data.valid)?;
        let rec = EpochRecord { epoch, val_acc, losses };
        append_record(&metrics, &rec)?;
        records.push(rec);
        state.epoch = trainer.epoch;
        state.iteration = trainer.iteration;
        if val_acc > state.best_val {
            state.best_val = val_acc;
            state.best_epoch = epoch;
            capture(&trainer, state, hash, false).write(&dir.join(BEST))?;
        }
        if every > 0 && trainer.epoch % every == 0 {
            capture(&trainer, state, hash, true).write(&last)?;
        }
        if progress == Progress::Periodic && (trainer.epoch % report_every == 0 || trainer.epoch == epochs) {
            eprintln!(
                "[{}] epoch {}/{} val_acc {:.4} loss_C1 {:.4}",
                cfg.run.name, trainer.epoch, epochs, val_acc, losses.c[0]
            );
        }
    }
    capture(&trainer, state, hash, true).write(&last)?;
    capture(&trainer, state, hash, false).write(&dir.join(FINAL))?;
    if !dir.join(BEST).exists() {
        capture(&trainer, state, hash, false).write(&dir.join(BEST))?;
    }
    let summary = RunSummary {
        test_acc: test_accuracy(&trainer.model.classifier, &data.test)?,
        best_val_acc: state.best_val,
        best_epoch: state.best_epoch,
        epochs,
        seed: cfg.train.seed,
        config_hash: cfg.hash_hex(),
    };
    let path = dir.join(SUMMARY);
    fs::write(&path, summary.encode()).map_err(|e| LabError::io(&path, e))?;
    Ok(RunOutcome {
        dir: dir.to_path_buf(),
        summary,
        records,
    })
}

/// Trains every seed of `cfg` under `out_dir`.
pub fn train_run(cfg: &Config, out_dir: &Path, resume: bool, progress: Progress) -> Result<Vec<RunOutcome>> {
    let list = !cfg.train.seeds.is_empty();
    cfg.per_seed()
        .iter()
        .map(|c| train_one(c, &run_dir(out_dir, c, list), resume, progress))
        .collect()
}

/// Every `final.txt` at or below `path`, sorted.
pub fn find_summaries(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut out = Vec::new();
    let entries = fs::read_dir(path).map_err(|e| LabError::io(path, e))?;
    for entry in entries {
        let p = entry.map_err(|e| LabError::io(path, e))?.path();
        if p.is_dir() {
            out.extend(find_summaries(&p)?);
        } else if p.file_name().is_some_and(|n| n == SUMMARY) {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(extra: &[&str]) -> Config {
        let mut sets: Vec<String> = [
            "data.n_unlabeled=64",
            "data.n_valid=40",
            "data.n_test=40",
            "model.generator_hidden=[8]",
            "model.classifier_hidden=[8]",
            "model.discriminator_hidden=[8]",
            "train.epochs=4",
            "train.gate_epoch=2",
            "train.batch_unlabeled=32",
            "train.batch_labeled=8",
            "train.batch_gg=8",
            "train.batch_bg=8",
            "run.checkpoint_every=2",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        sets.extend(extra.iter().map(|s| s.to_string()));
        Config::from_str("", &sets).unwrap()
    }

    #[test]
    fn layout_and_row_count() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(&[]);
        let out = &train_run(&cfg, tmp.path(), false, Progress::Quiet).unwrap()[0];
        let dir = tmp.path().join("moons");
        assert_eq!(out.dir, dir);
        for f in [CONFIG_ECHO, METRICS, SUMMARY, LAST, BEST, FINAL] {
            assert!(dir.join(f).is_file(), "{f}");
        }
        assert!(dir.join("grids").is_dir());
        let rows = read_csv(&dir.join(METRICS)).unwrap();
        assert_eq!(rows.len(), 4);
        assert_eq!(rows.iter().map(|r| r.losses.lambda0_eff).collect::<Vec<_>>(), vec![0.0, 0.0, 1.0, 1.0]);
        assert_eq!(RunSummary::read(&dir.join(SUMMARY)).unwrap(), out.summary);
        let echo = fs::read_to_string(dir.join(CONFIG_ECHO)).unwrap();
        assert_eq!(Config::from_str(&echo, &[]).unwrap(), cfg);
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let tmp = tempfile::tempdir().unwrap();
        let full = tiny(&[]);
        train_run(&full, &tmp.path().join("a"), false, Progress::Quiet).unwrap();

        // Stop after two epochs, then continue to four with the same config.
        let dir = tmp.path().join("b/moons");
        let data = load_run_data(&full).unwrap();
        let mut short = full.clone();
        short.train.epochs = 2;
        train_with_data(&short, &data, &dir, false, Progress::Quiet).unwrap();
        let ck = Checkpoint::read(&dir.join(LAST)).unwrap();
        let mut relabeled = ck.clone();
        relabeled.config_hash = full.hash();
        relabeled.write(&dir.join(LAST)).unwrap();
        train_with_data(&full, &data, &dir, true, Progress::Quiet).unwrap();

        let a = tmp.path().join("a/moons");
        for f in [METRICS, FINAL, LAST, SUMMARY] {
            assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(dir.join(f)).unwrap(), "{f}");
        }
    }

    #[test]
    fn resume_rejects_other_configs() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(&[]);
        train_run(&cfg, tmp.path(), false, Progress::Quiet).unwrap();
        let other = tiny(&["train.lambda2=0.5"]);
        let r = train_run(&other, tmp.path(), true, Progress::Quiet);
        assert!(matches!(r, Err(LabError::Consistency(_))));
    }

    #[test]
    fn seed_lists_write_one_directory_per_seed() {
        let tmp = tempfile::tempdir().unwrap();
        let cfg = tiny(&["train.seeds=[1, 2]", "train.epochs=1"]);
        let outs = train_run(&cfg, tmp.path(), false, Progress::Quiet).unwrap();
        assert_eq!(outs.len(), 2);
        let found = find_summaries(tmp.path()).unwrap();
        assert_eq!(found, vec![tmp.path().join("moons/seed-1/final.txt"), tmp.path().join("moons/seed-2/final.txt")]);
    }
}
