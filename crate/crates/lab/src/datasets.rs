//! Turns the `[data]` section into labeled, unlabeled, validation and test sets.

use ugan_core::data::{make_two_moons, split, stream_rng, Dataset, SplitMode, SplitSpec};
use ugan_core::Tensor;

use rand::seq::SliceRandom;

use crate::config::{Config, DataKind};
use crate::error::{LabError, Result};
use crate::idx::load_mnist;

/// Seed offsets of the generated moons splits.
pub const MOONS_TRAIN_OFFSET: u64 = 1000;
pub const MOONS_TEST_OFFSET: u64 = 2000;
pub const MOONS_VALID_OFFSET: u64 = 3000;

#[derive(Debug, Clone)]
pub struct RunData {
    pub labeled: Dataset,
    pub unlabeled: Tensor,
    pub valid: Dataset,
    pub test: Dataset,
    /// How the splits were formed, recorded next to the effective config.
    pub protocol: String,
}

impl RunData {
    pub fn data_dim(&self) -> usize {
        self.labeled.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.labeled.num_classes
    }
}

fn split_spec(cfg: &Config) -> SplitSpec {
    let d = &cfg.data;
    SplitSpec {
        n_labeled: d.n_labeled,
        seed: d.seed,
        mode: if d.manual_indices.is_empty() {
            SplitMode::StratifiedRandom
        } else {
            SplitMode::ManualIndices(d.manual_indices.clone())
        },
    }
}

fn split_desc(cfg: &Config) -> String {
    if cfg.data.manual_indices.is_empty() {
        format!("{} stratified labels with seed {}", cfg.data.n_labeled, cfg.data.seed)
    } else {
        format!("{} manually chosen labels", cfg.data.manual_indices.len())
    }
}

pub fn load_run_data(cfg: &Config) -> Result<RunData> {
    match cfg.data.kind {
        DataKind::Moons => moons(cfg),
        DataKind::Mnist => digits(cfg),
    }
}

fn moons(cfg: &Config) -> Result<RunData> {
    let d = &cfg.data;
    let train = make_two_moons(d.n_labeled + d.n_unlabeled, d.noise, MOONS_TRAIN_OFFSET + d.seed)?;
    let s = split(&train, &split_spec(cfg))?;
    Ok(RunData {
        labeled: train.subset(&s.labeled)?,
        unlabeled: train.images.select_rows(&s.unlabeled)?,
        valid: make_two_moons(d.n_valid, d.noise, MOONS_VALID_OFFSET + d.seed)?,
        test: make_two_moons(d.n_test, d.noise, MOONS_TEST_OFFSET + d.seed)?,
        protocol: format!(
            "two moons: train/valid/test generated with seeds {}/{}/{} plus data.seed, {}, the rest unlabeled",
            MOONS_TRAIN_OFFSET,
            MOONS_VALID_OFFSET,
            MOONS_TEST_OFFSET,
            split_desc(cfg)
        ),
    })
}

fn digits(cfg: &Config) -> Result<RunData> {
    let d = &cfg.data;
    let (all, test) = load_mnist(&cfg.data_dir()?)?;
    if d.n_valid >= all.len() {
        return Err(LabError::Config(format!(
            "data.n_valid = {} leaves no training images out of {}",
            d.n_valid,
            all.len()
        )));
    }
    let cut = all.len() - d.n_valid;
    let train = all.slice(0, cut)?;
    let valid = all.slice(cut, all.len())?;
    let test = match d.n_test {
        0 => test,
        n if n <= test.len() => test.slice(0, n)?,
        n => return Err(LabError::Config(format!("data.n_test = {n} exceeds {} test images", test.len()))),
    };
    let s = split(&train, &split_spec(cfg))?;
    let mut pool = s.unlabeled;
    if d.n_unlabeled > 0 && d.n_unlabeled < pool.len() {
        pool.shuffle(&mut stream_rng(d.seed, 1));
        pool.truncate(d.n_unlabeled);
        pool.sort_unstable();
    }
    Ok(RunData {
        labeled: train.subset(&s.labeled)?,
        unlabeled: train.images.select_rows(&pool)?,
        protocol: format!(
            "digits: validation = last {} of {} training images, {}, {} unlabeled from the remaining training images, {} test images",
            d.n_valid,
            all.len(),
            split_desc(cfg),
            pool.len(),
            test.len()
        ),
        valid,
        test,
    })
}
