//! In-memory datasets, labeled/unlabeled splits, synthetic 2-D data and
//! seeded batching. File formats live in the companion crate.

use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

/// Images in `[0,1]^d` with 1-based labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.shape().len() != 2 || images.rows() != labels.len() {
            return Err(Error::shape("dataset", images.shape(), &[labels.len()]));
        }
        if labels.iter().any(|&y| y == 0 || y > num_classes) {
            return Err(Error::domain("dataset", "label outside 1..=K"));
        }
        Ok(Dataset {
            images,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.images.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let images = self.images.select_rows(indices)?;
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Ok(Dataset {
            images,
            labels,
            num_classes: self.num_classes,
        })
    }

    /// Rows `start..end` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Result<Dataset> {
        let idx: Vec<usize> = (start..end).collect();
        self.subset(&idx)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y - 1] += 1;
        }
        counts
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SplitMode {
    StratifiedRandom,
    ManualIndices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_labeled: usize,
    pub seed: u64,
    pub mode: SplitMode,
}

/// Labeled and unlabeled index sets partitioning a dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Split> {
    match &spec.mode {
        SplitMode::StratifiedRandom => stratified_split(dataset, spec.n_labeled, spec.seed),
        SplitMode::ManualIndices(idx) => manual_split(dataset, idx),
    }
}

/// Draws `n_labeled / K` examples of every class; the rest are unlabeled.
pub fn stratified_split(dataset: &Dataset, n_labeled: usize, seed: u64) -> Result<Split> {
    let k = dataset.num_classes;
    if n_labeled == 0 || !n_labeled.is_multiple_of(k) {
        return Err(Error::domain("stratified_split", "n_labeled must be a positive multiple of K"));
    }
    if n_labeled > dataset.len() {
        return Err(Error::domain("stratified_split", "more labels requested than examples"));
    }
    let per_class = n_labeled / k;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in dataset.labels.iter().enumerate() {
        by_class[y - 1].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut labeled = Vec::with_capacity(n_labeled);
    for members in by_class.iter_mut() {
        if members.len() < per_class {
            return Err(Error::domain("stratified_split", "a class has too few examples"));
        }
        members.shuffle(&mut rng);
        labeled.extend_from_slice(&members[..per_class]);
    }
    labeled.sort_unstable();
    Ok(Split {
        unlabeled: complement(dataset.len(), &labeled),
        labeled,
    })
}

/// Uses the given indices as the labeled set.
pub fn manual_split(dataset: &Dataset, indices: &[usize]) -> Result<Split> {
    if indices.is_empty() {
        return Err(Error::domain("manual_split", "empty index list"));
    }
    let mut seen = vec![false; dataset.len()];
    for &i in indices {
        if i >= dataset.len() {
            return Err(Error::domain("manual_split", "index out of range"));
        }
        if seen[i] {
            return Err(Error::domain("manual_split", "duplicate index"));
        }
        seen[i] = true;
    }
    Ok(Split {
        labeled: indices.to_vec(),
        unlabeled: complement(dataset.len(), indices),
    })
}

fn complement(n: usize, taken: &[usize]) -> Vec<usize> {
    let mut mask = vec![false; n];
    for &i in taken {
        mask[i] = true;
    }
    (0..n).filter(|&i| !mask[i]).collect()
}

fn normal(rng: &mut dyn RngCore) -> f64 {
    StandardNormal.sample(rng)
}

/// Two interleaved half circles, mapped affinely into the unit square.
///
/// Class 1 is the upper moon and class 2 the lower one, alternating by index
/// so any even `n` is exactly balanced. `noise_sigma` is in the units of the
/// unmapped moons (radius 1); points are clipped to `[0,1]²`.
pub fn make_two_moons(n: usize, noise_sigma: f64, seed: u64) -> Result<Dataset> {
    if n < 4 {
        return Err(Error::domain("two_moons", "need at least 2 points per class"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let t = rng.random_range(0.0..core::f64::consts::PI);
        let (x, y) = if i % 2 == 0 {
            (libm::cos(t), libm::sin(t))
        } else {
            (1.0 - libm::cos(t), 0.5 - libm::sin(t))
        };
        let x = x + noise_sigma * normal(&mut rng);
        let y = y + noise_sigma * normal(&mut rng);
        data.push(((x + 1.5) / 4.0).clamp(0.0, 1.0));
        data.push(((y + 1.0) / 2.5).clamp(0.0, 1.0));
        labels.push(i % 2 + 1);
    }
    Dataset::new(Tensor::matrix(n, 2, data)?, labels, 2)
}

/// Isotropic Gaussian clusters around `centers`, one class per center,
/// assigned round-robin; points are clipped to the unit cube.
pub fn make_gauss_mixture(n: usize, centers: &[Vec<f64>], sigma: f64, seed: u64) -> Result<Dataset> {
    let k = centers.len();
    if k < 2 || n < 2 * k {
        return Err(Error::domain("gauss_mixture", "need K ≥ 2 and n ≥ 2K"));
    }
    let d = centers[0].len();
    if d == 0 || centers.iter().any(|c| c.len() != d) {
        return Err(Error::domain("gauss_mixture", "centers must share a positive dimension"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let c = i % k;
        for &m in &centers[c] {
            data.push((m + sigma * normal(&mut rng)).clamp(0.0, 1.0));
        }
        labels.push(c + 1);
    }
    Dataset::new(Tensor::matrix(n, d, data)?, labels, k)
}

/// RNG for stream `stream` of a run seed; distinct streams never overlap.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One epoch's batches: a permutation of `indices` salted by `epoch`, cut
/// into `batch_size` chunks with the short final chunk kept.
pub fn epoch_batches(indices: &[usize], batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Vec<usize>>> {
    if batch_size == 0 {
        return Err(Error::domain("batch_iterator", "batch size must be at least 1"));
    }
    let mut order = indices.to_vec();
    order.shuffle(&mut stream_rng(seed, epoch));
    Ok(order.chunks(batch_size).map(<[usize]>::to_vec).collect())
}

/// Endless batches over a small index set, reshuffled on every pass.
#[derive(Debug, Clone)]
pub struct Cycler {
    indices: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
}

impl Cycler {
    pub fn new(indices: Vec<usize>, rng: ChaCha8Rng) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::domain("cycler", "empty index set"));
        }
        Ok(Cycler {
            order: Vec::new(),
            cursor: 0,
            indices,
            rng,
        })
    }

    pub fn next_batch(&mut self, size: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(size);
        while out.len() < size {
            if self.cursor == self.order.len() {
                self.order = self.indices.clone();
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            out.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        out
    }
}

/// `n` labels drawn uniformly from `1..=K`.
pub fn uniform_labels(n: usize, num_classes: usize, rng: &mut dyn RngCore) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(1..=num_classes)).collect()
}

/// `n × dim` latent batch uniform on `[0,1]^dim`.
pub fn uniform_latent(n: usize, dim: usize, rng: &mut dyn RngCore) -> Tensor {
    let data = (0..n * dim).map(|_| rng.random::<f64>()).collect();
    Tensor::new(&[n, dim], data).expect("latent shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(labels: Vec<usize>, k: usize) -> Dataset {
        let n = labels.len();
        Dataset::new(Tensor::zeros(&[n, 1]), labels, k).unwrap()
    }

    fn ten_class(n_per: usize) -> Dataset {
        toy((0..10 * n_per).map(|i| i % 10 + 1).collect(), 10)
    }

    #[test]
    fn stratified_counts_are_exact() {
        let ds = ten_class(30);
        for (n, per) in [(100, 10), (20, 2)] {
            let s = stratified_split(&ds, n, 4).unwrap();
            assert_eq!(s.labeled.len(), n);
            let sub = ds.subset(&s.labeled).unwrap();
            assert!(sub.class_counts().iter().all(|&c| c == per));
            assert_eq!(s.labeled.len() + s.unlabeled.len(), ds.len());
        }
        assert_eq!(stratified_split(&ds, 100, 4), stratified_split(&ds, 100, 4));
        assert_ne!(stratified_split(&ds, 100, 4), stratified_split(&ds, 100, 5));
    }

    #[test]
    fn stratified_rejects_infeasible_requests() {
        let ds = ten_class(3);
        assert!(stratified_split(&ds, 15, 0).is_err());
        assert!(stratified_split(&ds, 40, 0).is_err());
        let skew = toy(vec![1, 1, 1, 2], 2);
        assert!(matches!(stratified_split(&skew, 4, 0), Err(Error::Domain { .. })));
    }

    #[test]
    fn manual_split_partitions() {
        let ds = ten_class(2);
        let s = manual_split(&ds, &(0..10).collect::<Vec<_>>()).unwrap();
        assert_eq!(ds.subset(&s.labeled).unwrap().class_counts(), vec![1; 10]);
        let mut all: Vec<usize> = s.labeled.iter().chain(&s.unlabeled).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..20).collect::<Vec<_>>());
        assert!(manual_split(&ds, &[]).is_err());
        assert!(manual_split(&ds, &[1, 1]).is_err());
        assert!(manual_split(&ds, &[20]).is_err());
    }

    #[test]
    fn two_moons_is_balanced_and_reproducible() {
        let a = make_two_moons(200, 0.1, 3).unwrap();
        assert_eq!(a.class_counts(), vec![100, 100]);
        assert_eq!(a, make_two_moons(200, 0.1, 3).unwrap());
        assert!(a.images.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn noiseless_mixture_sits_on_centers() {
        let centers = vec![vec![0.2, 0.3], vec![0.8, 0.5], vec![0.4, 0.9]];
        let ds = make_gauss_mixture(30, &centers, 0.0, 1).unwrap();
        for i in 0..ds.len() {
            assert_eq!(ds.images.row(i), centers[ds.labels[i] - 1].as_slice());
        }
        assert_eq!(ds.class_counts(), vec![10, 10, 10]);
    }

    #[test]
    fn epoch_batches_cover_indices_once() {
        let idx: Vec<usize> = (0..100).collect();
        let b = epoch_batches(&idx, 50, 9, 0).unwrap();
        assert_eq!(b.iter().map(Vec::len).collect::<Vec<_>>(), vec![50, 50]);
        let mut all: Vec<usize> = b.concat();
        all.sort_unstable();
        assert_eq!(all, idx);
        assert_ne!(b, epoch_batches(&idx, 50, 9, 1).unwrap());
        let short = epoch_batches(&idx, 30, 9, 0).unwrap();
        assert_eq!(short.last().unwrap().len(), 10);
        assert!(epoch_batches(&idx, 0, 9, 0).is_err());
    }

    #[test]
    fn cycler_reshuffles_each_pass() {
        let mut c = Cycler::new((0..6).collect(), stream_rng(1, 0)).unwrap();
        let a = c.next_batch(6);
        let b = c.next_batch(6);
        let (mut sa, mut sb) = (a.clone(), b.clone());
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, (0..6).collect::<Vec<_>>());
        assert_eq!(sa, sb);
        assert_eq!(c.next_batch(4).len(), 4);
    }
}
