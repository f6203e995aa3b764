//! Accuracy, multi-run aggregation and generator image grids.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::data::{stream_rng, uniform_latent, Dataset};
use crate::error::{Error, Result};
use crate::models::{Classifier, Generator};
use crate::tensor::{one_hot, Tensor};

/// Rows per eval-mode forward when scoring a dataset.
const EVAL_CHUNK: usize = 500;

/// Fraction of predictions equal to the labels.
pub fn accuracy(predicted: &[usize], labels: &[usize]) -> Result<f64> {
    if labels.is_empty() || predicted.len() != labels.len() {
        return Err(Error::domain("accuracy", "need equal, non-empty prediction and label lists"));
    }
    let hits = predicted.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Eval-mode accuracy of the classifier, argmax over the `K` real classes.
pub fn test_accuracy(classifier: &Classifier, dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::domain("test_accuracy", "empty split"));
    }
    let mut predicted = Vec::with_capacity(dataset.len());
    for start in (0..dataset.len()).step_by(EVAL_CHUNK) {
        let end = (start + EVAL_CHUNK).min(dataset.len());
        let idx: Vec<usize> = (start..end).collect();
        predicted.extend(classifier.predict(&dataset.images.select_rows(&idx)?)?);
    }
    accuracy(&predicted, &dataset.labels)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    /// Sample (n − 1) standard deviation.
    pub std: f64,
    pub runs: usize,
}

impl Aggregate {
    /// `xx.xx ± x.xx%` from accuracies in `[0, 1]`.
    pub fn format_percent(&self) -> String {
        format!("{:.2} ± {:.2}%", 100.0 * self.mean, 100.0 * self.std)
    }
}

/// Mean and sample standard deviation of final accuracies.
pub fn aggregate_runs(accuracies: &[f64]) -> Result<Aggregate> {
    let n = accuracies.len();
    if n < 2 {
        return Err(Error::domain("aggregate_runs", "need at least 2 runs"));
    }
    let mean = accuracies.iter().sum::<f64>() / n as f64;
    let ss: f64 = accuracies.iter().map(|a| (a - mean) * (a - mean)).sum();
    Ok(Aggregate {
        mean,
        std: libm::sqrt(ss / (n - 1) as f64),
        runs: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridMode {
    /// One random latent per row.
    ClassGrid,
    /// Rows walk linearly from `from` to `to`.
    Interpolation { from: Vec<f64>, to: Vec<f64> },
}

/// Layout of a generator grid: `rows × K` tiles, one class per column.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub rows: usize,
    pub mode: GridMode,
    pub seed: u64,
}

/// 8-bit grayscale raster, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

/// Latent vector used for each grid row.
pub fn grid_latents(spec: &GridSpec, latent_dim: usize) -> Result<Tensor> {
    if spec.rows == 0 {
        return Err(Error::domain("grid", "rows must be at least 1"));
    }
    match &spec.mode {
        GridMode::ClassGrid => Ok(uniform_latent(spec.rows, latent_dim, &mut stream_rng(spec.seed, 0))),
        GridMode::Interpolation { from, to } => {
            if from.len() != latent_dim || to.len() != latent_dim {
                return Err(Error::shape("grid", &[from.len(), to.len()], &[latent_dim]));
            }
            let mut data = Vec::with_capacity(spec.rows * latent_dim);
            for r in 0..spec.rows {
                let t = if spec.rows == 1 {
                    0.0
                } else {
                    r as f64 / (spec.rows - 1) as f64
                };
                data.extend(from.iter().zip(to).map(|(a, b)| (1.0 - t) * a + t * b));
            }
            Tensor::matrix(spec.rows, latent_dim, data)
        }
    }
}

/// Generated samples for every tile, row-major over `(row, class)`.
pub fn grid_tiles(gen: &Generator, spec: &GridSpec) -> Result<Tensor> {
    let k = gen.num_classes;
    if k == 0 {
        return Err(Error::Contract {
            reason: "grids need a conditional generator",
        });
    }
    let z = grid_latents(spec, gen.latent_dim)?;
    let rows: Vec<usize> = (0..spec.rows).flat_map(|r| core::iter::repeat_n(r, k)).collect();
    let labels: Vec<usize> = (0..spec.rows).flat_map(|_| 1..=k).collect();
    let z = z.select_rows(&rows)?;
    gen.sample(&z, Some(&one_hot(&labels, k)?))
}

/// Pixel value of a sample in `[0,1]` (clipped first).
pub fn to_byte(v: f64) -> u8 {
    libm::round(v.clamp(0.0, 1.0) * 255.0) as u8
}

/// Assembles square tiles into one image, `cols` tiles per row.
pub fn assemble(tiles: &Tensor, cols: usize) -> Result<GrayImage> {
    let d = tiles.cols();
    let side = libm::sqrt(d as f64) as usize;
    if side * side != d {
        return Err(Error::domain("grid", "samples are not square images"));
    }
    if cols == 0 || !tiles.rows().is_multiple_of(cols) {
        return Err(Error::domain("grid", "tile count is not a multiple of the column count"));
    }
    let rows = tiles.rows() / cols;
    let (width, height) = (cols * side, rows * side);
    let mut pixels = alloc::vec![0u8; width * height];
    for t in 0..tiles.rows() {
        let (tr, tc) = (t / cols, t % cols);
        for (p, &v) in tiles.row(t).iter().enumerate() {
            let (py, px) = (p / side, p % side);
            pixels[(tr * side + py) * width + tc * side + px] = to_byte(v);
        }
    }
    Ok(GrayImage { width, height, pixels })
}

/// Class grid or interpolation image for a conditional generator.
pub fn render_grid(gen: &Generator, spec: &GridSpec) -> Result<GrayImage> {
    assemble(&grid_tiles(gen, spec)?, gen.num_classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{FourPlayerModel, ModelConfig};
    use alloc::vec;

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[1, 2, 3], &[1, 2, 3]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 2, 1, 2], &[1, 1, 2, 2]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate_runs(&[0.99, 0.99, 0.99]).unwrap().format_percent(), "99.00 ± 0.00%");
        let a = aggregate_runs(&[0.98, 1.00]).unwrap();
        assert_eq!(a.format_percent(), "99.00 ± 1.41%");
        assert_eq!(a, aggregate_runs(&[1.00, 0.98]).unwrap());
        assert!(aggregate_runs(&[0.5]).is_err());
    }

    fn digit_gen() -> Generator {
        let mut cfg = ModelConfig::mnist(10, 8);
        cfg.generator_hidden = vec![16];
        FourPlayerModel::build(&cfg, 2).unwrap().good_gen
    }

    #[test]
    fn class_grid_is_280_square_for_digits() {
        let g = digit_gen();
        let spec = GridSpec {
            rows: 10,
            mode: GridMode::ClassGrid,
            seed: 1,
        };
        let img = render_grid(&g, &spec).unwrap();
        assert_eq!((img.width, img.height), (280, 280));
        assert_eq!(img, render_grid(&g, &spec).unwrap());
    }

    #[test]
    fn interpolation_endpoints() {
        let g = digit_gen();
        let a: Vec<f64> = (0..8).map(|i| i as f64 / 8.0).collect();
        let b: Vec<f64> = (0..8).map(|i| 1.0 - i as f64 / 16.0).collect();
        let same = GridSpec {
            rows: 3,
            mode: GridMode::Interpolation {
                from: a.clone(),
                to: a.clone(),
            },
            seed: 0,
        };
        let t = grid_tiles(&g, &same).unwrap();
        for r in 1..3 {
            for c in 0..10 {
                assert_eq!(t.row(r * 10 + c), t.row(c));
            }
        }
        let two = GridSpec {
            rows: 2,
            mode: GridMode::Interpolation { from: a, to: b },
            seed: 0,
        };
        let z = grid_latents(&two, 8).unwrap();
        assert_eq!(z.row(1), &(0..8).map(|i| 1.0 - i as f64 / 16.0).collect::<Vec<_>>()[..]);
    }

    #[test]
    fn assemble_places_tiles() {
        let tiles = Tensor::matrix(2, 4, vec![0.0, 1.0, 0.5, 2.0, -1.0, 0.2, 0.4, 0.6]).unwrap();
        let img = assemble(&tiles, 2).unwrap();
        assert_eq!((img.width, img.height), (4, 2));
        assert_eq!(img.pixels, vec![0, 255, 0, 51, 128, 255, 102, 153]);
    }
}
