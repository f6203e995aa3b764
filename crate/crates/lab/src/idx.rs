//! IDX files: big-endian `u32` magic and dimensions, then a raw `u8` payload.

use std::fs;
use std::path::Path;

use ugan_core::data::Dataset;
use ugan_core::eval::to_byte;
use ugan_core::Tensor;

use crate::error::{LabError, Result};

pub const IMAGES_MAGIC: u32 = 2051;
pub const LABELS_MAGIC: u32 = 2049;
/// Digit classes; file labels `0..=9` become `1..=10`.
pub const DIGIT_CLASSES: usize = 10;

pub const TRAIN_IMAGES: &str = "train-images-idx3-ubyte";
pub const TRAIN_LABELS: &str = "train-labels-idx1-ubyte";
pub const TEST_IMAGES: &str = "t10k-images-idx3-ubyte";
pub const TEST_LABELS: &str = "t10k-labels-idx1-ubyte";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxImages {
    pub rows: usize,
    pub cols: usize,
    /// `count · rows · cols` bytes, image-major.
    pub pixels: Vec<u8>,
}

impl IdxImages {
    pub fn count(&self) -> usize {
        self.pixels.len() / (self.rows * self.cols).max(1)
    }
}

fn read_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| LabError::format(what, format!("header truncated at byte {at}")))
}

fn check_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = read_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(LabError::format(what, format!("magic {magic}, expected {expected}")));
    }
    Ok(())
}

fn payload<'a>(bytes: &'a [u8], header: usize, len: usize, what: &str) -> Result<&'a [u8]> {
    let body = &bytes[header..];
    if body.len() != len {
        return Err(LabError::format(
            what,
            format!("payload has {} bytes, header promises {len}", body.len()),
        ));
    }
    Ok(body)
}

pub fn parse_images(bytes: &[u8], what: &str) -> Result<IdxImages> {
    check_magic(bytes, IMAGES_MAGIC, what)?;
    let n = read_u32(bytes, 4, what)? as usize;
    let rows = read_u32(bytes, 8, what)? as usize;
    let cols = read_u32(bytes, 12, what)? as usize;
    if rows == 0 || cols == 0 {
        return Err(LabError::format(what, "zero image dimension"));
    }
    let pixels = payload(bytes, 16, n * rows * cols, what)?.to_vec();
    Ok(IdxImages { rows, cols, pixels })
}

pub fn parse_labels(bytes: &[u8], what: &str) -> Result<Vec<u8>> {
    check_magic(bytes, LABELS_MAGIC, what)?;
    let n = read_u32(bytes, 4, what)? as usize;
    Ok(payload(bytes, 8, n, what)?.to_vec())
}

pub fn encode_images(images: &IdxImages) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + images.pixels.len());
    for v in [IMAGES_MAGIC, images.count() as u32, images.rows as u32, images.cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    out.extend_from_slice(&images.pixels);
    out
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}

/// Pairs parsed images and labels into a dataset with pixels in `[0,1]`.
pub fn decode_dataset(images: &IdxImages, labels: &[u8]) -> Result<Dataset> {
    if images.count() != labels.len() {
        return Err(LabError::Consistency(format!(
            "{} images but {} labels",
            images.count(),
            labels.len()
        )));
    }
    if let Some(bad) = labels.iter().find(|&&l| l as usize >= DIGIT_CLASSES) {
        return Err(LabError::format("labels", format!("label {bad} outside 0..=9")));
    }
    let data = images.pixels.iter().map(|&b| b as f64 / 255.0).collect();
    let images = Tensor::matrix(labels.len(), images.rows * images.cols, data)?;
    let labels = labels.iter().map(|&l| l as usize + 1).collect();
    Ok(Dataset::new(images, labels, DIGIT_CLASSES)?)
}

/// Inverse of [`decode_dataset`] for square images.
pub fn encode_dataset(dataset: &Dataset) -> Result<(Vec<u8>, Vec<u8>)> {
    let d = dataset.dim();
    let side = (d as f64).sqrt().round() as usize;
    if side * side != d {
        return Err(LabError::Consistency(format!("{d} pixels is not a square image")));
    }
    if dataset.labels.iter().any(|&y| y > DIGIT_CLASSES) {
        return Err(LabError::Consistency("labels do not fit one byte digit classes".into()));
    }
    let images = IdxImages {
        rows: side,
        cols: side,
        pixels: dataset.images.data().iter().map(|&v| to_byte(v)).collect(),
    };
    let labels: Vec<u8> = dataset.labels.iter().map(|&y| (y - 1) as u8).collect();
    Ok((encode_images(&images), encode_labels(&labels)))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| LabError::io(path, e))
}

pub fn load_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset> {
    let images = parse_images(&read(images_path)?, &images_path.display().to_string())?;
    let labels = parse_labels(&read(labels_path)?, &labels_path.display().to_string())?;
    decode_dataset(&images, &labels)
}

/// Training and test sets from the four standard file names in `dir`.
pub fn load_mnist(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = load_idx(&dir.join(TRAIN_IMAGES), &dir.join(TRAIN_LABELS))?;
    let test = load_idx(&dir.join(TEST_IMAGES), &dir.join(TEST_LABELS))?;
    Ok((train, test))
}
