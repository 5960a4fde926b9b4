//! IDX binary files (the MNIST/Fashion-MNIST distribution format).

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::{Dataset, FeatureStats};
use crate::error::{Error, Result};

const IMAGES_MAGIC: u32 = 0x0000_0803;
const LABELS_MAGIC: u32 = 0x0000_0801;

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.into(),
        message: message.into(),
    }
}

fn read_u32(bytes: &[u8], at: usize, path: &Path) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| format_err(path, "truncated header"))
}

/// Parses an image file into an `n x (rows*cols)` matrix scaled to [0, 1].
pub fn parse_images(bytes: &[u8], path: &Path) -> Result<Array2<f64>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != IMAGES_MAGIC {
        return Err(format_err(path, format!("bad image magic {magic:#010x}")));
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let rows = read_u32(bytes, 8, path)? as usize;
    let cols = read_u32(bytes, 12, path)? as usize;
    let dim = rows
        .checked_mul(cols)
        .ok_or_else(|| format_err(path, "image size overflows"))?;
    let need = n
        .checked_mul(dim)
        .and_then(|v| v.checked_add(16))
        .ok_or_else(|| format_err(path, "image count overflows"))?;
    if bytes.len() < need {
        return Err(format_err(path, format!("truncated: {} bytes, expected {need}", bytes.len())));
    }
    let pixels = bytes[16..need].iter().map(|&b| f64::from(b) / 255.0).collect();
    Array2::from_shape_vec((n, dim), pixels).map_err(|e| format_err(path, e.to_string()))
}

pub fn parse_labels(bytes: &[u8], path: &Path) -> Result<Vec<usize>> {
    let magic = read_u32(bytes, 0, path)?;
    if magic != LABELS_MAGIC {
        return Err(format_err(path, format!("bad label magic {magic:#010x}")));
    }
    let n = read_u32(bytes, 4, path)? as usize;
    let body = bytes
        .get(8..8 + n)
        .ok_or_else(|| format_err(path, format!("truncated: expected {n} labels")))?;
    Ok(body.iter().map(|&b| usize::from(b)).collect())
}

fn read_pair(images: &Path, labels: &Path) -> Result<(Array2<f64>, Vec<usize>)> {
    let x = parse_images(&fs::read(images)?, images)?;
    let y = parse_labels(&fs::read(labels)?, labels)?;
    if x.nrows() != y.len() {
        return Err(format_err(
            labels,
            format!("{} labels for {} images", y.len(), x.nrows()),
        ));
    }
    Ok((x, y))
}

fn class_count(labels: &[usize]) -> usize {
    labels.iter().max().map_or(2, |m| (m + 1).max(2))
}

/// Loads one image/label pair as a training set with an empty test split.
pub fn load_idx(images_path: impl AsRef<Path>, labels_path: impl AsRef<Path>) -> Result<Dataset> {
    let (x, y) = read_pair(images_path.as_ref(), labels_path.as_ref())?;
    let d = x.ncols();
    Ok(Dataset {
        test_inputs: Array2::zeros((0, d)),
        test_labels: Vec::new(),
        feature_stats: FeatureStats::identity(d),
        class_count: class_count(&y),
        train_inputs: x,
        train_labels: y,
    })
}

/// Loads separate train and test pairs.
pub fn load_idx_pair(
    train_images: impl AsRef<Path>,
    train_labels: impl AsRef<Path>,
    test_images: impl AsRef<Path>,
    test_labels: impl AsRef<Path>,
) -> Result<Dataset> {
    let (x, y) = read_pair(train_images.as_ref(), train_labels.as_ref())?;
    let (tx, ty) = read_pair(test_images.as_ref(), test_labels.as_ref())?;
    if tx.ncols() != x.ncols() {
        return Err(Error::shape("train and test images differ in size"));
    }
    let ds = Dataset {
        feature_stats: FeatureStats::identity(x.ncols()),
        class_count: class_count(&y).max(class_count(&ty)),
        train_inputs: x,
        train_labels: y,
        test_inputs: tx,
        test_labels: ty,
    };
    ds.validate()?;
    Ok(ds)
}
