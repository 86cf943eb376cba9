//! MNIST in the big-endian IDX container.
//!
//! ```text
//! images: 0x00000803 | N | rows | cols | N*rows*cols u8
//! labels: 0x00000801 | N | N u8
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array1;
use thiserror::Error;

pub const IMAGE_MAGIC: u32 = 0x0000_0803;
pub const LABEL_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad magic 0x{found:08x}, expected 0x{expected:08x}")]
    BadMagic {
        path: PathBuf,
        expected: u32,
        found: u32,
    },

    #[error("{path}: truncated, expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: usize,
        found: usize,
    },

    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("label {value} at index {index} out of range 0-9")]
    LabelOutOfRange { index: usize, value: u8 },
}

/// Grayscale images with class labels. Pixels are stored as bytes and
/// exposed scaled to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    rows: usize,
    cols: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    fn prefix(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "t10k",
        }
    }
}

impl Dataset {
    pub fn new(pixels: Vec<u8>, labels: Vec<u8>, rows: usize, cols: usize) -> Result<Self, DataError> {
        let per = rows * cols;
        let images = if per == 0 { 0 } else { pixels.len() / per };
        if per == 0 || pixels.len() % per != 0 || images != labels.len() {
            return Err(DataError::CountMismatch {
                images,
                labels: labels.len(),
            });
        }
        if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &v)| v > 9) {
            return Err(DataError::LabelOutOfRange { index, value });
        }
        Ok(Self {
            pixels,
            labels,
            rows,
            cols,
        })
    }

    pub fn count(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn pixels_per_image(&self) -> usize {
        self.rows * self.cols
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// Image `i` scaled to `[0, 1]`.
    pub fn image(&self, i: usize) -> Array1<f64> {
        self.raw_image(i).iter().map(|&p| f64::from(p) / 255.0).collect()
    }

    pub fn raw_image(&self, i: usize) -> &[u8] {
        let n = self.pixels_per_image();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    /// The first `n` items (or all, if fewer).
    pub fn take(&self, n: usize) -> Dataset {
        let n = n.min(self.count());
        Dataset {
            pixels: self.pixels[..n * self.pixels_per_image()].to_vec(),
            labels: self.labels[..n].to_vec(),
            rows: self.rows,
            cols: self.cols,
        }
    }

    /// Mean image over the dataset, scaled to `[0, 1]`.
    pub fn mean_image(&self) -> Array1<f64> {
        let n = self.pixels_per_image();
        let mut acc = vec![0u64; n];
        for i in 0..self.count() {
            for (a, &p) in acc.iter_mut().zip(self.raw_image(i)) {
                *a += u64::from(p);
            }
        }
        let denom = 255.0 * self.count().max(1) as f64;
        acc.into_iter().map(|a| a as f64 / denom).collect()
    }
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes([bytes[at], bytes[at + 1], bytes[at + 2], bytes[at + 3]])
}

fn need(path: &Path, bytes: &[u8], expected: usize) -> Result<(), DataError> {
    if bytes.len() < expected {
        return Err(DataError::Truncated {
            path: path.to_path_buf(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(())
}

fn check_magic(path: &Path, bytes: &[u8], expected: u32) -> Result<(), DataError> {
    need(path, bytes, 4)?;
    let found = read_u32(bytes, 0);
    if found != expected {
        return Err(DataError::BadMagic {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    Ok(())
}

/// Parses an image file; `path` only labels errors. Returns
/// `(count, rows, cols, pixels)`.
pub fn parse_idx_images(
    path: &Path,
    bytes: &[u8],
) -> Result<(usize, usize, usize, Vec<u8>), DataError> {
    check_magic(path, bytes, IMAGE_MAGIC)?;
    need(path, bytes, 16)?;
    let n = read_u32(bytes, 4) as usize;
    let rows = read_u32(bytes, 8) as usize;
    let cols = read_u32(bytes, 12) as usize;
    let expected = 16 + n * rows * cols;
    need(path, bytes, expected)?;
    Ok((n, rows, cols, bytes[16..expected].to_vec()))
}

pub fn parse_idx_labels(path: &Path, bytes: &[u8]) -> Result<Vec<u8>, DataError> {
    check_magic(path, bytes, LABEL_MAGIC)?;
    need(path, bytes, 8)?;
    let n = read_u32(bytes, 4) as usize;
    need(path, bytes, 8 + n)?;
    let labels = bytes[8..8 + n].to_vec();
    if let Some((index, &value)) = labels.iter().enumerate().find(|(_, &v)| v > 9) {
        return Err(DataError::LabelOutOfRange { index, value });
    }
    Ok(labels)
}

pub fn encode_idx_images(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + data.pixels.len());
    out.extend_from_slice(&IMAGE_MAGIC.to_be_bytes());
    for v in [data.count(), data.rows, data.cols] {
        out.extend_from_slice(&(v as u32).to_be_bytes());
    }
    out.extend_from_slice(&data.pixels);
    out
}

pub fn encode_idx_labels(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + data.labels.len());
    out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
    out.extend_from_slice(&(data.count() as u32).to_be_bytes());
    out.extend_from_slice(&data.labels);
    out
}

fn read_file(path: &Path) -> Result<Vec<u8>, DataError> {
    fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn load_mnist_idx(images_path: &Path, labels_path: &Path) -> Result<Dataset, DataError> {
    let (n, rows, cols, pixels) = parse_idx_images(images_path, &read_file(images_path)?)?;
    let labels = parse_idx_labels(labels_path, &read_file(labels_path)?)?;
    if n != labels.len() {
        return Err(DataError::CountMismatch {
            images: n,
            labels: labels.len(),
        });
    }
    Dataset::new(pixels, labels, rows, cols)
}

/// Loads `{train,t10k}-{images-idx3,labels-idx1}-ubyte` from `dir`.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<Dataset, DataError> {
    let p = split.prefix();
    load_mnist_idx(
        &dir.join(format!("{p}-images-idx3-ubyte")),
        &dir.join(format!("{p}-labels-idx1-ubyte")),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tiny() -> Dataset {
        let pixels = (0..3 * 4).map(|i| (i * 20) as u8).collect();
        Dataset::new(pixels, vec![0, 9, 3], 2, 2).unwrap()
    }

    #[test]
    fn parses_and_scales() {
        let d = tiny();
        let imgs = encode_idx_images(&d);
        let labels = encode_idx_labels(&d);
        let (n, r, c, px) = parse_idx_images(Path::new("i"), &imgs).unwrap();
        assert_eq!((n, r, c), (3, 2, 2));
        let back = Dataset::new(px, parse_idx_labels(Path::new("l"), &labels).unwrap(), r, c).unwrap();
        assert_eq!(back, d);
        assert_eq!(back.image(2)[3], 220.0 / 255.0);
        assert_eq!(back.label(1), 9);
    }

    #[test]
    fn wrong_image_magic_names_expected() {
        let d = tiny();
        let labels = encode_idx_labels(&d);
        let err = parse_idx_images(Path::new("imgs"), &labels).unwrap_err();
        assert!(matches!(
            err,
            DataError::BadMagic {
                expected: IMAGE_MAGIC,
                found: LABEL_MAGIC,
                ..
            }
        ));
        assert!(err.to_string().contains("0x00000803"));
    }

    #[test]
    fn truncated_images() {
        let mut bytes = encode_idx_images(&tiny());
        bytes.truncate(bytes.len() - 1);
        assert!(matches!(
            parse_idx_images(Path::new("x"), &bytes),
            Err(DataError::Truncated { .. })
        ));
        assert!(matches!(
            parse_idx_labels(Path::new("x"), &LABEL_MAGIC.to_be_bytes()),
            Err(DataError::Truncated { .. })
        ));
    }

    #[test]
    fn label_out_of_range() {
        let mut bytes = encode_idx_labels(&tiny());
        bytes[9] = 255;
        let err = parse_idx_labels(Path::new("x"), &bytes).unwrap_err();
        assert!(matches!(err, DataError::LabelOutOfRange { index: 1, value: 255 }));
        assert!(err.to_string().contains("label 255"));
        assert!(err.to_string().contains("out of range 0-9"));
    }

    #[test]
    fn count_mismatch_between_files() {
        let dir = tempfile::tempdir().unwrap();
        let d = tiny();
        let imgs = dir.path().join("i");
        let labels = dir.path().join("l");
        fs::write(&imgs, encode_idx_images(&d)).unwrap();
        fs::write(&labels, encode_idx_labels(&d.take(2))).unwrap();
        assert!(matches!(
            load_mnist_idx(&imgs, &labels),
            Err(DataError::CountMismatch { images: 3, labels: 2 })
        ));
    }

    #[test]
    fn missing_file_names_path() {
        let err = load_mnist_dir(Path::new("/nonexistent/mnist"), Split::Train).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/mnist/train-images-idx3-ubyte"));
    }

    #[test]
    fn mean_image_and_take() {
        let d = tiny();
        assert_eq!(d.take(10).count(), 3);
        let m = d.mean_image();
        assert!((m[0] - (0.0 + 80.0 + 160.0) / 3.0 / 255.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn idx_round_trip(
            n in 0usize..6,
            rows in 1usize..5,
            cols in 1usize..5,
            seed in any::<u64>(),
        ) {
            let mut x = seed;
            let mut next = || { x = x.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (x >> 33) as u8 };
            let pixels: Vec<u8> = (0..n * rows * cols).map(|_| next()).collect();
            let labels: Vec<u8> = (0..n).map(|_| next() % 10).collect();
            let d = Dataset::new(pixels, labels, rows, cols).unwrap();
            let (m, r, c, px) = parse_idx_images(Path::new("i"), &encode_idx_images(&d)).unwrap();
            prop_assert_eq!((m, r, c), (n, rows, cols));
            let lb = parse_idx_labels(Path::new("l"), &encode_idx_labels(&d)).unwrap();
            prop_assert_eq!(Dataset::new(px, lb, r, c).unwrap(), d);
        }
    }
}
