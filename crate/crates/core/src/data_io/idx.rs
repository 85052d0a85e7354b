//! MNIST IDX reader.
//!
//! Image files carry a big-endian header `2051, count, rows, cols` followed
//! by `count·rows·cols` unsigned bytes; label files carry `2049, count`
//! followed by one byte per label.

use std::path::Path;

use super::{read_file, LabeledImageSet, Split};
use crate::error::{Error, Result};

pub const IMAGE_MAGIC: u32 = 2051;
pub const LABEL_MAGIC: u32 = 2049;

fn file_names(split: Split) -> (&'static str, &'static str) {
    match split {
        Split::Train => ("train-images-idx3-ubyte", "train-labels-idx1-ubyte"),
        Split::Test => ("t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"),
    }
}

fn be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Truncated {
            what: what.to_string(),
            expected: offset + 4,
            found: bytes.len(),
        })
}

fn check_idx_magic(bytes: &[u8], expected: u32, what: &str) -> Result<()> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != expected {
        return Err(Error::MagicMismatch {
            what: what.to_string(),
            expected: expected.to_string(),
            found: magic.to_string(),
        });
    }
    Ok(())
}

/// Decodes an IDX3 image file into `(count, rows, cols, pixels)`.
pub fn parse_images(bytes: &[u8], what: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    check_idx_magic(bytes, IMAGE_MAGIC, what)?;
    let count = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    let expected = 16 + count * rows * cols;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: what.to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok((count, rows, cols, bytes[16..expected].to_vec()))
}

/// Decodes an IDX1 label file.
pub fn parse_labels(bytes: &[u8], what: &str) -> Result<Vec<u8>> {
    check_idx_magic(bytes, LABEL_MAGIC, what)?;
    let count = be_u32(bytes, 4, what)? as usize;
    let expected = 8 + count;
    if bytes.len() < expected {
        return Err(Error::Truncated {
            what: what.to_string(),
            expected,
            found: bytes.len(),
        });
    }
    Ok(bytes[8..expected].to_vec())
}

/// Loads one MNIST split from `dir`, keeping raw intensities in `[0, 255]`.
pub fn load_mnist(dir: impl AsRef<Path>, split: Split) -> Result<LabeledImageSet> {
    let dir = dir.as_ref();
    let (image_name, label_name) = file_names(split);
    let image_path = dir.join(image_name);
    let label_path = dir.join(label_name);
    let image_bytes = read_file(&image_path)?;
    let label_bytes = read_file(&label_path)?;

    let (count, rows, cols, pixels) = parse_images(&image_bytes, image_name)?;
    let labels = parse_labels(&label_bytes, label_name)?;
    if labels.len() != count {
        return Err(Error::Shape(format!(
            "{image_name} holds {count} images but {label_name} holds {} labels",
            labels.len()
        )));
    }
    let images = pixels.into_iter().map(f64::from).collect();
    LabeledImageSet::new(1, rows, cols, images, labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn image_fixture(count: u32, rows: u32, cols: u32, pixels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        for v in [IMAGE_MAGIC, count, rows, cols] {
            out.extend_from_slice(&v.to_be_bytes());
        }
        out.extend_from_slice(pixels);
        out
    }

    fn label_fixture(labels: &[u8]) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&LABEL_MAGIC.to_be_bytes());
        out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
        out.extend_from_slice(labels);
        out
    }

    #[test]
    fn two_image_fixture_recovers_exact_pixels() {
        let dir = tempfile::tempdir().unwrap();
        // 2 images of 2x3; pixel value = 10*image + position
        let pixels: Vec<u8> = (0..2u8)
            .flat_map(|n| (0..6u8).map(move |p| 10 * n + p))
            .collect();
        fs::write(
            dir.path().join("train-images-idx3-ubyte"),
            image_fixture(2, 2, 3, &pixels),
        )
        .unwrap();
        fs::write(
            dir.path().join("train-labels-idx1-ubyte"),
            label_fixture(&[4, 9]),
        )
        .unwrap();
        let set = load_mnist(dir.path(), Split::Train).unwrap();
        assert_eq!((set.channels, set.height, set.width), (1, 2, 3));
        assert_eq!(set.labels, vec![4, 9]);
        assert_eq!(set.image(0), &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]);
        assert_eq!(set.image(1), &[10.0, 11.0, 12.0, 13.0, 14.0, 15.0]);
    }

    #[test]
    fn magic_zero_is_rejected() {
        let mut bytes = image_fixture(1, 1, 1, &[0]);
        bytes[..4].copy_from_slice(&0u32.to_be_bytes());
        assert!(matches!(
            parse_images(&bytes, "x"),
            Err(Error::MagicMismatch { .. })
        ));
    }

    #[test]
    fn truncated_payload_is_distinct_error() {
        let bytes = image_fixture(2, 2, 2, &[1, 2, 3]);
        assert!(matches!(
            parse_images(&bytes, "x"),
            Err(Error::Truncated { expected: 24, .. })
        ));
        let labels = &label_fixture(&[1, 2, 3])[..9];
        assert!(matches!(
            parse_labels(labels, "y"),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn missing_file_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_mnist(dir.path(), Split::Test),
            Err(Error::MissingFile(_))
        ));
    }
}
