//! CIFAR-10 binary batch reader.
//!
//! Each record is one label byte followed by 3072 pixel bytes: the 1024-byte
//! red plane, then green, then blue, each plane row-major over 32×32.

use std::path::Path;

use super::{read_file, LabeledImageSet, Split};
use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const CHANNELS: usize = 3;
pub const PIXELS: usize = CHANNELS * SIDE * SIDE;
pub const RECORD: usize = 1 + PIXELS;

pub fn batch_files(split: Split) -> Vec<String> {
    match split {
        Split::Train => (1..=5).map(|i| format!("data_batch_{i}.bin")).collect(),
        Split::Test => vec!["test_batch.bin".to_string()],
    }
}

/// Decodes a buffer of concatenated records, appending to `images`/`labels`.
pub fn parse_records(
    bytes: &[u8],
    what: &str,
    first_index: usize,
    images: &mut Vec<f64>,
    labels: &mut Vec<u8>,
) -> Result<()> {
    if bytes.len() % RECORD != 0 {
        return Err(Error::RecordSize {
            what: what.to_string(),
            len: bytes.len(),
            record: RECORD,
        });
    }
    for (n, record) in bytes.chunks_exact(RECORD).enumerate() {
        let label = record[0];
        if label > 9 {
            return Err(Error::LabelOutOfRange {
                index: first_index + n,
                label: label as usize,
            });
        }
        labels.push(label);
        images.extend(record[1..].iter().map(|&b| f64::from(b)));
    }
    Ok(())
}

/// Loads a CIFAR-10 split from the directory holding the `.bin` batches.
pub fn load_cifar10(dir: impl AsRef<Path>, split: Split) -> Result<LabeledImageSet> {
    let dir = dir.as_ref();
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for name in batch_files(split) {
        let bytes = read_file(&dir.join(&name))?;
        let first = labels.len();
        parse_records(&bytes, &name, first, &mut images, &mut labels)?;
    }
    LabeledImageSet::new(CHANNELS, SIDE, SIDE, images, labels, split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    #[test]
    fn zero_record_with_label_seven() {
        let mut record = vec![0u8; RECORD];
        record[0] = 7;
        let (mut images, mut labels) = (Vec::new(), Vec::new());
        parse_records(&record, "t", 0, &mut images, &mut labels).unwrap();
        assert_eq!(labels, vec![7]);
        assert_eq!(images.len(), PIXELS);
        assert!(images.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn channel_row_col_ordering_matches_manual_unpacking() {
        let mut record = vec![3u8];
        record.extend((0..PIXELS).map(|p| (p % 251) as u8));
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join("test_batch.bin"), &record).unwrap();
        let set = load_cifar10(dir.path(), Split::Test).unwrap();
        assert_eq!((set.channels, set.height, set.width), (3, 32, 32));
        let img = set.image(0);
        for c in 0..3 {
            for r in 0..32 {
                for col in 0..32 {
                    // byte offset inside the record after the label byte
                    let byte = c * 1024 + r * 32 + col;
                    let idx = (c * 32 + r) * 32 + col;
                    assert_eq!(img[idx], record[1 + byte] as f64);
                }
            }
        }
    }

    #[test]
    fn bad_record_size_and_label() {
        let (mut images, mut labels) = (Vec::new(), Vec::new());
        assert!(matches!(
            parse_records(&[0u8; RECORD + 1], "t", 0, &mut images, &mut labels),
            Err(Error::RecordSize { .. })
        ));
        let mut record = vec![0u8; RECORD];
        record[0] = 10;
        assert!(matches!(
            parse_records(&record, "t", 0, &mut images, &mut labels),
            Err(Error::LabelOutOfRange { label: 10, .. })
        ));
    }
}
