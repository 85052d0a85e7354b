//! Dataset ingestion, preprocessing and on-disk formats.

pub mod activations;
pub mod cache;
pub mod checkpoint;
pub mod cifar;
pub mod idx;
pub mod pgm;
pub mod preprocess;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use cifar::load_cifar10;
pub use idx::load_mnist;
pub use preprocess::{global_contrast_normalize, GcnStats, ZcaModel};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn tag(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Test => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Split::Train),
            1 => Some(Split::Test),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Images stored as `count × channels × height × width` in row-major order,
/// with one class label per image.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledImageSet {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub images: Vec<f64>,
    pub labels: Vec<u8>,
    pub split: Split,
}

impl LabeledImageSet {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        images: Vec<f64>,
        labels: Vec<u8>,
        split: Split,
    ) -> Result<Self> {
        let dim = channels * height * width;
        if dim == 0 || images.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} pixel values for {} labels of {}x{}x{}",
                images.len(),
                labels.len(),
                channels,
                height,
                width
            )));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l > 9) {
            return Err(Error::LabelOutOfRange {
                index,
                label: label as usize,
            });
        }
        Ok(LabeledImageSet {
            channels,
            height,
            width,
            images,
            labels,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Flattened dimension of one image.
    pub fn dim(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn image(&self, index: usize) -> &[f64] {
        let d = self.dim();
        &self.images[index * d..(index + 1) * d]
    }

    /// Contiguous slice `[start, start + count)`, clamped to the set size.
    pub fn slice(&self, start: usize, count: usize) -> LabeledImageSet {
        let start = start.min(self.len());
        let end = (start + count).min(self.len());
        let d = self.dim();
        LabeledImageSet {
            channels: self.channels,
            height: self.height,
            width: self.width,
            images: self.images[start * d..end * d].to_vec(),
            labels: self.labels[start..end].to_vec(),
            split: self.split,
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Little-endian cursor over a byte buffer with truncation reporting.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Reader { bytes, pos: 0, what }
    }

    pub(crate) fn position(&self) -> usize {
        self.pos
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Truncated {
                what: self.what.to_string(),
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            }),
        }
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn usize32(&mut self) -> Result<usize> {
        Ok(self.u32()? as usize)
    }
}

pub(crate) fn check_magic(found: &[u8], expected: &[u8; 4], what: &str) -> Result<()> {
    if found != expected {
        return Err(Error::MagicMismatch {
            what: what.to_string(),
            expected: String::from_utf8_lossy(expected).into_owned(),
            found: String::from_utf8_lossy(found).into_owned(),
        });
    }
    Ok(())
}
