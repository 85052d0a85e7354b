//! Preprocessed-tensor cache.
//!
//! ```text
//! "RSTP"  u16 version  u8 split
//! u32 count  u32 channels  u32 height  u32 width
//! count × u8 labels
//! count·channels·height·width × f32 pixels
//! ```
//! Little-endian throughout.

use std::path::Path;

use super::{check_magic, read_file, write_file, LabeledImageSet, Reader, Split};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RSTP";
pub const VERSION: u16 = 1;

pub fn encode(set: &LabeledImageSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(23 + set.len() + 4 * set.images.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(set.split.tag());
    for v in [set.len(), set.channels, set.height, set.width] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&set.labels);
    for &v in &set.images {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<LabeledImageSet> {
    const WHAT: &str = "tensor cache";
    let mut r = Reader::new(bytes, WHAT);
    check_magic(r.take(4)?, MAGIC, WHAT)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            what: WHAT.into(),
            expected: VERSION,
            found: version,
        });
    }
    let split = Split::from_tag(r.u8()?).ok_or_else(|| Error::MagicMismatch {
        what: "tensor cache split tag".into(),
        expected: "0 or 1".into(),
        found: "other".into(),
    })?;
    let count = r.usize32()?;
    let channels = r.usize32()?;
    let height = r.usize32()?;
    let width = r.usize32()?;
    let labels = r.take(count)?.to_vec();
    let n = count * channels * height * width;
    let payload = r.take(n * 4)?;
    let images = payload
        .chunks_exact(4)
        .map(|b| f64::from(f32::from_le_bytes(b.try_into().unwrap())))
        .collect();
    LabeledImageSet::new(channels, height, width, images, labels, split)
}

pub fn save_tensor_cache(set: &LabeledImageSet, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode(set))
}

pub fn load_tensor_cache(path: impl AsRef<Path>) -> Result<LabeledImageSet> {
    decode(&read_file(path.as_ref())?)
}
