//! Activation export: one f32 row per image plus a CSV label index.
//!
//! ```text
//! "RSTA"  u16 version  u64 seed  u32 rows  u32 cols
//! rows × cols × f32
//! ```
//! The companion CSV has header `index,label` and one line per row.

use std::fmt::Write as _;
use std::path::Path;

use super::{check_magic, read_file, write_file, Reader};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"RSTA";
pub const VERSION: u16 = 1;

/// Row-major activation matrix with class labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ActivationSet {
    pub seed: u64,
    pub cols: usize,
    pub values: Vec<f32>,
    pub labels: Vec<u8>,
}

impl ActivationSet {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }
}

pub fn encode(set: &ActivationSet) -> Vec<u8> {
    let mut out = Vec::with_capacity(22 + set.values.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&set.seed.to_le_bytes());
    out.extend_from_slice(&(set.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(set.cols as u32).to_le_bytes());
    for v in &set.values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn labels_csv(labels: &[u8]) -> String {
    let mut s = String::from("index,label\n");
    for (i, l) in labels.iter().enumerate() {
        writeln!(s, "{i},{l}").unwrap();
    }
    s
}

pub fn parse_labels_csv(text: &str) -> Result<Vec<u8>> {
    let mut labels = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let label = line
            .split(',')
            .nth(1)
            .and_then(|v| v.trim().parse::<u8>().ok())
            .ok_or_else(|| Error::Shape(format!("malformed label line {}: `{line}`", n + 1)))?;
        labels.push(label);
    }
    Ok(labels)
}

pub fn save_activations(set: &ActivationSet, bin: impl AsRef<Path>, csv: impl AsRef<Path>) -> Result<()> {
    write_file(bin.as_ref(), &encode(set))?;
    write_file(csv.as_ref(), labels_csv(&set.labels).as_bytes())
}

pub fn load_activations(bin: impl AsRef<Path>, csv: impl AsRef<Path>) -> Result<ActivationSet> {
    const WHAT: &str = "activation file";
    let bytes = read_file(bin.as_ref())?;
    let mut r = Reader::new(&bytes, WHAT);
    check_magic(r.take(4)?, MAGIC, WHAT)?;
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::VersionMismatch {
            what: WHAT.into(),
            expected: VERSION,
            found: version,
        });
    }
    let seed = r.u64()?;
    let rows = r.usize32()?;
    let cols = r.usize32()?;
    let payload = r.take(rows * cols * 4)?;
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let text = String::from_utf8_lossy(&read_file(csv.as_ref())?).into_owned();
    let labels = parse_labels_csv(&text)?;
    if labels.len() != rows {
        return Err(Error::Shape(format!(
            "{rows} activation rows but {} labels",
            labels.len()
        )));
    }
    Ok(ActivationSet {
        seed,
        cols,
        values,
        labels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let set = ActivationSet {
            seed: 5,
            cols: 3,
            values: vec![0.0, 0.25, 0.5, 1.0, 2.0, 3.0],
            labels: vec![7, 1],
        };
        let (b, c) = (dir.path().join("a.bin"), dir.path().join("a.csv"));
        save_activations(&set, &b, &c).unwrap();
        assert_eq!(load_activations(&b, &c).unwrap(), set);
        let csv = std::fs::read_to_string(&c).unwrap();
        assert_eq!(csv, "index,label\n0,7\n1,1\n");
    }
}
