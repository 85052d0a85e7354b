//! Memory-compression arithmetic and accuracy summaries.

use std::fmt;

use num_rational::Ratio;

use crate::error::{Error, Result};

/// Storage of a set of kernels: `count` kernels of `size × size` weights at
/// `bits` bits per weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KernelDescriptor {
    pub count: u64,
    pub size: u64,
    pub bits: u64,
}

impl KernelDescriptor {
    pub fn full_precision(count: u64, size: u64) -> Self {
        KernelDescriptor { count, size, bits: 32 }
    }

    /// Binary kernels are reported at 2 bits per weight (signed levels).
    pub fn binary(count: u64, size: u64) -> Self {
        KernelDescriptor { count, size, bits: 2 }
    }

    pub fn total_bits(&self) -> u128 {
        u128::from(self.count) * u128::from(self.size) * u128::from(self.size) * u128::from(self.bits)
    }
}

/// Ratio of baseline to subject storage, kept as an exact fraction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CompressionReport {
    pub kind: &'static str,
    pub baseline_bits: u128,
    pub subject_bits: u128,
    pub ratio: Ratio<u128>,
}

impl CompressionReport {
    fn new(kind: &'static str, baseline_bits: u128, subject_bits: u128) -> Result<Self> {
        if subject_bits == 0 {
            return Err(Error::ZeroDenominator(kind));
        }
        if baseline_bits == 0 {
            return Err(Error::Config(format!("{kind}: baseline storage is zero")));
        }
        Ok(CompressionReport {
            kind,
            baseline_bits,
            subject_bits,
            ratio: Ratio::new(baseline_bits, subject_bits),
        })
    }

    pub fn decimal(&self) -> f64 {
        *self.ratio.numer() as f64 / *self.ratio.denom() as f64
    }

    /// Decimal expansion cut (not rounded) after `places` digits.
    pub fn truncated(&self, places: u32) -> String {
        let scale = 10u128.pow(places);
        let scaled = self.ratio.numer() * scale / self.ratio.denom();
        let int = scaled / scale;
        if places == 0 {
            return int.to_string();
        }
        format!("{int}.{:0width$}", scaled % scale, width = places as usize)
    }

    pub fn csv_header() -> &'static str {
        "kind,baseline_bits,subject_bits,ratio_numer,ratio_denom,ratio"
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6}",
            self.kind,
            self.baseline_bits,
            self.subject_bits,
            self.ratio.numer(),
            self.ratio.denom(),
            self.decimal()
        )
    }
}

impl fmt::Display for CompressionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: {} bits / {} bits = {}/{} ~ {}x",
            self.kind,
            self.baseline_bits,
            self.subject_bits,
            self.ratio.numer(),
            self.ratio.denom(),
            self.truncated(1)
        )
    }
}

pub fn kernel_compression(baseline: KernelDescriptor, subject: KernelDescriptor) -> Result<CompressionReport> {
    CompressionReport::new("kernel", baseline.total_bits(), subject.total_bits())
}

/// Fully-connected synapse storage: `inputs·N_b·32` against `inputs·N_s·1`.
pub fn synaptic_compression(baseline_neurons: u64, subject_neurons: u64, inputs: u64) -> Result<CompressionReport> {
    synaptic_compression_bits(baseline_neurons, 32, subject_neurons, 1, inputs)
}

pub fn synaptic_compression_bits(
    baseline_neurons: u64,
    baseline_bits: u64,
    subject_neurons: u64,
    subject_bits: u64,
    inputs: u64,
) -> Result<CompressionReport> {
    let b = u128::from(inputs) * u128::from(baseline_neurons) * u128::from(baseline_bits);
    let s = u128::from(inputs) * u128::from(subject_neurons) * u128::from(subject_bits);
    CompressionReport::new("synaptic", b, s)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AccuracyReport {
    pub correct: usize,
    pub total: usize,
    /// `confusion[label][prediction]`.
    pub confusion: [[u64; 10]; 10],
}

impl AccuracyReport {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("label");
        for p in 0..10 {
            s.push_str(&format!(",pred_{p}"));
        }
        s.push('\n');
        for (l, row) in self.confusion.iter().enumerate() {
            s.push_str(&l.to_string());
            for v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

pub fn evaluate_accuracy(predictions: &[usize], labels: &[u8]) -> Result<AccuracyReport> {
    if predictions.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    let mut confusion = [[0u64; 10]; 10];
    let mut correct = 0;
    for (&p, &l) in predictions.iter().zip(labels) {
        if p > 9 {
            return Err(Error::LabelOutOfRange { index: 0, label: p });
        }
        confusion[l as usize][p] += 1;
        correct += (p == l as usize) as usize;
    }
    Ok(AccuracyReport {
        correct,
        total: labels.len(),
        confusion,
    })
}
