//! Global contrast normalisation and ZCA whitening.
//!
//! Statistics are always fitted on the training split and then reused
//! unchanged for any other split.

use nalgebra::{DMatrix, SymmetricEigen};

use super::LabeledImageSet;
use crate::error::{Error, Result};

const CHUNK: usize = 512;

/// Per-channel mean and standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GcnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl GcnStats {
    /// Fits channel statistics. `eps` is added to each channel variance; with
    /// `eps = 0` a constant channel is an error.
    pub fn fit(set: &LabeledImageSet, eps: f64) -> Result<Self> {
        if set.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let plane = set.plane();
        let n = (set.len() * plane) as f64;
        let mut mean = vec![0.0; set.channels];
        for img in set.images.chunks_exact(set.dim()) {
            for (c, m) in mean.iter_mut().enumerate() {
                *m += img[c * plane..(c + 1) * plane].iter().sum::<f64>();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; set.channels];
        for img in set.images.chunks_exact(set.dim()) {
            for (c, v) in var.iter_mut().enumerate() {
                *v += img[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&x| (x - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let mut std = Vec::with_capacity(set.channels);
        for (channel, v) in var.into_iter().enumerate() {
            let s = (v / n + eps).sqrt();
            if !(s > 0.0) {
                return Err(Error::DegenerateChannel { channel });
            }
            std.push(s);
        }
        Ok(GcnStats { mean, std })
    }

    pub fn apply(&self, set: &mut LabeledImageSet) -> Result<()> {
        if set.channels != self.mean.len() {
            return Err(Error::Shape(format!(
                "statistics for {} channels applied to {} channels",
                self.mean.len(),
                set.channels
            )));
        }
        let plane = set.plane();
        let dim = set.dim();
        for img in set.images.chunks_exact_mut(dim) {
            for (c, px) in img.chunks_exact_mut(plane).enumerate() {
                let (m, s) = (self.mean[c], self.std[c]);
                px.iter_mut().for_each(|x| *x = (*x - m) / s);
            }
        }
        Ok(())
    }
}

/// Normalises each channel of `set` to zero mean and unit standard
/// deviation, returning the normalised copy and the fitted statistics.
pub fn global_contrast_normalize(
    set: &LabeledImageSet,
    eps: f64,
) -> Result<(LabeledImageSet, GcnStats)> {
    let stats = GcnStats::fit(set, eps)?;
    let mut out = set.clone();
    stats.apply(&mut out)?;
    Ok((out, stats))
}

/// Per-feature mean and population covariance of `samples`, laid out as
/// `n × dim` row-major.
pub fn covariance(samples: &[f64], dim: usize) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if dim == 0 || samples.is_empty() || samples.len() % dim != 0 {
        return Err(Error::Shape(format!(
            "{} values do not form samples of dimension {dim}",
            samples.len()
        )));
    }
    let n = samples.len() / dim;
    let mut mean = vec![0.0; dim];
    for s in samples.chunks_exact(dim) {
        mean.iter_mut().zip(s).for_each(|(m, x)| *m += x);
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut cov = DMatrix::<f64>::zeros(dim, dim);
    for block in samples.chunks(CHUNK * dim) {
        let rows = block.len() / dim;
        let centered: Vec<f64> = block
            .chunks_exact(dim)
            .flat_map(|s| s.iter().zip(&mean).map(|(x, m)| x - m))
            .collect();
        // column j holds sample j
        let a = DMatrix::from_column_slice(dim, rows, &centered);
        cov.gemm(1.0, &a, &a.transpose(), 1.0);
    }
    cov /= n as f64;
    let cov = (&cov + cov.transpose()) * 0.5;
    Ok((mean, cov))
}

/// `E (Λ + εI)^(-1/2) Eᵀ` for a symmetric covariance matrix.
pub fn whitening_from_covariance(cov: DMatrix<f64>, epsilon: f64) -> Result<DMatrix<f64>> {
    let dim = cov.nrows();
    let eig = SymmetricEigen::try_new(cov, 1e-14, 0)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let largest = eig
        .eigenvalues
        .iter()
        .fold(0.0f64, |a, &b| a.max(b.abs()));
    let floor = largest * 1e-12;
    let mut scaled = eig.eigenvectors.clone();
    for (k, &lambda) in eig.eigenvalues.iter().enumerate() {
        let lambda = if lambda.abs() <= floor { 0.0 } else { lambda };
        let denom = lambda + epsilon;
        if !(denom > 0.0) {
            return Err(Error::Eigen(format!(
                "eigenvalue {lambda:e} + epsilon {epsilon:e} is not positive (rank-deficient covariance)"
            )));
        }
        let factor = 1.0 / denom.sqrt();
        scaled.column_mut(k).iter_mut().for_each(|v| *v *= factor);
    }
    let mut w = DMatrix::<f64>::zeros(dim, dim);
    w.gemm(1.0, &scaled, &eig.eigenvectors.transpose(), 0.0);
    Ok((&w + w.transpose()) * 0.5)
}

/// Channel statistics plus a whitening filter over the flattened image.
#[derive(Clone, Debug, PartialEq)]
pub struct ZcaModel {
    pub gcn: GcnStats,
    /// Per-feature mean of the normalised fit set, subtracted before
    /// whitening.
    pub feature_mean: Vec<f64>,
    /// Symmetric `dim × dim` whitening matrix.
    pub whitening: DMatrix<f64>,
    pub epsilon: f64,
}

impl ZcaModel {
    /// Fits the whitening filter on a contrast-normalised training set.
    pub fn fit(gcn: GcnStats, normalized: &LabeledImageSet, epsilon: f64) -> Result<Self> {
        if normalized.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if epsilon < 0.0 {
            return Err(Error::Config(format!("ZCA epsilon {epsilon} is negative")));
        }
        let (feature_mean, cov) = covariance(&normalized.images, normalized.dim())?;
        let whitening = whitening_from_covariance(cov, epsilon)?;
        Ok(ZcaModel {
            gcn,
            feature_mean,
            whitening,
            epsilon,
        })
    }

    /// A model that only applies the contrast normalisation.
    pub fn identity(gcn: GcnStats, dim: usize) -> Self {
        ZcaModel {
            gcn,
            feature_mean: vec![0.0; dim],
            whitening: DMatrix::identity(dim, dim),
            epsilon: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.whitening.nrows()
    }

    /// Normalises with the stored channel statistics, then whitens.
    pub fn apply(&self, set: &LabeledImageSet) -> Result<LabeledImageSet> {
        let dim = set.dim();
        if dim != self.dim() {
            return Err(Error::Shape(format!(
                "model dimension {} does not match image dimension {dim}",
                self.dim()
            )));
        }
        let mut out = set.clone();
        self.gcn.apply(&mut out)?;
        for block in out.images.chunks_mut(CHUNK * dim) {
            let rows = block.len() / dim;
            let centered: Vec<f64> = block
                .chunks_exact(dim)
                .flat_map(|s| s.iter().zip(&self.feature_mean).map(|(x, m)| x - m))
                .collect();
            let a = DMatrix::from_column_slice(dim, rows, &centered);
            let y = &self.whitening * a;
            block.copy_from_slice(y.as_slice());
        }
        Ok(out)
    }
}
