//! Rate coding of images into signed Bernoulli spike trains.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Key;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    /// Pixels in `[0, 255]`, spikes in `{0, +1}`.
    Unsigned,
    /// Real-valued pixels scaled by the image's max-abs; negative pixels
    /// emit `-1`.
    Signed,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub max_rate_hz: f64,
    pub dt_ms: f64,
    pub steps: usize,
    pub polarity: Polarity,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt_ms > 0.0) || self.max_rate_hz < 0.0 {
            return Err(Error::Config(format!(
                "encoder needs dt > 0 and rate >= 0, got dt {} ms, rate {} Hz",
                self.dt_ms, self.max_rate_hz
            )));
        }
        if self.max_rate_hz * self.dt_ms * 1e-3 > 1.0 {
            return Err(Error::Config(format!(
                "{} Hz at {} ms per step is not a valid spike probability",
                self.max_rate_hz, self.dt_ms
            )));
        }
        Ok(())
    }

    pub fn duration_ms(&self) -> f64 {
        self.steps as f64 * self.dt_ms
    }

    /// Per-step spike probability of a neuron firing at `rate_hz`.
    pub fn step_probability(&self, rate_hz: f64) -> f64 {
        rate_hz * self.dt_ms * 1e-3
    }
}

/// Firing rate in Hz and spike sign for one pixel. `max_abs` is only used in
/// signed mode.
pub fn pixel_rate(pixel: f64, max_abs: f64, cfg: &EncoderConfig) -> (f64, i8) {
    match cfg.polarity {
        Polarity::Unsigned => {
            let rate = (pixel.clamp(0.0, 255.0) / 255.0) * cfg.max_rate_hz;
            (rate, if rate > 0.0 { 1 } else { 0 })
        }
        Polarity::Signed => {
            if !(max_abs > 0.0) || pixel == 0.0 {
                return (0.0, 0);
            }
            let rate = (pixel.abs() / max_abs).min(1.0) * cfg.max_rate_hz;
            (rate, if pixel > 0.0 { 1 } else { -1 })
        }
    }
}

/// Spike generator for one image. Only neurons with a nonzero rate are kept.
#[derive(Clone, Debug)]
pub struct ImageEncoder {
    len: usize,
    active: Vec<(u32, i8, f64, Key)>,
}

impl ImageEncoder {
    /// `key` should already identify the image (seed, phase, image index).
    pub fn new(image: &[f64], cfg: &EncoderConfig, key: Key) -> Self {
        let max_abs = image.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let active = image
            .iter()
            .enumerate()
            .filter_map(|(n, &px)| {
                let (rate, sign) = pixel_rate(px, max_abs, cfg);
                let p = cfg.step_probability(rate);
                (p > 0.0).then(|| (n as u32, sign, p, key.with(n as u64)))
            })
            .collect();
        ImageEncoder {
            len: image.len(),
            active,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Writes the spikes of step `t` into `out` (cleared first).
    pub fn step_into(&self, t: usize, out: &mut [i8]) {
        out.fill(0);
        self.for_each_spike(t, |n, s| out[n] = s);
    }

    /// Calls `f(neuron, sign)` for each spike at step `t`.
    #[inline]
    pub fn for_each_spike(&self, t: usize, mut f: impl FnMut(usize, i8)) {
        for &(n, sign, p, key) in &self.active {
            if key.with(t as u64).bernoulli(p) {
                f(n as usize, sign);
            }
        }
    }
}

/// Dense spike tensor laid out `[step][image][neuron]`.
#[derive(Clone, Debug, PartialEq)]
pub struct SpikeMapBatch {
    pub steps: usize,
    pub batch: usize,
    pub neurons: usize,
    pub values: Vec<i8>,
}

impl SpikeMapBatch {
    pub fn get(&self, step: usize, image: usize, neuron: usize) -> i8 {
        self.values[(step * self.batch + image) * self.neurons + neuron]
    }

    pub fn frame(&self, step: usize, image: usize) -> &[i8] {
        let o = (step * self.batch + image) * self.neurons;
        &self.values[o..o + self.neurons]
    }
}

/// Encodes every image of `images` (each of length `dim`). Image `n` is keyed
/// by `first_index + n` below `key`.
pub fn poisson_encode(
    images: &[f64],
    dim: usize,
    first_index: usize,
    cfg: &EncoderConfig,
    key: Key,
) -> SpikeMapBatch {
    let batch = if dim == 0 { 0 } else { images.len() / dim };
    let mut values = vec![0i8; cfg.steps * batch * dim];
    for b in 0..batch {
        let enc = ImageEncoder::new(
            &images[b * dim..(b + 1) * dim],
            cfg,
            key.with((first_index + b) as u64),
        );
        for t in 0..cfg.steps {
            let o = (t * batch + b) * dim;
            enc.step_into(t, &mut values[o..o + dim]);
        }
    }
    SpikeMapBatch {
        steps: cfg.steps,
        batch,
        neurons: dim,
        values,
    }
}
