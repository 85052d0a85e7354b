//! Stateless building blocks of the convolutional spiking path.

use crate::error::{Error, Result};
use crate::kernel::KernelShape;

/// Spatial geometry of a stack of maps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MapShape {
    pub maps: usize,
    pub height: usize,
    pub width: usize,
}

impl MapShape {
    pub fn new(maps: usize, height: usize, width: usize) -> Self {
        MapShape { maps, height, width }
    }

    pub fn plane(&self) -> usize {
        self.height * self.width
    }

    pub fn len(&self) -> usize {
        self.maps * self.plane()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Valid, stride-1 correlation of signed spike maps with a kernel bank.
///
/// Only nonzero inputs are visited: each spike scatters its signed kernel
/// column into the outputs it reaches. `weights` is indexed like
/// [`KernelShape::index`]; `out` is overwritten.
pub fn binary_conv2d(
    input: &[i8],
    in_shape: MapShape,
    weights: &[f64],
    shape: KernelShape,
    out: &mut [f64],
) -> Result<MapShape> {
    let k = shape.k;
    if in_shape.height < k || in_shape.width < k {
        return Err(Error::Shape(format!(
            "{}x{} input is smaller than a {k}x{k} kernel",
            in_shape.height, in_shape.width
        )));
    }
    if in_shape.maps != shape.in_maps || input.len() != in_shape.len() || weights.len() != shape.len() {
        return Err(Error::Shape(format!(
            "input {:?} does not match kernels {:?}",
            in_shape, shape
        )));
    }
    let out_shape = MapShape::new(shape.out_maps, in_shape.height - k + 1, in_shape.width - k + 1);
    if out.len() != out_shape.len() {
        return Err(Error::Shape(format!(
            "output buffer of {} for {:?}",
            out.len(),
            out_shape
        )));
    }
    out.fill(0.0);
    let (ho, wo) = (out_shape.height, out_shape.width);
    let plane_out = out_shape.plane();
    for i in 0..in_shape.maps {
        for y in 0..in_shape.height {
            let row = &input[(i * in_shape.height + y) * in_shape.width..][..in_shape.width];
            for (x, &s) in row.iter().enumerate() {
                if s == 0 {
                    continue;
                }
                let s = f64::from(s);
                // kernel rows/cols that place this input inside the output
                let dr_lo = (y + 1).saturating_sub(ho);
                let dr_hi = k.min(y + 1);
                let dc_lo = (x + 1).saturating_sub(wo);
                let dc_hi = k.min(x + 1);
                for j in 0..shape.out_maps {
                    let o = &mut out[j * plane_out..][..plane_out];
                    let wbase = shape.index(j, i, 0, 0);
                    for dr in dr_lo..dr_hi {
                        let orow = (y - dr) * wo;
                        for dc in dc_lo..dc_hi {
                            o[orow + x - dc] += s * weights[wbase + dr * k + dc];
                        }
                    }
                }
            }
        }
    }
    Ok(out_shape)
}

/// A residual path entering a layer: `from` is 0 for the encoded input or
/// the 1-based index of an earlier convolutional layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct ResidualSource {
    pub from: usize,
    #[serde(default)]
    pub invert: bool,
}

/// Adds residual spike maps to the direct path and clamps to `{-1, 0, +1}`.
///
/// Each residual is optionally negated, replicated cyclically over channels
/// (direct channel `j` reads residual channel `j mod c`) and center-cropped
/// to the direct spatial size.
pub fn residual_combine(
    direct: &[i8],
    direct_shape: MapShape,
    residuals: &[(&[i8], MapShape, bool)],
    out: &mut [i8],
) -> Result<()> {
    if direct.len() != direct_shape.len() || out.len() != direct_shape.len() {
        return Err(Error::Shape("direct path buffer size".into()));
    }
    if residuals.is_empty() {
        out.copy_from_slice(direct);
        return Ok(());
    }
    let mut sum: Vec<i16> = direct.iter().map(|&v| i16::from(v)).collect();
    for &(res, rs, invert) in residuals {
        if rs.height < direct_shape.height || rs.width < direct_shape.width {
            return Err(Error::Shape(format!(
                "residual {}x{} is smaller than the direct path {}x{}",
                rs.height, rs.width, direct_shape.height, direct_shape.width
            )));
        }
        if res.len() != rs.len() || rs.maps == 0 {
            return Err(Error::Shape("residual buffer size".into()));
        }
        let oy = (rs.height - direct_shape.height) / 2;
        let ox = (rs.width - direct_shape.width) / 2;
        let sign: i16 = if invert { -1 } else { 1 };
        for j in 0..direct_shape.maps {
            let src = j % rs.maps;
            for y in 0..direct_shape.height {
                let srow = &res[(src * rs.height + y + oy) * rs.width + ox..][..direct_shape.width];
                let drow = &mut sum[(j * direct_shape.height + y) * direct_shape.width..][..direct_shape.width];
                for (d, &s) in drow.iter_mut().zip(srow) {
                    *d += sign * i16::from(s);
                }
            }
        }
    }
    for (o, s) in out.iter_mut().zip(sum) {
        *o = s.signum() as i8;
    }
    Ok(())
}

/// Non-overlapping `size × size` average pooling of binary spike maps.
/// Trailing rows/columns that do not fill a window are dropped.
pub fn avg_pool_input(spikes: &[bool], shape: MapShape, size: usize, out: &mut [f64]) -> MapShape {
    let ps = MapShape::new(shape.maps, shape.height / size, shape.width / size);
    let norm = (size * size) as f64;
    for j in 0..shape.maps {
        for py in 0..ps.height {
            for px in 0..ps.width {
                let mut n = 0usize;
                for dy in 0..size {
                    let row = (j * shape.height + py * size + dy) * shape.width + px * size;
                    n += spikes[row..row + size].iter().filter(|&&s| s).count();
                }
                out[(j * ps.height + py) * ps.width + px] = n as f64 / norm;
            }
        }
    }
    ps
}

/// Leaky spike counter: `lpf <- decay·lpf + spike` per step.
#[derive(Clone, Debug)]
pub struct LowPass {
    pub values: Vec<f64>,
    decay: f64,
}

impl LowPass {
    pub fn new(len: usize, tau_ms: f64, dt_ms: f64) -> Self {
        LowPass {
            values: vec![0.0; len],
            decay: (-dt_ms / tau_ms).exp(),
        }
    }

    pub fn step(&mut self, spikes: &[bool]) {
        for (v, &s) in self.values.iter_mut().zip(spikes) {
            *v = *v * self.decay + if s { 1.0 } else { 0.0 };
        }
    }

    /// Activation per millisecond after a presentation of `duration_ms`.
    pub fn activation(&self, duration_ms: f64) -> impl Iterator<Item = f64> + '_ {
        self.values.iter().map(move |v| v / duration_ms)
    }
}

/// Low-pass activation of a single spike train.
pub fn lpf_activation(spikes: &[bool], tau_ms: f64, dt_ms: f64) -> f64 {
    let mut lp = LowPass::new(1, tau_ms, dt_ms);
    for &s in spikes {
        lp.step(&[s]);
    }
    lp.values[0] / (spikes.len() as f64 * dt_ms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Key, Phase};

    fn brute(input: &[i8], s: MapShape, w: &[f64], ks: KernelShape) -> Vec<f64> {
        let k = ks.k;
        let (ho, wo) = (s.height - k + 1, s.width - k + 1);
        let mut out = vec![0.0; ks.out_maps * ho * wo];
        for j in 0..ks.out_maps {
            for r in 0..ho {
                for c in 0..wo {
                    let mut acc = 0.0;
                    for i in 0..s.maps {
                        for dr in 0..k {
                            for dc in 0..k {
                                let x = input[(i * s.height + r + dr) * s.width + c + dc];
                                acc += f64::from(x) * w[ks.index(j, i, dr, dc)];
                            }
                        }
                    }
                    out[(j * ho + r) * wo + c] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_summation() {
        let key = Key::new(17, Phase::KernelInit);
        for n in 0..50u64 {
            let kk = key.with(n);
            let s = MapShape::new(1 + (kk.with(0).raw() % 3) as usize, 5, 6);
            let ks = KernelShape {
                out_maps: 4,
                in_maps: s.maps,
                k: 3,
            };
            let input: Vec<i8> = (0..s.len()).map(|p| (kk.with(10 + p as u64).raw() % 3) as i8 - 1).collect();
            let w: Vec<f64> = (0..ks.len())
                .map(|p| if kk.with(5000 + p as u64).bernoulli(0.5) { 1.0 } else { -1.0 })
                .collect();
            let mut out = vec![0.0; 4 * 3 * 4];
            binary_conv2d(&input, s, &w, ks, &mut out).unwrap();
            assert_eq!(out, brute(&input, s, &w, ks));
        }
    }

    #[test]
    fn conv_degenerate_cases() {
        let ks = KernelShape {
            out_maps: 1,
            in_maps: 1,
            k: 3,
        };
        let mut out = vec![0.0; 1];
        binary_conv2d(&[1; 9], MapShape::new(1, 3, 3), &[1.0; 9], ks, &mut out).unwrap();
        assert_eq!(out, vec![9.0]);
        binary_conv2d(&[0; 9], MapShape::new(1, 3, 3), &[1.0; 9], ks, &mut out).unwrap();
        assert_eq!(out, vec![0.0]);
        assert!(binary_conv2d(&[0; 4], MapShape::new(1, 2, 2), &[1.0; 9], ks, &mut out).is_err());
        let big = KernelShape { out_maps: 2, ..ks };
        let mut o = vec![0.0; 2 * 30 * 30];
        let shape = binary_conv2d(&vec![0; 1024], MapShape::new(1, 32, 32), &[1.0; 18], big, &mut o).unwrap();
        assert_eq!((shape.height, shape.width), (30, 30));
    }

    #[test]
    fn residual_rules() {
        let d = MapShape::new(1, 1, 1);
        let mut out = [0i8];
        residual_combine(&[1], d, &[(&[1], d, false)], &mut out).unwrap();
        assert_eq!(out, [1]);
        residual_combine(&[1], d, &[(&[-1], d, false)], &mut out).unwrap();
        assert_eq!(out, [0]);
        residual_combine(&[0], d, &[(&[1], d, true)], &mut out).unwrap();
        assert_eq!(out, [-1]);
    }

    #[test]
    fn residual_replication_and_crop() {
        // 3-channel 3x3 residual into 5 direct channels of 1x1: center pixel
        let rs = MapShape::new(3, 3, 3);
        let res: Vec<i8> = (0..27).map(|p| if p % 9 == 4 { [1, -1, 0][p / 9] } else { 1 }).collect();
        let d = MapShape::new(5, 1, 1);
        let mut out = [0i8; 5];
        residual_combine(&[0; 5], d, &[(&res, rs, false)], &mut out).unwrap();
        assert_eq!(out, [1, -1, 0, 1, -1]);
        assert!(residual_combine(&[0; 27], rs, &[(&[0; 5], d, false)], &mut [0; 27]).is_err());
    }

    #[test]
    fn pooling_windows() {
        let s = MapShape::new(1, 2, 4);
        let spikes = [true, true, true, false, true, true, false, false];
        let mut out = [0.0; 2];
        avg_pool_input(&spikes, s, 2, &mut out);
        assert_eq!(out, [1.0, 0.25]);
        let odd = MapShape::new(1, 3, 3);
        let mut o = [0.0; 1];
        assert_eq!(avg_pool_input(&[true; 9], odd, 2, &mut o).plane(), 1);
        assert_eq!(o, [1.0]);
        avg_pool_input(&[true, false, true, false], MapShape::new(1, 2, 2), 2, &mut o);
        assert_eq!(o, [0.5]);
    }

    #[test]
    fn lpf_closed_forms() {
        let mut last = vec![false; 100];
        last[99] = true;
        assert!((lpf_activation(&last, 99.5, 1.0) - 0.01).abs() < 1e-15);
        assert_eq!(lpf_activation(&[false; 100], 99.5, 1.0), 0.0);
        let q: f64 = (-1.0f64 / 99.5).exp();
        let closed = (1.0 - q.powi(100)) / (1.0 - q);
        assert!((closed - 63.40).abs() < 5e-3);
        assert!((lpf_activation(&[true; 100], 99.5, 1.0) - closed / 100.0).abs() < 1e-9);
    }
}
