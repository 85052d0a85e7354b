//! Kernel initialisation and layer-wise mini-batch STDP training.

use rayon::prelude::*;

use super::{Learning, Network, SimState};
use crate::data_io::LabeledImageSet;
use crate::encoding::ImageEncoder;
use crate::error::{Error, Result};
use crate::kernel::{KernelBank, KernelShape, Kernels};
use crate::neurons::adapt_threshold;
use crate::plasticity::{
    apply_patch_updates, average_trace_patches, draw_map_dropout, BatchTraces, TracePatch,
};
use crate::rng::{Key, Phase};

/// Probability of initialising a weight high: `sqrt(alpha / (fan_in + fan_out))`
/// with both fans counted in synapses (`maps·k²`).
pub fn p_high(alpha: f64, shape: KernelShape) -> f64 {
    let k2 = (shape.k * shape.k) as f64;
    (alpha / (shape.in_maps as f64 * k2 + shape.out_maps as f64 * k2)).sqrt()
}

pub fn init_kernels(shape: KernelShape, alpha: f64, w_low: f64, w_high: f64, key: Key) -> Result<KernelBank> {
    let p = p_high(alpha, shape);
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::InitProbability { p });
    }
    Ok(KernelBank {
        shape,
        w_low,
        w_high,
        high: (0..shape.len()).map(|i| key.with(i as u64).bernoulli(p)).collect(),
    })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainStats {
    pub iterations: usize,
    pub images: usize,
    pub post_spikes: u64,
    pub weight_changes: usize,
}

impl Network {
    /// Trains the 1-based `layer` on `set`, whose image `n` is keyed by
    /// `first_index + n`. Earlier layers must be trained; this one must not.
    pub fn train_layer(&mut self, layer: usize, set: &LabeledImageSet, first_index: usize) -> Result<TrainStats> {
        self.check_trainable(layer)?;
        let n = layer - 1;
        let topo = self.topology.clone();
        let sim = &topo.sim;
        let params = &topo.layers[n].params;
        let (c, h, w) = topo.input;
        if !set.is_empty() && (set.channels, set.height, set.width) != (c, h, w) {
            return Err(Error::Shape(format!(
                "training images are {}x{}x{}, network expects {c}x{h}x{w}",
                set.channels, set.height, set.width
            )));
        }
        let in_shape = topo.input_shape(n);
        let out_shape = topo.output_shape_of(layer);
        let kshape = topo.kernel_shape(n);
        let (in_len, out_len) = (in_shape.len(), out_shape.len());
        let frozen = self.weights(n);
        let enc_cfg = sim.encoder(params.stdp_rate_hz, sim.stdp_steps);
        let trace_decay = (-sim.dt_ms / sim.tau_pre_ms).exp();
        let enc_key = Key::new(self.seed, Phase::EncodeStdp).with(n as u64);
        let drop_key = Key::new(self.seed, Phase::MapDropout).with(n as u64);
        let switch_key = Key::new(self.seed, Phase::StdpSwitch).with(n as u64);
        let mut stats = TrainStats::default();

        for (it, start) in (0..set.len()).step_by(sim.batch_size).enumerate() {
            let batch = sim.batch_size.min(set.len() - start);
            let active = draw_map_dropout(out_shape.maps, sim.p_drop, drop_key.with(it as u64));
            let encoders: Vec<ImageEncoder> = (start..start + batch)
                .into_par_iter()
                .map(|i| ImageEncoder::new(set.image(i), &enc_cfg, enc_key.with((first_index + i) as u64)))
                .collect();
            let mut states: Vec<SimState> = (0..batch).map(|_| SimState::new(&topo, layer)).collect();
            let mut exc = vec![0.0f64; batch * in_len];
            let mut inh = vec![0.0f64; batch * in_len];
            let mut post = vec![false; batch * out_len];
            let mut counts = vec![0u64; out_shape.maps];
            let thresholds = self.layers[n].thresholds.clone();

            for t in 0..sim.stdp_steps {
                let weights = self.layers[n].kernels.weights();
                let per_image: Vec<Vec<u64>> = states
                    .par_iter_mut()
                    .zip(exc.par_chunks_mut(in_len))
                    .zip(inh.par_chunks_mut(in_len))
                    .zip(post.par_chunks_mut(out_len))
                    .zip(encoders.par_iter())
                    .map(|((((state, exc), inh), post), enc)| -> Result<Vec<u64>> {
                        enc.step_into(t, &mut state.outputs[0]);
                        for m in 0..n {
                            state.run_layer(&topo, m, &frozen[m], &self.layers[m].thresholds, None)?;
                        }
                        state.combine(&topo, n)?;
                        for ((e, i), &s) in exc.iter_mut().zip(inh.iter_mut()).zip(&state.inputs[n]) {
                            *e = if s > 0 { 1.0 } else { *e * trace_decay };
                            *i = if s < 0 { 1.0 } else { *i * trace_decay };
                        }
                        state.integrate(&topo, n, &weights, &thresholds, Some(&active))?;
                        post.copy_from_slice(&state.spikes[n]);
                        Ok(post
                            .chunks(out_shape.plane())
                            .map(|m| m.iter().filter(|&&s| s).count() as u64)
                            .collect())
                    })
                    .collect::<Result<_>>()?;
                for img in &per_image {
                    for (total, c) in counts.iter_mut().zip(img) {
                        *total += c;
                    }
                }
                let view = BatchTraces {
                    batch,
                    in_maps: in_shape.maps,
                    height: in_shape.height,
                    width: in_shape.width,
                    exc: &exc,
                    inh: &inh,
                    post: &post,
                };
                let patches = average_trace_patches(&view, kshape.out_maps, kshape.k, sim.stride, &active)?;
                let key = switch_key.with(it as u64).with(t as u64);
                stats.weight_changes += match (&mut self.layers[n].kernels, sim.learning) {
                    (Kernels::Binary(bank), _) => {
                        apply_patch_updates(bank, &patches, &params.exc_window, &params.inh_window, key)?
                    }
                    (Kernels::Real(real), Learning::FullPrecision { learning_rate }) => apply_real_updates(
                        &mut real.values,
                        kshape,
                        &patches,
                        learning_rate,
                        params.exc_window.pre_antihebb_dep,
                        (sim.w_low, sim.w_high),
                    ),
                    (Kernels::Real(_), Learning::Binary) => {
                        return Err(Error::Config("real-valued kernels under binary learning".into()))
                    }
                };
            }

            let size = out_shape.plane();
            for (theta, &count) in self.layers[n].thresholds.iter_mut().zip(&counts) {
                *theta = adapt_threshold(f64::from(*theta), count, size, params.beta) as f32;
            }
            stats.iterations += 1;
            stats.images += batch;
            stats.post_spikes += counts.iter().sum::<u64>();
            log::info!(
                "layer {layer} iteration {it}: {batch} images, {} post spikes, mean threshold {:.4}",
                counts.iter().sum::<u64>(),
                self.layers[n].thresholds.iter().map(|&t| f64::from(t)).sum::<f64>() / counts.len() as f64
            );
        }
        self.layers[n].trained = true;
        Ok(stats)
    }
}

/// Additive trace rule for real-valued kernels:
/// `w += lr·(exc − inh − target)`, clipped to `bounds`.
fn apply_real_updates(
    values: &mut [f32],
    shape: KernelShape,
    patches: &[Option<TracePatch>],
    learning_rate: f64,
    target: f64,
    bounds: (f64, f64),
) -> usize {
    let per_map = shape.in_maps * shape.k * shape.k;
    let mut changed = 0;
    for (j, patch) in patches.iter().enumerate() {
        let Some(patch) = patch else { continue };
        for p in 0..per_map {
            let w = &mut values[j * per_map + p];
            let next = (f64::from(*w) + learning_rate * (patch.exc[p] - patch.inh[p] - target))
                .clamp(bounds.0, bounds.1) as f32;
            changed += (next != *w) as usize;
            *w = next;
        }
    }
    changed
}

#[cfg(test)]
mod tests {
    use super::super::tests::small_topology;
    use super::*;
    use crate::data_io::Split;

    fn images(n: usize, side: usize) -> LabeledImageSet {
        let key = Key::new(99, Phase::EncodeStdp);
        let pixels = (0..n * side * side)
            .map(|p| if key.with(p as u64).bernoulli(0.3) { 255.0 } else { 0.0 })
            .collect();
        LabeledImageSet::new(1, side, side, pixels, vec![0; n], Split::Train).unwrap()
    }

    #[test]
    fn init_probability() {
        let mnist = KernelShape {
            out_maps: 16,
            in_maps: 1,
            k: 3,
        };
        assert!((p_high(75.0, mnist) - (75.0f64 / 153.0).sqrt()).abs() < 1e-15);
        let fans_225 = KernelShape {
            out_maps: 24,
            in_maps: 1,
            k: 3,
        };
        assert!((p_high(75.0, fans_225) - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let key = Key::new(1, Phase::KernelInit);
        assert!(init_kernels(mnist, 0.0, -1.0, 1.0, key).unwrap().high.iter().all(|&h| !h));
        assert!(matches!(
            init_kernels(mnist, 1000.0, -1.0, 1.0, key),
            Err(Error::InitProbability { .. })
        ));
    }

    #[test]
    fn init_fraction_within_three_sigma() {
        let shape = KernelShape {
            out_maps: 1000,
            in_maps: 12,
            k: 3,
        };
        let p = p_high(30.0, shape);
        let bank = init_kernels(shape, 30.0, -1.0, 1.0, Key::new(4, Phase::KernelInit)).unwrap();
        let n = shape.len() as f64;
        let sd = (n * p * (1.0 - p)).sqrt();
        let got = bank.high.iter().filter(|&&h| h).count() as f64;
        assert!((got - n * p).abs() < 3.0 * sd);
    }

    #[test]
    fn empty_training_set_keeps_initialisation() {
        let mut net = Network::new(small_topology((1, 10, 10), &[4]), 2).unwrap();
        let before = net.layers[0].clone();
        net.train_layer(1, &images(0, 10), 0).unwrap();
        assert_eq!(net.layers[0].kernels, before.kernels);
        assert_eq!(net.layers[0].thresholds, before.thresholds);
        assert!(net.layers[0].trained);
    }

    #[test]
    fn training_raises_thresholds_and_is_deterministic() {
        let topo = small_topology((1, 12, 12), &[4]);
        let set = images(8, 12);
        let mut a = Network::new(topo.clone(), 7).unwrap();
        let stats = a.train_layer(1, &set, 0).unwrap();
        assert_eq!(stats.iterations, 2);
        assert!(stats.post_spikes > 0);
        assert!(a.layers[0].thresholds.iter().any(|&t| t > 0.0));
        assert!(a.layers[0].thresholds.iter().all(|&t| t >= 0.0));
        let mut b = Network::new(topo, 7).unwrap();
        b.train_layer(1, &set, 0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn training_a_later_layer_leaves_earlier_ones() {
        let mut topo = small_topology((1, 12, 12), &[3, 3]);
        topo.layers[1].residual = vec![super::super::ResidualSource { from: 0, invert: false }];
        let set = images(4, 12);
        let mut net = Network::new(topo, 1).unwrap();
        net.train_layer(1, &set, 0).unwrap();
        let first = net.layers[0].clone();
        net.train_layer(2, &set, 4).unwrap();
        assert_eq!(net.layers[0], first);
        assert!(net.layers[1].trained);
    }

    #[test]
    fn full_precision_rule_stays_clipped() {
        let mut topo = small_topology((1, 12, 12), &[3]);
        topo.sim.learning = Learning::FullPrecision { learning_rate: 0.5 };
        let mut net = Network::new(topo, 1).unwrap();
        net.train_layer(1, &images(8, 12), 0).unwrap();
        let Kernels::Real(real) = &net.layers[0].kernels else { panic!() };
        assert!(real.values.iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
