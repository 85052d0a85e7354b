//! Residual convolutional spiking network: topology, inference and
//! layer-wise unsupervised training.

mod ops;
mod train;

pub use ops::{
    avg_pool_input, binary_conv2d, lpf_activation, residual_combine, LowPass, MapShape, ResidualSource,
};
pub use train::{init_kernels, p_high, TrainStats};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::activations::ActivationSet;
use crate::data_io::checkpoint::{Checkpoint, LayerRecord};
use crate::data_io::LabeledImageSet;
use crate::classifier::MlpModel;
use crate::encoding::{EncoderConfig, ImageEncoder, Polarity};
use crate::error::{Error, Result};
use crate::kernel::{KernelShape, Kernels};
use crate::neurons::{IfPool, LifLayer};
use crate::plasticity::StdpWindow;
use crate::rng::{Key, Phase};

/// Plasticity and initialisation settings of one convolutional layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub exc_window: StdpWindow,
    pub inh_window: StdpWindow,
    pub beta: f64,
    pub alpha: f64,
    pub stdp_rate_hz: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvLayerSpec {
    pub maps: usize,
    pub k: usize,
    #[serde(default)]
    pub residual: Vec<ResidualSource>,
    pub params: LayerParams,
}

/// How kernels are represented and learned.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Learning {
    /// Stochastic switching of `{w_low, w_high}` weights.
    Binary,
    /// Real-valued kernels with additive trace-driven updates clipped to
    /// `[w_low, w_high]`.
    FullPrecision { learning_rate: f64 },
}

/// Simulation constants shared by every layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub dt_ms: f64,
    pub tau_mem_ms: f64,
    pub tau_pre_ms: f64,
    pub stdp_steps: usize,
    pub stride: usize,
    pub p_drop: f64,
    pub batch_size: usize,
    pub w_low: f64,
    pub w_high: f64,
    pub pool_size: usize,
    pub theta_pool: f64,
    pub sim_steps: usize,
    pub tau_lpf_ms: f64,
    pub activation_rate_hz: f64,
    pub polarity: Polarity,
    pub learning: Learning,
}

impl SimParams {
    pub fn encoder(&self, rate_hz: f64, steps: usize) -> EncoderConfig {
        EncoderConfig {
            max_rate_hz: rate_hz,
            dt_ms: self.dt_ms,
            steps,
            polarity: self.polarity,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    pub input: (usize, usize, usize),
    pub layers: Vec<ConvLayerSpec>,
    /// 1-based layers whose pooled activations form the feature vector.
    pub features: Vec<usize>,
    pub sim: SimParams,
}

impl NetworkTopology {
    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Config("topology has no convolutional layer".into()));
        }
        if self.sim.pool_size == 0 || self.sim.stride == 0 || self.sim.batch_size == 0 {
            return Err(Error::Config("pool size, STDP stride and batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.sim.p_drop) {
            return Err(Error::Config(format!("map dropout {} outside [0, 1)", self.sim.p_drop)));
        }
        if self.sim.w_low >= self.sim.w_high {
            return Err(Error::Config("w_low must be below w_high".into()));
        }
        for (n, spec) in self.layers.iter().enumerate() {
            let l = n + 1;
            let input = self.input_shape(n);
            if spec.k == 0 || spec.maps == 0 || input.height < spec.k || input.width < spec.k {
                return Err(Error::Config(format!(
                    "layer {l}: {}C{} does not fit a {}x{} input",
                    spec.maps, spec.k, input.height, input.width
                )));
            }
            for src in &spec.residual {
                if src.from >= l {
                    return Err(Error::Config(format!(
                        "layer {l}: residual source {} does not precede it",
                        src.from
                    )));
                }
                let s = self.output_shape_of(src.from);
                if s.height < input.height || s.width < input.width {
                    return Err(Error::Config(format!(
                        "layer {l}: residual source {} is smaller than the direct path",
                        src.from
                    )));
                }
            }
            spec.params.exc_window.validate()?;
            spec.params.inh_window.validate()?;
            EncoderConfig {
                max_rate_hz: spec.params.stdp_rate_hz,
                dt_ms: self.sim.dt_ms,
                steps: 1,
                polarity: self.sim.polarity,
            }
            .validate()?;
        }
        self.sim.encoder(self.sim.activation_rate_hz, self.sim.sim_steps).validate()?;
        if self.features.is_empty() || self.features.iter().any(|&f| f == 0 || f > self.layers.len()) {
            return Err(Error::Config(format!(
                "feature layers {:?} must name layers 1..={}",
                self.features,
                self.layers.len()
            )));
        }
        Ok(())
    }

    /// Shape of the encoded input (`source == 0`) or of layer `source`'s spikes.
    pub fn output_shape_of(&self, source: usize) -> MapShape {
        let (c, mut h, mut w) = self.input;
        if source == 0 {
            return MapShape::new(c, h, w);
        }
        for spec in &self.layers[..source] {
            h = h + 1 - spec.k;
            w = w + 1 - spec.k;
        }
        MapShape::new(self.layers[source - 1].maps, h, w)
    }

    /// Combined input shape of the layer at 0-based index `n`.
    pub fn input_shape(&self, n: usize) -> MapShape {
        self.output_shape_of(n)
    }

    pub fn kernel_shape(&self, n: usize) -> KernelShape {
        KernelShape {
            out_maps: self.layers[n].maps,
            in_maps: self.input_shape(n).maps,
            k: self.layers[n].k,
        }
    }

    pub fn pooled_shape(&self, layer: usize) -> MapShape {
        let s = self.output_shape_of(layer);
        MapShape::new(s.maps, s.height / self.sim.pool_size, s.width / self.sim.pool_size)
    }

    pub fn feature_len(&self) -> usize {
        self.features.iter().map(|&f| self.pooled_shape(f).len()).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    pub kernels: Kernels,
    pub thresholds: Vec<f32>,
    pub trained: bool,
}

/// Topology plus learned state.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub topology: NetworkTopology,
    pub layers: Vec<ConvLayer>,
    pub seed: u64,
}

impl Network {
    /// Initialises every layer's kernels with zero thresholds.
    pub fn new(topology: NetworkTopology, seed: u64) -> Result<Self> {
        topology.validate()?;
        let mut layers = Vec::with_capacity(topology.layers.len());
        for (n, spec) in topology.layers.iter().enumerate() {
            let shape = topology.kernel_shape(n);
            let key = Key::new(seed, Phase::KernelInit).with(n as u64);
            let bank = init_kernels(shape, spec.params.alpha, topology.sim.w_low, topology.sim.w_high, key)?;
            let kernels = match topology.sim.learning {
                Learning::Binary => Kernels::Binary(bank),
                Learning::FullPrecision { .. } => Kernels::Real(crate::kernel::RealKernelBank {
                    shape,
                    values: bank.weights().into_iter().map(|w| w as f32).collect(),
                }),
            };
            layers.push(ConvLayer {
                kernels,
                thresholds: vec![0.0; spec.maps],
                trained: false,
            });
        }
        Ok(Network {
            topology,
            layers,
            seed,
        })
    }

    pub fn from_checkpoint(topology: NetworkTopology, ckpt: &Checkpoint) -> Result<Self> {
        topology.validate()?;
        if ckpt.input_shape != topology.input || ckpt.layers.len() != topology.layers.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} layers over {:?}, topology expects {} over {:?}",
                ckpt.layers.len(),
                ckpt.input_shape,
                topology.layers.len(),
                topology.input
            )));
        }
        let mut layers = Vec::new();
        for (n, rec) in ckpt.layers.iter().enumerate() {
            if rec.kernels.shape() != topology.kernel_shape(n)
                || rec.thresholds.len() != topology.layers[n].maps
                || rec.residual != topology.layers[n].residual
            {
                return Err(Error::Shape(format!(
                    "checkpoint layer {} does not match the configured topology",
                    n + 1
                )));
            }
            layers.push(ConvLayer {
                kernels: rec.kernels.clone(),
                thresholds: rec.thresholds.clone(),
                trained: rec.trained,
            });
        }
        Ok(Network {
            topology,
            layers,
            seed: ckpt.seed,
        })
    }

    pub fn to_checkpoint(&self, classifier: Option<MlpModel>) -> Checkpoint {
        Checkpoint {
            seed: self.seed,
            input_shape: self.topology.input,
            layers: self
                .layers
                .iter()
                .zip(&self.topology.layers)
                .map(|(l, spec)| LayerRecord {
                    kernels: l.kernels.clone(),
                    thresholds: l.thresholds.clone(),
                    trained: l.trained,
                    residual: spec.residual.clone(),
                })
                .collect(),
            classifier,
        }
    }

    /// Marks a layer as trained without running plasticity, keeping its
    /// initial kernels and zero thresholds.
    pub fn freeze_untrained(&mut self, layer: usize) -> Result<()> {
        self.check_trainable(layer)?;
        self.layers[layer - 1].trained = true;
        Ok(())
    }

    pub(crate) fn check_trainable(&self, layer: usize) -> Result<()> {
        if layer == 0 || layer > self.layers.len() {
            return Err(Error::Config(format!(
                "layer {layer} outside 1..={}",
                self.layers.len()
            )));
        }
        if let Some(n) = self.layers[..layer - 1].iter().position(|l| !l.trained) {
            return Err(Error::UntrainedLayer { layer: n + 1 });
        }
        if self.layers[layer - 1].trained {
            return Err(Error::AlreadyTrained { layer });
        }
        Ok(())
    }

    fn weights(&self, upto: usize) -> Vec<Vec<f64>> {
        self.layers[..upto].iter().map(|l| l.kernels.weights()).collect()
    }

    /// Spiking activation vector of one image. `key` identifies the image.
    pub fn forward_pass(&self, image: &[f64], key: Key) -> Result<Vec<f64>> {
        let depth = *self.topology.features.iter().max().unwrap_or(&0);
        if let Some(n) = self.layers[..depth].iter().position(|l| !l.trained) {
            return Err(Error::UntrainedLayer { layer: n + 1 });
        }
        let weights = self.weights(depth);
        self.forward_with(image, key, &weights)
    }

    fn forward_with(&self, image: &[f64], key: Key, weights: &[Vec<f64>]) -> Result<Vec<f64>> {
        let topo = &self.topology;
        let sim = &topo.sim;
        let (c, h, w) = topo.input;
        if image.len() != c * h * w {
            return Err(Error::Shape(format!(
                "image of {} values for a {c}x{h}x{w} input",
                image.len()
            )));
        }
        let depth = weights.len();
        let enc = ImageEncoder::new(image, &sim.encoder(sim.activation_rate_hz, sim.sim_steps), key);
        let mut state = SimState::new(topo, depth);
        let mut pools: Vec<PoolState> = topo.features.iter().map(|&f| PoolState::new(topo, f)).collect();
        for t in 0..sim.sim_steps {
            enc.step_into(t, &mut state.outputs[0]);
            for n in 0..depth {
                state.run_layer(topo, n, &weights[n], &self.layers[n].thresholds, None)?;
            }
            for pool in &mut pools {
                pool.step(topo, &state.spikes[pool.layer - 1]);
            }
        }
        let duration = sim.sim_steps as f64 * sim.dt_ms;
        Ok(pools.iter().flat_map(|p| p.lpf.activation(duration)).collect())
    }

    /// Activation rows for a whole image set, computed in parallel. Image
    /// `n` of the set is keyed by `first_index + n`.
    pub fn activations(&self, set: &LabeledImageSet, first_index: usize) -> Result<ActivationSet> {
        let depth = *self.topology.features.iter().max().unwrap_or(&0);
        if let Some(n) = self.layers[..depth].iter().position(|l| !l.trained) {
            return Err(Error::UntrainedLayer { layer: n + 1 });
        }
        let weights = self.weights(depth);
        let base = Key::new(self.seed, Phase::EncodeActivation).with(u64::from(set.split.tag()));
        let rows: Vec<Vec<f64>> = (0..set.len())
            .into_par_iter()
            .map(|i| self.forward_with(set.image(i), base.with((first_index + i) as u64), &weights))
            .collect::<Result<_>>()?;
        let cols = self.topology.feature_len();
        Ok(ActivationSet {
            seed: self.seed,
            cols,
            values: rows.into_iter().flatten().map(|v| v as f32).collect(),
            labels: set.labels.clone(),
        })
    }
}

/// Per-image membrane and spike buffers for layers `0..depth`.
pub(crate) struct SimState {
    /// `outputs[0]` is the encoded input, `outputs[l]` the spikes of layer `l`.
    pub outputs: Vec<Vec<i8>>,
    /// Combined (direct + residual) input of each layer.
    pub inputs: Vec<Vec<i8>>,
    pub spikes: Vec<Vec<bool>>,
    lif: Vec<LifLayer>,
    current: Vec<f64>,
}

impl SimState {
    pub fn new(topo: &NetworkTopology, depth: usize) -> Self {
        let mut outputs = vec![vec![0i8; topo.output_shape_of(0).len()]];
        let mut inputs = Vec::new();
        let mut spikes = Vec::new();
        let mut lif = Vec::new();
        let mut max_len = 0;
        for n in 0..depth {
            let out = topo.output_shape_of(n + 1);
            max_len = max_len.max(out.len());
            outputs.push(vec![0; out.len()]);
            inputs.push(vec![0; topo.input_shape(n).len()]);
            spikes.push(vec![false; out.len()]);
            lif.push(LifLayer::new(out.maps, out.plane(), topo.sim.tau_mem_ms, topo.sim.dt_ms));
        }
        SimState {
            outputs,
            inputs,
            spikes,
            lif,
            current: vec![0.0; max_len],
        }
    }

    /// Builds the combined input of layer `n` from the current outputs.
    pub fn combine(&mut self, topo: &NetworkTopology, n: usize) -> Result<()> {
        let direct_shape = topo.input_shape(n);
        let residuals: Vec<(&[i8], MapShape, bool)> = topo.layers[n]
            .residual
            .iter()
            .map(|s| (self.outputs[s.from].as_slice(), topo.output_shape_of(s.from), s.invert))
            .collect();
        residual_combine(&self.outputs[n], direct_shape, &residuals, &mut self.inputs[n])
    }

    /// Convolution and LIF update of layer `n` on its already combined input.
    /// Returns the spike count.
    pub fn integrate(
        &mut self,
        topo: &NetworkTopology,
        n: usize,
        weights: &[f64],
        thresholds: &[f32],
        active: Option<&[bool]>,
    ) -> Result<usize> {
        let out_shape = topo.output_shape_of(n + 1);
        let current = &mut self.current[..out_shape.len()];
        binary_conv2d(&self.inputs[n], topo.input_shape(n), weights, topo.kernel_shape(n), current)?;
        let count = self.lif[n].step(current, thresholds, active, &mut self.spikes[n]);
        for (o, &s) in self.outputs[n + 1].iter_mut().zip(&self.spikes[n]) {
            *o = s as i8;
        }
        Ok(count)
    }

    pub fn run_layer(
        &mut self,
        topo: &NetworkTopology,
        n: usize,
        weights: &[f64],
        thresholds: &[f32],
        active: Option<&[bool]>,
    ) -> Result<usize> {
        self.combine(topo, n)?;
        self.integrate(topo, n, weights, thresholds, active)
    }
}

/// Pooling neurons and low-pass filters behind one feature layer.
struct PoolState {
    layer: usize,
    drive: Vec<f64>,
    fired: Vec<bool>,
    neurons: IfPool,
    lpf: LowPass,
}

impl PoolState {
    fn new(topo: &NetworkTopology, layer: usize) -> Self {
        let len = topo.pooled_shape(layer).len();
        PoolState {
            layer,
            drive: vec![0.0; len],
            fired: vec![false; len],
            neurons: IfPool::new(len, topo.sim.theta_pool),
            lpf: LowPass::new(len, topo.sim.tau_lpf_ms, topo.sim.dt_ms),
        }
    }

    fn step(&mut self, topo: &NetworkTopology, spikes: &[bool]) {
        avg_pool_input(spikes, topo.output_shape_of(self.layer), topo.sim.pool_size, &mut self.drive);
        self.neurons.step(&self.drive, &mut self.fired);
        self.lpf.step(&self.fired);
    }
}
