//! Two-layer binary fully-connected spiking network with lateral inhibition,
//! trained by hybrid STDP and read out by spike-count tagging.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::LabeledImageSet;
use crate::encoding::{EncoderConfig, ImageEncoder, Polarity};
use crate::error::{Error, Result};
use crate::neurons::decay_factor;
use crate::plasticity::{stochastic_switch, Layout, PrePolarity, StdpWindow, Update};
use crate::rng::{Key, Phase};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FcsnnConfig {
    pub neurons: usize,
    pub dt_ms: f64,
    pub steps: usize,
    pub max_rate_hz: f64,
    /// Idle time between presentations; traces keep decaying through it.
    pub rest_ms: f64,
    pub v_rest: f64,
    pub v_reset: f64,
    pub tau_mem_ms: f64,
    pub refractory_ms: f64,
    pub theta_base: f64,
    pub theta_plus: f64,
    pub theta_decay_ms: f64,
    pub adaptive_threshold: bool,
    pub inhibition: f64,
    /// Potential added per unit weight per input spike.
    pub input_gain: f64,
    pub tau_pre_ms: f64,
    pub tau_post_ms: f64,
    pub window: StdpWindow,
    pub w_low: f64,
    pub w_high: f64,
    pub init_p_high: f64,
    pub train_patterns: usize,
}

impl Default for FcsnnConfig {
    fn default() -> Self {
        FcsnnConfig {
            neurons: 400,
            dt_ms: 0.5,
            steps: 700,
            max_rate_hz: 63.75,
            rest_ms: 150.0,
            v_rest: 0.0,
            v_reset: 0.0,
            tau_mem_ms: 100.0,
            refractory_ms: 5.0,
            theta_base: 1.0,
            theta_plus: 0.02,
            theta_decay_ms: 1e7,
            adaptive_threshold: true,
            inhibition: 2.0,
            input_gain: 0.03,
            tau_pre_ms: 20.0,
            tau_post_ms: 20.0,
            window: StdpWindow {
                layout: Layout::Hb,
                pre_hebb_pot: 0.85,
                pre_antihebb_dep: 0.10,
                post_hebb_dep: 0.80,
                p_hebb_pot: 0.08,
                p_antihebb_dep: 0.06,
                p_hebb_dep: 0.005,
            },
            w_low: 0.0,
            w_high: 1.0,
            init_p_high: 0.5,
            train_patterns: 3500,
        }
    }
}

impl FcsnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.neurons == 0 || self.w_low >= self.w_high || !(0.0..=1.0).contains(&self.init_p_high) {
            return Err(Error::Config(
                "fc-snn needs neurons > 0, w_low < w_high and init probability in [0, 1]".into(),
            ));
        }
        self.window.validate()?;
        self.encoder().validate()
    }

    pub fn encoder(&self) -> EncoderConfig {
        EncoderConfig {
            max_rate_hz: self.max_rate_hz,
            dt_ms: self.dt_ms,
            steps: self.steps,
            polarity: Polarity::Unsigned,
        }
    }

    fn refractory_steps(&self) -> u32 {
        (self.refractory_ms / self.dt_ms).round() as u32
    }
}

/// Learned state: binary weights stored input-major (`inputs × neurons`) and
/// adaptive threshold offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct Fcsnn {
    pub config: FcsnnConfig,
    pub inputs: usize,
    pub high: Vec<bool>,
    pub theta: Vec<f64>,
    pub seed: u64,
}

/// Dynamic state of one presentation.
#[derive(Clone, Debug)]
struct Dynamics {
    v: Vec<f64>,
    refractory: Vec<u32>,
    /// Number of excitatory spikes on the previous step.
    last_total: usize,
    last_spiked: Vec<bool>,
}

impl Dynamics {
    fn new(n: usize, v_rest: f64) -> Self {
        Dynamics {
            v: vec![v_rest; n],
            refractory: vec![0; n],
            last_total: 0,
            last_spiked: vec![false; n],
        }
    }
}

/// Class tag per excitatory neuron; `-1` marks neurons that never fired.
#[derive(Clone, Debug, PartialEq)]
pub struct NeuronTagging {
    pub tags: Vec<i32>,
}

impl NeuronTagging {
    pub fn group_sizes(&self) -> [usize; 10] {
        let mut g = [0; 10];
        for &t in &self.tags {
            if t >= 0 {
                g[t as usize] += 1;
            }
        }
        g
    }

    pub fn distinct(&self) -> usize {
        self.group_sizes().iter().filter(|&&n| n > 0).count()
    }
}

impl Fcsnn {
    pub fn new(config: FcsnnConfig, inputs: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let key = Key::new(seed, Phase::FcsnnInit);
        let n = config.neurons;
        Ok(Fcsnn {
            high: (0..inputs * n).map(|s| key.with(s as u64).bernoulli(config.init_p_high)).collect(),
            theta: vec![0.0; n],
            inputs,
            config,
            seed,
        })
    }

    pub fn neurons(&self) -> usize {
        self.config.neurons
    }

    pub fn weight(&self, input: usize, neuron: usize) -> f64 {
        if self.high[input * self.neurons() + neuron] {
            self.config.w_high
        } else {
            self.config.w_low
        }
    }

    /// Advances one step. `input` lists the indices of spiking afferents.
    /// Returns the excitatory spike flags in `spiked`.
    fn step(&self, dyn_: &mut Dynamics, input: &[usize], spiked: &mut [bool]) {
        let cfg = &self.config;
        let n = self.neurons();
        let decay = decay_factor(cfg.dt_ms, cfg.tau_mem_ms);
        let mut drive = vec![0.0; n];
        for &i in input {
            let row = &self.high[i * n..(i + 1) * n];
            for (d, &h) in drive.iter_mut().zip(row) {
                *d += if h { cfg.w_high } else { cfg.w_low };
            }
        }
        let mut total = 0;
        for j in 0..n {
            let inhibit = cfg.inhibition * (dyn_.last_total - dyn_.last_spiked[j] as usize) as f64;
            let mut v = cfg.v_rest + (dyn_.v[j] - cfg.v_rest) * decay - inhibit;
            spiked[j] = false;
            if dyn_.refractory[j] > 0 {
                dyn_.refractory[j] -= 1;
            } else {
                v += cfg.input_gain * drive[j];
                let theta = cfg.theta_base + if cfg.adaptive_threshold { self.theta[j] } else { 0.0 };
                if v > theta {
                    spiked[j] = true;
                    v = cfg.v_reset;
                    dyn_.refractory[j] = cfg.refractory_steps();
                    total += 1;
                }
            }
            dyn_.v[j] = v;
        }
        dyn_.last_total = total;
        dyn_.last_spiked.copy_from_slice(spiked);
    }

    /// Spike count per neuron for one presentation with plasticity disabled.
    pub fn respond(&self, image: &[f64], key: Key) -> Vec<u32> {
        let n = self.neurons();
        let enc = ImageEncoder::new(image, &self.config.encoder(), key);
        let mut d = Dynamics::new(n, self.config.v_rest);
        let mut counts = vec![0u32; n];
        let mut spiked = vec![false; n];
        let mut input = Vec::new();
        for t in 0..self.config.steps {
            input.clear();
            enc.for_each_spike(t, |i, _| input.push(i));
            self.step(&mut d, &input, &mut spiked);
            for (c, &s) in counts.iter_mut().zip(&spiked) {
                *c += s as u32;
            }
        }
        counts
    }

    /// Unsupervised training on the first `config.train_patterns` images of
    /// `set`. Returns the number of post-synaptic spikes.
    pub fn train(&mut self, set: &LabeledImageSet) -> Result<u64> {
        if set.dim() != self.inputs {
            return Err(Error::Shape(format!(
                "{} inputs per image, network has {}",
                set.dim(),
                self.inputs
            )));
        }
        let cfg = self.config.clone();
        let n = self.neurons();
        let w = &cfg.window;
        let pre_decay = decay_factor(cfg.dt_ms, cfg.tau_pre_ms);
        let post_decay = decay_factor(cfg.dt_ms, cfg.tau_post_ms);
        let rest_pre = decay_factor(cfg.rest_ms, cfg.tau_pre_ms);
        let rest_post = decay_factor(cfg.rest_ms, cfg.tau_post_ms);
        let theta_decay = decay_factor(cfg.dt_ms, cfg.theta_decay_ms);
        let enc_key = Key::new(self.seed, Phase::EncodeFcsnn).with(0);
        let switch_key = Key::new(self.seed, Phase::FcsnnSwitch);
        let mut pre = vec![0.0f64; self.inputs];
        let mut post = vec![0.0f64; n];
        let mut spiked = vec![false; n];
        let mut input = Vec::new();
        let mut total = 0u64;
        let count = cfg.train_patterns.min(set.len());
        for img in 0..count {
            let enc = ImageEncoder::new(set.image(img), &cfg.encoder(), enc_key.with(img as u64));
            let mut d = Dynamics::new(n, cfg.v_rest);
            let img_key = switch_key.with(img as u64);
            for t in 0..cfg.steps {
                let step_key = img_key.with(t as u64);
                pre.iter_mut().for_each(|x| *x *= pre_decay);
                post.iter_mut().for_each(|x| *x *= post_decay);
                input.clear();
                enc.for_each_spike(t, |i, _| input.push(i));
                // pre-spikes arriving after recent post-spikes
                if w.p_hebb_dep > 0.0 {
                    for &i in &input {
                        for j in 0..n {
                            let u = Update::negative_window(post[j], w, PrePolarity::Excitatory);
                            if u.decision.depresses() {
                                let s = i * n + j;
                                let draw = step_key.with(1).with(s as u64).uniform();
                                self.high[s] = stochastic_switch(self.high[s], u, draw);
                            }
                        }
                    }
                }
                for &i in &input {
                    pre[i] = 1.0;
                }
                self.step(&mut d, &input, &mut spiked);
                for j in 0..n {
                    if !spiked[j] {
                        continue;
                    }
                    total += 1;
                    for (i, &tr) in pre.iter().enumerate() {
                        let u = Update::positive_window(tr, w, PrePolarity::Excitatory);
                        if u.probability > 0.0 {
                            let s = i * n + j;
                            let draw = step_key.with(0).with(s as u64).uniform();
                            self.high[s] = stochastic_switch(self.high[s], u, draw);
                        }
                    }
                    post[j] = 1.0;
                    if cfg.adaptive_threshold {
                        self.theta[j] += cfg.theta_plus;
                    }
                }
                if cfg.adaptive_threshold {
                    self.theta.iter_mut().for_each(|x| *x *= theta_decay);
                }
            }
            pre.iter_mut().for_each(|x| *x *= rest_pre);
            post.iter_mut().for_each(|x| *x *= rest_post);
            if (img + 1) % 500 == 0 {
                log::info!("fc-snn: {} / {count} patterns, {total} spikes", img + 1);
            }
        }
        Ok(total)
    }

    /// Spike counts for every image of `set`, in parallel. `pass` separates
    /// the encoding streams of different evaluation passes.
    pub fn respond_all(&self, set: &LabeledImageSet, pass: u64) -> Vec<Vec<u32>> {
        let key = Key::new(self.seed, Phase::EncodeFcsnn).with(pass);
        (0..set.len())
            .into_par_iter()
            .map(|i| self.respond(set.image(i), key.with(i as u64)))
            .collect()
    }
}

/// Tags each neuron with the class that drove it to spike most.
pub fn tag_neurons(counts: &[Vec<u32>], labels: &[u8], neurons: usize) -> NeuronTagging {
    let mut per_class = vec![[0u64; 10]; neurons];
    for (c, &l) in counts.iter().zip(labels) {
        for (j, &k) in c.iter().enumerate() {
            per_class[j][l as usize] += u64::from(k);
        }
    }
    let tags = per_class
        .iter()
        .map(|row| {
            let mut best = (-1i32, 0u64);
            for (class, &v) in row.iter().enumerate() {
                if v > best.1 {
                    best = (class as i32, v);
                }
            }
            best.0
        })
        .collect();
    NeuronTagging { tags }
}

/// Class whose tagged group has the highest mean spike count; ties and the
/// all-silent case go to the lowest class.
pub fn predict_from_counts(counts: &[u32], tagging: &NeuronTagging) -> usize {
    let mut sum = [0f64; 10];
    let sizes = tagging.group_sizes();
    for (&c, &t) in counts.iter().zip(&tagging.tags) {
        if t >= 0 {
            sum[t as usize] += f64::from(c);
        }
    }
    let mut best = (0usize, f64::NEG_INFINITY);
    for class in 0..10 {
        if sizes[class] == 0 {
            continue;
        }
        let mean = sum[class] / sizes[class] as f64;
        if mean > best.1 {
            best = (class, mean);
        }
    }
    best.0
}

/// Receptive field of neuron `j` as 8-bit pixels (`w_high` → 255).
pub fn receptive_field(net: &Fcsnn, j: usize) -> Vec<u8> {
    (0..net.inputs)
        .map(|i| if net.high[i * net.neurons() + j] { 255 } else { 0 })
        .collect()
}
