//! Experiment configuration: a TOML document describing data, topology,
//! plasticity settings, classifier training and the FC-SNN baseline.
//!
//! ```toml
//! name = "mnist-16c3"
//! dataset = "mnist"            # or "cifar10"
//! data_dir = "data/mnist"
//! topology = "16C3-2P-10FC"    # <n>C<k> layers, one <s>P, then <n>FC layers
//! seed = 1
//! features = [1]               # optional, defaults to every layer
//!
//! [preprocess]                 # optional, CIFAR only
//! gcn_eps = 1e-8
//! zca_eps = 0.1
//!
//! [sim]                        # shared simulation constants
//! dt_ms = 1.0
//! ...
//!
//! [[layers]]                   # one table per convolutional layer
//! stdp_rate_hz = 200.0
//! beta = 6e-4
//! alpha = 75.0
//! train_start = 0
//! train_count = 2000
//! residual = [{ from = 0, invert = false }]
//! [layers.exc_window]
//! layout = "hb"
//! ...
//!
//! [classifier]
//! epochs = 100
//! ...
//!
//! [fcsnn]                      # optional FC-SNN baseline
//! neurons = 400
//! ...
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::{AdamConfig, ClassifierConfig, CLASSES};
use crate::convnet::{ConvLayerSpec, LayerParams, Learning, NetworkTopology, ResidualSource, SimParams};
use crate::data_io::{read_file, write_file};
use crate::encoding::Polarity;
use crate::error::{Error, Result};
use crate::fcsnn::FcsnnConfig;
use crate::plasticity::{Layout, StdpWindow};

/// Layer geometry parsed from a `36C3-36C3-2P-1024FC-10FC` string.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TopologySpec {
    /// `(maps, k)` per convolutional layer.
    pub conv: Vec<(usize, usize)>,
    pub pool: usize,
    /// Hidden fully-connected widths (the output layer excluded).
    pub hidden: Vec<usize>,
    pub classes: usize,
}

pub fn parse_topology(text: &str) -> Result<TopologySpec> {
    let err = |reason: &str| Error::Topology {
        input: text.to_string(),
        reason: reason.to_string(),
    };
    let text_trim = text.trim();
    if text_trim.is_empty() {
        return Err(err("empty topology"));
    }
    let mut conv = Vec::new();
    let mut pool = None;
    let mut fc = Vec::new();
    for token in text_trim.split('-') {
        let token = token.trim();
        let num = |s: &str| -> Result<usize> {
            s.parse::<usize>()
                .ok()
                .filter(|&v| v > 0)
                .ok_or_else(|| err(&format!("malformed token `{token}`")))
        };
        if let Some(n) = token.strip_suffix("FC") {
            if conv.is_empty() {
                return Err(err("fully-connected layer before any convolution"));
            }
            if pool.is_none() {
                return Err(err("fully-connected layer before pooling"));
            }
            fc.push(num(n)?);
        } else if let Some(s) = token.strip_suffix('P') {
            if conv.is_empty() {
                return Err(err("pooling without a convolutional layer"));
            }
            if pool.is_some() || !fc.is_empty() {
                return Err(err("pooling must appear once, after the convolutions"));
            }
            pool = Some(num(s)?);
        } else if let Some((n, k)) = token.split_once('C') {
            if pool.is_some() || !fc.is_empty() {
                return Err(err("convolution after pooling"));
            }
            conv.push((num(n)?, num(k)?));
        } else {
            return Err(err(&format!("malformed token `{token}`")));
        }
    }
    let pool = pool.ok_or_else(|| err("missing pooling stage"))?;
    let classes = fc.pop().ok_or_else(|| err("missing output layer"))?;
    Ok(TopologySpec {
        conv,
        pool,
        hidden: fc,
        classes,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Mnist,
    Cifar10,
}

impl Dataset {
    pub fn input_shape(self) -> (usize, usize, usize) {
        match self {
            Dataset::Mnist => (1, 28, 28),
            Dataset::Cifar10 => (3, 32, 32),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub gcn_eps: f64,
    pub zca_eps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerConfig {
    pub stdp_rate_hz: f64,
    pub beta: f64,
    pub alpha: f64,
    pub train_start: usize,
    pub train_count: usize,
    #[serde(default)]
    pub residual: Vec<ResidualSource>,
    pub exc_window: StdpWindow,
    pub inh_window: StdpWindow,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub adam: AdamConfig,
    /// Use only the first `n` training / test images for the classifier.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_limit: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_limit: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub dataset: Dataset,
    pub data_dir: PathBuf,
    pub topology: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preprocess: Option<PreprocessConfig>,
    pub sim: SimParams,
    pub layers: Vec<LayerConfig>,
    pub classifier: ClassifierSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fcsnn: Option<FcsnnConfig>,
}

pub const PRESETS: &[&str] = &[
    "mnist-16c3",
    "mnist-36c3",
    "mnist-36c3-128fc",
    "cifar-restocnet1",
    "cifar-restocnet2",
    "cifar-restocnet3",
    "cifar-restocnet3a",
    "cifar-restocnet3b",
    "fcsnn-mnist",
];

fn window(pot: f64, dep: f64, p_pot: f64, p_dep: f64) -> StdpWindow {
    StdpWindow {
        layout: Layout::Hb,
        pre_hebb_pot: pot,
        pre_antihebb_dep: dep,
        post_hebb_dep: 1.0,
        p_hebb_pot: p_pot,
        p_antihebb_dep: p_dep,
        p_hebb_dep: 0.0,
    }
}

fn sim(polarity: Polarity) -> SimParams {
    SimParams {
        dt_ms: 1.0,
        tau_mem_ms: 9.5,
        tau_pre_ms: 1.45,
        stdp_steps: 25,
        stride: 5,
        p_drop: 0.5,
        batch_size: 200,
        w_low: -1.0,
        w_high: 1.0,
        pool_size: 2,
        theta_pool: 0.8,
        sim_steps: 100,
        tau_lpf_ms: 99.5,
        activation_rate_hz: 500.0,
        polarity,
        learning: Learning::Binary,
    }
}

fn classifier(lr: f64) -> ClassifierSection {
    ClassifierSection {
        epochs: 100,
        batch_size: 256,
        dropout: 0.5,
        adam: AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        },
        train_limit: None,
        test_limit: None,
    }
}

fn mnist_layer(count: usize) -> LayerConfig {
    let w = window(0.05, 0.005, 0.01, 0.01);
    LayerConfig {
        stdp_rate_hz: 200.0,
        beta: 6e-4,
        alpha: 75.0,
        train_start: 0,
        train_count: count,
        residual: vec![],
        exc_window: w,
        inh_window: w,
    }
}

fn cifar_layer(index: usize) -> LayerConfig {
    let (w, rate, beta) = match index {
        0 => (window(0.02, 0.005, 0.05, 0.01), 200.0, 6e-4),
        1 => (window(0.02, 0.005, 0.05 / 25.0, 0.01 / 25.0), 500.0, 6e-4),
        _ => (window(0.02, 0.005, 0.05 / 25.0, 0.01 / 25.0), 500.0, 8e-4),
    };
    LayerConfig {
        stdp_rate_hz: rate,
        beta,
        alpha: 30.0,
        train_start: 5000 * index,
        train_count: 5000,
        residual: vec![],
        exc_window: w,
        inh_window: w,
    }
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let mnist = |name: &str, topology: &str, count: usize| ExperimentConfig {
            name: name.into(),
            dataset: Dataset::Mnist,
            data_dir: "data/mnist".into(),
            topology: topology.into(),
            seed: 1,
            features: None,
            preprocess: None,
            sim: sim(Polarity::Unsigned),
            layers: vec![mnist_layer(count)],
            classifier: classifier(1.5e-3),
            fcsnn: None,
        };
        let cifar = |name: &str, topology: &str, depth: usize| ExperimentConfig {
            name: name.into(),
            dataset: Dataset::Cifar10,
            data_dir: "data/cifar-10-batches-bin".into(),
            topology: topology.into(),
            seed: 1,
            features: None,
            preprocess: Some(PreprocessConfig {
                gcn_eps: 1e-8,
                zca_eps: 0.1,
            }),
            sim: sim(Polarity::Signed),
            layers: (0..depth).map(cifar_layer).collect(),
            classifier: classifier(1e-4),
            fcsnn: None,
        };
        let input = ResidualSource { from: 0, invert: false };
        let deep = "36C3-36C3-36C3-2P-1024FC-10FC";
        let cfg = match name {
            "mnist-16c3" => mnist(name, "16C3-2P-10FC", 2000),
            "mnist-36c3" => mnist(name, "36C3-2P-10FC", 10_000),
            "mnist-36c3-128fc" => mnist(name, "36C3-2P-128FC-10FC", 10_000),
            "cifar-restocnet1" => cifar(name, "36C3-2P-1024FC-10FC", 1),
            "cifar-restocnet2" => {
                let mut c = cifar(name, "36C3-36C3-2P-1024FC-10FC", 2);
                c.layers[1].residual = vec![input];
                c
            }
            "cifar-restocnet3" | "cifar-restocnet3a" | "cifar-restocnet3b" => {
                let mut c = cifar(name, deep, 3);
                c.layers[1].residual = vec![input];
                if name != "cifar-restocnet3a" {
                    c.layers[2].residual = vec![
                        ResidualSource { from: 0, invert: true },
                        ResidualSource { from: 1, invert: true },
                    ];
                }
                if name != "cifar-restocnet3" {
                    c.features = Some(vec![3]);
                }
                c
            }
            "fcsnn-mnist" => {
                let mut c = mnist(name, "16C3-2P-10FC", 2000);
                c.fcsnn = Some(FcsnnConfig::default());
                c
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}` (known: {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.network_topology()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = read_file(path.as_ref())?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Config(format!("{} is not UTF-8", path.as_ref().display())))?;
        Self::from_toml_str(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_file(path.as_ref(), self.to_toml_string()?.as_bytes())
    }

    pub fn topology_spec(&self) -> Result<TopologySpec> {
        let spec = parse_topology(&self.topology)?;
        if spec.classes != CLASSES {
            return Err(Error::Topology {
                input: self.topology.clone(),
                reason: format!("output layer must have {CLASSES} units"),
            });
        }
        if spec.conv.len() != self.layers.len() {
            return Err(Error::Config(format!(
                "topology has {} convolutional layers but {} [[layers]] tables",
                spec.conv.len(),
                self.layers.len()
            )));
        }
        Ok(spec)
    }

    pub fn network_topology(&self) -> Result<NetworkTopology> {
        let spec = self.topology_spec()?;
        let mut sim = self.sim.clone();
        sim.pool_size = spec.pool;
        let topo = NetworkTopology {
            input: self.dataset.input_shape(),
            layers: spec
                .conv
                .iter()
                .zip(&self.layers)
                .map(|(&(maps, k), l)| ConvLayerSpec {
                    maps,
                    k,
                    residual: l.residual.clone(),
                    params: LayerParams {
                        exc_window: l.exc_window,
                        inh_window: l.inh_window,
                        beta: l.beta,
                        alpha: l.alpha,
                        stdp_rate_hz: l.stdp_rate_hz,
                    },
                })
                .collect(),
            features: self.features.clone().unwrap_or_else(|| (1..=spec.conv.len()).collect()),
            sim,
        };
        topo.validate()?;
        Ok(topo)
    }

    pub fn classifier_config(&self) -> Result<ClassifierConfig> {
        Ok(ClassifierConfig {
            hidden: self.topology_spec()?.hidden,
            epochs: self.classifier.epochs,
            batch_size: self.classifier.batch_size,
            dropout: self.classifier.dropout,
            adam: self.classifier.adam,
        })
    }
}
