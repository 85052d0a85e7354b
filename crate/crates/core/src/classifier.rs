//! Fully-connected readout trained on spiking activations: optional ReLU
//! hidden layers, softmax output, cross-entropy loss and Adam.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data_io::activations::ActivationSet;
use crate::error::{Error, Result};
use crate::rng::{Key, Phase};

pub const CLASSES: usize = 10;

/// Affine layer `y = x·W + b` on row-major batches.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `inputs × outputs`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    /// Uniform init in `±sqrt(6 / (inputs + outputs))`, zero bias.
    pub fn init(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        Dense {
            weights: DMatrix::from_fn(inputs, outputs, |_, _| rng.gen_range(-limit..limit)),
            bias: DVector::zeros(outputs),
        }
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Dense {
            weights: DMatrix::zeros(inputs, outputs),
            bias: DVector::zeros(outputs),
        }
    }

    pub fn inputs(&self) -> usize {
        self.weights.nrows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.ncols()
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut y = x * &self.weights;
        for mut row in y.row_iter_mut() {
            row += self.bias.transpose();
        }
        y
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Dense>,
    /// Drop probability applied to hidden activations during training.
    pub dropout: f64,
}

/// Intermediate values of one forward pass, needed by [`MlpModel::backward`].
#[derive(Clone, Debug)]
pub struct ForwardCache {
    /// Input of every layer; `inputs[0]` is the batch itself.
    pub inputs: Vec<DMatrix<f64>>,
    /// Inverted-dropout scale mask per hidden layer (`None` in eval mode).
    pub masks: Vec<Option<DMatrix<f64>>>,
    /// Pre-activations per hidden layer.
    pub pre: Vec<DMatrix<f64>>,
    pub probs: DMatrix<f64>,
    pub log_probs: DMatrix<f64>,
}

/// Gradients laid out like the model's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl MlpModel {
    /// `dims` lists input width, hidden widths and the output width.
    pub fn new(dims: &[usize], dropout: f64, key: Key) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!("classifier layer widths {dims:?}")));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("classifier dropout {dropout} outside [0, 1)")));
        }
        let mut rng = key.stream();
        Ok(MlpModel {
            layers: dims.windows(2).map(|w| Dense::init(w[0], w[1], &mut rng)).collect(),
            dropout,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    /// Forward pass over a `batch × input` matrix. Dropout is applied to
    /// hidden activations only when `dropout_key` is given.
    pub fn forward(&self, x: &DMatrix<f64>, dropout_key: Option<Key>) -> Result<ForwardCache> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "classifier expects {} inputs, got {}",
                self.input_dim(),
                x.ncols()
            )));
        }
        let mut rng = dropout_key.map(Key::stream);
        let keep = 1.0 - self.dropout;
        let mut inputs = vec![x.clone()];
        let mut masks = Vec::new();
        let mut pre = Vec::new();
        let last = self.layers.len() - 1;
        for (n, layer) in self.layers.iter().enumerate() {
            let z = layer.apply(inputs.last().unwrap());
            if n == last {
                let log_probs = log_softmax_rows(&z);
                let probs = log_probs.map(f64::exp);
                return Ok(ForwardCache {
                    inputs,
                    masks,
                    pre,
                    probs,
                    log_probs,
                });
            }
            let mut a = z.map(|v| v.max(0.0));
            let mask = match rng.as_mut() {
                Some(rng) if self.dropout > 0.0 => {
                    let m = DMatrix::from_fn(a.nrows(), a.ncols(), |_, _| {
                        if rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    });
                    a.component_mul_assign(&m);
                    Some(m)
                }
                _ => None,
            };
            masks.push(mask);
            pre.push(z);
            inputs.push(a);
        }
        unreachable!("model has at least one layer")
    }

    /// Gradients of the mean cross-entropy over the cached batch.
    pub fn backward(&self, cache: &ForwardCache, labels: &[u8]) -> Result<Gradients> {
        let batch = cache.probs.nrows();
        if labels.len() != batch {
            return Err(Error::Shape(format!("{} labels for a batch of {batch}", labels.len())));
        }
        let mut delta = cache.probs.clone();
        for (r, &l) in labels.iter().enumerate() {
            if l as usize >= delta.ncols() {
                return Err(Error::LabelOutOfRange {
                    index: r,
                    label: l as usize,
                });
            }
            delta[(r, l as usize)] -= 1.0;
        }
        delta /= batch as f64;
        let mut grads = Vec::with_capacity(self.layers.len());
        for n in (0..self.layers.len()).rev() {
            let input = &cache.inputs[n];
            let gw = input.transpose() * &delta;
            let gb = DVector::from_iterator(delta.ncols(), delta.column_iter().map(|c| c.sum()));
            grads.push(Dense { weights: gw, bias: gb });
            if n > 0 {
                let mut d = &delta * self.layers[n].weights.transpose();
                if let Some(mask) = &cache.masks[n - 1] {
                    d.component_mul_assign(mask);
                }
                d.zip_apply(&cache.pre[n - 1], |g, z| {
                    if z <= 0.0 {
                        *g = 0.0
                    }
                });
                delta = d;
            }
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    pub fn predict_proba(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.forward(x, None)?.probs)
    }

    /// Arg-max class per row (ties go to the lowest class).
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<usize>> {
        let p = self.forward(x, None)?.log_probs;
        Ok(p.row_iter().map(|r| argmax(r.iter().copied())).collect())
    }
}

pub fn argmax(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

pub fn log_softmax_rows(z: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = z.clone();
    for mut row in out.row_iter_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.apply(|v| *v -= lse);
    }
    out
}

/// Mean cross-entropy of cached log-probabilities.
pub fn cross_entropy(log_probs: &DMatrix<f64>, labels: &[u8]) -> f64 {
    let total: f64 = labels
        .iter()
        .enumerate()
        .map(|(r, &l)| -log_probs[(r, l as usize)])
        .sum();
    total / labels.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1.5e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Bias-corrected Adam moments for every parameter of a model.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    m: Vec<Dense>,
    v: Vec<Dense>,
}

impl AdamState {
    pub fn new(model: &MlpModel, config: AdamConfig) -> Self {
        let zeros: Vec<Dense> = model
            .layers
            .iter()
            .map(|l| Dense::zeros(l.inputs(), l.outputs()))
            .collect();
        AdamState {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients) {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        };
        for (n, layer) in model.layers.iter_mut().enumerate() {
            update(
                layer.weights.as_mut_slice(),
                grads.layers[n].weights.as_slice(),
                self.m[n].weights.as_mut_slice(),
                self.v[n].weights.as_mut_slice(),
            );
            update(
                layer.bias.as_mut_slice(),
                grads.layers[n].bias.as_slice(),
                self.m[n].bias.as_mut_slice(),
                self.v[n].bias.as_mut_slice(),
            );
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    #[serde(default)]
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub dropout: f64,
    pub adam: AdamConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
    pub test_accuracy: Option<f64>,
}

/// Rows `idx` of an activation set as a `len × cols` matrix.
pub fn batch_matrix(set: &ActivationSet, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), set.cols, |r, c| f64::from(set.values[idx[r] * set.cols + c]))
}

/// Predictions for every row of a set, evaluated in chunks.
pub fn predict_set(model: &MlpModel, set: &ActivationSet) -> Result<Vec<usize>> {
    let idx: Vec<usize> = (0..set.rows()).collect();
    let mut out = Vec::with_capacity(set.rows());
    for chunk in idx.chunks(1024) {
        out.extend(model.predict(&batch_matrix(set, chunk))?);
    }
    Ok(out)
}

fn accuracy(pred: &[usize], labels: &[u8]) -> f64 {
    let correct = pred.iter().zip(labels).filter(|(p, &l)| **p == l as usize).count();
    correct as f64 / labels.len().max(1) as f64
}

/// Trains a fresh model on `train`, reporting per-epoch metrics (test
/// accuracy when `test` is given).
pub fn train_classifier(
    train: &ActivationSet,
    test: Option<&ActivationSet>,
    cfg: &ClassifierConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochMetrics),
) -> Result<(MlpModel, Vec<EpochMetrics>)> {
    if train.rows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("classifier batch size must be positive".into()));
    }
    let mut dims = vec![train.cols];
    dims.extend(&cfg.hidden);
    dims.push(CLASSES);
    let mut model = MlpModel::new(&dims, cfg.dropout, Key::new(seed, Phase::ClassifierInit))?;
    let mut adam = AdamState::new(&model, cfg.adam);
    let shuffle_key = Key::new(seed, Phase::ClassifierShuffle);
    let dropout_key = Key::new(seed, Phase::ClassifierDropout);
    let mut order: Vec<usize> = (0..train.rows()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut shuffle_key.with(epoch as u64).stream());
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let x = batch_matrix(train, idx);
            let labels: Vec<u8> = idx.iter().map(|&i| train.labels[i]).collect();
            let cache = model.forward(&x, Some(dropout_key.with(epoch as u64).with(b as u64)))?;
            loss_sum += cross_entropy(&cache.log_probs, &labels) * idx.len() as f64;
            let grads = model.backward(&cache, &labels)?;
            adam.step(&mut model, &grads);
        }
        let train_accuracy = accuracy(&predict_set(&model, train)?, &train.labels);
        let test_accuracy = match test {
            Some(t) => Some(accuracy(&predict_set(&model, t)?, &t.labels)),
            None => None,
        };
        let m = EpochMetrics {
            epoch: epoch + 1,
            loss: loss_sum / train.rows() as f64,
            train_accuracy,
            test_accuracy,
        };
        on_epoch(&m);
        history.push(m);
    }
    Ok((model, history))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_model(dims: &[usize], seed: u64) -> MlpModel {
        MlpModel::new(dims, 0.0, Key::new(seed, Phase::ClassifierInit)).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let mut m = toy_model(&[4, 10], 0);
        m.layers[0] = Dense::zeros(4, 10);
        let p = m.predict_proba(&DMatrix::from_element(3, 4, 2.5)).unwrap();
        assert!(p.iter().all(|&v| (v - 0.1).abs() < 1e-15));
    }

    #[test]
    fn forward_matches_manual_arithmetic() {
        let m = toy_model(&[8, 5, 10], 3);
        let x = DVector::from_fn(8, |i, _| (i as f64 * 0.7).sin());
        let mut h = vec![0.0; 5];
        for (j, hj) in h.iter_mut().enumerate() {
            let mut s = m.layers[0].bias[j];
            for i in 0..8 {
                s += x[i] * m.layers[0].weights[(i, j)];
            }
            *hj = s.max(0.0);
        }
        let mut z = vec![0.0; 10];
        for (k, zk) in z.iter_mut().enumerate() {
            let mut s = m.layers[1].bias[k];
            for j in 0..5 {
                s += h[j] * m.layers[1].weights[(j, k)];
            }
            *zk = s;
        }
        let denom: f64 = z.iter().map(|v| v.exp()).sum();
        let p = m.predict_proba(&DMatrix::from_row_slice(1, 8, x.as_slice())).unwrap();
        for k in 0..10 {
            assert!((p[(0, k)] - z[k].exp() / denom).abs() < 1e-9);
        }
        assert!((p.row(0).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dropout_off_in_eval() {
        let mut m = toy_model(&[6, 7, 10], 1);
        m.dropout = 0.5;
        let x = DMatrix::from_fn(2, 6, |r, c| (r + c) as f64 * 0.1);
        let a = m.forward(&x, None).unwrap().probs;
        let b = toy_model(&[6, 7, 10], 1).forward(&x, None).unwrap().probs;
        assert_eq!(a, b);
    }

    #[test]
    fn stable_for_huge_logits() {
        let z = DMatrix::from_row_slice(1, 3, &[1000.0, -1000.0, 999.0]);
        let lp = log_softmax_rows(&z);
        assert!(lp.iter().all(|v| v.is_finite()));
        assert!((lp.map(f64::exp).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn duplicated_rows_keep_the_gradient() {
        let m = toy_model(&[5, 4, 10], 2);
        let x = DMatrix::from_fn(1, 5, |_, c| c as f64 - 2.0);
        let x2 = DMatrix::from_fn(2, 5, |_, c| c as f64 - 2.0);
        let g1 = m.backward(&m.forward(&x, None).unwrap(), &[3]).unwrap();
        let g2 = m.backward(&m.forward(&x2, None).unwrap(), &[3, 3]).unwrap();
        for (a, b) in g1.layers.iter().zip(&g2.layers) {
            assert!((&a.weights - &b.weights).amax() < 1e-15);
            assert!((&a.bias - &b.bias).amax() < 1e-15);
        }
    }

    #[test]
    fn bad_label_is_rejected() {
        let m = toy_model(&[2, 10], 0);
        let c = m.forward(&DMatrix::zeros(1, 2), None).unwrap();
        assert!(matches!(m.backward(&c, &[10]), Err(Error::LabelOutOfRange { .. })));
        assert!(m.forward(&DMatrix::zeros(1, 3), None).is_err());
    }

    #[test]
    fn adam_single_steps() {
        let mut m = toy_model(&[1, 10], 0);
        let before = m.clone();
        let zero = Gradients {
            layers: vec![Dense::zeros(1, 10)],
        };
        let mut adam = AdamState::new(&m, AdamConfig::default());
        adam.step(&mut m, &zero);
        assert_eq!(m, before);

        let mut one = Dense::zeros(1, 10);
        one.weights.fill(1.0);
        let grads = Gradients { layers: vec![one] };
        let mut adam = AdamState::new(&m, AdamConfig::default());
        adam.step(&mut m, &grads);
        let expected = before.layers[0].weights[(0, 0)] - 1.5e-3 / (1.0 + 1e-8);
        assert!((m.layers[0].weights[(0, 0)] - expected).abs() < 1e-15);
    }

    #[test]
    fn adam_matches_hand_recurrence() {
        let mut m = toy_model(&[1, 10], 0);
        let w0 = m.layers[0].weights[(0, 0)];
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = AdamState::new(&m, cfg);
        let gs = [0.5, -2.0];
        for g in gs {
            let mut d = Dense::zeros(1, 10);
            d.weights[(0, 0)] = g;
            adam.step(&mut m, &Gradients { layers: vec![d] });
        }
        let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.1);
        let (mut mm, mut vv, mut w) = (0.0, 0.0, w0);
        for (t, g) in gs.iter().enumerate() {
            mm = b1 * mm + (1.0 - b1) * g;
            vv = b2 * vv + (1.0 - b2) * g * g;
            let mh = mm / (1.0 - b1.powi(t as i32 + 1));
            let vh = vv / (1.0 - b2.powi(t as i32 + 1));
            w -= lr * mh / (vh.sqrt() + eps);
        }
        assert!((m.layers[0].weights[(0, 0)] - w).abs() < 1e-12);
    }

    #[test]
    fn adam_with_zero_rate_is_identity() {
        let mut m = toy_model(&[3, 4, 10], 9);
        let before = m.clone();
        let c = m.forward(&DMatrix::from_element(2, 3, 0.3), None).unwrap();
        let g = m.backward(&c, &[1, 7]).unwrap();
        let mut adam = AdamState::new(
            &m,
            AdamConfig {
                learning_rate: 0.0,
                ..AdamConfig::default()
            },
        );
        adam.step(&mut m, &g);
        assert_eq!(m, before);
    }

    fn separable(n: usize) -> ActivationSet {
        let key = Key::new(4, Phase::ClassifierShuffle);
        let mut values = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n {
            let class = i % 3;
            for d in 0..4 {
                let noise = key.with((i * 4 + d) as u64).uniform() * 0.2;
                values.push(if d == class { 1.0 + noise as f32 } else { noise as f32 });
            }
            labels.push(class as u8);
        }
        ActivationSet {
            seed: 0,
            cols: 4,
            values,
            labels,
        }
    }

    #[test]
    fn separable_toy_set_is_learned() {
        let set = separable(90);
        let cfg = ClassifierConfig {
            hidden: vec![],
            epochs: 60,
            batch_size: 16,
            dropout: 0.0,
            adam: AdamConfig {
                learning_rate: 0.05,
                ..AdamConfig::default()
            },
        };
        let (model, hist) = train_classifier(&set, None, &cfg, 1, |_| {}).unwrap();
        for w in hist[..5].windows(2) {
            assert!(w[1].loss <= w[0].loss);
        }
        assert_eq!(hist.last().unwrap().train_accuracy, 1.0);
        let (again, _) = train_classifier(&set, None, &cfg, 1, |_| {}).unwrap();
        assert_eq!(model, again);
    }

    #[test]
    fn empty_training_set() {
        let set = ActivationSet {
            seed: 0,
            cols: 3,
            values: vec![],
            labels: vec![],
        };
        let cfg = ClassifierConfig {
            hidden: vec![],
            epochs: 1,
            batch_size: 4,
            dropout: 0.0,
            adam: AdamConfig::default(),
        };
        assert!(matches!(
            train_classifier(&set, None, &cfg, 0, |_| {}),
            Err(Error::EmptyDataset)
        ));
    }
}
