//! Spike traces, hybrid STDP windows and stochastic binary switching.
//!
//! Timing differences are never stored explicitly. At a post-spike, the
//! pre-trace `t = exp(-Δt/τ_pre)` of each afferent is sampled: a large trace
//! means the pre-spike was recent (Hebbian potentiation), a tiny but nonzero
//! trace means it was long ago (anti-Hebbian depression). A zero trace means
//! the afferent never fired.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::KernelBank;
use crate::rng::Key;

/// Arrangement of the positive timing window.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Potentiation and anti-Hebbian depression separated by a dead zone.
    Hb,
    /// Dead zone absorbed into the potentiation window.
    Hb2,
    /// Dead zone absorbed into the depression window.
    Hb3,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PrePolarity {
    Excitatory,
    Inhibitory,
}

/// Trace thresholds and switching probabilities of one timing window. For
/// inhibitory afferents the same fields describe the mirrored window: the
/// near-coincidence region depresses with `p_hebb_pot`, the far region
/// potentiates with `p_antihebb_dep`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StdpWindow {
    pub layout: Layout,
    pub pre_hebb_pot: f64,
    pub pre_antihebb_dep: f64,
    pub post_hebb_dep: f64,
    pub p_hebb_pot: f64,
    pub p_antihebb_dep: f64,
    pub p_hebb_dep: f64,
}

impl StdpWindow {
    pub fn validate(&self) -> Result<()> {
        let probs = [self.p_hebb_pot, self.p_antihebb_dep, self.p_hebb_dep];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Config(format!("switch probabilities must lie in [0, 1]: {probs:?}")));
        }
        for t in [self.pre_hebb_pot, self.pre_antihebb_dep, self.post_hebb_dep] {
            if !(t > 0.0 && t <= 1.0) {
                return Err(Error::Config(format!("trace threshold {t} outside (0, 1]")));
            }
        }
        if self.layout == Layout::Hb && self.pre_antihebb_dep >= self.pre_hebb_pot {
            return Err(Error::Config(
                "anti-Hebbian threshold must lie below the potentiation threshold".into(),
            ));
        }
        Ok(())
    }

    /// Switch probability attached to an excitatory-frame decision.
    pub fn probability(&self, decision: SwitchDecision) -> f64 {
        match decision {
            SwitchDecision::HebbPotentiate => self.p_hebb_pot,
            SwitchDecision::AntiHebbDepress => self.p_antihebb_dep,
            SwitchDecision::HebbDepress => self.p_hebb_dep,
            SwitchDecision::AntiHebbPotentiate | SwitchDecision::NoUpdate => 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SwitchDecision {
    HebbPotentiate,
    AntiHebbDepress,
    HebbDepress,
    AntiHebbPotentiate,
    NoUpdate,
}

impl SwitchDecision {
    pub fn potentiates(self) -> bool {
        matches!(self, SwitchDecision::HebbPotentiate | SwitchDecision::AntiHebbPotentiate)
    }

    pub fn depresses(self) -> bool {
        matches!(self, SwitchDecision::AntiHebbDepress | SwitchDecision::HebbDepress)
    }
}

/// Classifies a pre-trace sampled at a post-spike.
pub fn classify_excitatory(t: f64, w: &StdpWindow) -> SwitchDecision {
    if t <= 0.0 {
        return SwitchDecision::NoUpdate;
    }
    match w.layout {
        Layout::Hb => {
            if t >= w.pre_hebb_pot {
                SwitchDecision::HebbPotentiate
            } else if t <= w.pre_antihebb_dep {
                SwitchDecision::AntiHebbDepress
            } else {
                SwitchDecision::NoUpdate
            }
        }
        Layout::Hb2 => {
            if t > w.pre_antihebb_dep {
                SwitchDecision::HebbPotentiate
            } else {
                SwitchDecision::AntiHebbDepress
            }
        }
        Layout::Hb3 => {
            if t >= w.pre_hebb_pot {
                SwitchDecision::HebbPotentiate
            } else {
                SwitchDecision::AntiHebbDepress
            }
        }
    }
}

/// Classifies a post-trace sampled at a pre-spike (pre follows post).
pub fn classify_negative_window(t: f64, w: &StdpWindow) -> SwitchDecision {
    if w.p_hebb_dep > 0.0 && t > 0.0 && t >= w.post_hebb_dep {
        SwitchDecision::HebbDepress
    } else {
        SwitchDecision::NoUpdate
    }
}

/// Swaps potentiation and depression for inhibitory afferents.
pub fn mirror_for_inhibitory(d: SwitchDecision) -> SwitchDecision {
    match d {
        SwitchDecision::HebbPotentiate => SwitchDecision::HebbDepress,
        SwitchDecision::HebbDepress => SwitchDecision::HebbPotentiate,
        SwitchDecision::AntiHebbDepress => SwitchDecision::AntiHebbPotentiate,
        SwitchDecision::AntiHebbPotentiate => SwitchDecision::AntiHebbDepress,
        SwitchDecision::NoUpdate => SwitchDecision::NoUpdate,
    }
}

/// A classified event with its switching probability.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Update {
    pub decision: SwitchDecision,
    pub probability: f64,
}

impl Update {
    pub const NONE: Update = Update {
        decision: SwitchDecision::NoUpdate,
        probability: 0.0,
    };

    pub fn positive_window(t: f64, w: &StdpWindow, polarity: PrePolarity) -> Update {
        Self::framed(classify_excitatory(t, w), w, polarity)
    }

    pub fn negative_window(t: f64, w: &StdpWindow, polarity: PrePolarity) -> Update {
        Self::framed(classify_negative_window(t, w), w, polarity)
    }

    fn framed(d: SwitchDecision, w: &StdpWindow, polarity: PrePolarity) -> Update {
        let probability = w.probability(d);
        let decision = match polarity {
            PrePolarity::Excitatory => d,
            PrePolarity::Inhibitory => mirror_for_inhibitory(d),
        };
        Update {
            decision,
            probability,
        }
    }
}

/// New state of a binary weight (`true` = high) given a uniform draw `u`.
#[inline]
pub fn stochastic_switch(high: bool, update: Update, u: f64) -> bool {
    if update.decision.potentiates() && !high && u < update.probability {
        true
    } else if update.decision.depresses() && high && u < update.probability {
        false
    } else {
        high
    }
}

/// Exponentially decaying traces reset to 1 at each spike of their owner.
#[derive(Clone, Debug)]
pub struct Traces {
    pub values: Vec<f64>,
    decay: f64,
}

impl Traces {
    pub fn new(len: usize, tau_ms: f64, dt_ms: f64) -> Self {
        Traces {
            values: vec![0.0; len],
            decay: (-dt_ms / tau_ms).exp(),
        }
    }

    pub fn reset(&mut self) {
        self.values.fill(0.0);
    }

    pub fn decay(&mut self) {
        for v in &mut self.values {
            *v *= self.decay;
        }
    }

    pub fn step(&mut self, spiked: impl Fn(usize) -> bool) {
        for (n, v) in self.values.iter_mut().enumerate() {
            *v = if spiked(n) { 1.0 } else { *v * self.decay };
        }
    }
}

/// Per-map activity mask for one training iteration; `true` keeps the map.
pub fn draw_map_dropout(maps: usize, p_drop: f64, key: Key) -> Vec<bool> {
    (0..maps).map(|j| !key.with(j as u64).bernoulli(p_drop)).collect()
}

/// Pre-traces and post-spikes of a whole mini-batch at one time step.
///
/// `exc` and `inh` hold `batch × in_maps × height × width` traces, one plane
/// per afferent sign. `post` holds `batch × out_maps × (height-k+1) ×
/// (width-k+1)` spike flags.
#[derive(Clone, Copy, Debug)]
pub struct BatchTraces<'a> {
    pub batch: usize,
    pub in_maps: usize,
    pub height: usize,
    pub width: usize,
    pub exc: &'a [f64],
    pub inh: &'a [f64],
    pub post: &'a [bool],
}

/// Averaged `in_maps × k × k` trace patches under one output map.
#[derive(Clone, Debug, PartialEq)]
pub struct TracePatch {
    pub exc: Vec<f64>,
    pub inh: Vec<f64>,
}

/// Averages pre-trace patches under spiking post-neurons on the stride grid.
///
/// For each output map, patches are first averaged over the qualifying spikes
/// of each batch element (row-major order), then over the batch elements that
/// had at least one qualifying spike. Maps with no such spike, and dropped
/// maps, yield `None`.
pub fn average_trace_patches(
    view: &BatchTraces,
    out_maps: usize,
    k: usize,
    stride: usize,
    active: &[bool],
) -> Result<Vec<Option<TracePatch>>> {
    let BatchTraces {
        batch,
        in_maps,
        height,
        width,
        ..
    } = *view;
    if height < k || width < k || stride == 0 {
        return Err(Error::Shape(format!(
            "{height}x{width} input with kernel {k} and stride {stride}"
        )));
    }
    let (ho, wo) = (height - k + 1, width - k + 1);
    let plane = height * width;
    let in_len = in_maps * plane;
    let out_len = out_maps * ho * wo;
    if view.exc.len() != batch * in_len
        || view.inh.len() != batch * in_len
        || view.post.len() != batch * out_len
        || active.len() != out_maps
    {
        return Err(Error::Shape(format!(
            "trace/spike buffers do not match batch {batch}, {in_maps} in maps, {out_maps} out maps"
        )));
    }
    let patch_len = in_maps * k * k;
    Ok((0..out_maps)
        .into_par_iter()
        .map(|j| {
            if !active[j] {
                return None;
            }
            let mut exc_sum = vec![0.0; patch_len];
            let mut inh_sum = vec![0.0; patch_len];
            let mut map_exc = vec![0.0; patch_len];
            let mut map_inh = vec![0.0; patch_len];
            let mut contributing = 0usize;
            for b in 0..batch {
                let post = &view.post[b * out_len + j * ho * wo..][..ho * wo];
                let exc = &view.exc[b * in_len..][..in_len];
                let inh = &view.inh[b * in_len..][..in_len];
                map_exc.fill(0.0);
                map_inh.fill(0.0);
                let mut n = 0usize;
                for r in (0..ho).step_by(stride) {
                    for c in (0..wo).step_by(stride) {
                        if !post[r * wo + c] {
                            continue;
                        }
                        n += 1;
                        for i in 0..in_maps {
                            for dr in 0..k {
                                let src = i * plane + (r + dr) * width + c;
                                let dst = (i * k + dr) * k;
                                for dc in 0..k {
                                    map_exc[dst + dc] += exc[src + dc];
                                    map_inh[dst + dc] += inh[src + dc];
                                }
                            }
                        }
                    }
                }
                if n == 0 {
                    continue;
                }
                contributing += 1;
                let n = n as f64;
                for p in 0..patch_len {
                    exc_sum[p] += map_exc[p] / n;
                    inh_sum[p] += map_inh[p] / n;
                }
            }
            if contributing == 0 {
                return None;
            }
            let m = contributing as f64;
            for p in 0..patch_len {
                exc_sum[p] /= m;
                inh_sum[p] /= m;
            }
            Some(TracePatch {
                exc: exc_sum,
                inh: inh_sum,
            })
        })
        .collect())
}

/// Applies averaged trace patches to a binary kernel bank. Each weight takes
/// an excitatory draw then an inhibitory draw, keyed by
/// `key.with(weight index).with(polarity)`.
pub fn apply_patch_updates(
    bank: &mut KernelBank,
    patches: &[Option<TracePatch>],
    exc_window: &StdpWindow,
    inh_window: &StdpWindow,
    key: Key,
) -> Result<usize> {
    let shape = bank.shape;
    let per_map = shape.in_maps * shape.k * shape.k;
    if patches.len() != shape.out_maps {
        return Err(Error::Shape(format!(
            "{} patches for {} output maps",
            patches.len(),
            shape.out_maps
        )));
    }
    let changes: usize = bank
        .high
        .par_chunks_mut(per_map)
        .zip(patches.par_iter())
        .enumerate()
        .map(|(j, (weights, patch))| {
            let Some(patch) = patch else { return 0 };
            let mut changed = 0;
            for (p, high) in weights.iter_mut().enumerate() {
                let wkey = key.with((j * per_map + p) as u64);
                let before = *high;
                let e = Update::positive_window(patch.exc[p], exc_window, PrePolarity::Excitatory);
                if e.decision != SwitchDecision::NoUpdate {
                    *high = stochastic_switch(*high, e, wkey.with(0).uniform());
                }
                let i = Update::positive_window(patch.inh[p], inh_window, PrePolarity::Inhibitory);
                if i.decision != SwitchDecision::NoUpdate {
                    *high = stochastic_switch(*high, i, wkey.with(1).uniform());
                }
                changed += (before != *high) as usize;
            }
            changed
        })
        .sum();
    Ok(changes)
}

/// One mini-batch STDP step: trace averaging followed by stochastic switching.
/// Returns the number of weights that changed state.
#[allow(clippy::too_many_arguments)]
pub fn minibatch_stdp_update(
    bank: &mut KernelBank,
    view: &BatchTraces,
    stride: usize,
    active: &[bool],
    exc_window: &StdpWindow,
    inh_window: &StdpWindow,
    key: Key,
) -> Result<usize> {
    if view.in_maps != bank.shape.in_maps {
        return Err(Error::Shape(format!(
            "kernel expects {} input maps, traces carry {}",
            bank.shape.in_maps, view.in_maps
        )));
    }
    let patches = average_trace_patches(view, bank.shape.out_maps, bank.shape.k, stride, active)?;
    apply_patch_updates(bank, &patches, exc_window, inh_window, key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelShape;
    use crate::rng::Phase;

    fn conv_window() -> StdpWindow {
        StdpWindow {
            layout: Layout::Hb,
            pre_hebb_pot: 0.05,
            pre_antihebb_dep: 0.005,
            post_hebb_dep: 0.8,
            p_hebb_pot: 0.01,
            p_antihebb_dep: 0.01,
            p_hebb_dep: 0.0,
        }
    }

    #[test]
    fn trace_step_and_decay() {
        let mut tr = Traces::new(2, 1.45, 1.0);
        tr.step(|n| n == 0);
        assert_eq!(tr.values, vec![1.0, 0.0]);
        tr.step(|_| false);
        assert!((tr.values[0] - (-1.0f64 / 1.45).exp()).abs() < 1e-12);
        assert!((tr.values[0] - 0.50175).abs() < 1e-5);
        assert_eq!(tr.values[1], 0.0);
    }

    #[test]
    fn excitatory_classification() {
        let w = conv_window();
        assert_eq!(classify_excitatory(0.06, &w), SwitchDecision::HebbPotentiate);
        assert_eq!(classify_excitatory(0.05, &w), SwitchDecision::HebbPotentiate);
        assert_eq!(classify_excitatory(0.004, &w), SwitchDecision::AntiHebbDepress);
        assert_eq!(classify_excitatory(0.005, &w), SwitchDecision::AntiHebbDepress);
        assert_eq!(classify_excitatory(0.02, &w), SwitchDecision::NoUpdate);
        assert_eq!(classify_excitatory(0.0, &w), SwitchDecision::NoUpdate);
    }

    #[test]
    fn ablation_layouts_have_no_dead_zone() {
        let mut w = conv_window();
        w.layout = Layout::Hb2;
        assert_eq!(classify_excitatory(0.02, &w), SwitchDecision::HebbPotentiate);
        assert_eq!(classify_excitatory(0.005, &w), SwitchDecision::AntiHebbDepress);
        w.layout = Layout::Hb3;
        assert_eq!(classify_excitatory(0.02, &w), SwitchDecision::AntiHebbDepress);
        assert_eq!(classify_excitatory(0.05, &w), SwitchDecision::HebbPotentiate);
        assert_eq!(classify_excitatory(0.0, &w), SwitchDecision::NoUpdate);
    }

    #[test]
    fn negative_window() {
        let w = StdpWindow {
            post_hebb_dep: 0.8,
            p_hebb_dep: 0.005,
            ..conv_window()
        };
        assert_eq!(classify_negative_window(0.85, &w), SwitchDecision::HebbDepress);
        assert_eq!(classify_negative_window(0.5, &w), SwitchDecision::NoUpdate);
        assert_eq!(
            classify_negative_window(0.99, &conv_window()),
            SwitchDecision::NoUpdate
        );
    }

    #[test]
    fn inhibitory_mirror() {
        let w = conv_window();
        let near = Update::positive_window(0.9, &w, PrePolarity::Inhibitory);
        assert!(near.decision.depresses());
        let far = Update::positive_window(0.001, &w, PrePolarity::Inhibitory);
        assert!(far.decision.potentiates());
        assert_eq!(mirror_for_inhibitory(SwitchDecision::NoUpdate), SwitchDecision::NoUpdate);
        for d in [
            SwitchDecision::HebbPotentiate,
            SwitchDecision::AntiHebbDepress,
            SwitchDecision::HebbDepress,
            SwitchDecision::AntiHebbPotentiate,
        ] {
            assert_eq!(mirror_for_inhibitory(mirror_for_inhibitory(d)), d);
        }
    }

    #[test]
    fn switching_rules() {
        let pot = Update {
            decision: SwitchDecision::HebbPotentiate,
            probability: 0.3,
        };
        assert!(stochastic_switch(true, pot, 0.99));
        assert!(stochastic_switch(false, pot, 0.1));
        assert!(!stochastic_switch(false, pot, 0.5));
        let dep = Update {
            decision: SwitchDecision::AntiHebbDepress,
            probability: 1.0,
        };
        assert!(!stochastic_switch(true, dep, 0.999));
        assert!(!stochastic_switch(false, dep, 0.0));
    }

    #[test]
    fn dropout_fraction() {
        let key = Key::new(2, Phase::MapDropout);
        assert!(draw_map_dropout(100, 0.0, key).iter().all(|&a| a));
        let n = 10_000;
        let dropped = draw_map_dropout(n, 0.5, key).iter().filter(|&&a| !a).count();
        let sd = (n as f64 * 0.25).sqrt();
        assert!((dropped as f64 - 5000.0).abs() < 3.0 * sd);
    }

    fn bank(out_maps: usize, in_maps: usize, k: usize) -> KernelBank {
        KernelBank::all_low(
            KernelShape {
                out_maps,
                in_maps,
                k,
            },
            -1.0,
            1.0,
        )
    }

    #[test]
    fn no_post_spikes_leaves_kernels() {
        let mut b = bank(2, 1, 2);
        let exc = vec![1.0; 9];
        let view = BatchTraces {
            batch: 1,
            in_maps: 1,
            height: 3,
            width: 3,
            exc: &exc,
            inh: &[0.0; 9],
            post: &[false; 8],
        };
        let before = b.clone();
        let n = minibatch_stdp_update(
            &mut b,
            &view,
            1,
            &[true, true],
            &conv_window(),
            &conv_window(),
            Key::new(0, Phase::StdpSwitch),
        )
        .unwrap();
        assert_eq!(n, 0);
        assert_eq!(b, before);
    }

    #[test]
    fn single_spike_patch_is_raw_traces() {
        let exc: Vec<f64> = (0..16).map(|v| v as f64 / 16.0).collect();
        let mut post = vec![false; 9];
        post[4] = true; // (1, 1)
        let view = BatchTraces {
            batch: 1,
            in_maps: 1,
            height: 4,
            width: 4,
            exc: &exc,
            inh: &[0.0; 16],
            post: &post,
        };
        let p = average_trace_patches(&view, 1, 2, 1, &[true]).unwrap();
        let patch = p[0].as_ref().unwrap();
        assert_eq!(patch.exc, vec![exc[5], exc[6], exc[9], exc[10]]);
    }

    #[test]
    fn off_grid_spikes_are_ignored() {
        let mut post = vec![false; 9];
        post[4] = true;
        let view = BatchTraces {
            batch: 1,
            in_maps: 1,
            height: 4,
            width: 4,
            exc: &[0.5; 16],
            inh: &[0.0; 16],
            post: &post,
        };
        assert_eq!(average_trace_patches(&view, 1, 2, 2, &[true]).unwrap(), vec![None]);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let view = BatchTraces {
            batch: 1,
            in_maps: 1,
            height: 4,
            width: 4,
            exc: &[0.5; 15],
            inh: &[0.0; 16],
            post: &[false; 9],
        };
        assert!(average_trace_patches(&view, 1, 2, 1, &[true]).is_err());
    }

    #[test]
    fn certain_potentiation_sets_every_weight_high() {
        let mut w = conv_window();
        w.p_hebb_pot = 1.0;
        let mut b = bank(1, 1, 2);
        let view = BatchTraces {
            batch: 1,
            in_maps: 1,
            height: 2,
            width: 2,
            exc: &[1.0; 4],
            inh: &[0.0; 4],
            post: &[true],
        };
        let n = minibatch_stdp_update(&mut b, &view, 1, &[true], &w, &w, Key::new(0, Phase::StdpSwitch))
            .unwrap();
        assert_eq!(n, 4);
        assert!(b.high.iter().all(|&h| h));
    }
}
