//! Leaky integrate-and-fire maps, leakless pooling neurons and threshold
//! adaptation.

/// Per-step multiplicative decay `exp(-dt/tau)`.
pub fn decay_factor(dt_ms: f64, tau_ms: f64) -> f64 {
    (-dt_ms / tau_ms).exp()
}

/// Membrane state of a stack of LIF maps sharing one threshold per map.
#[derive(Clone, Debug)]
pub struct LifLayer {
    pub v: Vec<f64>,
    map_size: usize,
    decay: f64,
}

impl LifLayer {
    pub fn new(maps: usize, map_size: usize, tau_mem_ms: f64, dt_ms: f64) -> Self {
        LifLayer {
            v: vec![0.0; maps * map_size],
            map_size,
            decay: decay_factor(dt_ms, tau_mem_ms),
        }
    }

    pub fn maps(&self) -> usize {
        if self.map_size == 0 {
            0
        } else {
            self.v.len() / self.map_size
        }
    }

    pub fn map_size(&self) -> usize {
        self.map_size
    }

    pub fn reset(&mut self) {
        self.v.fill(0.0);
    }

    /// `V <- V·decay + I`; neurons with `V > threshold` spike and reset to 0.
    /// Maps with `active[j] == false` stay silent at zero potential. Returns
    /// the number of spikes.
    pub fn step(
        &mut self,
        current: &[f64],
        thresholds: &[f32],
        active: Option<&[bool]>,
        spikes: &mut [bool],
    ) -> usize {
        let mut count = 0;
        for (j, &theta) in thresholds.iter().enumerate() {
            let range = j * self.map_size..(j + 1) * self.map_size;
            if active.is_some_and(|a| !a[j]) {
                self.v[range.clone()].fill(0.0);
                spikes[range].fill(false);
                continue;
            }
            let theta = f64::from(theta);
            for n in range {
                let v = self.v[n] * self.decay + current[n];
                if v > theta {
                    self.v[n] = 0.0;
                    spikes[n] = true;
                    count += 1;
                } else {
                    self.v[n] = v;
                    spikes[n] = false;
                }
            }
        }
        count
    }
}

/// Leakless integrate-and-fire neurons behind average pooling.
#[derive(Clone, Debug)]
pub struct IfPool {
    pub v: Vec<f64>,
    pub theta: f64,
}

impl IfPool {
    pub fn new(len: usize, theta: f64) -> Self {
        IfPool {
            v: vec![0.0; len],
            theta,
        }
    }

    pub fn reset(&mut self) {
        self.v.fill(0.0);
    }

    pub fn step(&mut self, input: &[f64], spikes: &mut [bool]) {
        for ((v, &x), s) in self.v.iter_mut().zip(input).zip(spikes.iter_mut()) {
            *v += x;
            *s = *v > self.theta;
            if *s {
                *v = 0.0;
            }
        }
    }
}

/// Homeostatic threshold growth after one training iteration.
pub fn adapt_threshold(threshold: f64, spike_count: u64, map_size: usize, beta: f64) -> f64 {
    threshold + beta * spike_count as f64 / map_size as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_decay_matches_closed_form() {
        let mut l = LifLayer::new(1, 1, 9.5, 1.0);
        l.v[0] = 1.0;
        let mut s = [false];
        l.step(&[0.0], &[1.0], None, &mut s);
        assert!((l.v[0] - (-1.0f64 / 9.5).exp()).abs() < 1e-12);
        assert!((l.v[0] - 0.90009).abs() < 1e-5);
        assert!(!s[0]);
    }

    #[test]
    fn crossing_spikes_and_resets() {
        let mut l = LifLayer::new(2, 1, 9.5, 1.0);
        let mut s = [false; 2];
        assert_eq!(l.step(&[0.5, 0.5], &[0.4, 0.6], None, &mut s), 1);
        assert_eq!(s, [true, false]);
        assert_eq!(l.v, vec![0.0, 0.5]);
    }

    #[test]
    fn strict_threshold_and_zero_bootstrap() {
        let mut l = LifLayer::new(1, 1, 9.5, 1.0);
        let mut s = [false];
        l.step(&[0.0], &[0.0], None, &mut s);
        assert!(!s[0]);
        l.step(&[1e-9], &[0.0], None, &mut s);
        assert!(s[0]);
    }

    #[test]
    fn constant_input_converges_to_fixed_point() {
        let (dt, tau, i) = (1.0, 9.5, 0.3);
        let mut l = LifLayer::new(1, 1, tau, dt);
        let mut s = [false];
        for _ in 0..2000 {
            l.step(&[i], &[f32::INFINITY], None, &mut s);
        }
        let fixed = i / (1.0 - (-dt / tau).exp());
        assert!((l.v[0] - fixed).abs() < 1e-9);
    }

    #[test]
    fn dropped_maps_never_spike() {
        let mut l = LifLayer::new(2, 2, 9.5, 1.0);
        let mut s = [false; 4];
        let n = l.step(&[5.0; 4], &[0.0, 0.0], Some(&[false, true]), &mut s);
        assert_eq!(n, 2);
        assert_eq!(s, [false, false, true, true]);
    }

    #[test]
    fn zero_input_decay_is_exact_per_step() {
        let mut l = LifLayer::new(1, 3, 9.5, 1.0);
        l.v = vec![0.7, -0.2, 0.1];
        let f = decay_factor(1.0, 9.5);
        let mut s = [false; 3];
        for _ in 0..20 {
            let before = l.v.clone();
            l.step(&[0.0; 3], &[10.0], None, &mut s);
            for (a, b) in l.v.iter().zip(before) {
                assert_eq!(*a, b * f);
            }
        }
    }

    #[test]
    fn pooling_neuron() {
        let mut p = IfPool::new(1, 0.8);
        let mut s = [false];
        p.step(&[1.0], &mut s);
        assert!(s[0]);
        let mut fired = Vec::new();
        for _ in 0..6 {
            p.step(&[0.5], &mut s);
            fired.push(s[0]);
        }
        assert_eq!(fired, [false, true, false, true, false, true]);
        let mut q = IfPool::new(1, 0.8);
        for _ in 0..100 {
            q.step(&[0.0], &mut s);
            assert!(!s[0]);
        }
    }

    #[test]
    fn threshold_adaptation() {
        assert_eq!(adapt_threshold(0.3, 0, 900, 6e-4), 0.3);
        assert!((adapt_threshold(0.0, 900, 900, 6e-4) - 6e-4).abs() < 1e-15);
        assert!((adapt_threshold(0.0, 200, 900, 6e-4) - 1.3333333e-4).abs() < 1e-10);
    }
}
