use proptest::prelude::*;

use restocnet::convnet::{residual_combine, MapShape};
use restocnet::encoding::{poisson_encode, EncoderConfig, Polarity};
use restocnet::neurons::adapt_threshold;
use restocnet::plasticity::{
    apply_patch_updates, classify_excitatory, mirror_for_inhibitory, stochastic_switch, Layout, PrePolarity,
    StdpWindow, SwitchDecision, TracePatch, Update,
};
use restocnet::kernel::{KernelBank, KernelShape};
use restocnet::{Key, Phase};

fn layout() -> impl Strategy<Value = Layout> {
    prop_oneof![Just(Layout::Hb), Just(Layout::Hb2), Just(Layout::Hb3)]
}

fn window() -> impl Strategy<Value = StdpWindow> {
    (layout(), 0.01f64..1.0, 0.0f64..1.0, 0.0f64..1.0, 0.0f64..1.0).prop_map(|(layout, pot, frac, pp, pd)| {
        StdpWindow {
            layout,
            pre_hebb_pot: pot,
            pre_antihebb_dep: pot * frac * 0.99,
            post_hebb_dep: 0.8,
            p_hebb_pot: pp,
            p_antihebb_dep: pd,
            p_hebb_dep: 0.0,
        }
    })
}

proptest! {
    #[test]
    fn dead_zone_never_switches(
        pot in 0.02f64..1.0,
        frac in 0.0f64..0.9,
        pos in 0.001f64..0.999,
        u in 0.0f64..1.0,
        high in any::<bool>(),
    ) {
        let w = StdpWindow {
            layout: Layout::Hb,
            pre_hebb_pot: pot,
            pre_antihebb_dep: pot * frac,
            post_hebb_dep: 1.0,
            p_hebb_pot: 1.0,
            p_antihebb_dep: 1.0,
            p_hebb_dep: 0.0,
        };
        let t = w.pre_antihebb_dep + pos * (w.pre_hebb_pot - w.pre_antihebb_dep);
        prop_assume!(t > w.pre_antihebb_dep && t < w.pre_hebb_pot);
        for pol in [PrePolarity::Excitatory, PrePolarity::Inhibitory] {
            prop_assert_eq!(stochastic_switch(high, Update::positive_window(t, &w, pol), u), high);
        }
    }

    #[test]
    fn inhibitory_mirrors_excitatory(w in window(), t in 0.0f64..=1.0, u in 0.0f64..1.0, high in any::<bool>()) {
        let e = Update::positive_window(t, &w, PrePolarity::Excitatory);
        let i = Update::positive_window(t, &w, PrePolarity::Inhibitory);
        prop_assert_eq!(i.decision, mirror_for_inhibitory(e.decision));
        prop_assert_eq!(i.probability, e.probability);
        // a potentiating excitatory event depresses an inhibitory synapse and vice versa
        let e_next = stochastic_switch(high, e, u);
        let i_next = stochastic_switch(!high, i, u);
        prop_assert_eq!(e_next, !i_next);
    }

    #[test]
    fn zero_trace_is_inert(w in window()) {
        prop_assert_eq!(classify_excitatory(0.0, &w), SwitchDecision::NoUpdate);
    }

    #[test]
    fn thresholds_never_decrease(theta in 0.0f64..10.0, count in 0u64..1_000_000, size in 1usize..2000, beta in 0.0f64..0.01) {
        prop_assert!(adapt_threshold(theta, count, size, beta) >= theta);
    }

    #[test]
    fn residual_sum_is_clamped(
        direct in proptest::collection::vec(-1i8..=1, 2 * 4 * 4),
        res in proptest::collection::vec(-1i8..=1, 3 * 6 * 6),
        invert in any::<bool>(),
    ) {
        let mut out = vec![0i8; direct.len()];
        residual_combine(&direct, MapShape::new(2, 4, 4), &[(&res, MapShape::new(3, 6, 6), invert)], &mut out).unwrap();
        prop_assert!(out.iter().all(|v| (-1..=1).contains(v)));
        for (n, (&d, &o)) in direct.iter().zip(&out).enumerate() {
            let (j, y, x) = (n / 16, (n / 4) % 4, n % 4);
            let r = res[(j % 3) * 36 + (y + 1) * 6 + x + 1] * if invert { -1 } else { 1 };
            prop_assert_eq!(o, (d + r).signum());
        }
    }

    #[test]
    fn encoded_spikes_follow_pixel_sign(
        pixels in proptest::collection::vec(-3.0f64..3.0, 1..40),
        seed in any::<u64>(),
    ) {
        let cfg = EncoderConfig { max_rate_hz: 500.0, dt_ms: 1.0, steps: 20, polarity: Polarity::Signed };
        let batch = poisson_encode(&pixels, pixels.len(), 0, &cfg, Key::new(seed, Phase::EncodeStdp));
        for t in 0..cfg.steps {
            for (n, &p) in pixels.iter().enumerate() {
                let s = batch.get(t, 0, n);
                prop_assert!(s == 0 || (s > 0) == (p > 0.0));
            }
        }
    }

    #[test]
    fn kernel_updates_keep_bank_binary(
        exc in proptest::collection::vec(0.0f64..=1.0, 18),
        inh in proptest::collection::vec(0.0f64..=1.0, 18),
        seed in any::<u64>(),
    ) {
        let shape = KernelShape { out_maps: 2, in_maps: 1, k: 3 };
        let mut bank = KernelBank::all_low(shape, -1.0, 1.0);
        let w = StdpWindow {
            layout: Layout::Hb,
            pre_hebb_pot: 0.05,
            pre_antihebb_dep: 0.005,
            post_hebb_dep: 1.0,
            p_hebb_pot: 0.5,
            p_antihebb_dep: 0.5,
            p_hebb_dep: 0.0,
        };
        let patches = vec![
            Some(TracePatch { exc: exc[..9].to_vec(), inh: inh[..9].to_vec() }),
            Some(TracePatch { exc: exc[9..].to_vec(), inh: inh[9..].to_vec() }),
        ];
        apply_patch_updates(&mut bank, &patches, &w, &w, Key::new(seed, Phase::StdpSwitch)).unwrap();
        prop_assert!(bank.weights().iter().all(|&v| v == -1.0 || v == 1.0));
    }
}
