//! Counter-based random streams.
//!
//! Every random draw in the pipeline is a pure function of a [`Key`] built
//! from the master seed, a [`Phase`] tag and the coordinates of the draw
//! (image index, neuron index, time step, ...). Nothing depends on the order
//! in which draws are made, so results are identical at any worker count.

use rand::RngCore;

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;
const MIX_A: u64 = 0xBF58_476D_1CE4_E5B9;
const MIX_B: u64 = 0x94D0_49BB_1331_11EB;

/// SplitMix64 finalizer.
#[inline]
pub fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX_A);
    z = (z ^ (z >> 27)).wrapping_mul(MIX_B);
    z ^ (z >> 31)
}

/// Independent tag for each stochastic phase of the pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Phase {
    EncodeStdp,
    EncodeActivation,
    EncodeFcsnn,
    MapDropout,
    StdpSwitch,
    KernelInit,
    ClassifierInit,
    ClassifierShuffle,
    ClassifierDropout,
    FcsnnInit,
    FcsnnSwitch,
}

impl Phase {
    fn tag(self) -> u64 {
        match self {
            Phase::EncodeStdp => 0x01,
            Phase::EncodeActivation => 0x02,
            Phase::EncodeFcsnn => 0x03,
            Phase::MapDropout => 0x10,
            Phase::StdpSwitch => 0x11,
            Phase::KernelInit => 0x12,
            Phase::ClassifierInit => 0x20,
            Phase::ClassifierShuffle => 0x21,
            Phase::ClassifierDropout => 0x22,
            Phase::FcsnnInit => 0x30,
            Phase::FcsnnSwitch => 0x31,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::EncodeStdp => "encode-stdp",
            Phase::EncodeActivation => "encode-activation",
            Phase::EncodeFcsnn => "encode-fcsnn",
            Phase::MapDropout => "map-dropout",
            Phase::StdpSwitch => "stdp-switch",
            Phase::KernelInit => "kernel-init",
            Phase::ClassifierInit => "classifier-init",
            Phase::ClassifierShuffle => "classifier-shuffle",
            Phase::ClassifierDropout => "classifier-dropout",
            Phase::FcsnnInit => "fcsnn-init",
            Phase::FcsnnSwitch => "fcsnn-switch",
        }
    }
}

/// Position in the keyed random space. Keys are cheap `Copy` values; deriving
/// a child key never mutates the parent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Key(u64);

impl Key {
    pub fn new(seed: u64, phase: Phase) -> Self {
        Key(mix64(mix64(seed ^ GOLDEN) ^ phase.tag().wrapping_mul(MIX_B)))
    }

    /// Child key for coordinate `x`.
    #[inline]
    pub fn with(self, x: u64) -> Self {
        Key(mix64(self.0.rotate_left(25) ^ mix64(x.wrapping_add(GOLDEN))))
    }

    #[inline]
    pub fn raw(self) -> u64 {
        mix64(self.0 ^ MIX_A)
    }

    /// Uniform sample in `[0, 1)` with 53 bits of resolution.
    #[inline]
    pub fn uniform(self) -> f64 {
        (self.raw() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    pub fn bernoulli(self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Sequential stream rooted at this key, for consumers that want an
    /// ordinary [`RngCore`] (shuffles, weight initialisation).
    pub fn stream(self) -> Stream {
        Stream {
            key: self.0,
            counter: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Stream {
    key: u64,
    counter: u64,
}

impl RngCore for Stream {
    fn next_u32(&mut self) -> u32 {
        (self.next_u64() >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key ^ mix64(self.counter.wrapping_mul(GOLDEN)))
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let v = self.next_u64().to_le_bytes();
            chunk.copy_from_slice(&v[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
