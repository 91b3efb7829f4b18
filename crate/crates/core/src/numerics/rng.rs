use rand_core::{impls, RngCore};

/// Identifier written into checkpoints for the generator below.
pub const PCG32_ALGORITHM_ID: u32 = 0x5043_4733; // "PCG3"

const MULTIPLIER: u64 = 6_364_136_223_846_793_005;

/// PCG-XSH-RR 64/32 generator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pcg32 {
    state: u64,
    inc: u64,
}

impl Pcg32 {
    /// Seeds with the reference `pcg32_srandom(initstate, initseq)` procedure.
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = Self {
            state: 0,
            inc: (stream << 1) | 1,
        };
        rng.step();
        rng.state = rng.state.wrapping_add(seed);
        rng.step();
        rng
    }

    pub fn seed_from_u64(seed: u64) -> Self {
        Self::new(seed, 0xda3e_39cb_94b9_5bdb)
    }

    /// Independent sub-stream keyed by `(seed, label)`. The result does not
    /// depend on how many other streams were derived before it.
    pub fn stream(seed: u64, label: &str) -> Self {
        let key = derive_seed(seed, label);
        Self::new(key, splitmix64(key ^ 0x9e37_79b9_7f4a_7c15))
    }

    /// Raw `(state, increment)` words for persistence.
    pub fn to_words(&self) -> (u64, u64) {
        (self.state, self.inc)
    }

    pub fn from_words(state: u64, inc: u64) -> Self {
        Self { state, inc: inc | 1 }
    }

    #[inline]
    fn step(&mut self) {
        self.state = self.state.wrapping_mul(MULTIPLIER).wrapping_add(self.inc);
    }
}

impl RngCore for Pcg32 {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        let old = self.state;
        self.step();
        let xorshifted = (((old >> 18) ^ old) >> 27) as u32;
        let rot = (old >> 59) as u32;
        xorshifted.rotate_right(rot)
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        impls::next_u64_via_u32(self)
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        impls::fill_bytes_via_next(self, dst)
    }
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash of `(seed, label)`: FNV-1a over the label bytes, folded with the
/// seed through SplitMix64.
pub fn derive_seed(seed: u64, label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix64(splitmix64(seed) ^ h)
}
