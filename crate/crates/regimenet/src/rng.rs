//! Deterministic, splittable random number streams.
//!
//! Every stream is a ChaCha12 generator keyed by the run seed. Substreams map
//! (block, sweep, slice) tuples onto disjoint ChaCha stream ids, so per-slice
//! draws can run on any number of threads and still reproduce bit-exactly.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha12Rng;

/// Stream id reserved for the serial master stream of a run.
const MASTER_STREAM: u64 = u64::MAX;

/// Seedable random stream with deterministic substream derivation.
#[derive(Debug, Clone)]
pub struct RngStream {
    key: [u8; 32],
    rng: ChaCha12Rng,
}

impl RngStream {
    /// Create the master stream for a 64-bit seed.
    pub fn new(seed: u64) -> Self {
        let key = expand_seed(seed);
        let mut rng = ChaCha12Rng::from_seed(key);
        rng.set_stream(MASTER_STREAM);
        Self { key, rng }
    }

    /// Independent stream for (block, sweep, slice). The id packs the fields
    /// into disjoint bit ranges, so distinct tuples never collide.
    pub fn substream(&self, block: u8, sweep: u64, slice: u64) -> Self {
        debug_assert!(block < 0xFF, "block tag 0xFF is reserved");
        debug_assert!(sweep < 1 << 32, "sweep index exceeds substream range");
        debug_assert!(slice < 1 << 24, "slice index exceeds substream range");
        let id = ((block as u64) << 56) | ((sweep & 0xFFFF_FFFF) << 24) | (slice & 0xFF_FFFF);
        let mut rng = ChaCha12Rng::from_seed(self.key);
        rng.set_stream(id);
        Self { key: self.key, rng }
    }

    pub fn u01(&mut self) -> f64 {
        self.rng.gen::<f64>()
    }

    /// Standard exponential via inversion.
    pub fn exp1(&mut self) -> f64 {
        -(1.0 - self.u01()).ln()
    }

    /// Standard normal draw.
    pub fn standard_normal(&mut self) -> f64 {
        self.rng.sample(rand_distr::StandardNormal)
    }

    pub fn inner(&mut self) -> &mut ChaCha12Rng {
        &mut self.rng
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }
    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.rng.try_fill_bytes(dest)
    }
}

fn expand_seed(seed: u64) -> [u8; 32] {
    // SplitMix64 chain, the usual way to widen a 64-bit seed.
    let mut key = [0u8; 32];
    let mut state = seed;
    for chunk in key.chunks_exact_mut(8) {
        state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^= z >> 31;
        chunk.copy_from_slice(&z.to_le_bytes());
    }
    key
}
