//! Splittable counter-based random streams.
//!
//! Every source of randomness in this crate is a [`StreamRng`]: a 64-bit
//! key plus a counter, producing outputs through the SplitMix64 finalizer.
//! Child streams are derived from `(parent key, label)` without consuming
//! state from the parent, so independent work units (replicates,
//! participants, sampler chains) get reproducible streams regardless of
//! execution order.
//!
//! Stream tree used by the rest of the crate:
//!
//! ```text
//! master seed
//!   └── study stream ── split(cell index) ── derive_seed(replicate) = trial seed
//! trial seed
//!   ├── split(SHUFFLE_C1 / SHUFFLE_C2)   arm-order permutations
//!   └── split(PARTICIPANT_BASE + i)      per-participant draws
//! sampler seed
//!   └── split(chain index)               per-chain proposal stream
//! ```

use rand::RngCore;

const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// SplitMix64 finalizer.
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic counter-based generator with cheap stream splitting.
#[derive(Debug, Clone)]
pub struct StreamRng {
    key: u64,
    counter: u64,
}

impl StreamRng {
    pub fn new(seed: u64) -> Self {
        StreamRng {
            key: mix64(seed.wrapping_add(GAMMA)),
            counter: 0,
        }
    }

    /// Derive an independent child stream identified by `label`. Does not
    /// advance this stream.
    pub fn split(&self, label: u64) -> Self {
        let salted = mix64(label.wrapping_mul(GAMMA).wrapping_add(0xD134_2543_DE82_EF95));
        StreamRng {
            key: mix64(self.key ^ salted),
            counter: 0,
        }
    }

    /// A plain 64-bit seed for handing to another component, equal to the
    /// child stream's key.
    pub fn derive_seed(&self, label: u64) -> u64 {
        self.split(label).key
    }

    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        mix64(self.key.wrapping_add(self.counter.wrapping_mul(GAMMA)))
    }

    /// Uniform draw in `[0, 1)` with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

impl RngCore for StreamRng {
    fn next_u32(&mut self) -> u32 {
        (StreamRng::next_u64(self) >> 32) as u32
    }

    fn next_u64(&mut self) -> u64 {
        StreamRng::next_u64(self)
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        for chunk in dest.chunks_mut(8) {
            let bytes = StreamRng::next_u64(self).to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> Result<(), rand::Error> {
        self.fill_bytes(dest);
        Ok(())
    }
}
