//! Counter-based random streams.
//!
//! Every Monte Carlo sample draws from its own stream, keyed by the run seed, an
//! operator tag, the output node and the sample index. Results therefore do not
//! depend on how samples are distributed across threads.

use std::convert::Infallible;

use rand::TryRng;

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream tags of the operators that consume randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Gain = 1,
    WeakForm = 2,
    Remainder = 3,
    Averaging = 4,
}

/// Derives a seed for a sub-computation (for instance one solver step).
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    mix64(mix64(seed ^ GOLDEN).wrapping_add(salt))
}

/// SplitMix64 sequence started at a hashed key.
#[derive(Debug, Clone)]
pub struct CounterRng {
    state: u64,
}

impl CounterRng {
    pub fn new(seed: u64, stream: u64, node: u64, sample: u64) -> Self {
        let mut key = mix64(seed ^ GOLDEN);
        key = mix64(key ^ stream.wrapping_mul(0xd6e8_feb8_6659_fd93));
        key = mix64(key ^ node.wrapping_mul(0xa076_1d64_78bd_642f));
        key = mix64(key ^ sample.wrapping_mul(0xe703_7ed1_a0b4_28db));
        Self { state: key }
    }

    /// Uniform draw in `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        (self.next() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    #[inline]
    fn next(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix64(self.state)
    }
}

impl TryRng for CounterRng {
    type Error = Infallible;

    fn try_next_u32(&mut self) -> Result<u32, Infallible> {
        Ok((self.next() >> 32) as u32)
    }

    fn try_next_u64(&mut self) -> Result<u64, Infallible> {
        Ok(self.next())
    }

    fn try_fill_bytes(&mut self, dst: &mut [u8]) -> Result<(), Infallible> {
        for chunk in dst.chunks_mut(8) {
            let bytes = self.next().to_le_bytes();
            chunk.copy_from_slice(&bytes[..chunk.len()]);
        }
        Ok(())
    }
}
