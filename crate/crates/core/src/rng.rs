//! Counter-based random streams.
//!
//! A stream is addressed by `(seed, replicate, learner, round, purpose)`. The
//! key is derived from the seed and replicate, the ChaCha stream id from the
//! learner and purpose, and the block position from the round, so any draw can
//! be regenerated without replaying earlier ones.

use rand::distr::Open01;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;
use rand_chacha::ChaCha12Rng;

/// What a stream is used for. Distinct purposes never share draws.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Purpose {
    Noise = 1,
    Data = 2,
    Init = 3,
    Topology = 4,
    Misc = 5,
}

/// Word offset between consecutive rounds: 2^32 words per round.
const ROUND_SHIFT: u32 = 32;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Streams {
    key: [u8; 32],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Streams {
    pub fn new(seed: u64, replicate: u64) -> Self {
        let mut s = seed ^ replicate.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        let mut key = [0u8; 32];
        for chunk in key.chunks_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        Streams { key }
    }

    /// Generator positioned at the start of the block for this address.
    pub fn stream(&self, learner: usize, round: usize, purpose: Purpose) -> ChaCha12Rng {
        let mut rng = ChaCha12Rng::from_seed(self.key);
        rng.set_stream(((learner as u64) << 8) | purpose as u64);
        rng.set_word_pos((round as u128) << ROUND_SHIFT);
        rng
    }
}

/// Uniform draw on the open interval (0, 1).
pub fn open01<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(Open01)
}

/// Standard normal draw.
pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}
