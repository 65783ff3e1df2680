//! Counter-based random substreams.
//!
//! Every random draw in a replicate comes from a ChaCha8 stream whose key
//! is derived from `(master seed, replicate)` and whose stream id names the
//! consumer (a mode `(k,ℓ)` or an aliased grid frequency). Streams are
//! therefore independent of thread scheduling and of how many other
//! consumers exist.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Identifies one replicate of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedPath {
    pub master: u64,
    pub replicate: u64,
}

/// Purpose tags keep key material of different consumers apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    Mode,
    AliasClass,
    Ou,
    Aux,
}

impl Domain {
    fn tag(self) -> u64 {
        match self {
            Domain::Mode => 0x6d6f_6465,
            Domain::AliasClass => 0x616c_6961,
            Domain::Ou => 0x6f75_6f75,
            Domain::Aux => 0x6175_7821,
        }
    }
}

impl SeedPath {
    pub fn new(master: u64, replicate: u64) -> Self {
        SeedPath { master, replicate }
    }

    /// Stream for consumer `(a, b)` within `domain`.
    pub fn stream(&self, domain: Domain, a: u32, b: u32) -> ChaCha8Rng {
        let mut key = [0u8; 32];
        let mut state = self.master ^ domain.tag().rotate_left(17);
        for (i, chunk) in key.chunks_exact_mut(8).enumerate() {
            let word = splitmix64(&mut state) ^ splitmix64_once(self.replicate.wrapping_add(i as u64));
            chunk.copy_from_slice(&word.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(((a as u64) << 32) | b as u64);
        rng
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    splitmix64_once(*state)
}

fn splitmix64_once(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
