//! Deterministic random substreams.
//!
//! A substream is identified by `(master seed, stream id, replicate index)`.
//! The ChaCha8 key is four SplitMix64 outputs of `master` mixed with the
//! stream id; the replicate index is the ChaCha stream number. Output is
//! therefore independent of scheduling and of the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type BrwRng = ChaCha8Rng;

pub mod streams {
    pub const FORWARD: u64 = 1;
    pub const CONDITIONED_FORWARD: u64 = 2;
    pub const SPINE: u64 = 3;
    pub const UTRANSFORM: u64 = 4;
    pub const OVERLAP: u64 = 5;
    pub const SRW: u64 = 6;
    pub const OFFSPRING: u64 = 7;
    pub const SELFTEST: u64 = 8;
    pub const SPINE_ATTACHED: u64 = 9;
    pub const UTRANSFORM_ATTACHED: u64 = 10;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for replicate `rep` of stream `stream` under `master`.
pub fn substream(master: u64, stream: u64, rep: u64) -> BrwRng {
    let mut sm = stream;
    let mut state = master ^ splitmix64(&mut sm);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(rep);
    rng
}
