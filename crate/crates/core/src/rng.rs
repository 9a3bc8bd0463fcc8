//! Seeded random streams.
//!
//! All randomness comes from ChaCha8 (`rand_chacha` 0.9). A run seed selects
//! the key; independent consumers inside one run use distinct stream ids of
//! that key, so two consumers never share a sequence and adding draws to one
//! never shifts another. Stream ids:
//!
//! | id            | consumer                                   |
//! |---------------|--------------------------------------------|
//! | 1             | channel path (initial gain and transitions) |
//! | 2             | Q-learning exploration and start battery    |
//! | 1000 + chunk  | detector Monte Carlo, one per chunk of bits |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const CHANNEL_STREAM: u64 = 1;
pub const EXPLORATION_STREAM: u64 = 2;
pub const DETECTOR_STREAM_BASE: u64 = 1000;

pub fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}
