//! Seeded random streams.
//!
//! Every run has one root seed. Independent consumers read disjoint ChaCha
//! streams of that seed, always in the same assignment:
//!
//! | stream | consumer                                   |
//! |--------|--------------------------------------------|
//! | 0      | overlay generation (pair order)            |
//! | 1      | engine: aware/agnostic coin, target draws  |
//! | 2      | analytic initial-condition sampling        |

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const OVERLAY: u64 = 0;
const ENGINE: u64 = 1;
const INITIAL_CONDITIONS: u64 = 2;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn overlay_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, OVERLAY)
}

pub fn engine_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, ENGINE)
}

pub fn initial_condition_stream(seed: u64) -> ChaCha8Rng {
    stream(seed, INITIAL_CONDITIONS)
}
