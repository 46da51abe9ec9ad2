//! Seeded random streams. Each consumer gets its own ChaCha stream so that
//! changing how many numbers one part draws never shifts another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

/// Stream identifiers for the independent consumers of one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Dataset = 1,
    Init = 2,
    Batches = 3,
    ContextNoise = 4,
    Split = 5,
    ProbeSubsample = 6,
    Eval = 7,
}

pub fn stream(seed: u64, which: Stream) -> LabRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}
