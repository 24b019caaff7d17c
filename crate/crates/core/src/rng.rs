//! Seeded random streams.
//!
//! Every consumer of randomness draws from its own named stream derived from
//! one master seed, so toggling one consumer never shifts another's draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Named random stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Split,
    LabeledShuffle,
    UnlabeledShuffle,
    Pairs,
    Centers,
    NoiseStudent,
    NoiseTeacher,
    Data,
    WeakPairs,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Split => 2,
            Stream::LabeledShuffle => 3,
            Stream::UnlabeledShuffle => 4,
            Stream::Pairs => 5,
            Stream::Centers => 6,
            Stream::NoiseStudent => 7,
            Stream::NoiseTeacher => 8,
            Stream::Data => 9,
            Stream::WeakPairs => 10,
        }
    }
}

/// Independent generator for `stream` under `seed`.
pub fn stream(seed: u64, stream: Stream) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}
