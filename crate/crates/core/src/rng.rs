//! Named random streams derived from a single run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init,
    Train,
    Sample,
    Data,
    Probe,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Init => 1,
            Stream::Train => 2,
            Stream::Sample => 3,
            Stream::Data => 4,
            Stream::Probe => 5,
        }
    }
}

/// Generator for `(seed, stream, index)`; `index` distinguishes shards.
pub fn stream_rng(seed: u64, stream: Stream, index: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((stream.id() << 32) | u64::from(index));
    rng
}
