//! Named random streams derived from one scenario seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Purpose tags; each maps to an independent ChaCha stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamId {
    Attributes,
    Drivers,
    Adoption,
    Arrivals(usize),
    Controller,
    Other(u64),
}

impl StreamId {
    fn index(self) -> u64 {
        match self {
            StreamId::Attributes => 1,
            StreamId::Drivers => 2,
            StreamId::Adoption => 3,
            StreamId::Controller => 4,
            StreamId::Arrivals(a) => 1_000 + a as u64,
            StreamId::Other(k) => 1 << 32 | k,
        }
    }
}

pub fn stream(seed: u64, id: StreamId) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id.index());
    rng
}

/// Independent child seed number `k` of `seed`.
pub fn derive_seed(seed: u64, k: u64) -> u64 {
    use rand::Rng;
    stream(seed, StreamId::Other(k)).random()
}

#[derive(Debug, Clone)]
pub struct Streams {
    pub attributes: ChaCha8Rng,
    pub drivers: ChaCha8Rng,
    pub adoption: ChaCha8Rng,
    pub arrivals: Vec<ChaCha8Rng>,
}

impl Streams {
    pub fn new(seed: u64, approaches: usize) -> Self {
        Self {
            attributes: stream(seed, StreamId::Attributes),
            drivers: stream(seed, StreamId::Drivers),
            adoption: stream(seed, StreamId::Adoption),
            arrivals: (0..approaches).map(|a| stream(seed, StreamId::Arrivals(a))).collect(),
        }
    }
}
