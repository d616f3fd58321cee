//! Seeded random streams.
//!
//! Every random consumer in an experiment draws from its own ChaCha8 stream,
//! keyed by `(base_seed, run_index, tag)`. Streams never overlap, so adding an
//! agent to an experiment does not perturb the draws seen by the others.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// Purpose of a stream within one run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamTag {
    Instance,
    Context,
    Agent(u8),
    Noise(u8),
    Auxiliary(u32),
}

impl StreamTag {
    fn code(self) -> u64 {
        match self {
            StreamTag::Instance => 1,
            StreamTag::Context => 2,
            StreamTag::Agent(k) => 0x100 | u64::from(k),
            StreamTag::Noise(k) => 0x200 | u64::from(k),
            StreamTag::Auxiliary(k) => 0x1_0000_0000 | u64::from(k),
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent stream for `(base_seed, run_index, tag)`.
pub fn stream(base_seed: u64, run_index: u64, tag: StreamTag) -> Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(base_seed ^ splitmix64(run_index)));
    rng.set_stream(tag.code());
    rng
}
