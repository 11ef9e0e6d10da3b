//! Portable, random-access random number streams.
//!
//! Every consumer of randomness draws from a ChaCha8 stream keyed by
//! `(seed, domain)` and positioned by a 64-bit index (time step, iteration,
//! trial). Any batch or sampling decision can therefore be regenerated
//! without replaying the ones before it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Separate purposes so that, e.g., replay sampling never shares a stream
/// with batch generation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    StreamLayout = 0x5354_524d_4c41_5954,
    StreamBatch = 0x5354_524d_4241_5443,
    HoldoutRouting = 0x484f_4c44_4f55_5452,
    Reservoir = 0x5245_5345_5256_4f49,
    Replay = 0x5245_504c_4159_5f5f,
    Validation = 0x5641_4c49_4441_5445,
    ModelInit = 0x4d4f_4445_4c49_4e49,
    Theory = 0x5448_454f_5259_5f5f,
    Test = 0x5445_5354_5f5f_5f5f,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for `(seed, domain)` positioned on stream `index`.
pub fn substream(seed: u64, domain: Domain, index: u64) -> ChaCha8Rng {
    let key = splitmix64(seed ^ splitmix64(domain as u64));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    rng.set_stream(index);
    rng
}
