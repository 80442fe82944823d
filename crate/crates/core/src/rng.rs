//! Seeding helpers. Every chain owns a ChaCha8 stream derived from a master seed
//! and a stream index, so replicates are independent and reproducible no matter
//! which worker runs them.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type ChainRng = ChaCha8Rng;

pub fn stream_rng(master_seed: u64, stream: u64) -> ChainRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}
