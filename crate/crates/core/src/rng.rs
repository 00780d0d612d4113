use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Independent reproducible stream `stream` under `seed`. Streams never
/// overlap, so per-sample and per-worker draws do not depend on scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
