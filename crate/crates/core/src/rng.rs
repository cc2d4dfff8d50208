use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Independent ChaCha20 stream `stream` of the generator keyed by `seed`.
///
/// Streams depend only on `(seed, stream)`, so work split across threads
/// draws the same numbers regardless of scheduling.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
