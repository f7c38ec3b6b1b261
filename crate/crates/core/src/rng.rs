use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for a (seed, stream) pair, so that e.g. the
/// shuffle of epoch 3 never depends on how many numbers epoch 2 consumed.
pub(crate) fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
