use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::Batch;

/// Uniform sample without replacement of `min(n_pos, |pool|)` pool members, kept in
/// pool order.
///
/// Draws from the last ChaCha stream of `seed`; the swarm uses the low streams, so
/// one run seed can drive both.
pub fn sample_positives(pool: &Batch, n_pos: usize, seed: u64) -> Result<Batch> {
    if pool.is_empty() {
        return Err(Error::EmptyPositivePool);
    }
    if n_pos >= pool.len() {
        return Ok(pool.clone());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX);
    let mut picked = index::sample(&mut rng, pool.len(), n_pos).into_vec();
    picked.sort_unstable();
    Ok(pool.select(&picked))
}
