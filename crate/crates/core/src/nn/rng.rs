// Deterministic RNG derivation.
//
// Every random draw in the crate flows through a ChaCha20 stream derived
// from (seed, tag). Tags are stable strings like "init/decoder.blk0.attn.wq"
// or "batch/1234", so reproducibility does not depend on call order, and
// checkpoint resume needs no RNG state: the stream for step s is derivable
// from the seed and s alone.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e3779b97f4a7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub(crate) fn fnv1a64(s: &str) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in s.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// ChaCha20 stream keyed by (seed, tag).
pub fn derive_rng(seed: u64, tag: &str) -> ChaCha20Rng {
    let mut state = seed ^ fnv1a64(tag).rotate_left(17);
    let mut key = [0u8; 32];
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha20Rng::from_seed(key)
}

/// n uniform draws from [lo, hi).
pub fn uniform_vec(rng: &mut ChaCha20Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random::<f64>() * (hi - lo) + lo).collect()
}

/// n standard-normal draws (Box-Muller; consumes two uniforms each).
pub fn normal_vec(rng: &mut ChaCha20Rng, n: usize, mean: f64, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let u1: f64 = rng.random::<f64>().max(1e-300);
            let u2: f64 = rng.random::<f64>();
            let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
            mean + std * z
        })
        .collect()
}
