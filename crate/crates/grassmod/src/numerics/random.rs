//! Deterministic stream derivation and complex Gaussian sampling.
//!
//! Every randomized routine takes a `(seed, ids…)` pair rather than a shared
//! generator, so that trial `k` of experiment `j` produces identical draws no
//! matter how work is scheduled across threads.

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::cmatrix::CMatrix;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive an independent generator for a given stream id path.
///
/// The ids are folded into the key one at a time, so `(seed, [a])` and
/// `(seed, [a, b])` are unrelated streams and reordering ids changes the key.
pub fn stream_rng(seed: u64, ids: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ 0x6a09_e667_f3bc_c908;
    // fold the path length first so [0] and [0,0] diverge even when id words collide
    let mut len_state = ids.len() as u64 ^ 0x243f_6a88_85a3_08d3;
    state ^= splitmix64(&mut len_state);
    for &id in ids {
        let mut id_state = id ^ state;
        state ^= splitmix64(&mut id_state);
        state = splitmix64(&mut state);
    }
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Sample a matrix with i.i.d. circularly symmetric complex Gaussian entries
/// of the given per-entry variance (real and imaginary parts each carry half).
pub fn sample_gaussian_matrix(
    rows: usize,
    cols: usize,
    variance: f64,
    rng: &mut ChaCha8Rng,
) -> CMatrix {
    assert!(variance >= 0.0 && variance.is_finite());
    let scale = (variance / 2.0).sqrt();
    let mut m = CMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            m[(r, c)] = Complex64::new(scale * re, scale * im);
        }
    }
    m
}
