//! Seeded random streams.
//!
//! Every Monte Carlo path, replica or grid row draws from its own stream,
//! addressed by `(master seed, stream index)`. The stream is ChaCha8 with a
//! 256-bit key expanded from the master seed by SplitMix64 (four successive
//! outputs, little-endian) and the ChaCha stream id set to the index. The
//! construction is platform independent, and distinct indices give disjoint
//! keystreams.
//!
//! Variates are produced with a fixed consumption per call so that sampling
//! positions never depend on the values drawn:
//! * `uniform` consumes one `u64`;
//! * `normal_pair` consumes two `u64` (Box–Muller).

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

#[inline]
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// The random stream for path/replica `stream_index` under `master_seed`.
pub fn derive_stream(master_seed: u64, stream_index: u64) -> LabRng {
    let mut state = master_seed;
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_index);
    rng
}

/// A family of streams sharing one master seed.
///
/// Distinct estimators inside one experiment use `sub` families so that
/// their path indices never collide.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    seed: u64,
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        Streams { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, index: u64) -> LabRng {
        derive_stream(self.seed, index)
    }

    /// An independent family labelled by `tag`.
    pub fn sub(&self, tag: u64) -> Streams {
        let mut state = self.seed ^ tag.wrapping_mul(0xD6E8_FEB8_6659_FD93);
        Streams { seed: splitmix64(&mut state) }
    }
}

/// Uniform on [0, 1) with 53 bits.
#[inline]
pub fn uniform<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Two independent standard normals.
#[inline]
pub fn normal_pair<R: RngCore + ?Sized>(rng: &mut R) -> (f64, f64) {
    // u1 in (0, 1] keeps the log finite
    let u1 = ((rng.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
    let u2 = uniform(rng);
    let r = (-2.0 * u1.ln()).sqrt();
    let (s, c) = (std::f64::consts::TAU * u2).sin_cos();
    (r * c, r * s)
}

/// Fills `out` with standard normals, consuming 2·⌈len/2⌉ words.
pub fn fill_normals<R: RngCore + ?Sized>(rng: &mut R, out: &mut [f64]) {
    let mut chunks = out.chunks_mut(2);
    for chunk in &mut chunks {
        let (a, b) = normal_pair(rng);
        chunk[0] = a;
        if chunk.len() > 1 {
            chunk[1] = b;
        }
    }
}

/// A uniformly distributed unit vector in R^d.
pub fn unit_vector<R: RngCore + ?Sized>(rng: &mut R, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    loop {
        fill_normals(rng, &mut v);
        let n = crate::matgroup::norm(&v);
        if n > 1e-12 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}
