//! Seeded random sampling helpers. All randomness in the crate flows through
//! [`rng`] so that runs are reproducible from a single `u64` seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::normed_space::NormedSpace;

pub type SeededRng = ChaCha8Rng;

pub fn rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derive an independent stream seed from a base seed and a label.
pub fn derive_seed(base: u64, stream: u64) -> u64 {
    splitmix64(base ^ splitmix64(stream.wrapping_add(0x9E37_79B9_7F4A_7C15)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Uniformly distributed unit vector for the Euclidean norm.
pub fn euclidean_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Uniform sample from the open ball `B_r(center)` of `space`, drawn by rejection
/// from the box with the given half-widths (which must contain the ball).
pub(crate) fn rejection_ball<R: Rng + ?Sized>(
    space: &NormedSpace,
    center: &[f64],
    radius: f64,
    half_widths: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let mut offset = vec![0.0; center.len()];
    loop {
        for (o, h) in offset.iter_mut().zip(half_widths) {
            *o = rng.random_range(-1.0..1.0) * h;
        }
        if space.norm(&offset) < radius {
            return center.iter().zip(&offset).map(|(c, o)| c + o).collect();
        }
    }
}

/// Uniform sample from the axis-aligned box `[lo, hi]`.
pub fn uniform_box<R: Rng + ?Sized>(lo: &[f64], hi: &[f64], rng: &mut R) -> Vec<f64> {
    lo.iter().zip(hi).map(|(a, b)| a + (b - a) * rng.random::<f64>()).collect()
}
