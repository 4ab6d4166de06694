//! Seed derivation and complex Gaussian sampling.
//!
//! Every experiment starts from one 64-bit master seed. Trial `t` gets the
//! seed `mix_seed(master, t)`, and each independent random stream within a
//! trial (activity, Phase I, Phase II preambles, Phase II channels) gets
//! `mix_seed(trial_seed, stream_id)`. `mix_seed` is the SplitMix64 finalizer
//! applied to `a ^ splitmix(b)`, so results depend only on the seeds and
//! never on scheduling or thread count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::C64;

/// The generator used for every stream.
pub type SimRng = ChaCha8Rng;

/// Stream identifiers within a trial.
pub mod stream {
    pub const ACTIVITY: u64 = 1;
    pub const PHASE1_PREAMBLE: u64 = 2;
    pub const PHASE1_SIGNAL: u64 = 3;
    pub const PHASE2_PREAMBLES: u64 = 4;
    pub const PHASE2_SIGNAL: u64 = 5;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Combines a parent seed with an index into a child seed.
pub fn mix_seed(parent: u64, index: u64) -> u64 {
    splitmix64(parent ^ splitmix64(index))
}

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Child generator for `index` under `parent`.
pub fn child_rng(parent: u64, index: u64) -> SimRng {
    rng_from_seed(mix_seed(parent, index))
}

/// One draw of CN(0, variance): real and imaginary parts each carry half the variance.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> C64 {
    let scale = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(scale * re, scale * im)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mix_seed_is_deterministic_and_spreads() {
        assert_eq!(mix_seed(7, 3), mix_seed(7, 3));
        assert_ne!(mix_seed(7, 3), mix_seed(7, 4));
        assert_ne!(mix_seed(7, 3), mix_seed(8, 3));
        assert_ne!(mix_seed(0, 0), 0);
    }

    #[test]
    fn complex_gaussian_has_unit_power() {
        let mut rng = rng_from_seed(11);
        let n = 200_000;
        let mut power = 0.0;
        let mut re2 = 0.0;
        for _ in 0..n {
            let z = complex_gaussian(&mut rng, 1.0);
            power += z.norm_sqr();
            re2 += z.re * z.re;
        }
        power /= n as f64;
        re2 /= n as f64;
        assert!((power - 1.0).abs() < 0.01, "power {power}");
        assert!((re2 - 0.5).abs() < 0.01, "real-part variance {re2}");
    }
}
