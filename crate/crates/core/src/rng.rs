//! Deterministic random sub-streams derived from one master seed.
//!
//! Each purpose (AP placement, channel draws, ...) gets its own ChaCha
//! stream, and indexed work items (draw `d`, layout `r`) get their own
//! stream id inside it, so results do not depend on worker count or on how
//! many items another purpose consumed.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Stream {
    ApPositions,
    SeuPositions,
    UePositions,
    Shadowing,
    Pilots,
    MomentDraws,
    RateDraws,
    Symbols,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::ApPositions => 0x01,
            Stream::SeuPositions => 0x02,
            Stream::UePositions => 0x03,
            Stream::Shadowing => 0x04,
            Stream::Pilots => 0x05,
            Stream::MomentDraws => 0x06,
            Stream::RateDraws => 0x07,
            Stream::Symbols => 0x08,
        }
    }
}

/// SplitMix64 finalizer; used to spread structured seeds over the key space.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th layout realization under a master seed.
pub fn layout_seed(master: u64, index: u64) -> u64 {
    mix64(master ^ mix64(index.wrapping_add(0x5EED)))
}

pub fn stream(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix64(seed ^ mix64(purpose.tag())));
    rng.set_stream(index);
    rng
}

/// Circularly-symmetric complex Gaussian sample with the given variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, variance: f64) -> Complex64 {
    let s = (variance / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(re * s, im * s)
}
