//! Deterministic random streams.
//!
//! Every random draw in a run comes from a stream keyed on the global seed
//! and a `(component, temperature, sweep, particle)` tuple, so parallel and
//! serial evaluation consume identical numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::num::Real;

/// Stream families. Values are part of the reproducibility contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Component {
    Initial = 1,
    Resample = 2,
    Mutation = 3,
    Oracle = 4,
    Fixture = 5,
    Test = 99,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Root of a family of independent random streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamSeed(u64);

impl StreamSeed {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn seed(&self) -> u64 {
        self.0
    }

    /// Generator for one `(component, temperature, sweep, particle)` cell.
    pub fn stream(&self, component: Component, temperature: u64, sweep: u64, particle: u64) -> ChaCha8Rng {
        let mut h = splitmix64(self.0);
        for word in [component as u64, temperature, sweep, particle] {
            h = splitmix64(h ^ word);
        }
        ChaCha8Rng::seed_from_u64(h)
    }
}

/// Draw a vector of i.i.d. standard normals in the target scalar type.
pub fn standard_normals<T: Real, R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Vec<T> {
    (0..len)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z)
        })
        .collect()
}
