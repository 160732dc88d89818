//! Counter-based random numbers. Every variate is a pure function of the
//! stream key and its address, so replicas can be evaluated in any order or
//! on any number of threads and still reproduce bit for bit.

use serde::{Deserialize, Serialize};

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

const DOMAIN_NORMAL: u64 = 1;
const DOMAIN_POISSON: u64 = 2;
const DOMAIN_JUMP: u64 = 3;
const DOMAIN_AUX: u64 = 4;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[inline]
fn absorb(h: u64, word: u64) -> u64 {
    mix(h ^ mix(word.wrapping_add(GOLDEN)))
}

/// Maps 53 random bits to the open interval (0, 1).
#[inline]
fn to_open_unit(x: u64) -> f64 {
    ((x >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseStream {
    key: u64,
}

impl NoiseStream {
    pub fn new(seed: u64) -> Self {
        NoiseStream {
            key: absorb(0x5851_f42d_4c95_7f2d, seed),
        }
    }

    /// Independent sub-stream, e.g. one per replica.
    pub fn fork(&self, tag: u64) -> Self {
        NoiseStream {
            key: absorb(self.key ^ 0xd6e8_feb8_6659_fd93, tag),
        }
    }

    #[inline]
    fn bits(&self, domain: u64, a: u64, b: u64) -> u64 {
        absorb(absorb(absorb(self.key, domain), a), b)
    }

    /// Standard normal variate for `(site, step)` (Box-Muller on two hashed uniforms).
    #[inline]
    pub fn normal(&self, site: usize, step: u64) -> f64 {
        let h = self.bits(DOMAIN_NORMAL, site as u64, step);
        let u1 = to_open_unit(h);
        let u2 = to_open_unit(mix(h ^ GOLDEN));
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform on (0, 1) for the jump-time slot `j`.
    pub fn jump_uniform(&self, j: u64) -> f64 {
        to_open_unit(self.bits(DOMAIN_JUMP, j, 0))
    }

    /// Uniform on (0, 1) at an auxiliary address, for callers needing extra draws.
    pub fn aux_uniform(&self, a: u64, b: u64) -> f64 {
        to_open_unit(self.bits(DOMAIN_AUX, a, b))
    }

    /// Poisson(t) count by inversion of the CDF.
    pub fn poisson(&self, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let u = to_open_unit(self.bits(DOMAIN_POISSON, 0, 0));
        poisson_inverse_cdf(u, t)
    }
}

/// Smallest k with P(N <= k) >= u for N ~ Poisson(t).
pub fn poisson_inverse_cdf(u: f64, t: f64) -> usize {
    let mut k = 0usize;
    let mut p = (-t).exp();
    let mut cdf = p;
    while cdf < u {
        k += 1;
        p *= t / k as f64;
        cdf += p;
        // rounding can leave the partial sums just below u far in the tail
        if p < 1e-300 && k as f64 > t {
            break;
        }
    }
    k
}
