//! The synchronous sign-Langevin chain on a periodic ring, in discrete time
//! and subordinated to a unit-rate Poisson clock.

use crate::error::{check_gamma, Error, Result};
use crate::kernels::TwoPointState;
use crate::noise::NoiseStream;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeParams {
    #[serde(rename = "L")]
    pub l: usize,
    #[serde(rename = "K")]
    pub k: f64,
    pub gamma: f64,
    pub seed: u64,
}

impl LatticeParams {
    pub fn new(l: usize, k: f64, gamma: f64, seed: u64) -> Result<Self> {
        let p = LatticeParams { l, k, gamma, seed };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.l < 3 {
            return Err(Error::invalid("L", format!("ring length must be at least 3 (got {})", self.l)));
        }
        if !self.k.is_finite() {
            return Err(Error::invalid("K", "coupling must be finite"));
        }
        check_gamma(self.gamma)
    }

    pub fn noise(&self) -> NoiseStream {
        NoiseStream::new(self.seed)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<i8>", into = "Vec<i8>")]
pub struct SpinConfiguration {
    spins: Vec<i8>,
}

impl TryFrom<Vec<i8>> for SpinConfiguration {
    type Error = Error;
    fn try_from(spins: Vec<i8>) -> Result<Self> {
        SpinConfiguration::new(spins)
    }
}

impl From<SpinConfiguration> for Vec<i8> {
    fn from(c: SpinConfiguration) -> Vec<i8> {
        c.spins
    }
}

impl SpinConfiguration {
    pub fn new(spins: Vec<i8>) -> Result<Self> {
        if let Some(i) = spins.iter().position(|&s| s != 1 && s != -1) {
            return Err(Error::invalid("spins", format!("entry {i} is {} but must be +1 or -1", spins[i])));
        }
        Ok(SpinConfiguration { spins })
    }

    pub fn all_up(l: usize) -> Self {
        SpinConfiguration { spins: vec![1; l] }
    }

    /// All spins +1 except the two marked sites, which take the values of `state`.
    pub fn with_two_point(l: usize, x1: usize, x2: usize, state: TwoPointState) -> Self {
        let mut c = Self::all_up(l);
        let (a, b) = state.spins();
        c.spins[x1 % l] = a;
        c.spins[x2 % l] = b;
        c
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    /// Spin at `i` with periodic indexing (negative indices allowed).
    pub fn get(&self, i: isize) -> i8 {
        let l = self.spins.len() as isize;
        self.spins[i.rem_euclid(l) as usize]
    }

    pub fn set(&mut self, i: usize, s: i8) {
        assert!(s == 1 || s == -1, "spin must be +1 or -1");
        let l = self.spins.len();
        self.spins[i % l] = s;
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn restriction(&self, x1: usize, x2: usize) -> TwoPointState {
        TwoPointState::from_spins(self.get(x1 as isize), self.get(x2 as isize))
    }
}

/// Ring distance between two sites.
pub fn ring_distance(a: usize, b: usize, l: usize) -> usize {
    let d = a.abs_diff(b) % l;
    d.min(l - d)
}

#[inline]
fn field(k: f64, gamma: f64, left: i8, centre: i8, right: i8) -> f64 {
    k * f64::from(left + right) + (1.0 - gamma) * f64::from(centre)
}

pub fn local_field(config: &SpinConfiguration, i: usize, params: &LatticeParams) -> f64 {
    let i = i as isize;
    field(params.k, params.gamma, config.get(i - 1), config.get(i), config.get(i + 1))
}

#[inline]
fn sgn(x: f64) -> i8 {
    if x >= 0.0 {
        1
    } else {
        -1
    }
}

/// One synchronous update of `cur` into `next` with coupling `k` at global
/// step `step`. When `focus` is given only sites within `radius` of one of the
/// centres are refreshed; the others are copied unchanged.
fn update(
    cur: &[i8],
    next: &mut [i8],
    k: f64,
    gamma: f64,
    step: u64,
    noise: &NoiseStream,
    focus: Option<(&[usize], usize)>,
) {
    let l = cur.len();
    for i in 0..l {
        if let Some((centres, radius)) = focus {
            if centres.iter().all(|&c| ring_distance(i, c, l) > radius) {
                next[i] = cur[i];
                continue;
            }
        }
        let left = cur[(i + l - 1) % l];
        let right = cur[(i + 1) % l];
        next[i] = sgn(field(k, gamma, left, cur[i], right) + noise.normal(i, step));
    }
}

pub fn step(config: &SpinConfiguration, step_index: u64, params: &LatticeParams, noise: &NoiseStream) -> SpinConfiguration {
    let mut next = config.spins.clone();
    update(&config.spins, &mut next, params.k, params.gamma, step_index, noise, None);
    SpinConfiguration { spins: next }
}

/// Applies `step` with indices 0..n_steps.
pub fn run_discrete(config: &SpinConfiguration, n_steps: usize, params: &LatticeParams, noise: &NoiseStream) -> SpinConfiguration {
    let couplings = vec![params.k; n_steps];
    let mut cur = config.spins.clone();
    let mut next = cur.clone();
    evolve(&mut cur, &mut next, params.gamma, &couplings, noise, None);
    SpinConfiguration { spins: cur }
}

/// Runs the chain for a Poisson(T) number of steps drawn from `noise`.
pub fn run_poissonized(config: &SpinConfiguration, t: f64, params: &LatticeParams, noise: &NoiseStream) -> (SpinConfiguration, usize) {
    let n = noise.poisson(t);
    (run_discrete(config, n, params, noise), n)
}

/// As `run_poissonized`, with the coupling at each jump read from `k_at`
/// evaluated at the jump time.
pub fn run_poissonized_with<F: Fn(f64) -> f64>(
    config: &SpinConfiguration,
    t: f64,
    params: &LatticeParams,
    k_at: F,
    noise: &NoiseStream,
) -> (SpinConfiguration, usize) {
    let couplings = jump_couplings(t, &k_at, noise);
    let mut cur = config.spins.clone();
    let mut next = cur.clone();
    evolve(&mut cur, &mut next, params.gamma, &couplings, noise, None);
    (SpinConfiguration { spins: cur }, couplings.len())
}

/// Coupling in force at each of the Poisson(T) jumps: the jump times are the
/// order statistics of N uniforms on [0, T].
pub(crate) fn jump_couplings<F: Fn(f64) -> f64>(t: f64, k_at: &F, noise: &NoiseStream) -> Vec<f64> {
    let n = noise.poisson(t);
    let mut times: Vec<f64> = (0..n as u64).map(|j| t * noise.jump_uniform(j)).collect();
    times.sort_by(f64::total_cmp);
    times.into_iter().map(k_at).collect()
}

/// Runs `couplings.len()` steps in place (result ends in `cur`). With a
/// `focus` of (centres, margin) only the backward light cone of the sites
/// within `margin` of the centres is updated, so those sites come out exactly
/// as in a full run while the rest of the ring is left stale.
pub(crate) fn evolve(
    cur: &mut Vec<i8>,
    next: &mut Vec<i8>,
    gamma: f64,
    couplings: &[f64],
    noise: &NoiseStream,
    focus: Option<(&[usize], usize)>,
) {
    let n = couplings.len();
    for (j, &k) in couplings.iter().enumerate() {
        let f = focus.map(|(c, margin)| (c, margin + (n - 1 - j)));
        update(cur, next, k, gamma, j as u64, noise, f);
        std::mem::swap(cur, next);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{normal_cdf, site_marginals_k0};
    use proptest::prelude::*;

    fn params(k: f64, gamma: f64) -> LatticeParams {
        LatticeParams::new(16, k, gamma, 42).unwrap()
    }

    #[test]
    fn local_field_examples() {
        let up = SpinConfiguration::all_up(5);
        assert_eq!(local_field(&up, 2, &params(0.0, 2.0)), -1.0);
        assert!((local_field(&up, 0, &params(0.1, 2.0)) + 0.8).abs() < 1e-15);
        let mut c = SpinConfiguration::all_up(5);
        c.set(3, -1);
        assert_eq!(local_field(&c, 3, &params(0.0, 1.5)), 0.5);
    }

    #[test]
    fn rejects_bad_params() {
        assert!(LatticeParams::new(2, 0.0, 2.0, 0).is_err());
        assert!(LatticeParams::new(8, 0.0, 1.0, 0).is_err());
        assert!(SpinConfiguration::new(vec![1, 0, -1]).is_err());
    }

    #[test]
    fn zero_steps_is_identity_and_composition_holds() {
        let p = params(0.2, 2.0);
        let noise = p.noise();
        let mut c = SpinConfiguration::all_up(16);
        c.set(4, -1);
        assert_eq!(run_discrete(&c, 0, &p, &noise), c);
        let two = step(&step(&c, 0, &p, &noise), 1, &p, &noise);
        assert_eq!(run_discrete(&c, 2, &p, &noise), two);
        assert_eq!(step(&c, 0, &p, &noise), step(&c, 0, &p, &noise));
    }

    #[test]
    fn poissonized_zero_time() {
        let p = params(0.1, 2.0);
        let c = SpinConfiguration::all_up(16);
        assert_eq!(run_poissonized(&c, 0.0, &p, &p.noise()), (c, 0));
    }

    #[test]
    fn large_gamma_flips_deterministically() {
        // the stay probability from +1 at K = 0 is Phi(1 - gamma)
        assert!(normal_cdf(1.0 - 40.0) < 1e-300);
        let p = params(0.0, 40.0);
        let c = SpinConfiguration::all_up(16);
        let next = step(&c, 0, &p, &p.noise());
        assert!(next.spins().iter().all(|&s| s == -1));
    }

    #[test]
    fn flip_rate_matches_normal_cdf() {
        let p = LatticeParams::new(1000, 0.0, 2.0, 5).unwrap();
        let noise = p.noise();
        let c = SpinConfiguration::all_up(1000);
        let mut stays = 0usize;
        let steps = 1000;
        for s in 0..steps {
            stays += step(&c, s, &p, &noise).spins().iter().filter(|&&x| x == 1).count();
        }
        let n = (1000 * steps) as f64;
        let q = normal_cdf(-1.0);
        let rate = stays as f64 / n;
        assert!((rate - q).abs() < 4.0 * (q * (1.0 - q) / n).sqrt());
    }

    #[test]
    fn marginal_after_five_steps() {
        let p = LatticeParams::new(12, 0.0, 2.0, 9).unwrap();
        let c = SpinConfiguration::all_up(12);
        let reps = 100_000u64;
        let mut up = 0usize;
        for r in 0..reps {
            let out = run_discrete(&c, 5, &p, &p.noise().fork(r));
            up += out.spins().iter().filter(|&&x| x == 1).count();
        }
        let n = (reps * 12) as f64;
        let y1 = site_marginals_k0(5, 2.0).unwrap().y1;
        // sites are independent at K = 0
        assert!((up as f64 / n - y1).abs() < 4.0 * (y1 * (1.0 - y1) / n).sqrt());
    }

    #[test]
    fn synchronous_update_ignores_visit_order() {
        let p = params(0.3, 1.7);
        let noise = p.noise();
        let mut c = SpinConfiguration::all_up(16);
        for i in [1, 2, 7, 11] {
            c.set(i, -1);
        }
        let reference = step(&c, 3, &p, &noise);
        // visit sites in reverse, reading only the old configuration
        let mut out = vec![0i8; 16];
        for i in (0..16).rev() {
            let h = local_field(&c, i, &p) + noise.normal(i, 3);
            out[i] = if h >= 0.0 { 1 } else { -1 };
        }
        assert_eq!(out, reference.spins());
    }

    proptest! {
        #[test]
        fn light_cone(bits in proptest::collection::vec(any::<bool>(), 24), n in 0usize..=6, site in 0usize..24, far in 0usize..24, seed in any::<u64>()) {
            let p = LatticeParams::new(24, 0.4, 1.6, seed).unwrap();
            let noise = p.noise();
            let spins: Vec<i8> = bits.iter().map(|&b| if b { 1 } else { -1 }).collect();
            let a = SpinConfiguration::new(spins).unwrap();
            prop_assume!(ring_distance(site, far, 24) > n);
            let mut b = a.clone();
            b.set(far, -a.get(far as isize));
            let ra = run_discrete(&a, n, &p, &noise);
            let rb = run_discrete(&b, n, &p, &noise);
            prop_assert_eq!(ra.get(site as isize), rb.get(site as isize));
        }

        #[test]
        fn focused_evolution_matches_full(bits in proptest::collection::vec(any::<bool>(), 20), n in 0usize..=5, x1 in 0usize..20, x2 in 0usize..20, seed in any::<u64>()) {
            let p = LatticeParams::new(20, 0.25, 2.0, seed).unwrap();
            let noise = p.noise();
            let spins: Vec<i8> = bits.iter().map(|&b| if b { 1 } else { -1 }).collect();
            let c = SpinConfiguration::new(spins).unwrap();
            let full = run_discrete(&c, n, &p, &noise);
            let mut cur = c.spins().to_vec();
            let mut next = cur.clone();
            evolve(&mut cur, &mut next, p.gamma, &vec![p.k; n], &noise, Some((&[x1, x2], 1)));
            for s in 0..20 {
                if ring_distance(s, x1, 20) <= 1 || ring_distance(s, x2, 20) <= 1 {
                    prop_assert_eq!(cur[s], full.spins()[s]);
                }
            }
        }
    }
}
