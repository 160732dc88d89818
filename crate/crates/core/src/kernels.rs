//! Two-point transition kernels: closed forms at K = 0, their Poisson
//! mixtures, and Monte-Carlo estimates for arbitrary coupling.

use crate::dynamics::{evolve, ring_distance, LatticeParams, SpinConfiguration};
use crate::error::{check_gamma, Error, Result};
use crate::mat4::{Mat4, Vec4};
use crate::noise::NoiseStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicBool, Ordering};

/// Restricted state at (x1, x2): S1 = (+,+), S2 = (-,+), S3 = (+,-), S4 = (-,-).
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TwoPointState {
    S1,
    S2,
    S3,
    S4,
}

impl TwoPointState {
    pub const ALL: [TwoPointState; 4] = [Self::S1, Self::S2, Self::S3, Self::S4];

    /// Zero-based index (S1 -> 0).
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i]
    }

    pub fn from_spins(a: i8, b: i8) -> Self {
        match (a > 0, b > 0) {
            (true, true) => Self::S1,
            (false, true) => Self::S2,
            (true, false) => Self::S3,
            (false, false) => Self::S4,
        }
    }

    pub fn spins(self) -> (i8, i8) {
        match self {
            Self::S1 => (1, 1),
            Self::S2 => (-1, 1),
            Self::S3 => (1, -1),
            Self::S4 => (-1, -1),
        }
    }
}

/// Standard normal CDF through `erfc`, accurate in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Single-site n-step laws at K = 0: y1 = p(+ -> +), y2 = p(- -> +),
/// y3 = p(+ -> -), y4 = p(- -> -).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SiteMarginals {
    pub y1: f64,
    pub y2: f64,
    pub y3: f64,
    pub y4: f64,
}

impl SiteMarginals {
    /// Ratio y2 / y1.
    pub fn c(&self) -> f64 {
        self.y2 / self.y1
    }

    /// Single-site transition matrix, entry [to][from] with index 0 = +1.
    pub fn site_matrix(&self) -> [[f64; 2]; 2] {
        [[self.y1, self.y2], [self.y3, self.y4]]
    }
}

fn marginals_unchecked(n: usize, gamma: f64) -> SiteMarginals {
    if n == 0 {
        return SiteMarginals { y1: 1.0, y2: 0.0, y3: 0.0, y4: 1.0 };
    }
    let a = normal_cdf(1.0 - gamma);
    let r = a - normal_cdf(gamma - 1.0);
    let drift = (a - 0.5) * r.powi(n as i32 - 1);
    let y1 = drift + 0.5;
    let y2 = 0.5 - drift;
    SiteMarginals { y1, y2, y3: y2, y4: y1 }
}

pub fn site_marginals_k0(n: usize, gamma: f64) -> Result<SiteMarginals> {
    check_gamma(gamma)?;
    if n == 0 {
        return Err(Error::invalid("n", "site marginals are defined for n >= 1"));
    }
    Ok(marginals_unchecked(n, gamma))
}

/// Column-stochastic 4x4 kernel; `entries[i][l]` is the probability of
/// landing in S_i when starting from S_l.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMatrix {
    pub entries: Mat4,
}

impl KernelMatrix {
    pub fn column(&self, l: usize) -> Vec4 {
        [0, 1, 2, 3].map(|i| self.entries.0[i][l])
    }

    pub fn column_sums(&self) -> Vec4 {
        [0, 1, 2, 3].map(|l| self.column(l).iter().sum())
    }

    pub fn det(&self) -> f64 {
        self.entries.det()
    }
}

/// Tensor square of a single-site kernel in the S1..S4 ordering.
fn tensor_square(m: &SiteMarginals) -> Mat4 {
    let s = m.site_matrix();
    // bit 0 of a state index is x1 being -1, bit 1 is x2 being -1
    Mat4::from_fn(|i, l| s[i & 1][l & 1] * s[i >> 1][l >> 1])
}

pub fn b_matrix(n: usize, gamma: f64) -> Result<KernelMatrix> {
    check_gamma(gamma)?;
    Ok(KernelMatrix {
        entries: tensor_square(&marginals_unchecked(n, gamma)),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoissonWeights {
    pub t: f64,
    pub eps: f64,
    /// Truncation level N.
    pub level: usize,
    /// w_0..w_N.
    pub weights: Vec<f64>,
    /// Mass beyond N, summed directly.
    pub tail: f64,
}

fn ln_poisson_pmf(k: usize, t: f64) -> f64 {
    -t + k as f64 * t.ln() - libm::lgamma(k as f64 + 1.0)
}

/// Sum of the Poisson(t) masses above `level`.
pub fn poisson_tail(t: f64, level: usize) -> f64 {
    if t == 0.0 {
        return 0.0;
    }
    let mut sum = 0.0;
    let mut k = level + 1;
    loop {
        let w = ln_poisson_pmf(k, t).exp();
        sum += w;
        if (k as f64 > t && w <= sum * 1e-18) || w == 0.0 && k as f64 > t {
            break;
        }
        k += 1;
    }
    sum
}

pub fn poisson_weights(t: f64, eps: f64) -> Result<PoissonWeights> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid("t", format!("horizon must be finite and nonnegative (got {t})")));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::invalid("eps", format!("truncation tolerance must lie in (0, 1) (got {eps})")));
    }
    if t == 0.0 {
        return Ok(PoissonWeights { t, eps, level: 0, weights: vec![1.0], tail: 0.0 });
    }
    let mut level = 0;
    let mut tail = poisson_tail(t, 0);
    while tail >= eps {
        level += 1;
        tail = poisson_tail(t, level);
    }
    let weights = (0..=level).map(|k| ln_poisson_pmf(k, t).exp()).collect();
    Ok(PoissonWeights { t, eps, level, weights, tail })
}

/// Level q with P(N > q) below 1e-9, the horizon used for light-cone checks.
pub fn poisson_quantile(t: f64) -> usize {
    poisson_weights(t, 1e-9).map(|w| w.level).unwrap_or(0)
}

/// Truncated Poisson mixture of B(k) together with the weights used.
pub fn poissonized_b(t: f64, gamma: f64, eps: f64) -> Result<(KernelMatrix, PoissonWeights)> {
    check_gamma(gamma)?;
    let w = poisson_weights(t, eps)?;
    let mut m = Mat4::ZERO;
    for (k, &wk) in w.weights.iter().enumerate() {
        m = m + tensor_square(&marginals_unchecked(k, gamma)).scale(wk);
    }
    Ok((KernelMatrix { entries: m }, w))
}

/// det of the truncated mixture by elimination, cross-checked against the
/// product of its eigenvalues: the mass, the weighted mean of y1 - y2 (double)
/// and the weighted mean of (y1 - y2)^2.
pub fn det_bhat(t: f64, gamma: f64, eps: f64) -> Result<f64> {
    let (b, w) = poissonized_b(t, gamma, eps)?;
    let elim = b.det();
    let (mut mass, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for (k, &wk) in w.weights.iter().enumerate() {
        let y = marginals_unchecked(k, gamma);
        let d = y.y1 - y.y2;
        mass += wk;
        m1 += wk * d;
        m2 += wk * d * d;
    }
    let factored = mass * m1 * m1 * m2;
    if (elim - factored).abs() > 1e-10 * factored.abs() {
        return Err(Error::Consistency(format!(
            "det of the Poissonized kernel: elimination gives {elim:e}, factorisation gives {factored:e}"
        )));
    }
    Ok(elim)
}

/// Exact one-step law of the restricted state given the local fields at x1 and x2.
pub fn one_step_kernel(h1: f64, h2: f64) -> Vec4 {
    let (p1, q1) = (normal_cdf(h1), normal_cdf(-h1));
    let (p2, q2) = (normal_cdf(h2), normal_cdf(-h2));
    [p1 * p2, q1 * p2, p1 * q2, q1 * q2]
}

/// Empirical kernel column with binomial standard errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelColumn {
    pub start: TwoPointState,
    pub probs: Vec4,
    pub stderr: Vec4,
    pub counts: [u64; 4],
    pub samples: usize,
}

impl KernelColumn {
    fn from_counts(start: TwoPointState, counts: [u64; 4]) -> Self {
        let n: u64 = counts.iter().sum();
        let nf = n as f64;
        let probs = counts.map(|c| c as f64 / nf);
        let stderr = probs.map(|p| (p * (1.0 - p) / nf).sqrt());
        KernelColumn { start, probs, stderr, counts, samples: n as usize }
    }
}

static LIGHT_CONE_CHECK: AtomicBool = AtomicBool::new(true);

/// Turns the ring-size check off (or back on) for the whole process. With it
/// off, runs on rings shorter than the light cone are allowed and wrap around.
pub fn enforce_light_cone(on: bool) {
    LIGHT_CONE_CHECK.store(on, Ordering::Relaxed);
}

pub(crate) fn check_light_cone(l: usize, horizon: usize, x1: usize, x2: usize) -> Result<()> {
    if !LIGHT_CONE_CHECK.load(Ordering::Relaxed) {
        return Ok(());
    }
    let separation = ring_distance(x1, x2, l);
    let required = 2 * horizon + separation + 1;
    if l < required {
        return Err(Error::LightCone { l, required, horizon, separation });
    }
    Ok(())
}

/// Block size for replica-parallel loops. Results are merged in block order.
pub(crate) const BLOCK: usize = 1 << 13;

pub(crate) fn blocks(samples: usize) -> Vec<std::ops::Range<usize>> {
    (0..samples.div_ceil(BLOCK))
        .map(|b| b * BLOCK..((b + 1) * BLOCK).min(samples))
        .collect()
}

#[derive(Clone, Copy)]
enum Clock {
    Steps(usize),
    Poisson(f64),
}

fn mc_column(
    params: &LatticeParams,
    start: &SpinConfiguration,
    x1: usize,
    x2: usize,
    clock: Clock,
    samples: usize,
    noise: &NoiseStream,
) -> Result<KernelColumn> {
    params.validate()?;
    if samples == 0 {
        return Err(Error::invalid("samples", "must be at least 1"));
    }
    if start.len() != params.l {
        return Err(Error::invalid("start", format!("configuration has {} sites but L = {}", start.len(), params.l)));
    }
    let horizon = match clock {
        Clock::Steps(n) => n,
        Clock::Poisson(t) => poisson_quantile(t),
    };
    check_light_cone(params.l, horizon, x1, x2)?;
    let (x1, x2) = (x1 % params.l, x2 % params.l);
    let partial: Vec<[u64; 4]> = blocks(samples)
        .into_par_iter()
        .map(|range| {
            let mut counts = [0u64; 4];
            let mut cur = Vec::with_capacity(params.l);
            let mut next = vec![0i8; params.l];
            for r in range {
                let stream = noise.fork(r as u64);
                let n = match clock {
                    Clock::Steps(n) => n,
                    Clock::Poisson(t) => stream.poisson(t),
                };
                cur.clear();
                cur.extend_from_slice(start.spins());
                evolve(&mut cur, &mut next, params.gamma, &vec![params.k; n], &stream, Some((&[x1, x2], 0)));
                counts[TwoPointState::from_spins(cur[x1], cur[x2]).index()] += 1;
            }
            counts
        })
        .collect();
    let mut counts = [0u64; 4];
    for c in partial {
        for i in 0..4 {
            counts[i] += c[i];
        }
    }
    Ok(KernelColumn::from_counts(start.restriction(x1, x2), counts))
}

pub fn mc_two_point_kernel(
    params: &LatticeParams,
    start: &SpinConfiguration,
    x1: usize,
    x2: usize,
    n_steps: usize,
    samples: usize,
    noise: &NoiseStream,
) -> Result<KernelColumn> {
    mc_column(params, start, x1, x2, Clock::Steps(n_steps), samples, noise)
}

pub fn mc_poissonized_two_point_kernel(
    params: &LatticeParams,
    start: &SpinConfiguration,
    x1: usize,
    x2: usize,
    t: f64,
    samples: usize,
    noise: &NoiseStream,
) -> Result<KernelColumn> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid("T", format!("must be finite and nonnegative (got {t})")));
    }
    mc_column(params, start, x1, x2, Clock::Poisson(t), samples, noise)
}

/// Serialized kernel: column-major entries plus the parameters that produced them.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub entries: Vec<f64>,
    pub meta: KernelMeta,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelMeta {
    pub t_or_n: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub gamma: f64,
    pub eps: f64,
    pub samples: usize,
    pub seed: u64,
}

impl KernelRecord {
    pub fn new(m: &KernelMatrix, meta: KernelMeta) -> Self {
        KernelRecord { entries: m.entries.to_column_major().to_vec(), meta }
    }

    pub fn matrix(&self) -> Result<KernelMatrix> {
        let arr: [f64; 16] = self
            .entries
            .as_slice()
            .try_into()
            .map_err(|_| Error::invalid("entries", "kernel must have 16 entries"))?;
        Ok(KernelMatrix { entries: Mat4::from_column_major(&arr) })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Composite Gauss-Legendre on [-40, x], 64 nodes per panel.
    fn cdf_by_quadrature(x: f64) -> f64 {
        let (nodes, weights) = gauss_legendre(64);
        let panels = 200;
        let (a, b) = (-40.0, x);
        let h = (b - a) / panels as f64;
        let mut s = 0.0;
        for p in 0..panels {
            let lo = a + p as f64 * h;
            for (t, w) in nodes.iter().zip(&weights) {
                let u = lo + 0.5 * h * (t + 1.0);
                s += 0.5 * h * w * (-0.5 * u * u).exp();
            }
        }
        s / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        for i in 0..n {
            let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (mut p1, mut p2) = (1.0, 0.0);
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
                }
                let pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
                let dz = p1 / pp;
                z -= dz;
                if dz.abs() < 1e-16 {
                    let pp = {
                        let (mut p1, mut p2) = (1.0, 0.0);
                        for j in 0..n {
                            let p3 = p2;
                            p2 = p1;
                            p1 = ((2 * j + 1) as f64 * z * p2 - j as f64 * p3) / (j + 1) as f64;
                        }
                        n as f64 * (z * p1 - p2) / (z * z - 1.0)
                    };
                    x[i] = z;
                    w[i] = 2.0 / ((1.0 - z * z) * pp * pp);
                    break;
                }
            }
        }
        (x, w)
    }

    /// Single-site chain raised to the n-th power.
    fn site_power(n: usize, gamma: f64) -> [[f64; 2]; 2] {
        let stay = normal_cdf(1.0 - gamma);
        let p = [[stay, 1.0 - stay], [1.0 - stay, stay]];
        let mut acc = [[1.0, 0.0], [0.0, 1.0]];
        for _ in 0..n {
            let mut next = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    next[i][j] = (0..2).map(|k| p[i][k] * acc[k][j]).sum();
                }
            }
            acc = next;
        }
        acc
    }

    #[test]
    fn normal_cdf_values() {
        assert_eq!(normal_cdf(0.0), 0.5);
        assert!((normal_cdf(-1.0) - cdf_by_quadrature(-1.0)).abs() < 1e-12);
        assert!((normal_cdf(-1.0) - 0.158_655_253_931_457_05).abs() < 1e-15);
    }

    #[test]
    fn marginals_match_matrix_power() {
        let m = site_marginals_k0(3, 2.0).unwrap();
        let p = site_power(3, 2.0);
        assert!((m.y1 - p[0][0]).abs() < 1e-14);
        assert!((m.y2 - p[0][1]).abs() < 1e-14);
        assert_eq!(site_marginals_k0(1, 2.0).unwrap().y1, normal_cdf(-1.0));
        let far = site_marginals_k0(200, 2.0).unwrap();
        assert!((far.y1 - 0.5).abs() < 1e-15 && (far.y2 - 0.5).abs() < 1e-15);
        assert!(site_marginals_k0(1, 1.0).is_err());
        assert!(site_marginals_k0(0, 2.0).is_err());
    }

    #[test]
    fn b_matrix_examples() {
        assert_eq!(b_matrix(0, 2.0).unwrap().entries, Mat4::identity());
        let b = b_matrix(1, 2.0).unwrap();
        let (p, q) = (normal_cdf(-1.0), normal_cdf(1.0));
        assert!((b.entries[(0, 0)] - p * p).abs() < 1e-15);
        assert!((b.entries[(1, 0)] - p * q).abs() < 1e-15);
        assert!(b.det() > 0.0);
        assert!(b_matrix(2, 0.5).is_err());
    }

    #[test]
    fn b_matrix_matches_displayed_products() {
        for n in 1..6 {
            let y = site_marginals_k0(n, 1.7).unwrap();
            let b = b_matrix(n, 1.7).unwrap().entries;
            let (y1, y2, y3, y4) = (y.y1, y.y2, y.y3, y.y4);
            let expect = [
                [y1 * y1, y1 * y2, y2 * y1, y2 * y2],
                [y1 * y3, y1 * y4, y2 * y3, y2 * y4],
                [y3 * y1, y3 * y2, y4 * y1, y4 * y2],
                [y3 * y3, y3 * y4, y4 * y3, y4 * y4],
            ];
            assert!((b - Mat4(expect)).max_abs() < 1e-14);
        }
    }

    #[test]
    fn poisson_weights_examples() {
        let w = poisson_weights(0.0, 1e-10).unwrap();
        assert_eq!((w.level, w.weights.clone()), (0, vec![1.0]));
        let w = poisson_weights(2.0, 1e-12).unwrap();
        // oracle: 200-term direct sum of the pmf by recurrence
        let mut pmf = vec![(-2.0f64).exp()];
        for k in 1..200 {
            let prev = pmf[k - 1];
            pmf.push(prev * 2.0 / k as f64);
        }
        let tail = |n: usize| pmf[n + 1..].iter().sum::<f64>();
        assert!(tail(w.level) < 1e-12);
        assert!(tail(w.level - 1) >= 1e-12);
        assert!((w.weights.iter().sum::<f64>() + w.tail - 1.0).abs() < 1e-14);
        assert!(poisson_weights(1.0, 0.0).is_err());
    }

    #[test]
    fn poissonized_kernel_examples() {
        let (b, _) = poissonized_b(0.0, 2.0, 1e-10).unwrap();
        assert_eq!(b.entries, Mat4::identity());
        let (b, w) = poissonized_b(1.0, 2.0, 1e-10).unwrap();
        for s in b.column_sums() {
            assert!((s - (1.0 - w.tail)).abs() < 1e-12);
        }
        assert!(b.det() > 0.0);
        assert_eq!(det_bhat(0.0, 2.0, 1e-10).unwrap(), 1.0);
        for t in [0.5, 1.0, 2.0] {
            assert!(det_bhat(t, 2.0, 1e-10).unwrap() > 0.0);
        }
    }

    #[test]
    fn mc_kernel_single_sample_and_light_cone() {
        let p = LatticeParams::new(12, 0.1, 2.0, 1).unwrap();
        let start = SpinConfiguration::all_up(12);
        let col = mc_two_point_kernel(&p, &start, 3, 4, 2, 1, &p.noise()).unwrap();
        assert_eq!(col.probs.iter().filter(|&&x| x == 1.0).count(), 1);
        let err = mc_two_point_kernel(&p, &start, 0, 6, 3, 10, &p.noise()).unwrap_err();
        assert!(matches!(err, Error::LightCone { .. }));
        let col = mc_poissonized_two_point_kernel(&p, &start, 3, 4, 0.0, 50, &p.noise()).unwrap();
        assert_eq!(col.probs, [1.0, 0.0, 0.0, 0.0]);
    }

    fn within(col: &KernelColumn, exact: &Vec4, sigmas: f64) -> bool {
        (0..4).all(|i| {
            let se = (exact[i] * (1.0 - exact[i]) / col.samples as f64).sqrt();
            (col.probs[i] - exact[i]).abs() <= sigmas * se + 1e-12
        })
    }

    #[test]
    fn mc_kernel_matches_closed_form_at_k0() {
        let p = LatticeParams::new(32, 0.0, 2.0, 17).unwrap();
        let start = SpinConfiguration::all_up(32);
        let col = mc_two_point_kernel(&p, &start, 2, 3, 2, 200_000, &p.noise()).unwrap();
        assert!((col.probs.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(within(&col, &b_matrix(2, 2.0).unwrap().column(0), 4.0));

        let col = mc_poissonized_two_point_kernel(&p, &start, 2, 3, 1.0, 200_000, &p.noise()).unwrap();
        let (b, _) = poissonized_b(1.0, 2.0, 1e-12).unwrap();
        assert!(within(&col, &b.column(0), 4.0));
    }

    #[test]
    fn mc_kernel_matches_one_step_fields() {
        let p = LatticeParams::new(10, 0.05, 2.0, 23).unwrap();
        let mut start = SpinConfiguration::all_up(10);
        start.set(5, -1);
        let col = mc_two_point_kernel(&p, &start, 4, 5, 1, 200_000, &p.noise()).unwrap();
        let h1 = crate::dynamics::local_field(&start, 4, &p);
        let h2 = crate::dynamics::local_field(&start, 5, &p);
        assert!(within(&col, &one_step_kernel(h1, h2), 4.0));
    }

    #[test]
    fn disjoint_seeds_agree() {
        let start = SpinConfiguration::all_up(40);
        let a = LatticeParams::new(40, 0.0, 2.0, 100).unwrap();
        let b = LatticeParams { seed: 200, ..a };
        let ca = mc_poissonized_two_point_kernel(&a, &start, 0, 1, 3.0, 100_000, &a.noise()).unwrap();
        let cb = mc_poissonized_two_point_kernel(&b, &start, 0, 1, 3.0, 100_000, &b.noise()).unwrap();
        for i in 0..4 {
            let se = (ca.stderr[i].powi(2) + cb.stderr[i].powi(2)).sqrt();
            assert!((ca.probs[i] - cb.probs[i]).abs() <= 5.0 * se + 1e-12);
        }
    }

    #[test]
    fn record_round_trip() {
        let b = b_matrix(3, 2.0).unwrap();
        let meta = KernelMeta { t_or_n: 3.0, k: 0.0, gamma: 2.0, eps: 1e-10, samples: 0, seed: 0 };
        let rec = KernelRecord::new(&b, meta);
        let json = serde_json::to_string(&rec).unwrap();
        let back: KernelRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back.matrix().unwrap(), b);
    }

    proptest! {
        #[test]
        fn reflection(x in -30.0..30.0f64) {
            prop_assert!((normal_cdf(x) + normal_cdf(-x) - 1.0).abs() < 1e-15);
        }

        #[test]
        fn marginal_symmetry_and_semigroup(n in 1usize..20, m in 1usize..20, gamma in 1.01..6.0f64) {
            let y = site_marginals_k0(n, gamma).unwrap();
            prop_assert!((y.y1 + y.y3 - 1.0).abs() < 1e-14);
            prop_assert!((y.y2 + y.y4 - 1.0).abs() < 1e-14);
            prop_assert!((y.y1 - y.y4).abs() < 1e-14 && (y.y2 - y.y3).abs() < 1e-14);
            let a = b_matrix(n, gamma).unwrap().entries;
            let b = b_matrix(m, gamma).unwrap().entries;
            let ab = b_matrix(n + m, gamma).unwrap().entries;
            prop_assert!((a * b - ab).max_abs() < 1e-13);
        }

        #[test]
        fn exact_columns_are_stochastic(n in 0usize..30, gamma in 1.01..6.0f64) {
            for s in b_matrix(n, gamma).unwrap().column_sums() {
                prop_assert!((s - 1.0).abs() < 1e-12);
            }
        }
    }
}
