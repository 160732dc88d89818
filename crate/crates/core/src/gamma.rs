//! Matrix representation of the carre du champ operator and its iterate on
//! two-point functions: for f over S1..S4 and F = P_h f,
//! 2 Gamma(F, F)(eta) = f^T N f and 4 Gamma_2(F, F)(eta) = f^T M f.

use crate::dynamics::{evolve, local_field, LatticeParams, SpinConfiguration};
use crate::error::{Error, Result};
use crate::kernels::{
    b_matrix, check_light_cone, one_step_kernel, poisson_quantile, poisson_weights, poissonized_b,
    KernelMatrix, TwoPointState,
};
use crate::mat4::{Mat4, Vec4};
use crate::noise::NoiseStream;
use crate::window::WindowChain;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Time horizon of the kernel inside F = P_h f.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Horizon {
    Steps(usize),
    /// Poissonized horizon; the mixture is truncated with tail below `eps`.
    Time { t: f64, eps: f64 },
}

impl Horizon {
    /// Mixture weights over step counts.
    pub fn weights(&self) -> Result<Vec<f64>> {
        match *self {
            Horizon::Steps(n) => {
                let mut w = vec![0.0; n + 1];
                w[n] = 1.0;
                Ok(w)
            }
            Horizon::Time { t, eps } => Ok(poisson_weights(t, eps)?.weights),
        }
    }

    /// Largest number of steps the horizon reaches (the 1 - 1e-9 quantile for Poisson).
    pub fn reach(&self) -> usize {
        match *self {
            Horizon::Steps(n) => n,
            Horizon::Time { t, .. } => poisson_quantile(t),
        }
    }

    /// The K = 0 kernel B(n) or its truncated Poisson mixture.
    pub fn k0_kernel(&self, gamma: f64) -> Result<KernelMatrix> {
        match *self {
            Horizon::Steps(n) => b_matrix(n, gamma),
            Horizon::Time { t, eps } => Ok(poissonized_b(t, gamma, eps)?.0),
        }
    }
}

/// Starting point eta: either only its restriction to (x1, x2), which is all
/// the K = 0 calculus sees, or a full ring configuration.
#[derive(Clone, Debug, PartialEq)]
pub enum Eta {
    Restricted(TwoPointState),
    Config { config: SpinConfiguration, x1: usize, x2: usize },
}

impl Eta {
    pub fn restriction(&self) -> TwoPointState {
        match self {
            Eta::Restricted(s) => *s,
            Eta::Config { config, x1, x2 } => config.restriction(*x1, *x2),
        }
    }

    pub fn describe(&self) -> String {
        match self {
            Eta::Restricted(s) => format!("{s:?}"),
            Eta::Config { config, x1, x2 } => {
                let code: String = config.spins().iter().map(|&s| if s > 0 { '+' } else { '-' }).collect();
                format!("{code} @ ({x1},{x2})")
            }
        }
    }
}

/// Where the transition probabilities b come from.
#[derive(Clone, Debug)]
pub enum KernelSource<'a> {
    /// Closed-form product kernel of the uncoupled chain.
    ExactK0 { gamma: f64 },
    /// Exact segment chain for arbitrary K.
    Window(&'a WindowChain),
    /// Sampled ring dynamics.
    MonteCarlo {
        params: LatticeParams,
        samples: usize,
        noise: NoiseStream,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BVector(pub Vec4);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaMeta {
    pub horizon: Horizon,
    #[serde(rename = "K")]
    pub k: f64,
    pub gamma: f64,
    pub eta: String,
    pub source: String,
    pub window_radius: Option<usize>,
    pub samples: usize,
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPair {
    pub n: Mat4,
    pub m: Mat4,
    /// Entrywise standard errors (sampled sources only).
    pub n_stderr: Option<Mat4>,
    pub m_stderr: Option<Mat4>,
    /// Asymmetry removed by symmetrisation.
    pub asymmetry: f64,
    pub meta: GammaMeta,
}

/// One-step law of the restricted state from a given restricted state at K = 0.
fn k0_one_step(gamma: f64) -> Result<KernelMatrix> {
    b_matrix(1, gamma)
}

/// N and M from a 4-state chain: `step[k][e]` is the one-step probability
/// e -> k and `b[k]` is the b-vector of state k.
fn assemble_reduced(step: &Mat4, b: &[Vec4; 4], e: usize) -> (Mat4, Mat4) {
    let diff = |x: &Vec4, y: &Vec4| -> Vec4 { [0, 1, 2, 3].map(|i| x[i] - y[i]) };
    let mut n = Mat4::ZERO;
    let mut i1 = Mat4::ZERO;
    let mut i2 = Mat4::ZERO;
    let mut mean = [0.0; 4];
    for w in 0..4 {
        let pw = step[(w, e)];
        let dw = diff(&b[w], &b[e]);
        n = n + Mat4::outer(&dw, &dw).scale(pw);
        i2 = i2 + Mat4::outer(&b[w], &b[w]).scale(pw);
        for i in 0..4 {
            mean[i] += pw * b[w][i];
        }
        for z in 0..4 {
            let a: Vec4 = [0, 1, 2, 3].map(|i| b[z][i] - 2.0 * b[w][i] + b[e][i]);
            i1 = i1 + Mat4::outer(&a, &a).scale(pw * step[(z, w)]);
        }
    }
    let m = i1 - i2.scale(2.0) + Mat4::outer(&mean, &mean).scale(2.0);
    (n, m)
}

pub fn b_vector(omega: &Eta, horizon: Horizon, source: &KernelSource) -> Result<BVector> {
    match source {
        KernelSource::ExactK0 { gamma } => Ok(BVector(horizon.k0_kernel(*gamma)?.column(omega.restriction().index()))),
        KernelSource::Window(chain) => {
            let s = window_state(chain, omega)?;
            let table = chain.b_table(&horizon.weights()?);
            Ok(BVector([0, 1, 2, 3].map(|i| table[i][s])))
        }
        KernelSource::MonteCarlo { params, samples, noise } => {
            let Eta::Config { config, x1, x2 } = omega else {
                return Err(Error::invalid("eta", "the sampled source needs a full configuration"));
            };
            let col = match horizon {
                Horizon::Steps(n) => crate::kernels::mc_two_point_kernel(params, config, *x1, *x2, n, *samples, noise)?,
                Horizon::Time { t, .. } => {
                    crate::kernels::mc_poissonized_two_point_kernel(params, config, *x1, *x2, t, *samples, noise)?
                }
            };
            Ok(BVector(col.probs))
        }
    }
}

fn window_state(chain: &WindowChain, eta: &Eta) -> Result<usize> {
    match eta {
        Eta::Config { config, x1, x2 } => chain.state_of(config, *x1, *x2),
        Eta::Restricted(_) => Err(Error::invalid("eta", "the window source needs a configuration covering the window")),
    }
}

pub fn gamma_pair(eta: &Eta, horizon: Horizon, source: &KernelSource) -> Result<GammaPair> {
    match source {
        KernelSource::ExactK0 { gamma } => {
            let bh = horizon.k0_kernel(*gamma)?;
            let step = k0_one_step(*gamma)?;
            let b = [0, 1, 2, 3].map(|k| bh.column(k));
            let (n, m) = assemble_reduced(&step.entries, &b, eta.restriction().index());
            Ok(finish(n, m, None, None, GammaMeta {
                horizon,
                k: 0.0,
                gamma: *gamma,
                eta: eta.describe(),
                source: "exact-k0".into(),
                window_radius: None,
                samples: 0,
                seed: None,
            }))
        }
        KernelSource::Window(chain) => {
            let s = window_state(chain, eta)?;
            let (n, m) = chain.gamma_tables(&horizon.weights()?)[s];
            Ok(finish(n, m, None, None, GammaMeta {
                horizon,
                k: chain.k(),
                gamma: chain.gamma(),
                eta: eta.describe(),
                source: "window".into(),
                window_radius: Some(chain.radius()),
                samples: 0,
                seed: None,
            }))
        }
        KernelSource::MonteCarlo { params, samples, noise } => {
            let Eta::Config { config, x1, x2 } = eta else {
                return Err(Error::invalid("eta", "the sampled source needs a full configuration"));
            };
            mc_gamma_pair(params, config, *x1, *x2, horizon, *samples, noise)
        }
    }
}

pub fn gamma_matrix_n(eta: &Eta, horizon: Horizon, source: &KernelSource) -> Result<Mat4> {
    Ok(gamma_pair(eta, horizon, source)?.n)
}

pub fn gamma2_matrix_m(eta: &Eta, horizon: Horizon, source: &KernelSource) -> Result<Mat4> {
    Ok(gamma_pair(eta, horizon, source)?.m)
}

fn finish(n: Mat4, m: Mat4, n_se: Option<Mat4>, m_se: Option<Mat4>, meta: GammaMeta) -> GammaPair {
    let asymmetry = n.asymmetry().max(m.asymmetry());
    GammaPair {
        n: n.symmetrized(),
        m: m.symmetrized(),
        n_stderr: n_se,
        m_stderr: m_se,
        asymmetry,
        meta,
    }
}

/// Number of batches used for sampled standard errors.
const MC_BATCHES: usize = 32;

/// Sampled N and M on the ring. Per outer sample omega and z are one and two
/// steps from eta; from each of eta, omega and z two independent
/// continuations over the horizon give unbiased products of conditional
/// expectations. The product of means in I3 uses the off-diagonal U-statistic.
/// Standard errors come from batch means.
fn mc_gamma_pair(
    params: &LatticeParams,
    eta: &SpinConfiguration,
    x1: usize,
    x2: usize,
    horizon: Horizon,
    samples: usize,
    noise: &NoiseStream,
) -> Result<GammaPair> {
    params.validate()?;
    if samples < 2 * MC_BATCHES {
        return Err(Error::invalid("samples", format!("at least {} samples are needed", 2 * MC_BATCHES)));
    }
    if eta.len() != params.l {
        return Err(Error::invalid("eta", format!("configuration has {} sites but L = {}", eta.len(), params.l)));
    }
    check_light_cone(params.l, horizon.reach() + 2, x1, x2)?;
    let (x1, x2) = (x1 % params.l, x2 % params.l);
    let l = params.l;

    struct Draw {
        n: Mat4,
        i1: Mat4,
        i2: Mat4,
        e1: Vec4,
        e2: Vec4,
    }

    let continue_from = |start: &[i8], stream: &NoiseStream, buf: &mut Vec<i8>, tmp: &mut Vec<i8>| -> Vec4 {
        let steps = match horizon {
            Horizon::Steps(n) => n,
            Horizon::Time { t, .. } => stream.poisson(t),
        };
        buf.clear();
        buf.extend_from_slice(start);
        evolve(buf, tmp, params.gamma, &vec![params.k; steps], stream, Some((&[x1, x2], 0)));
        let mut e = [0.0; 4];
        e[TwoPointState::from_spins(buf[x1], buf[x2]).index()] = 1.0;
        e
    };

    let draw = |r: usize, buf: &mut Vec<i8>, tmp: &mut Vec<i8>| -> Draw {
        let base = noise.fork(r as u64);
        let reach = horizon.reach();
        let mut omega = eta.spins().to_vec();
        evolve(&mut omega, tmp, params.gamma, &[params.k], &base.fork(0), Some((&[x1, x2], reach + 1)));
        let mut z = omega.clone();
        evolve(&mut z, tmp, params.gamma, &[params.k], &base.fork(1), Some((&[x1, x2], reach)));
        let mut y = [[[0.0; 4]; 3]; 2];
        for (a, copy) in y.iter_mut().enumerate() {
            for (role, start) in [eta.spins(), &omega[..], &z[..]].into_iter().enumerate() {
                copy[role] = continue_from(start, &base.fork(2 + 3 * a as u64 + role as u64), buf, tmp);
            }
        }
        let sym = |a: &Vec4, b: &Vec4| (Mat4::outer(a, b) + Mat4::outer(b, a)).scale(0.5);
        let d = |c: &[Vec4; 3]| -> Vec4 { [0, 1, 2, 3].map(|i| c[1][i] - c[0][i]) };
        let a2 = |c: &[Vec4; 3]| -> Vec4 { [0, 1, 2, 3].map(|i| c[2][i] - 2.0 * c[1][i] + c[0][i]) };
        Draw {
            n: sym(&d(&y[0]), &d(&y[1])),
            i1: sym(&a2(&y[0]), &a2(&y[1])),
            i2: sym(&y[0][1], &y[1][1]),
            e1: y[0][1],
            e2: y[1][1],
        }
    };

    let per_batch = samples / MC_BATCHES;
    let batch_estimates: Vec<(Mat4, Mat4)> = (0..MC_BATCHES)
        .into_par_iter()
        .map(|bi| {
            let mut buf = Vec::with_capacity(l);
            let mut tmp = vec![0i8; l];
            let (mut n, mut i1, mut i2) = (Mat4::ZERO, Mat4::ZERO, Mat4::ZERO);
            let (mut s1, mut s2) = ([0.0; 4], [0.0; 4]);
            let mut diag = Mat4::ZERO;
            for r in bi * per_batch..(bi + 1) * per_batch {
                let d = draw(r, &mut buf, &mut tmp);
                n = n + d.n;
                i1 = i1 + d.i1;
                i2 = i2 + d.i2;
                for i in 0..4 {
                    s1[i] += d.e1[i];
                    s2[i] += d.e2[i];
                }
                diag = diag + Mat4::outer(&d.e1, &d.e2);
            }
            let c = per_batch as f64;
            let i3 = (Mat4::outer(&s1, &s2) - diag).scale(1.0 / (c * (c - 1.0))).symmetrized();
            let n = n.scale(1.0 / c);
            let m = i1.scale(1.0 / c) - i2.scale(2.0 / c) + i3.scale(2.0);
            (n, m)
        })
        .collect();
    let b = MC_BATCHES as f64;
    let mean = |sel: &dyn Fn(&(Mat4, Mat4)) -> Mat4| -> (Mat4, Mat4) {
        let mu = batch_estimates.iter().fold(Mat4::ZERO, |acc, x| acc + sel(x)).scale(1.0 / b);
        let var = batch_estimates.iter().fold(Mat4::ZERO, |acc, x| {
            let d = sel(x) - mu;
            acc + Mat4::from_fn(|i, j| d[(i, j)] * d[(i, j)])
        });
        let se = Mat4::from_fn(|i, j| (var[(i, j)] / (b - 1.0) / b).sqrt());
        (mu, se)
    };
    let (n, n_se) = mean(&|x| x.0);
    let (m, m_se) = mean(&|x| x.1);
    Ok(finish(n, m, Some(n_se), Some(m_se), GammaMeta {
        horizon,
        k: params.k,
        gamma: params.gamma,
        eta: Eta::Config { config: eta.clone(), x1, x2 }.describe(),
        source: "monte-carlo".into(),
        window_radius: None,
        samples: per_batch * MC_BATCHES,
        seed: Some(params.seed),
    }))
}

/// Gamma(f, f)(eta) from the exact one-step law at (x1, x2).
pub fn gamma_of_f(f: &Vec4, eta: &SpinConfiguration, x1: usize, x2: usize, params: &LatticeParams) -> f64 {
    let q = one_step_kernel(local_field(eta, x1, params), local_field(eta, x2, params));
    let cur = f[eta.restriction(x1, x2).index()];
    0.5 * (0..4).map(|j| q[j] * (f[j] - cur).powi(2)).sum::<f64>()
}

/// Fixed matrices used to move between the f-basis and the kernel basis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformSet {
    pub q: [Mat4; 4],
    pub d1: Mat4,
    /// 4 x 16.
    pub d: [[f64; 16]; 4],
    pub i_masks: [Mat4; 4],
}

impl Default for TransformSet {
    fn default() -> Self {
        Self::new()
    }
}

impl TransformSet {
    pub fn new() -> Self {
        TransformSet {
            q: [1, 2, 3, 4].map(q_matrix),
            d1: Mat4([
                [0.0, -1.0, -1.0, -1.0],
                [0.0, 1.0, 0.0, 0.0],
                [0.0, 0.0, 1.0, 0.0],
                [0.0, 0.0, 0.0, 1.0],
            ]),
            d: D_MATRIX,
            i_masks: [1, 2, 3, 4].map(i_mask),
        }
    }
}

const D_MATRIX: [[f64; 16]; 4] = [
    [0., -1., -1., -1., 2., 1., 1., 1., 2., 1., 1., 1., 2., 1., 1., 1.],
    [0., 1., 0., 0., -2., -1., -2., -2., 0., 1., 0., 0., 0., 1., 0., 0.],
    [0., 0., 1., 0., 0., 0., 1., 0., -2., -2., -1., -2., 0., 0., 1., 0.],
    [0., 0., 0., 1., 0., 0., 0., 1., 0., 0., 0., 1., -2., -2., -2., -1.],
];

/// Identity with row `i` (1-based) replaced by ones.
pub fn q_matrix(i: usize) -> Mat4 {
    let mut q = Mat4::identity();
    q.0[i - 1] = [1.0; 4];
    q
}

/// Identity with rows `i` and `j` (1-based) exchanged.
pub fn p_swap(i: usize, j: usize) -> Mat4 {
    let mut p = Mat4::identity();
    p.0.swap(i - 1, j - 1);
    p
}

/// Identity with the `i`-th (1-based) diagonal entry zeroed.
pub fn i_mask(i: usize) -> Mat4 {
    let mut m = Mat4::identity();
    m.0[i - 1][i - 1] = 0.0;
    m
}

/// Permutation carrying index 1 to `i` while keeping the tensor structure:
/// for i = 2, 3, 4 it is P12 P34, P13 P24, P14 P23.
pub fn class_permutation(i: usize) -> Mat4 {
    match i {
        1 => Mat4::identity(),
        2 => p_swap(1, 2) * p_swap(3, 4),
        3 => p_swap(1, 3) * p_swap(2, 4),
        4 => p_swap(1, 4) * p_swap(2, 3),
        _ => panic!("class index must be 1..=4"),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StarMatrices {
    pub index: usize,
    pub m_star: Mat4,
    pub n_star: Mat4,
}

impl StarMatrices {
    /// (M* - c I_i, N* + c I_i).
    pub fn shifted(&self, c: f64) -> (Mat4, Mat4) {
        let mask = i_mask(self.index).scale(c);
        (self.m_star - mask, self.n_star + mask)
    }
}

/// Singularity threshold for the kernel inverted by `starred`.
pub const DET_THRESHOLD: f64 = 1e-12;

/// M*_i = T M T^T and N*_i = T N T^T with T = Q_i B^-1.
pub fn starred(pair: &GammaPair, i: usize, bhat: &KernelMatrix) -> Result<StarMatrices> {
    if !(1..=4).contains(&i) {
        return Err(Error::invalid("i", format!("class index must be 1..=4 (got {i})")));
    }
    let det = bhat.det();
    if det.abs() < DET_THRESHOLD {
        return Err(Error::Singular { det });
    }
    let inv = bhat.entries.inverse().ok_or(Error::Singular { det })?;
    let t = q_matrix(i) * inv;
    Ok(StarMatrices {
        index: i,
        m_star: pair.m.congruence(&t).symmetrized(),
        n_star: pair.n.congruence(&t).symmetrized(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub m1: Mat4,
    pub m2: Mat4,
    pub n1: Mat4,
    pub n2: Mat4,
    pub max_m2: f64,
    pub max_n2: f64,
    pub eps: f64,
    pub level: usize,
}

/// Mixture tail used for the untruncated reference.
const REFERENCE_TAIL: f64 = 1e-17;

/// Splits M and N at horizon t into the part built from the eps-truncated
/// Poisson mixture and the remainder, and checks |M2| <= 8 eps, |N2| <= 2 eps.
/// K = 0 uses the closed form; otherwise the segment chain `window`.
pub fn decompose(eta: &Eta, t: f64, source: &KernelSource, eps: f64) -> Result<Decomposition> {
    let level = poisson_weights(t, eps)?.level;
    let reference_tail = REFERENCE_TAIL.min(eps * 1e-3);
    let truncated = gamma_pair(eta, Horizon::Time { t, eps }, source)?;
    let full = gamma_pair(eta, Horizon::Time { t, eps: reference_tail }, source)?;
    let m2 = full.m - truncated.m;
    let n2 = full.n - truncated.n;
    let (max_m2, max_n2) = (m2.max_abs(), n2.max_abs());
    let slack = 1.0 + 1e-9;
    if max_m2 > 8.0 * eps * slack || max_n2 > 2.0 * eps * slack {
        return Err(Error::Consistency(format!(
            "truncation remainder too large: max|M2| = {max_m2:e} (bound {:e}), max|N2| = {max_n2:e} (bound {:e})",
            8.0 * eps,
            2.0 * eps
        )));
    }
    Ok(Decomposition { m1: truncated.m, m2, n1: truncated.n, n2, max_m2, max_n2, eps, level })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub horizon: Horizon,
    pub gamma: f64,
    pub shifts: Vec<f64>,
    pub max_deviation: f64,
    /// (i, matrix name, row, column, deviation) beyond tolerance.
    pub offending: Vec<(usize, String, usize, usize, f64)>,
    pub passed: bool,
}

pub const SIMILARITY_TOL: f64 = 1e-10;

/// Checks M*_i(S_i) = P M*_1(S_1) P^T for the class permutations P, the N*
/// analogue, and the versions shifted by -c I_i and +c I_i.
pub fn similarity_check_k0(horizon: Horizon, gamma: f64, shifts: &[f64]) -> Result<SimilarityReport> {
    let source = KernelSource::ExactK0 { gamma };
    let bhat = horizon.k0_kernel(gamma)?;
    let star = |i: usize| -> Result<StarMatrices> {
        let pair = gamma_pair(&Eta::Restricted(TwoPointState::from_index(i - 1)), horizon, &source)?;
        starred(&pair, i, &bhat)
    };
    let base = star(1)?;
    let mut all_shifts = vec![0.0];
    all_shifts.extend_from_slice(shifts);
    let mut offending = Vec::new();
    let mut max_deviation = 0.0f64;
    for i in 1..=4 {
        let si = star(i)?;
        let p = class_permutation(i);
        for &c in &all_shifts {
            let (m1, n1) = base.shifted(c);
            let (mi, ni) = si.shifted(c);
            for (name, lhs, rhs) in [("M*", mi, m1.congruence(&p)), ("N*", ni, n1.congruence(&p))] {
                for r in 0..4 {
                    for col in 0..4 {
                        let dev = (lhs[(r, col)] - rhs[(r, col)]).abs();
                        max_deviation = max_deviation.max(dev);
                        if dev > SIMILARITY_TOL {
                            offending.push((i, format!("{name} shift {c}"), r, col, dev));
                        }
                    }
                }
            }
        }
    }
    Ok(SimilarityReport {
        horizon,
        gamma,
        shifts: shifts.to_vec(),
        max_deviation,
        passed: offending.is_empty(),
        offending,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::normal_cdf;

    fn k0() -> KernelSource<'static> {
        KernelSource::ExactK0 { gamma: 2.0 }
    }

    #[test]
    fn b_vector_examples() {
        let s2 = Eta::Restricted(TwoPointState::S2);
        assert_eq!(b_vector(&s2, Horizon::Steps(0), &k0()).unwrap().0, [0.0, 1.0, 0.0, 0.0]);
        let s1 = Eta::Restricted(TwoPointState::S1);
        let b = b_vector(&s1, Horizon::Steps(1), &k0()).unwrap().0;
        assert_eq!(b, b_matrix(1, 2.0).unwrap().column(0));
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mixed_kernel_gives_zero_matrices() {
        // far horizon: every column of B is (1/4, ...)
        let pair = gamma_pair(&Eta::Restricted(TwoPointState::S3), Horizon::Steps(200), &k0()).unwrap();
        assert!(pair.n.max_abs() < 1e-15);
        assert!(pair.m.max_abs() < 1e-15);
    }

    #[test]
    fn n_star_is_diagonal_one_step_law() {
        let pair = gamma_pair(&Eta::Restricted(TwoPointState::S1), Horizon::Steps(2), &k0()).unwrap();
        let star = starred(&pair, 1, &b_matrix(2, 2.0).unwrap()).unwrap();
        let (a, b) = (normal_cdf(-1.0), normal_cdf(1.0));
        let expect = Mat4::diag([0.0, a * b, a * b, b * b]);
        assert!((star.n_star - expect).max_abs() < 1e-12);
    }

    #[test]
    fn q_conjugation_kills_first_row() {
        for e in TwoPointState::ALL {
            let pair = gamma_pair(&Eta::Restricted(e), Horizon::Time { t: 1.0, eps: 1e-12 }, &k0()).unwrap();
            for mat in [pair.n, pair.m] {
                let c = mat.congruence(&q_matrix(1));
                for j in 0..4 {
                    assert!(c[(0, j)].abs() < 1e-10 && c[(j, 0)].abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn a_equals_b_times_d() {
        // columns of A: second differences b(z) - 2 b(w) + b(S1) over the
        // 16 two-step paths (w, z) in row-major order
        let b = b_matrix(1, 2.0).unwrap();
        let mut a = [[0.0; 16]; 4];
        for w in 0..4 {
            for z in 0..4 {
                let col = 4 * w + z;
                for i in 0..4 {
                    a[i][col] = b.entries[(i, z)] - 2.0 * b.entries[(i, w)] + b.entries[(i, 0)];
                }
            }
        }
        let t = TransformSet::new();
        for i in 0..4 {
            for c in 0..16 {
                let bd: f64 = (0..4).map(|k| b.entries[(i, k)] * t.d[k][c]).sum();
                assert!((a[i][c] - bd).abs() < 1e-13, "entry ({i},{c})");
            }
        }
    }

    #[test]
    fn transforms_are_well_formed() {
        let t = TransformSet::new();
        for q in &t.q {
            let inv = q.inverse().unwrap();
            assert!(inv.0.iter().flatten().all(|x| (x - x.round()).abs() < 1e-14));
        }
        for (i, j) in [(1, 2), (1, 3), (2, 4), (3, 4)] {
            assert_eq!(p_swap(i, j) * p_swap(i, j), Mat4::identity());
        }
        assert_eq!(i_mask(3).trace(), 3.0);
    }

    #[test]
    fn starred_rejects_singular_kernel() {
        let pair = gamma_pair(&Eta::Restricted(TwoPointState::S1), Horizon::Steps(1), &k0()).unwrap();
        let singular = KernelMatrix { entries: Mat4::from_fn(|_, _| 0.25) };
        assert!(matches!(starred(&pair, 1, &singular), Err(Error::Singular { .. })));
    }

    #[test]
    fn similarity_holds_at_k0() {
        let r = similarity_check_k0(Horizon::Steps(2), 2.0, &[0.1, 0.7]).unwrap();
        assert!(r.passed, "{:?}", r.offending);
        assert!(r.max_deviation < 1e-12);
    }

    #[test]
    fn gamma_of_f_examples() {
        let p = LatticeParams::new(8, 0.0, 2.0, 0).unwrap();
        let eta = SpinConfiguration::all_up(8);
        assert_eq!(gamma_of_f(&[3.0; 4], &eta, 1, 2, &p), 0.0);
        let q = one_step_kernel(-1.0, -1.0);
        let ind = gamma_of_f(&[1.0, 0.0, 0.0, 0.0], &eta, 1, 2, &p);
        assert!((ind - 0.5 * (q[1] + q[2] + q[3])).abs() < 1e-15);
        // both sites may flip in the same step, so the cross term survives:
        // Gamma(sum) = 2b + 2b + 4b^2 with b the flip probability
        let sum = gamma_of_f(&[2.0, 0.0, 0.0, -2.0], &eta, 1, 2, &p);
        let b = normal_cdf(1.0);
        assert!((sum - (4.0 * b + 4.0 * b * b)).abs() < 1e-14);
    }

    #[test]
    fn gamma_of_f_matches_sampled_definition() {
        let p = LatticeParams::new(8, 0.0, 2.0, 3).unwrap();
        let eta = SpinConfiguration::all_up(8);
        let f = |c: &SpinConfiguration| f64::from(c.get(1) + c.get(2));
        let noise = p.noise();
        let n = 1_000_000u64;
        let (mut s, mut s2) = (0.0, 0.0);
        for r in 0..n {
            let w = crate::dynamics::step(&eta, 0, &p, &noise.fork(r));
            let g = 0.5 * (f(&w) - f(&eta)).powi(2);
            s += g;
            s2 += g * g;
        }
        let mean = s / n as f64;
        let se = ((s2 / n as f64 - mean * mean) / n as f64).sqrt();
        let exact = gamma_of_f(&[2.0, 0.0, 0.0, -2.0], &eta, 1, 2, &p);
        assert!((mean - exact).abs() < 4.0 * se);
    }

    #[test]
    fn decomposition_without_truncation_is_exact() {
        let d = decompose(&Eta::Restricted(TwoPointState::S1), 0.05, &k0(), 1e-15).unwrap();
        assert!(d.max_m2 < 1e-13 && d.max_n2 < 1e-13);
        let d = decompose(&Eta::Restricted(TwoPointState::S1), 1.0, &k0(), 1e-6).unwrap();
        assert!(d.max_n2 <= 2e-6 && d.max_m2 <= 8e-6);
        let full = gamma_pair(&Eta::Restricted(TwoPointState::S1), Horizon::Time { t: 1.0, eps: 1e-17 }, &k0()).unwrap();
        assert!((d.m1 + d.m2 - full.m).max_abs() < 1e-15);
    }

    #[test]
    fn window_matches_closed_form_at_k0() {
        let chain = WindowChain::new(0.0, 2.0, 1, 1).unwrap();
        let ring = SpinConfiguration::with_two_point(10, 4, 5, TwoPointState::S2);
        let eta = Eta::Config { config: ring, x1: 4, x2: 5 };
        let h = Horizon::Time { t: 1.0, eps: 1e-12 };
        let w = gamma_pair(&eta, h, &KernelSource::Window(&chain)).unwrap();
        let c = gamma_pair(&eta, h, &k0()).unwrap();
        assert!((w.n - c.n).max_abs() < 1e-13);
        assert!((w.m - c.m).max_abs() < 1e-13);
    }
}
