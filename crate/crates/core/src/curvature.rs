//! Symmetric 4x4 eigenproblems and the curvature constant rho, the ratio of
//! the Fiedler value of M* to the top eigenvalue of N*.

use crate::error::{check_gamma, Error, Result};
use crate::gamma::{gamma_pair, starred, Eta, Horizon, KernelSource};
use crate::kernels::{normal_cdf, poisson_weights, TwoPointState};
use crate::mat4::Mat4;
use crate::window::WindowChain;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Eigen-decomposition with ascending eigenvalues; column k of `vectors`
/// belongs to `values[k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spectrum4 {
    pub values: [f64; 4],
    pub vectors: Mat4,
}

pub const SYMMETRY_TOL: f64 = 1e-9;
const OFF_DIAGONAL_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 100;

fn off_diagonal(a: &Mat4) -> f64 {
    let mut s = 0.0;
    for p in 0..4 {
        for q in p + 1..4 {
            s += a[(p, q)] * a[(p, q)];
        }
    }
    s.sqrt()
}

/// Cyclic Jacobi. Sweeps continue until the off-diagonal norm is below
/// 1e-13 and below 1e-15 of the Frobenius norm, so small matrices still get
/// full relative accuracy.
pub fn eig_sym4(a: &Mat4) -> Result<Spectrum4> {
    let asym = a.asymmetry();
    if asym > SYMMETRY_TOL || asym.is_nan() {
        return Err(Error::NotSymmetric { asymmetry: asym });
    }
    let mut a = a.symmetrized();
    let mut v = Mat4::identity();
    let frob = a.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    let target = OFF_DIAGONAL_TOL.min(1e-15 * frob);
    let mut sweeps = 0;
    while off_diagonal(&a) > target {
        sweeps += 1;
        if sweeps > MAX_SWEEPS {
            return Err(Error::Consistency(format!(
                "Jacobi did not converge: off-diagonal norm {:e}",
                off_diagonal(&a)
            )));
        }
        for p in 0..3 {
            for q in p + 1..4 {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..4 {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..4 {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
                for k in 0..4 {
                    let (vkp, vkq) = (v[(k, p)], v[(k, q)]);
                    v[(k, p)] = c * vkp - s * vkq;
                    v[(k, q)] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order = [0, 1, 2, 3];
    order.sort_by(|&x, &y| a[(x, x)].total_cmp(&a[(y, y)]));
    Ok(Spectrum4 {
        values: order.map(|k| a[(k, k)]),
        vectors: Mat4::from_fn(|r, c| v[(r, order[c])]),
    })
}

/// Second smallest eigenvalue.
pub fn fiedler(a: &Mat4) -> Result<f64> {
    Ok(eig_sym4(a)?.values[1])
}

/// Smallest eigenvalue of M - rho N.
pub fn psd_margin(m: &Mat4, rho: f64, n: &Mat4) -> Result<f64> {
    Ok(eig_sym4(&(*m - n.scale(rho)))?.values[0])
}

/// Smaller root of the characteristic quadratic of the nonzero 2x2 block of
/// M*_1(S1) at K = 0, in terms of A = Phi(1 - gamma), B = Phi(gamma - 1).
pub fn quadratic_lambda2_k0(gamma: f64) -> Result<f64> {
    check_gamma(gamma)?;
    let z = 1.0 - gamma;
    let (a, b) = (normal_cdf(z), normal_cdf(-z));
    let (a2, b2) = (a * a, b * b);
    let lin = 8.0 * a2 * b2 + 2.0 * b2 + 2.0 * b2 * b2;
    let cst = 8.0 * a2 * b2 * (2.0 * b2 + 2.0 * b2 * b2) - 8.0 * a2 * a2 * b2 * b2;
    let disc = lin * lin - 4.0 * cst;
    if disc < 0.0 {
        return Err(Error::Consistency(format!("negative discriminant {disc:e} in the curvature quadratic")));
    }
    // 2c / (b + sqrt(D)) avoids cancellation in (b - sqrt(D)) / 2
    Ok(2.0 * cst / (lin + disc.sqrt()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    /// Class index 1..=4 of the starting state.
    pub i: usize,
    /// Window state bitmask (bit j set when site j of the window is -1).
    pub eta_code: u64,
    pub eta: String,
    pub lambda2_m: f64,
    pub lambda4_n: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureParams {
    #[serde(rename = "K")]
    pub k: f64,
    pub gamma: f64,
    pub horizon: Horizon,
    /// Diagonal shift applied to M* and N* (0 for the K = 0 formula).
    pub eps: f64,
    pub window_radius: Option<usize>,
    pub separation: usize,
    pub samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurvatureReport {
    pub rho: f64,
    pub numerator_source: String,
    pub denominator_source: String,
    pub argmin: (usize, u64),
    pub candidates: Vec<Candidate>,
    pub params: CurvatureParams,
    pub positive: bool,
}

/// Minimum over candidates, ties going to the smallest (i, eta_code).
fn select(cands: &[Candidate]) -> &Candidate {
    cands
        .iter()
        .min_by(|a, b| a.ratio.total_cmp(&b.ratio).then((a.i, a.eta_code).cmp(&(b.i, b.eta_code))))
        .expect("at least one candidate")
}

/// Curvature of the uncoupled chain from the exact matrices at each S_i.
/// All four classes must give the same ratio.
pub fn rho_k0(gamma: f64, horizon: Horizon) -> Result<CurvatureReport> {
    check_gamma(gamma)?;
    let source = KernelSource::ExactK0 { gamma };
    let bhat = horizon.k0_kernel(gamma)?;
    let mut candidates = Vec::with_capacity(4);
    for s in TwoPointState::ALL {
        let i = s.index() + 1;
        let pair = gamma_pair(&Eta::Restricted(s), horizon, &source)?;
        let star = starred(&pair, i, &bhat)?;
        let lambda2_m = fiedler(&star.m_star)?;
        let lambda4_n = eig_sym4(&star.n_star)?.values[3];
        if lambda4_n <= 0.0 {
            return Err(Error::DegenerateDenominator { lambda4: lambda4_n });
        }
        candidates.push(Candidate {
            i,
            eta_code: s.index() as u64,
            eta: format!("{s:?}"),
            lambda2_m,
            lambda4_n,
            ratio: lambda2_m / lambda4_n,
        });
    }
    let rho = candidates[0].ratio;
    for c in &candidates[1..] {
        if (c.ratio - rho).abs() > 1e-9 * rho.abs() {
            return Err(Error::Consistency(format!(
                "class {} gives ratio {} but class 1 gives {rho}",
                c.i, c.ratio
            )));
        }
    }
    Ok(CurvatureReport {
        rho,
        numerator_source: "lambda2(M*_1(S1))".into(),
        denominator_source: "lambda4(N*_1(S1))".into(),
        argmin: (1, 0),
        candidates,
        params: CurvatureParams {
            k: 0.0,
            gamma,
            horizon,
            eps: 0.0,
            window_radius: None,
            separation: 0,
            samples: 0,
        },
        positive: rho > 0.0,
    })
}

/// Settings for the general-K curvature.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoOptions {
    /// Shift eps; `None` picks min(1e-3, lambda2(M*_1 at K = 0) / 10).
    pub eps: Option<f64>,
    /// Upper bound on the window radius.
    pub window_radius: usize,
    /// |x2 - x1|.
    pub separation: usize,
}

impl Default for RhoOptions {
    fn default() -> Self {
        RhoOptions { eps: None, window_radius: 4, separation: 1 }
    }
}

pub const WINDOW_RADIUS_CAP: usize = 4;

pub fn default_shift(gamma: f64) -> Result<f64> {
    Ok(1e-3f64.min(quadratic_lambda2_k0(gamma)? / 10.0))
}

/// Curvature at horizon t for coupling K: the minimum over every window
/// state eta (with i its class) of lambda2(M*_i - eps I_i) / lambda4(N*_i + eps I_i).
/// The kernel mixture is truncated with tail eps e^{-2t} and the window
/// radius is the truncation level, capped at `window_radius`.
pub fn rho_general(t: f64, k: f64, gamma: f64, opts: &RhoOptions) -> Result<CurvatureReport> {
    check_gamma(gamma)?;
    if opts.window_radius > WINDOW_RADIUS_CAP {
        return Err(Error::invalid(
            "window_radius",
            format!("must be at most {WINDOW_RADIUS_CAP} (got {})", opts.window_radius),
        ));
    }
    let eps = match opts.eps {
        Some(e) if e > 0.0 && e < 1.0 => e,
        Some(e) => return Err(Error::invalid("eps", format!("shift must lie in (0, 1) (got {e})"))),
        None => default_shift(gamma)?,
    };
    let tail = eps * (-2.0 * t).exp();
    let weights = poisson_weights(t, tail)?;
    let radius = weights.level.min(opts.window_radius);
    let chain = WindowChain::new(k, gamma, radius, opts.separation)?;
    let horizon = Horizon::Time { t, eps: tail };
    let bhat = horizon.k0_kernel(gamma)?;
    let tables = chain.gamma_tables(&weights.weights);

    let candidates: Vec<Candidate> = tables
        .par_iter()
        .enumerate()
        .map(|(s, &(n, m))| -> Result<Candidate> {
            let i = chain.class(s).index() + 1;
            let pair = crate::gamma::GammaPair {
                n,
                m,
                n_stderr: None,
                m_stderr: None,
                asymmetry: 0.0,
                meta: crate::gamma::GammaMeta {
                    horizon,
                    k,
                    gamma,
                    eta: chain.code(s),
                    source: "window".into(),
                    window_radius: Some(radius),
                    samples: 0,
                    seed: None,
                },
            };
            let (ms, ns) = starred(&pair, i, &bhat)?.shifted(eps);
            let lambda2_m = fiedler(&ms)?;
            let lambda4_n = eig_sym4(&ns)?.values[3];
            if lambda4_n <= 0.0 {
                return Err(Error::DegenerateDenominator { lambda4: lambda4_n });
            }
            Ok(Candidate {
                i,
                eta_code: s as u64,
                eta: chain.code(s),
                lambda2_m,
                lambda4_n,
                ratio: lambda2_m / lambda4_n,
            })
        })
        .collect::<Result<_>>()?;
    let best = select(&candidates);
    let (rho, argmin) = (best.ratio, (best.i, best.eta_code));
    Ok(CurvatureReport {
        rho,
        numerator_source: format!("lambda2(M*1_{} - eps I_{}) at window {}", argmin.0, argmin.0, best.eta),
        denominator_source: format!("lambda4(N*1_{} + eps I_{}) at window {}", argmin.0, argmin.0, best.eta),
        argmin,
        candidates,
        params: CurvatureParams {
            k,
            gamma,
            horizon,
            eps,
            window_radius: Some(radius),
            separation: opts.separation,
            samples: 0,
        },
        positive: rho > 0.0,
    })
}
