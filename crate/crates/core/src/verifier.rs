//! Monte-Carlo checks of the local Poincare inequality
//! Var_{P_T}(f)(eta) <= 2 int_0^T exp(-int_t^T r(s) ds) dt * P_T Gamma(f, f)(eta)
//! and of the two-point correlation bound that follows from it.

use crate::curvature::{rho_general, rho_k0, RhoOptions};
use crate::dynamics::{evolve, jump_couplings, ring_distance, LatticeParams, SpinConfiguration};
use crate::error::{Error, Result};
use crate::gamma::Horizon;
use crate::kernels::{blocks, check_light_cone, one_step_kernel, poisson_quantile, TwoPointState};
use crate::mat4::Vec4;
use crate::noise::NoiseStream;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FunctionTag {
    Sum,
    Product,
    Indicator,
    Site1,
    Site2,
    Custom,
}

/// Observable depending on the spins at x1 and x2, as values on S1..S4.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointFunction {
    pub values: Vec4,
    pub tag: FunctionTag,
}

impl TwoPointFunction {
    fn from_spins(tag: FunctionTag, f: impl Fn(f64, f64) -> f64) -> Self {
        let values = TwoPointState::ALL.map(|s| {
            let (a, b) = s.spins();
            f(f64::from(a), f64::from(b))
        });
        TwoPointFunction { values, tag }
    }

    /// omega_{x1} + omega_{x2}
    pub fn sum() -> Self {
        Self::from_spins(FunctionTag::Sum, |a, b| a + b)
    }

    pub fn product() -> Self {
        Self::from_spins(FunctionTag::Product, |a, b| a * b)
    }

    /// Indicator of S1.
    pub fn indicator() -> Self {
        TwoPointFunction { values: [1.0, 0.0, 0.0, 0.0], tag: FunctionTag::Indicator }
    }

    pub fn site1() -> Self {
        Self::from_spins(FunctionTag::Site1, |a, _| a)
    }

    pub fn site2() -> Self {
        Self::from_spins(FunctionTag::Site2, |_, b| b)
    }

    pub fn custom(values: Vec4) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("f", "function values must be finite"));
        }
        Ok(TwoPointFunction { values, tag: FunctionTag::Custom })
    }

    pub fn from_tag(tag: FunctionTag) -> Result<Self> {
        match tag {
            FunctionTag::Sum => Ok(Self::sum()),
            FunctionTag::Product => Ok(Self::product()),
            FunctionTag::Indicator => Ok(Self::indicator()),
            FunctionTag::Site1 => Ok(Self::site1()),
            FunctionTag::Site2 => Ok(Self::site2()),
            FunctionTag::Custom => Err(Error::invalid("f", "custom functions need explicit values")),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleForm {
    /// K0 exp(-rate t)
    Exponential,
    /// K0 (1 + t)^(-rate)
    Algebraic,
}

/// Time-dependent coupling decaying to zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingSchedule {
    #[serde(rename = "K0")]
    pub k0: f64,
    pub form: ScheduleForm,
    pub rate: f64,
}

impl CouplingSchedule {
    pub fn new(k0: f64, form: ScheduleForm, rate: f64) -> Result<Self> {
        if !k0.is_finite() {
            return Err(Error::invalid("K0", "must be finite"));
        }
        if !(rate.is_finite() && rate > 0.0) {
            return Err(Error::invalid("rate", format!("must be positive so that K_t -> 0 (got {rate})")));
        }
        Ok(CouplingSchedule { k0, form, rate })
    }

    pub fn at(&self, t: f64) -> f64 {
        match self.form {
            ScheduleForm::Exponential => self.k0 * (-self.rate * t).exp(),
            ScheduleForm::Algebraic => self.k0 * (1.0 + t).powf(-self.rate),
        }
    }
}

/// The integrand r(s) of the inner integral, s in [0, T].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RhoPath {
    Constant(f64),
    /// Piecewise linear through (s, rho) knots sorted by s, flat outside.
    Table { s: Vec<f64>, rho: Vec<f64> },
}

impl RhoPath {
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            RhoPath::Constant(r) => *r,
            RhoPath::Table { s: xs, rho } => {
                if s <= xs[0] {
                    return rho[0];
                }
                let last = xs.len() - 1;
                if s >= xs[last] {
                    return rho[last];
                }
                let j = xs.partition_point(|&x| x <= s) - 1;
                let w = (s - xs[j]) / (xs[j + 1] - xs[j]);
                rho[j] + w * (rho[j + 1] - rho[j])
            }
        }
    }

    /// r(s) = rho(T - s, K_s) for horizon T. With zero coupling and no
    /// schedule this is the constant K = 0 curvature; otherwise rho is
    /// computed on the horizons T 2^-j (j < 7) and 0 and interpolated.
    pub fn build(t: f64, k: f64, gamma: f64, schedule: Option<&CouplingSchedule>, opts: &RhoOptions) -> Result<Self> {
        if schedule.is_none() && k == 0.0 {
            return Ok(RhoPath::Constant(rho_k0(gamma, Horizon::Steps(1))?.rho));
        }
        if t == 0.0 {
            return Ok(RhoPath::Constant(rho_general(0.0, k, gamma, opts)?.rho));
        }
        let mut horizons: Vec<f64> = (0..7).map(|j| t * 0.5f64.powi(j)).collect();
        horizons.push(0.0);
        let knots: Vec<(f64, f64)> = horizons
            .par_iter()
            .map(|&h| {
                let s = t - h;
                let ks = schedule.map_or(k, |sch| sch.at(s));
                Ok((s, rho_general(h, ks, gamma, opts)?.rho))
            })
            .collect::<Result<_>>()?;
        Ok(RhoPath::Table { s: knots.iter().map(|x| x.0).collect(), rho: knots.iter().map(|x| x.1).collect() })
    }
}

const MAX_DEPTH: usize = 50;
/// Levels always subdivided, so that narrow features are not missed.
const MIN_DEPTH: usize = 4;

fn simpson_rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: usize) -> Result<f64> {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(Error::Quadrature(format!("non-finite integrand on [{a}, {b}]")));
    }
    if depth + MIN_DEPTH <= MAX_DEPTH && delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!("depth limit reached on [{a}, {b}]")));
    }
    Ok(simpson_rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
        + simpson_rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
}

/// Adaptive Simpson to relative tolerance `rel` (absolute below 1e-300 scale).
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, rel: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    // scale estimate from a coarse 16-panel rule so that the tolerance is relative
    let h = (b - a) / 16.0;
    let coarse: f64 = (0..16).map(|j| f(a + (j as f64 + 0.5) * h).abs() * h).sum();
    let tol = (rel * coarse.max(whole.abs())).max(1e-300);
    simpson_rec(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

/// 2 int_0^T exp(-int_t^T r(s) ds) dt by nested adaptive Simpson. The outer
/// rule runs at 1e-10 so that the result is good to 1e-8 relative.
pub fn bound_integral(rho_path: &dyn Fn(f64) -> f64, t: f64) -> Result<f64> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::invalid("T", format!("must be finite and nonnegative (got {t})")));
    }
    let outer = |u: f64| -> f64 {
        match adaptive_simpson(rho_path, u, t, 1e-11) {
            Ok(inner) => (-inner).exp(),
            Err(_) => f64::NAN,
        }
    };
    Ok(2.0 * adaptive_simpson(&outer, 0.0, t, 1e-10)?)
}

/// Ensemble of Poissonized runs from one start, reduced to per-state counts
/// and per-function sums of Gamma(f, f) at the endpoint.
#[derive(Clone, Debug, PartialEq)]
struct Ensemble {
    counts: [u64; 4],
    gamma_sum: Vec<f64>,
    gamma_sq: Vec<f64>,
}

/// Parameters shared by the Poincare-type checks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareSetup {
    pub params: LatticeParams,
    pub eta: SpinConfiguration,
    pub x1: usize,
    pub x2: usize,
    #[serde(rename = "T")]
    pub t: f64,
    pub schedule: Option<CouplingSchedule>,
    pub samples: usize,
}

impl PoincareSetup {
    fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.eta.len() != self.params.l {
            return Err(Error::invalid("eta", format!("configuration has {} sites but L = {}", self.eta.len(), self.params.l)));
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(Error::invalid("T", format!("must be finite and nonnegative (got {})", self.t)));
        }
        if self.samples < 2 {
            return Err(Error::invalid("samples", "at least 2 replicas are needed"));
        }
        if ring_distance(self.x1, self.x2, self.params.l) == 0 {
            return Err(Error::invalid("x2", "the two sites must be distinct"));
        }
        // the endpoint Gamma reads the neighbours of x1 and x2 as well
        check_light_cone(self.params.l, poisson_quantile(self.t) + 1, self.x1, self.x2)
    }

    fn coupling_at(&self, s: f64) -> f64 {
        self.schedule.map_or(self.params.k, |sch| sch.at(s))
    }

    fn run(&self, fs: &[Vec4], noise: &NoiseStream) -> Result<Ensemble> {
        self.validate()?;
        let l = self.params.l;
        let (x1, x2) = (self.x1 % l, self.x2 % l);
        let k_end = self.coupling_at(self.t);
        let gamma = self.params.gamma;
        let parts: Vec<Ensemble> = blocks(self.samples)
            .into_par_iter()
            .map(|range| {
                let mut e = Ensemble { counts: [0; 4], gamma_sum: vec![0.0; fs.len()], gamma_sq: vec![0.0; fs.len()] };
                let mut cur = Vec::with_capacity(l);
                let mut next = vec![0i8; l];
                for r in range {
                    let stream = noise.fork(r as u64);
                    let couplings = jump_couplings(self.t, &|s| self.coupling_at(s), &stream);
                    cur.clear();
                    cur.extend_from_slice(self.eta.spins());
                    evolve(&mut cur, &mut next, gamma, &couplings, &stream, Some((&[x1, x2], 1)));
                    let field = |i: usize| {
                        k_end * f64::from(cur[(i + l - 1) % l] + cur[(i + 1) % l]) + (1.0 - gamma) * f64::from(cur[i])
                    };
                    let q = one_step_kernel(field(x1), field(x2));
                    let c = TwoPointState::from_spins(cur[x1], cur[x2]).index();
                    e.counts[c] += 1;
                    for (j, f) in fs.iter().enumerate() {
                        let g = 0.5 * (0..4).map(|k| q[k] * (f[k] - f[c]).powi(2)).sum::<f64>();
                        e.gamma_sum[j] += g;
                        e.gamma_sq[j] += g * g;
                    }
                }
                e
            })
            .collect();
        let mut total = Ensemble { counts: [0; 4], gamma_sum: vec![0.0; fs.len()], gamma_sq: vec![0.0; fs.len()] };
        for p in parts {
            for i in 0..4 {
                total.counts[i] += p.counts[i];
            }
            for j in 0..fs.len() {
                total.gamma_sum[j] += p.gamma_sum[j];
                total.gamma_sq[j] += p.gamma_sq[j];
            }
        }
        Ok(total)
    }
}

/// f - E_p f, computed relative to f[0] so that a constant f gives exact zeros.
fn centred(p: &Vec4, f: &Vec4) -> Vec4 {
    let g = f.map(|x| x - f[0]);
    let mean: f64 = (0..4).map(|i| p[i] * g[i]).sum();
    g.map(|x| x - mean)
}

impl Ensemble {
    fn n(&self) -> f64 {
        self.counts.iter().sum::<u64>() as f64
    }

    fn probs(&self) -> Vec4 {
        let n = self.n();
        self.counts.map(|c| c as f64 / n)
    }

    /// Unbiased variance of a function of the endpoint state; the standard
    /// error is the delta-method value sqrt((mu4 - sigma^4) / n).
    fn variance(&self, f: &Vec4) -> Estimate {
        let (p, n) = (self.probs(), self.n());
        let dev = centred(&p, f);
        let var: f64 = (0..4).map(|i| p[i] * dev[i].powi(2)).sum();
        let mu4: f64 = (0..4).map(|i| p[i] * dev[i].powi(4)).sum();
        Estimate {
            value: var * n / (n - 1.0),
            stderr: ((mu4 - var * var).max(0.0) / n).sqrt(),
        }
    }

    /// 2 Cov(g, h) with its delta-method standard error.
    fn covariance2(&self, g: &Vec4, h: &Vec4) -> Estimate {
        let (p, n) = (self.probs(), self.n());
        let (dg, dh) = (centred(&p, g), centred(&p, h));
        let cov: f64 = (0..4).map(|i| p[i] * dg[i] * dh[i]).sum();
        let infl: f64 = (0..4).map(|i| p[i] * (dg[i] * dh[i] - cov).powi(2)).sum();
        Estimate { value: 2.0 * cov * n / (n - 1.0), stderr: 2.0 * (infl / n).sqrt() }
    }

    fn gamma_mean(&self, j: usize) -> Estimate {
        let n = self.n();
        let mean = self.gamma_sum[j] / n;
        let var = (self.gamma_sq[j] / n - mean * mean).max(0.0) * n / (n - 1.0);
        Estimate { value: mean, stderr: (var / n).sqrt() }
    }
}

pub fn variance_under_pt(f: &TwoPointFunction, setup: &PoincareSetup, noise: &NoiseStream) -> Result<Estimate> {
    Ok(setup.run(&[], noise)?.variance(&f.values))
}

pub fn expected_gamma(f: &TwoPointFunction, setup: &PoincareSetup, noise: &NoiseStream) -> Result<Estimate> {
    Ok(setup.run(std::slice::from_ref(&f.values), noise)?.gamma_mean(0))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "PASS")]
    Pass,
    #[serde(rename = "FAIL")]
    Fail,
}

/// Verdict threshold in combined standard errors.
pub const SIGMAS: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoincareReport {
    pub f: TwoPointFunction,
    pub lhs: Estimate,
    pub gamma: Estimate,
    pub bound_integral: f64,
    /// Factor applied to the bound (1 normally, 0.5 for the negative control).
    pub rhs_scale: f64,
    pub rhs: Estimate,
    pub z: f64,
    pub verdict: Verdict,
    pub rho_path: RhoPath,
    pub setup: PoincareSetup,
}

impl PoincareReport {
    /// The same comparison with the bound multiplied by a further `scale`.
    pub fn rescaled(&self, scale: f64) -> PoincareReport {
        let rhs = Estimate { value: self.rhs.value * scale, stderr: self.rhs.stderr * scale };
        let (z, verdict) = verdict(&self.lhs, &rhs);
        PoincareReport { rhs, rhs_scale: self.rhs_scale * scale, z, verdict, ..self.clone() }
    }
}

fn z_score(lhs: &Estimate, rhs: &Estimate) -> (f64, f64) {
    let se = (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt();
    let diff = lhs.value - rhs.value;
    let z = if se > 0.0 {
        diff / se
    } else if diff > 0.0 {
        f64::INFINITY
    } else if diff < 0.0 {
        f64::NEG_INFINITY
    } else {
        0.0
    };
    (z, se)
}

fn verdict(lhs: &Estimate, rhs: &Estimate) -> (f64, Verdict) {
    let (z, se) = z_score(lhs, rhs);
    let v = if lhs.value <= rhs.value + SIGMAS * se { Verdict::Pass } else { Verdict::Fail };
    (z, v)
}

/// Runs one ensemble and checks the inequality for each function; `rhs_scale`
/// below 1 gives a negative control.
pub fn check_local_poincare_many(
    fs: &[TwoPointFunction],
    setup: &PoincareSetup,
    rho_path: &RhoPath,
    rhs_scale: f64,
    noise: &NoiseStream,
) -> Result<Vec<PoincareReport>> {
    let values: Vec<Vec4> = fs.iter().map(|f| f.values).collect();
    let ens = setup.run(&values, noise)?;
    let bound = bound_integral(&|s| rho_path.eval(s), setup.t)?;
    Ok(fs
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let lhs = ens.variance(&f.values);
            let gamma = ens.gamma_mean(j);
            let rhs = Estimate { value: rhs_scale * bound * gamma.value, stderr: rhs_scale * bound * gamma.stderr };
            let (z, verdict) = verdict(&lhs, &rhs);
            PoincareReport {
                f: f.clone(),
                lhs,
                gamma,
                bound_integral: bound,
                rhs_scale,
                rhs,
                z,
                verdict,
                rho_path: rho_path.clone(),
                setup: setup.clone(),
            }
        })
        .collect())
}

pub fn check_local_poincare(
    f: &TwoPointFunction,
    setup: &PoincareSetup,
    rho_path: &RhoPath,
    rhs_scale: f64,
    noise: &NoiseStream,
) -> Result<PoincareReport> {
    Ok(check_local_poincare_many(std::slice::from_ref(f), setup, rho_path, rhs_scale, noise)?.remove(0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub cov2: Estimate,
    pub var_sum: Estimate,
    pub var_x1: Estimate,
    pub var_x2: Estimate,
    /// Var(sum) - 2 Cov, equal to Var(x1) + Var(x2) on the same replicas.
    pub gap: Estimate,
    /// |Var(sum) - Var(x1) - Var(x2) - 2 Cov|, zero up to rounding.
    pub identity_residual: f64,
    pub rhs: Estimate,
    pub z_cov_zero: f64,
    pub cov_le_var: bool,
    pub var_le_rhs: bool,
    pub chain_holds: bool,
    pub setup: PoincareSetup,
}

pub fn correlation_bound_check(setup: &PoincareSetup, rho_path: &RhoPath, noise: &NoiseStream) -> Result<CorrelationReport> {
    let sum = TwoPointFunction::sum();
    let (s1, s2) = (TwoPointFunction::site1(), TwoPointFunction::site2());
    let ens = setup.run(std::slice::from_ref(&sum.values), noise)?;
    let var_sum = ens.variance(&sum.values);
    let var_x1 = ens.variance(&s1.values);
    let var_x2 = ens.variance(&s2.values);
    let cov2 = ens.covariance2(&s1.values, &s2.values);
    let identity_residual = (var_sum.value - var_x1.value - var_x2.value - cov2.value).abs();
    // Var(sum) - 2 Cov = Var(x1) + Var(x2); its influence function is that of
    // (x1 - m1)^2 + (x2 - m2)^2
    let gap = {
        let p = ens.probs();
        let n = ens.n();
        let m1: f64 = (0..4).map(|i| p[i] * s1.values[i]).sum();
        let m2: f64 = (0..4).map(|i| p[i] * s2.values[i]).sum();
        let psi: Vec4 = [0, 1, 2, 3].map(|i| (s1.values[i] - m1).powi(2) + (s2.values[i] - m2).powi(2));
        let mean: f64 = (0..4).map(|i| p[i] * psi[i]).sum();
        let var: f64 = (0..4).map(|i| p[i] * (psi[i] - mean).powi(2)).sum();
        Estimate { value: var_x1.value + var_x2.value, stderr: (var / n).sqrt() }
    };
    let bound = bound_integral(&|s| rho_path.eval(s), setup.t)?;
    let g = ens.gamma_mean(0);
    let rhs = Estimate { value: bound * g.value, stderr: bound * g.stderr };
    let cov_le_var = gap.value >= -SIGMAS * gap.stderr;
    let (_, v) = verdict(&var_sum, &rhs);
    let var_le_rhs = v == Verdict::Pass;
    let z_cov_zero = z_score(&cov2, &Estimate { value: 0.0, stderr: 0.0 }).0;
    Ok(CorrelationReport {
        cov2,
        var_sum,
        var_x1,
        var_x2,
        gap,
        identity_residual,
        rhs,
        z_cov_zero,
        cov_le_var,
        var_le_rhs,
        chain_holds: cov_le_var && var_le_rhs,
        setup: setup.clone(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    #[serde(rename = "T")]
    pub t: f64,
    #[serde(rename = "K_T")]
    pub k_t: f64,
    pub rho: f64,
    pub lhs: Estimate,
    pub gamma: Estimate,
    /// (2 / rho) P_T Gamma(f, f)
    pub rhs: Estimate,
    pub margin: Estimate,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub f: TwoPointFunction,
    pub rows: Vec<ProbeRow>,
    /// Least-squares slope of lhs - rhs over the last half of the grid.
    pub slope: Estimate,
    pub stabilizes: bool,
    pub all_pass: bool,
}

/// Checks lhs <= (2 / rho_T) P_T Gamma(f, f) along an increasing grid of
/// horizons, rho_T being the curvature at horizon T for the coupling K_T.
pub fn ergodic_limit_probe(
    f: &TwoPointFunction,
    base: &PoincareSetup,
    t_grid: &[f64],
    opts: &RhoOptions,
    noise: &NoiseStream,
) -> Result<ProbeReport> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::invalid("T_grid", "must be nonempty and strictly increasing"));
    }
    let gamma = base.params.gamma;
    let mut rows = Vec::with_capacity(t_grid.len());
    for (j, &t) in t_grid.iter().enumerate() {
        let setup = PoincareSetup { t, ..base.clone() };
        let k_t = setup.coupling_at(t);
        let rho = if k_t == 0.0 { rho_k0(gamma, Horizon::Steps(1))?.rho } else { rho_general(t, k_t, gamma, opts)?.rho };
        let ens = setup.run(std::slice::from_ref(&f.values), &noise.fork(j as u64))?;
        let lhs = ens.variance(&f.values);
        let g = ens.gamma_mean(0);
        let rhs = Estimate { value: 2.0 / rho * g.value, stderr: 2.0 / rho * g.stderr };
        let (_, verdict) = verdict(&lhs, &rhs);
        let margin = Estimate {
            value: lhs.value - rhs.value,
            stderr: (lhs.stderr.powi(2) + rhs.stderr.powi(2)).sqrt(),
        };
        rows.push(ProbeRow { t, k_t, rho, lhs, gamma: g, rhs, margin, verdict });
    }
    let tail = &rows[rows.len() / 2..];
    let slope = if tail.len() < 2 {
        Estimate { value: 0.0, stderr: 0.0 }
    } else {
        let mean_t = tail.iter().map(|r| r.t).sum::<f64>() / tail.len() as f64;
        let sxx: f64 = tail.iter().map(|r| (r.t - mean_t).powi(2)).sum();
        let w: Vec<f64> = tail.iter().map(|r| (r.t - mean_t) / sxx).collect();
        Estimate {
            value: tail.iter().zip(&w).map(|(r, w)| w * r.margin.value).sum(),
            stderr: tail.iter().zip(&w).map(|(r, w)| (w * r.margin.stderr).powi(2)).sum::<f64>().sqrt(),
        }
    };
    Ok(ProbeReport {
        f: f.clone(),
        stabilizes: slope.value <= SIGMAS * slope.stderr,
        all_pass: rows.iter().all(|r| r.verdict == Verdict::Pass),
        rows,
        slope,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{poissonized_b, site_marginals_k0};

    fn setup(l: usize, k: f64, t: f64, samples: usize) -> PoincareSetup {
        PoincareSetup {
            params: LatticeParams::new(l, k, 2.0, 77).unwrap(),
            eta: SpinConfiguration::all_up(l),
            x1: 3,
            x2: 4,
            t,
            schedule: None,
            samples,
        }
    }

    #[test]
    fn bound_integral_closed_forms() {
        for rho in [0.1, 0.5, 1.0] {
            let t = 3.0;
            let v = bound_integral(&|_| rho, t).unwrap();
            let exact = 2.0 * (1.0 - (-rho * t).exp()) / rho;
            assert!((v - exact).abs() < 1e-8 * exact);
            let far = bound_integral(&|_| rho, 60.0 / rho).unwrap();
            assert!((far - 2.0 / rho).abs() < 1e-8 * 2.0 / rho);
        }
        assert!((bound_integral(&|_| 1e-12, 2.0).unwrap() - 4.0).abs() < 1e-9);
        let a = bound_integral(&|_| 0.3, 1.0).unwrap();
        let b = bound_integral(&|_| 0.3, 2.0).unwrap();
        assert!(b >= a);
    }

    #[test]
    fn bound_integral_matches_trapezoid_oracle() {
        let path = RhoPath::Table { s: vec![0.0, 0.5, 1.2, 2.0], rho: vec![0.3, 0.1, 0.25, 0.2] };
        let t = 2.0;
        let v = bound_integral(&|s| path.eval(s), t).unwrap();
        // cumulative trapezoid for R(t) = int_t^T r, then trapezoid in t
        let n = 1_000_000;
        let h = t / n as f64;
        let mut inner = vec![0.0; n + 1];
        for j in (0..n).rev() {
            let s = j as f64 * h;
            inner[j] = inner[j + 1] + 0.5 * h * (path.eval(s) + path.eval(s + h));
        }
        let mut outer = 0.0;
        for j in 0..n {
            outer += 0.5 * h * ((-inner[j]).exp() + (-inner[j + 1]).exp());
        }
        assert!((v - 2.0 * outer).abs() < 1e-6 * v);
    }

    #[test]
    fn schedule_decays() {
        let s = CouplingSchedule::new(0.05, ScheduleForm::Exponential, 1.0).unwrap();
        assert_eq!(s.at(0.0), 0.05);
        assert!(s.at(50.0).abs() < 1e-20);
        let a = CouplingSchedule::new(-0.05, ScheduleForm::Algebraic, 2.0).unwrap();
        assert!((0..100).all(|t| a.at(t as f64).abs() <= 0.05));
        assert!(CouplingSchedule::new(0.05, ScheduleForm::Exponential, 0.0).is_err());
    }

    #[test]
    fn zero_horizon_is_deterministic() {
        let s = setup(12, 0.1, 0.0, 1000);
        let noise = s.params.noise();
        let v = variance_under_pt(&TwoPointFunction::sum(), &s, &noise).unwrap();
        assert_eq!((v.value, v.stderr), (0.0, 0.0));
        let g = expected_gamma(&TwoPointFunction::sum(), &s, &noise).unwrap();
        let exact = crate::gamma::gamma_of_f(&TwoPointFunction::sum().values, &s.eta, 3, 4, &s.params);
        assert!((g.value - exact).abs() < 1e-12 * exact);
        assert!(g.stderr < 1e-7);
    }

    #[test]
    fn constant_function_passes_trivially() {
        let s = setup(40, 0.0, 2.0, 2000);
        let f = TwoPointFunction::custom([1.5; 4]).unwrap();
        let r = check_local_poincare(&f, &s, &RhoPath::Constant(0.2), 1.0, &s.params.noise()).unwrap();
        assert_eq!((r.lhs.value, r.rhs.value, r.verdict), (0.0, 0.0, Verdict::Pass));
    }

    #[test]
    fn site_variance_matches_mixture() {
        let s = setup(40, 0.0, 1.0, 1_000_000);
        let v = variance_under_pt(&TwoPointFunction::site1(), &s, &s.params.noise()).unwrap();
        let (b, _) = poissonized_b(1.0, 2.0, 1e-14).unwrap();
        // P(x1 = +1) = B[S1][S1] + B[S3][S1]
        let p = b.entries[(0, 0)] + b.entries[(2, 0)];
        let exact = 1.0 - (2.0 * p - 1.0).powi(2);
        assert!((v.value - exact).abs() < 4.0 * v.stderr);
        assert!(site_marginals_k0(1, 2.0).is_ok());
    }

    #[test]
    fn gamma_expectation_matches_semi_analytic() {
        let s = setup(40, 0.0, 1.0, 1_000_000);
        let f = TwoPointFunction::sum();
        let g = expected_gamma(&f, &s, &s.params.noise()).unwrap();
        let (b, _) = poissonized_b(1.0, 2.0, 1e-14).unwrap();
        let exact: f64 = TwoPointState::ALL
            .iter()
            .map(|&st| {
                let eta = SpinConfiguration::with_two_point(40, 3, 4, st);
                b.entries[(st.index(), 0)] * crate::gamma::gamma_of_f(&f.values, &eta, 3, 4, &s.params)
            })
            .sum();
        assert!((g.value - exact).abs() < 4.0 * g.stderr);
    }

    #[test]
    fn variance_algebra_on_shared_replicas() {
        let s = setup(40, 0.05, 1.0, 20_000);
        let r = correlation_bound_check(&s, &RhoPath::Constant(0.2), &s.params.noise()).unwrap();
        assert!(r.identity_residual < 1e-12);
        assert!(r.chain_holds);
    }

    #[test]
    fn product_negative_control_fails() {
        let s = setup(40, 0.0, 1.0, 200_000);
        let rho = RhoPath::Constant(rho_k0(2.0, Horizon::Steps(1)).unwrap().rho);
        let ok = check_local_poincare(&TwoPointFunction::product(), &s, &rho, 1.0, &s.params.noise()).unwrap();
        assert_eq!(ok.verdict, Verdict::Pass);
        let bad = check_local_poincare(&TwoPointFunction::product(), &s, &rho, 0.5, &s.params.noise()).unwrap();
        assert_eq!(bad.verdict, Verdict::Fail);
    }

    #[test]
    fn result_is_independent_of_thread_count() {
        let s = setup(40, 0.03, 1.0, 3 * crate::kernels::BLOCK + 17);
        let f = TwoPointFunction::sum();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| expected_gamma(&f, &s, &s.params.noise()).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn probe_with_constant_function() {
        let s = setup(64, 0.0, 1.0, 1000);
        let f = TwoPointFunction::custom([2.0; 4]).unwrap();
        let r = ergodic_limit_probe(&f, &s, &[1.0, 2.0], &RhoOptions::default(), &s.params.noise()).unwrap();
        assert!(r.rows.iter().all(|row| row.lhs.value == 0.0 && row.rhs.value == 0.0));
        assert!(r.all_pass && r.stabilizes);
        assert!(ergodic_limit_probe(&f, &s, &[2.0, 1.0], &RhoOptions::default(), &s.params.noise()).is_err());
    }

    #[test]
    fn table_path_interpolates() {
        let p = RhoPath::Table { s: vec![0.0, 1.0], rho: vec![0.2, 0.4] };
        assert!((p.eval(0.25) - 0.25).abs() < 1e-15);
        assert_eq!(p.eval(-1.0), 0.2);
        assert_eq!(p.eval(3.0), 0.4);
    }
}
