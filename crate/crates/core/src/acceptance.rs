//! The acceptance suite: ten criteria, each a list of named checks, shared by
//! the `acceptance` test target and `spincurv verify`.

use crate::curvature::{psd_margin, quadratic_lambda2_k0, rho_general, rho_k0, RhoOptions};
use crate::dynamics::{LatticeParams, SpinConfiguration};
use crate::error::Result;
use crate::gamma::{decompose, gamma_pair, similarity_check_k0, starred, Eta, Horizon, KernelSource};
use crate::kernels::{b_matrix, det_bhat, mc_two_point_kernel, poisson_quantile, site_marginals_k0, TwoPointState};
use crate::mat4::Vec4;
use crate::noise::NoiseStream;
use crate::oracle;
use crate::verifier::{check_local_poincare_many, correlation_bound_check, PoincareSetup, RhoPath, TwoPointFunction, Verdict};
use crate::window::WindowChain;
use serde::{Deserialize, Serialize};
use std::time::Instant;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    /// Failure that is expected from the analysis of the model and documented
    /// with the project; it still counts against the criterion.
    pub known_gap: bool,
}

fn check(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Check {
    Check { name: name.into(), passed, detail: detail.into(), known_gap: false }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub id: u32,
    pub title: String,
    pub checks: Vec<Check>,
    pub seconds: f64,
}

impl Outcome {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// True when every failing check is a known gap.
    pub fn only_known_gaps(&self) -> bool {
        self.checks.iter().all(|c| c.passed || c.known_gap)
    }

    pub fn line(&self) -> String {
        let failed: Vec<&str> = self.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
        let tail = if failed.is_empty() {
            format!("{} checks", self.checks.len())
        } else {
            format!("failed: {}", failed.join("; "))
        };
        format!(
            "{} criterion {:>2}: {} ({tail}, {:.1} s)",
            if self.passed() { "PASS" } else { "FAIL" },
            self.id,
            self.title,
            self.seconds
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteOptions {
    pub seed: u64,
    /// Replicas for the sampled criteria.
    pub samples: usize,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions { seed: 20_240_611, samples: 1_000_000 }
    }
}

pub const TITLES: [&str; 10] = [
    "closed-form kernel fidelity",
    "Gamma/Gamma2 oracle equivalence",
    "starred matrices match the closed-form display",
    "similarity suite",
    "curvature positivity and consistency",
    "decomposition certificates",
    "invertibility",
    "local Poincare inequality, empirical",
    "correlation chain",
    "continuity of rho in K",
];

const GAMMAS: [f64; 3] = [1.5, 2.0, 3.0];

pub fn run_criterion(id: u32, opts: &SuiteOptions) -> Outcome {
    let start = Instant::now();
    let noise = NoiseStream::new(opts.seed).fork(u64::from(id));
    let result = match id {
        1 => kernel_fidelity(opts, &noise),
        2 => oracle_equivalence(&noise),
        3 => display_reproduction(),
        4 => similarity_suite(&noise),
        5 => curvature_consistency(),
        6 => decomposition_certificates(),
        7 => invertibility(),
        8 => local_poincare(opts, &noise),
        9 => correlation_chain(opts, &noise),
        10 => continuity_in_k(),
        _ => Ok(vec![check("criterion id", false, format!("no criterion {id}"))]),
    };
    let checks = result.unwrap_or_else(|e| vec![check("pipeline", false, format!("error: {e}"))]);
    Outcome {
        id,
        title: TITLES.get((id as usize).wrapping_sub(1)).copied().unwrap_or("unknown").to_string(),
        checks,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_all(opts: &SuiteOptions) -> Vec<Outcome> {
    (1..=10).map(|id| run_criterion(id, opts)).collect()
}

fn kernel_fidelity(opts: &SuiteOptions, noise: &NoiseStream) -> Result<Vec<Check>> {
    let start = Instant::now();
    let mut worst_dev = 0.0f64;
    let mut worst_z = 0.0f64;
    let mut where_z = String::new();
    for (gi, &gamma) in GAMMAS.iter().enumerate() {
        for n in [1usize, 2, 5] {
            let m = site_marginals_k0(n, gamma)?;
            let p = oracle::site_power(gamma, n);
            for (x, y) in [(m.y1, p[0][0]), (m.y2, p[1][0]), (m.y3, p[0][1]), (m.y4, p[1][1])] {
                worst_dev = worst_dev.max((x - y).abs());
            }
            let l = 2 * n + 4;
            let params = LatticeParams::new(l, 0.0, gamma, opts.seed)?;
            for (si, (state, target)) in [(TwoPointState::S1, m.y1), (TwoPointState::S4, m.y2)].into_iter().enumerate() {
                let cfg = SpinConfiguration::with_two_point(l, 0, 1, state);
                let tag = (gi * 16 + n * 2 + si) as u64;
                let col = mc_two_point_kernel(&params, &cfg, 0, 1, n, opts.samples, &noise.fork(tag))?;
                let up = col.probs[0] + col.probs[2];
                let se = (target * (1.0 - target) / col.samples as f64).sqrt();
                let z = (up - target) / se;
                if z.abs() > worst_z.abs() {
                    worst_z = z;
                    where_z = format!("gamma={gamma}, n={n}, start {state:?}");
                }
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Ok(vec![
        check("marginals vs 2x2 matrix power", worst_dev <= 1e-13, format!("max deviation {worst_dev:.2e} (tol 1e-13)")),
        check(
            "marginals vs sampled dynamics",
            worst_z.abs() <= 4.0,
            format!("worst z = {worst_z:.2} at {where_z} with {} replicas each", opts.samples),
        ),
        check("sample size", opts.samples >= 1_000_000, format!("{} replicas (need 1e6)", opts.samples)),
        check("runtime", secs < 60.0, format!("{secs:.1} s (limit 60 s)")),
    ])
}

fn oracle_equivalence(noise: &NoiseStream) -> Result<Vec<Check>> {
    let fs: Vec<Vec4> = (0..50u64).map(|k| [0, 1, 2, 3].map(|j| noise.normal(j, k))).collect();
    let mut worst_n = 0.0f64;
    let mut worst_m = 0.0f64;
    for &gamma in &GAMMAS {
        let generator = oracle::Generator::new(oracle::pair_step(gamma));
        for n in [1usize, 2, 3] {
            for s in TwoPointState::ALL {
                let e = s.index();
                let pair = gamma_pair(&Eta::Restricted(s), Horizon::Steps(n), &KernelSource::ExactK0 { gamma })?;
                for f in &fs {
                    let big_f = oracle::propagate(f, gamma, n);
                    let g1 = generator.gamma(&big_f, &big_f)[e];
                    let g2 = generator.gamma2(&big_f)[e];
                    worst_n = worst_n.max((pair.n.quad_form(f) - 2.0 * g1).abs());
                    worst_m = worst_m.max((pair.m.quad_form(f) - 4.0 * g2).abs());
                }
            }
        }
    }
    Ok(vec![
        check("f^T N f = 2 Gamma(F, F)", worst_n <= 1e-10, format!("max deviation {worst_n:.2e} over 50 f, 4 states, n in 1..=3, 3 gammas")),
        check("f^T M f = 4 Gamma_2(F, F)", worst_m <= 1e-10, format!("max deviation {worst_m:.2e}")),
    ])
}

fn display_reproduction() -> Result<Vec<Check>> {
    let mut worst_n = 0.0f64;
    let mut worst_m = 0.0f64;
    for &gamma in &GAMMAS {
        for n in [1usize, 2] {
            let pair = gamma_pair(&Eta::Restricted(TwoPointState::S1), Horizon::Steps(n), &KernelSource::ExactK0 { gamma })?;
            let star = starred(&pair, 1, &b_matrix(n, gamma)?)?;
            worst_n = worst_n.max((star.n_star - oracle::n_star_display(gamma)).max_abs());
            worst_m = worst_m.max((star.m_star - oracle::m_star_display(gamma)).max_abs());
        }
    }
    Ok(vec![
        check("N*_1(S1) = diag(0, p2, p3, p4)", worst_n <= 1e-12, format!("max deviation {worst_n:.2e} (n = 1, 2)")),
        check("M*_1(S1) = closed form in Phi(z), Phi(-z)", worst_m <= 1e-12, format!("max deviation {worst_m:.2e}")),
    ])
}

fn similarity_suite(noise: &NoiseStream) -> Result<Vec<Check>> {
    let shifts: Vec<f64> = (0..5).map(|j| 2.0 * noise.aux_uniform(j, 0) - 1.0).collect();
    let mut out = Vec::new();
    for h in [Horizon::Steps(1), Horizon::Steps(2), Horizon::Time { t: 1.0, eps: 1e-14 }] {
        let mut worst = 0.0f64;
        let mut ok = true;
        for &gamma in &GAMMAS {
            let r = similarity_check_k0(h, gamma, &shifts)?;
            worst = worst.max(r.max_deviation);
            ok &= r.passed;
        }
        out.push(check(format!("conjugation identities at {h:?}"), ok, format!("max deviation {worst:.2e} with 5 random shifts")));
    }
    Ok(out)
}

fn curvature_consistency() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for &gamma in &GAMMAS {
        let quad = quadratic_lambda2_k0(gamma)?;
        for h in [Horizon::Steps(1), Horizon::Steps(2), Horizon::Time { t: 1.0, eps: 1e-14 }] {
            let r = rho_k0(gamma, h)?;
            let root_dev = (r.candidates[0].lambda2_m - quad).abs();
            let spread = r.candidates.iter().map(|c| (c.ratio - r.rho).abs()).fold(0.0, f64::max);
            let mut margin = f64::INFINITY;
            for s in TwoPointState::ALL {
                let pair = gamma_pair(&Eta::Restricted(s), h, &KernelSource::ExactK0 { gamma })?;
                margin = margin.min(psd_margin(&pair.m, r.rho, &pair.n)?);
            }
            let ok = r.rho > 0.0 && root_dev <= 1e-10 && spread <= 1e-10 && margin >= -1e-10;
            out.push(check(
                format!("gamma={gamma}, {h:?}"),
                ok,
                format!(
                    "rho = {:.14}, |lambda2 - root| = {root_dev:.1e}, class spread {spread:.1e}, min eig(M - rho N) = {margin:.1e}",
                    r.rho
                ),
            ));
        }
    }
    Ok(out)
}

fn decomposition_certificates() -> Result<Vec<Check>> {
    let chain = WindowChain::new(0.05, 2.0, 4, 1)?;
    let mut mixed = SpinConfiguration::all_up(16);
    for j in [1, 4, 6, 7] {
        mixed.set(j, -1);
    }
    let window = KernelSource::Window(&chain);
    let k0 = KernelSource::ExactK0 { gamma: 2.0 };
    let mut out = Vec::new();
    for t in [0.5, 1.0, 2.0] {
        for eps in [1e-4, 1e-6] {
            let mut worst = 0.0f64;
            for s in TwoPointState::ALL {
                let d = decompose(&Eta::Restricted(s), t, &k0, eps)?;
                worst = worst.max(d.max_m2 / (8.0 * eps)).max(d.max_n2 / (2.0 * eps));
            }
            for cfg in [SpinConfiguration::all_up(16), mixed.clone()] {
                let eta = Eta::Config { config: cfg, x1: 5, x2: 6 };
                let d = decompose(&eta, t, &window, eps)?;
                worst = worst.max(d.max_m2 / (8.0 * eps)).max(d.max_n2 / (2.0 * eps));
            }
            out.push(check(
                format!("t={t}, eps={eps:e}"),
                worst <= 1.0,
                format!("largest remainder / bound = {worst:.3} (K = 0 and K = 0.05)"),
            ));
        }
    }
    Ok(out)
}

fn invertibility() -> Result<Vec<Check>> {
    let mut out = Vec::new();
    for &gamma in &GAMMAS {
        let mut min_det = f64::INFINITY;
        let mut worst_lu = 0.0f64;
        for n in 0..=10 {
            let b = b_matrix(n, gamma)?;
            // tensor square of a 2x2 block with determinant r^n
            let r = 2.0 * oracle::phi(1.0 - gamma) - 1.0;
            let exact = r.powi(4 * n as i32);
            min_det = min_det.min(exact.abs());
            worst_lu = worst_lu.max((b.det() - exact).abs());
        }
        out.push(check(
            format!("det B(n) != 0, n <= 10, gamma={gamma}"),
            min_det > 0.0 && worst_lu <= 1e-14,
            format!("min |det| = {min_det:.2e}, elimination error {worst_lu:.1e}"),
        ));
        let mut min_bhat = f64::INFINITY;
        let mut worst_rel = 0.0f64;
        for j in 0..=20 {
            let t = 0.25 * f64::from(j);
            let d = det_bhat(t, gamma, 1e-20)?;
            let r = 2.0 * oracle::phi(1.0 - gamma) - 1.0;
            // eigenvalues 1, exp(-t(1 - r)) twice, exp(-t(1 - r^2))
            let exact = (-2.0 * t * (1.0 - r) - t * (1.0 - r * r)).exp();
            min_bhat = min_bhat.min(d);
            worst_rel = worst_rel.max((d - exact).abs() / exact);
        }
        out.push(check(
            format!("det B^(t) > 0, t <= 5, gamma={gamma}"),
            min_bhat > 0.0 && worst_rel <= 1e-10,
            format!("min det = {min_bhat:.3e}, factorisation vs eigenvalue formula {worst_rel:.1e} relative"),
        ));
    }
    Ok(out)
}

/// Ring large enough for the light cone of Gamma at horizon t.
fn ring_for(t: f64, separation: usize) -> usize {
    2 * (poisson_quantile(t) + 1) + separation + 2
}

fn local_poincare(opts: &SuiteOptions, noise: &NoiseStream) -> Result<Vec<Check>> {
    let fs = [TwoPointFunction::sum(), TwoPointFunction::product(), TwoPointFunction::indicator()];
    let mut out = vec![check(
        "sample size",
        opts.samples >= 1_000_000,
        format!("{} replicas per cell (need 1e6)", opts.samples),
    )];
    let mut cell = 0u64;
    for k in [0.0, 0.03] {
        for t in [1.0, 2.0, 4.0] {
            let start = Instant::now();
            let l = ring_for(t, 1);
            let setup = PoincareSetup {
                params: LatticeParams::new(l, k, 2.0, opts.seed)?,
                eta: SpinConfiguration::all_up(l),
                x1: 0,
                x2: 1,
                t,
                schedule: None,
                samples: opts.samples,
            };
            let path = RhoPath::build(t, k, 2.0, None, &RhoOptions::default())?;
            let reports = check_local_poincare_many(&fs, &setup, &path, 1.0, &noise.fork(cell))?;
            cell += 1;
            let secs = start.elapsed().as_secs_f64();
            let summary: Vec<String> = reports
                .iter()
                .map(|r| format!("{:?}: {:.4} <= {:.4} (z {:.1})", r.f.tag, r.lhs.value, r.rhs.value, r.z))
                .collect();
            out.push(check(
                format!("K={k}, T={t}"),
                reports.iter().all(|r| r.verdict == Verdict::Pass) && secs <= 600.0,
                format!("{}; {secs:.1} s", summary.join(", ")),
            ));
            let neg = reports[0].rescaled(0.5);
            let mut c = check(
                format!("negative control K={k}, T={t}"),
                neg.verdict == Verdict::Fail,
                format!(
                    "halved bound {:.4} vs lhs {:.4}, z {:.1}; variance is {:.3} of the full bound",
                    neg.rhs.value,
                    neg.lhs.value,
                    neg.z,
                    reports[0].lhs.value / reports[0].rhs.value
                ),
            );
            // at gamma = 2 the bound for f = sum is more than twice loose
            c.known_gap = true;
            out.push(c);
        }
    }
    Ok(out)
}

fn correlation_chain(opts: &SuiteOptions, noise: &NoiseStream) -> Result<Vec<Check>> {
    let mut out = Vec::new();
    let t = 2.0;
    for (j, d) in [1usize, 2, 4].into_iter().enumerate() {
        for k in [0.03, 0.0] {
            let l = ring_for(t, d);
            let setup = PoincareSetup {
                params: LatticeParams::new(l, k, 2.0, opts.seed)?,
                eta: SpinConfiguration::all_up(l),
                x1: 0,
                x2: d,
                t,
                schedule: None,
                samples: opts.samples,
            };
            let ropts = RhoOptions { separation: d, ..RhoOptions::default() };
            let path = RhoPath::build(t, k, 2.0, None, &ropts)?;
            let r = correlation_bound_check(&setup, &path, &noise.fork(2 * j as u64 + u64::from(k > 0.0)))?;
            let detail = format!(
                "2Cov = {:.5} +- {:.5}, Var(sum) = {:.4}, rhs = {:.4}, identity residual {:.1e}",
                r.cov2.value, r.cov2.stderr, r.var_sum.value, r.rhs.value, r.identity_residual
            );
            if k > 0.0 {
                out.push(check(format!("chain at K={k}, |x1-x2|={d}"), r.chain_holds && r.identity_residual < 1e-12, detail));
            } else {
                let mut zero = check(
                    format!("Cov = 0 at K=0, |x1-x2|={d}"),
                    r.z_cov_zero.abs() <= 4.0 && r.identity_residual < 1e-12,
                    format!("z = {:.2}; {detail}", r.z_cov_zero),
                );
                // the sites share the Poisson clock, so they are only
                // conditionally independent given the number of steps
                zero.known_gap = true;
                out.push(zero);
                let exact = oracle::poissonized_cov2(2.0, t);
                let z = (r.cov2.value - exact) / r.cov2.stderr;
                out.push(check(
                    format!("2Cov at K=0 matches the shared-clock formula, |x1-x2|={d}"),
                    z.abs() <= 4.0,
                    format!("exact {exact:.5}, sampled {:.5}, z = {z:.2}", r.cov2.value),
                ));
            }
        }
    }
    Ok(out)
}

fn continuity_in_k() -> Result<Vec<Check>> {
    let opts = RhoOptions::default();
    let base = rho_general(1.0, 0.0, 2.0, &opts)?.rho;
    let mut deltas = Vec::new();
    for k in [0.1, 0.05, 0.02, 0.01] {
        deltas.push((k, (rho_general(1.0, k, 2.0, &opts)?.rho - base).abs()));
    }
    let monotone = deltas.windows(2).all(|w| w[1].1 < w[0].1);
    let text: Vec<String> = deltas.iter().map(|(k, d)| format!("K={k}: {d:.3e}")).collect();
    Ok(vec![check(
        "|rho(1, K) - rho(1, 0)| decreasing as K -> 0",
        monotone,
        format!("rho(1, 0) = {base:.6}; {}", text.join(", ")),
    )])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fast_criteria_pass() {
        for id in [2, 3, 4, 5, 6, 7, 10] {
            let o = run_criterion(id, &SuiteOptions::default());
            assert!(o.passed(), "{}\n{:#?}", o.line(), o.checks);
        }
    }

    #[test]
    fn unknown_criterion_fails() {
        assert!(!run_criterion(11, &SuiteOptions::default()).passed());
    }
}
