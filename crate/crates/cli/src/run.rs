use crate::config::{Kind, RunConfig, Source};
use crate::output;
use crate::CliError;
use serde::{Deserialize, Serialize};
use spin_curvature::curvature::{rho_general, rho_k0, CurvatureReport, RhoOptions};
use spin_curvature::dynamics::ring_distance;
use spin_curvature::gamma::{gamma_pair, starred, Eta, GammaPair, Horizon, KernelSource, StarMatrices};
use spin_curvature::kernels::{
    b_matrix, enforce_light_cone, mc_poissonized_two_point_kernel, mc_two_point_kernel, poissonized_b, KernelColumn,
    KernelMeta, KernelRecord, TwoPointState,
};
use spin_curvature::mat4::Mat4;
use spin_curvature::verifier::{
    check_local_poincare_many, correlation_bound_check, ergodic_limit_probe, CorrelationReport, PoincareReport,
    PoincareSetup, ProbeReport, RhoPath, Verdict,
};
use spin_curvature::window::WindowChain;

/// Top-level JSON document of every run.
#[derive(Debug, Serialize, Deserialize)]
pub struct Envelope<R> {
    pub kind: Kind,
    pub timestamp: u64,
    pub config: RunConfig,
    pub passed: bool,
    pub result: R,
}

struct Report {
    result: serde_json::Value,
    csv: Option<String>,
    passed: bool,
    summary: String,
}

fn value<T: Serialize>(x: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(x).map_err(|e| CliError::Internal(format!("json: {e}")))
}

pub fn execute(kind: Kind, cfg: RunConfig, want_csv: bool) -> Result<bool, CliError> {
    enforce_light_cone(cfg.light_cone_check.unwrap_or(true));
    let report = match kind {
        Kind::Kernel => kernel(&cfg)?,
        Kind::Gamma => gamma(&cfg)?,
        Kind::Curvature => curvature(&cfg)?,
        Kind::Poincare => poincare(&cfg)?,
        Kind::Correlation => correlation(&cfg)?,
        Kind::ErgodicProbe => probe(&cfg)?,
    };
    let doc = Envelope { kind, timestamp: output::timestamp(), config: cfg.clone(), passed: report.passed, result: report.result };
    let json = output::to_json(&doc)?;
    match &cfg.out {
        Some(path) => {
            output::write_file(path, &json)?;
            if want_csv {
                if let Some(csv) = &report.csv {
                    output::write_file(&path.with_extension("csv"), csv)?;
                }
            }
        }
        None => match (&report.csv, want_csv) {
            (Some(csv), true) => output::emit(csv)?,
            _ => output::emit(&json)?,
        },
    }
    eprintln!("{}", report.summary);
    Ok(report.passed)
}

fn horizon(cfg: &RunConfig) -> Horizon {
    match cfg.n {
        Some(n) => Horizon::Steps(n),
        None => Horizon::Time { t: cfg.t.unwrap_or(1.0), eps: cfg.eps.unwrap_or(1e-10) },
    }
}

fn separation(cfg: &RunConfig) -> usize {
    ring_distance(cfg.x1(), cfg.x2(), cfg.l.expect("resolved"))
}

fn rho_options(cfg: &RunConfig) -> RhoOptions {
    RhoOptions { eps: cfg.shift, window_radius: cfg.window_radius.unwrap_or(4), separation: separation(cfg) }
}

fn state_name(i: usize) -> String {
    format!("{:?}", TwoPointState::from_index(i))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct KernelResult {
    pub exact: Option<KernelRecord>,
    pub det: Option<f64>,
    pub sampled: Option<KernelColumn>,
}

#[derive(Serialize)]
struct KernelRow {
    source: &'static str,
    from: String,
    to: String,
    value: f64,
    stderr: Option<f64>,
}

fn kernel(cfg: &RunConfig) -> Result<Report, CliError> {
    let (gamma, k) = (cfg.gamma(), cfg.k());
    let samples = cfg.samples.unwrap_or(0);
    if k != 0.0 && samples == 0 {
        return Err(CliError::Usage("samples: there is no closed-form kernel for K != 0; pass --samples".into()));
    }
    let h = horizon(cfg);
    let t_or_n = match h {
        Horizon::Steps(n) => n as f64,
        Horizon::Time { t, .. } => t,
    };
    let meta = |samples| KernelMeta { t_or_n, k, gamma, eps: cfg.eps.unwrap_or(1e-10), samples, seed: cfg.seed.unwrap_or(0) };
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    let exact = if k == 0.0 {
        let b = match h {
            Horizon::Steps(n) => b_matrix(n, gamma)?,
            Horizon::Time { t, eps } => poissonized_b(t, gamma, eps)?.0,
        };
        for l in 0..4 {
            for i in 0..4 {
                rows.push(KernelRow { source: "exact", from: state_name(l), to: state_name(i), value: b.entries[(i, l)], stderr: None });
            }
        }
        summary.push(format!("det = {:e}", b.det()));
        Some(b)
    } else {
        None
    };
    let sampled = if samples > 0 {
        let params = cfg.params()?;
        let eta = cfg.eta_config()?;
        let col = match h {
            Horizon::Steps(n) => mc_two_point_kernel(&params, &eta, cfg.x1(), cfg.x2(), n, samples, &params.noise())?,
            Horizon::Time { t, .. } => {
                mc_poissonized_two_point_kernel(&params, &eta, cfg.x1(), cfg.x2(), t, samples, &params.noise())?
            }
        };
        for i in 0..4 {
            rows.push(KernelRow {
                source: "sampled",
                from: format!("{:?}", col.start),
                to: state_name(i),
                value: col.probs[i],
                stderr: Some(col.stderr[i]),
            });
        }
        summary.push(format!("sampled column from {:?}: {:?}", col.start, col.probs));
        Some(col)
    } else {
        None
    };
    let result = KernelResult {
        exact: exact.as_ref().map(|b| KernelRecord::new(b, meta(0))),
        det: exact.map(|b| b.det()),
        sampled,
    };
    Ok(Report { result: value(&result)?, csv: Some(output::to_csv(&rows)?), passed: true, summary: summary.join("; ") })
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GammaResult {
    pub pair: GammaPair,
    pub starred: StarMatrices,
}

#[derive(Serialize)]
struct MatrixRow {
    matrix: &'static str,
    row: usize,
    col: usize,
    value: f64,
    stderr: Option<f64>,
}

fn matrix_rows(rows: &mut Vec<MatrixRow>, name: &'static str, m: &Mat4, se: Option<&Mat4>) {
    for r in 0..4 {
        for c in 0..4 {
            rows.push(MatrixRow { matrix: name, row: r + 1, col: c + 1, value: m[(r, c)], stderr: se.map(|s| s[(r, c)]) });
        }
    }
}

fn gamma(cfg: &RunConfig) -> Result<Report, CliError> {
    let (g, k) = (cfg.gamma(), cfg.k());
    let h = horizon(cfg);
    let chain;
    let (eta, source) = match cfg.source.unwrap_or(Source::Exact) {
        Source::Exact => {
            if k != 0.0 {
                return Err(CliError::Usage("source: the exact source needs K = 0; use window or mc".into()));
            }
            let state = match &cfg.eta {
                Some(_) => cfg.eta_config()?.restriction(cfg.x1(), cfg.x2()),
                None => cfg.state.unwrap_or(TwoPointState::S1),
            };
            (Eta::Restricted(state), KernelSource::ExactK0 { gamma: g })
        }
        Source::Window => {
            chain = WindowChain::new(k, g, cfg.window_radius.unwrap_or(4), separation(cfg))?;
            let eta = Eta::Config { config: cfg.eta_config()?, x1: cfg.x1(), x2: cfg.x2() };
            (eta, KernelSource::Window(&chain))
        }
        Source::Mc => {
            let params = cfg.params()?;
            let eta = Eta::Config { config: cfg.eta_config()?, x1: cfg.x1(), x2: cfg.x2() };
            let noise = params.noise();
            (eta, KernelSource::MonteCarlo { params, samples: cfg.samples.unwrap_or(100_000), noise })
        }
    };
    let pair = gamma_pair(&eta, h, &source)?;
    let star = starred(&pair, eta.restriction().index() + 1, &h.k0_kernel(g)?)?;
    let mut rows = Vec::new();
    matrix_rows(&mut rows, "N", &pair.n, pair.n_stderr.as_ref());
    matrix_rows(&mut rows, "M", &pair.m, pair.m_stderr.as_ref());
    matrix_rows(&mut rows, "N*", &star.n_star, None);
    matrix_rows(&mut rows, "M*", &star.m_star, None);
    let summary = format!("{} at {}: asymmetry {:.1e}", pair.meta.source, pair.meta.eta, pair.asymmetry);
    let result = GammaResult { pair, starred: star };
    Ok(Report { result: value(&result)?, csv: Some(output::to_csv(&rows)?), passed: true, summary })
}

fn curvature(cfg: &RunConfig) -> Result<Report, CliError> {
    let (g, k) = (cfg.gamma(), cfg.k());
    let report: CurvatureReport = if k == 0.0 && cfg.source != Some(Source::Window) {
        rho_k0(g, horizon(cfg))?
    } else {
        if cfg.n.is_some() {
            return Err(CliError::Usage("n: the general-K curvature uses a Poissonized horizon; set T instead".into()));
        }
        rho_general(cfg.t.unwrap_or(1.0), k, g, &rho_options(cfg))?
    };
    let csv = output::to_csv(&report.candidates)?;
    let summary = format!("rho = {} ({})", report.rho, report.numerator_source);
    Ok(Report { result: value(&report)?, csv: Some(csv), passed: true, summary })
}

fn setup(cfg: &RunConfig, t: f64) -> Result<PoincareSetup, CliError> {
    Ok(PoincareSetup {
        params: cfg.params()?,
        eta: cfg.eta_config()?,
        x1: cfg.x1(),
        x2: cfg.x2(),
        t,
        schedule: cfg.schedule,
        samples: cfg.samples.unwrap_or(1_000_000),
    })
}

#[derive(Serialize)]
struct PoincareRow {
    f: String,
    #[serde(rename = "K")]
    k: f64,
    gamma: f64,
    #[serde(rename = "T")]
    t: f64,
    seed: u64,
    x1: usize,
    x2: usize,
    samples: usize,
    lhs: f64,
    lhs_se: f64,
    gamma_exp: f64,
    gamma_se: f64,
    bound_integral: f64,
    rhs_scale: f64,
    rhs: f64,
    rhs_se: f64,
    z: f64,
    verdict: Verdict,
}

fn tag(r: &PoincareReport) -> String {
    crate::config::to_name(&r.f.tag)
}

fn poincare(cfg: &RunConfig) -> Result<Report, CliError> {
    let t = cfg.t.unwrap_or(1.0);
    let s = setup(cfg, t)?;
    let path = RhoPath::build(t, cfg.k(), cfg.gamma(), cfg.schedule.as_ref(), &rho_options(cfg))?;
    let scale = if cfg.negative_control == Some(true) { 0.5 } else { 1.0 };
    let reports = check_local_poincare_many(&cfg.functions()?, &s, &path, scale, &s.params.noise())?;
    let rows: Vec<PoincareRow> = reports
        .iter()
        .map(|r| PoincareRow {
            f: tag(r),
            k: cfg.k(),
            gamma: cfg.gamma(),
            t,
            seed: s.params.seed,
            x1: s.x1,
            x2: s.x2,
            samples: s.samples,
            lhs: r.lhs.value,
            lhs_se: r.lhs.stderr,
            gamma_exp: r.gamma.value,
            gamma_se: r.gamma.stderr,
            bound_integral: r.bound_integral,
            rhs_scale: r.rhs_scale,
            rhs: r.rhs.value,
            rhs_se: r.rhs.stderr,
            z: r.z,
            verdict: r.verdict,
        })
        .collect();
    let passed = reports.iter().all(|r| r.verdict == Verdict::Pass);
    let summary = rows
        .iter()
        .map(|r| format!("{}: {:.5} <= {:.5} z={:.2} {:?}", r.f, r.lhs, r.rhs, r.z, r.verdict))
        .collect::<Vec<_>>()
        .join("\n");
    Ok(Report { result: value(&reports)?, csv: Some(output::to_csv(&rows)?), passed, summary })
}

#[derive(Serialize)]
struct CorrelationRow {
    #[serde(rename = "K")]
    k: f64,
    gamma: f64,
    #[serde(rename = "T")]
    t: f64,
    seed: u64,
    x1: usize,
    x2: usize,
    cov2: f64,
    cov2_se: f64,
    var_sum: f64,
    var_sum_se: f64,
    rhs: f64,
    rhs_se: f64,
    chain_holds: bool,
}

fn correlation(cfg: &RunConfig) -> Result<Report, CliError> {
    let t = cfg.t.unwrap_or(1.0);
    let s = setup(cfg, t)?;
    let path = RhoPath::build(t, cfg.k(), cfg.gamma(), cfg.schedule.as_ref(), &rho_options(cfg))?;
    let r: CorrelationReport = correlation_bound_check(&s, &path, &s.params.noise())?;
    let row = CorrelationRow {
        k: cfg.k(),
        gamma: cfg.gamma(),
        t,
        seed: s.params.seed,
        x1: s.x1,
        x2: s.x2,
        cov2: r.cov2.value,
        cov2_se: r.cov2.stderr,
        var_sum: r.var_sum.value,
        var_sum_se: r.var_sum.stderr,
        rhs: r.rhs.value,
        rhs_se: r.rhs.stderr,
        chain_holds: r.chain_holds,
    };
    let summary = format!(
        "2Cov = {:.5} +- {:.5} <= Var(sum) = {:.5} <= {:.5}: {}",
        row.cov2,
        row.cov2_se,
        row.var_sum,
        row.rhs,
        if r.chain_holds { "holds" } else { "FAILS" }
    );
    Ok(Report { result: value(&r)?, csv: Some(output::to_csv(&[row])?), passed: r.chain_holds, summary })
}

#[derive(Serialize)]
struct ProbeRowOut {
    #[serde(rename = "T")]
    t: f64,
    #[serde(rename = "K_T")]
    k_t: f64,
    rho: f64,
    lhs: f64,
    lhs_se: f64,
    rhs: f64,
    rhs_se: f64,
    margin: f64,
    margin_se: f64,
    verdict: Verdict,
}

fn probe(cfg: &RunConfig) -> Result<Report, CliError> {
    let grid = cfg.t_grid.clone().unwrap_or_default();
    let f = cfg.functions()?.remove(0);
    let s = setup(cfg, grid.first().copied().unwrap_or(1.0))?;
    let r: ProbeReport = ergodic_limit_probe(&f, &s, &grid, &rho_options(cfg), &s.params.noise())?;
    let rows: Vec<ProbeRowOut> = r
        .rows
        .iter()
        .map(|x| ProbeRowOut {
            t: x.t,
            k_t: x.k_t,
            rho: x.rho,
            lhs: x.lhs.value,
            lhs_se: x.lhs.stderr,
            rhs: x.rhs.value,
            rhs_se: x.rhs.stderr,
            margin: x.margin.value,
            margin_se: x.margin.stderr,
            verdict: x.verdict,
        })
        .collect();
    let summary = format!(
        "margin slope over the last half {:.3e} +- {:.3e}; {}; {}",
        r.slope.value,
        r.slope.stderr,
        if r.stabilizes { "stabilizes" } else { "still growing" },
        if r.all_pass { "all horizons pass" } else { "some horizon FAILS" }
    );
    Ok(Report { result: value(&r)?, csv: Some(output::to_csv(&rows)?), passed: r.all_pass, summary })
}
