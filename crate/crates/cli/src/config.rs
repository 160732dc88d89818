//! Run configuration: a JSON file and command-line flags merged field by
//! field (flags win), then filled with per-kind defaults.

use serde::{Deserialize, Serialize};
use spin_curvature::dynamics::{LatticeParams, SpinConfiguration};
use spin_curvature::kernels::{poisson_quantile, TwoPointState};
use spin_curvature::verifier::{CouplingSchedule, FunctionTag, TwoPointFunction};
use std::path::{Path, PathBuf};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Kernel,
    Gamma,
    Curvature,
    Poincare,
    Correlation,
    #[serde(alias = "probe")]
    ErgodicProbe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    /// Closed form, K = 0 only.
    Exact,
    /// Exact segment chain around the two sites.
    Window,
    /// Sampled ring dynamics.
    Mc,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kind: Option<Kind>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x1: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x2: Option<usize>,
    /// Test functions by name.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<FunctionTag>>,
    /// Explicit values on S1..S4; replaces `f`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f_values: Option<[f64; 4]>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    pub t: Option<f64>,
    /// Discrete horizon; takes precedence over `T` where both make sense.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    /// Poisson truncation tail.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    /// Diagonal shift for the general-K curvature.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shift: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub window_radius: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    /// Restricted starting state when `eta` is not given.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub state: Option<TwoPointState>,
    /// Full starting configuration, one '+' or '-' per site.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<CouplingSchedule>,
    #[serde(rename = "T_grid", skip_serializing_if = "Option::is_none")]
    pub t_grid: Option<Vec<f64>>,
    /// Halve the Poincare bound; the check is then expected to fail.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_control: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub light_cone_check: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($base:expr, $top:expr, $($field:ident),*) => {
        RunConfig { $($field: $top.$field.or($base.$field)),* }
    };
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("config: cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("config: {}: {e}", path.display())))
    }

    /// Fields set in `top` replace those in `self`.
    pub fn overlay(self, top: RunConfig) -> RunConfig {
        overlay!(
            self, top, kind, l, k, gamma, seed, x1, x2, f, f_values, t, n, eps, shift, window_radius, samples, state,
            eta, source, schedule, t_grid, negative_control, light_cone_check, out
        )
    }

    /// Fills defaults for `kind` and validates what can be checked up front.
    pub fn resolve(mut self, kind: Kind) -> Result<RunConfig, CliError> {
        if let Some(k) = self.kind {
            if k != kind {
                return Err(CliError::Usage(format!("kind: config file says {k:?} but the subcommand is {kind:?}")));
            }
        }
        self.kind = Some(kind);
        let gamma = self
            .gamma
            .ok_or_else(|| CliError::Usage("gamma: required (set \"gamma\" in the config or pass --gamma)".into()))?;
        if !(gamma.is_finite() && gamma > 1.0) {
            return Err(CliError::Usage(format!("gamma: must satisfy gamma > 1 (got {gamma})")));
        }
        self.k.get_or_insert(0.0);
        self.seed.get_or_insert(0);
        let x1 = *self.x1.get_or_insert(0);
        let x2 = *self.x2.get_or_insert(x1 + 1);
        self.eps.get_or_insert(1e-10);
        self.window_radius.get_or_insert(4);
        self.light_cone_check.get_or_insert(true);
        if self.eta.is_none() {
            self.state.get_or_insert(TwoPointState::S1);
        }
        match kind {
            Kind::Kernel | Kind::Gamma | Kind::Curvature => {
                if self.n.is_none() {
                    self.t.get_or_insert(1.0);
                }
            }
            Kind::Poincare | Kind::Correlation => {
                self.t.get_or_insert(1.0);
                self.samples.get_or_insert(1_000_000);
                if kind == Kind::Poincare && self.f_values.is_none() {
                    self.f.get_or_insert(vec![FunctionTag::Sum, FunctionTag::Product, FunctionTag::Indicator]);
                }
                self.negative_control.get_or_insert(false);
            }
            Kind::ErgodicProbe => {
                self.t_grid.get_or_insert(vec![1.0, 2.0, 4.0, 8.0]);
                self.samples.get_or_insert(1_000_000);
                if self.f_values.is_none() {
                    self.f.get_or_insert(vec![FunctionTag::Sum]);
                }
            }
        }
        if kind == Kind::Gamma {
            let k = self.k.unwrap_or(0.0);
            let source = *self.source.get_or_insert(if k == 0.0 { Source::Exact } else { Source::Window });
            if source == Source::Mc {
                self.samples.get_or_insert(100_000);
            }
        }
        if self.l.is_none() {
            let separation = x1.abs_diff(x2);
            let reach = self.reach() + 2;
            let window = 2 * self.window_radius.unwrap_or(4) + separation + 1;
            self.l = Some((2 * reach + separation + 2).max(window).max(x1.max(x2) + 1));
        }
        if let Some(eta) = &self.eta {
            if eta.chars().count() != self.l.unwrap_or(0) {
                return Err(CliError::Usage(format!("eta: has {} sites but L = {}", eta.chars().count(), self.l.unwrap_or(0))));
            }
        }
        Ok(self)
    }

    /// Largest number of steps any run of this config may take.
    fn reach(&self) -> usize {
        if let Some(n) = self.n {
            return n;
        }
        let t_max = self.t_grid.iter().flatten().chain(self.t.iter()).fold(0.0f64, |a, &b| a.max(b));
        poisson_quantile(t_max)
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.expect("resolved")
    }

    pub fn k(&self) -> f64 {
        self.k.unwrap_or(0.0)
    }

    pub fn x1(&self) -> usize {
        self.x1.unwrap_or(0)
    }

    pub fn x2(&self) -> usize {
        self.x2.unwrap_or(1)
    }

    pub fn params(&self) -> Result<LatticeParams, CliError> {
        Ok(LatticeParams::new(self.l.expect("resolved"), self.k(), self.gamma(), self.seed.unwrap_or(0))?)
    }

    pub fn eta_config(&self) -> Result<SpinConfiguration, CliError> {
        let l = self.l.expect("resolved");
        match &self.eta {
            Some(code) => {
                let spins = code
                    .chars()
                    .map(|c| match c {
                        '+' => Ok(1),
                        '-' => Ok(-1),
                        _ => Err(CliError::Usage(format!("eta: unexpected character {c:?}, use '+' or '-'"))),
                    })
                    .collect::<Result<Vec<i8>, _>>()?;
                Ok(SpinConfiguration::new(spins)?)
            }
            None => {
                if self.x1() >= l || self.x2() >= l {
                    return Err(CliError::Usage(format!("x2: sites must lie in 0..{l}")));
                }
                let state = self.state.unwrap_or(TwoPointState::S1);
                Ok(SpinConfiguration::with_two_point(l, self.x1(), self.x2(), state))
            }
        }
    }

    pub fn functions(&self) -> Result<Vec<TwoPointFunction>, CliError> {
        if let Some(v) = self.f_values {
            return Ok(vec![TwoPointFunction::custom(v)?]);
        }
        let tags = self.f.clone().unwrap_or_else(|| vec![FunctionTag::Sum]);
        if tags.is_empty() {
            return Err(CliError::Usage("f: at least one test function is needed".into()));
        }
        Ok(tags.into_iter().map(TwoPointFunction::from_tag).collect::<Result<_, _>>()?)
    }
}

/// Parses a name the way the config file spells it.
pub fn parse_named<T: for<'de> Deserialize<'de>>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

/// The config-file spelling of a name.
pub fn to_name<T: Serialize>(x: &T) -> String {
    match serde_json::to_value(x) {
        Ok(serde_json::Value::String(s)) => s,
        _ => String::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file() {
        let file: RunConfig = serde_json::from_str(r#"{"gamma": 2.0, "K": 0.1}"#).unwrap();
        let flags = RunConfig { gamma: Some(3.0), ..Default::default() };
        let r = file.overlay(flags).resolve(Kind::Curvature).unwrap();
        assert_eq!((r.gamma, r.k), (Some(3.0), Some(0.1)));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = serde_json::from_str::<RunConfig>(r#"{"gamma": 2.0, "gama": 3}"#).unwrap_err();
        assert!(e.to_string().contains("gama"));
    }

    #[test]
    fn gamma_is_required_and_checked() {
        let e = RunConfig::default().resolve(Kind::Kernel).unwrap_err();
        assert!(e.to_string().contains("gamma"));
        let e = RunConfig { gamma: Some(1.0), ..Default::default() }.resolve(Kind::Kernel).unwrap_err();
        assert!(e.to_string().contains("gamma > 1"));
    }

    #[test]
    fn ring_covers_the_light_cone() {
        let r = RunConfig { gamma: Some(2.0), t: Some(4.0), x2: Some(3), ..Default::default() }
            .resolve(Kind::Poincare)
            .unwrap();
        let q = poisson_quantile(4.0);
        assert!(r.l.unwrap() > 2 * (q + 1) + 3);
    }

    #[test]
    fn names_parse_like_the_file() {
        assert_eq!(parse_named::<FunctionTag>("product"), Ok(FunctionTag::Product));
        assert_eq!(parse_named::<TwoPointState>("S3"), Ok(TwoPointState::S3));
        assert!(parse_named::<FunctionTag>("cube").is_err());
    }
}
