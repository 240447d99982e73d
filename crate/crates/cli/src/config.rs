use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use exclusion::integrator::SolverConfig;
use exclusion::model::Scenario;
use exclusion::scenarios::{self, ScenarioName};

/// Everything a run needs, as read from `--config`. Command-line flags
/// override individual fields.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Built-in name (`fig7_1d`, `countable_truncated200`, ...) or a path to
    /// a scenario JSON file.
    pub scenario: Option<String>,
    pub scenarios: Vec<String>,
    /// Grid nodes per axis, or truncation level for countable scenarios.
    pub grid: Option<usize>,
    pub solver: Option<SolverConfig>,
    /// Times at which `simulate` writes the population as a measure file.
    pub snapshots: Vec<f64>,
    pub analysis: AnalysisConfig,
    pub verify: VerifyConfig,
    pub outputs: OutputNames,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    /// Window for the mean of `t eta / ln t`; defaults to the last half.
    pub rho_window: Option<[f64; 2]>,
    /// Window for the log-log slope fits; defaults to `[t_end / 5, t_end]`.
    pub slope_window: Option<[f64; 2]>,
    /// Time for the self-similar profile check; defaults to `0.8 t_end`.
    pub selfsimilar_time: Option<f64>,
    pub tail_fraction: f64,
    pub band: [f64; 2],
    pub threshold: f64,
    pub persistence_floor: f64,
    pub mass_rel_tol: f64,
    /// Bins for the image measure of alpha.
    pub image_bins: usize,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        AnalysisConfig {
            rho_window: None,
            slope_window: None,
            selfsimilar_time: None,
            tail_fraction: 0.5,
            band: [0.5, 2.0],
            threshold: 0.02,
            persistence_floor: 1e-3,
            mass_rel_tol: 0.1,
            image_bins: 100,
        }
    }
}

impl AnalysisConfig {
    pub fn rho_window(&self, t_end: f64) -> (f64, f64) {
        self.rho_window.map_or((0.5 * t_end, t_end), |w| (w[0], w[1]))
    }

    pub fn slope_window(&self, t_end: f64) -> (f64, f64) {
        self.slope_window.map_or((0.2 * t_end, t_end), |w| (w[0], w[1]))
    }

    pub fn selfsimilar_time(&self, t_end: f64) -> f64 {
        self.selfsimilar_time.unwrap_or(0.8 * t_end)
    }

    pub fn omega(&self) -> exclusion::asymptotics::OmegaOptions {
        exclusion::asymptotics::OmegaOptions {
            tail_fraction: self.tail_fraction,
            band: (self.band[0], self.band[1]),
            threshold: self.threshold,
            persistence_floor: self.persistence_floor,
            mass_rel_tol: self.mass_rel_tol,
        }
    }
}

/// Clause toggles and tolerances for `verify`. Clauses that do not apply
/// to the predicted case are skipped.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct VerifyConfig {
    pub resource_limit: bool,
    pub limit_distribution: bool,
    pub rho: bool,
    pub exponents: bool,
    pub omega: bool,
    pub selfsimilar: bool,
    pub metric_oracle: bool,
    pub s_tol: f64,
    pub d0_tol: f64,
    pub rho_rel_tol: f64,
    /// Slope tolerance at maxima outside `J`.
    pub slope_tol: f64,
    /// Slope tolerance at maxima in `J`.
    pub slope_tol_j: f64,
    pub min_correlation: f64,
    pub oracle_pairs: usize,
    pub oracle_tol: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            resource_limit: true,
            limit_distribution: true,
            rho: true,
            exponents: true,
            omega: true,
            selfsimilar: true,
            metric_oracle: true,
            s_tol: 1e-3,
            d0_tol: 0.05,
            rho_rel_tol: 0.1,
            slope_tol: 0.15,
            slope_tol_j: 0.1,
            min_correlation: 0.99,
            oracle_pairs: 20,
            oracle_tol: 1e-6,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct OutputNames {
    pub trajectory: String,
    pub prediction: String,
    pub analysis: String,
    pub report: String,
    pub metric: String,
}

impl Default for OutputNames {
    fn default() -> Self {
        OutputNames {
            trajectory: "trajectory.csv".into(),
            prediction: "prediction.json".into(),
            analysis: "analysis.json".into(),
            report: "report.json".into(),
            metric: "metric.json".into(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<(Self, Option<PathBuf>)> {
        let Some(p) = path else {
            return Ok((RunConfig::default(), None));
        };
        let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
        let cfg = serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))?;
        Ok((cfg, p.parent().map(Path::to_path_buf)))
    }

    pub fn solver(&self) -> SolverConfig {
        self.solver.clone().unwrap_or_default()
    }
}

/// Resolves a built-in name or a scenario file. Relative paths are taken
/// against `base` (the directory of the config file) when given.
pub fn resolve_scenario(spec: &str, grid: Option<usize>, base: Option<&Path>) -> Result<Scenario> {
    let name: ScenarioName = match spec.parse() {
        Ok(ScenarioName::Custom(p)) => ScenarioName::Custom(rebase(p, base)),
        Ok(n) => n,
        Err(e) => {
            let p = rebase(PathBuf::from(spec), base);
            if p.exists() {
                ScenarioName::Custom(p)
            } else {
                return Err(e.into());
            }
        }
    };
    scenarios::build(&name, grid).with_context(|| format!("building scenario {spec}"))
}

fn rebase(p: PathBuf, base: Option<&Path>) -> PathBuf {
    match base {
        Some(b) if p.is_relative() && !p.exists() => b.join(p),
        _ => p,
    }
}
