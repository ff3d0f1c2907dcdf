//! Experiment configs and the batch runner behind the `penrefl` binary.
//!
//! A config is one JSON document; unknown keys are rejected. A run writes
//! its artifacts into a single output directory:
//!
//! | kind           | files                                                |
//! |----------------|------------------------------------------------------|
//! | `validate`     | `validation.json`, `manifest.json`                   |
//! | `dist-rate`    | `errors.csv`, `rate_report.json`, `manifest.json`    |
//! | `strong-rate`  | `errors.csv`, `rate_report.json`, `manifest.json`    |
//! | `weak-compare` | `errors.csv`, `rate_report.json`, `manifest.json`    |

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::brownian::TimeGrid;
use crate::coefficients::{
    check_linear_growth, check_lipschitz, CoefficientSpec, GrowthReport, LipschitzReport,
};
use crate::error::Error;
use crate::geometry::{check_projection_properties, DomainSpec, PropertyReport};
use crate::penalized::Scheme;
use crate::rates::{
    fit_rate, weak_table_csv, Band, ErrorTable, Functional, RateReport, Reference, Regressor,
    Sweep, WeakRow,
};
use crate::tolerance;

/// Sample count of every diagnostic run by `validate`.
pub const VALIDATION_SAMPLES: usize = 10_000;
/// Half-width of the box on which coefficients are checked.
pub const VALIDATION_BOX_RADIUS: f64 = 10.0;
/// Largest moment order accepted in `p_list`.
pub const MAX_MOMENT: f64 = 8.0;

/// Slope band for the boundary-distance rate.
pub const DIST_RATE_BAND: Band = Band {
    lower: Some(0.40),
    upper: None,
};
/// Slope band for the strong rate on polyhedral domains.
pub const POLYHEDRAL_RATE_BAND: Band = Band {
    lower: Some(0.35),
    upper: Some(0.70),
};
/// Slope band for the strong rate on general convex domains.
pub const GENERAL_RATE_BAND: Band = Band {
    lower: Some(0.20),
    upper: None,
};
/// Monotonicity of error tables is judged net of this many standard errors.
pub const MONOTONE_SE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Validate,
    DistRate,
    StrongRate,
    WeakCompare,
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Kind::Validate => "validate",
            Kind::DistRate => "dist-rate",
            Kind::StrongRate => "strong-rate",
            Kind::WeakCompare => "weak-compare",
        })
    }
}

fn default_log2_fine_steps() -> u32 {
    16
}

fn default_n_list() -> Vec<f64> {
    (4..=12).map(|k| f64::from(1u32 << k)).collect()
}

fn default_scheme() -> Scheme {
    Scheme::Splitting
}

fn default_substeps() -> usize {
    1
}

fn default_p_list() -> Vec<f64> {
    vec![2.0]
}

fn default_reference() -> Reference {
    Reference::ProjectedEuler { log2_steps: None }
}

fn default_functional() -> Functional {
    Functional::CdfDistance
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Kind,
    pub domain: DomainSpec,
    pub coefficients: CoefficientSpec,
    pub x0: Vec<f64>,
    #[serde(rename = "horizon_T")]
    pub horizon: f64,
    #[serde(default = "default_log2_fine_steps")]
    pub log2_fine_steps: u32,
    pub master_seed: u64,
    pub num_paths: usize,
    #[serde(default = "default_n_list")]
    pub n_list: Vec<f64>,
    #[serde(default = "default_scheme")]
    pub scheme: Scheme,
    /// Relaxation sub-steps per grid step of the splitting scheme.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    #[serde(default = "default_p_list")]
    pub p_list: Vec<f64>,
    #[serde(default = "default_reference")]
    pub reference: Reference,
    #[serde(default = "default_functional")]
    pub functional: Functional,
    /// Overrides the slope band implied by the experiment kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<Band>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("validation failed: {0}")]
    Validation(String),
    #[error(transparent)]
    Numerical(Error),
    #[error("cannot write {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl RunError {
    /// 2 for config and validation failures, 3 for numerical failures,
    /// 1 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Validation(_) => 2,
            RunError::Numerical(_) => 3,
            RunError::Io { .. } => 1,
        }
    }
}

fn config_error(e: impl fmt::Display) -> RunError {
    RunError::Config(e.to_string())
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, RunError> {
        let config: Self = serde_json::from_str(text).map_err(config_error)?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, RunError> {
        let text = fs::read_to_string(path)
            .map_err(|e| RunError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Everything that can be checked without simulating.
    pub fn check(&self) -> Result<(), RunError> {
        let domain = self.domain.build().map_err(config_error)?;
        let entry = self.coefficients.build().map_err(config_error)?;
        if entry.dim != domain.dim() {
            return Err(RunError::Config(format!(
                "coefficients {} act in dimension {} but the domain has dimension {}",
                entry.name,
                entry.dim,
                domain.dim()
            )));
        }
        if self.x0.len() != domain.dim() {
            return Err(RunError::Config(format!(
                "x0 has {} entries for a {}-dimensional domain",
                self.x0.len(),
                domain.dim()
            )));
        }
        let gap = domain.dist(&self.x0).map_err(config_error)?;
        if gap > tolerance::START_CONTAINMENT {
            return Err(RunError::Config(format!(
                "x0 lies at distance {gap:e} outside the domain"
            )));
        }
        TimeGrid::new(self.horizon, self.log2_fine_steps).map_err(config_error)?;
        if self.num_paths < 2 {
            return Err(RunError::Config("num_paths must be at least 2".into()));
        }
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(RunError::Config(
                "n_list must be nonempty and strictly ascending".into(),
            ));
        }
        if self.n_list.iter().any(|n| !(n.is_finite() && *n > 1.0)) {
            return Err(RunError::Config(
                "levels in n_list must be finite and greater than 1".into(),
            ));
        }
        if self.p_list.is_empty() || self.p_list.iter().any(|p| !(1.0..=MAX_MOMENT).contains(p)) {
            return Err(RunError::Config(format!(
                "p_list must be a nonempty subset of [1, {MAX_MOMENT}]"
            )));
        }
        if self.substeps == 0 {
            return Err(RunError::Config("substeps must be at least 1".into()));
        }
        match self.reference {
            Reference::ProjectedEuler { log2_steps } | Reference::HalflineMap { log2_steps } => {
                if log2_steps.is_some_and(|l| l > self.log2_fine_steps) {
                    return Err(RunError::Config(
                        "reference grid is finer than the fine grid".into(),
                    ));
                }
            }
        }
        if matches!(self.reference, Reference::HalflineMap { .. })
            && !matches!(self.domain, DomainSpec::Halfline { .. })
        {
            return Err(RunError::Config(
                "reference halfline_map needs a half-line domain".into(),
            ));
        }
        if self.experiment == Kind::WeakCompare
            && self.functional == Functional::CdfDistance
            && domain.dim() != 1
        {
            return Err(RunError::Config(
                "the CDF distance needs a one-dimensional domain".into(),
            ));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults filled in,
    /// output directory removed).
    pub fn content_hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let value = serde_json::to_value(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    fn sweep(&self) -> Result<Sweep, RunError> {
        Ok(Sweep {
            domain: self.domain.build().map_err(config_error)?,
            coeffs: self.coefficients.build().map_err(config_error)?.field,
            x0: self.x0.clone(),
            grid: TimeGrid::new(self.horizon, self.log2_fine_steps).map_err(config_error)?,
            scheme: self.scheme,
            substeps: self.substeps,
            n_list: self.n_list.clone(),
            num_paths: self.num_paths,
            master_seed: self.master_seed,
        })
    }

    fn default_band(&self) -> Result<Band, RunError> {
        if let Some(b) = self.band {
            return Ok(b);
        }
        Ok(match self.experiment {
            Kind::StrongRate if !self.domain.build().map_err(config_error)?.is_polyhedral() => {
                GENERAL_RATE_BAND
            }
            Kind::StrongRate => POLYHEDRAL_RATE_BAND,
            _ => DIST_RATE_BAND,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub domain: PropertyReport,
    pub growth: GrowthReport,
    /// Absent for coefficients without a declared Lipschitz constant.
    pub lipschitz: Option<LipschitzReport>,
    pub x0_distance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableReport {
    pub p: f64,
    pub ln_n_over_n: Option<RateReport>,
    pub inv_n: Option<RateReport>,
    pub monotone_net_2se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakReport {
    pub functional: Functional,
    /// `distance(n_first) / distance(n_last)`.
    pub reduction: Option<f64>,
    pub ln_n_over_n: Option<RateReport>,
    pub inv_n: Option<RateReport>,
}

/// What a run produced, besides the files it wrote.
#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    Validation(ValidationReport),
    Rates {
        tables: Vec<ErrorTable>,
        reports: Vec<TableReport>,
    },
    Weak {
        rows: Vec<WeakRow>,
        report: WeakReport,
    },
}

pub fn validate(config: &ExperimentConfig) -> Result<ValidationReport, RunError> {
    let domain = config.domain.build().map_err(config_error)?;
    let entry = config.coefficients.build().map_err(config_error)?;
    let seed = config.master_seed;
    let properties = check_projection_properties(&domain, VALIDATION_SAMPLES, seed)
        .map_err(RunError::Numerical)?;
    let growth_constant = entry
        .field
        .declared_growth()
        .ok_or_else(|| RunError::Config(format!("{} declares no growth constant", entry.name)))?;
    let growth = check_linear_growth(
        &entry.field,
        growth_constant,
        VALIDATION_SAMPLES,
        VALIDATION_BOX_RADIUS,
        seed,
    )
    .map_err(RunError::Numerical)?;
    let lipschitz = entry
        .field
        .declared_lipschitz()
        .map(|l| {
            check_lipschitz(
                &entry.field,
                l,
                VALIDATION_SAMPLES,
                VALIDATION_BOX_RADIUS,
                seed,
            )
        })
        .transpose()
        .map_err(RunError::Numerical)?;
    let x0_distance = domain.dist(&config.x0).map_err(config_error)?;
    let passed = properties.passed
        && growth.passed
        && lipschitz.as_ref().is_none_or(|r| r.passed)
        && x0_distance <= tolerance::START_CONTAINMENT;
    Ok(ValidationReport {
        domain: properties,
        growth,
        lipschitz,
        x0_distance,
        passed,
    })
}

fn fit_both(table: &ErrorTable, band: Band) -> (Option<RateReport>, Option<RateReport>) {
    let fit = |r| fit_rate(table, r).ok().map(|rep| rep.with_band(band));
    (fit(Regressor::LnNOverN), fit(Regressor::InvN))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), RunError> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| RunError::Io {
        path,
        message: e.to_string(),
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Runs the experiment and writes its artifacts into `out_dir`.
pub fn run(config: &ExperimentConfig, out_dir: &Path) -> Result<Outcome, RunError> {
    config.check()?;
    fs::create_dir_all(out_dir).map_err(|e| RunError::Io {
        path: out_dir.to_path_buf(),
        message: e.to_string(),
    })?;
    let mut sweep = config.sweep()?;
    let dropped = sweep.restrict_to_stable_levels();
    if !dropped.is_empty() {
        log::warn!("euler scheme: dropped levels {dropped:?} violating n*h <= 1");
    }
    let outcome = match config.experiment {
        Kind::Validate => {
            let report = validate(config)?;
            write(out_dir, "validation.json", &to_json(&report))?;
            Outcome::Validation(report)
        }
        Kind::DistRate | Kind::StrongRate => {
            if sweep.n_list.is_empty() {
                return Err(RunError::Config(
                    "no level in n_list satisfies n*h <= 1".into(),
                ));
            }
            let tables = if config.experiment == Kind::DistRate {
                sweep.boundary_distance(&config.p_list)
            } else {
                sweep.strong_error(&config.reference, &config.p_list)
            }
            .map_err(RunError::Numerical)?;
            let band = config.default_band()?;
            let reports: Vec<TableReport> = tables
                .iter()
                .zip(&config.p_list)
                .map(|(t, &p)| {
                    let (ln_n_over_n, inv_n) = fit_both(t, band);
                    TableReport {
                        p,
                        ln_n_over_n,
                        inv_n,
                        monotone_net_2se: t.strictly_decreasing_net_of(MONOTONE_SE),
                    }
                })
                .collect();
            let csv: String = tables
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let csv = t.to_csv();
                    if i == 0 {
                        csv
                    } else {
                        csv.split_once('\n')
                            .map(|(_, body)| body.to_string())
                            .unwrap_or_default()
                    }
                })
                .collect();
            write(out_dir, "errors.csv", &csv)?;
            write(
                out_dir,
                "rate_report.json",
                &to_json(&serde_json::json!({
                    "experiment": config.experiment,
                    "tables": reports,
                    "estimator": "pooled (mean of per-path sup^p)^(1/p); the root is biased",
                })),
            )?;
            Outcome::Rates { tables, reports }
        }
        Kind::WeakCompare => {
            if sweep.n_list.is_empty() {
                return Err(RunError::Config(
                    "no level in n_list satisfies n*h <= 1".into(),
                ));
            }
            let rows = sweep
                .weak_compare(&config.reference, config.functional)
                .map_err(RunError::Numerical)?;
            let as_table = ErrorTable::new(
                rows.iter()
                    .map(|r| crate::rates::ErrorRow {
                        n: r.n,
                        num_paths: r.num_paths,
                        h_fine: sweep.grid.step(),
                        p: 1.0,
                        error: r.distance,
                        stderr: r.stderr.unwrap_or(0.0),
                    })
                    .collect(),
            )
            .map_err(RunError::Numerical)?;
            let (ln_n_over_n, inv_n) = fit_both(
                &as_table,
                config.band.unwrap_or(Band {
                    lower: None,
                    upper: None,
                }),
            );
            let (first, last) = (rows[0].distance, rows[rows.len() - 1].distance);
            let report = WeakReport {
                functional: config.functional,
                reduction: (last > 0.0).then(|| first / last),
                ln_n_over_n,
                inv_n,
            };
            write(out_dir, "errors.csv", &weak_table_csv(&rows))?;
            write(out_dir, "rate_report.json", &to_json(&report))?;
            Outcome::Weak { rows, report }
        }
    };
    write(
        out_dir,
        "manifest.json",
        &to_json(&serde_json::json!({
            "config": config,
            "master_seed": config.master_seed,
            "config_sha256": config.content_hash(),
            "levels_run": sweep.n_list,
            "levels_dropped": dropped,
            "version": env!("CARGO_PKG_VERSION"),
        })),
    )?;
    if let Outcome::Validation(r) = &outcome {
        if !r.passed {
            return Err(RunError::Validation(format!(
                "see {}",
                out_dir.join("validation.json").display()
            )));
        }
    }
    Ok(outcome)
}
