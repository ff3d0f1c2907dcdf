//! Diffusion and drift coefficients, a small catalog of named examples, and
//! sampling diagnostics for the linear-growth and Lipschitz hypotheses.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::brownian::NormalStream;
use crate::error::{Error, Result};
use crate::tolerance;

/// `σ(t, x)` written row-major into a `d × d` buffer.
pub type SigmaFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;
/// `b(t, x)` written into a length-`d` buffer.
pub type DriftFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Time for diagnostics is drawn from `[0, DIAGNOSTIC_TIME_HORIZON]`.
pub const DIAGNOSTIC_TIME_HORIZON: f64 = 1.0;

// Keeps diagnostic sampling streams apart from Brownian path streams.
const GROWTH_STREAM: u64 = 0xC0EF_0001 << 32;
const LIPSCHITZ_STREAM: u64 = 0xC0EF_0002 << 32;

/// A coefficient pair `(σ, b)` on `R^+ × R^d`.
#[derive(Clone)]
pub struct CoefficientField {
    name: String,
    dim: usize,
    sigma: Arc<SigmaFn>,
    drift: Arc<DriftFn>,
    declared_growth: Option<f64>,
    declared_lipschitz: Option<f64>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("declared_growth", &self.declared_growth)
            .field("declared_lipschitz", &self.declared_lipschitz)
            .finish_non_exhaustive()
    }
}

impl CoefficientField {
    pub fn new<S, B>(name: impl Into<String>, dim: usize, sigma: S, drift: B) -> Self
    where
        S: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        B: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        assert!(dim >= 1, "coefficient dimension must be positive");
        Self {
            name: name.into(),
            dim,
            sigma: Arc::new(sigma),
            drift: Arc::new(drift),
            declared_growth: None,
            declared_lipschitz: None,
        }
    }

    /// `σ = s·I`, `b = 0`.
    pub fn constant(dim: usize, s: f64) -> Self {
        Self::new(
            format!("constant({s})"),
            dim,
            move |_, _, out: &mut [f64]| {
                out.fill(0.0);
                for i in 0..dim {
                    out[i * dim + i] = s;
                }
            },
            |_, _, out: &mut [f64]| out.fill(0.0),
        )
        .with_growth((s * s).max(f64::EPSILON))
        .with_lipschitz(0.0)
    }

    pub fn with_growth(mut self, c: f64) -> Self {
        self.declared_growth = Some(c);
        self
    }

    pub fn with_lipschitz(mut self, l: f64) -> Self {
        self.declared_lipschitz = Some(l);
        self
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn declared_growth(&self) -> Option<f64> {
        self.declared_growth
    }

    pub fn declared_lipschitz(&self) -> Option<f64> {
        self.declared_lipschitz
    }

    #[inline]
    pub fn sigma_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.sigma)(t, x, out)
    }

    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    /// Evaluates both coefficients, failing on non-finite output.
    fn evaluate_checked(&self, t: f64, x: &[f64], sig: &mut [f64], b: &mut [f64]) -> Result<()> {
        self.sigma_into(t, x, sig);
        self.drift_into(t, x, b);
        if sig.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteCoefficient { t, x: x.to_vec() });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tag {
    Lipschitz,
    Discontinuous,
    Degenerate,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: String,
    pub field: CoefficientField,
    pub tags: Vec<Tag>,
    pub dim: usize,
}

impl CatalogEntry {
    pub fn has_tag(&self, tag: Tag) -> bool {
        self.tags.contains(&tag)
    }
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn default_gbm_dim() -> usize {
    2
}
fn default_gbm_sigma() -> f64 {
    0.2
}
fn default_gbm_mu() -> f64 {
    0.05
}
fn default_gbm_clip() -> f64 {
    10.0
}
fn default_coupling() -> f64 {
    0.1
}
fn default_drift_scale() -> f64 {
    0.5
}

/// Catalog reference with parameters, e.g. `{"name":"ou1d","kappa":1.0}`.
/// Omitted parameters take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", deny_unknown_fields)]
pub enum CoefficientSpec {
    /// `σ = σ₀`, `b(x) = -κx` in one dimension.
    #[serde(rename = "ou1d")]
    Ou1d {
        #[serde(default = "one")]
        kappa: f64,
        #[serde(default = "one")]
        sigma0: f64,
    },
    /// `σ(x) = diag(σ₀ clip(x_i))`, `b(x) = μx`.
    #[serde(rename = "gbm-box")]
    GbmBox {
        #[serde(default = "default_gbm_dim")]
        dim: usize,
        #[serde(default = "default_gbm_sigma")]
        sigma0: f64,
        #[serde(default = "default_gbm_mu")]
        mu: f64,
        #[serde(default = "default_gbm_clip")]
        clip: f64,
    },
    /// `σ(x) = [[1, c sin x₂], [c sin x₁, 1]]`, `b(x) = -s tanh(x)` componentwise.
    #[serde(rename = "quadrant2d")]
    Quadrant2d {
        #[serde(default = "default_coupling")]
        coupling: f64,
        #[serde(default = "default_drift_scale")]
        drift_scale: f64,
    },
    /// `b ≡ 0`, `σ(x) = low` for `x < threshold` and `high` otherwise.
    #[serde(rename = "schmidt1d")]
    Schmidt1d {
        #[serde(default = "one")]
        low: f64,
        #[serde(default = "two")]
        high: f64,
        #[serde(default = "one")]
        threshold: f64,
    },
}

fn finite(name: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidArgument(format!(
            "parameter {name} must be finite, got {v}"
        )))
    }
}

impl CoefficientSpec {
    pub fn name(&self) -> &'static str {
        match self {
            CoefficientSpec::Ou1d { .. } => "ou1d",
            CoefficientSpec::GbmBox { .. } => "gbm-box",
            CoefficientSpec::Quadrant2d { .. } => "quadrant2d",
            CoefficientSpec::Schmidt1d { .. } => "schmidt1d",
        }
    }

    pub fn build(&self) -> Result<CatalogEntry> {
        let name = self.name().to_string();
        let entry = match *self {
            CoefficientSpec::Ou1d { kappa, sigma0 } => {
                let (kappa, sigma0) = (finite("kappa", kappa)?, finite("sigma0", sigma0)?);
                let field = CoefficientField::new(
                    name.clone(),
                    1,
                    move |_, _, out: &mut [f64]| out[0] = sigma0,
                    move |_, x: &[f64], out: &mut [f64]| out[0] = -kappa * x[0],
                )
                .with_growth((sigma0 * sigma0).max(kappa * kappa).max(f64::EPSILON))
                .with_lipschitz(kappa * kappa);
                CatalogEntry {
                    name,
                    field,
                    tags: vec![Tag::Lipschitz],
                    dim: 1,
                }
            }
            CoefficientSpec::GbmBox {
                dim,
                sigma0,
                mu,
                clip,
            } => {
                let (sigma0, mu, clip) = (
                    finite("sigma0", sigma0)?,
                    finite("mu", mu)?,
                    finite("clip", clip)?,
                );
                if dim == 0 || clip <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "gbm-box needs dim >= 1 and clip > 0".into(),
                    ));
                }
                let field = CoefficientField::new(
                    name.clone(),
                    dim,
                    move |_, x: &[f64], out: &mut [f64]| {
                        out.fill(0.0);
                        for i in 0..dim {
                            out[i * dim + i] = sigma0 * x[i].clamp(-clip, clip);
                        }
                    },
                    move |_, x: &[f64], out: &mut [f64]| {
                        for i in 0..dim {
                            out[i] = mu * x[i];
                        }
                    },
                )
                .with_growth((sigma0 * sigma0 + mu * mu).max(f64::EPSILON))
                .with_lipschitz(sigma0 * sigma0 + mu * mu);
                CatalogEntry {
                    name,
                    field,
                    tags: vec![Tag::Lipschitz, Tag::Degenerate],
                    dim,
                }
            }
            CoefficientSpec::Quadrant2d {
                coupling,
                drift_scale,
            } => {
                let (c, s) = (
                    finite("coupling", coupling)?,
                    finite("drift_scale", drift_scale)?,
                );
                let field = CoefficientField::new(
                    name.clone(),
                    2,
                    move |_, x: &[f64], out: &mut [f64]| {
                        out[0] = 1.0;
                        out[1] = c * x[1].sin();
                        out[2] = c * x[0].sin();
                        out[3] = 1.0;
                    },
                    move |_, x: &[f64], out: &mut [f64]| {
                        out[0] = -s * x[0].tanh();
                        out[1] = -s * x[1].tanh();
                    },
                )
                .with_growth(2.0 + 2.0 * c * c + 2.0 * s * s)
                .with_lipschitz(c * c + s * s);
                CatalogEntry {
                    name,
                    field,
                    tags: vec![Tag::Lipschitz],
                    dim: 2,
                }
            }
            CoefficientSpec::Schmidt1d {
                low,
                high,
                threshold,
            } => {
                let (low, high, threshold) = (
                    finite("low", low)?,
                    finite("high", high)?,
                    finite("threshold", threshold)?,
                );
                if low <= 0.0 || high <= 0.0 {
                    return Err(Error::InvalidArgument(
                        "schmidt1d needs positive low and high levels".into(),
                    ));
                }
                let field = CoefficientField::new(
                    name.clone(),
                    1,
                    move |_, x: &[f64], out: &mut [f64]| {
                        out[0] = if x[0] < threshold { low } else { high };
                    },
                    |_, _, out: &mut [f64]| out[0] = 0.0,
                )
                .with_growth((low * low).max(high * high));
                CatalogEntry {
                    name,
                    field,
                    tags: vec![Tag::Discontinuous],
                    dim: 1,
                }
            }
        };
        Ok(entry)
    }
}

/// Every catalog entry with default parameters.
pub fn default_catalog() -> Vec<CatalogEntry> {
    [
        r#"{"name":"ou1d"}"#,
        r#"{"name":"gbm-box"}"#,
        r#"{"name":"quadrant2d"}"#,
        r#"{"name":"schmidt1d"}"#,
    ]
    .iter()
    .map(|s| {
        serde_json::from_str::<CoefficientSpec>(s)
            .expect("catalog defaults parse")
            .build()
            .expect("catalog defaults are valid")
    })
    .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthReport {
    pub constant: f64,
    pub samples: usize,
    pub box_radius: f64,
    pub max_ratio: f64,
    /// `(t, x)` attaining `max_ratio`, present only when the check fails.
    pub violating_point: Option<(f64, Vec<f64>)>,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LipschitzReport {
    pub constant: f64,
    pub samples: usize,
    pub box_radius: f64,
    pub max_quotient: f64,
    /// `(t, x, y)` attaining `max_quotient`, present only when the check fails.
    pub violating_pair: Option<(f64, Vec<f64>, Vec<f64>)>,
    pub passed: bool,
}

fn sample_box(stream: &mut NormalStream, radius: f64, x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = radius * (2.0 * stream.next_uniform() - 1.0);
    }
}

fn check_sampling_args(samples: usize, box_radius: f64) -> Result<()> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    if !(box_radius.is_finite() && box_radius > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "invalid box radius {box_radius}"
        )));
    }
    Ok(())
}

/// Sampled check of `‖σ(t,x)‖² + |b(t,x)|² ≤ C(1 + |x|²)` on `[-R, R]^d`.
pub fn check_linear_growth(
    f: &CoefficientField,
    constant: f64,
    samples: usize,
    box_radius: f64,
    seed: u64,
) -> Result<GrowthReport> {
    check_sampling_args(samples, box_radius)?;
    if !(constant.is_finite() && constant > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "growth constant must be positive, got {constant}"
        )));
    }
    let d = f.dim();
    let mut stream = NormalStream::new(seed, GROWTH_STREAM);
    let (mut x, mut sig, mut b) = (vec![0.0; d], vec![0.0; d * d], vec![0.0; d]);
    let mut worst = (f64::NEG_INFINITY, 0.0, Vec::new());
    for _ in 0..samples {
        let t = DIAGNOSTIC_TIME_HORIZON * stream.next_uniform();
        sample_box(&mut stream, box_radius, &mut x);
        f.evaluate_checked(t, &x, &mut sig, &mut b)?;
        let num: f64 = sig.iter().chain(&b).map(|v| v * v).sum();
        let ratio = num / (1.0 + x.iter().map(|v| v * v).sum::<f64>());
        if ratio > worst.0 {
            worst = (ratio, t, x.clone());
        }
    }
    let passed = worst.0 <= constant * (1.0 + tolerance::DIAGNOSTIC_SLACK);
    Ok(GrowthReport {
        constant,
        samples,
        box_radius,
        max_ratio: worst.0,
        violating_point: (!passed).then_some((worst.1, worst.2)),
        passed,
    })
}

fn squared_difference(sx: &[f64], bx: &[f64], sy: &[f64], by: &[f64]) -> f64 {
    sx.iter()
        .zip(sy)
        .chain(bx.iter().zip(by))
        .map(|(a, b)| (a - b) * (a - b))
        .sum()
}

/// Sampled check of `‖σ(t,x) − σ(t,y)‖² + |b(t,x) − b(t,y)|² ≤ L|x − y|²`.
///
/// Pair separations are log-uniform in `[1e-6 R, R]`. Each pair is then
/// bisected down to the minimum separation, keeping the half with the larger
/// coefficient difference, so a pair straddling a jump ends up with a
/// quotient of order `jump² / (1e-6 R)²`. For Lipschitz coefficients every
/// sub-pair still satisfies the bound.
pub fn check_lipschitz(
    f: &CoefficientField,
    constant: f64,
    samples: usize,
    box_radius: f64,
    seed: u64,
) -> Result<LipschitzReport> {
    check_sampling_args(samples, box_radius)?;
    if !(constant.is_finite() && constant >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "Lipschitz constant must be nonnegative, got {constant}"
        )));
    }
    let d = f.dim();
    let min_sep = 1e-6 * box_radius;
    let mut stream = NormalStream::new(seed, LIPSCHITZ_STREAM);
    let (mut x, mut y, mut mid) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let (mut sx, mut bx) = (vec![0.0; d * d], vec![0.0; d]);
    let (mut sy, mut by) = (vec![0.0; d * d], vec![0.0; d]);
    let (mut sm, mut bm) = (vec![0.0; d * d], vec![0.0; d]);
    let mut dir = vec![0.0; d];
    let mut worst = (f64::NEG_INFINITY, 0.0, Vec::new(), Vec::new());
    for _ in 0..samples {
        let t = DIAGNOSTIC_TIME_HORIZON * stream.next_uniform();
        sample_box(&mut stream, box_radius, &mut x);
        let sep = box_radius * 10f64.powf(-6.0 * stream.next_uniform());
        for v in dir.iter_mut() {
            *v = stream.next_normal();
        }
        let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..d {
            y[j] = x[j] + sep * dir[j] / len;
        }
        f.evaluate_checked(t, &x, &mut sx, &mut bx)?;
        f.evaluate_checked(t, &y, &mut sy, &mut by)?;
        let mut num = squared_difference(&sx, &bx, &sy, &by);
        loop {
            let gap2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
            if gap2 == 0.0 {
                break;
            }
            let q = num / gap2;
            if q > worst.0 {
                worst = (q, t, x.clone(), y.clone());
            }
            if gap2 < 4.0 * min_sep * min_sep {
                break;
            }
            for j in 0..d {
                mid[j] = 0.5 * (x[j] + y[j]);
            }
            f.evaluate_checked(t, &mid, &mut sm, &mut bm)?;
            let left = squared_difference(&sx, &bx, &sm, &bm);
            let right = squared_difference(&sm, &bm, &sy, &by);
            if left >= right {
                y.copy_from_slice(&mid);
                sy.copy_from_slice(&sm);
                by.copy_from_slice(&bm);
                num = left;
            } else {
                x.copy_from_slice(&mid);
                sx.copy_from_slice(&sm);
                bx.copy_from_slice(&bm);
                num = right;
            }
        }
    }
    let passed = worst.0 <= constant * (1.0 + tolerance::DIAGNOSTIC_SLACK);
    Ok(LipschitzReport {
        constant,
        samples,
        box_radius,
        max_quotient: worst.0,
        violating_pair: (!passed).then_some((worst.1, worst.2, worst.3)),
        passed,
    })
}
