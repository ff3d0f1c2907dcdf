//! Closed convex domains with metric projection, distance and normals.

use serde::{Deserialize, Serialize};

use crate::brownian::NormalStream;
use crate::error::{Error, Result};
use crate::tolerance;

const PROPERTY_STREAM: u64 = 0x9e0;

/// Stopping rule for the iterative polyhedral projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionOptions {
    pub max_iterations: usize,
    pub step_tol: f64,
    pub residual_tol: f64,
}

impl Default for ProjectionOptions {
    fn default() -> Self {
        Self {
            max_iterations: tolerance::PROJECTION_MAX_ITERATIONS,
            step_tol: tolerance::PROJECTION_STEP,
            residual_tol: tolerance::PROJECTION_RESIDUAL,
        }
    }
}

/// Intersection of halfspaces `<a_i, x> <= c_i` with unit normals `a_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    dim: usize,
    normals: Vec<f64>,
    offsets: Vec<f64>,
    interior: Vec<f64>,
}

impl Polyhedron {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_constraints(&self) -> usize {
        self.offsets.len()
    }

    pub fn normal(&self, i: usize) -> &[f64] {
        &self.normals[i * self.dim..(i + 1) * self.dim]
    }

    pub fn offset(&self, i: usize) -> f64 {
        self.offsets[i]
    }

    /// A point at positive distance from every facet, found at construction.
    pub fn interior_point(&self) -> &[f64] {
        &self.interior
    }

    /// Signed violation `<a_i, x> - c_i` of constraint `i`.
    fn slack(&self, i: usize, x: &[f64]) -> f64 {
        dot(self.normal(i), x) - self.offsets[i]
    }

    fn max_violation(&self, x: &[f64]) -> f64 {
        (0..self.num_constraints())
            .map(|i| self.slack(i, x))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn project_halfspace(&self, i: usize, x: &mut [f64]) {
        let s = self.slack(i, x);
        if s > 0.0 {
            for (xj, aj) in x.iter_mut().zip(self.normal(i)) {
                *xj -= s * aj;
            }
        }
    }

    fn project_into(&self, x: &[f64], out: &mut [f64], opts: &ProjectionOptions) -> Result<()> {
        out.copy_from_slice(x);
        if self.max_violation(x) <= 0.0 {
            return Ok(());
        }
        // A halfspace projection that lands in the polyhedron is the projection.
        for i in 0..self.num_constraints() {
            if self.slack(i, x) > 0.0 {
                out.copy_from_slice(x);
                self.project_halfspace(i, out);
                if self.max_violation(out) <= opts.step_tol {
                    return Ok(());
                }
            }
        }
        self.dykstra(x, out, opts)
    }

    /// Cyclic projections with Dykstra's correction terms.
    fn dykstra(&self, x: &[f64], out: &mut [f64], opts: &ProjectionOptions) -> Result<()> {
        let (m, d) = (self.num_constraints(), self.dim);
        let mut corrections = vec![0.0; m * d];
        let mut prev = vec![0.0; d];
        let mut z = vec![0.0; d];
        out.copy_from_slice(x);
        let mut residual = f64::INFINITY;
        for _ in 0..opts.max_iterations {
            prev.copy_from_slice(out);
            for i in 0..m {
                let corr = &mut corrections[i * d..(i + 1) * d];
                for j in 0..d {
                    z[j] = out[j] + corr[j];
                }
                out.copy_from_slice(&z);
                self.project_halfspace(i, out);
                for j in 0..d {
                    corr[j] = z[j] - out[j];
                }
            }
            let change = distance(out, &prev);
            let violation = self.max_violation(out).max(0.0);
            residual = change.max(violation);
            if change <= opts.step_tol && violation <= opts.residual_tol {
                return Ok(());
            }
        }
        Err(Error::ProjectionNotConverged {
            iterations: opts.max_iterations,
            residual,
        })
    }

    /// Searches for a strictly interior point: project a spread of probe
    /// points onto the polyhedron and keep the best-centred candidate among
    /// the projections and their centroid.
    fn find_interior(&self) -> Option<Vec<f64>> {
        let d = self.dim;
        let opts = ProjectionOptions::default();
        let mut probes = vec![vec![0.0; d]];
        for k in -3..=6 {
            let s = 10f64.powi(k);
            for sign in [1.0, -1.0] {
                for i in 0..d {
                    let mut e = vec![0.0; d];
                    e[i] = sign * s;
                    probes.push(e);
                }
                probes.push(vec![sign * s; d]);
            }
        }
        let mut feasible = Vec::new();
        let mut out = vec![0.0; d];
        for p in &probes {
            if self.project_into(p, &mut out, &opts).is_ok() && self.max_violation(&out) <= 0.0 {
                feasible.push(out.clone());
            }
        }
        if feasible.is_empty() {
            return None;
        }
        let mut centroid = vec![0.0; d];
        for f in &feasible {
            for j in 0..d {
                centroid[j] += f[j] / feasible.len() as f64;
            }
        }
        feasible.push(centroid);
        let (best, margin) = feasible
            .into_iter()
            .map(|x| {
                let m = -self.max_violation(&x);
                (x, m)
            })
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        (margin > 1e-9).then_some(best)
    }
}

/// Shape of a closed convex domain.
#[derive(Debug, Clone, PartialEq)]
pub enum Shape {
    /// `[lower, ∞)` in one dimension.
    HalfLine {
        lower: f64,
    },
    /// Product of intervals; bounds may be infinite.
    Box {
        lower: Vec<f64>,
        upper: Vec<f64>,
    },
    Polyhedron(Polyhedron),
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
}

/// A validated closed convex set `D̄ ⊂ R^d`.
///
/// Values are immutable after construction and can be shared across threads.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvexDomain {
    shape: Shape,
    dim: usize,
}

/// Unit inward normal `n` anchored at a boundary point.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalDirection {
    pub direction: Vec<f64>,
    pub anchor: Vec<f64>,
}

impl ConvexDomain {
    pub fn half_line(lower: f64) -> Result<Self> {
        if !lower.is_finite() {
            return Err(Error::InvalidDomain(format!(
                "half-line bound must be finite, got {lower}"
            )));
        }
        Ok(Self {
            shape: Shape::HalfLine { lower },
            dim: 1,
        })
    }

    /// Axis-aligned box; use `±f64::INFINITY` for open sides.
    pub fn boxed(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() || lower.len() != upper.len() {
            return Err(Error::InvalidDomain(format!(
                "box needs matching nonempty bounds, got {} lower and {} upper",
                lower.len(),
                upper.len()
            )));
        }
        for (i, (&l, &u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || l == f64::INFINITY || u == f64::NEG_INFINITY || l >= u {
                return Err(Error::InvalidDomain(format!(
                    "box axis {i} has invalid bounds [{l}, {u}]"
                )));
            }
        }
        let dim = lower.len();
        Ok(Self {
            shape: Shape::Box { lower, upper },
            dim,
        })
    }

    /// Polyhedron `{x : <a_i, x> <= c_i}`. `normals` holds one unit vector
    /// per constraint; the set must have nonempty interior.
    pub fn polyhedron(normals: Vec<Vec<f64>>, offsets: Vec<f64>) -> Result<Self> {
        if normals.is_empty() || normals.len() != offsets.len() {
            return Err(Error::InvalidDomain(format!(
                "polyhedron needs matching nonempty normals and offsets, got {} and {}",
                normals.len(),
                offsets.len()
            )));
        }
        let dim = normals[0].len();
        if dim == 0 {
            return Err(Error::InvalidDomain("polyhedron normals are empty".into()));
        }
        let mut flat = Vec::with_capacity(normals.len() * dim);
        for (i, a) in normals.iter().enumerate() {
            if a.len() != dim {
                return Err(Error::InvalidDomain(format!(
                    "normal {i} has dimension {} instead of {dim}",
                    a.len()
                )));
            }
            let len = norm(a);
            if !len.is_finite() || (len - 1.0).abs() > tolerance::UNIT_NORMAL {
                return Err(Error::InvalidDomain(format!(
                    "normal {i} has length {len}, expected a unit vector"
                )));
            }
            if !offsets[i].is_finite() {
                return Err(Error::InvalidDomain(format!("offset {i} is not finite")));
            }
            flat.extend_from_slice(a);
        }
        let mut poly = Polyhedron {
            dim,
            normals: flat,
            offsets,
            interior: Vec::new(),
        };
        poly.interior = poly
            .find_interior()
            .ok_or_else(|| Error::InvalidDomain("polyhedron has empty interior".into()))?;
        Ok(Self {
            shape: Shape::Polyhedron(poly),
            dim,
        })
    }

    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || center.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidDomain(
                "ball center must be finite and nonempty".into(),
            ));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::InvalidDomain(format!(
                "ball radius must be positive, got {radius}"
            )));
        }
        let dim = center.len();
        Ok(Self {
            shape: Shape::Ball { center, radius },
            dim,
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Half-lines, boxes and polyhedra; the sharper strong rate applies here.
    pub fn is_polyhedral(&self) -> bool {
        !matches!(self.shape, Shape::Ball { .. })
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: x.len(),
            });
        }
        Ok(())
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> Result<bool> {
        self.check_dim(x)?;
        if let Shape::Polyhedron(p) = &self.shape {
            if p.max_violation(x) <= 0.0 {
                return Ok(true);
            }
        }
        Ok(self.dist(x)? <= tol)
    }

    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.dim];
        self.project_into(x, &mut out)?;
        Ok(out)
    }

    pub fn project_into(&self, x: &[f64], out: &mut [f64]) -> Result<()> {
        self.project_with(x, out, &ProjectionOptions::default())
    }

    /// Metric projection onto the closed domain. Points already inside are
    /// returned bit-for-bit unchanged.
    pub fn project_with(&self, x: &[f64], out: &mut [f64], opts: &ProjectionOptions) -> Result<()> {
        self.check_dim(x)?;
        self.check_dim(out)?;
        match &self.shape {
            Shape::HalfLine { lower } => out[0] = x[0].max(*lower),
            Shape::Box { lower, upper } => {
                for j in 0..self.dim {
                    out[j] = x[j].max(lower[j]).min(upper[j]);
                }
            }
            Shape::Ball { center, radius } => {
                let r = distance(x, center);
                if r <= *radius {
                    out.copy_from_slice(x);
                } else {
                    let scale = radius / r;
                    for j in 0..self.dim {
                        out[j] = center[j] + (x[j] - center[j]) * scale;
                    }
                }
            }
            Shape::Polyhedron(p) => p.project_into(x, out, opts)?,
        }
        Ok(())
    }

    pub fn dist(&self, x: &[f64]) -> Result<f64> {
        let p = self.project(x)?;
        Ok(distance(x, &p))
    }

    /// Inward unit normal at `Π(x)` for a point `x` outside the domain.
    pub fn normal_at(&self, x: &[f64]) -> Result<NormalDirection> {
        let anchor = self.project(x)?;
        let gap = distance(x, &anchor);
        if gap <= tolerance::NORMAL_MIN_DISTANCE {
            return Err(Error::UndefinedNormal { distance: gap });
        }
        let direction = anchor.iter().zip(x).map(|(p, q)| (p - q) / gap).collect();
        Ok(NormalDirection { direction, anchor })
    }

    /// Distance to the boundary for points of the closed domain, and the
    /// distance to the domain for points outside it.
    ///
    /// Polyhedra use the nearest supporting hyperplane, balls `r - |x - c|`.
    pub fn boundary_distance(&self, x: &[f64]) -> Result<f64> {
        self.check_dim(x)?;
        let inside = match &self.shape {
            Shape::HalfLine { lower } => x[0] - lower,
            Shape::Box { lower, upper } => (0..self.dim)
                .map(|j| (x[j] - lower[j]).min(upper[j] - x[j]))
                .fold(f64::INFINITY, f64::min),
            Shape::Ball { center, radius } => radius - distance(x, center),
            Shape::Polyhedron(p) => -p.max_violation(x),
        };
        if inside >= 0.0 {
            Ok(inside)
        } else {
            self.dist(x)
        }
    }

    /// A point well inside the domain.
    pub fn interior_point(&self) -> Vec<f64> {
        match &self.shape {
            Shape::HalfLine { lower } => vec![lower + 1.0],
            Shape::Box { lower, upper } => lower
                .iter()
                .zip(upper)
                .map(|(&l, &u)| match (l.is_finite(), u.is_finite()) {
                    (true, true) => 0.5 * (l + u),
                    (true, false) => l + 1.0,
                    (false, true) => u - 1.0,
                    (false, false) => 0.0,
                })
                .collect(),
            Shape::Polyhedron(p) => p.interior.clone(),
            Shape::Ball { center, .. } => center.clone(),
        }
    }

    /// Typical length scale used when sampling test points.
    pub fn length_scale(&self) -> f64 {
        match &self.shape {
            Shape::Ball { radius, .. } => *radius,
            Shape::Box { lower, upper } => {
                lower
                    .iter()
                    .zip(upper)
                    .map(|(l, u)| u - l)
                    .filter(|w| w.is_finite())
                    .fold(2.0, f64::min)
                    * 0.5
            }
            _ => 1.0,
        }
    }

    /// Draws a point of the closed domain by projecting a Gaussian sample
    /// centred at an interior point. Boundary points occur with positive
    /// probability.
    pub fn sample_point(&self, stream: &mut NormalStream) -> Result<Vec<f64>> {
        let centre = self.interior_point();
        let scale = 2.0 * self.length_scale();
        let z: Vec<f64> = centre
            .iter()
            .map(|c| c + scale * stream.next_normal())
            .collect();
        self.project(&z)
    }
}

/// Largest violations of the projection properties found on sampled points;
/// `passed` compares them with the `PROJECTION_*` and `VARIATIONAL_INEQUALITY`
/// tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropertyReport {
    pub samples: usize,
    /// `max |Π(Π(x)) − Π(x)|`.
    pub idempotence: f64,
    /// `max (|Π(x) − Π(y)| − |x − y|)`, positive only on violation.
    pub expansion: f64,
    /// `max <x − Π(x), y − Π(x)>` over `y` in the closed domain.
    pub variational: f64,
    pub passed: bool,
}

/// Checks idempotence, nonexpansiveness and the variational inequality of
/// the projection on `samples` Gaussian points around the domain.
pub fn check_projection_properties(
    domain: &ConvexDomain,
    samples: usize,
    seed: u64,
) -> Result<PropertyReport> {
    if samples == 0 {
        return Err(Error::InvalidArgument("need at least one sample".into()));
    }
    let mut stream = NormalStream::new(seed, PROPERTY_STREAM);
    let centre = domain.interior_point();
    let scale = 2.0 * domain.length_scale();
    let draw = |stream: &mut NormalStream| -> Vec<f64> {
        centre
            .iter()
            .map(|c| c + scale * stream.next_normal())
            .collect()
    };
    let (mut idempotence, mut expansion, mut variational) =
        (0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for _ in 0..samples {
        let x = draw(&mut stream);
        let y = draw(&mut stream);
        let px = domain.project(&x)?;
        let py = domain.project(&y)?;
        idempotence = idempotence.max(distance(&domain.project(&px)?, &px));
        expansion = expansion.max(distance(&px, &py) - distance(&x, &y));
        let gap: Vec<f64> = x.iter().zip(&px).map(|(a, b)| a - b).collect();
        let probe: Vec<f64> = py.iter().zip(&px).map(|(a, b)| a - b).collect();
        variational = variational.max(dot(&gap, &probe));
    }
    Ok(PropertyReport {
        samples,
        idempotence,
        expansion,
        variational,
        passed: idempotence <= tolerance::PROJECTION_IDEMPOTENCE
            && expansion <= tolerance::PROJECTION_EXPANSION
            && variational <= tolerance::VARIATIONAL_INEQUALITY,
    })
}

/// Serializable description of a domain, as found in experiment configs.
///
/// Infinite box bounds are written as `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase", deny_unknown_fields)]
pub enum DomainSpec {
    Halfline {
        lower: f64,
    },
    Box {
        lower: Vec<Option<f64>>,
        upper: Vec<Option<f64>>,
    },
    Polyhedron {
        normals: Vec<Vec<f64>>,
        offsets: Vec<f64>,
    },
    Ball {
        center: Vec<f64>,
        radius: f64,
    },
}

impl DomainSpec {
    pub fn build(&self) -> Result<ConvexDomain> {
        match self {
            DomainSpec::Halfline { lower } => ConvexDomain::half_line(*lower),
            DomainSpec::Box { lower, upper } => ConvexDomain::boxed(
                lower
                    .iter()
                    .map(|l| l.unwrap_or(f64::NEG_INFINITY))
                    .collect(),
                upper.iter().map(|u| u.unwrap_or(f64::INFINITY)).collect(),
            ),
            DomainSpec::Polyhedron { normals, offsets } => {
                ConvexDomain::polyhedron(normals.clone(), offsets.clone())
            }
            DomainSpec::Ball { center, radius } => ConvexDomain::ball(center.clone(), *radius),
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}
