//! Reference solutions of the reflected SDE and a checker for the
//! Skorokhod-problem contract.
//!
//! A pair `(X, K)` solves the Skorokhod problem for a driver `Y` when
//! `X = Y + K` stays in `D̄`, `K` starts at zero, and `K` only moves while
//! `X` is on the boundary, along inward normals there.

use serde::Serialize;

use crate::brownian::{BrownianPath, NormalStream, TimeGrid};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::geometry::{dot, norm, ConvexDomain};
use crate::path::{check_inputs, StatePath, StepBuffers};

// Stream offset for the points sampled by the direction check.
const DIRECTION_STREAM: u64 = 0x5C0B_0001 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedTrajectory {
    pub states: StatePath,
    /// The unconstrained driver `Y` the trajectory was built from.
    pub driver: StatePath,
    /// Regulator `K`, row-major `(M + 1) × d`, `K_0 = 0`.
    pub regulator: Vec<f64>,
    /// Running total variation `|K|`.
    pub variation: Vec<f64>,
}

impl ReflectedTrajectory {
    pub fn grid(&self) -> &TimeGrid {
        self.states.grid()
    }

    pub fn dim(&self) -> usize {
        self.states.dim()
    }

    pub fn regulator_at(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.regulator[k * d..(k + 1) * d]
    }
}

/// Explicit one-sided reflection at `lower`:
/// `X_k = Y_k + max(0, max_{j≤k}(lower − Y_j))`.
pub fn skorokhod_map_halfline(
    grid: TimeGrid,
    driver: &[f64],
    lower: f64,
) -> Result<ReflectedTrajectory> {
    if driver.len() != grid.steps() + 1 {
        return Err(Error::GridMismatch(format!(
            "driver has {} values for {} grid points",
            driver.len(),
            grid.steps() + 1
        )));
    }
    if !(driver[0] >= lower) {
        return Err(Error::StartOutside {
            x0: vec![driver[0]],
            distance: lower - driver[0],
        });
    }
    let mut push: f64 = 0.0;
    let mut states = Vec::with_capacity(driver.len());
    let mut regulator = Vec::with_capacity(driver.len());
    for &y in driver {
        push = push.max(lower - y);
        regulator.push(push);
        states.push(y + push);
    }
    Ok(ReflectedTrajectory {
        states: StatePath::new(grid, 1, states)?,
        driver: StatePath::new(grid, 1, driver.to_vec())?,
        variation: regulator.clone(),
        regulator,
    })
}

/// Projected Euler scheme `X_{k+1} = Π(X_k + σΔW_k + b h)`.
///
/// The driver accumulates the unprojected increments and `K` the
/// projection displacements, so `X = Y + K` up to rounding.
pub fn projected_euler(
    domain: &ConvexDomain,
    coeffs: &CoefficientField,
    path: &BrownianPath,
    x0: &[f64],
) -> Result<ReflectedTrajectory> {
    check_inputs(domain, coeffs, path, x0)?;
    let grid = *path.grid();
    let (h, steps, d) = (grid.step(), grid.steps(), x0.len());
    let mut buf = StepBuffers::new(d);
    let mut states = Vec::with_capacity((steps + 1) * d);
    let mut driver = Vec::with_capacity((steps + 1) * d);
    let mut regulator = vec![0.0; (steps + 1) * d];
    let mut variation = vec![0.0; steps + 1];
    let mut x = x0.to_vec();
    states.extend_from_slice(&x);
    driver.extend_from_slice(x0);
    let mut z = vec![0.0; d];
    for k in 0..steps {
        buf.diffuse(coeffs, grid.time(k), h, &x, path.increment(k), &mut z);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        domain.project_into(&z, &mut x)?;
        let mut step_push = 0.0;
        for j in 0..d {
            let dy = z[j] - states[k * d + j];
            driver.push(driver[k * d + j] + dy);
            let dk = x[j] - z[j];
            regulator[(k + 1) * d + j] = regulator[k * d + j] + dk;
            step_push += dk * dk;
        }
        variation[k + 1] = variation[k] + step_push.sqrt();
        states.extend_from_slice(&x);
    }
    Ok(ReflectedTrajectory {
        states: StatePath::new(grid, d, states)?,
        driver: StatePath::new(grid, d, driver)?,
        regulator,
        variation,
    })
}

/// Reflection on `[lower, ∞)` in running-maximum form: the driver
/// `Y_{k+1} = Y_k + σ(t_k, X_k)ΔW_k + b(t_k, X_k)h` is built from the
/// reflected state and `K_{k+1} = max(K_k, lower − Y_{k+1})`.
///
/// Agrees with [`projected_euler`] on a half-line up to rounding; it serves
/// as the explicit-map reference for one-dimensional experiments.
pub fn halfline_map_reference(
    lower: f64,
    coeffs: &CoefficientField,
    path: &BrownianPath,
    x0: f64,
) -> Result<ReflectedTrajectory> {
    let domain = ConvexDomain::half_line(lower)?;
    check_inputs(&domain, coeffs, path, &[x0])?;
    let grid = *path.grid();
    let (h, steps) = (grid.step(), grid.steps());
    let mut buf = StepBuffers::new(1);
    let mut driver = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    let mut regulator: Vec<f64> = Vec::with_capacity(steps + 1);
    driver.push(x0);
    states.push(x0);
    regulator.push(0.0);
    let mut z = [0.0];
    for k in 0..steps {
        // Increment of the driver only: diffuse from 0 with coefficients at X_k.
        buf.diffuse(
            coeffs,
            grid.time(k),
            h,
            &states[k..k + 1],
            path.increment(k),
            &mut z,
        );
        let y = driver[k] + (z[0] - states[k]);
        if !y.is_finite() {
            return Err(Error::NonFinite { step: k + 1 });
        }
        let push = regulator[k].max(lower - y);
        driver.push(y);
        regulator.push(push);
        states.push(y + push);
    }
    Ok(ReflectedTrajectory {
        states: StatePath::new(grid, 1, states)?,
        driver: StatePath::new(grid, 1, driver)?,
        variation: regulator.clone(),
        regulator,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    /// States closer than this to `∂D` count as boundary states.
    pub boundary_tol: f64,
    /// Regulator increments at or below this norm count as no push.
    pub flat_tol: f64,
    pub direction_samples: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            boundary_tol: 1e-9,
            flat_tol: 1e-12,
            direction_samples: 1000,
            seed: 0,
        }
    }
}

/// Violations of the Skorokhod contract; all zero for an exact solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SkorokhodReport {
    /// `max_k dist(X_k, D̄)`.
    pub containment_violation: f64,
    /// Total `|ΔK|` accrued at states farther than `boundary_tol` from `∂D`.
    pub flatness_violation: f64,
    /// Worst `max(0, −<y − X_k, ΔK_k / |ΔK_k|>)` over sampled `y ∈ D̄`.
    pub direction_violation: f64,
    /// `max_k |X_k − Y_k − K_k|`.
    pub decomposition_residual: f64,
}

impl SkorokhodReport {
    pub fn within(
        &self,
        containment: f64,
        flatness: f64,
        direction: f64,
        decomposition: f64,
    ) -> bool {
        self.containment_violation <= containment
            && self.flatness_violation <= flatness
            && self.direction_violation <= direction
            && self.decomposition_residual <= decomposition
    }
}

/// Audits `traj` against the Skorokhod contract for `driver`.
///
/// The regulator increment `K_{k+1} − K_k` is attributed to the state
/// `X_{k+1}` it produced.
pub fn verify_skorokhod(
    domain: &ConvexDomain,
    traj: &ReflectedTrajectory,
    driver: &StatePath,
    opts: &VerifyOptions,
) -> Result<SkorokhodReport> {
    if driver.grid() != traj.grid() || driver.dim() != traj.dim() {
        return Err(Error::GridMismatch(
            "driver and trajectory grids differ".into(),
        ));
    }
    if traj.dim() != domain.dim() {
        return Err(Error::DimensionMismatch {
            expected: domain.dim(),
            got: traj.dim(),
        });
    }
    let d = traj.dim();
    let steps = traj.grid().steps();
    let mut stream = NormalStream::new(opts.seed, DIRECTION_STREAM);
    let samples = (0..opts.direction_samples)
        .map(|_| domain.sample_point(&mut stream))
        .collect::<Result<Vec<_>>>()?;

    let mut report = SkorokhodReport {
        containment_violation: 0.0,
        flatness_violation: 0.0,
        direction_violation: 0.0,
        decomposition_residual: 0.0,
    };
    let mut dk = vec![0.0; d];
    let mut gap = vec![0.0; d];
    for k in 0..=steps {
        let x = traj.states.point(k);
        report.containment_violation = report.containment_violation.max(domain.dist(x)?);
        for j in 0..d {
            gap[j] = x[j] - driver.point(k)[j] - traj.regulator_at(k)[j];
        }
        report.decomposition_residual = report.decomposition_residual.max(norm(&gap));
        if k == 0 {
            continue;
        }
        for (v, (a, b)) in dk
            .iter_mut()
            .zip(traj.regulator_at(k).iter().zip(traj.regulator_at(k - 1)))
        {
            *v = a - b;
        }
        let push = norm(&dk);
        if push <= opts.flat_tol {
            continue;
        }
        if domain.boundary_distance(x)? > opts.boundary_tol {
            report.flatness_violation += push;
        }
        for y in &samples {
            let inner = (dot(y, &dk) - dot(x, &dk)) / push;
            report.direction_violation = report.direction_violation.max(-inner);
        }
    }
    Ok(report)
}

/// Brute-force `O(M²)` lower envelope of all nondecreasing `K ≥ 0` with
/// `Y + K ≥ lower`: `K*_k = max(0, max_{j≤k}(lower − Y_j))`.
pub fn minimal_regulator_brute_force(driver: &[f64], lower: f64) -> Vec<f64> {
    (0..driver.len())
        .map(|k| (0..=k).map(|j| lower - driver[j]).fold(0.0, f64::max))
        .collect()
}

/// `max_k |X_k − X'_k|` between two reflected trajectories.
pub fn max_state_gap(a: &ReflectedTrajectory, b: &ReflectedTrajectory) -> Result<f64> {
    a.states.sup_distance(&b.states)
}
