//! Discrete state paths shared by the penalized and reflected integrators.

use crate::brownian::{BrownianPath, TimeGrid};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::geometry::{self, ConvexDomain};
use crate::tolerance;

/// Values `x_0, ..., x_M` of a `d`-dimensional path on a grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StatePath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl StatePath {
    pub fn new(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 || values.len() != (grid.steps() + 1) * dim {
            return Err(Error::GridMismatch(format!(
                "{} values do not fit {} grid points of dimension {dim}",
                values.len(),
                grid.steps() + 1
            )));
        }
        Ok(Self { grid, dim, values })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of grid points, `M + 1`.
    pub fn len(&self) -> usize {
        self.grid.steps() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.point(self.grid.steps())
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    /// Keeps every `factor`-th point, i.e. restricts to the coarser grid.
    pub fn subsample(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsened(factor)?;
        let values = self.points().step_by(factor).flatten().copied().collect();
        Self::new(grid, self.dim, values)
    }

    /// Restricts `self` to the grid of `other`, which must be a dyadic
    /// coarsening of (or equal to) this grid.
    pub fn restrict_to(&self, other: &TimeGrid) -> Result<Self> {
        if other.horizon() != self.grid.horizon() || other.log2_steps() > self.grid.log2_steps() {
            return Err(Error::GridMismatch(format!(
                "cannot restrict a 2^{} grid on [0, {}] to a 2^{} grid on [0, {}]",
                self.grid.log2_steps(),
                self.grid.horizon(),
                other.log2_steps(),
                other.horizon()
            )));
        }
        self.subsample(1 << (self.grid.log2_steps() - other.log2_steps()))
    }

    /// `max_k |x_k - y_k|` over a common grid.
    pub fn sup_distance(&self, other: &StatePath) -> Result<f64> {
        if self.grid != other.grid || self.dim != other.dim {
            return Err(Error::GridMismatch("paths live on different grids".into()));
        }
        Ok(self
            .points()
            .zip(other.points())
            .map(|(a, b)| geometry::distance(a, b))
            .fold(0.0, f64::max))
    }
}

/// Checks that domain, coefficients, noise and starting point agree in
/// dimension and that the start lies in the closed domain.
pub(crate) fn check_inputs(
    domain: &ConvexDomain,
    coeffs: &CoefficientField,
    path: &BrownianPath,
    x0: &[f64],
) -> Result<()> {
    let d = domain.dim();
    for got in [coeffs.dim(), path.dim(), x0.len()] {
        if got != d {
            return Err(Error::DimensionMismatch { expected: d, got });
        }
    }
    let distance = domain.dist(x0)?;
    if distance > tolerance::START_CONTAINMENT {
        return Err(Error::StartOutside {
            x0: x0.to_vec(),
            distance,
        });
    }
    Ok(())
}

/// Scratch buffers for one explicit diffusion step.
pub(crate) struct StepBuffers {
    sigma: Vec<f64>,
    drift: Vec<f64>,
}

impl StepBuffers {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            sigma: vec![0.0; dim * dim],
            drift: vec![0.0; dim],
        }
    }

    /// Writes `x + σ(t,x) ΔW + b(t,x) h` into `out`.
    #[inline]
    pub(crate) fn diffuse(
        &mut self,
        coeffs: &CoefficientField,
        t: f64,
        h: f64,
        x: &[f64],
        dw: &[f64],
        out: &mut [f64],
    ) {
        let d = x.len();
        coeffs.sigma_into(t, x, &mut self.sigma);
        coeffs.drift_into(t, x, &mut self.drift);
        for i in 0..d {
            let row = &self.sigma[i * d..(i + 1) * d];
            let noise: f64 = row.iter().zip(dw).map(|(s, w)| s * w).sum();
            out[i] = x[i] + noise + self.drift[i] * h;
        }
    }
}
