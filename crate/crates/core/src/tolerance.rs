//! Numerical tolerances shared across the crate.

/// Largest accepted residual of an iterative polyhedral projection.
pub const PROJECTION_RESIDUAL: f64 = 1e-10;

/// Dykstra cycles stop once successive iterates move less than this.
pub const PROJECTION_STEP: f64 = 1e-12;

pub const PROJECTION_MAX_ITERATIONS: usize = 10_000;

/// Allowed deviation of a polyhedron normal from unit length.
pub const UNIT_NORMAL: f64 = 1e-12;

/// Below this distance from the domain the outward direction is undefined.
pub const NORMAL_MIN_DISTANCE: f64 = 1e-12;

/// Starting points may sit this far outside the closed domain.
pub const START_CONTAINMENT: f64 = 1e-10;

/// Relative slack for the sampled growth and Lipschitz diagnostics.
pub const DIAGNOSTIC_SLACK: f64 = 1e-9;

/// Sampled projection checks: allowed `|Π(Π(x)) − Π(x)|`.
pub const PROJECTION_IDEMPOTENCE: f64 = 1e-10;

/// Sampled projection checks: allowed `|Π(x) − Π(y)| − |x − y|`.
pub const PROJECTION_EXPANSION: f64 = 1e-10;

/// Sampled projection checks: allowed `<y − Π(x), x − Π(x)>` for `y` in the domain.
pub const VARIATIONAL_INEQUALITY: f64 = 1e-9;
