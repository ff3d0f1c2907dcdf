//! Time stepping for the penalized SDE
//!
//! ```text
//! dX^n = σ(t, X^n) dW + b(t, X^n) dt − n (X^n − Π(X^n)) dt
//! ```
//!
//! Two schemes are provided. [`euler_penalized`] discretizes the equation
//! literally and needs `n·h ≤ 1` to stay stable. [`splitting_penalized`]
//! takes an explicit diffusion step and then solves the penalty flow with
//! the projection frozen, `y(s) = Π(x) + (x − Π(x)) e^{−ns}`, which is exact
//! for that sub-problem and stable for every `n`.
//!
//! Both schemes record the penalty process `K^n` (the cumulative
//! displacement due to the penalty term) and the point at which the penalty
//! was evaluated in each step, so that its direction can be audited.

use serde::{Deserialize, Serialize};

use crate::brownian::BrownianPath;
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::geometry::{distance, ConvexDomain};
use crate::path::{check_inputs, StatePath, StepBuffers};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Euler,
    Splitting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PenalizedTrajectory {
    pub scheme: Scheme,
    pub level: f64,
    pub states: StatePath,
    /// `K^n_k`, row-major `(M + 1) × d`, with `K^n_0 = 0`.
    pub penalty: Vec<f64>,
    /// Point whose projection drove the penalty in step `k` (`M × d`):
    /// `X_k` for Euler, the post-diffusion point for splitting.
    pub anchors: Vec<f64>,
    /// `max_k dist(X_k, D̄)`.
    pub max_dist: f64,
}

impl PenalizedTrajectory {
    pub fn dim(&self) -> usize {
        self.states.dim()
    }

    pub fn penalty_at(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.penalty[k * d..(k + 1) * d]
    }

    pub fn anchor(&self, k: usize) -> &[f64] {
        let d = self.dim();
        &self.anchors[k * d..(k + 1) * d]
    }

    /// `|K^n|_k` as the running sum of increment norms.
    pub fn total_variation(&self) -> Vec<f64> {
        let steps = self.states.grid().steps();
        let mut tv = vec![0.0; steps + 1];
        for k in 0..steps {
            tv[k + 1] = tv[k] + distance(self.penalty_at(k + 1), self.penalty_at(k));
        }
        tv
    }
}

fn check_level(n: f64) -> Result<()> {
    if !(n.is_finite() && n > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "penalization level must be positive, got {n}"
        )));
    }
    Ok(())
}

/// Exact flow of `ẏ = −n (y − Π(x))` for time `s`, starting at `x`.
pub fn relax(domain: &ConvexDomain, x: &[f64], n: f64, s: f64) -> Result<Vec<f64>> {
    if !(s >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "relaxation time must be nonnegative, got {s}"
        )));
    }
    let mut anchor = vec![0.0; x.len()];
    let mut out = vec![0.0; x.len()];
    relax_into(domain, x, (-n * s).exp(), &mut anchor, &mut out)?;
    Ok(out)
}

/// `out = Π(x) + (x − Π(x))·decay`; leaves `Π(x)` in `anchor`.
#[inline]
fn relax_into(
    domain: &ConvexDomain,
    x: &[f64],
    decay: f64,
    anchor: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    domain.project_into(x, anchor)?;
    for j in 0..x.len() {
        out[j] = anchor[j] + (x[j] - anchor[j]) * decay;
    }
    Ok(())
}

struct Recorder {
    states: Vec<f64>,
    penalty: Vec<f64>,
    anchors: Vec<f64>,
    max_dist: f64,
}

impl Recorder {
    fn new(x0: &[f64], steps: usize) -> Self {
        let d = x0.len();
        let mut states = Vec::with_capacity((steps + 1) * d);
        states.extend_from_slice(x0);
        Self {
            states,
            penalty: vec![0.0; (steps + 1) * d],
            anchors: Vec::with_capacity(steps * d),
            max_dist: 0.0,
        }
    }

    fn finish(
        self,
        path: &BrownianPath,
        scheme: Scheme,
        level: f64,
    ) -> Result<PenalizedTrajectory> {
        Ok(PenalizedTrajectory {
            scheme,
            level,
            states: StatePath::new(*path.grid(), path.dim(), self.states)?,
            penalty: self.penalty,
            anchors: self.anchors,
            max_dist: self.max_dist,
        })
    }
}

/// Explicit Euler step of the penalized equation:
/// `X_{k+1} = X_k + σΔW_k + b h − n h (X_k − Π(X_k))`.
pub fn euler_penalized(
    domain: &ConvexDomain,
    coeffs: &CoefficientField,
    path: &BrownianPath,
    x0: &[f64],
    n: f64,
) -> Result<PenalizedTrajectory> {
    check_inputs(domain, coeffs, path, x0)?;
    check_level(n)?;
    let grid = *path.grid();
    let h = grid.step();
    if n * h > 1.0 {
        return Err(Error::StabilityGuard {
            n,
            step: h,
            product: n * h,
        });
    }
    let d = x0.len();
    let steps = grid.steps();
    let mut rec = Recorder::new(x0, steps);
    let mut buf = StepBuffers::new(d);
    let (mut x, mut next, mut proj) = (x0.to_vec(), vec![0.0; d], vec![0.0; d]);
    for k in 0..steps {
        domain.project_into(&x, &mut proj)?;
        rec.max_dist = rec.max_dist.max(distance(&x, &proj));
        buf.diffuse(coeffs, grid.time(k), h, &x, path.increment(k), &mut next);
        for j in 0..d {
            let push = -n * h * (x[j] - proj[j]);
            next[j] += push;
            rec.penalty[(k + 1) * d + j] = rec.penalty[k * d + j] + push;
        }
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        rec.anchors.extend_from_slice(&x);
        rec.states.extend_from_slice(&next);
        std::mem::swap(&mut x, &mut next);
    }
    rec.max_dist = rec.max_dist.max(domain.dist(&x)?);
    rec.finish(path, Scheme::Euler, n)
}

/// Diffusion step followed by `substeps` frozen-projection relaxations of
/// length `h / substeps`, re-projecting before each.
pub fn splitting_penalized(
    domain: &ConvexDomain,
    coeffs: &CoefficientField,
    path: &BrownianPath,
    x0: &[f64],
    n: f64,
    substeps: usize,
) -> Result<PenalizedTrajectory> {
    check_inputs(domain, coeffs, path, x0)?;
    check_level(n)?;
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be at least 1".into()));
    }
    let grid = *path.grid();
    let h = grid.step();
    let decay = (-n * h / substeps as f64).exp();
    let d = x0.len();
    let steps = grid.steps();
    let mut rec = Recorder::new(x0, steps);
    let mut buf = StepBuffers::new(d);
    let mut x = x0.to_vec();
    let (mut z, mut y, mut proj) = (vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    for k in 0..steps {
        buf.diffuse(coeffs, grid.time(k), h, &x, path.increment(k), &mut z);
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { step: k + 1 });
        }
        rec.anchors.extend_from_slice(&z);
        y.copy_from_slice(&z);
        for _ in 0..substeps {
            relax_into(domain, &y, decay, &mut proj, &mut x)?;
            y.copy_from_slice(&x);
        }
        // Points on the segment [z, Π(z)] all project to Π(z).
        rec.max_dist = rec.max_dist.max(distance(&x, &proj));
        for j in 0..d {
            rec.penalty[(k + 1) * d + j] = rec.penalty[k * d + j] + (x[j] - z[j]);
        }
        rec.states.extend_from_slice(&x);
    }
    rec.finish(path, Scheme::Splitting, n)
}

/// Dispatches on `scheme`; `substeps` only affects the splitting scheme.
pub fn integrate(
    scheme: Scheme,
    domain: &ConvexDomain,
    coeffs: &CoefficientField,
    path: &BrownianPath,
    x0: &[f64],
    n: f64,
    substeps: usize,
) -> Result<PenalizedTrajectory> {
    match scheme {
        Scheme::Euler => euler_penalized(domain, coeffs, path, x0, n),
        Scheme::Splitting => splitting_penalized(domain, coeffs, path, x0, n, substeps),
    }
}

/// `(max_k dist(X_k, D̄))^p` for one trajectory.
pub fn boundary_distance_stats(traj: &PenalizedTrajectory, p: f64) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "moment order must be >= 1, got {p}"
        )));
    }
    Ok(traj.max_dist.powf(p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::brownian::{sample_path, TimeGrid};
    use crate::coefficients::CoefficientSpec;
    use crate::geometry::dot;

    fn half_line() -> ConvexDomain {
        ConvexDomain::half_line(0.0).unwrap()
    }

    fn zero_field(d: usize) -> CoefficientField {
        CoefficientField::new(
            "zero",
            d,
            |_, _, o: &mut [f64]| o.fill(0.0),
            |_, _, o: &mut [f64]| o.fill(0.0),
        )
    }

    fn ou1d() -> CoefficientField {
        CoefficientSpec::Ou1d {
            kappa: 1.0,
            sigma0: 1.0,
        }
        .build()
        .unwrap()
        .field
    }

    #[test]
    fn relax_examples() {
        let h = half_line();
        assert_eq!(relax(&h, &[0.3], 5.0, 1.0).unwrap(), vec![0.3]);
        let r = relax(&h, &[-1.0], 1.0, 1.0).unwrap();
        assert!((r[0] + (-1.0f64).exp()).abs() < 1e-15);
        assert!((r[0] + 0.367879).abs() < 1e-6);
        let r = relax(&h, &[-1.0], 50.0, 1.0).unwrap();
        assert!(r[0].abs() <= (-50.0f64).exp());
        assert!(relax(&h, &[-1.0], 1.0, -1.0).is_err());
    }

    #[test]
    fn euler_zero_coefficients_stay_put() {
        let g = TimeGrid::new(1.0, 6).unwrap();
        let p = sample_path(g, 1, 1, 0);
        let t = euler_penalized(&half_line(), &zero_field(1), &p, &[0.0], 10.0).unwrap();
        assert!(t.states.values().iter().all(|&v| v == 0.0));
        assert!(t.penalty.iter().all(|&v| v == 0.0));
        assert_eq!(t.max_dist, 0.0);
    }

    #[test]
    fn euler_single_step_kills_excursion() {
        // h = 0.1; a drift kick sends X_1 to -0.2, then n h = 1 returns it.
        let g = TimeGrid::new(0.2, 1).unwrap();
        let p = BrownianPath::from_increments(g, 1, vec![0.0, 0.0]).unwrap();
        let drift_out = CoefficientField::new(
            "kick",
            1,
            |_, _, o: &mut [f64]| o[0] = 0.0,
            |t, _, o: &mut [f64]| o[0] = if t == 0.0 { -2.0 } else { 0.0 },
        );
        let t = euler_penalized(&half_line(), &drift_out, &p, &[0.0], 10.0).unwrap();
        assert!((t.states.point(1)[0] + 0.2).abs() < 1e-15);
        assert_eq!(t.states.point(2)[0], 0.0);
        assert!((t.penalty_at(2)[0] - 0.2).abs() < 1e-15);
        assert!((t.max_dist - 0.2).abs() < 1e-15);
    }

    #[test]
    fn euler_guard_is_an_error() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let p = sample_path(g, 1, 1, 0);
        let err = euler_penalized(&half_line(), &ou1d(), &p, &[0.0], 17.0).unwrap_err();
        assert!(matches!(err, Error::StabilityGuard { .. }));
        assert!(euler_penalized(&half_line(), &ou1d(), &p, &[0.0], 16.0).is_ok());
    }

    #[test]
    fn start_outside_is_rejected() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let p = sample_path(g, 1, 1, 0);
        let err = splitting_penalized(&half_line(), &ou1d(), &p, &[-0.1], 4.0, 1).unwrap_err();
        assert!(matches!(err, Error::StartOutside { .. }));
        let p2 = sample_path(g, 2, 1, 0);
        assert!(matches!(
            splitting_penalized(&half_line(), &ou1d(), &p2, &[0.0], 4.0, 1),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn blow_up_is_reported_with_step() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let p = sample_path(g, 1, 1, 0);
        let explode = CoefficientField::new(
            "explode",
            1,
            |_, _, o: &mut [f64]| o[0] = 0.0,
            |t, _, o: &mut [f64]| o[0] = if t > 0.3 { f64::INFINITY } else { 0.0 },
        );
        let err = splitting_penalized(&half_line(), &explode, &p, &[1.0], 4.0, 1).unwrap_err();
        assert_eq!(err, Error::NonFinite { step: 6 });
    }

    #[test]
    fn splitting_zero_coefficients_stay_put() {
        let g = TimeGrid::new(1.0, 6).unwrap();
        let p = sample_path(g, 2, 1, 0);
        let ball = ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let x0 = [0.3, -0.4];
        let t = splitting_penalized(&ball, &zero_field(2), &p, &x0, 1e6, 3).unwrap();
        for x in t.states.points() {
            assert_eq!(x, &x0);
        }
    }

    #[test]
    fn splitting_single_step_matches_closed_form() {
        let g = TimeGrid::new(1.0, 1).unwrap();
        let p = BrownianPath::from_increments(g, 1, vec![0.0, 0.0]).unwrap();
        // A drift kick to -1 then a relaxation with n h = 1 over the second step.
        let kick = CoefficientField::new(
            "kick",
            1,
            |_, _, o: &mut [f64]| o[0] = 0.0,
            |t, _, o: &mut [f64]| o[0] = if t == 0.0 { -2.0 } else { 0.0 },
        );
        // n h = 1 with h = 0.5; first step lands at Π + (−1 − Π) e^{-1}.
        let t = splitting_penalized(&half_line(), &kick, &p, &[0.0], 2.0, 1).unwrap();
        let e1 = (-1.0f64).exp();
        assert!((t.states.point(1)[0] + e1).abs() < 1e-15);
        assert!((t.penalty_at(1)[0] - (1.0 - e1)).abs() < 1e-15);
    }

    #[test]
    fn penalty_direction_and_flatness() {
        let g = TimeGrid::new(1.0, 10).unwrap();
        let quad = CoefficientSpec::Quadrant2d {
            coupling: 0.1,
            drift_scale: 0.5,
        }
        .build()
        .unwrap()
        .field;
        let ball = ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let quadrant =
            ConvexDomain::polyhedron(vec![vec![-1.0, 0.0], vec![0.0, -1.0]], vec![0.0, 0.0])
                .unwrap();
        for domain in [&ball, &quadrant] {
            for seed in 0..4 {
                let p = sample_path(g, 2, 5, seed);
                for traj in [
                    euler_penalized(domain, &quad, &p, &[0.5, 0.5], 512.0).unwrap(),
                    splitting_penalized(domain, &quad, &p, &[0.5, 0.5], 4096.0, 2).unwrap(),
                ] {
                    for k in 0..g.steps() {
                        let a = traj.anchor(k);
                        let pi = domain.project(a).unwrap();
                        let dk: Vec<f64> = traj
                            .penalty_at(k + 1)
                            .iter()
                            .zip(traj.penalty_at(k))
                            .map(|(u, v)| u - v)
                            .collect();
                        let gap = distance(a, &pi);
                        if gap == 0.0 {
                            assert!(dk.iter().all(|&v| v == 0.0), "{:?} step {k}", traj.scheme);
                        } else if gap > 1e-12 {
                            let dir: Vec<f64> = pi.iter().zip(a).map(|(p, q)| p - q).collect();
                            let cos = dot(&dk, &dir) / (crate::geometry::norm(&dk) * gap);
                            assert!(cos >= 1.0 - 1e-9, "{:?} step {k} cos {cos}", traj.scheme);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn distance_nonincreasing_without_noise() {
        // A start on the boundary pushed out by a one-off kick, then no forcing.
        let g = TimeGrid::new(1.0, 8).unwrap();
        let p = BrownianPath::from_increments(g, 2, vec![0.0; 2 * 256]).unwrap();
        let ball = ConvexDomain::ball(vec![0.0, 0.0], 1.0).unwrap();
        let kick = CoefficientField::new(
            "kick",
            2,
            |_, _, o: &mut [f64]| o.fill(0.0),
            |t, _, o: &mut [f64]| o.fill(if t == 0.0 { 256.0 } else { 0.0 }),
        );
        for traj in [
            euler_penalized(&ball, &kick, &p, &[0.0, 1.0], 200.0).unwrap(),
            splitting_penalized(&ball, &kick, &p, &[0.0, 1.0], 100.0, 1).unwrap(),
        ] {
            let dists: Vec<f64> = traj
                .states
                .points()
                .map(|x| ball.dist(x).unwrap())
                .collect();
            assert!(dists[1] > 0.5);
            for w in dists[1..].windows(2) {
                assert!(w[1] <= w[0] + 1e-15, "{:?}", traj.scheme);
            }
        }
    }

    #[test]
    fn schemes_agree_for_small_nh() {
        // Sup difference of the two schemes shrinks under h-refinement at
        // fixed n (n h ≤ 0.1 throughout).
        let f = ou1d();
        let h = half_line();
        let n = 64.0;
        let mut diffs = Vec::new();
        for m in [10u32, 12, 14] {
            let g = TimeGrid::new(1.0, m).unwrap();
            let mut worst: f64 = 0.0;
            for seed in 0..8 {
                let p = sample_path(g, 1, 77, seed);
                let a = euler_penalized(&h, &f, &p, &[0.2], n).unwrap();
                let b = splitting_penalized(&h, &f, &p, &[0.2], n, 1).unwrap();
                worst = worst.max(a.states.sup_distance(&b.states).unwrap());
            }
            diffs.push(worst);
        }
        assert!(diffs[1] < diffs[0] && diffs[2] < diffs[1], "{diffs:?}");
        // O(h): a 16x finer grid should cut the gap by well over 4x.
        assert!(diffs[2] < diffs[0] / 4.0, "{diffs:?}");
    }

    #[test]
    fn boundary_stats_examples() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let p = sample_path(g, 1, 1, 0);
        let t = splitting_penalized(&half_line(), &zero_field(1), &p, &[1.0], 8.0, 1).unwrap();
        assert_eq!(boundary_distance_stats(&t, 2.0).unwrap(), 0.0);
        let mut t2 = t.clone();
        t2.max_dist = 0.1;
        assert!((boundary_distance_stats(&t2, 3.0).unwrap() - 1e-3).abs() < 1e-15);
        assert!(boundary_distance_stats(&t, 0.5).is_err());
    }

    #[test]
    fn total_variation_sums_increment_norms() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        let p = sample_path(g, 1, 3, 0);
        let t = splitting_penalized(&half_line(), &ou1d(), &p, &[0.0], 100.0, 1).unwrap();
        let tv = t.total_variation();
        assert_eq!(tv[0], 0.0);
        assert!(tv.windows(2).all(|w| w[1] >= w[0]));
        // On a half-line K^n only pushes up, so |K^n| = K^n.
        assert!((tv[256] - t.penalty_at(256)[0]).abs() < 1e-12);
    }
}
