//! Monte Carlo error tables, rate fits and the sweeps that produce them.
//!
//! Every sweep draws path `i` from stream `i` of the master seed, so all
//! penalization levels see the same noise. Per-path work runs on the current
//! rayon pool; results are reduced in path-index order, which makes every
//! aggregate bitwise independent of the thread count.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::brownian::{sample_path, BrownianPath, TimeGrid};
use crate::coefficients::CoefficientField;
use crate::error::{Error, Result};
use crate::geometry::{distance, ConvexDomain, Shape};
use crate::path::StatePath;
use crate::penalized::{integrate, Scheme};
use crate::reflected::{halfline_map_reference, projected_euler};

/// `(max_k |a_k − b_k|)^p` after restricting the finer path to the coarser grid.
pub fn lp_sup_error(reference: &StatePath, approx: &StatePath, p: f64) -> Result<f64> {
    check_moment(p)?;
    let (fine, coarse) = if reference.grid().log2_steps() >= approx.grid().log2_steps() {
        (reference, approx)
    } else {
        (approx, reference)
    };
    let restricted = fine.restrict_to(coarse.grid())?;
    Ok(restricted.sup_distance(coarse)?.powf(p))
}

fn check_moment(p: f64) -> Result<()> {
    if !(p >= 1.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "moment order must be in [1, ∞), got {p}"
        )));
    }
    Ok(())
}

/// Pooled norm `(mean v_i)^{1/p}` of per-path values `v_i = sup^p`, with its
/// delta-method standard error.
pub fn pooled_norm(samples: &[f64], p: f64) -> Result<(f64, f64)> {
    check_moment(p)?;
    if samples.len() < 2 {
        return Err(Error::InvalidArgument(
            "pooled norm needs at least 2 samples".into(),
        ));
    }
    let (mean, se_mean) = mean_and_stderr(samples);
    let norm = mean.powf(1.0 / p);
    let stderr = if mean > 0.0 {
        norm / (p * mean) * se_mean
    } else {
        0.0
    };
    Ok((norm, stderr))
}

/// Sample mean and standard error of the mean, summed in index order.
fn mean_and_stderr(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub n: f64,
    pub num_paths: usize,
    pub h_fine: f64,
    pub p: f64,
    pub error: f64,
    pub stderr: f64,
}

/// Rows ordered by strictly increasing level `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorTable {
    rows: Vec<ErrorRow>,
}

impl ErrorTable {
    pub fn new(rows: Vec<ErrorRow>) -> Result<Self> {
        if rows.windows(2).any(|w| !(w[0].n < w[1].n)) {
            return Err(Error::InvalidArgument(
                "levels must be strictly increasing".into(),
            ));
        }
        for r in &rows {
            if !(r.error >= 0.0 && r.error.is_finite()) || !r.stderr.is_finite() || r.stderr < 0.0 {
                return Err(Error::InvalidArgument(format!(
                    "row n = {} has error {} and stderr {}",
                    r.n, r.error, r.stderr
                )));
            }
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[ErrorRow] {
        &self.rows
    }

    /// Each error lies below its predecessor with the two `k`-SE intervals
    /// disjoint: `e_{j+1} + k·se_{j+1} < e_j − k·se_j`.
    pub fn strictly_decreasing_net_of(&self, k: f64) -> bool {
        self.rows
            .windows(2)
            .all(|w| w[1].error + k * w[1].stderr < w[0].error - k * w[0].stderr)
    }

    /// CSV with columns `n,num_paths,p,error,stderr`; floats carry 17
    /// significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,num_paths,p,error,stderr\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{:.16e},{:.16e}\n",
                r.n, r.num_paths, r.p, r.error, r.stderr
            ));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regressor {
    /// `log((ln n)/n)`.
    LnNOverN,
    /// `log(1/n)`.
    InvN,
}

impl Regressor {
    pub fn abscissa(self, n: f64) -> Result<f64> {
        match self {
            Regressor::LnNOverN if n > 1.0 => Ok((n.ln() / n).ln()),
            Regressor::InvN if n > 0.0 => Ok(-n.ln()),
            _ => Err(Error::InvalidArgument(format!(
                "level {n} is outside the regressor's range"
            ))),
        }
    }
}

/// Closed slope interval; `None` ends are unbounded.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
}

impl Band {
    pub fn at_least(lower: f64) -> Self {
        Self {
            lower: Some(lower),
            upper: None,
        }
    }

    pub fn between(lower: f64, upper: f64) -> Self {
        Self {
            lower: Some(lower),
            upper: Some(upper),
        }
    }

    pub fn contains(&self, slope: f64) -> bool {
        self.lower.is_none_or(|l| slope >= l) && self.upper.is_none_or(|u| slope <= u)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub slope: f64,
    pub intercept: f64,
    /// Euclidean norm of the fit residuals in log space.
    pub residual: f64,
    pub regressor: Regressor,
    pub rows: usize,
    pub band: Option<Band>,
    pub pass: Option<bool>,
}

impl RateReport {
    pub fn with_band(mut self, band: Band) -> Self {
        self.band = Some(band);
        self.pass = Some(band.contains(self.slope));
        self
    }
}

/// Least squares `log(error) = slope · regressor(n) + intercept`.
pub fn fit_rate(table: &ErrorTable, regressor: Regressor) -> Result<RateReport> {
    let rows = table.rows();
    if rows.len() < 4 {
        return Err(Error::InvalidArgument(format!(
            "rate fit needs at least 4 rows, got {}",
            rows.len()
        )));
    }
    let mut xs = Vec::with_capacity(rows.len());
    let mut ys = Vec::with_capacity(rows.len());
    for r in rows {
        if !(r.error > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "error at n = {} is not positive",
                r.n
            )));
        }
        xs.push(regressor.abscissa(r.n)?);
        ys.push(r.error.ln());
    }
    let m = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / m;
    let ybar = ys.iter().sum::<f64>() / m;
    let sxx: f64 = xs.iter().map(|x| (x - xbar).powi(2)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    if !(sxx > 0.0) {
        return Err(Error::InvalidArgument(
            "regressor values are all equal".into(),
        ));
    }
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let residual = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum::<f64>()
        .sqrt();
    if !slope.is_finite() {
        return Err(Error::InvalidArgument("fitted slope is not finite".into()));
    }
    Ok(RateReport {
        slope,
        intercept,
        residual,
        regressor,
        rows: rows.len(),
        band: None,
        pass: None,
    })
}

/// `max |x_t − x_s|` over grid pairs with `|t − s| ≤ delta` and `s, t ≤ horizon`.
pub fn modulus_of_continuity(path: &StatePath, delta: f64, horizon: f64) -> Result<f64> {
    if !(delta > 0.0 && delta <= horizon) {
        return Err(Error::InvalidArgument(format!(
            "need 0 < delta <= T, got delta = {delta}, T = {horizon}"
        )));
    }
    let grid = path.grid();
    let h = grid.step();
    let last = ((horizon / h) * (1.0 + 1e-12))
        .floor()
        .min(grid.steps() as f64) as usize;
    if last == 0 {
        return Err(Error::InvalidArgument(format!(
            "no grid pair lies in [0, {horizon}]"
        )));
    }
    let window = ((delta / h) * (1.0 + 1e-12)).floor() as usize;
    if window == 0 {
        return Ok(0.0);
    }
    if path.dim() == 1 {
        return Ok(sliding_range(&path.values()[..=last], window));
    }
    let mut best: f64 = 0.0;
    for i in 0..last {
        for j in i + 1..=(i + window).min(last) {
            best = best.max(distance(path.point(i), path.point(j)));
        }
    }
    Ok(best)
}

/// Largest `max − min` over all windows of `window + 1` consecutive values.
fn sliding_range(x: &[f64], window: usize) -> f64 {
    let mut hi: VecDeque<usize> = VecDeque::new();
    let mut lo: VecDeque<usize> = VecDeque::new();
    let mut best: f64 = 0.0;
    for j in 0..x.len() {
        while hi.back().is_some_and(|&b| x[b] <= x[j]) {
            hi.pop_back();
        }
        hi.push_back(j);
        while lo.back().is_some_and(|&b| x[b] >= x[j]) {
            lo.pop_back();
        }
        lo.push_back(j);
        while hi.front().is_some_and(|&f| f + window < j) {
            hi.pop_front();
        }
        while lo.front().is_some_and(|&f| f + window < j) {
            lo.pop_front();
        }
        best = best.max(x[hi[0]] - x[lo[0]]);
    }
    best
}

/// How the reflected reference for strong and weak comparisons is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case", deny_unknown_fields)]
pub enum Reference {
    /// Projected Euler on the fine grid coarsened to `2^log2_steps` steps
    /// (the fine grid itself when absent).
    ProjectedEuler {
        #[serde(default)]
        log2_steps: Option<u32>,
    },
    /// Running-maximum reflection on a half-line domain.
    HalflineMap {
        #[serde(default)]
        log2_steps: Option<u32>,
    },
}

impl Reference {
    fn log2_steps(&self) -> Option<u32> {
        match *self {
            Reference::ProjectedEuler { log2_steps } | Reference::HalflineMap { log2_steps } => {
                log2_steps
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Functional {
    Mean,
    SecondMoment,
    CdfDistance,
}

/// One row of a weak comparison. `approx` and `reference` are the functional
/// values (Euclidean norm of the mean vector for `Mean` when `d > 1`); both
/// are absent for the CDF distance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeakRow {
    pub n: f64,
    pub num_paths: usize,
    pub functional: Functional,
    pub approx: Option<f64>,
    pub reference: Option<f64>,
    pub distance: f64,
    /// Paired standard error of `distance`; absent for the CDF distance.
    pub stderr: Option<f64>,
}

/// CSV with columns `n,num_paths,functional,approx,reference,distance,stderr`;
/// absent values are empty fields.
pub fn weak_table_csv(rows: &[WeakRow]) -> String {
    let opt = |v: Option<f64>| v.map(|v| format!("{v:.16e}")).unwrap_or_default();
    let mut out = String::from("n,num_paths,functional,approx,reference,distance,stderr\n");
    for r in rows {
        let name = match r.functional {
            Functional::Mean => "mean",
            Functional::SecondMoment => "second_moment",
            Functional::CdfDistance => "cdf_distance",
        };
        out.push_str(&format!(
            "{},{},{name},{},{},{:.16e},{}\n",
            r.n,
            r.num_paths,
            opt(r.approx),
            opt(r.reference),
            r.distance,
            opt(r.stderr)
        ));
    }
    out
}

/// Two-sample Kolmogorov–Smirnov statistic `sup_x |F_a(x) − F_b(x)|`.
pub fn ks_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() || a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(
            "samples must be nonempty and free of NaN".into(),
        ));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let v = a[i].min(b[j]);
        while i < a.len() && a[i] <= v {
            i += 1;
        }
        while j < b.len() && b[j] <= v {
            j += 1;
        }
        best = best.max((i as f64 / na - j as f64 / nb).abs());
    }
    Ok(best)
}

/// A Monte Carlo sweep over penalization levels on shared Brownian paths.
#[derive(Debug, Clone)]
pub struct Sweep {
    pub domain: ConvexDomain,
    pub coeffs: CoefficientField,
    pub x0: Vec<f64>,
    pub grid: TimeGrid,
    pub scheme: Scheme,
    pub substeps: usize,
    pub n_list: Vec<f64>,
    pub num_paths: usize,
    pub master_seed: u64,
}

impl Sweep {
    fn validate(&self) -> Result<()> {
        if self.n_list.is_empty() || self.n_list.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::InvalidArgument(
                "n_list must be nonempty and strictly increasing".into(),
            ));
        }
        if self.n_list.iter().any(|n| !(*n >= 0.0 && n.is_finite())) {
            return Err(Error::InvalidArgument(
                "levels must be finite and nonnegative".into(),
            ));
        }
        if self.num_paths < 2 {
            return Err(Error::InvalidArgument(
                "a sweep needs at least 2 paths".into(),
            ));
        }
        if self.x0.len() != self.domain.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.domain.dim(),
                got: self.x0.len(),
            });
        }
        Ok(())
    }

    /// Drops the levels violating `n·h ≤ 1` under the Euler scheme and
    /// returns them; a no-op for splitting.
    pub fn restrict_to_stable_levels(&mut self) -> Vec<f64> {
        if self.scheme != Scheme::Euler {
            return Vec::new();
        }
        let h = self.grid.step();
        let (keep, drop): (Vec<f64>, Vec<f64>) = self.n_list.iter().partition(|&&n| n * h <= 1.0);
        self.n_list = keep;
        drop
    }

    fn path(&self, index: usize) -> BrownianPath {
        sample_path(self.grid, self.domain.dim(), self.master_seed, index as u64)
    }

    /// Runs `f` on every path index in parallel; the first failure in index
    /// order is returned.
    fn per_path<T, F>(&self, f: F) -> Result<Vec<T>>
    where
        T: Send,
        F: Fn(usize, &BrownianPath) -> Result<T> + Sync,
    {
        let results: Vec<Result<T>> = (0..self.num_paths)
            .into_par_iter()
            .map(|i| f(i, &self.path(i)))
            .collect();
        results.into_iter().collect()
    }

    fn penalized(&self, path: &BrownianPath, index: usize, n: f64) -> Result<StatePath> {
        integrate(
            self.scheme,
            &self.domain,
            &self.coeffs,
            path,
            &self.x0,
            n,
            self.substeps,
        )
        .map(|t| t.states)
        .map_err(|e| Error::Integration {
            level: Some(n),
            path: index as u64,
            source: Box::new(e),
        })
    }

    fn check_reference(&self, reference: &Reference) -> Result<()> {
        if reference
            .log2_steps()
            .is_some_and(|l| l > self.grid.log2_steps())
        {
            return Err(Error::InvalidArgument(format!(
                "reference grid 2^{} is finer than the fine grid 2^{}",
                reference.log2_steps().unwrap_or_default(),
                self.grid.log2_steps()
            )));
        }
        if matches!(reference, Reference::HalflineMap { .. })
            && !matches!(self.domain.shape(), Shape::HalfLine { .. })
        {
            return Err(Error::InvalidArgument(
                "the half-line map reference needs a half-line domain".into(),
            ));
        }
        Ok(())
    }

    fn reference(
        &self,
        reference: &Reference,
        path: &BrownianPath,
        index: usize,
    ) -> Result<StatePath> {
        let fine = self.grid.log2_steps();
        let coarse;
        let noise = match reference.log2_steps() {
            Some(l) if l < fine => {
                coarse = path.coarsen(1 << (fine - l))?;
                &coarse
            }
            _ => path,
        };
        let traj = match (reference, self.domain.shape()) {
            (Reference::HalflineMap { .. }, Shape::HalfLine { lower }) => {
                halfline_map_reference(*lower, &self.coeffs, noise, self.x0[0])
            }
            _ => projected_euler(&self.domain, &self.coeffs, noise, &self.x0),
        };
        traj.map(|t| t.states).map_err(|e| Error::Integration {
            level: None,
            path: index as u64,
            source: Box::new(e),
        })
    }

    /// Builds one table per `p` from per-path samples indexed `[path][n][p]`.
    fn tables(&self, samples: &[Vec<Vec<f64>>], p_list: &[f64]) -> Result<Vec<ErrorTable>> {
        p_list
            .iter()
            .enumerate()
            .map(|(pi, &p)| {
                let rows = self
                    .n_list
                    .iter()
                    .enumerate()
                    .map(|(ni, &n)| {
                        let column: Vec<f64> = samples.iter().map(|s| s[ni][pi]).collect();
                        let (error, stderr) = pooled_norm(&column, p)?;
                        Ok(ErrorRow {
                            n,
                            num_paths: self.num_paths,
                            h_fine: self.grid.step(),
                            p,
                            error,
                            stderr,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                ErrorTable::new(rows)
            })
            .collect()
    }

    /// Pooled `‖max_k dist(X^n_k, D̄)‖_p` per level, one table per `p`.
    pub fn boundary_distance(&self, p_list: &[f64]) -> Result<Vec<ErrorTable>> {
        self.validate()?;
        p_list.iter().try_for_each(|&p| check_moment(p))?;
        let samples = self.per_path(|i, path| {
            self.n_list
                .iter()
                .map(|&n| {
                    let traj = integrate(
                        self.scheme,
                        &self.domain,
                        &self.coeffs,
                        path,
                        &self.x0,
                        n,
                        self.substeps,
                    )
                    .map_err(|e| Error::Integration {
                        level: Some(n),
                        path: i as u64,
                        source: Box::new(e),
                    })?;
                    Ok(p_list.iter().map(|&p| traj.max_dist.powf(p)).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })?;
        self.tables(&samples, p_list)
    }

    /// Pooled `‖sup_t |X^n_t − X_t|‖_p` against the reflected reference.
    pub fn strong_error(&self, reference: &Reference, p_list: &[f64]) -> Result<Vec<ErrorTable>> {
        self.validate()?;
        self.check_reference(reference)?;
        p_list.iter().try_for_each(|&p| check_moment(p))?;
        let samples = self.per_path(|i, path| {
            let exact = self.reference(reference, path, i)?;
            self.n_list
                .iter()
                .map(|&n| {
                    let approx = self.penalized(path, i, n)?;
                    let sup = lp_sup_error(&exact, &approx, 1.0)?;
                    Ok(p_list.iter().map(|&p| sup.powf(p)).collect())
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })?;
        self.tables(&samples, p_list)
    }

    /// Terminal-value functional of `X^n_T` against the reference.
    pub fn weak_compare(
        &self,
        reference: &Reference,
        functional: Functional,
    ) -> Result<Vec<WeakRow>> {
        self.validate()?;
        self.check_reference(reference)?;
        let d = self.domain.dim();
        if functional == Functional::CdfDistance && d != 1 {
            return Err(Error::InvalidArgument(
                "the CDF distance needs d = 1".into(),
            ));
        }
        // [path] -> (reference X_T, [n] -> X^n_T)
        let terminal = self.per_path(|i, path| {
            let exact = self.reference(reference, path, i)?.last().to_vec();
            let approx = self
                .n_list
                .iter()
                .map(|&n| Ok(self.penalized(path, i, n)?.last().to_vec()))
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Ok((exact, approx))
        })?;
        let reference_values: Vec<&[f64]> = terminal.iter().map(|(r, _)| r.as_slice()).collect();
        self.n_list
            .iter()
            .enumerate()
            .map(|(ni, &n)| {
                let approx_values: Vec<&[f64]> =
                    terminal.iter().map(|(_, a)| a[ni].as_slice()).collect();
                let row = |approx, reference, distance, stderr| WeakRow {
                    n,
                    num_paths: self.num_paths,
                    functional,
                    approx,
                    reference,
                    distance,
                    stderr,
                };
                Ok(match functional {
                    Functional::Mean => {
                        let ma = vector_mean(&approx_values, d);
                        let mr = vector_mean(&reference_values, d);
                        let diffs: Vec<Vec<f64>> = approx_values
                            .iter()
                            .zip(&reference_values)
                            .map(|(a, r)| a.iter().zip(r.iter()).map(|(x, y)| x - y).collect())
                            .collect();
                        let se = (0..d)
                            .map(|j| {
                                let c: Vec<f64> = diffs.iter().map(|v| v[j]).collect();
                                mean_and_stderr(&c).1.powi(2)
                            })
                            .sum::<f64>()
                            .sqrt();
                        row(
                            Some(norm(&ma)),
                            Some(norm(&mr)),
                            distance(&ma, &mr),
                            Some(se),
                        )
                    }
                    Functional::SecondMoment => {
                        let sa: Vec<f64> = approx_values.iter().map(|v| norm(v).powi(2)).collect();
                        let sr: Vec<f64> =
                            reference_values.iter().map(|v| norm(v).powi(2)).collect();
                        let diff: Vec<f64> = sa.iter().zip(&sr).map(|(a, r)| a - r).collect();
                        let (ma, mr) = (mean_and_stderr(&sa).0, mean_and_stderr(&sr).0);
                        row(
                            Some(ma),
                            Some(mr),
                            (ma - mr).abs(),
                            Some(mean_and_stderr(&diff).1),
                        )
                    }
                    Functional::CdfDistance => {
                        let a: Vec<f64> = approx_values.iter().map(|v| v[0]).collect();
                        let r: Vec<f64> = reference_values.iter().map(|v| v[0]).collect();
                        row(None, None, ks_distance(&a, &r)?, None)
                    }
                })
            })
            .collect()
    }
}

fn vector_mean(values: &[&[f64]], d: usize) -> Vec<f64> {
    (0..d)
        .map(|j| values.iter().map(|v| v[j]).sum::<f64>() / values.len() as f64)
        .collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Pooled `‖ω_{1/n}(W, T)‖_2` of one-dimensional Brownian paths for each `n`.
pub fn modulus_sweep(
    grid: TimeGrid,
    n_list: &[f64],
    num_paths: usize,
    master_seed: u64,
) -> Result<ErrorTable> {
    if num_paths < 2 {
        return Err(Error::InvalidArgument(
            "a sweep needs at least 2 paths".into(),
        ));
    }
    let horizon = grid.horizon();
    let results: Vec<Result<Vec<f64>>> = (0..num_paths)
        .into_par_iter()
        .map(|i| {
            let w = sample_path(grid, 1, master_seed, i as u64);
            let path = StatePath::new(grid, 1, w.values())?;
            n_list
                .iter()
                .map(|&n| Ok(modulus_of_continuity(&path, 1.0 / n, horizon)?.powi(2)))
                .collect()
        })
        .collect();
    let samples: Vec<Vec<f64>> = results.into_iter().collect::<Result<_>>()?;
    let rows = n_list
        .iter()
        .enumerate()
        .map(|(ni, &n)| {
            let column: Vec<f64> = samples.iter().map(|s| s[ni]).collect();
            let (error, stderr) = pooled_norm(&column, 2.0)?;
            Ok(ErrorRow {
                n,
                num_paths,
                h_fine: grid.step(),
                p: 2.0,
                error,
                stderr,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ErrorTable::new(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::CoefficientSpec;

    fn line(grid: TimeGrid, f: impl Fn(f64) -> f64) -> StatePath {
        let v = (0..=grid.steps()).map(|k| f(grid.time(k))).collect();
        StatePath::new(grid, 1, v).unwrap()
    }

    fn table(ns: &[f64], f: impl Fn(f64) -> f64) -> ErrorTable {
        let rows = ns
            .iter()
            .map(|&n| ErrorRow {
                n,
                num_paths: 1,
                h_fine: 1.0,
                p: 2.0,
                error: f(n),
                stderr: 0.0,
            })
            .collect();
        ErrorTable::new(rows).unwrap()
    }

    fn dyadic(lo: i32, hi: i32) -> Vec<f64> {
        (lo..=hi).map(|k| 2f64.powi(k)).collect()
    }

    #[test]
    fn lp_sup_error_examples() {
        let g = TimeGrid::new(1.0, 4).unwrap();
        let a = line(g, |t| t.sin());
        assert_eq!(lp_sup_error(&a, &a, 2.0).unwrap(), 0.0);
        let b = line(g, |t| t.sin() + 0.25);
        assert!((lp_sup_error(&a, &b, 3.0).unwrap() - 0.25f64.powi(3)).abs() < 1e-15);
        // Mixed grids compare on the coarser one.
        let coarse = line(TimeGrid::new(1.0, 2).unwrap(), |t| t.sin() + 0.5);
        assert!((lp_sup_error(&a, &coarse, 1.0).unwrap() - 0.5).abs() < 1e-15);
        let other = line(TimeGrid::new(2.0, 4).unwrap(), |t| t);
        assert!(matches!(
            lp_sup_error(&a, &other, 1.0),
            Err(Error::GridMismatch(_))
        ));
        assert!(lp_sup_error(&a, &b, 0.5).is_err());
    }

    #[test]
    fn fit_recovers_exact_exponents() {
        let ns = dyadic(4, 12);
        for beta in [0.5, 0.25] {
            let t = table(&ns, |n| (n.ln() / n).powf(beta));
            let r = fit_rate(&t, Regressor::LnNOverN).unwrap();
            assert!((r.slope - beta).abs() < 1e-12, "{}", r.slope);
            assert!(r.residual < 1e-12 && r.intercept.abs() < 1e-12);
        }
        let t = table(&ns, |n| 3.0 * n.powf(-0.75));
        let r = fit_rate(&t, Regressor::InvN).unwrap();
        assert!((r.slope - 0.75).abs() < 1e-12 && (r.intercept - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn fit_of_pure_power_against_log_scale() {
        // Normal-equations slope on raw sums, independent of the centred form.
        let ns = dyadic(4, 12);
        let xs: Vec<f64> = ns.iter().map(|n| (n.ln() / n).ln()).collect();
        let ys: Vec<f64> = ns.iter().map(|n| (7.0 * n.powf(-0.5)).ln()).collect();
        let m = xs.len() as f64;
        let (sx, sy): (f64, f64) = (xs.iter().sum(), ys.iter().sum());
        let sxx: f64 = xs.iter().map(|x| x * x).sum();
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| x * y).sum();
        let oracle = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        let r = fit_rate(&table(&ns, |n| 7.0 * n.powf(-0.5)), Regressor::LnNOverN).unwrap();
        assert!((r.slope - oracle).abs() < 1e-12);
        assert!((r.slope - 0.618834).abs() < 5e-7, "{}", r.slope);
        assert!(r.residual > 0.0);
    }

    #[test]
    fn fit_rejects_degenerate_tables() {
        let ns = dyadic(4, 6);
        assert!(fit_rate(&table(&ns, |n| 1.0 / n), Regressor::InvN).is_err());
        let ns = dyadic(4, 8);
        assert!(fit_rate(
            &table(&ns, |n| if n == 64.0 { 0.0 } else { 1.0 / n }),
            Regressor::InvN
        )
        .is_err());
        assert!(fit_rate(
            &table(&[1.0, 2.0, 4.0, 8.0], |n| 1.0 / n),
            Regressor::LnNOverN
        )
        .is_err());
    }

    #[test]
    fn table_invariants_and_csv() {
        let row = |n, error| ErrorRow {
            n,
            num_paths: 10,
            h_fine: 0.5,
            p: 2.0,
            error,
            stderr: 0.01,
        };
        assert!(ErrorTable::new(vec![row(2.0, 1.0), row(2.0, 0.5)]).is_err());
        assert!(ErrorTable::new(vec![row(2.0, -1.0)]).is_err());
        let t = ErrorTable::new(vec![row(2.0, 1.0), row(4.0, 0.5), row(8.0, 0.47)]).unwrap();
        assert!(!t.strictly_decreasing_net_of(2.0));
        assert!(t.strictly_decreasing_net_of(0.0));
        let csv = t.to_csv();
        assert_eq!(csv.lines().next(), Some("n,num_paths,p,error,stderr"));
        let fields: Vec<&str> = csv.lines().nth(3).unwrap().split(',').collect();
        assert_eq!(fields[..3], ["8", "10", "2"]);
        assert_eq!(fields[3].parse::<f64>().unwrap(), 0.47);
        assert_eq!(fields[4].parse::<f64>().unwrap(), 0.01);
    }

    #[test]
    fn pooled_norm_and_stderr() {
        let (norm, se) = pooled_norm(&[1.0, 9.0], 2.0).unwrap();
        assert!((norm - 5f64.sqrt()).abs() < 1e-15);
        // se of the mean is 4; d/dm sqrt(m) = 1/(2 sqrt 5).
        assert!((se - 4.0 / (2.0 * 5f64.sqrt())).abs() < 1e-15);
        assert_eq!(pooled_norm(&[0.0, 0.0], 2.0).unwrap(), (0.0, 0.0));
        assert!(pooled_norm(&[1.0], 2.0).is_err());
    }

    fn brute_modulus(path: &StatePath, delta: f64, horizon: f64) -> f64 {
        let g = path.grid();
        let mut best: f64 = 0.0;
        for i in 0..=g.steps() {
            for j in i..=g.steps() {
                let (s, t) = (g.time(i), g.time(j));
                if t <= horizon + 1e-12 && t - s <= delta + 1e-12 {
                    best = best.max(distance(path.point(i), path.point(j)));
                }
            }
        }
        best
    }

    #[test]
    fn modulus_examples() {
        let g = TimeGrid::new(1.0, 6).unwrap();
        assert_eq!(
            modulus_of_continuity(&line(g, |_| 3.0), 0.1, 1.0).unwrap(),
            0.0
        );
        let g = TimeGrid::new(1.6, 4).unwrap();
        let w = modulus_of_continuity(&line(g, |t| t), 0.1, 1.0).unwrap();
        assert!((w - 0.1).abs() < 1e-12, "{w}");
        assert!(modulus_of_continuity(&line(g, |t| t), 0.0, 1.0).is_err());
        assert!(modulus_of_continuity(&line(g, |t| t), 2.0, 1.0).is_err());
        assert!(modulus_of_continuity(&line(g, |t| t), 0.01, 0.01).is_err());
    }

    #[test]
    fn modulus_matches_brute_force() {
        let g = TimeGrid::new(1.0, 8).unwrap();
        for seed in 0..20 {
            for dim in [1, 2] {
                let b = sample_path(g, dim, 11, seed);
                let path = StatePath::new(g, dim, b.values()).unwrap();
                for (delta, horizon) in [(1.0 / 16.0, 1.0), (0.03, 0.7), (0.5, 0.5), (0.001, 1.0)] {
                    let fast = modulus_of_continuity(&path, delta, horizon).unwrap();
                    assert_eq!(
                        fast,
                        brute_modulus(&path, delta, horizon),
                        "seed {seed}, d {dim}, δ {delta}"
                    );
                }
            }
        }
    }

    #[test]
    fn ks_distance_examples() {
        assert_eq!(ks_distance(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(ks_distance(&[0.0, 1.0], &[5.0, 6.0, 7.0]).unwrap(), 1.0);
        assert_eq!(
            ks_distance(&[1.0, 1.0, 2.0, 3.0], &[1.0, 2.0]).unwrap(),
            0.25
        );
        assert!((ks_distance(&[1.0, 2.0, 3.0, 4.0], &[2.5]).unwrap() - 0.5).abs() < 1e-15);
        assert!(ks_distance(&[], &[1.0]).is_err());
    }

    fn ou_sweep(num_paths: usize, log2: u32) -> Sweep {
        Sweep {
            domain: ConvexDomain::half_line(0.0).unwrap(),
            coeffs: CoefficientSpec::Ou1d {
                kappa: 1.0,
                sigma0: 1.0,
            }
            .build()
            .unwrap()
            .field,
            x0: vec![0.5],
            grid: TimeGrid::new(1.0, log2).unwrap(),
            scheme: Scheme::Splitting,
            substeps: 1,
            n_list: vec![16.0, 64.0, 256.0, 1024.0],
            num_paths,
            master_seed: 5,
        }
    }

    #[test]
    fn zero_coefficients_give_zero_weak_distance() {
        let mut s = ou_sweep(20, 8);
        s.coeffs = CoefficientField::constant(1, 0.0);
        for f in [
            Functional::Mean,
            Functional::SecondMoment,
            Functional::CdfDistance,
        ] {
            let rows = s
                .weak_compare(&Reference::ProjectedEuler { log2_steps: None }, f)
                .unwrap();
            assert!(rows.iter().all(|r| r.distance == 0.0), "{f:?}");
        }
    }

    #[test]
    fn strong_error_orders_levels_on_shared_paths() {
        let s = ou_sweep(40, 13);
        let tables = s
            .strong_error(&Reference::ProjectedEuler { log2_steps: None }, &[2.0])
            .unwrap();
        let rows = tables[0].rows();
        assert!(rows[3].error < rows[1].error, "{rows:?}");
        let via_map = s
            .strong_error(&Reference::HalflineMap { log2_steps: None }, &[2.0])
            .unwrap();
        for (a, b) in rows.iter().zip(via_map[0].rows()) {
            assert!((a.error - b.error).abs() < 1e-10);
        }
    }

    #[test]
    fn sweep_rejects_bad_setups() {
        let mut s = ou_sweep(4, 6);
        assert!(s
            .strong_error(
                &Reference::ProjectedEuler {
                    log2_steps: Some(7)
                },
                &[2.0]
            )
            .is_err());
        s.n_list = vec![64.0, 16.0];
        assert!(s.boundary_distance(&[2.0]).is_err());
        let mut s = ou_sweep(4, 6);
        s.domain = ConvexDomain::boxed(vec![0.0], vec![1.0]).unwrap();
        assert!(s
            .strong_error(&Reference::HalflineMap { log2_steps: None }, &[2.0])
            .is_err());
    }

    #[test]
    fn euler_levels_restricted_by_stability() {
        let mut s = ou_sweep(4, 6);
        s.scheme = Scheme::Euler;
        assert_eq!(s.restrict_to_stable_levels(), vec![256.0, 1024.0]);
        assert_eq!(s.n_list, vec![16.0, 64.0]);
        s.boundary_distance(&[1.0, 2.0]).unwrap();
    }

    #[test]
    fn integration_errors_carry_level_and_path() {
        let mut s = ou_sweep(6, 6);
        s.scheme = Scheme::Euler;
        match s.boundary_distance(&[2.0]) {
            Err(Error::Integration {
                level,
                path,
                source,
            }) => {
                assert_eq!((level, path), (Some(256.0), 0));
                assert!(matches!(*source, Error::StabilityGuard { .. }));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn modulus_sweep_shrinks() {
        let g = TimeGrid::new(1.0, 12).unwrap();
        let t = modulus_sweep(g, &[4.0, 16.0, 64.0, 256.0], 50, 1).unwrap();
        assert!(t.rows().windows(2).all(|w| w[1].error < w[0].error));
    }
}
