//! Reproducible Brownian increments on dyadic grids.
//!
//! Normal draws come from a ChaCha8 keystream: the master seed keys the
//! cipher, the path index selects the stream, and draw `i` of a path (with
//! `i = step * dim + coordinate`) always lives at the same keystream
//! position. Paths can therefore be generated independently, in any order,
//! on any thread.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const TWO_PI: f64 = 2.0 * std::f64::consts::PI;
const INV_2_53: f64 = 1.0 / (1u64 << 53) as f64;

/// Uniform grid on `[0, T]` with `2^m` steps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    log2_steps: u32,
}

impl TimeGrid {
    pub fn new(horizon: f64, log2_steps: u32) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "horizon must be positive and finite, got {horizon}"
            )));
        }
        if log2_steps > 30 {
            return Err(Error::InvalidArgument(format!(
                "log2_steps = {log2_steps} is too large (max 30)"
            )));
        }
        Ok(Self {
            horizon,
            log2_steps,
        })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn log2_steps(&self) -> u32 {
        self.log2_steps
    }

    pub fn steps(&self) -> usize {
        1usize << self.log2_steps
    }

    pub fn step(&self) -> f64 {
        // Division by a power of two is exact.
        self.horizon / self.steps() as f64
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.step()
    }

    /// The grid with `factor` times fewer steps.
    pub fn coarsened(&self, factor: usize) -> Result<Self> {
        if factor == 0 || !factor.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "coarsening factor {factor} is not a power of two"
            )));
        }
        let shift = factor.trailing_zeros();
        if shift > self.log2_steps {
            return Err(Error::InvalidArgument(format!(
                "coarsening factor {factor} does not divide {} steps",
                self.steps()
            )));
        }
        Ok(Self {
            horizon: self.horizon,
            log2_steps: self.log2_steps - shift,
        })
    }
}

/// Standard normal draws from a counter-addressable ChaCha8 stream.
///
/// Draws are produced in Box-Muller pairs; each pair consumes two `u64`
/// words, so draw `i` depends only on `(seed, stream, i)`.
pub struct NormalStream {
    rng: ChaCha8Rng,
    spare: Option<f64>,
}

impl NormalStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { rng, spare: None }
    }

    /// Stream positioned so the next value returned is draw `index`.
    pub fn at(seed: u64, stream: u64, index: u64) -> Self {
        let mut s = Self::new(seed, stream);
        // Two u64 per pair, two u32 words per u64.
        s.rng.set_word_pos(u128::from(index / 2) * 4);
        if index % 2 == 1 {
            s.next_normal();
        }
        s
    }

    pub fn next_uniform(&mut self) -> f64 {
        (self.rng.next_u64() >> 11) as f64 * INV_2_53
    }

    pub fn next_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        // u1 in (0, 1] keeps the logarithm finite.
        let u1 = ((self.rng.next_u64() >> 11) + 1) as f64 * INV_2_53;
        let u2 = (self.rng.next_u64() >> 11) as f64 * INV_2_53;
        let r = (-2.0 * u1.ln()).sqrt();
        let (s, c) = (TWO_PI * u2).sin_cos();
        self.spare = Some(r * s);
        r * c
    }
}

/// Brownian increments `ΔW_k ~ N(0, h I_d)` for one path.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    grid: TimeGrid,
    dim: usize,
    increments: Vec<f64>,
    master_seed: u64,
    path_index: u64,
}

impl BrownianPath {
    /// Builds a path from explicit increments (row-major, `steps × dim`).
    pub fn from_increments(grid: TimeGrid, dim: usize, increments: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "dimension must be at least 1".into(),
            ));
        }
        if increments.len() != grid.steps() * dim {
            return Err(Error::GridMismatch(format!(
                "expected {} increments, got {}",
                grid.steps() * dim,
                increments.len()
            )));
        }
        Ok(Self {
            grid,
            dim,
            increments,
            master_seed: 0,
            path_index: 0,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn path_index(&self) -> u64 {
        self.path_index
    }

    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    /// Cumulative values `W_0 = 0, W_1, ..., W_M`, summed left to right.
    pub fn values(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; (self.grid.steps() + 1) * d];
        for k in 0..self.grid.steps() {
            for j in 0..d {
                out[(k + 1) * d + j] = out[k * d + j] + self.increments[k * d + j];
            }
        }
        out
    }

    /// Sums increments over blocks of `factor` steps.
    ///
    /// Blocks are reduced by repeated pairwise halving, so coarsening by 4
    /// is bitwise identical to coarsening by 2 twice.
    pub fn coarsen(&self, factor: usize) -> Result<Self> {
        let grid = self.grid.coarsened(factor)?;
        let d = self.dim;
        let mut inc = self.increments.clone();
        let mut steps = self.grid.steps();
        for _ in 0..factor.trailing_zeros() {
            steps /= 2;
            for k in 0..steps {
                for j in 0..d {
                    inc[k * d + j] = inc[2 * k * d + j] + inc[(2 * k + 1) * d + j];
                }
            }
        }
        inc.truncate(steps * d);
        Ok(Self {
            grid,
            dim: d,
            increments: inc,
            master_seed: self.master_seed,
            path_index: self.path_index,
        })
    }
}

/// Samples path `path_index` of the family keyed by `master_seed`.
pub fn sample_path(grid: TimeGrid, dim: usize, master_seed: u64, path_index: u64) -> BrownianPath {
    assert!(dim >= 1, "Brownian dimension must be positive");
    let scale = grid.step().sqrt();
    let mut stream = NormalStream::new(master_seed, path_index);
    let increments = (0..grid.steps() * dim)
        .map(|_| scale * stream.next_normal())
        .collect();
    BrownianPath {
        grid,
        dim,
        increments,
        master_seed,
        path_index,
    }
}
