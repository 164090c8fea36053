//! Brownian increments on dyadic grids with counter-based seeding.
//!
//! Path `i` of master seed `s` reads ChaCha8 stream `i` keyed by `s`; the
//! normal for step `k`, coordinate `j` of a `d`-dimensional path is produced
//! from 64-bit word number `k·d + j` of that stream. Regenerating a path does
//! not depend on which other paths were generated, or in which order.

use crate::error::{invalid, Error, Result};
use crate::numerics::normal;
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

/// Largest supported grid level (`2^30` steps).
pub const MAX_LEVEL: u32 = 30;

/// Uniform and normal variates from one ChaCha8 stream.
#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

impl NormalStream {
    pub fn new(master_seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
        rng.set_stream(stream);
        Self { rng }
    }

    /// Positions the stream at draw number `counter` (one draw = one `u64`).
    pub fn at(master_seed: u64, stream: u64, counter: u64) -> Self {
        let mut s = Self::new(master_seed, stream);
        s.rng.set_word_pos(2 * counter as u128);
        s
    }

    /// Uniform on the open interval `(0, 1)`.
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Standard normal by inversion, one uniform per variate.
    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        normal::quantile(self.next_uniform())
    }
}

/// Increments of a `d`-dimensional Brownian motion on `t_k = kT/2^L`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrownianPath {
    dim: usize,
    level: u32,
    horizon: f64,
    /// Row-major `[2^L][d]`: entry `(k, j)` is `W^j(t_{k+1}) − W^j(t_k)`.
    increments: Vec<f64>,
}

impl BrownianPath {
    /// Builds a path from explicit increments (row-major, `2^level × dim`).
    pub fn from_increments(dim: usize, level: u32, horizon: f64, increments: Vec<f64>) -> Result<Self> {
        if dim == 0 || !(horizon > 0.0) {
            return Err(invalid("Brownian path needs positive dimension and horizon"));
        }
        if level > MAX_LEVEL {
            return Err(Error::Resource(format!("grid level {level} exceeds {MAX_LEVEL}")));
        }
        if increments.len() != dim << level {
            return Err(invalid(format!(
                "expected {} increments, got {}",
                dim << level,
                increments.len()
            )));
        }
        Ok(Self {
            dim,
            level,
            horizon,
            increments,
        })
    }

    pub fn generate(dim: usize, level: u32, horizon: f64, master_seed: u64, path_index: u64) -> Result<Self> {
        if level > MAX_LEVEL {
            return Err(Error::Resource(format!("grid level {level} exceeds {MAX_LEVEL}")));
        }
        if dim == 0 || !(horizon > 0.0) {
            return Err(invalid("Brownian path needs positive dimension and horizon"));
        }
        let len = dim << level;
        let scale = (horizon / (1u64 << level) as f64).sqrt();
        let mut stream = NormalStream::new(master_seed, path_index);
        let increments = (0..len).map(|_| scale * stream.next_normal()).collect();
        Ok(Self {
            dim,
            level,
            horizon,
            increments,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn level(&self) -> u32 {
        self.level
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn n_steps(&self) -> usize {
        1 << self.level
    }
    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps() as f64
    }
    pub fn increments(&self) -> &[f64] {
        &self.increments
    }

    /// Increment over `[t_k, t_{k+1}]`.
    #[inline]
    pub fn increment(&self, k: usize) -> &[f64] {
        &self.increments[k * self.dim..(k + 1) * self.dim]
    }

    /// `W(t_k)` for `k = 0..=2^L`, row-major.
    pub fn values(&self) -> Vec<f64> {
        let d = self.dim;
        let mut out = vec![0.0; (self.n_steps() + 1) * d];
        for k in 0..self.n_steps() {
            for j in 0..d {
                out[(k + 1) * d + j] = out[k * d + j] + self.increments[k * d + j];
            }
        }
        out
    }

    /// Aggregates consecutive blocks of `2^(L − target)` increments.
    pub fn coarsen(&self, target_level: u32) -> Result<BrownianPath> {
        if target_level > self.level {
            return Err(invalid(format!(
                "cannot coarsen level {} path to finer level {target_level}",
                self.level
            )));
        }
        if target_level == self.level {
            return Ok(self.clone());
        }
        let d = self.dim;
        let ratio = 1usize << (self.level - target_level);
        let coarse_steps = 1usize << target_level;
        let mut increments = vec![0.0; coarse_steps * d];
        for k in 0..coarse_steps {
            let out = &mut increments[k * d..(k + 1) * d];
            for i in k * ratio..(k + 1) * ratio {
                for (o, w) in out.iter_mut().zip(self.increment(i)) {
                    *o += w;
                }
            }
        }
        Ok(BrownianPath {
            dim: d,
            level: target_level,
            horizon: self.horizon,
            increments,
        })
    }
}

/// `log2(n)` for a power of two, or an argument error.
pub fn level_of(n: usize) -> Result<u32> {
    if n == 0 || !n.is_power_of_two() {
        return Err(invalid(format!("n must be a power of 2, got {n}")));
    }
    Ok(n.trailing_zeros())
}
