//! Empirical checks of intermediate estimates: Gaussian envelopes for the
//! scheme's marginal density, the drift discontinuity integral, and Komatsu's
//! lower bound on the Gaussian tail.

use crate::brownian::{level_of, BrownianPath};
use crate::em_scheme::{grid_time, simulate, SchemeKind, Workspace};
use crate::error::{invalid, Result};
use crate::numerics::normal;
use crate::numerics::stats::{Estimate, Moments};
use crate::parallel;
use crate::sde_model::SdeProblem;
use serde::{Deserialize, Serialize};

/// Minimum path count for a density check.
pub const MIN_DENSITY_PATHS: u64 = 10_000;
/// Lower-envelope checks use only bins whose expected count under the lower
/// envelope is at least this.
pub const LOWER_MIN_EXPECTED: f64 = 50.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityOptions {
    /// Bins per axis.
    pub bins: usize,
    /// Half-width of the histogram window in units of `√(λ0 t)`.
    pub width_sd: f64,
    /// Standard errors used to widen each bin estimate.
    pub z: f64,
}

impl Default for DensityOptions {
    fn default() -> Self {
        Self {
            bins: 40,
            width_sd: 4.0,
            z: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityBin {
    /// Lower corner.
    pub lo: Vec<f64>,
    /// Upper corner.
    pub hi: Vec<f64>,
    pub count: u64,
    /// `count / (paths · volume)`.
    pub density: f64,
    pub std_error: f64,
    /// Bin average of `C·p_c`.
    pub upper_envelope: f64,
    /// Bin average of `C⁻¹·p_{1/c}`.
    pub lower_envelope: f64,
    pub upper_violation: bool,
    /// `None` when the bin is excluded from the lower check.
    pub lower_violation: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityCheckReport {
    pub problem: String,
    pub n: usize,
    pub t_index: usize,
    pub t: f64,
    pub paths: u64,
    pub seed: u64,
    pub big_c: f64,
    pub small_c: f64,
    /// Bin edges along one axis (shared by all axes).
    pub edges: Vec<f64>,
    pub bins: Vec<DensityBin>,
    /// Samples outside the histogram window.
    pub outside: u64,
    pub upper_violations: u64,
    pub lower_violations: u64,
    pub lower_bins_checked: u64,
}

impl DensityCheckReport {
    pub fn violations(&self) -> u64 {
        self.upper_violations + self.lower_violations
    }
}

/// Histogram of `X_{t_j}` over the paths, as raw counts.
struct Histogram {
    edges: Vec<f64>,
    counts: Vec<u64>,
    outside: u64,
}

fn sample_histogram(
    p: &SdeProblem,
    n: usize,
    t_index: usize,
    paths: u64,
    seed: u64,
    edges: &[f64],
) -> Result<Histogram> {
    let level = level_of(n)?;
    let d = p.dim();
    let bins = edges.len() - 1;
    let (lo, hi) = (edges[0], edges[bins]);
    let width = (hi - lo) / bins as f64;
    let cells = bins.pow(d as u32);
    let (counts, outside) = parallel::fold_paths(
        paths,
        || (vec![0u64; cells], 0u64),
        |(counts, outside), i| {
            let w = BrownianPath::generate(d, level, p.horizon(), seed, i).expect("validated level");
            let path = simulate(p, SchemeKind::Standard, n, &w).expect("validated inputs");
            let x = path.state(t_index);
            let mut cell = 0usize;
            for &v in x {
                if !(v >= lo && v < hi) {
                    *outside += 1;
                    return;
                }
                let k = (((v - lo) / width) as usize).min(bins - 1);
                cell = cell * bins + k;
            }
            counts[cell] += 1;
        },
        |(mut a, oa), (b, ob)| {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
            (a, oa + ob)
        },
    );
    Ok(Histogram {
        edges: edges.to_vec(),
        counts,
        outside,
    })
}

fn validate_density_args(p: &SdeProblem, n: usize, t_index: usize, paths: u64) -> Result<()> {
    level_of(n)?;
    if t_index == 0 {
        return Err(invalid("t_index = 0 is a point mass; the density is undefined"));
    }
    if t_index > n {
        return Err(invalid(format!("t_index {t_index} exceeds n = {n}")));
    }
    if paths < MIN_DENSITY_PATHS {
        return Err(invalid(format!(
            "density checks need at least {MIN_DENSITY_PATHS} paths"
        )));
    }
    if p.dim() > 2 {
        return Err(crate::Error::UnsupportedDimension(p.dim()));
    }
    Ok(())
}

fn window_edges(p: &SdeProblem, t: f64, opts: &DensityOptions) -> Vec<f64> {
    let half = opts.width_sd * (p.meta().ellipticity_lambda0 * t).sqrt();
    let center = p.x0()[0];
    // One window per problem; x0 is equal across coordinates for all presets,
    // otherwise each axis is centred on coordinate 0 too.
    (0..=opts.bins)
        .map(|i| center - half + 2.0 * half * i as f64 / opts.bins as f64)
        .collect()
}

/// Masses of `N(x0, var·I)` on every cell, and cell volumes.
fn cell_masses(x0: &[f64], var: f64, edges: &[f64]) -> Vec<f64> {
    let bins = edges.len() - 1;
    let axis: Vec<Vec<f64>> = x0
        .iter()
        .map(|&m| {
            (0..bins)
                .map(|k| normal::interval_mass(m, var, edges[k], edges[k + 1]))
                .collect()
        })
        .collect();
    match axis.len() {
        1 => axis[0].clone(),
        _ => axis[0]
            .iter()
            .flat_map(|a| axis[1].iter().map(move |b| a * b))
            .collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Side {
    Above,
    Below,
}

/// Whether the bin mass `m` lies outside the `z`-score (Wilson) interval of
/// the observed fraction `frac`, i.e. `|frac − m| > z·√(m(1 − m)/paths)`.
/// Returns on which side of `m` the estimate falls.
fn outside_wilson(frac: f64, m: f64, paths: f64, z: f64) -> Option<Side> {
    let m = m.clamp(0.0, 1.0);
    let band = z * (m * (1.0 - m) / paths).sqrt();
    if frac > m + band {
        Some(Side::Above)
    } else if frac < m - band {
        Some(Side::Below)
    } else {
        None
    }
}

fn evaluate_envelopes(
    p: &SdeProblem,
    h: &Histogram,
    meta: (usize, usize, f64, u64, u64),
    big_c: f64,
    small_c: f64,
    z: f64,
) -> DensityCheckReport {
    let (n, t_index, t, paths, seed) = meta;
    let d = p.dim();
    let bins = h.edges.len() - 1;
    let upper_mass = cell_masses(p.x0(), t / small_c, &h.edges);
    let lower_mass = cell_masses(p.x0(), t * small_c, &h.edges);
    let width = h.edges[1] - h.edges[0];
    let volume = width.powi(d as i32);
    let total = paths as f64;
    let mut report_bins = Vec::with_capacity(h.counts.len());
    let (mut upper_violations, mut lower_violations, mut lower_checked) = (0, 0, 0);
    for (cell, &count) in h.counts.iter().enumerate() {
        let idx: Vec<usize> = if d == 1 {
            vec![cell]
        } else {
            vec![cell / bins, cell % bins]
        };
        let lo: Vec<f64> = idx.iter().map(|&k| h.edges[k]).collect();
        let hi: Vec<f64> = idx.iter().map(|&k| h.edges[k + 1]).collect();
        let frac = count as f64 / total;
        let se = (frac * (1.0 - frac) / total).sqrt();
        let upper = big_c * upper_mass[cell];
        let lower = lower_mass[cell] / big_c;
        let upper_violation = outside_wilson(frac, upper, total, z) == Some(Side::Above);
        let lower_violation = if total * lower >= LOWER_MIN_EXPECTED {
            lower_checked += 1;
            Some(outside_wilson(frac, lower, total, z) == Some(Side::Below))
        } else {
            None
        };
        upper_violations += upper_violation as u64;
        lower_violations += (lower_violation == Some(true)) as u64;
        report_bins.push(DensityBin {
            lo,
            hi,
            count,
            density: frac / volume,
            std_error: se / volume,
            upper_envelope: upper / volume,
            lower_envelope: lower / volume,
            upper_violation,
            lower_violation,
        });
    }
    DensityCheckReport {
        problem: p.name().to_string(),
        n,
        t_index,
        t,
        paths,
        seed,
        big_c,
        small_c,
        edges: h.edges.clone(),
        bins: report_bins,
        outside: h.outside,
        upper_violations,
        lower_violations,
        lower_bins_checked: lower_checked,
    }
}

/// Compares the histogram of `X_{t_j}` (`t_j = jT/n`) with the envelopes
/// `C·p_c` and `C⁻¹·p_{1/c}`, where `p_c(t, x0, ·)` is the `N(x0, t/c)`
/// density. A bin violates an envelope only if the envelope's bin mass lies
/// outside the `z`-standard-error Wilson interval of the observed fraction.
#[allow(clippy::too_many_arguments)]
pub fn density_check(
    p: &SdeProblem,
    n: usize,
    t_index: usize,
    paths: u64,
    seed: u64,
    big_c: f64,
    small_c: f64,
    opts: &DensityOptions,
) -> Result<DensityCheckReport> {
    validate_density_args(p, n, t_index, paths)?;
    if !(big_c > 0.0 && small_c > 0.0) {
        return Err(invalid("envelope constants C and c must be positive"));
    }
    if opts.bins == 0 || !(opts.width_sd > 0.0) || !(opts.z >= 0.0) {
        return Err(invalid("bad histogram options"));
    }
    let t = grid_time(t_index, n, p.horizon());
    let edges = window_edges(p, t, opts);
    let h = sample_histogram(p, n, t_index, paths, seed, &edges)?;
    Ok(evaluate_envelopes(
        p,
        &h,
        (n, t_index, t, paths, seed),
        big_c,
        small_c,
        opts.z,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub big_c: f64,
    pub small_c: f64,
    /// Minimal `C` per candidate `c` (before rounding).
    pub candidates: Vec<(f64, f64)>,
    pub paths: u64,
    pub seed: u64,
}

/// `c` candidates `0.05, 0.10, …, 1.0`.
pub fn default_c_grid() -> Vec<f64> {
    (1..=20).map(|k| k as f64 / 20.0).collect()
}

/// Grid search for envelope constants: for each `c` the smallest `C` under
/// which no bin's point estimate leaves either envelope (lower envelope on
/// bins with at least [`LOWER_MIN_EXPECTED`] samples), then the `c` with the
/// smallest `C`. `C` is rounded up to a multiple of 0.05.
pub fn calibrate_envelope(
    p: &SdeProblem,
    n: usize,
    t_index: usize,
    paths: u64,
    seed: u64,
    c_grid: &[f64],
    opts: &DensityOptions,
) -> Result<Calibration> {
    validate_density_args(p, n, t_index, paths)?;
    if c_grid.is_empty() || c_grid.iter().any(|&c| !(c > 0.0 && c <= 1.0)) {
        return Err(invalid("c grid must be nonempty with values in (0, 1]"));
    }
    let t = grid_time(t_index, n, p.horizon());
    let edges = window_edges(p, t, opts);
    let h = sample_histogram(p, n, t_index, paths, seed, &edges)?;
    let total = paths as f64;
    let candidates: Vec<(f64, f64)> = c_grid
        .iter()
        .map(|&c| {
            let upper_mass = cell_masses(p.x0(), t / c, &edges);
            let lower_mass = cell_masses(p.x0(), t * c, &edges);
            let mut need: f64 = 1.0;
            for ((&count, &um), &lm) in h.counts.iter().zip(&upper_mass).zip(&lower_mass) {
                let frac = count as f64 / total;
                if count > 0 {
                    need = need.max(frac / um);
                }
                if count as f64 >= LOWER_MIN_EXPECTED {
                    need = need.max(lm / frac);
                }
            }
            (c, need)
        })
        .collect();
    let (small_c, best) = candidates
        .iter()
        .copied()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .expect("nonempty grid");
    Ok(Calibration {
        big_c: (best / 0.05 - 1e-9).ceil() * 0.05,
        small_c,
        candidates,
        paths,
        seed,
    })
}

/// `Σ_i ∫_0^T E|b_i(s, X_s) − b_i(s, X_{η_n(s)})|^q ds` for each `n`, along
/// the continuous-time standard scheme. Each step contributes the midpoints
/// of its four quarters; all `n` share one Brownian path per index.
pub fn discontinuity_integrals(
    p: &SdeProblem,
    n_list: &[usize],
    q: f64,
    paths: u64,
    seed: u64,
) -> Result<Vec<Estimate>> {
    if !(q >= 1.0) {
        return Err(invalid("q must be >= 1"));
    }
    if n_list.is_empty() || paths == 0 {
        return Err(invalid("need at least one n and one path"));
    }
    let levels: Vec<u32> = n_list.iter().map(|&n| level_of(n)).collect::<Result<_>>()?;
    let top = levels.iter().copied().max().expect("nonempty") + 3;
    let d = p.dim();
    let horizon = p.horizon();
    let moments = parallel::fold_paths(
        paths,
        || vec![Moments::default(); n_list.len()],
        |acc, i| {
            let w_top = BrownianPath::generate(d, top, horizon, seed, i).expect("validated level");
            let mut ws = Workspace::new(d);
            let (mut y, mut dw) = (vec![0.0; d], vec![0.0; d]);
            let (mut b_y, mut b_x) = (vec![0.0; d], vec![0.0; d]);
            for (slot, (&n, &level)) in acc.iter_mut().zip(n_list.iter().zip(&levels)) {
                let w = w_top.coarsen(level + 3).expect("coarser level");
                let path =
                    simulate(p, SchemeKind::Standard, n, &w.coarsen(level).expect("coarser")).expect("validated");
                let weight = horizon / (4 * n) as f64;
                let mut total = 0.0;
                for k in 0..n {
                    let (xk, tk) = (path.state(k), path.time(k));
                    dw.fill(0.0);
                    let mut done = 0;
                    for m in [1usize, 3, 5, 7] {
                        for j in done..m {
                            for (a, inc) in dw.iter_mut().zip(w.increment(8 * k + j)) {
                                *a += inc;
                            }
                        }
                        done = m;
                        let s = grid_time(8 * k + m, 8 * n, horizon);
                        ws.frozen_step(p, SchemeKind::Standard, tk, s, s - tk, xk, &dw, &mut y);
                        p.drift_into(s, &y, &mut b_y);
                        p.drift_into(s, xk, &mut b_x);
                        let term: f64 = b_y.iter().zip(&b_x).map(|(a, b)| (a - b).abs().powf(q)).sum();
                        total += weight * term;
                    }
                }
                slot.push(total);
            }
        },
        |a, b| a.into_iter().zip(b).map(|(x, y)| x.merge(y)).collect(),
    );
    Ok(moments.iter().map(Moments::estimate).collect())
}

pub fn discontinuity_integral(p: &SdeProblem, n: usize, q: f64, paths: u64, seed: u64) -> Result<Estimate> {
    Ok(discontinuity_integrals(p, &[n], q, paths, seed)?.remove(0))
}

/// Right-hand side of Komatsu's inequality `Φ(−|x|) ≥ 2e^{−x²/2}/(√(2π)(|x| + √(x² + 4)))`.
pub fn komatsu_bound(x: f64) -> f64 {
    let a = x.abs();
    2.0 * (-0.5 * x * x).exp() / ((2.0 * std::f64::consts::PI).sqrt() * (a + (a * a + 4.0).sqrt()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KomatsuSample {
    pub x: f64,
    pub tail: f64,
    pub bound: f64,
    pub slack: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KomatsuReport {
    pub evaluated: u64,
    /// Points with `bound > tail·(1 + 1e-12)`.
    pub violations: u64,
    pub min_slack: f64,
    /// Smallest `tail / bound`.
    pub min_ratio: f64,
    pub samples: Vec<KomatsuSample>,
}

pub fn komatsu_check(x_grid: &[f64]) -> Result<KomatsuReport> {
    if x_grid.is_empty() {
        return Err(invalid("x grid must be nonempty"));
    }
    let samples: Vec<KomatsuSample> = x_grid
        .iter()
        .map(|&x| {
            let tail = normal::cdf(-x.abs());
            let bound = komatsu_bound(x);
            KomatsuSample {
                x,
                tail,
                bound,
                slack: tail - bound,
            }
        })
        .collect();
    // Relative comparison: both sides underflow towards 0 in the far tail.
    let violations = samples.iter().filter(|s| !(s.bound <= s.tail * (1.0 + 1e-12))).count() as u64;
    Ok(KomatsuReport {
        evaluated: samples.len() as u64,
        violations,
        min_slack: samples.iter().map(|s| s.slack).fold(f64::INFINITY, f64::min),
        min_ratio: samples
            .iter()
            .filter(|s| s.bound > 0.0)
            .map(|s| s.tail / s.bound)
            .fold(f64::INFINITY, f64::min),
        samples,
    })
}

/// `0` followed by `count − 1` log-spaced points in `[1e-4, hi]`.
pub fn komatsu_grid(count: usize, hi: f64) -> Vec<f64> {
    let m = count.max(2) - 1;
    let step = (hi / 1e-4).ln() / (m.max(2) - 1) as f64;
    std::iter::once(0.0)
        .chain((0..m).map(|i| 1e-4 * (step * i as f64).exp()))
        .collect()
}
