//! Euler–Maruyama scheme variants and trajectory statistics.
//!
//! All three variants freeze the state at the left grid point `η_n(s)` and
//! differ only in the time argument of the coefficients:
//!
//! | scheme      | drift time      | diffusion time  |
//! |-------------|-----------------|-----------------|
//! | `standard`  | `η_n(s)`        | `η_n(s)`        |
//! | `polygonal` | step midpoint   | step midpoint   |
//! | `mixed`     | step midpoint   | `η_n(s)`        |
//!
//! The midpoint rule stands in for the time integral of the coefficients over
//! one step; for time-homogeneous coefficients the three schemes coincide
//! bit for bit.

use crate::brownian::{level_of, BrownianPath};
use crate::error::{invalid, Result};
use crate::numerics::stats::Moments;
use crate::parallel;
use crate::sde_model::SdeProblem;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Standard,
    Polygonal,
    Mixed,
}

impl SchemeKind {
    pub const ALL: [SchemeKind; 3] = [SchemeKind::Standard, SchemeKind::Polygonal, SchemeKind::Mixed];

    /// Times at which drift and diffusion are evaluated for a frozen step over `[t0, t1]`.
    #[inline]
    pub fn coefficient_times(self, t0: f64, t1: f64) -> (f64, f64) {
        let mid = 0.5 * (t0 + t1);
        match self {
            SchemeKind::Standard => (t0, t0),
            SchemeKind::Polygonal => (mid, mid),
            SchemeKind::Mixed => (mid, t0),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeKind::Standard => "standard",
            SchemeKind::Polygonal => "polygonal",
            SchemeKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeKind {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(SchemeKind::Standard),
            "polygonal" => Ok(SchemeKind::Polygonal),
            "mixed" => Ok(SchemeKind::Mixed),
            other => Err(invalid(format!(
                "unknown scheme `{other}` (standard, polygonal, mixed)"
            ))),
        }
    }
}

/// A stopping time `τ ≤ T` evaluated on the fine grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingTimeSpec {
    /// Fixed time, snapped down to the fine grid.
    Deterministic(f64),
    /// First fine-grid time with `|X_t − x0| ≥ radius` on the reference path, else `T`.
    FirstExit(f64),
    Horizon,
}

impl StoppingTimeSpec {
    pub fn validate(&self, horizon: f64) -> Result<()> {
        match *self {
            StoppingTimeSpec::Deterministic(t) if !(0.0..=horizon).contains(&t) => Err(invalid(format!(
                "deterministic stopping time {t} outside [0, {horizon}]"
            ))),
            StoppingTimeSpec::FirstExit(r) if !(r > 0.0) => Err(invalid("exit radius must be positive")),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for StoppingTimeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StoppingTimeSpec::Deterministic(t) => write!(f, "deterministic:{t}"),
            StoppingTimeSpec::FirstExit(r) => write!(f, "first_exit:{r}"),
            StoppingTimeSpec::Horizon => f.write_str("horizon"),
        }
    }
}

impl FromStr for StoppingTimeSpec {
    type Err = crate::Error;
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "horizon" {
            return Ok(StoppingTimeSpec::Horizon);
        }
        let (tag, value) = s.split_once(':').ok_or_else(|| {
            invalid(format!(
                "bad stopping time `{s}` (horizon, deterministic:T, first_exit:R)"
            ))
        })?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| invalid(format!("bad number in stopping time `{s}`")))?;
        match tag.trim() {
            "deterministic" => Ok(StoppingTimeSpec::Deterministic(value)),
            "first_exit" => Ok(StoppingTimeSpec::FirstExit(value)),
            other => Err(invalid(format!("unknown stopping time kind `{other}`"))),
        }
    }
}

/// `η_n(s) = kT/n` for `s ∈ [kT/n, (k+1)T/n)`, with `η_n(T) = T`.
pub fn eta(n: usize, horizon: f64, s: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("eta needs n >= 1"));
    }
    if !(0.0..=horizon).contains(&s) {
        return Err(invalid(format!("time {s} outside [0, {horizon}]")));
    }
    if s == horizon {
        return Ok(horizon);
    }
    let k = (s * n as f64 / horizon).floor();
    Ok(k * horizon / n as f64)
}

#[inline]
pub(crate) fn grid_time(k: usize, n: usize, horizon: f64) -> f64 {
    k as f64 * horizon / n as f64
}

/// One scheme trajectory on the uniform grid `t_k = kT/n`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    scheme: SchemeKind,
    n_steps: usize,
    horizon: f64,
    dim: usize,
    /// Row-major `[n + 1][d]`.
    states: Vec<f64>,
}

impl GridPath {
    pub fn scheme(&self) -> SchemeKind {
        self.scheme
    }
    pub fn n_steps(&self) -> usize {
        self.n_steps
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn time(&self, k: usize) -> f64 {
        grid_time(k, self.n_steps, self.horizon)
    }
    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|k| self.time(k)).collect()
    }
    #[inline]
    pub fn state(&self, k: usize) -> &[f64] {
        &self.states[k * self.dim..(k + 1) * self.dim]
    }
    pub fn states(&self) -> &[f64] {
        &self.states
    }
}

/// Scratch buffers for evaluating coefficients without allocation.
pub(crate) struct Workspace {
    drift: Vec<f64>,
    diffusion: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(dim: usize) -> Self {
        Self {
            drift: vec![0.0; dim],
            diffusion: vec![0.0; dim * dim],
        }
    }

    /// `out = x + dt·b(tb, x) + σ(ts, x)·dw` with `(tb, ts)` from the scheme
    /// and the frozen-step window `[t0, t1]`.
    #[inline]
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn frozen_step(
        &mut self,
        p: &SdeProblem,
        scheme: SchemeKind,
        t0: f64,
        t1: f64,
        dt: f64,
        x: &[f64],
        dw: &[f64],
        out: &mut [f64],
    ) {
        let d = x.len();
        let (tb, ts) = scheme.coefficient_times(t0, t1);
        p.drift_into(tb, x, &mut self.drift);
        p.diffusion_into(ts, x, &mut self.diffusion);
        for i in 0..d {
            let row = &self.diffusion[i * d..(i + 1) * d];
            let noise: f64 = row.iter().zip(dw).map(|(s, w)| s * w).sum();
            out[i] = x[i] + dt * self.drift[i] + noise;
        }
    }
}

/// Runs `scheme` with `n_steps` steps driven by the increments of `w`.
pub fn simulate(p: &SdeProblem, scheme: SchemeKind, n_steps: usize, w: &BrownianPath) -> Result<GridPath> {
    level_of(n_steps)?;
    if w.n_steps() != n_steps {
        return Err(invalid(format!(
            "Brownian path has {} steps, scheme needs {n_steps}",
            w.n_steps()
        )));
    }
    if w.dim() != p.dim() {
        return Err(invalid(format!(
            "Brownian dimension {} != problem dimension {}",
            w.dim(),
            p.dim()
        )));
    }
    if (w.horizon() - p.horizon()).abs() > 1e-12 * p.horizon() {
        return Err(invalid("Brownian path horizon differs from problem horizon"));
    }
    let d = p.dim();
    let horizon = p.horizon();
    let dt = horizon / n_steps as f64;
    let mut states = vec![0.0; (n_steps + 1) * d];
    states[..d].copy_from_slice(p.x0());
    let mut ws = Workspace::new(d);
    for k in 0..n_steps {
        let (head, tail) = states.split_at_mut((k + 1) * d);
        let x = &head[k * d..];
        ws.frozen_step(
            p,
            scheme,
            grid_time(k, n_steps, horizon),
            grid_time(k + 1, n_steps, horizon),
            dt,
            x,
            w.increment(k),
            &mut tail[..d],
        );
    }
    Ok(GridPath {
        scheme,
        n_steps,
        horizon,
        dim: d,
        states,
    })
}

/// Deviation `Y = X_ref − X^{(n)}` between a fine reference trajectory and a
/// coarse one driven by the same Brownian path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationSample {
    /// `|Y_τ|` for each requested stopping time.
    pub at_taus: Vec<f64>,
    /// `sup_k |Y_{t_k}|` over fine grid times.
    pub sup: f64,
    /// `sup_k |Y_{t_k}|^p`.
    pub sup_p: f64,
    /// `|Y_T|^p`.
    pub terminal_p: f64,
}

fn fine_index_for(spec: &StoppingTimeSpec, fine: &GridPath, x0: &[f64]) -> usize {
    let n = fine.n_steps();
    match *spec {
        StoppingTimeSpec::Horizon => n,
        StoppingTimeSpec::Deterministic(t) => ((t * n as f64 / fine.horizon()).floor() as usize).min(n),
        StoppingTimeSpec::FirstExit(radius) => (0..=n)
            .find(|&j| {
                let r2: f64 = fine.state(j).iter().zip(x0).map(|(a, b)| (a - b) * (a - b)).sum();
                r2.sqrt() >= radius
            })
            .unwrap_or(n),
    }
}

/// Compares `coarse` against `fine` at every fine grid time. Between its own
/// grid points the coarse scheme is evaluated in continuous time: frozen
/// coefficients plus the Brownian increment accumulated on the fine grid.
pub fn deviation_stats(
    p: &SdeProblem,
    w: &BrownianPath,
    fine: &GridPath,
    coarse: &GridPath,
    p_exponent: f64,
    taus: &[StoppingTimeSpec],
) -> Result<DeviationSample> {
    if !(1.0..=8.0).contains(&p_exponent) {
        return Err(invalid(format!("p_exponent {p_exponent} outside [1, 8]")));
    }
    let big_n = fine.n_steps();
    let n = coarse.n_steps();
    if w.n_steps() != big_n || n > big_n || !big_n.is_multiple_of(n) {
        return Err(invalid(format!(
            "grids are not nested: fine {big_n}, coarse {n}, Brownian {}",
            w.n_steps()
        )));
    }
    if fine.dim() != p.dim() || coarse.dim() != p.dim() {
        return Err(invalid("dimension mismatch between paths and problem"));
    }
    for tau in taus {
        tau.validate(p.horizon())?;
    }
    let tau_idx: Vec<usize> = taus.iter().map(|t| fine_index_for(t, fine, p.x0())).collect();
    let d = p.dim();
    let horizon = p.horizon();
    let ratio = big_n / n;
    let mut ws = Workspace::new(d);
    let mut dw = vec![0.0; d];
    let mut interp = vec![0.0; d];
    let mut dev = vec![0.0; big_n + 1];

    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    for k in 0..n {
        let xk = coarse.state(k);
        let tk = coarse.time(k);
        dev[k * ratio] = dist(fine.state(k * ratio), xk);
        dw.fill(0.0);
        for m in 1..ratio {
            let j = k * ratio + m;
            for (acc, inc) in dw.iter_mut().zip(w.increment(j - 1)) {
                *acc += inc;
            }
            let tj = grid_time(j, big_n, horizon);
            ws.frozen_step(p, coarse.scheme(), tk, tj, tj - tk, xk, &dw, &mut interp);
            dev[j] = dist(fine.state(j), &interp);
        }
    }
    dev[big_n] = dist(fine.state(big_n), coarse.state(n));

    let sup = dev.iter().copied().fold(0.0, f64::max);
    Ok(DeviationSample {
        at_taus: tau_idx.iter().map(|&j| dev[j]).collect(),
        sup,
        sup_p: sup.powf(p_exponent),
        terminal_p: dev[big_n].powf(p_exponent),
    })
}

/// Estimate of `max_t E|X_t^{(n)} − X_{η_n(t)}^{(n)}|^q` over step midpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub n: usize,
    pub q: f64,
    pub value: f64,
    pub std_error: f64,
    /// Midpoint time selected as the maximiser.
    pub argmax_time: f64,
    pub selection_paths: u64,
    pub evaluation_paths: u64,
}

/// Monte Carlo estimate of the increment moment of the standard scheme.
///
/// Even path indices choose the maximising midpoint, odd ones estimate the
/// moment there. Separating selection from evaluation removes the upward bias
/// a max over noisy per-midpoint means would have.
pub fn increment_moment(p: &SdeProblem, n: usize, q: f64, paths: u64, seed: u64) -> Result<MomentEstimate> {
    let level = level_of(n)?;
    if !(q > 0.0) {
        return Err(invalid("moment order q must be positive"));
    }
    if paths < 2 {
        return Err(invalid("increment_moment needs at least two paths"));
    }
    let d = p.dim();
    let horizon = p.horizon();
    let half_dt = 0.5 * horizon / n as f64;

    let (select, evaluate) = parallel::fold_paths(
        paths,
        || (vec![Moments::default(); n], vec![Moments::default(); n]),
        |(sel, eva), i| {
            let w = BrownianPath::generate(d, level + 1, horizon, seed, i).expect("validated level");
            let coarse_w = w.coarsen(level).expect("coarser level");
            let path = simulate(p, SchemeKind::Standard, n, &coarse_w).expect("validated inputs");
            let mut ws = Workspace::new(d);
            let mut u = vec![0.0; d];
            let target = if i % 2 == 0 { sel } else { eva };
            for (k, acc) in target.iter_mut().enumerate() {
                let xk = path.state(k);
                let tk = path.time(k);
                ws.frozen_step(
                    p,
                    SchemeKind::Standard,
                    tk,
                    tk + half_dt,
                    half_dt,
                    xk,
                    w.increment(2 * k),
                    &mut u,
                );
                let norm2: f64 = u.iter().zip(xk).map(|(a, b)| (a - b) * (a - b)).sum();
                acc.push(norm2.powf(0.5 * q));
            }
        },
        |(s1, e1), (s2, e2)| {
            (
                s1.into_iter().zip(s2).map(|(a, b)| a.merge(b)).collect(),
                e1.into_iter().zip(e2).map(|(a, b)| a.merge(b)).collect(),
            )
        },
    );
    let k_star = select
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.mean.total_cmp(&b.1.mean))
        .map(|(k, _)| k)
        .unwrap_or(0);
    let chosen = evaluate[k_star];
    Ok(MomentEstimate {
        n,
        q,
        value: chosen.mean,
        std_error: chosen.std_error(),
        argmax_time: grid_time(k_star, n, horizon) + half_dt,
        selection_paths: select[k_star].count,
        evaluation_paths: chosen.count,
    })
}
