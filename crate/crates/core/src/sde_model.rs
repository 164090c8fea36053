//! SDE problem definitions and the preset catalog.
//!
//! A problem bundles the drift `b(t, x)`, the diffusion matrix `σ(t, x)`
//! (row-major `d × d`), the start point, the horizon and the regularity
//! constants the rate theory depends on. All presets are time-homogeneous and
//! have bounded drift; unbounded drifts are outside the supported class.

use crate::brownian::NormalStream;
use crate::error::{invalid, Error, Result};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::sync::Arc;

/// Coefficient callback: writes the value at `(t, x)` into `out`.
pub type CoeffFn = dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync;

/// Regularity constants of the coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoeffMeta {
    /// `K` in `⟨x − y, b(t,x) − b(t,y)⟩ ≤ K |x − y|²`.
    pub one_sided_lipschitz_k: f64,
    /// `λ0 ≥ 1` with `λ0⁻¹|ξ|² ≤ ⟨σσ*ξ, ξ⟩ ≤ λ0|ξ|²`.
    pub ellipticity_lambda0: f64,
    /// `σ` is `(1/2 + α)`-Hölder in space.
    pub holder_alpha: f64,
    /// Time-Hölder exponent of both coefficients.
    pub holder_beta_time: f64,
    /// Sup-norm bound of `|b|`.
    pub drift_bound: f64,
    /// Constant of the spatial Hölder quotient of `σ` (Frobenius norm).
    pub holder_constant: f64,
}

impl CoeffMeta {
    pub fn new(
        one_sided_lipschitz_k: f64,
        ellipticity_lambda0: f64,
        holder_alpha: f64,
        holder_beta_time: f64,
        drift_bound: f64,
        holder_constant: f64,
    ) -> Result<Self> {
        if !(one_sided_lipschitz_k >= 0.0) {
            return Err(invalid("one-sided Lipschitz constant must be nonnegative"));
        }
        if !(ellipticity_lambda0 >= 1.0) {
            return Err(invalid("ellipticity constant lambda0 must be >= 1"));
        }
        if !(0.0..=0.5).contains(&holder_alpha) {
            return Err(invalid("holder_alpha must lie in [0, 1/2]"));
        }
        if !(holder_beta_time >= 0.5) {
            return Err(invalid("holder_beta_time must be >= 1/2"));
        }
        if !(drift_bound >= 0.0) || !(holder_constant >= 0.0) {
            return Err(invalid("drift bound and Hölder constant must be nonnegative"));
        }
        Ok(Self {
            one_sided_lipschitz_k,
            ellipticity_lambda0,
            holder_alpha,
            holder_beta_time,
            drift_bound,
            holder_constant,
        })
    }
}

/// A `d`-dimensional SDE `dX = b(t,X) dt + σ(t,X) dW`, `X_0 = x0`, on `[0, T]`.
#[derive(Clone)]
pub struct SdeProblem {
    name: String,
    dim: usize,
    horizon: f64,
    x0: Vec<f64>,
    drift: Arc<CoeffFn>,
    diffusion: Arc<CoeffFn>,
    meta: CoeffMeta,
}

impl fmt::Debug for SdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SdeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("x0", &self.x0)
            .field("meta", &self.meta)
            .finish_non_exhaustive()
    }
}

impl SdeProblem {
    pub fn new<B, S>(
        name: impl Into<String>,
        horizon: f64,
        x0: Vec<f64>,
        drift: B,
        diffusion: S,
        meta: CoeffMeta,
    ) -> Result<Self>
    where
        B: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
        S: Fn(f64, &[f64], &mut [f64]) + Send + Sync + 'static,
    {
        let dim = x0.len();
        if dim == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid("horizon must be a positive finite time"));
        }
        Ok(Self {
            name: name.into(),
            dim,
            horizon,
            x0,
            drift: Arc::new(drift),
            diffusion: Arc::new(diffusion),
            meta,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn x0(&self) -> &[f64] {
        &self.x0
    }
    pub fn meta(&self) -> &CoeffMeta {
        &self.meta
    }

    /// Writes `b(t, x)` into `out` (length `d`).
    #[inline]
    pub fn drift_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.drift)(t, x, out)
    }

    /// Writes `σ(t, x)` row-major into `out` (length `d²`).
    #[inline]
    pub fn diffusion_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.diffusion)(t, x, out)
    }

    pub fn drift(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.drift_into(t, x, &mut out);
        out
    }

    pub fn diffusion(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim * self.dim];
        self.diffusion_into(t, x, &mut out);
        out
    }
}

/// Drift used throughout: `1` on `(−∞, 0]`, `−1` on `(0, ∞)`.
#[inline]
pub fn sign_drift(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Catalog entries accepted by [`preset`].
pub const PRESET_NAMES: &[&str] = &[
    "sign_drift",
    "brownian",
    "brownian_2d",
    "holder_diffusion(alpha)",
    "monotone_2d",
];

fn identity_diffusion(d: usize) -> impl Fn(f64, &[f64], &mut [f64]) + Send + Sync {
    move |_t, _x, out: &mut [f64]| {
        out.fill(0.0);
        for i in 0..d {
            out[i * d + i] = 1.0;
        }
    }
}

fn brownian_problem(name: &str, d: usize) -> Result<SdeProblem> {
    SdeProblem::new(
        name,
        1.0,
        vec![0.0; d],
        |_t, _x, out: &mut [f64]| out.fill(0.0),
        identity_diffusion(d),
        CoeffMeta::new(0.0, 1.0, 0.5, 1.0, 0.0, 0.0)?,
    )
}

fn holder_diffusion(alpha: f64) -> Result<SdeProblem> {
    if !(0.0..=0.5).contains(&alpha) {
        return Err(invalid(format!("holder_diffusion: alpha = {alpha} outside [0, 1/2]")));
    }
    let gamma = 0.5 + alpha;
    // σ ∈ [1, 3/2] so a = σ² ∈ [1, 9/4]; |x| ↦ min(|x|,1)^γ is γ-Hölder with constant 1.
    SdeProblem::new(
        format!("holder_diffusion({alpha})"),
        1.0,
        vec![0.0],
        |_t, x: &[f64], out: &mut [f64]| out[0] = sign_drift(x[0]),
        move |_t, x: &[f64], out: &mut [f64]| out[0] = 1.0 + 0.5 * x[0].abs().min(1.0).powf(gamma),
        CoeffMeta::new(0.0, 2.25, alpha, 1.0, 1.0, 0.5)?,
    )
}

/// Looks up a catalog problem. Parameterized families use call syntax, e.g.
/// `holder_diffusion(0.25)`.
pub fn preset(name: &str) -> Result<SdeProblem> {
    let name = name.trim();
    let (base, arg) = match name.find('(') {
        Some(open) if name.ends_with(')') => (name[..open].trim(), Some(name[open + 1..name.len() - 1].trim())),
        _ => (name, None),
    };
    let unknown = || Error::UnknownPreset {
        name: name.to_string(),
        valid: PRESET_NAMES.join(", "),
    };
    match (base, arg) {
        ("sign_drift", None) => SdeProblem::new(
            "sign_drift",
            1.0,
            vec![0.0],
            |_t, x: &[f64], out: &mut [f64]| out[0] = sign_drift(x[0]),
            identity_diffusion(1),
            CoeffMeta::new(0.0, 1.0, 0.5, 1.0, 1.0, 0.0)?,
        ),
        ("brownian", None) => brownian_problem("brownian", 1),
        ("brownian_2d", None) => brownian_problem("brownian_2d", 2),
        ("monotone_2d", None) => SdeProblem::new(
            "monotone_2d",
            1.0,
            vec![0.0, 0.0],
            |_t, x: &[f64], out: &mut [f64]| {
                out[0] = sign_drift(x[0]);
                out[1] = sign_drift(x[1]);
            },
            identity_diffusion(2),
            CoeffMeta::new(0.0, 1.0, 0.5, 1.0, std::f64::consts::SQRT_2, 0.0)?,
        ),
        ("holder_diffusion", Some(arg)) => {
            let arg = arg
                .strip_prefix("alpha")
                .map(|s| s.trim_start_matches([' ', '=']))
                .unwrap_or(arg);
            let alpha: f64 = arg
                .parse()
                .map_err(|_| invalid(format!("holder_diffusion expects a numeric alpha, got `{arg}`")))?;
            holder_diffusion(alpha)
        }
        _ => Err(unknown()),
    }
}

/// Outcome of one sampled inequality family.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ViolationSummary {
    pub checked: u64,
    pub violations: u64,
    /// Largest amount by which the inequality failed (0 if never).
    pub worst: f64,
}

impl ViolationSummary {
    fn record(&mut self, excess: f64, scale: f64) {
        self.checked += 1;
        if excess > 1e-12 * scale.max(1.0) {
            self.violations += 1;
            self.worst = self.worst.max(excess);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub problem: String,
    pub samples: u64,
    pub ellipticity: ViolationSummary,
    pub holder: ViolationSummary,
    pub one_sided_lipschitz: ViolationSummary,
    pub drift_bound: ViolationSummary,
}

impl AssumptionReport {
    pub fn total_violations(&self) -> u64 {
        self.ellipticity.violations
            + self.holder.violations
            + self.one_sided_lipschitz.violations
            + self.drift_bound.violations
    }
}

/// Half-width of the sampling box for `x` and `y`.
pub const SAMPLE_BOX: f64 = 5.0;
/// Pairs closer than this are skipped by the Hölder quotient check.
pub const HOLDER_MIN_SEPARATION: f64 = 1e-9;

const VERIFY_DOMAIN: u64 = 0x7665_7269_6679;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Spot-checks ellipticity, the Hölder quotient of `σ`, the one-sided
/// Lipschitz inequality and the drift bound at random points.
///
/// Sampling: `t ~ U[0, T]`, `x, y ~ U[−5, 5]^d`, `ξ` uniform on the unit sphere.
pub fn verify_assumptions(p: &SdeProblem, samples: u64, seed: u64) -> Result<AssumptionReport> {
    if samples == 0 {
        return Err(invalid("verify_assumptions needs at least one sample"));
    }
    let d = p.dim();
    let meta = *p.meta();
    let mut rng = NormalStream::new(seed ^ VERIFY_DOMAIN, 0);
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let mut xi = vec![0.0; d];
    let mut bx = vec![0.0; d];
    let mut by = vec![0.0; d];
    let mut sx = vec![0.0; d * d];
    let mut sy = vec![0.0; d * d];
    let mut report = AssumptionReport {
        problem: p.name().to_string(),
        samples,
        ellipticity: ViolationSummary::default(),
        holder: ViolationSummary::default(),
        one_sided_lipschitz: ViolationSummary::default(),
        drift_bound: ViolationSummary::default(),
    };
    for _ in 0..samples {
        let t = rng.next_uniform() * p.horizon();
        for i in 0..d {
            x[i] = SAMPLE_BOX * (2.0 * rng.next_uniform() - 1.0);
            y[i] = SAMPLE_BOX * (2.0 * rng.next_uniform() - 1.0);
            xi[i] = rng.next_normal();
        }
        let xn = norm(&xi);
        xi.iter_mut().for_each(|v| *v /= xn);

        p.drift_into(t, &x, &mut bx);
        p.drift_into(t, &y, &mut by);
        p.diffusion_into(t, &x, &mut sx);
        p.diffusion_into(t, &y, &mut sy);

        // ⟨σσ*ξ, ξ⟩ = |σ*ξ|²
        let quad: f64 = (0..d)
            .map(|k| {
                let v: f64 = (0..d).map(|i| sx[i * d + k] * xi[i]).sum();
                v * v
            })
            .sum();
        let lam = meta.ellipticity_lambda0;
        let excess = (1.0 / lam - quad).max(quad - lam);
        report.ellipticity.record(excess, lam);

        let diff: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let dist = norm(&diff);
        if dist >= HOLDER_MIN_SEPARATION {
            let sdiff: f64 = sx.iter().zip(&sy).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            let quotient = sdiff / dist.powf(0.5 + meta.holder_alpha);
            report
                .holder
                .record(quotient - meta.holder_constant, meta.holder_constant);
        }

        let inner: f64 = diff
            .iter()
            .zip(bx.iter().zip(&by))
            .map(|(dx, (a, b))| dx * (a - b))
            .sum();
        let rhs = meta.one_sided_lipschitz_k * dist * dist;
        report.one_sided_lipschitz.record(inner - rhs, rhs);

        report
            .drift_bound
            .record(norm(&bx) - meta.drift_bound, meta.drift_bound);
    }
    Ok(report)
}
