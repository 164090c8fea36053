//! Yamada–Watanabe approximations of `|x|`.
//!
//! `ψ` is a trapezoidal window in `u = log z` over `[log(ε/δ), log ε]` with
//! linear ramps of width `log δ / 4`, divided by `z` and normalised:
//! `ψ(z) = c·w(log z)/z` with `c = 4/(3 log δ)`. Then `φ'(x) = ∫_0^x ψ`,
//! `φ(x) = ∫_0^x φ'` and `Φ(x) = φ(|x|)`; all three have closed forms.

use crate::brownian::NormalStream;
use crate::error::{invalid, Result};
use crate::numerics::quadrature::{self, Quadrature};
use serde::{Deserialize, Serialize};

/// Tolerance below which a property residual is treated as rounding.
const ROUNDING: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YwFunction {
    delta: f64,
    eps: f64,
    /// `log(ε/δ)`.
    a: f64,
    /// `log ε`.
    b: f64,
    /// Ramp width in log-coordinates.
    r: f64,
    /// Normalisation constant.
    c: f64,
}

impl YwFunction {
    pub fn build(delta: f64, eps: f64) -> Result<Self> {
        if !(delta > 1.0) || !delta.is_finite() {
            return Err(invalid(format!("delta must be > 1, got {delta}")));
        }
        if !(eps > 0.0 && eps < 1.0) {
            return Err(invalid(format!("eps must lie in (0, 1), got {eps}")));
        }
        let log_delta = delta.ln();
        Ok(Self {
            delta,
            eps,
            a: (eps / delta).ln(),
            b: eps.ln(),
            r: log_delta / 4.0,
            c: 4.0 / (3.0 * log_delta),
        })
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
    pub fn eps(&self) -> f64 {
        self.eps
    }
    /// Lower end `ε/δ` of the support of `ψ`.
    pub fn support_start(&self) -> f64 {
        self.eps / self.delta
    }

    /// Points where `ψ` has kinks, in increasing order.
    pub fn breakpoints(&self) -> [f64; 4] {
        [
            self.support_start(),
            (self.a + self.r).exp(),
            (self.b - self.r).exp(),
            self.eps,
        ]
    }

    fn window(&self, u: f64) -> f64 {
        if u <= self.a || u >= self.b {
            0.0
        } else if u < self.a + self.r {
            (u - self.a) / self.r
        } else if u > self.b - self.r {
            (self.b - u) / self.r
        } else {
            1.0
        }
    }

    /// `∫_a^u w`.
    fn window_integral(&self, u: f64) -> f64 {
        let (a, b, r) = (self.a, self.b, self.r);
        let len = b - a;
        if u <= a {
            0.0
        } else if u < a + r {
            (u - a).powi(2) / (2.0 * r)
        } else if u <= b - r {
            u - a - r / 2.0
        } else if u < b {
            (len - r) - (b - u).powi(2) / (2.0 * r)
        } else {
            len - r
        }
    }

    /// `∫_a^u W(v) e^v dv` with `W` the window integral, built piecewise.
    fn weighted_integral(&self, u: f64) -> f64 {
        let (a, b, r) = (self.a, self.b, self.r);
        let len = b - a;
        let f1 = |u: f64| {
            let s = u - a;
            u.exp() * (s * s - 2.0 * s + 2.0) / (2.0 * r)
        };
        let f2 = |u: f64| u.exp() * (u - a - r / 2.0 - 1.0);
        let f3 = |u: f64| {
            let v = b - u;
            (len - r) * u.exp() - u.exp() * (v * v + 2.0 * v + 2.0) / (2.0 * r)
        };
        if u <= a {
            return 0.0;
        }
        let u1 = u.min(a + r);
        let mut total = f1(u1) - f1(a);
        if u <= a + r {
            return total;
        }
        let u2 = u.min(b - r);
        total += f2(u2) - f2(a + r);
        if u <= b - r {
            return total;
        }
        let u3 = u.min(b);
        total + f3(u3) - f3(b - r)
    }

    /// `ψ(z)`; zero outside `[ε/δ, ε]` and for `z ≤ 0`.
    pub fn psi(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        self.c * self.window(z.ln()) / z
    }

    /// `φ(x) = ∫_0^{|x|} ∫_0^y ψ(z) dz dy`.
    pub fn phi(&self, x: f64) -> f64 {
        let x = x.abs();
        if x <= self.support_start() {
            return 0.0;
        }
        if x >= self.eps {
            return self.c * self.weighted_integral(self.b) + (x - self.eps);
        }
        self.c * self.weighted_integral(x.ln())
    }

    /// `φ'(x)`, odd in `x`.
    pub fn phi_prime(&self, x: f64) -> f64 {
        if x == 0.0 {
            return 0.0;
        }
        let v = if x.abs() >= self.eps {
            1.0
        } else {
            self.c * self.window_integral(x.abs().ln())
        };
        v.copysign(x)
    }

    /// `φ''(x) = ψ(|x|)`.
    pub fn phi_double_prime(&self, x: f64) -> f64 {
        self.psi(x.abs())
    }

    /// `Φ(x) = φ(|x|)` for `x ∈ ℝ^d`.
    pub fn big_phi(&self, x: &[f64]) -> f64 {
        self.phi(x.iter().map(|v| v * v).sum::<f64>().sqrt())
    }

    /// `∫ ψ` by adaptive quadrature, split at the kinks.
    pub fn psi_integral(&self, tol: f64) -> Quadrature {
        let mut f = |z: f64| self.psi(z);
        quadrature::integrate_pieces(&mut f, &self.breakpoints(), tol)
    }

    /// Tabulates `(z, ψ, φ', φ'')`.
    pub fn samples(&self, zs: &[f64]) -> Vec<YwSample> {
        zs.iter()
            .map(|&z| YwSample {
                z,
                psi: self.psi(z),
                phi: self.phi(z),
                phi_prime: self.phi_prime(z),
                phi_double_prime: self.phi_double_prime(z),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct YwSample {
    pub z: f64,
    pub psi: f64,
    pub phi: f64,
    pub phi_prime: f64,
    pub phi_double_prime: f64,
}

/// Points on which the four properties are checked.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleGrid {
    pub scalars: Vec<f64>,
    /// Points in `ℝ^2` and `ℝ^3` for the radial function `Φ`.
    pub vectors: Vec<Vec<f64>>,
}

impl SampleGrid {
    /// Log-spaced points in `[lo, hi]`, both signs, plus `0`, `ε/δ` and `ε`;
    /// `vectors` are random directions at log-spaced radii in `d = 2, 3`.
    pub fn log_spaced(f: &YwFunction, count: usize, lo: f64, hi: f64) -> Self {
        let count = count.max(2);
        let step = (hi / lo).ln() / (count - 1) as f64;
        let mut scalars: Vec<f64> = (0..count).map(|i| lo * (step * i as f64).exp()).collect();
        scalars.extend([0.0, f.support_start(), f.eps()]);
        let negatives: Vec<f64> = scalars.iter().filter(|&&x| x > 0.0).map(|x| -x).collect();
        scalars.extend(negatives);

        let mut stream = NormalStream::new(0x59_57, 0);
        let mut vectors = Vec::new();
        for dim in [2usize, 3] {
            for i in (0..count).step_by(10) {
                let radius = lo * (step * i as f64).exp();
                let dir: Vec<f64> = (0..dim).map(|_| stream.next_normal()).collect();
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
                vectors.push(dir.iter().map(|v| radius * v / norm).collect());
            }
        }
        Self { scalars, vectors }
    }

    /// `10^4` log-spaced points in `[10⁻⁶, 10]`.
    pub fn standard(f: &YwFunction) -> Self {
        Self::log_spaced(f, 10_000, 1e-6, 10.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyCheck {
    pub name: String,
    pub evaluated: u64,
    pub violations: u64,
    /// Largest positive residual, `0` if none.
    pub max_violation: f64,
    /// Smallest margin `bound − value` seen.
    pub min_slack: f64,
}

impl PropertyCheck {
    fn new(name: &str) -> Self {
        Self {
            name: name.to_string(),
            evaluated: 0,
            violations: 0,
            max_violation: 0.0,
            min_slack: f64::INFINITY,
        }
    }

    /// Records `value ≤ bound`.
    fn record(&mut self, value: f64, bound: f64) {
        self.evaluated += 1;
        let slack = bound - value;
        self.min_slack = self.min_slack.min(slack);
        if slack < -ROUNDING * bound.abs().max(1.0) || slack.is_nan() {
            self.violations += 1;
            self.max_violation = self.max_violation.max(-slack);
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyReport {
    pub delta: f64,
    pub eps: f64,
    pub checks: Vec<PropertyCheck>,
}

impl PropertyReport {
    pub fn total_violations(&self) -> u64 {
        self.checks.iter().map(|c| c.violations).sum()
    }
}

/// Evaluates the four approximation properties pointwise on `grid`:
///
/// 1. `|x| ≤ ε + Φ(x)`
/// 2. `0 ≤ |φ'(x)| ≤ 1`
/// 3. `φ'(|x|)/|x| ≤ δ/ε`
/// 4. `φ''(±|x|) = ψ(|x|) ≤ 2/(|x| log δ)·1_{[ε/δ, ε]}(|x|)`
pub fn check_properties(f: &YwFunction, grid: &SampleGrid) -> PropertyReport {
    let mut p1 = PropertyCheck::new("abs_within_eps");
    let mut p2 = PropertyCheck::new("slope_bounded");
    let mut p3 = PropertyCheck::new("slope_ratio");
    let mut p4 = PropertyCheck::new("curvature");
    let (delta, eps) = (f.delta(), f.eps());
    let log_delta = delta.ln();
    for &x in &grid.scalars {
        let ax = x.abs();
        p1.record(ax, eps + f.phi(x));
        let d1 = f.phi_prime(x);
        p2.record(d1.abs(), 1.0);
        p2.record(0.0, f.phi_prime(ax));
        if ax > 0.0 {
            p3.record(f.phi_prime(ax) / ax, delta / eps);
            let inside = ax >= f.support_start() && ax <= eps;
            let bound = if inside { 2.0 / (ax * log_delta) } else { 0.0 };
            let psi = f.psi(ax);
            p4.record(psi, bound);
            p4.record(-psi, 0.0);
            for s in [ax, -ax] {
                p4.record((f.phi_double_prime(s) - psi).abs(), 0.0);
            }
        }
    }
    for v in &grid.vectors {
        let norm = v.iter().map(|c| c * c).sum::<f64>().sqrt();
        p1.record(norm, eps + f.big_phi(v));
    }
    PropertyReport {
        delta,
        eps,
        checks: vec![p1, p2, p3, p4],
    }
}

/// The `(δ, ε)` pairs used in the rate proofs for grid size `n`:
/// `(2, n^{-1/2})` and `(n^{1/3}, 1/log n)`.
pub fn proof_parameters(n: usize) -> [(f64, f64); 2] {
    let nf = n as f64;
    [(2.0, nf.powf(-0.5)), (nf.cbrt(), 1.0 / nf.ln())]
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn build_rejects_bad_parameters() {
        assert!(YwFunction::build(1.0, 0.5).is_err());
        assert!(YwFunction::build(2.0, 0.0).is_err());
        assert!(YwFunction::build(2.0, 1.0).is_err());
        assert!(YwFunction::build(f64::NAN, 0.5).is_err());
    }

    #[test]
    fn trivial_values() {
        let f = YwFunction::build(2.0, 0.5).unwrap();
        assert_eq!(f.phi(0.0), 0.0);
        for x in [0.5, 0.7, 3.0] {
            assert_eq!(f.phi_prime(x), 1.0);
        }
        assert!((f.phi(1.0) - f.phi(0.9) - 0.1).abs() < 1e-8);
        assert_eq!(f.phi_prime(0.2), 0.0);
        assert_eq!(f.psi(0.2), 0.0);
        assert_eq!(f.psi(0.6), 0.0);
    }

    #[test]
    fn psi_integrates_to_one() {
        for n in (4..=10).map(|k| 1usize << k) {
            for (delta, eps) in proof_parameters(n) {
                let f = YwFunction::build(delta, eps).unwrap();
                let q = f.psi_integral(1e-12);
                assert!((q.value - 1.0).abs() < 1e-8, "({delta}, {eps}): {}", q.value);
            }
        }
    }

    #[test]
    fn phi_matches_quadrature_of_phi_prime() {
        let f = YwFunction::build(3.0, 0.3).unwrap();
        for x in [0.05, 0.12, 0.2, 0.29, 0.31, 1.7] {
            let mut g = |y: f64| f.phi_prime(y);
            let mut pts = vec![0.0];
            pts.extend(f.breakpoints().iter().copied().filter(|&b| b < x));
            pts.push(x);
            let q = quadrature::integrate_pieces(&mut g, &pts, 1e-13);
            assert!(
                (q.value - f.phi(x)).abs() < 1e-10,
                "x = {x}: {} vs {}",
                q.value,
                f.phi(x)
            );
        }
    }

    #[test]
    fn phi_prime_matches_quadrature_of_psi() {
        let f = YwFunction::build(5.0, 0.2).unwrap();
        for x in [0.041, 0.06, 0.1, 0.15, 0.199] {
            let mut g = |z: f64| f.psi(z);
            let mut pts = vec![f.support_start()];
            pts.extend(
                f.breakpoints()
                    .iter()
                    .copied()
                    .filter(|&b| b > f.support_start() && b < x),
            );
            pts.push(x);
            let q = quadrature::integrate_pieces(&mut g, &pts, 1e-13);
            assert!((q.value - f.phi_prime(x)).abs() < 1e-10);
        }
    }

    #[test]
    fn finite_difference_second_derivative_matches_psi() {
        for n in [16usize, 1024] {
            for (delta, eps) in proof_parameters(n) {
                let f = YwFunction::build(delta, eps).unwrap();
                let kinks = f.breakpoints();
                let (lo, hi) = (f.support_start(), f.eps());
                let cells = 1000;
                let width = (hi - lo) / cells as f64;
                for i in 0..cells {
                    let z = lo + (i as f64 + 0.5) * width;
                    let h = 1e-7 * z;
                    if kinks.iter().any(|&k| (k - z).abs() <= h) {
                        continue;
                    }
                    let fd = (f.phi_prime(z + h) - f.phi_prime(z - h)) / (2.0 * h);
                    assert!(
                        (fd - f.psi(z)).abs() < 1e-6,
                        "({delta}, {eps}) z = {z}: {fd} vs {}",
                        f.psi(z)
                    );
                }
            }
        }
    }

    #[test]
    fn properties_hold_on_standard_grid() {
        for n in (4..=10).map(|k| 1usize << k) {
            for (delta, eps) in proof_parameters(n) {
                let f = YwFunction::build(delta, eps).unwrap();
                let report = check_properties(&f, &SampleGrid::standard(&f));
                assert_eq!(report.total_violations(), 0, "{report:?}");
            }
        }
        let f = YwFunction::build(2.0, 0.5).unwrap();
        assert_eq!(check_properties(&f, &SampleGrid::standard(&f)).total_violations(), 0);
    }

    #[test]
    fn slope_ratio_vanishes_at_support_start() {
        let f = YwFunction::build(2.0, 0.5).unwrap();
        assert_eq!(f.phi_prime(f.support_start()), 0.0);
    }

    #[test]
    fn property_checker_detects_violations() {
        let mut c = PropertyCheck::new("x");
        c.record(1.5, 1.0);
        c.record(0.5, 1.0);
        assert_eq!(c.violations, 1);
        assert!((c.max_violation - 0.5).abs() < 1e-15);
        assert!((c.min_slack + 0.5).abs() < 1e-15);
    }

    #[test]
    fn psi_headroom_against_bound() {
        // c = 4/(3 log δ) leaves a factor 3/2 below 2/(z log δ).
        let f = YwFunction::build(7.0, 0.4).unwrap();
        let z = (f.breakpoints()[1] + f.breakpoints()[2]) / 2.0;
        assert!((f.psi(z) * z * 7f64.ln() - 4.0 / 3.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn phi_is_convex_nondecreasing_and_dominates(delta in 1.01f64..50.0, eps in 0.001f64..0.99, x in 0.0f64..3.0, h in 1e-4f64..0.1) {
            let f = YwFunction::build(delta, eps).unwrap();
            prop_assert!(f.phi(x + h) >= f.phi(x) - 1e-14);
            let mid = f.phi(x + h);
            prop_assert!(mid <= 0.5 * (f.phi(x) + f.phi(x + 2.0 * h)) + 1e-12);
            prop_assert!(f.phi(x) >= x - eps - 1e-12);
            prop_assert_eq!(f.phi(-x), f.phi(x));
        }
    }
}
