//! Strong-error experiments on coupled fine/coarse paths and rate regression.
//!
//! Each path index draws one Brownian path on the reference grid `2^L`. The
//! reference trajectory and every coarse trajectory are driven by it (coarse
//! increments by exact summation), and the deviation is measured at all fine
//! grid times.

use crate::brownian::{level_of, BrownianPath, MAX_LEVEL};
use crate::em_scheme::{deviation_stats, simulate, SchemeKind, StoppingTimeSpec};
use crate::error::{invalid, Error, Result};
use crate::numerics::stats::{linear_fit, Moments};
use crate::parallel;
use crate::sde_model::{preset, SdeProblem};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

/// Default cap on `paths · 2^L · d`.
pub const DEFAULT_BUDGET: f64 = 1e11;
/// Errors at or below this are treated as exact.
const EXACT_THRESHOLD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    /// `max_τ E|X_τ − X_τ^{(n)}|` over the configured stopping times.
    TerminalStopping,
    /// `E sup_t |X_t − X_t^{(n)}|`.
    Sup,
    /// `E sup_t |X_t − X_t^{(n)}|^p`.
    SupP,
}

impl Norm {
    pub fn as_str(self) -> &'static str {
        match self {
            Norm::TerminalStopping => "terminal_stopping",
            Norm::Sup => "sup",
            Norm::SupP => "sup_p",
        }
    }
}

impl fmt::Display for Norm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Norm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "terminal_stopping" => Ok(Norm::TerminalStopping),
            "sup" => Ok(Norm::Sup),
            "sup_p" => Ok(Norm::SupP),
            other => Err(invalid(format!(
                "unknown norm `{other}` (terminal_stopping, sup, sup_p)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    /// Preset name, e.g. `sign_drift` or `holder_diffusion(0.25)`.
    pub problem: String,
    pub scheme: SchemeKind,
    pub n_list: Vec<usize>,
    pub ref_level: u32,
    pub p_exponent: f64,
    pub norm: Norm,
    pub taus: Vec<StoppingTimeSpec>,
    pub paths: u64,
    pub master_seed: u64,
    /// Cap on `paths · 2^L · d`.
    pub budget: f64,
    /// Slope band; `band_pass` in the report is set when present.
    pub band: Option<(f64, f64)>,
}

impl ExperimentSpec {
    pub fn new(problem: impl Into<String>, norm: Norm) -> Self {
        Self {
            problem: problem.into(),
            scheme: SchemeKind::Standard,
            n_list: (4..=10).map(|k| 1usize << k).collect(),
            ref_level: 14,
            p_exponent: 1.0,
            norm,
            taus: vec![StoppingTimeSpec::Horizon],
            paths: 10_000,
            master_seed: 0,
            budget: DEFAULT_BUDGET,
            band: None,
        }
    }

    pub fn validate(&self, p: &SdeProblem) -> Result<()> {
        if self.n_list.len() < 3 {
            return Err(invalid("n_list needs at least 3 entries for a regression"));
        }
        for &n in &self.n_list {
            level_of(n)?;
        }
        if self.n_list.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("n_list must be strictly increasing"));
        }
        if self.ref_level > MAX_LEVEL {
            return Err(Error::Resource(format!(
                "reference level {} exceeds {MAX_LEVEL}",
                self.ref_level
            )));
        }
        let big_n = 1usize << self.ref_level;
        if *self.n_list.last().expect("nonempty") >= big_n {
            return Err(invalid("2^ref_level must exceed every n"));
        }
        if !(1.0..=8.0).contains(&self.p_exponent) {
            return Err(invalid("p_exponent must lie in [1, 8]"));
        }
        if self.paths < 2 {
            return Err(invalid("need at least 2 paths"));
        }
        if self.taus.is_empty() {
            return Err(invalid("at least one stopping time is required"));
        }
        for tau in &self.taus {
            tau.validate(p.horizon())?;
        }
        let cost = self.paths as f64 * big_n as f64 * p.dim() as f64;
        if cost > self.budget {
            return Err(Error::Resource(format!(
                "paths * 2^L * d = {cost:.3e} exceeds the budget {:.3e}",
                self.budget
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub n: usize,
    pub error: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogModelFit {
    pub gamma: f64,
    /// `a` in `error ≈ a (log n)^{−γ}`.
    pub a: f64,
    /// RMS of the log-residuals.
    pub residual_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub problem: String,
    pub scheme: SchemeKind,
    pub norm: Norm,
    pub p_exponent: f64,
    pub ref_level: u32,
    pub paths: u64,
    pub master_seed: u64,
    /// What the error column measures.
    pub error_label: String,
    pub per_n: Vec<RateRow>,
    /// Per stopping time `E|Y_τ|` rows (only for `terminal_stopping`).
    pub per_tau: Vec<(String, Vec<RateRow>)>,
    pub fitted_slope: Option<f64>,
    pub intercept: Option<f64>,
    pub slope_ci: Option<(f64, f64)>,
    pub theory_slope: Option<f64>,
    pub log_model_fit: Option<LogModelFit>,
    /// The smallest `n` was left out of the regression as a transient.
    pub dropped_smallest: bool,
    /// All errors vanish: the scheme is exact for this problem.
    pub degenerate_exact: bool,
    pub band: Option<(f64, f64)>,
    pub band_pass: Option<bool>,
}

/// Theory slope and, for `α = 0`, the log-rate exponent `γ`.
pub fn theory(norm: Norm, dim: usize, alpha: f64) -> (Option<f64>, Option<f64>) {
    if dim == 1 {
        if alpha == 0.0 {
            let gamma = match norm {
                Norm::Sup => 0.5,
                _ => 1.0,
            };
            return (None, Some(gamma));
        }
        let slope = match norm {
            Norm::Sup => -2.0 * alpha * alpha,
            _ => -alpha,
        };
        return (Some(slope), None);
    }
    if alpha == 0.5 {
        (Some(-0.5), None)
    } else {
        (None, None)
    }
}

struct Accumulated {
    taus: Vec<Vec<Moments>>,
    sup: Vec<Moments>,
    sup_p: Vec<Moments>,
}

fn simulate_errors(p: &SdeProblem, spec: &ExperimentSpec) -> Accumulated {
    let d = p.dim();
    let levels: Vec<u32> = spec.n_list.iter().map(|&n| n.trailing_zeros()).collect();
    let big_n = 1usize << spec.ref_level;
    let k = spec.n_list.len();
    let t = spec.taus.len();
    parallel::fold_paths(
        spec.paths,
        || Accumulated {
            taus: vec![vec![Moments::default(); k]; t],
            sup: vec![Moments::default(); k],
            sup_p: vec![Moments::default(); k],
        },
        |acc, i| {
            let w = BrownianPath::generate(d, spec.ref_level, p.horizon(), spec.master_seed, i).expect("validated");
            let fine = simulate(p, spec.scheme, big_n, &w).expect("validated");
            for (j, (&n, &level)) in spec.n_list.iter().zip(&levels).enumerate() {
                let coarse = simulate(p, spec.scheme, n, &w.coarsen(level).expect("coarser")).expect("validated");
                let s = deviation_stats(p, &w, &fine, &coarse, spec.p_exponent, &spec.taus).expect("validated");
                for (m, v) in acc.taus.iter_mut().zip(&s.at_taus) {
                    m[j].push(*v);
                }
                acc.sup[j].push(s.sup);
                acc.sup_p[j].push(s.sup_p);
            }
        },
        |a, b| {
            let merge = |x: Vec<Moments>, y: Vec<Moments>| x.into_iter().zip(y).map(|(u, v)| u.merge(v)).collect();
            Accumulated {
                taus: a.taus.into_iter().zip(b.taus).map(|(x, y)| merge(x, y)).collect(),
                sup: merge(a.sup, b.sup),
                sup_p: merge(a.sup_p, b.sup_p),
            }
        },
    )
}

fn rows(n_list: &[usize], m: &[Moments]) -> Vec<RateRow> {
    n_list
        .iter()
        .zip(m)
        .map(|(&n, m)| RateRow {
            n,
            error: m.mean,
            std_error: m.std_error(),
        })
        .collect()
}

/// Least-squares fit of `log error` on `log n`. The smallest `n` is dropped
/// when its residual against the fit of the remaining points exceeds three
/// residual standard deviations of that fit. An in-sample residual is useless
/// here: with a handful of points it can never reach three deviations.
#[derive(Debug, Clone, Copy)]
struct RateFit {
    slope: f64,
    intercept: f64,
    ci: Option<(f64, f64)>,
    dropped: bool,
}

fn fit_rate(per_n: &[RateRow]) -> Option<RateFit> {
    let xs: Vec<f64> = per_n.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = per_n.iter().map(|r| r.error.ln()).collect();
    let fit = linear_fit(&xs, &ys)?;
    let drop = xs.len() > 3
        && linear_fit(&xs[1..], &ys[1..]).is_some_and(|rest| {
            let r0 = ys[0] - (rest.intercept + rest.slope * xs[0]);
            r0.abs() > 3.0 * rest.residual_sd && r0.abs() > 1e-9
        });
    let fit = if drop { linear_fit(&xs[1..], &ys[1..])? } else { fit };
    Some(RateFit {
        slope: fit.slope,
        intercept: fit.intercept,
        ci: fit.slope_interval(0.95),
        dropped: drop,
    })
}

fn fit_log_model(per_n: &[RateRow], gamma: f64) -> Option<LogModelFit> {
    if per_n.iter().any(|r| r.n < 2 || !(r.error > 0.0)) {
        return None;
    }
    // log e = log a − γ log log n; a by least squares in log space.
    let logs: Vec<f64> = per_n
        .iter()
        .map(|r| r.error.ln() + gamma * (r.n as f64).ln().ln())
        .collect();
    let log_a = logs.iter().sum::<f64>() / logs.len() as f64;
    let rms = (logs.iter().map(|l| (l - log_a).powi(2)).sum::<f64>() / logs.len() as f64).sqrt();
    Some(LogModelFit {
        gamma,
        a: log_a.exp(),
        residual_rms: rms,
    })
}

pub fn run(spec: &ExperimentSpec) -> Result<RateReport> {
    let p = preset(&spec.problem)?;
    run_problem(&p, spec)
}

/// [`run`] for a problem not in the catalog.
pub fn run_problem(p: &SdeProblem, spec: &ExperimentSpec) -> Result<RateReport> {
    spec.validate(p)?;
    let acc = simulate_errors(p, spec);
    let per_tau: Vec<(String, Vec<RateRow>)> = spec
        .taus
        .iter()
        .zip(&acc.taus)
        .map(|(tau, m)| (tau.to_string(), rows(&spec.n_list, m)))
        .collect();
    let (per_n, error_label) = match spec.norm {
        Norm::TerminalStopping => {
            // Per n, the stopping time with the largest mean error.
            let per_n = (0..spec.n_list.len())
                .map(|j| {
                    per_tau
                        .iter()
                        .map(|(_, r)| r[j])
                        .max_by(|a, b| a.error.total_cmp(&b.error))
                        .expect("nonempty taus")
                })
                .collect();
            (per_n, "stopping-time family max of E|X_tau - X_tau^(n)|".to_string())
        }
        Norm::Sup => (rows(&spec.n_list, &acc.sup), "E sup_t |X_t - X_t^(n)|".to_string()),
        Norm::SupP => (
            rows(&spec.n_list, &acc.sup_p),
            format!("E sup_t |X_t - X_t^(n)|^{}", spec.p_exponent),
        ),
    };
    let degenerate_exact = per_n.iter().all(|r| r.error <= EXACT_THRESHOLD);
    let (theory_slope, gamma) = theory(spec.norm, p.dim(), p.meta().holder_alpha);
    let fit = if degenerate_exact { None } else { fit_rate(&per_n) };
    let band_pass = match (spec.band, fit) {
        (Some((lo, hi)), Some(f)) => Some(f.slope >= lo && f.slope <= hi),
        (Some(_), None) => Some(false),
        _ => None,
    };
    Ok(RateReport {
        problem: p.name().to_string(),
        scheme: spec.scheme,
        norm: spec.norm,
        p_exponent: spec.p_exponent,
        ref_level: spec.ref_level,
        paths: spec.paths,
        master_seed: spec.master_seed,
        error_label,
        log_model_fit: if degenerate_exact {
            None
        } else {
            gamma.and_then(|g| fit_log_model(&per_n, g))
        },
        per_n,
        per_tau: if spec.norm == Norm::TerminalStopping {
            per_tau
        } else {
            Vec::new()
        },
        fitted_slope: fit.map(|f| f.slope),
        intercept: fit.map(|f| f.intercept),
        slope_ci: fit.and_then(|f| f.ci),
        theory_slope,
        dropped_smallest: fit.is_some_and(|f| f.dropped),
        degenerate_exact,
        band: spec.band,
        band_pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeComparison {
    pub reports: Vec<RateReport>,
}

impl SchemeComparison {
    /// Whether every pair of fitted slopes lies in each other's intervals.
    pub fn slopes_consistent(&self) -> bool {
        let fits: Vec<(f64, (f64, f64))> = self
            .reports
            .iter()
            .filter_map(|r| Some((r.fitted_slope?, r.slope_ci?)))
            .collect();
        fits.iter()
            .all(|(s, _)| fits.iter().all(|(_, (lo, hi))| s >= lo && s <= hi))
    }
}

/// Runs `spec` once per scheme on identical Brownian paths.
pub fn compare_schemes(spec: &ExperimentSpec, schemes: &[SchemeKind]) -> Result<SchemeComparison> {
    if schemes.is_empty() {
        return Err(invalid("need at least one scheme"));
    }
    let p = preset(&spec.problem)?;
    let reports = schemes
        .iter()
        .map(|&scheme| run_problem(&p, &ExperimentSpec { scheme, ..spec.clone() }))
        .collect::<Result<_>>()?;
    Ok(SchemeComparison { reports })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRow {
    pub n: usize,
    pub error: f64,
    pub error_refined: f64,
    pub std_error: f64,
    pub within_one_se: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityReport {
    pub ref_level: u32,
    pub refined_level: u32,
    pub rows: Vec<SensitivityRow>,
}

impl SensitivityReport {
    pub fn passes(&self) -> bool {
        self.rows.iter().all(|r| r.within_one_se)
    }
}

/// Re-runs `spec` with the reference at `2^{L + extra}` and compares the
/// estimates for every `n ≤ 2^{L−4}`.
pub fn reference_sensitivity(spec: &ExperimentSpec, extra_levels: u32) -> Result<SensitivityReport> {
    let p = preset(&spec.problem)?;
    let base = run_problem(&p, spec)?;
    let refined_spec = ExperimentSpec {
        ref_level: spec.ref_level + extra_levels,
        ..spec.clone()
    };
    let refined = run_problem(&p, &refined_spec)?;
    let limit = 1usize << spec.ref_level.saturating_sub(4);
    let rows = base
        .per_n
        .iter()
        .zip(&refined.per_n)
        .filter(|(a, _)| a.n <= limit)
        .map(|(a, b)| SensitivityRow {
            n: a.n,
            error: a.error,
            error_refined: b.error,
            std_error: a.std_error,
            within_one_se: (a.error - b.error).abs() < a.std_error.max(EXACT_THRESHOLD),
        })
        .collect();
    Ok(SensitivityReport {
        ref_level: spec.ref_level,
        refined_level: refined_spec.ref_level,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(problem: &str, norm: Norm) -> ExperimentSpec {
        ExperimentSpec {
            n_list: vec![4, 8, 16, 32],
            ref_level: 8,
            paths: 600,
            master_seed: 7,
            ..ExperimentSpec::new(problem, norm)
        }
    }

    #[test]
    fn theory_table() {
        assert_eq!(theory(Norm::Sup, 1, 0.5).0, Some(-0.5));
        assert_eq!(theory(Norm::Sup, 1, 0.25).0, Some(-0.125));
        assert_eq!(theory(Norm::TerminalStopping, 1, 0.25).0, Some(-0.25));
        assert_eq!(theory(Norm::SupP, 1, 0.1).0, Some(-0.1));
        assert_eq!(theory(Norm::SupP, 2, 0.5).0, Some(-0.5));
        assert_eq!(theory(Norm::Sup, 1, 0.0), (None, Some(0.5)));
        assert_eq!(theory(Norm::TerminalStopping, 1, 0.0), (None, Some(1.0)));
        assert_eq!(theory(Norm::Sup, 2, 0.3), (None, None));
    }

    #[test]
    fn brownian_is_flagged_exact() {
        let r = run(&small("brownian", Norm::Sup)).unwrap();
        assert!(r.degenerate_exact);
        assert!(r.fitted_slope.is_none());
    }

    #[test]
    fn validation_errors() {
        let p = preset("sign_drift").unwrap();
        let mut s = small("sign_drift", Norm::Sup);
        s.n_list = vec![4, 8];
        assert!(s.validate(&p).is_err());
        s.n_list = vec![4, 8, 100];
        assert!(s.validate(&p).is_err());
        s.n_list = vec![4, 8, 256];
        assert!(s.validate(&p).is_err());
        s.n_list = vec![4, 8, 16];
        s.budget = 1e3;
        assert!(matches!(s.validate(&p), Err(Error::Resource(_))));
        assert!(run(&small("nonsense", Norm::Sup)).is_err());
    }

    #[test]
    fn sign_drift_errors_decrease() {
        let r = run(&small("sign_drift", Norm::Sup)).unwrap();
        for w in r.per_n.windows(2) {
            assert!(w[1].error <= w[0].error + 3.0 * w[0].std_error.max(w[1].std_error));
        }
        assert!(r.fitted_slope.unwrap() < 0.0);
        assert!(r.per_n.iter().all(|row| row.std_error > 0.0));
    }

    #[test]
    fn terminal_stopping_takes_family_max() {
        let mut s = small("sign_drift", Norm::TerminalStopping);
        s.taus = vec![
            StoppingTimeSpec::Horizon,
            StoppingTimeSpec::Deterministic(0.5),
            StoppingTimeSpec::FirstExit(0.5),
        ];
        let r = run(&s).unwrap();
        assert_eq!(r.per_tau.len(), 3);
        for (j, row) in r.per_n.iter().enumerate() {
            let max = r.per_tau.iter().map(|(_, rs)| rs[j].error).fold(0.0, f64::max);
            assert_eq!(row.error, max);
        }
        assert!(r.error_label.starts_with("stopping-time family max"));
    }

    #[test]
    fn results_do_not_depend_on_worker_count() {
        let s = small("holder_diffusion(0.25)", Norm::SupP);
        let a = parallel::with_workers(1, || run(&s).unwrap());
        let b = parallel::with_workers(4, || run(&s).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn halving_paths_inflates_standard_errors() {
        let mut s = small("sign_drift", Norm::Sup);
        s.paths = 2000;
        let full = run(&s).unwrap();
        s.paths = 1000;
        let half = run(&s).unwrap();
        for (a, b) in full.per_n.iter().zip(&half.per_n) {
            let ratio = b.std_error / a.std_error;
            assert!((1.1..1.8).contains(&ratio), "{ratio}");
        }
    }

    #[test]
    fn schemes_agree_for_time_homogeneous_problem() {
        let c = compare_schemes(&small("sign_drift", Norm::Sup), &SchemeKind::ALL).unwrap();
        assert_eq!(c.reports[0].per_n, c.reports[1].per_n);
        assert_eq!(c.reports[1].per_n, c.reports[2].per_n);
        assert!(c.slopes_consistent());
    }

    #[test]
    fn rate_fit_recovers_power_law_and_drops_outlier() {
        let rows: Vec<RateRow> = [16usize, 32, 64, 128, 256]
            .iter()
            .map(|&n| RateRow {
                n,
                error: 2.0 * (n as f64).powf(-0.5),
                std_error: 0.01,
            })
            .collect();
        let fit = fit_rate(&rows).unwrap();
        assert!((fit.slope + 0.5).abs() < 1e-12);
        assert!(!fit.dropped);
        let mut bent = rows.clone();
        bent[0].error *= 3.0;
        for (k, r) in bent.iter_mut().enumerate().skip(1) {
            r.error *= 1.0 + 0.001 * (k as f64 - 2.5);
        }
        let fit = fit_rate(&bent).unwrap();
        assert!(fit.dropped);
        assert!((fit.slope + 0.5).abs() < 0.01);
    }

    #[test]
    fn log_model_reproduces_exact_log_rate() {
        let rows: Vec<RateRow> = [16usize, 64, 256]
            .iter()
            .map(|&n| RateRow {
                n,
                error: 0.7 / (n as f64).ln(),
                std_error: 0.01,
            })
            .collect();
        let f = fit_log_model(&rows, 1.0).unwrap();
        assert!((f.a - 0.7).abs() < 1e-12 && f.residual_rms < 1e-12);
    }

    #[test]
    fn alpha_zero_reports_log_model() {
        let r = run(&small("holder_diffusion(0)", Norm::Sup)).unwrap();
        assert_eq!(r.theory_slope, None);
        assert_eq!(r.log_model_fit.as_ref().unwrap().gamma, 0.5);
    }

    #[test]
    fn sensitivity_rows_cover_small_n() {
        let mut s = small("sign_drift", Norm::Sup);
        s.ref_level = 9;
        let r = reference_sensitivity(&s, 2).unwrap();
        assert_eq!(r.rows.iter().map(|x| x.n).collect::<Vec<_>>(), vec![4, 8, 16, 32]);
        for row in &r.rows {
            assert!((row.error_refined / row.error - 1.0).abs() < 0.05, "{row:?}");
        }
    }
}
