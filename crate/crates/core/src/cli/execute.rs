//! Dispatch of a validated [`RunConfig`] and artifact writing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::config::{RunConfig, Subcommand};
use crate::diagnostics::{
    calibrate_envelope, default_c_grid, density_check, discontinuity_integrals, komatsu_check, komatsu_grid,
    Calibration, DensityCheckReport, DensityOptions,
};
use crate::em_scheme::increment_moment;
use crate::error::{Error, Result};
use crate::mollifier::{base_preset, check_a_conditions, default_shifts, mollifier_convergence};
use crate::parallel::with_workers;
use crate::rate_harness::{compare_schemes, run_problem, RateReport};
use crate::sde_model::{preset, verify_assumptions, ViolationSummary};
use crate::yamada_watanabe::{check_properties, SampleGrid, YwFunction};

/// CSV schema version written into every header comment.
pub const CSV_VERSION: u32 = 1;
/// Tolerance on `|∫ψ − 1|` for the `yw` subcommand.
pub const PSI_INTEGRAL_TOL: f64 = 1e-8;
/// Required 𝒜(i) decay per doubling of `N` for the `mollify` subcommand.
pub const A1_MIN_DECAY: f64 = 1.8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Outcome {
    /// 0 success, 1 band or property violation.
    pub status: i32,
    pub files: Vec<PathBuf>,
}

/// Formats a float so that it parses back to the same value, switching to
/// exponent notation outside `[1e-4, 1e15)`.
pub fn fmt_f64(x: f64) -> String {
    let a = x.abs();
    if x == 0.0 || !x.is_finite() || (1e-4..1e15).contains(&a) {
        format!("{x}")
    } else {
        format!("{x:e}")
    }
}

fn fmt_point(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|&x| fmt_f64(x)).collect();
    format!("[{}]", parts.join(";"))
}

struct Table {
    kind: &'static str,
    file: &'static str,
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(kind: &'static str, file: &'static str, header: &[&str]) -> Self {
        Self {
            kind,
            file,
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = format!("# irregular-sde v{CSV_VERSION} {}\n", self.kind).into_bytes();
        let ser = |e: csv::Error| Error::Serialization(e.to_string());
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&self.header).map_err(ser)?;
        for row in &self.rows {
            w.write_record(row).map_err(ser)?;
        }
        w.flush().map_err(|e| Error::Serialization(e.to_string()))?;
        drop(w);
        Ok(out)
    }
}

struct Artifacts {
    dir: PathBuf,
    csv: bool,
    json: bool,
    files: Vec<PathBuf>,
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

impl Artifacts {
    fn write_bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| io_error(&path, e))?;
        self.files.push(path);
        Ok(())
    }

    fn table(&mut self, t: &Table) -> Result<()> {
        if self.csv {
            let bytes = t.to_bytes()?;
            self.write_bytes(t.file, &bytes)?;
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.json {
            let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Serialization(e.to_string()))?;
            text.push('\n');
            self.write_bytes(name, text.as_bytes())?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct Metadata<'a> {
    tool: &'static str,
    version: &'static str,
    subcommand: String,
    seed: u64,
    status: i32,
    wall_time_seconds: f64,
    /// Resolved configuration; feeding it back reproduces every output.
    config_toml: String,
    config: &'a RunConfig,
    files: Vec<String>,
}

/// Runs `cfg` on a pool of `workers` threads (0 = default). Outputs do not
/// depend on `workers`.
pub fn execute_with_workers(cfg: &RunConfig, workers: usize) -> Result<Outcome> {
    with_workers(workers, || execute(cfg))
}

/// Validates and runs `cfg`, writing its artifacts plus `metadata.json`.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(&cfg.output_dir).map_err(|e| io_error(&cfg.output_dir, e))?;
    let mut out = Artifacts {
        dir: cfg.output_dir.clone(),
        csv: cfg.format.csv(),
        json: cfg.format.json(),
        files: Vec::new(),
    };
    let ok = match cfg.subcommand {
        Subcommand::Rate => rate(cfg, &mut out)?,
        Subcommand::Schemes => schemes(cfg, &mut out)?,
        Subcommand::Density => density(cfg, &mut out)?,
        Subcommand::JumpIntegral => jump_integral(cfg, &mut out)?,
        Subcommand::Increments => increments(cfg, &mut out)?,
        Subcommand::Yw => yw(cfg, &mut out)?,
        Subcommand::Mollify => mollify(cfg, &mut out)?,
        Subcommand::Komatsu => komatsu(cfg, &mut out)?,
        Subcommand::Verify => verify(cfg, &mut out)?,
    };
    let status = if ok { 0 } else { 1 };
    let meta = Metadata {
        tool: "irregular-sde",
        version: env!("CARGO_PKG_VERSION"),
        subcommand: cfg.subcommand.to_string(),
        seed: cfg.seed,
        status,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        config_toml: cfg.to_toml()?,
        config: cfg,
        files: out
            .files
            .iter()
            .filter_map(|p| p.file_name().map(|f| f.to_string_lossy().into_owned()))
            .collect(),
    };
    let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::Serialization(e.to_string()))?;
    out.write_bytes("metadata.json", format!("{text}\n").as_bytes())?;
    Ok(Outcome {
        status,
        files: out.files,
    })
}

fn rate_rows(t: &mut Table, prefix: &[String], r: &RateReport) {
    for row in &r.per_n {
        let mut cells = prefix.to_vec();
        cells.extend([row.n.to_string(), fmt_f64(row.error), fmt_f64(row.std_error)]);
        t.push(cells);
    }
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

fn rate(cfg: &RunConfig, out: &mut Artifacts) -> Result<bool> {
    let p = preset(&cfg.problem)?;
    let report = run_problem(&p, &cfg.experiment_spec()?)?;
    let mut t = Table::new("rate-report", "rate_report.csv", &["n", "error", "stderr"]);
    rate_rows(&mut t, &[], &report);
    out.table(&t)?;
    if !report.per_tau.is_empty() {
        let mut t = Table::new("rate-per-tau", "rate_per_tau.csv", &["tau", "n", "error", "stderr"]);
        for (tau, rows) in &report.per_tau {
            for row in rows {
                t.push(vec![
                    tau.clone(),
                    row.n.to_string(),
                    fmt_f64(row.error),
                    fmt_f64(row.std_error),
                ]);
            }
        }
        out.table(&t)?;
    }
    let mut t = Table::new(
        "rate-fit",
        "rate_fit.csv",
        &[
            "fitted_slope",
            "ci_lo",
            "ci_hi",
            "theory_slope",
            "dropped_smallest",
            "band_pass",
        ],
    );
    t.push(vec![
        opt(report.fitted_slope),
        opt(report.slope_ci.map(|c| c.0)),
        opt(report.slope_ci.map(|c| c.1)),
        opt(report.theory_slope),
        report.dropped_smallest.to_string(),
        report.band_pass.map(|b| b.to_string()).unwrap_or_default(),
    ]);
    out.table(&t)?;
    out.json("rate_report.json", &report)?;
    Ok(report.band_pass != Some(false))
}

fn schemes(cfg: &RunConfig, out: &mut Artifacts) -> Result<bool> {
    let cmp = compare_schemes(&cfg.experiment_spec()?, &cfg.schemes.schemes)?;
    let mut t = Table::new(
        "scheme-comparison",
        "schemes.csv",
        &["scheme", "n", "error", "stderr"],
    );
    let mut fit = Table::new(
        "scheme-fit",
        "schemes_fit.csv",
        &["scheme", "fitted_slope", "ci_lo", "ci_hi"],
    );
    for r in &cmp.reports {
        rate_rows(&mut t, &[r.scheme.to_string()], r);
        fit.push(vec![
            r.scheme.to_string(),
            opt(r.fitted_slope),
            opt(r.slope_ci.map(|c| c.0)),
            opt(r.slope_ci.map(|c| c.1)),
        ]);
    }
    out.table(&t)?;
    out.table(&fit)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        slopes_consistent: bool,
        reports: &'a [RateReport],
    }
    out.json(
        "schemes.json",
        &Summary {
            slopes_consistent: cmp.slopes_consistent(),
            reports: &cmp.reports,
        },
    )?;
    Ok(cmp.reports.iter().all(|r| r.band_pass != Some(false)))
}

fn density(cfg: &RunConfig, out: &mut Artifacts) -> Result<bool> {
    let d = &cfg.density;
    let p = preset(&cfg.problem)?;
    let opts = DensityOptions {
        bins: d.bins,
        width_sd: d.width_sd,
        z: d.z,
    };
    let mut calibration: Option<Calibration> = None;
    let (big_c, small_c) = if d.calibrate {
        let seed = d.calibration_seed.unwrap_or(cfg.seed.wrapping_add(1));
        let cal = calibrate_envelope(&p, d.n, d.t_index, d.paths, seed, &default_c_grid(), &opts)?;
        let mut t = Table::new(
            "density-calibration",
            "density_calibration.csv",
            &["small_c", "min_big_c"],
        );
        for &(c, big) in &cal.candidates {
            t.push(vec![fmt_f64(c), fmt_f64(big)]);
        }
        out.table(&t)?;
        let pair = (cal.big_c, cal.small_c);
        calibration = Some(cal);
        pair
    } else {
        (d.big_c, d.small_c)
    };
    let report = density_check(&p, d.n, d.t_index, d.paths, cfg.seed, big_c, small_c, &opts)?;
    let dim = p.dim();
    let mut header: Vec<String> = Vec::new();
    for side in ["lo", "hi"] {
        header.extend((0..dim).map(|i| format!("{side}_{i}")));
    }
    header.extend(
        [
            "count",
            "density",
            "stderr",
            "upper_envelope",
            "lower_envelope",
            "upper_violation",
            "lower_violation",
        ]
        .map(String::from),
    );
    let mut t = Table::new("density-check", "density.csv", &[]);
    t.header = header;
    for b in &report.bins {
        let mut row: Vec<String> = b.lo.iter().chain(&b.hi).map(|&x| fmt_f64(x)).collect();
        row.extend([
            b.count.to_string(),
            fmt_f64(b.density),
            fmt_f64(b.std_error),
            fmt_f64(b.upper_envelope),
            fmt_f64(b.lower_envelope),
            b.upper_violation.to_string(),
            b.lower_violation.map(|v| v.to_string()).unwrap_or_default(),
        ]);
        t.push(row);
    }
    out.table(&t)?;
    #[derive(Serialize)]
    struct Summary<'a> {
        calibration: Option<Calibration>,
        report: &'a DensityCheckReport,
    }
    out.json(
        "density.json",
        &Summary {
            calibration,
            report: &report,
        },
    )?;
    Ok(report.violations() == 0)
}

fn jump_integral(cfg: &RunConfig, out: &mut Artifacts) -> Result<bool> {
    let s = &cfg.jump_integral;
    let p = preset(&cfg.problem)?;
    let est = discontinuity_integrals(&p, &s.n_list, s.q, s.paths, cfg.seed)?;
    let mut t = Table::new(
        "jump-integral",
        "jump_integral.csv",
        &["n", "q", "integral", "stderr", "sqrt_n_integral"],
    );
    #[derive(Serialize)]
    struct Row {
        n: usize,
        q: f64,
        integral: f64,
        std_error: f64,
        sqrt_n_integral: f64,
    }
    let rows: Vec<Row> = s
        .n_list
        .iter()
        .zip(&est)
        .map(|(&n, e)| Row {
            n,
            q: s.q,
            integral: e.value,
            std_error: e.std_error,
            sqrt_n_integral: (n as f64).sqrt() * e.value,
        })
        .collect();
    for r in &rows {
        t.push(vec![
            r.n.to_string(),
            fmt_f64(r.q),
            fmt_f64(r.integral),
            fmt_f64(r.std_error),
            fmt_f64(r.sqrt_n_integral),
        ]);
    }
    out.table(&t)?;
    out.json("jump_integral.json", &rows)?;
    Ok(true)
}

fn increments(cfg: &RunConfig, out: &mut Artifacts) -> Result<bool> {
    let s = &cfg.increments;
    let p = preset(&cfg.problem)?;
    let est = s
        .n_list
        .iter()
        .map(|&n| increment_moment(&p, n, s.q, s.paths, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut t = Table::new(
        "increment-moment",
        "increments.csv",
        &["n", "q", "value", "stderr", "argmax_time"],
    );
    for e in &est {
        t.push(vec![
            e.n.to_string(),
            fmt_f64(e.q),
            fmt_f64(e.value),
            fmt_f64(e.std_error),
            fmt_f64(e.argmax_time),
        ]);
    }
    out.table(&t)?;
    out.json("increments.json", &est)?;
    Ok(true)
}

fn yw(cfg: &RunConfig, out: &mut Artifacts) -> Result<bool> {
    let y = &cfg.yw;
    let f = YwFunction::build(y.delta, y.eps)?;
    let grid = SampleGrid::log_spaced(&f, y.points, y.lo, y.hi);
    let report = check_properties(&f, &grid);
    let integral = f.psi_integral(1e-12);
    let mut t = Table::new(
        "yw-properties",
        "yw_properties.csv",
        &["property", "evaluated", "violations", "max_violation", "min_slack"],
    );
    for c in &report.checks {
        t.push(vec![
            c.name.clone(),
            c.evaluated.to_string(),
            c.violations.to_string(),
            fmt_f64(c.max_violation),
            fmt_f64(c.min_slack),
        ]);
    }
    out.table(&t)?;
    let sample_grid = SampleGrid::log_spaced(&f, y.sample_points.max(1), y.lo, y.hi);
    let samples = f.samples(&sample_grid.scalars);
    let mut t = Table::new(
        "yw-samples",
        "yw_samples.csv",
        &["z", "psi", "phi", "phi_prime", "phi_double_prime"],
    );
    for s in &samples {
        t.push(
            [s.z, s.psi, s.phi, s.phi_prime, s.phi_double_prime]
                .iter()
                .map(|&v| fmt_f64(v))
                .collect(),
        );
    }
    out.table(&t)?;
    let integral_ok = (integral.value - 1.0).abs() <= PSI_INTEGRAL_TOL;
    #[derive(Serialize)]
    struct Summary<'a> {
        psi_integral: f64,
        psi_integral_error: f64,
        psi_integral_ok: bool,
        support: [f64; 2],
        report: &'a crate::yamada_watanabe::PropertyReport,
    }
    out.json(
        "yw_properties.json",
        &Summary {
            psi_integral: integral.value,
            psi_integral_error: integral.error,
            psi_integral_ok: integral_ok,
            support: [f.support_start(), f.eps()],
            report: &report,
        },
    )?;
    Ok(report.total_violations() == 0 && integral_ok)
}

fn mollify(cfg: &RunConfig, out: &mut Artifacts) -> Result<bool> {
    let m = &cfg.mollify;
    let seq = base_preset(&m.base, m.dim)?;
    let shifts = m.shifts.clone().unwrap_or_else(|| default_shifts(m.dim));
    let report = check_a_conditions(&seq, m.l, &m.n_list, &shifts, &m.u_list)?;
    let mut t = Table::new("mollify-a1", "mollify_a1.csv", &["n", "integral", "decay_per_doubling"]);
    for (i, e) in report.a1.iter().enumerate() {
        let decay = if i == 0 {
            None
        } else {
            report.a1_decay_per_doubling[i - 1]
        };
        t.push(vec![e.n.to_string(), fmt_f64(e.value), opt(decay)]);
    }
    out.table(&t)?;
    let mut t = Table::new(
        "mollify-a3",
        "mollify_a3.csv",
        &["n", "shift", "u", "integral", "ratio"],
    );
    for e in &report.a3 {
        t.push(vec![
            e.n.to_string(),
            fmt_point(&e.shift),
            fmt_f64(e.u),
            fmt_f64(e.integral),
            fmt_f64(e.ratio),
        ]);
    }
    out.table(&t)?;
    let mut convergence = None;
    if m.convergence {
        let p = preset(&cfg.problem)?;
        let conv = mollifier_convergence(
            &seq,
            &p,
            m.convergence_n,
            m.kappa,
            &m.n_list,
            m.convergence_paths,
            cfg.seed,
        )?;
        let mut t = Table::new(
            "mollify-convergence",
            "mollify_convergence.csv",
            &["n_mollifier", "estimate", "stderr"],
        );
        for e in &conv.entries {
            t.push(vec![
                e.n_mollifier.to_string(),
                fmt_f64(e.estimate),
                fmt_f64(e.std_error),
            ]);
        }
        out.table(&t)?;
        convergence = Some(conv);
    }
    let decay_ok = report
        .a1_decay_per_doubling
        .iter()
        .all(|d| d.is_none_or(|d| d >= A1_MIN_DECAY));
    let sup_ok = report.a2_sup <= report.a2_bound * (1.0 + 1e-9);
    #[derive(Serialize)]
    struct Summary<'a> {
        a1_decay_ok: bool,
        a2_ok: bool,
        conditions: &'a crate::mollifier::ConditionReport,
        convergence: Option<crate::mollifier::ConvergenceReport>,
    }
    out.json(
        "mollify.json",
        &Summary {
            a1_decay_ok: decay_ok,
            a2_ok: sup_ok,
            conditions: &report,
            convergence,
        },
    )?;
    Ok(decay_ok && sup_ok)
}

fn komatsu(cfg: &RunConfig, out: &mut Artifacts) -> Result<bool> {
    let k = &cfg.komatsu;
    let report = komatsu_check(&komatsu_grid(k.points, k.hi))?;
    let mut t = Table::new("komatsu", "komatsu.csv", &["x", "tail", "bound", "slack"]);
    for s in &report.samples {
        t.push([s.x, s.tail, s.bound, s.slack].iter().map(|&v| fmt_f64(v)).collect());
    }
    out.table(&t)?;
    out.json("komatsu.json", &report)?;
    Ok(report.violations == 0)
}

fn verify(cfg: &RunConfig, out: &mut Artifacts) -> Result<bool> {
    let p = preset(&cfg.problem)?;
    let report = verify_assumptions(&p, cfg.verify.samples, cfg.seed)?;
    let mut t = Table::new(
        "assumptions",
        "verify.csv",
        &["check", "checked", "violations", "worst"],
    );
    let rows: [(&str, &ViolationSummary); 4] = [
        ("ellipticity", &report.ellipticity),
        ("holder", &report.holder),
        ("one_sided_lipschitz", &report.one_sided_lipschitz),
        ("drift_bound", &report.drift_bound),
    ];
    for (name, s) in rows {
        t.push(vec![
            name.to_string(),
            s.checked.to_string(),
            s.violations.to_string(),
            fmt_f64(s.worst),
        ]);
    }
    out.table(&t)?;
    out.json("verify.json", &report)?;
    Ok(report.total_violations() == 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cli::config::parse_config;

    #[test]
    fn floats_round_trip() {
        for x in [0.0, 1.0, -0.35, 1e-12, 2.5e20, 0.1 + 0.2, f64::MIN_POSITIVE] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
        assert_eq!(fmt_f64(1e-5), "1e-5");
        assert_eq!(fmt_f64(0.25), "0.25");
    }

    #[test]
    fn komatsu_writes_versioned_csv_and_metadata() {
        let dir = tempfile::tempdir().unwrap();
        let doc = format!(
            "subcommand = \"komatsu\"\noutput_dir = {:?}\n[komatsu]\npoints = 50\n",
            dir.path().display().to_string()
        );
        let cfg = parse_config(&doc).unwrap();
        let outcome = execute(&cfg).unwrap();
        assert_eq!(outcome.status, 0);
        let csv = fs::read_to_string(dir.path().join("komatsu.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("# irregular-sde v1 komatsu"));
        assert_eq!(lines.next(), Some("x,tail,bound,slack"));
        assert_eq!(lines.count(), 50);
        let meta: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
        assert!(meta["wall_time_seconds"].is_number());
        let replay = parse_config(meta["config_toml"].as_str().unwrap()).unwrap();
        assert_eq!(replay, cfg);
    }

    #[test]
    fn unwritable_output_dir_is_a_path_error() {
        let dir = tempfile::tempdir().unwrap();
        let blocker = dir.path().join("file");
        fs::write(&blocker, b"x").unwrap();
        let mut cfg = crate::cli::config::RunConfig::defaults(Subcommand::Komatsu);
        cfg.output_dir = blocker.join("sub");
        assert!(matches!(execute(&cfg), Err(Error::Io { .. })));
    }

    #[test]
    fn format_selects_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = crate::cli::config::RunConfig::defaults(Subcommand::Verify);
        cfg.output_dir = dir.path().to_path_buf();
        cfg.verify.samples = 100;
        cfg.format = crate::cli::config::OutputFormat::Json;
        let outcome = execute(&cfg).unwrap();
        let names: Vec<String> = outcome
            .files
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, vec!["verify.json", "metadata.json"]);
    }
}
