//! Acceptance suite. Runs with a custom harness so that every criterion
//! prints exactly one PASS/FAIL line; pass criterion numbers as arguments to
//! run a subset, e.g. `cargo test --test acceptance -- 6 9`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use irregular_sde::diagnostics::{
    calibrate_envelope, default_c_grid, density_check, discontinuity_integrals, komatsu_check, komatsu_grid,
    DensityOptions,
};
use irregular_sde::em_scheme::{increment_moment, StoppingTimeSpec};
use irregular_sde::mollifier::{base_preset, check_a_conditions, default_shifts, DEFAULT_U};
use irregular_sde::rate_harness::{run, ExperimentSpec, Norm};
use irregular_sde::sde_model::preset;
use irregular_sde::yamada_watanabe::{check_properties, SampleGrid, YwFunction};
use irregular_sde::Result;

const SEED: u64 = 42;
const RATE_BAND: (f64, f64) = (-0.65, -0.35);

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Result<Verdict> {
    Ok(Verdict { pass, detail })
}

fn fmt_slope(r: &irregular_sde::rate_harness::RateReport) -> String {
    let errors: Vec<String> = r.per_n.iter().map(|row| format!("{:.4e}", row.error)).collect();
    match (r.fitted_slope, r.slope_ci) {
        (Some(s), Some((lo, hi))) => format!(
            "slope {s:.4} ci [{lo:.4}, {hi:.4}] dropped_smallest={} errors [{}]",
            r.dropped_smallest,
            errors.join(", ")
        ),
        _ => format!("no fit, errors [{}]", errors.join(", ")),
    }
}

fn rate_band(problem: &str, norm: Norm, p_exponent: f64) -> Result<Verdict> {
    let spec = ExperimentSpec {
        p_exponent,
        paths: 10_000,
        master_seed: SEED,
        band: Some(RATE_BAND),
        ..ExperimentSpec::new(problem, norm)
    };
    let r = run(&spec)?;
    verdict(
        r.band_pass == Some(true),
        format!("{}, band [{}, {}]", fmt_slope(&r), RATE_BAND.0, RATE_BAND.1),
    )
}

fn c1_sign_drift_sup() -> Result<Verdict> {
    rate_band("sign_drift", Norm::Sup, 1.0)
}

fn c2_monotone_2d_sup_p() -> Result<Verdict> {
    rate_band("monotone_2d", Norm::SupP, 2.0)
}

fn c3_holder_terminal() -> Result<Verdict> {
    let spec = ExperimentSpec {
        taus: vec![StoppingTimeSpec::Horizon],
        master_seed: SEED,
        ..ExperimentSpec::new("holder_diffusion(0.25)", Norm::TerminalStopping)
    };
    let r = run(&spec)?;
    let pass = r.fitted_slope.is_some_and(|s| s <= -0.15);
    verdict(pass, format!("{}, need slope <= -0.15", fmt_slope(&r)))
}

fn c4_discontinuity_integral() -> Result<Verdict> {
    let p = preset("sign_drift")?;
    let n_list: Vec<usize> = (4..=10).map(|k| 1usize << k).collect();
    let est = discontinuity_integrals(&p, &n_list, 1.0, 100_000, SEED)?;
    let scaled: Vec<f64> = n_list
        .iter()
        .zip(&est)
        .map(|(&n, e)| (n as f64).sqrt() * e.value)
        .collect();
    let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ratio = est[2].value / est[4].value;
    let pass = hi / lo < 2.0 && (1.6..=2.5).contains(&ratio);
    let shown: Vec<String> = scaled.iter().map(|v| format!("{v:.4}")).collect();
    verdict(
        pass,
        format!(
            "sqrt(n) I = [{}], max/min {:.4}, I(64)/I(256) {ratio:.4}",
            shown.join(", "),
            hi / lo
        ),
    )
}

fn c5_increment_moment() -> Result<Verdict> {
    let p = preset("brownian")?;
    let mut pass = true;
    let mut parts = Vec::new();
    for n in [16, 64, 256] {
        let m = increment_moment(&p, n, 2.0, 10_000, SEED)?;
        let exact = p.horizon() / (2.0 * n as f64);
        let z = (m.value - exact) / m.std_error;
        pass &= z.abs() <= 3.0;
        parts.push(format!("n={n}: {:.6e} vs {exact:.6e} ({z:+.2} se)", m.value));
    }
    verdict(pass, parts.join("; "))
}

fn c6_yamada_watanabe() -> Result<Verdict> {
    let n = 1usize << 10;
    let params = [
        (2.0, 0.25),
        (2.0, 2f64.powi(-5)),
        ((n as f64).powf(1.0 / 3.0), 1.0 / (n as f64).ln()),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (delta, eps) in params {
        let f = YwFunction::build(delta, eps)?;
        let report = check_properties(&f, &SampleGrid::standard(&f));
        let integral = f.psi_integral(1e-12).value;
        let ok = report.total_violations() == 0 && (integral - 1.0).abs() <= 1e-8;
        pass &= ok;
        parts.push(format!(
            "({delta:.4}, {eps:.5}): {} violations, |int psi - 1| = {:.1e}",
            report.total_violations(),
            (integral - 1.0).abs()
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c7_class_a() -> Result<Verdict> {
    let n_list = [4, 8, 16, 32, 64];
    let mut pass = true;
    let mut parts = Vec::new();
    for base in ["step", "monotone_ramp", "lipschitz_tent"] {
        let seq = base_preset(base, 1)?;
        let r = check_a_conditions(&seq, 2.0, &n_list, &default_shifts(1), &DEFAULT_U)?;
        let min_decay = r
            .a1_decay_per_doubling
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let decay_ok = r.a1_decay_per_doubling.iter().all(|d| d.is_some_and(|d| d >= 1.8));
        let sup_ok = r.a2_sup <= r.a2_bound * (1.0 + 1e-9);
        // Bounded: below 5 and no longer growing by more than 20% per doubling.
        let by_n: Vec<f64> = r.a3_constant_by_n.iter().map(|&(_, k)| k).collect();
        let last_growth = by_n[by_n.len() - 1] / by_n[by_n.len() - 2];
        let k_ok = r.a3_constant <= 5.0 && last_growth <= 1.2;
        pass &= decay_ok && sup_ok && k_ok;
        parts.push(format!(
            "{base}: min decay {min_decay:.3}, sup {:.6} <= {}, K {:.4} (last growth {last_growth:.3})",
            r.a2_sup, r.a2_bound, r.a3_constant
        ));
    }
    verdict(pass, parts.join("; "))
}

fn c8_gaussian_bound() -> Result<Verdict> {
    let opts = DensityOptions::default();
    let paths = 100_000;
    let (n, t_index) = (64, 64);
    let bm = preset("brownian")?;
    let control = density_check(&bm, n, t_index, paths, SEED, 1.0, 1.0, &opts)?;
    let sd = preset("sign_drift")?;
    let cal = calibrate_envelope(&sd, n, t_index, paths, SEED, &default_c_grid(), &opts)?;
    let fresh = SEED + 1;
    let check = density_check(&sd, n, t_index, paths, fresh, cal.big_c, cal.small_c, &opts)?;
    let pass = control.violations() == 0 && check.violations() == 0 && check.lower_bins_checked > 0;
    verdict(
        pass,
        format!(
            "brownian C=c=1: {} violations ({} lower bins); sign_drift C={} c={} on seed {fresh}: {} violations ({} lower bins)",
            control.violations(),
            control.lower_bins_checked,
            cal.big_c,
            cal.small_c,
            check.violations(),
            check.lower_bins_checked
        ),
    )
}

fn c9_komatsu() -> Result<Verdict> {
    let report = komatsu_check(&komatsu_grid(10_000, 20.0))?;
    let at_one = komatsu_check(&[1.0])?.samples[0].slack;
    let expected = 0.158655 - 0.14953;
    let pass = report.violations == 0 && report.evaluated >= 10_000 && (at_one - expected).abs() <= 1e-4;
    verdict(
        pass,
        format!(
            "{} points, {} violations, slack(1) = {at_one:.6} vs {expected:.6}",
            report.evaluated, report.violations
        ),
    )
}

/// Small configurations exercising every subcommand on several blocks.
const DETERMINISM_CONFIGS: &[(&str, &str)] = &[
    ("rate", "[rate]\nn_list = [4, 8, 16]\nref_level = 8\npaths = 600\n"),
    ("schemes", "[rate]\nn_list = [4, 8, 16]\nref_level = 8\npaths = 600\nnorm = \"terminal_stopping\"\ntaus = [\"horizon\", \"deterministic:0.5\"]\n"),
    ("density", "[density]\nn = 16\nt_index = 16\npaths = 10000\ncalibrate = true\n"),
    ("jump-integral", "[jump-integral]\nn_list = [4, 8, 16]\npaths = 600\n"),
    ("increments", "[increments]\nn_list = [4, 16]\npaths = 600\n"),
    ("yw", "[yw]\npoints = 500\n"),
    ("mollify", "[mollify]\nn_list = [2, 4]\nu_list = [0.1, 1.0]\nconvergence = true\nconvergence_n = 8\nconvergence_paths = 600\n"),
    ("komatsu", "[komatsu]\npoints = 200\n"),
    ("verify", "[verify]\nsamples = 600\n"),
];

fn csv_outputs(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("output dir") {
        let path = entry.expect("dir entry").path();
        if path.extension().is_some_and(|e| e == "csv") {
            let name = path.file_name().unwrap().to_string_lossy().into_owned();
            out.insert(name, fs::read(&path).expect("csv"));
        }
    }
    out
}

fn c10_determinism() -> Result<Verdict> {
    let tmp = tempfile::tempdir().map_err(|source| irregular_sde::Error::Io {
        path: "tempdir".into(),
        source,
    })?;
    let exe = env!("CARGO_BIN_EXE_irregular-sde");
    let mut failures = Vec::new();
    let mut files = 0;
    for (sub, body) in DETERMINISM_CONFIGS {
        let cfg_path = tmp.path().join(format!("{sub}.toml"));
        fs::write(
            &cfg_path,
            format!("subcommand = \"{sub}\"\nseed = {SEED}\nformat = \"csv\"\n{body}"),
        )
        .unwrap();
        let mut runs = Vec::new();
        for (i, workers) in [1, 4, 1, 3].into_iter().enumerate() {
            let out = tmp.path().join(format!("{sub}-{i}"));
            let status = Command::new(exe)
                .arg("--config")
                .arg(&cfg_path)
                .arg("--workers")
                .arg(workers.to_string())
                .arg("--out")
                .arg(&out)
                .output()
                .expect("spawn binary");
            let code = status.status.code().unwrap_or(-1);
            if code != 0 && code != 1 {
                failures.push(format!(
                    "{sub}: exit {code}: {}",
                    String::from_utf8_lossy(&status.stderr).trim()
                ));
            }
            runs.push(csv_outputs(&out));
        }
        if runs[0].is_empty() {
            failures.push(format!("{sub}: no csv written"));
        }
        if runs.iter().any(|r| r != &runs[0]) {
            failures.push(format!("{sub}: csv differs across runs"));
        }
        files += runs[0].len();
    }
    let detail = if failures.is_empty() {
        format!(
            "{} subcommands, {files} csv files identical over 4 runs with 1, 4, 1, 3 workers",
            DETERMINISM_CONFIGS.len()
        )
    } else {
        failures.join("; ")
    };
    verdict(failures.is_empty(), detail)
}

type Criterion = (u32, &'static str, fn() -> Result<Verdict>);

const CRITERIA: &[Criterion] = &[
    (1, "rate sign_drift sup", c1_sign_drift_sup),
    (2, "rate monotone_2d sup_p p=2", c2_monotone_2d_sup_p),
    (3, "rate holder_diffusion(0.25) terminal", c3_holder_terminal),
    (4, "discontinuity integral sign_drift", c4_discontinuity_integral),
    (5, "increment moment brownian q=2", c5_increment_moment),
    (6, "yamada-watanabe properties", c6_yamada_watanabe),
    (7, "class A conditions", c7_class_a),
    (8, "gaussian density envelopes", c8_gaussian_bound),
    (9, "komatsu inequality", c9_komatsu),
    (10, "cli determinism", c10_determinism),
];

fn main() {
    let selected: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    if std::env::args().any(|a| a == "--list") {
        for (id, name, _) in CRITERIA {
            println!("criterion_{id}: test  ({name})");
        }
        return;
    }
    let mut failed = 0;
    let mut ran = 0;
    for &(id, name, check) in CRITERIA {
        if !selected.is_empty() && !selected.contains(&id) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let (pass, detail) = match check() {
            Ok(v) => (v.pass, v.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {id:>2} [{name}] ({:.1}s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
