//! Run configuration: one TOML document with top-level run keys and one
//! table per subcommand. Every table is optional and falls back to the
//! defaults listed on its struct.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::brownian::level_of;
use crate::em_scheme::{SchemeKind, StoppingTimeSpec};
use crate::error::{Error, Result};
use crate::mollifier::{base_preset, DEFAULT_U};
use crate::rate_harness::{ExperimentSpec, Norm, DEFAULT_BUDGET};
use crate::sde_model::preset;
use crate::yamada_watanabe::YwFunction;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Rate,
    Schemes,
    Density,
    JumpIntegral,
    Increments,
    Yw,
    Mollify,
    Komatsu,
    Verify,
}

impl Subcommand {
    pub const ALL: [Subcommand; 9] = [
        Subcommand::Rate,
        Subcommand::Schemes,
        Subcommand::Density,
        Subcommand::JumpIntegral,
        Subcommand::Increments,
        Subcommand::Yw,
        Subcommand::Mollify,
        Subcommand::Komatsu,
        Subcommand::Verify,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Subcommand::Rate => "rate",
            Subcommand::Schemes => "schemes",
            Subcommand::Density => "density",
            Subcommand::JumpIntegral => "jump-integral",
            Subcommand::Increments => "increments",
            Subcommand::Yw => "yw",
            Subcommand::Mollify => "mollify",
            Subcommand::Komatsu => "komatsu",
            Subcommand::Verify => "verify",
        }
    }
}

impl fmt::Display for Subcommand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subcommand {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Subcommand::ALL.into_iter().find(|c| c.as_str() == s).ok_or_else(|| {
            let names: Vec<&str> = Subcommand::ALL.iter().map(|c| c.as_str()).collect();
            Error::Config(format!("unknown subcommand `{s}`{}", suggestion(s, &names)))
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
    #[default]
    Both,
}

impl OutputFormat {
    pub fn csv(self) -> bool {
        matches!(self, OutputFormat::Csv | OutputFormat::Both)
    }

    pub fn json(self) -> bool {
        matches!(self, OutputFormat::Json | OutputFormat::Both)
    }
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            "both" => Ok(OutputFormat::Both),
            other => Err(Error::Config(format!("unknown format `{other}` (csv, json, both)"))),
        }
    }
}

fn powers(lo: u32, hi: u32) -> Vec<usize> {
    (lo..=hi).map(|k| 1usize << k).collect()
}

/// `[rate]`, also used by `[schemes]` for the shared experiment parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RateSection {
    /// Default `16, 32, …, 1024`.
    pub n_list: Vec<usize>,
    /// Default 14.
    pub ref_level: u32,
    /// Default 10 000.
    pub paths: u64,
    /// Default 1.
    pub p: f64,
    /// Default `sup`.
    pub norm: Norm,
    /// Default `standard`.
    pub scheme: SchemeKind,
    /// Stopping times for `terminal_stopping`; default `["horizon"]`.
    pub taus: Vec<String>,
    /// Default `1e11`.
    pub budget: f64,
    /// Optional `[lo, hi]` slope band; a miss gives exit status 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub band: Option<[f64; 2]>,
}

impl Default for RateSection {
    fn default() -> Self {
        Self {
            n_list: powers(4, 10),
            ref_level: 14,
            paths: 10_000,
            p: 1.0,
            norm: Norm::Sup,
            scheme: SchemeKind::Standard,
            taus: vec!["horizon".to_string()],
            budget: DEFAULT_BUDGET,
            band: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchemesSection {
    /// Default all three schemes.
    pub schemes: Vec<SchemeKind>,
}

impl Default for SchemesSection {
    fn default() -> Self {
        Self {
            schemes: SchemeKind::ALL.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensitySection {
    /// Default 64.
    pub n: usize,
    /// Grid index of the checked time; default 64 (the horizon).
    pub t_index: usize,
    /// Default 100 000.
    pub paths: u64,
    /// Default 1.
    pub big_c: f64,
    /// Default 1.
    pub small_c: f64,
    /// Fit `(C, c)` on `calibration_seed` first and check with the result.
    pub calibrate: bool,
    /// Default: the run seed plus one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub calibration_seed: Option<u64>,
    /// Default 40.
    pub bins: usize,
    /// Default 4.
    pub width_sd: f64,
    /// Default 3.
    pub z: f64,
}

impl Default for DensitySection {
    fn default() -> Self {
        Self {
            n: 64,
            t_index: 64,
            paths: 100_000,
            big_c: 1.0,
            small_c: 1.0,
            calibrate: false,
            calibration_seed: None,
            bins: 40,
            width_sd: 4.0,
            z: 3.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JumpIntegralSection {
    /// Default `16, 32, …, 1024`.
    pub n_list: Vec<usize>,
    /// Default 1.
    pub q: f64,
    /// Default 100 000.
    pub paths: u64,
}

impl Default for JumpIntegralSection {
    fn default() -> Self {
        Self {
            n_list: powers(4, 10),
            q: 1.0,
            paths: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IncrementsSection {
    /// Default `16, 64, 256`.
    pub n_list: Vec<usize>,
    /// Default 2.
    pub q: f64,
    /// Default 10 000.
    pub paths: u64,
}

impl Default for IncrementsSection {
    fn default() -> Self {
        Self {
            n_list: vec![16, 64, 256],
            q: 2.0,
            paths: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YwSection {
    /// Default 2.
    pub delta: f64,
    /// Default 0.25.
    pub eps: f64,
    /// Grid size; default 10 000.
    pub points: usize,
    /// Default `1e-6`.
    pub lo: f64,
    /// Default 10.
    pub hi: f64,
    /// Rows in the sample table; default 200.
    pub sample_points: usize,
}

impl Default for YwSection {
    fn default() -> Self {
        Self {
            delta: 2.0,
            eps: 0.25,
            points: 10_000,
            lo: 1e-6,
            hi: 10.0,
            sample_points: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MollifySection {
    /// Default `step`.
    pub base: String,
    /// Default 1.
    pub dim: usize,
    /// Radius of the 𝒜(i) region; default 2.
    pub l: f64,
    /// Default `4, 8, 16, 32, 64`.
    pub n_list: Vec<u32>,
    /// Default `0.01, 0.1, 1, 10, 100`.
    pub u_list: Vec<f64>,
    /// Default `{0, ±1, ±5}^dim`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub shifts: Option<Vec<Vec<f64>>>,
    /// Also estimate the pathwise convergence along `problem`.
    pub convergence: bool,
    /// Default 16.
    pub convergence_n: usize,
    /// Default 0.1.
    pub kappa: f64,
    /// Default 10 000.
    pub convergence_paths: u64,
}

impl Default for MollifySection {
    fn default() -> Self {
        Self {
            base: "step".to_string(),
            dim: 1,
            l: 2.0,
            n_list: vec![4, 8, 16, 32, 64],
            u_list: DEFAULT_U.to_vec(),
            shifts: None,
            convergence: false,
            convergence_n: 16,
            kappa: 0.1,
            convergence_paths: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KomatsuSection {
    /// Default 10 000.
    pub points: usize,
    /// Default 20.
    pub hi: f64,
}

impl Default for KomatsuSection {
    fn default() -> Self {
        Self {
            points: 10_000,
            hi: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    /// Default 10 000.
    pub samples: u64,
}

impl Default for VerifySection {
    fn default() -> Self {
        Self { samples: 10_000 }
    }
}

fn default_problem() -> String {
    "sign_drift".to_string()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// TOML integers are signed, so seeds above `i64::MAX` are written as
/// decimal strings. Both forms are accepted on input.
mod seed_repr {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(seed: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*seed) {
            Ok(v) => s.serialize_i64(v),
            Err(_) => s.serialize_str(&seed.to_string()),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(i64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        use serde::de::Error;
        match Repr::deserialize(d)? {
            Repr::Int(v) => u64::try_from(v).map_err(|_| D::Error::custom("seed must be nonnegative")),
            Repr::Text(s) => s
                .trim()
                .parse()
                .map_err(|_| D::Error::custom(format!("seed `{s}` is not a u64"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub subcommand: Subcommand,
    /// Preset name; families take call syntax, e.g. `holder_diffusion(0.25)`.
    #[serde(default = "default_problem")]
    pub problem: String,
    #[serde(default, with = "seed_repr")]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub rate: RateSection,
    #[serde(default)]
    pub schemes: SchemesSection,
    #[serde(default)]
    pub density: DensitySection,
    #[serde(default, rename = "jump-integral")]
    pub jump_integral: JumpIntegralSection,
    #[serde(default)]
    pub increments: IncrementsSection,
    #[serde(default)]
    pub yw: YwSection,
    #[serde(default)]
    pub mollify: MollifySection,
    #[serde(default)]
    pub komatsu: KomatsuSection,
    #[serde(default)]
    pub verify: VerifySection,
}

const TOP_KEYS: &[&str] = &["subcommand", "problem", "seed", "output_dir", "format"];

fn section_keys(section: &str) -> Option<&'static [&'static str]> {
    Some(match section {
        "rate" => &[
            "n_list",
            "ref_level",
            "paths",
            "p",
            "norm",
            "scheme",
            "taus",
            "budget",
            "band",
        ],
        "schemes" => &["schemes"],
        "density" => &[
            "n",
            "t_index",
            "paths",
            "big_c",
            "small_c",
            "calibrate",
            "calibration_seed",
            "bins",
            "width_sd",
            "z",
        ],
        "jump-integral" => &["n_list", "q", "paths"],
        "increments" => &["n_list", "q", "paths"],
        "yw" => &["delta", "eps", "points", "lo", "hi", "sample_points"],
        "mollify" => &[
            "base",
            "dim",
            "l",
            "n_list",
            "u_list",
            "shifts",
            "convergence",
            "convergence_n",
            "kappa",
            "convergence_paths",
        ],
        "komatsu" => &["points", "hi"],
        "verify" => &["samples"],
        _ => return None,
    })
}

fn suggestion(key: &str, valid: &[&str]) -> String {
    valid
        .iter()
        .map(|v| (strsim::levenshtein(key, v), *v))
        .min()
        .map(|(_, v)| format!("; did you mean `{v}`?"))
        .unwrap_or_default()
}

fn unknown_key(key: &str, valid: &[&str]) -> Error {
    Error::Config(format!("unknown key `{key}`{}", suggestion(key, valid)))
}

fn check_keys(table: &toml::Table) -> Result<()> {
    let mut top: Vec<&str> = TOP_KEYS.to_vec();
    top.extend(Subcommand::ALL.iter().map(|c| c.as_str()));
    for (key, value) in table {
        if TOP_KEYS.contains(&key.as_str()) {
            continue;
        }
        let Some(valid) = section_keys(key) else {
            return Err(unknown_key(key, &top));
        };
        let inner = value
            .as_table()
            .ok_or_else(|| Error::Config(format!("`{key}` must be a table")))?;
        for inner_key in inner.keys() {
            if !valid.contains(&inner_key.as_str()) {
                return Err(unknown_key(&format!("{key}.{inner_key}"), valid));
            }
        }
    }
    Ok(())
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Config(e.message().to_string()))?;
    from_table(table)
}

/// Like [`parse_config`] on an already parsed table.
pub fn from_table(table: toml::Table) -> Result<RunConfig> {
    check_keys(&table)?;
    if !table.contains_key("subcommand") {
        return Err(Error::Config("missing key `subcommand`".to_string()));
    }
    if let Some(sub) = table.get("subcommand").and_then(|v| v.as_str()) {
        sub.parse::<Subcommand>()?;
    }
    let cfg: RunConfig = RunConfig::deserialize(table).map_err(|e| Error::Config(e.message().to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Defaults for `subcommand` with everything else unset.
    pub fn defaults(subcommand: Subcommand) -> Self {
        Self {
            subcommand,
            problem: default_problem(),
            seed: 0,
            output_dir: default_output_dir(),
            format: OutputFormat::default(),
            rate: RateSection::default(),
            schemes: SchemesSection::default(),
            density: DensitySection::default(),
            jump_integral: JumpIntegralSection::default(),
            increments: IncrementsSection::default(),
            yw: YwSection::default(),
            mollify: MollifySection::default(),
            komatsu: KomatsuSection::default(),
            verify: VerifySection::default(),
        }
    }

    /// The fully resolved document; parsing it gives back `self`.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    pub fn experiment_spec(&self) -> Result<ExperimentSpec> {
        let r = &self.rate;
        let taus = r
            .taus
            .iter()
            .map(|t| t.parse::<StoppingTimeSpec>())
            .collect::<Result<Vec<_>>>()?;
        Ok(ExperimentSpec {
            problem: self.problem.clone(),
            scheme: r.scheme,
            n_list: r.n_list.clone(),
            ref_level: r.ref_level,
            p_exponent: r.p,
            norm: r.norm,
            taus,
            paths: r.paths,
            master_seed: self.seed,
            budget: r.budget,
            band: r.band.map(|[lo, hi]| (lo, hi)),
        })
    }

    /// Checks the preconditions of the operation `subcommand` dispatches to.
    pub fn validate(&self) -> Result<()> {
        let p = preset(&self.problem)?;
        let usage = |msg: &str| Err(Error::Config(msg.to_string()));
        match self.subcommand {
            Subcommand::Rate | Subcommand::Schemes => {
                let spec = self.experiment_spec()?;
                spec.validate(&p)?;
                if let Some([lo, hi]) = self.rate.band {
                    if !(lo <= hi) {
                        return usage("rate.band must satisfy lo <= hi");
                    }
                }
                if self.subcommand == Subcommand::Schemes && self.schemes.schemes.is_empty() {
                    return usage("schemes.schemes must be nonempty");
                }
            }
            Subcommand::Density => {
                let d = &self.density;
                level_of(d.n)?;
                if d.t_index == 0 || d.t_index > d.n {
                    return usage("density.t_index must lie in 1..=n");
                }
                if !(d.big_c > 0.0 && d.small_c > 0.0) {
                    return usage("density.big_c and density.small_c must be positive");
                }
                if d.bins == 0 || !(d.width_sd > 0.0) || !(d.z >= 0.0) {
                    return usage("density.bins and density.width_sd must be positive, density.z nonnegative");
                }
            }
            Subcommand::JumpIntegral | Subcommand::Increments => {
                let (n_list, q, paths) = match self.subcommand {
                    Subcommand::JumpIntegral => {
                        let s = &self.jump_integral;
                        (&s.n_list, s.q, s.paths)
                    }
                    _ => {
                        let s = &self.increments;
                        (&s.n_list, s.q, s.paths)
                    }
                };
                if n_list.is_empty() {
                    return usage("n_list must be nonempty");
                }
                for &n in n_list {
                    level_of(n)?;
                }
                if !(q >= 1.0) {
                    return usage("q must be at least 1");
                }
                if paths < 2 {
                    return usage("paths must be at least 2");
                }
            }
            Subcommand::Yw => {
                let y = &self.yw;
                YwFunction::build(y.delta, y.eps)?;
                if y.points == 0 || !(y.lo > 0.0 && y.hi > y.lo) {
                    return usage("yw.points must be positive and 0 < yw.lo < yw.hi");
                }
            }
            Subcommand::Mollify => {
                let m = &self.mollify;
                base_preset(&m.base, m.dim)?;
                if !(m.l > 0.0) || m.n_list.is_empty() || m.u_list.is_empty() {
                    return usage("mollify.l must be positive, n_list and u_list nonempty");
                }
                if m.n_list.contains(&0) || m.u_list.iter().any(|&u| !(u > 0.0)) {
                    return usage("mollify.n_list and mollify.u_list entries must be positive");
                }
                if let Some(shifts) = &m.shifts {
                    if shifts.is_empty() || shifts.iter().any(|s| s.len() != m.dim) {
                        return usage("mollify.shifts must be nonempty points of dimension dim");
                    }
                }
                if m.convergence {
                    level_of(m.convergence_n)?;
                    if p.dim() != m.dim {
                        return usage("mollify.dim must match the problem dimension");
                    }
                    if !(m.kappa > 0.0 && m.kappa <= p.horizon()) {
                        return usage("mollify.kappa must lie in (0, T]");
                    }
                }
            }
            Subcommand::Komatsu => {
                if self.komatsu.points < 2 || !(self.komatsu.hi > 0.0) {
                    return usage("komatsu.points must be at least 2 and komatsu.hi positive");
                }
            }
            Subcommand::Verify => {
                if self.verify.samples == 0 {
                    return usage("verify.samples must be positive");
                }
            }
        }
        Ok(())
    }
}
