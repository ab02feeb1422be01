//! Experiment configuration: defaults, TOML files and command-line overrides.

use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use clap::Args;
use nsdde_core::problem::BUILTIN_NAMES;
use nsdde_core::SchemeKind;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SEED_ENV: &str = "NSDDE_SEED";
pub const DEFAULT_SEED: u64 = 42;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("bad flag: {0}")]
    BadFlag(String),
    #[error("constraint violated: {0}")]
    ConstraintViolation(String),
    #[error("cannot read config file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("malformed config file {path}: {source}")]
    Parse { path: PathBuf, source: toml::de::Error },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub problem: String,
    pub schemes: Vec<SchemeKind>,
    pub m_exponents: RangeInclusive<u32>,
    pub ref_exponent: u32,
    pub paths: usize,
    pub p: f64,
    pub alpha: f64,
    pub seed: u64,
    pub radii: Vec<f64>,
    /// Ball radius for `check`.
    pub radius: f64,
    /// Sample count for `check`.
    pub samples: usize,
    pub output_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn exponents(&self) -> Vec<u32> {
        self.m_exponents.clone().collect()
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let violation = |msg: String| Err(ConfigError::ConstraintViolation(msg));
        if !BUILTIN_NAMES.contains(&self.problem.as_str()) {
            return Err(ConfigError::BadFlag(format!(
                "unknown problem '{}' (expected one of {})",
                self.problem,
                BUILTIN_NAMES.join(", ")
            )));
        }
        if self.schemes.is_empty() {
            return violation("at least one scheme is required".into());
        }
        let (lo, hi) = (*self.m_exponents.start(), *self.m_exponents.end());
        if lo > hi {
            return violation(format!("empty exponent range {lo}..{hi}"));
        }
        if lo == 0 {
            return violation("step exponents must be at least 1".into());
        }
        if self.ref_exponent <= hi {
            return violation(format!("reference exponent {} must exceed {hi}", self.ref_exponent));
        }
        if self.ref_exponent > 24 {
            return violation(format!("reference exponent {} exceeds 24", self.ref_exponent));
        }
        if self.paths < 1 {
            return violation("paths must be at least 1".into());
        }
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return violation(format!("alpha = {} must lie in (0, 1/2]", self.alpha));
        }
        if !(self.p > 0.0 && self.p.is_finite()) {
            return violation(format!("p = {} must be positive", self.p));
        }
        if self.radii.is_empty() || self.radii.iter().any(|r| !(*r > 0.0 && r.is_finite())) {
            return violation("radii must be positive".into());
        }
        if self.radii.windows(2).any(|w| w[1] <= w[0]) {
            return violation("radii must be strictly ascending".into());
        }
        if !(self.radius > 0.0 && self.radius.is_finite()) {
            return violation(format!("radius = {} must be positive", self.radius));
        }
        if self.samples < 2 {
            return violation("samples must be at least 2".into());
        }
        Ok(())
    }
}

/// Flags shared by every subcommand. Unset flags fall back to the config
/// file, then to the built-in defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// TOML file with any subset of the experiment settings
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// linear-sdde, cubic-tamed or pure-neutral
    #[arg(long)]
    pub problem: Option<String>,
    /// Comma-separated list of em, tamed-em, milstein, tamed-milstein
    #[arg(long, alias = "scheme", value_delimiter = ',')]
    pub schemes: Vec<String>,
    /// Inclusive range of step exponents, `lo..hi`; Δ = τ / 2^e
    #[arg(long = "m-exps", value_name = "LO..HI")]
    pub m_exps: Option<String>,
    /// Single step exponent; shorthand for `--m-exps e..e`
    #[arg(long = "m-exp", value_name = "E", conflicts_with = "m_exps")]
    pub m_exp: Option<u32>,
    /// Exponent of the reference grid
    #[arg(long = "ref-exp", value_name = "E")]
    pub ref_exp: Option<u32>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// Moment order of the error and moment estimates
    #[arg(long)]
    pub p: Option<f64>,
    /// Taming exponent
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Base seed; defaults to $NSDDE_SEED, then 42
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated exit radii
    #[arg(long, value_delimiter = ',')]
    pub radii: Vec<f64>,
    /// Ball radius for `check`
    #[arg(long)]
    pub radius: Option<f64>,
    /// Sample count for `check`
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long = "output-dir", short = 'o', value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
enum SeedValue {
    #[default]
    Missing,
    Int(u64),
    Text(String),
}

/// On-disk form. Every key is optional; unknown keys and tables are ignored
/// so that run manifests load as config files.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FileConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schemes: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub m_exponents: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ref_exponent: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub paths: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "is_missing")]
    seed: SeedValue,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radii: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn is_missing(s: &SeedValue) -> bool {
    matches!(s, SeedValue::Missing)
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        toml::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })
    }

    fn seed(&self) -> Result<Option<u64>, ConfigError> {
        match &self.seed {
            SeedValue::Missing => Ok(None),
            SeedValue::Int(v) => Ok(Some(*v)),
            SeedValue::Text(s) => s.parse().map(Some).map_err(|_| ConfigError::BadFlag(format!("bad seed '{s}'"))),
        }
    }
}

/// Parses `lo..hi`, `lo..=hi` or a single exponent.
pub fn parse_range(s: &str) -> Result<RangeInclusive<u32>, ConfigError> {
    let bad = || ConfigError::BadFlag(format!("bad exponent range '{s}' (expected LO..HI)"));
    let num = |t: &str| t.trim().parse::<u32>().map_err(|_| bad());
    match s.split_once("..") {
        Some((lo, hi)) => Ok(num(lo)?..=num(hi.strip_prefix('=').unwrap_or(hi))?),
        None => {
            let e = num(s)?;
            Ok(e..=e)
        }
    }
}

fn parse_schemes(names: &[String]) -> Result<Vec<SchemeKind>, ConfigError> {
    names
        .iter()
        .map(|n| n.trim().parse::<SchemeKind>().map_err(|e| ConfigError::BadFlag(e.to_string())))
        .collect()
}

fn env_seed() -> Result<Option<u64>, ConfigError> {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| ConfigError::BadFlag(format!("{SEED_ENV}='{v}' is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

/// Flags override the config file, which overrides the defaults. The seed
/// environment variable only replaces the default seed.
pub fn parse_config(args: &ConfigArgs) -> Result<ExperimentConfig, ConfigError> {
    let file = match &args.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };

    let schemes = if !args.schemes.is_empty() {
        parse_schemes(&args.schemes)?
    } else if let Some(names) = &file.schemes {
        parse_schemes(names)?
    } else {
        vec![SchemeKind::TamedMilstein]
    };
    let m_exponents = match (args.m_exp, &args.m_exps, &file.m_exponents) {
        (Some(e), _, _) => e..=e,
        (None, Some(r), _) => parse_range(r)?,
        (None, None, Some(r)) => parse_range(r)?,
        (None, None, None) => 3..=8,
    };
    let seed = match (args.seed, file.seed()?) {
        (Some(s), _) | (None, Some(s)) => s,
        (None, None) => env_seed()?.unwrap_or(DEFAULT_SEED),
    };
    let radii = if !args.radii.is_empty() {
        args.radii.clone()
    } else {
        file.radii.clone().unwrap_or_else(|| vec![2.0, 4.0, 8.0, 16.0])
    };

    let config = ExperimentConfig {
        problem: args.problem.clone().or(file.problem).unwrap_or_else(|| "linear-sdde".into()),
        schemes,
        m_exponents,
        ref_exponent: args.ref_exp.or(file.ref_exponent).unwrap_or(11),
        paths: args.paths.or(file.paths).unwrap_or(1000),
        p: args.p.or(file.p).unwrap_or(2.0),
        alpha: args.alpha.or(file.alpha).unwrap_or(0.5),
        seed,
        radii,
        radius: args.radius.or(file.radius).unwrap_or(10.0),
        samples: args.samples.or(file.samples).unwrap_or(10_000),
        output_dir: args.output_dir.clone().or(file.output_dir).unwrap_or_else(|| PathBuf::from(".")),
    };
    config.validate()?;
    Ok(config)
}

/// The file form of a complete config.
pub fn to_file_config(config: &ExperimentConfig) -> FileConfig {
    FileConfig {
        problem: Some(config.problem.clone()),
        schemes: Some(config.schemes.iter().map(|s| s.name().to_string()).collect()),
        m_exponents: Some(format!("{}..{}", config.m_exponents.start(), config.m_exponents.end())),
        ref_exponent: Some(config.ref_exponent),
        paths: Some(config.paths),
        p: Some(config.p),
        alpha: Some(config.alpha),
        // TOML integers are signed 64-bit.
        seed: if config.seed <= i64::MAX as u64 {
            SeedValue::Int(config.seed)
        } else {
            SeedValue::Text(config.seed.to_string())
        },
        radii: Some(config.radii.clone()),
        radius: Some(config.radius),
        samples: Some(config.samples),
        output_dir: Some(config.output_dir.clone()),
    }
}

pub fn emit(config: &ExperimentConfig) -> String {
    toml::to_string(&to_file_config(config)).expect("config serializes to TOML")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn args(problem: &str) -> ConfigArgs {
        ConfigArgs { problem: Some(problem.into()), seed: Some(42), ..Default::default() }
    }

    #[test]
    fn defaults_are_filled() {
        let mut a = args("linear-sdde");
        a.m_exps = Some("3..8".into());
        a.ref_exp = Some(11);
        let c = parse_config(&a).unwrap();
        assert_eq!(c.m_exponents, 3..=8);
        assert_eq!(c.ref_exponent, 11);
        assert_eq!(c.p, 2.0);
        assert_eq!(c.alpha, 0.5);
        assert_eq!(c.paths, 1000);
        assert_eq!(c.seed, 42);
        assert_eq!(c.radii, vec![2.0, 4.0, 8.0, 16.0]);
    }

    #[test]
    fn reference_must_exceed_coarse_exponents() {
        let mut a = args("linear-sdde");
        a.m_exps = Some("3..8".into());
        a.ref_exp = Some(5);
        assert!(matches!(parse_config(&a), Err(ConfigError::ConstraintViolation(_))));
        a.ref_exp = Some(8);
        assert!(matches!(parse_config(&a), Err(ConfigError::ConstraintViolation(_))));
    }

    #[test]
    fn alpha_above_half_rejected() {
        let mut a = args("linear-sdde");
        a.alpha = Some(0.7);
        assert!(matches!(parse_config(&a), Err(ConfigError::ConstraintViolation(_))));
        a.alpha = Some(0.0);
        assert!(matches!(parse_config(&a), Err(ConfigError::ConstraintViolation(_))));
        a.alpha = Some(0.5);
        assert!(parse_config(&a).is_ok());
    }

    #[test]
    fn zero_paths_rejected() {
        let mut a = args("linear-sdde");
        a.paths = Some(0);
        assert!(matches!(parse_config(&a), Err(ConfigError::ConstraintViolation(_))));
    }

    #[test]
    fn bad_names_are_flag_errors() {
        let mut a = args("no-such-problem");
        assert!(matches!(parse_config(&a), Err(ConfigError::BadFlag(_))));
        a = args("linear-sdde");
        a.schemes = vec!["rk4".into()];
        assert!(matches!(parse_config(&a), Err(ConfigError::BadFlag(_))));
        a.schemes.clear();
        a.m_exps = Some("three..8".into());
        assert!(matches!(parse_config(&a), Err(ConfigError::BadFlag(_))));
    }

    #[test]
    fn range_forms() {
        assert_eq!(parse_range("3..8").unwrap(), 3..=8);
        assert_eq!(parse_range("3..=8").unwrap(), 3..=8);
        assert_eq!(parse_range("5").unwrap(), 5..=5);
        assert!(parse_range("..8").is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("exp.toml");
        std::fs::write(&path, "problem = \"cubic-tamed\"\npaths = 50\np = 4.0\nm_exponents = \"2..4\"\nseed = 9\n").unwrap();
        let a = ConfigArgs { config: Some(path.clone()), paths: Some(7), ..Default::default() };
        let c = parse_config(&a).unwrap();
        assert_eq!(c.problem, "cubic-tamed");
        assert_eq!(c.paths, 7);
        assert_eq!(c.p, 4.0);
        assert_eq!(c.m_exponents, 2..=4);
        assert_eq!(c.seed, 9);
    }

    #[test]
    fn huge_seed_survives_toml() {
        let mut a = args("linear-sdde");
        a.seed = Some(u64::MAX);
        let c = parse_config(&a).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, emit(&c)).unwrap();
        let back = parse_config(&ConfigArgs { config: Some(path), ..Default::default() }).unwrap();
        assert_eq!(back, c);
    }

    fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
        (
            prop::sample::select(BUILTIN_NAMES.to_vec()),
            prop::sample::subsequence(SchemeKind::ALL.to_vec(), 1..=4),
            1u32..6,
            0u32..4,
            1u32..6,
            1usize..5000,
            (0.1f64..8.0, 1e-6f64..=0.5),
            any::<u64>(),
            prop::collection::vec(0.01f64..10.0, 1..5),
            (0.1f64..100.0, 2usize..100_000),
        )
            .prop_map(|(problem, schemes, lo, width, gap, paths, (p, alpha), seed, steps, (radius, samples))| {
                let hi = lo + width;
                let mut acc = 0.0;
                let radii = steps
                    .into_iter()
                    .map(|s| {
                        acc += s;
                        acc
                    })
                    .collect();
                ExperimentConfig {
                    problem: problem.to_string(),
                    schemes,
                    m_exponents: lo..=hi,
                    ref_exponent: hi + gap,
                    paths,
                    p,
                    alpha,
                    seed,
                    radii,
                    radius,
                    samples,
                    output_dir: PathBuf::from("out/run"),
                }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn emit_then_parse_is_identity(c in arb_config()) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("c.toml");
            std::fs::write(&path, emit(&c)).unwrap();
            let back = parse_config(&ConfigArgs { config: Some(path), ..Default::default() }).unwrap();
            prop_assert_eq!(back, c);
        }
    }
}
