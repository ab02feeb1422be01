use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use nsdde_core::assumptions::{check_assumptions, khasminskii_ladder, ladder_stabilizes, Sampling};
use nsdde_core::brownian::coarsen_increments;
use nsdde_core::experiments::{
    decreasing_within, estimate_exit_probability, estimate_interpolation_gap, estimate_sup_moment,
    run_strong_convergence, ExitSubject,
};
use nsdde_core::{builtin_problem, dyadic_grid, sample_fine_path, simulate_path, validate_problem, MonteCarlo};
use serde::Serialize;

use crate::config::{parse_config, to_file_config, ConfigArgs, ExperimentConfig, FileConfig};
use crate::output::{
    assumption_table, convergence_table, exit_table, gap_table, moment_table, path_rows, path_table, write_csv,
    LadderRow, Table,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Slack, in standard errors, for every `--assert` comparison.
const ASSERT_SIGMAS: f64 = 3.0;

#[derive(Debug, Parser)]
#[command(name = "nsdde", version, about = "Tamed Milstein experiments for neutral stochastic delay equations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    /// Exit with status 3 when the run misses its acceptance thresholds
    #[arg(long)]
    pub assert: bool,
    /// Worker threads; 0 uses every core
    #[arg(long, default_value_t = 0)]
    pub threads: usize,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Simulate sample paths to path.csv
    Simulate(RunArgs),
    /// Strong L^p errors against a fine reference to conv.csv
    Convergence(RunArgs),
    /// Supremum moments to moments.csv
    Moments(RunArgs),
    /// Step-process interpolation gap to gap.csv
    Gap(RunArgs),
    /// Exit probabilities of growing balls to exit.csv
    ExitProb(RunArgs),
    /// Sampled assumption constants to assumptions.csv
    Check(RunArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Convergence(_) => "convergence",
            Command::Moments(_) => "moments",
            Command::Gap(_) => "gap",
            Command::ExitProb(_) => "exit-prob",
            Command::Check(_) => "check",
        }
    }

    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Simulate(a)
            | Command::Convergence(a)
            | Command::Moments(a)
            | Command::Gap(a)
            | Command::ExitProb(a)
            | Command::Check(a) => a,
        }
    }

    fn stem(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "path",
            Command::Convergence(_) => "conv",
            Command::Moments(_) => "moments",
            Command::Gap(_) => "gap",
            Command::ExitProb(_) => "exit",
            Command::Check(_) => "assumptions",
        }
    }
}

/// Result of a successful run.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub csv: PathBuf,
    pub manifest: PathBuf,
    pub assert_passed: bool,
    pub summary: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    #[serde(flatten)]
    config: FileConfig,
    run: RunInfo<'a>,
}

#[derive(Serialize)]
struct RunInfo<'a> {
    command: &'a str,
    tool_version: &'a str,
    output: String,
}

/// Parses the config for `cmd` and runs it, on a dedicated pool when a
/// thread count is given.
pub fn execute(cmd: &Command) -> Result<Outcome> {
    let args = cmd.args();
    let config = parse_config(&args.config)?;
    if args.threads == 0 {
        return run_command(cmd, &config);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.threads)
        .build()
        .context("building worker pool")?;
    pool.install(|| run_command(cmd, &config))
}

/// Runs one subcommand and writes `<stem>.csv` plus `<stem>.manifest.toml`
/// into the output directory.
pub fn run_command(cmd: &Command, config: &ExperimentConfig) -> Result<Outcome> {
    let problem = builtin_problem(&config.problem)?;
    validate_problem(&problem).into_result()?;
    let mc = MonteCarlo::new(config.paths, config.seed).with_alpha(config.alpha);
    let exps = config.exponents();

    let (table, assert_passed, summary) = match cmd {
        Command::Simulate(_) => {
            let scheme = config.schemes[0];
            let e = *config.m_exponents.start();
            let grid = dyadic_grid(problem.delay, problem.horizon, e)?;
            let multi = config.paths > 1;
            let mut table = path_table(problem.dim(), multi);
            let mut exploded = 0;
            for i in 0..config.paths {
                let fine = sample_fine_path(config.seed, i as u64, problem.horizon, problem.delay / (1i64 << config.ref_exponent))?;
                let inc = coarsen_increments(&fine, &grid)?;
                let traj = simulate_path(&problem, &grid, &inc, scheme, config.alpha);
                exploded += traj.exploded as usize;
                path_rows(&traj, multi.then_some(i), &mut table);
            }
            let summary = format!("{} paths of {} at dt = {}, {} exploded", config.paths, scheme, grid.dt(), exploded);
            (table, exploded == 0, summary)
        }
        Command::Convergence(_) => {
            let report = run_strong_convergence(&problem, &config.schemes, &exps, config.ref_exponent, config.p, &mc)?;
            let mut ok = true;
            let mut summary = String::new();
            for &(scheme, slope) in &report.slopes {
                let rows: Vec<_> = report.rows_for(scheme).collect();
                let pairs: Vec<(f64, f64)> = rows.iter().map(|r| (r.error, r.stderr)).collect();
                if scheme.is_tamed() {
                    ok &= decreasing_within(&pairs, ASSERT_SIGMAS) && rows.iter().all(|r| r.exploded_fraction == 0.0);
                }
                match slope {
                    Some(s) => summary.push_str(&format!("{scheme}: slope {s:.4}\n")),
                    None => summary.push_str(&format!("{scheme}: slope undefined\n")),
                }
            }
            (convergence_table(&report), ok, summary.trim_end().to_string())
        }
        Command::Moments(_) => {
            let report = estimate_sup_moment(&problem, &config.schemes, &exps, config.ref_exponent, config.p, &mc)?;
            let mut ok = true;
            for &scheme in config.schemes.iter().filter(|s| s.is_tamed()) {
                let vals: Vec<f64> = report.rows.iter().filter(|r| r.scheme == scheme).map(|r| r.sup_moment).collect();
                let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
                ok &= vals.iter().all(|v| v.is_finite()) && max / min < 2.0;
            }
            (moment_table(&report), ok, format!("{} moment rows", report.rows.len()))
        }
        Command::Gap(_) => {
            let report = estimate_interpolation_gap(&problem, &exps, config.ref_exponent, config.p, &mc)?;
            let pairs: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.gap, r.stderr)).collect();
            let ok = decreasing_within(&pairs, ASSERT_SIGMAS);
            (gap_table(&report), ok, format!("{} gap rows", report.rows.len()))
        }
        Command::ExitProb(_) => {
            let scheme = config.schemes[0];
            let e = *config.m_exponents.start();
            let report = estimate_exit_probability(&problem, scheme, e, config.ref_exponent, &config.radii, &mc)?;
            let ok = [ExitSubject::Reference, ExitSubject::Scheme]
                .into_iter()
                .all(|w| report.scaled_bounded(w, 3.0, ASSERT_SIGMAS));
            (exit_table(&report), ok, format!("{scheme} at e = {e} against e = {}", config.ref_exponent))
        }
        Command::Check(_) => {
            let s = Sampling::new(config.radius, config.samples, config.seed);
            let dts: Vec<f64> = exps.iter().map(|&e| problem.delay_f64() / f64::from(1u32 << e)).collect();
            let report = check_assumptions(&problem, &s, &dts, config.alpha);
            let mut radii = config.radii.clone();
            if !radii.contains(&config.radius) {
                radii.push(config.radius);
                radii.sort_by(f64::total_cmp);
            }
            let ladder = khasminskii_ladder(&problem.coefficients, problem.khasminskii_p, &radii, &s);
            let ok = report.contraction_pass
                && report.declared_k1_holds
                && report.violations.is_empty()
                && ladder_stabilizes(&ladder, 2.0);
            let rows: Vec<LadderRow> = ladder.iter().map(|c| LadderRow { radius: c.radius, k1_hat: c.k1_hat }).collect();
            let summary = format!(
                "{} on the ball R = {} ({} samples)\n  kappa_hat = {} (contraction {})\n  K_R_hat = {}, Kbar_R_hat = {}\n  K1_hat = {} (declared {} {})\n  violations: {}",
                problem.name,
                report.radius,
                report.samples,
                report.kappa_hat,
                if report.contraction_pass { "holds" } else { "fails" },
                report.k_r_hat,
                report.kbar_r_hat,
                report.k1_hat,
                problem.khasminskii_k1,
                if report.declared_k1_holds { "holds" } else { "fails" },
                report.violations.len(),
            );
            (assumption_table(&report, &rows), ok, summary)
        }
    };

    write_outputs(cmd, config, &table, assert_passed, summary)
}

fn write_outputs(cmd: &Command, config: &ExperimentConfig, table: &Table, assert_passed: bool, summary: String) -> Result<Outcome> {
    let dir = &config.output_dir;
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let csv = dir.join(format!("{}.csv", cmd.stem()));
    let manifest = dir.join(format!("{}.manifest.toml", cmd.stem()));
    write_csv(table, &csv).with_context(|| format!("writing {}", csv.display()))?;
    write_manifest(cmd, config, &csv, &manifest)?;
    Ok(Outcome { csv, manifest, assert_passed, summary })
}

fn write_manifest(cmd: &Command, config: &ExperimentConfig, csv: &Path, path: &Path) -> Result<()> {
    let manifest = Manifest {
        config: to_file_config(config),
        run: RunInfo {
            command: cmd.name(),
            tool_version: TOOL_VERSION,
            output: csv.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default(),
        },
    };
    let text = toml::to_string(&manifest).context("serializing manifest")?;
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
