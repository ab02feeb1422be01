//! CSV emission. Numbers are written positionally with 17 significant
//! digits so every `f64` reads back exactly.

use std::io::Write;
use std::path::Path;

use nsdde_core::assumptions::AssumptionReport;
use nsdde_core::experiments::{ConvergenceReport, ExitReport, GapReport, MomentReport};
use nsdde_core::Trajectory;

pub const CONVERGENCE_HEADER: [&str; 7] = ["scheme", "dt", "paths", "p", "error", "stderr", "exploded_fraction"];
pub const MOMENT_HEADER: [&str; 6] = ["scheme", "dt", "p", "sup_moment", "stderr", "exploded_fraction"];
pub const GAP_HEADER: [&str; 4] = ["dt", "p", "gap", "stderr"];
pub const EXIT_HEADER: [&str; 4] = ["which", "R", "prob", "scaled"];
pub const ASSUMPTION_HEADER: [&str; 4] = ["quantity", "R", "dt", "value"];

/// Positional decimal with 17 significant digits, e.g. `0.12500000000000000`.
pub fn format_decimal(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{:.16e}", v.abs());
    let (mantissa, exp) = sci.split_once('e').expect("scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    let digits: String = mantissa.chars().filter(|c| c.is_ascii_digit()).collect();
    let sign = if v < 0.0 { "-" } else { "" };
    let body = if exp < 0 {
        format!("0.{}{}", "0".repeat((-exp - 1) as usize), digits)
    } else if exp as usize >= digits.len() - 1 {
        format!("{}{}", digits, "0".repeat(exp as usize + 1 - digits.len()))
    } else {
        let split = exp as usize + 1;
        format!("{}.{}", &digits[..split], &digits[split..])
    };
    format!("{sign}{body}")
}

/// A header plus string records, ready to be written.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for row in &self.rows {
            w.write_record(row).expect("in-memory write");
        }
        w.into_inner().expect("in-memory flush")
    }
}

pub fn write_csv(table: &Table, path: &Path) -> std::io::Result<()> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&table.to_bytes())?;
    f.flush()
}

fn num(v: f64) -> String {
    format_decimal(v)
}

pub fn convergence_table(report: &ConvergenceReport) -> Table {
    let mut t = Table::new(&CONVERGENCE_HEADER);
    for r in &report.rows {
        t.push(vec![
            r.scheme.name().into(),
            num(r.dt),
            r.paths.to_string(),
            num(r.p),
            num(r.error),
            num(r.stderr),
            num(r.exploded_fraction),
        ]);
    }
    t
}

pub fn moment_table(report: &MomentReport) -> Table {
    let mut t = Table::new(&MOMENT_HEADER);
    for r in &report.rows {
        t.push(vec![
            r.scheme.name().into(),
            num(r.dt),
            num(r.p),
            num(r.sup_moment),
            num(r.stderr),
            num(r.exploded_fraction),
        ]);
    }
    t
}

pub fn gap_table(report: &GapReport) -> Table {
    let mut t = Table::new(&GAP_HEADER);
    for r in &report.rows {
        t.push(vec![num(r.dt), num(r.p), num(r.gap), num(r.stderr)]);
    }
    t
}

pub fn exit_table(report: &ExitReport) -> Table {
    let mut t = Table::new(&EXIT_HEADER);
    for r in &report.rows {
        t.push(vec![r.which.label().into(), num(r.radius), num(r.prob), num(r.scaled)]);
    }
    t
}

/// Node table of one trajectory, `t,y_0,...`. With `path` set, a leading
/// path column is added so several paths share one file.
pub fn path_rows(traj: &Trajectory, path: Option<usize>, table: &mut Table) {
    for (k, y) in traj.nodes().enumerate() {
        let mut row = Vec::with_capacity(table.header.len());
        if let Some(i) = path {
            row.push(i.to_string());
        }
        row.push(num(traj.grid.node_time(k as isize)));
        row.extend(y.iter().map(|&v| num(v)));
        table.push(row);
    }
}

pub fn path_table(dim: usize, with_path_column: bool) -> Table {
    let mut header = Vec::new();
    if with_path_column {
        header.push("path".to_string());
    }
    header.push("t".into());
    header.extend((0..dim).map(|i| format!("y_{i}")));
    Table { header, rows: Vec::new() }
}

/// Ladder of `K1_hat` values reported next to the main check.
pub struct LadderRow {
    pub radius: f64,
    pub k1_hat: f64,
}

pub fn assumption_table(report: &AssumptionReport, ladder: &[LadderRow]) -> Table {
    let mut t = Table::new(&ASSUMPTION_HEADER);
    let r = num(report.radius);
    let flag = |b: bool| if b { "1".to_string() } else { "0".to_string() };
    let mut scalar = |name: &str, value: String| t.push(vec![name.into(), r.clone(), String::new(), value]);
    scalar("samples", report.samples.to_string());
    scalar("theta_hat", num(report.theta_hat));
    scalar("kappa_hat", num(report.kappa_hat));
    scalar("contraction_pass", flag(report.contraction_pass));
    scalar("K_R_hat", num(report.k_r_hat));
    scalar("Kbar_R_hat", num(report.kbar_r_hat));
    scalar("K1_hat", num(report.k1_hat));
    scalar("khasminskii_ok", flag(report.khasminskii_ok));
    scalar("declared_K1_holds", flag(report.declared_k1_holds));
    scalar("violations", report.violations.len().to_string());
    for row in ladder {
        t.push(vec!["K1_hat_ladder".into(), num(row.radius), String::new(), num(row.k1_hat)]);
    }
    for g in &report.taming_gaps {
        t.push(vec!["taming_gap".into(), r.clone(), num(g.dt), num(g.gap)]);
        t.push(vec!["N_R_hat".into(), r.clone(), num(g.dt), num(g.n_r_hat)]);
        t.push(vec!["N_R_alpha_hat".into(), r.clone(), num(g.dt), num(g.n_r_alpha_hat)]);
    }
    t
}
