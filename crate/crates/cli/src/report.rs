//! Report and artifact emission: a JSON certificate report plus CSV traces,
//! all written atomically (temp file in the target directory, then rename).

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use passlab_core::abstraction::FiniteTransitionSystem;
use passlab_core::closedloop::{ClosedLoopTrace, FeasibleIndices};
use passlab_core::systems::QuadraticStorage;

use crate::CliError;

pub const REPORT_SCHEMA: &str = "passlab/report-v1";

#[derive(Debug, Serialize)]
pub struct Certificate {
    pub name: String,
    pub holds: bool,
    pub margin: Option<f64>,
    pub details: Value,
}

impl Certificate {
    pub fn new(name: &str, holds: bool, margin: Option<f64>, details: Value) -> Self {
        Self {
            name: name.to_string(),
            holds,
            margin,
            details,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub schema: &'static str,
    pub command: String,
    pub scenario: String,
    pub seed: u64,
    pub certificates: Vec<Certificate>,
}

impl Report {
    pub fn new(command: &str, scenario: &str, seed: u64) -> Self {
        Self {
            schema: REPORT_SCHEMA,
            command: command.to_string(),
            scenario: scenario.to_string(),
            seed,
            certificates: Vec::new(),
        }
    }

    pub fn push(&mut self, cert: Certificate) {
        self.certificates.push(cert);
    }

    pub fn all_hold(&self) -> bool {
        self.certificates.iter().all(|c| c.holds)
    }

    pub fn write(&self, out_dir: &Path) -> Result<PathBuf, CliError> {
        let body = serde_json::to_string_pretty(self)
            .map_err(|e| CliError::Input(format!("report serialization failed: {e}")))?;
        let path = out_dir.join("report.json");
        write_atomic(&path, body.as_bytes())?;
        Ok(path)
    }

    pub fn print_summary(&self) {
        for c in &self.certificates {
            let verdict = if c.holds { "PASS" } else { "FAIL" };
            match c.margin {
                Some(m) => println!("{:<28} {} (margin {:+.6e})", c.name, verdict, m),
                None => println!("{:<28} {}", c.name, verdict),
            }
        }
    }
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", dir.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default()
    ));
    std::fs::write(&tmp, bytes)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", tmp.display())))?;
    std::fs::rename(&tmp, path)
        .map_err(|e| CliError::Input(format!("cannot move report into {}: {e}", path.display())))
}

fn push_float(line: &mut String, v: f64) {
    if v.is_nan() {
        line.push_str(",nan");
    } else {
        let _ = write!(line, ",{v}");
    }
}

/// Closed-loop trace CSV: one row per sampled step, signals grouped as
/// plant state/input/output then controller state/input/output, followed by
/// the aggregate storage value and the dissipation residual of the step
/// (empty slot convention: the final row carries a `nan` residual).
pub fn trace_csv(
    trace: &ClosedLoopTrace,
    v1: &QuadraticStorage,
    v2: &QuadraticStorage,
    residuals: &[f64],
) -> String {
    let first = &trace.steps[0];
    let mut header = String::from("k,t");
    let group = |header: &mut String, tag: &str, dim: usize| {
        for i in 0..dim {
            let _ = write!(header, ",{tag}_{i}");
        }
    };
    group(&mut header, "x1", first.x1.len());
    group(&mut header, "u1", first.u1.len());
    group(&mut header, "y1", first.y1.len());
    group(&mut header, "xc", first.xc.len());
    group(&mut header, "uc", first.u2_quantized.len());
    group(&mut header, "yc", first.y2.len());
    header.push_str(",V,residual\n");

    let mut out = header;
    for (k, s) in trace.steps.iter().enumerate() {
        let mut line = String::new();
        let _ = write!(line, "{}", s.k);
        push_float(&mut line, s.t);
        for v in s.x1.iter().chain(&s.u1).chain(&s.y1) {
            push_float(&mut line, *v);
        }
        for v in s.xc.iter().chain(&s.u2_quantized).chain(&s.y2) {
            push_float(&mut line, *v);
        }
        push_float(&mut line, v1.evaluate(&s.x1) + v2.evaluate(&s.xc));
        push_float(&mut line, residuals.get(k).copied().unwrap_or(f64::NAN));
        line.push('\n');
        out.push_str(&line);
    }
    out
}

/// Feasible-region CSV: the largest certified output index per input index,
/// with the two block margins.
pub fn feasible_region_csv(sweep: &[FeasibleIndices]) -> String {
    let mut out = String::from("nu_c,rho_c,margin_block1,margin_block2\n");
    for f in sweep {
        let mut line = String::new();
        let _ = write!(line, "{}", f.nu_c);
        push_float(&mut line, f.rho_c);
        push_float(&mut line, f.psd_margins.0);
        push_float(&mut line, f.psd_margins.1);
        line.push('\n');
        out.push_str(&line);
    }
    out
}

/// Transition-system edge list: `src,label,dst,output` with an empty `dst`
/// for escape transitions.
pub fn transition_system_csv(ts: &FiniteTransitionSystem) -> String {
    let mut out = String::from("src,label,dst,output\n");
    for (src, label, dst, output) in ts.edges() {
        let dst = dst.map(|d| d.to_string()).unwrap_or_default();
        let output = output.map(|o| o.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{src},{label},{dst},{output}");
    }
    out
}
