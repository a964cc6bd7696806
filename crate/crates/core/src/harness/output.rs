use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde_json::json;

use super::cost_table::CostTableRow;
use super::sweep::{ConvergenceReport, SweepAxis};
use crate::error::{Error, Result};
use crate::linalg::StateVector;

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(String::new, |v| v.to_string())
}

/// Full sweep table, one line per run.
pub fn convergence_csv(report: &ConvergenceReport) -> String {
    let mut out = String::from(
        "scheme,n_steps,dt,deps,m,error,matrix_vector_applies,online_exponentials,toolkit_entries_used\n",
    );
    for r in &report.rows {
        writeln!(
            out,
            "{},{},{:.12e},{},{},{:.12e},{},{},{}",
            r.scheme,
            r.n_steps,
            r.dt,
            opt(r.eps_step.map(|e| format!("{e:.12e}"))),
            opt(r.m),
            r.error,
            r.cost.matrix_vector_applies,
            r.cost.online_exponentials,
            r.cost.toolkit_entries_used
        )
        .unwrap();
    }
    out
}

pub fn cost_table_csv(rows: &[CostTableRow]) -> String {
    let mut out = String::from(
        "scheme,n_steps,matrix_products,m,k,matrix_vector_applies,online_exponentials,error,reachable\n",
    );
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{:.6e},{}",
            r.scheme,
            r.n_steps,
            r.matrix_products,
            opt(r.m),
            opt(r.k),
            r.matrix_vector_applies,
            r.online_exponentials,
            r.error,
            r.reachable
        )
        .unwrap();
    }
    out
}

pub fn state_csv(state: &StateVector) -> String {
    let mut out = String::from("index,re,im\n");
    for (k, z) in state.amplitudes().iter().enumerate() {
        writeln!(out, "{k},{:.17e},{:.17e}", z.re, z.im).unwrap();
    }
    out
}

/// One `index,re,im` block per time step, prefixed with the step number.
pub fn trajectory_csv(states: &[StateVector], dt: f64) -> String {
    let mut out = String::from("step,t,index,re,im\n");
    for (j, s) in states.iter().enumerate() {
        for (k, z) in s.amplitudes().iter().enumerate() {
            writeln!(out, "{j},{:.17e},{k},{:.17e},{:.17e}", j as f64 * dt, z.re, z.im).unwrap();
        }
    }
    out
}

/// Writes `scheme,x,error` rows to `path` and the fitted slopes to a JSON
/// sidecar with the same stem. Returns both paths.
pub fn emit_plot_data(report: &ConvergenceReport, path: &Path) -> Result<(PathBuf, PathBuf)> {
    if report.rows.is_empty() {
        return Err(Error::InvalidArgument("empty report".into()));
    }
    let mut csv = String::from("scheme,x,error\n");
    for fit in &report.fits {
        for r in report.rows_for(fit.scheme) {
            writeln!(csv, "{},{:.12e},{:.12e}", r.scheme, r.x, r.error).unwrap();
        }
    }
    let x_label = match report.axis {
        SweepAxis::Dt => "dt",
        SweepAxis::Eps => "deps",
    };
    let schemes: Vec<_> = report
        .fits
        .iter()
        .map(|f| {
            json!({
                "scheme": f.scheme,
                "slope": f.fit.map(|x| x.slope),
                "intercept": f.fit.map(|x| x.intercept),
                "residual": f.fit.map(|x| x.residual),
                "points": f.fit.map_or(0, |x| x.points),
                "window": f.window,
                "floor": f.floor,
                "note": f.note,
            })
        })
        .collect();
    let meta = json!({
        "axes": {"x": x_label, "y": "l2_error", "scale": "log-log"},
        "schemes": schemes,
        "reference": {"n_ref": report.reference_n, "gap": report.reference_gap},
        "m_convention": "m counts grid cells over the span eps_max - eps_min",
        "warnings": report.warnings,
    });
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    let sidecar = path.with_extension("json");
    fs::write(path, csv)?;
    fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)?;
    Ok((path.to_path_buf(), sidecar))
}
