//! Trajectory CSV emission.

use std::io::{self, Write};

use mfc_core::sim::SimResult;

const REFERENCE_NAMES: [&str; 4] = ["yd", "yd_dot", "yd_ddot", "yd_dddot"];

fn reference_name(i: usize) -> String {
    REFERENCE_NAMES
        .get(i)
        .map(|s| s.to_string())
        .unwrap_or_else(|| format!("yd_d{i}"))
}

/// Columns present for this run, in their fixed order.
pub fn header(result: &SimResult) -> Vec<String> {
    let n_xi = result.layout.n_xi;
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n_xi).map(|i| format!("xi{i}")));
    cols.extend((1..=result.layout.n_eta).map(|i| format!("eta{i}")));
    if result.xi_star.is_some() {
        cols.extend((1..=n_xi).map(|i| format!("xi_star{i}")));
    }
    cols.push("u".into());
    if result.mode.has_model() {
        cols.push("v_star".into());
    }
    cols.push("v_tilde".into());
    cols.extend((0..n_xi).map(reference_name));
    cols
}

fn number(x: f64) -> String {
    // Nine significant digits; Rust formatting never uses a locale.
    let x = if x == 0.0 { 0.0 } else { x };
    format!("{x:.8e}")
}

pub fn write_csv<W: Write>(result: &SimResult, mut out: W) -> io::Result<()> {
    writeln!(out, "{}", header(result).join(","))?;
    let mut row: Vec<String> = Vec::new();
    for i in 0..result.len() {
        row.clear();
        row.push(number(result.times[i]));
        row.extend(result.xi[i].iter().map(|v| number(*v)));
        row.extend(result.eta[i].iter().map(|v| number(*v)));
        if let Some(xs) = &result.xi_star {
            row.extend(xs[i].iter().map(|v| number(*v)));
        }
        row.push(number(result.u[i]));
        if result.mode.has_model() {
            row.push(number(result.v_star[i]));
        }
        row.push(number(result.v_tilde[i]));
        row.extend(result.reference[i].iter().map(|v| number(*v)));
        writeln!(out, "{}", row.join(","))?;
    }
    out.flush()
}
