//! Plot-ready CSV rows for time-resolved operator values.

use std::fmt::Write as _;

use serde::Serialize;

pub const PLOT_HEADER: &str = "time,L_box,U_diamond,gap";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct PlotRow {
    pub time: f64,
    pub l_box: f64,
    pub u_diamond: f64,
}

impl PlotRow {
    pub fn gap(&self) -> f64 {
        self.u_diamond - self.l_box
    }
}

pub fn plot_csv(rows: &[PlotRow]) -> String {
    let mut out = String::from(PLOT_HEADER);
    out.push('\n');
    for r in rows {
        writeln!(out, "{},{},{},{}", r.time, r.l_box, r.u_diamond, r.gap()).unwrap();
    }
    out
}
