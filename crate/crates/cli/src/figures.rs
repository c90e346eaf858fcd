//! Tabulated data behind the threshold, average-cost and lower-bound plots.
//!
//! Each table is built from the closed forms, checked against the shape it is
//! expected to have, and written as CSV with one header row.

use std::fmt;
use std::io;
use std::path::Path;
use std::str::FromStr;

use memsample::analytic::{g0, optimal_threshold};
use memsample::ModelParams;

use crate::error::CliError;

/// Largest threshold tabulated in the cost-versus-threshold table.
pub const FIG2_MAX_THRESHOLD: u64 = 40;

/// `p = 0.05, 0.10, ..., 0.95`.
pub fn p_grid() -> Vec<f64> {
    (1..=19).map(|i| f64::from(i) / 20.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FigureId {
    Fig2,
    Fig3,
    Fig4,
}

impl FigureId {
    pub const ALL: [FigureId; 3] = [FigureId::Fig2, FigureId::Fig3, FigureId::Fig4];

    pub fn file_name(self) -> &'static str {
        match self {
            FigureId::Fig2 => "fig2.csv",
            FigureId::Fig3 => "fig3.csv",
            FigureId::Fig4 => "fig4.csv",
        }
    }
}

impl fmt::Display for FigureId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FigureId::Fig2 => "fig2",
            FigureId::Fig3 => "fig3",
            FigureId::Fig4 => "fig4",
        })
    }
}

impl FromStr for FigureId {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fig2" => Ok(FigureId::Fig2),
            "fig3" => Ok(FigureId::Fig3),
            "fig4" => Ok(FigureId::Fig4),
            other => Err(CliError::Usage(format!(
                "unknown figure id '{other}' (expected fig2, fig3, fig4 or all)"
            ))),
        }
    }
}

/// One row of the cost-versus-threshold table. `marker` is `curve` for the
/// integer sweep, `optimal` for `Y0*` and `continuous` for the real minimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct Fig2Row {
    pub y0: f64,
    pub g0: f64,
    pub marker: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig3Row {
    pub c: f64,
    pub p: f64,
    pub y0_star: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fig4Row {
    pub c: f64,
    pub p: f64,
    pub g_star: f64,
    pub lower_bound: f64,
}

pub fn fig2_rows(params: &ModelParams) -> Result<Vec<Fig2Row>, CliError> {
    let mut rows = (1..=FIG2_MAX_THRESHOLD)
        .map(|y0| {
            Ok(Fig2Row {
                y0: y0 as f64,
                g0: g0(y0, params)?,
                marker: "curve",
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;
    let report = optimal_threshold(params);
    rows.push(Fig2Row {
        y0: report.y0_star as f64,
        g0: report.g_star,
        marker: "optimal",
    });
    rows.push(Fig2Row {
        y0: report.y0_tilde,
        g0: report.lower_bound,
        marker: "continuous",
    });
    Ok(rows)
}

pub fn fig3_rows(c_values: &[f64]) -> Result<Vec<Fig3Row>, CliError> {
    let mut rows = Vec::new();
    for &c in c_values {
        for p in p_grid() {
            let params = ModelParams::new(p, c)?;
            rows.push(Fig3Row {
                c,
                p,
                y0_star: optimal_threshold(&params).y0_star,
            });
        }
    }
    Ok(rows)
}

pub fn fig4_rows(c_values: &[f64]) -> Result<Vec<Fig4Row>, CliError> {
    let mut rows = Vec::new();
    for &c in c_values {
        for p in p_grid() {
            let params = ModelParams::new(p, c)?;
            let report = optimal_threshold(&params);
            rows.push(Fig4Row {
                c,
                p,
                g_star: report.g_star,
                lower_bound: report.lower_bound,
            });
        }
    }
    Ok(rows)
}

/// The curve rows must attain their minimum at the `optimal` marker.
pub fn check_fig2(rows: &[Fig2Row]) -> Result<(), String> {
    let curve: Vec<&Fig2Row> = rows.iter().filter(|r| r.marker == "curve").collect();
    let argmin = curve
        .iter()
        .min_by(|a, b| a.g0.total_cmp(&b.g0))
        .ok_or("fig2 has no curve rows")?;
    let optimal = rows
        .iter()
        .find(|r| r.marker == "optimal")
        .ok_or("fig2 has no optimal marker")?;
    if optimal.y0 <= FIG2_MAX_THRESHOLD as f64 && argmin.y0 != optimal.y0 {
        return Err(format!(
            "fig2 curve minimum at Y0={} but optimal marker at Y0={}",
            argmin.y0, optimal.y0
        ));
    }
    Ok(())
}

/// `Y0*` must be non-decreasing in `p` for each `c`.
pub fn check_fig3(rows: &[Fig3Row]) -> Result<(), String> {
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.c == b.c && b.p > a.p && b.y0_star < a.y0_star {
            return Err(format!(
                "fig3 Y0_star drops from {} to {} between p={} and p={} at c={}",
                a.y0_star, b.y0_star, a.p, b.p, a.c
            ));
        }
    }
    Ok(())
}

/// `g*` must be non-increasing in `p` for each `c` and never below the bound.
pub fn check_fig4(rows: &[Fig4Row]) -> Result<(), String> {
    if let Some(r) = rows.iter().find(|r| r.g_star < r.lower_bound) {
        return Err(format!(
            "fig4 g_star={} below lower_bound={} at p={} c={}",
            r.g_star, r.lower_bound, r.p, r.c
        ));
    }
    for pair in rows.windows(2) {
        let (a, b) = (&pair[0], &pair[1]);
        if a.c == b.c && b.p > a.p && b.g_star > a.g_star {
            return Err(format!(
                "fig4 g_star rises from {} to {} between p={} and p={} at c={}",
                a.g_star, b.g_star, a.p, b.p, a.c
            ));
        }
    }
    Ok(())
}

pub fn write_fig2<W: io::Write>(rows: &[Fig2Row], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["Y0", "g0", "marker"])?;
    for r in rows {
        w.write_record([r.y0.to_string(), r.g0.to_string(), r.marker.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fig3<W: io::Write>(rows: &[Fig3Row], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["c", "p", "Y0_star"])?;
    for r in rows {
        w.write_record([r.c.to_string(), r.p.to_string(), r.y0_star.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_fig4<W: io::Write>(rows: &[Fig4Row], out: W) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["c", "p", "g_star", "lower_bound"])?;
    for r in rows {
        w.write_record([
            r.c.to_string(),
            r.p.to_string(),
            r.g_star.to_string(),
            r.lower_bound.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Outcome of emitting one figure table.
#[derive(Debug)]
pub struct FigureOutput {
    pub id: FigureId,
    pub path: std::path::PathBuf,
    /// `Err` carries the violated property. The file is written either way.
    pub check: Result<(), String>,
}

/// Builds, checks and writes one figure into `dir`.
pub fn emit(
    id: FigureId,
    dir: &Path,
    fig2_params: &ModelParams,
    c_values: &[f64],
) -> Result<FigureOutput, CliError> {
    let path = dir.join(id.file_name());
    let file = std::fs::File::create(&path)?;
    let check = match id {
        FigureId::Fig2 => {
            let rows = fig2_rows(fig2_params)?;
            write_fig2(&rows, file)?;
            check_fig2(&rows)
        }
        FigureId::Fig3 => {
            let rows = fig3_rows(c_values)?;
            write_fig3(&rows, file)?;
            check_fig3(&rows)
        }
        FigureId::Fig4 => {
            let rows = fig4_rows(c_values)?;
            write_fig4(&rows, file)?;
            check_fig4(&rows)
        }
    };
    Ok(FigureOutput { id, path, check })
}
