//! CSV and SVG output for finished trials.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::harness::trial::TrialReport;
use crate::simenv::Track;

pub const REPORT_COLUMNS: [&str; 9] =
    ["session_time", "x", "y", "speed", "steering", "throttle", "brake", "lateral_offset", "outside_distance"];
pub const SUMMARY_COLUMNS: [&str; 7] = ["laps", "mean_lap_time", "NBF", "BFS", "TBF", "DBF", "dnf"];

/// Files written by [`emit_report`].
#[derive(Debug, Clone)]
pub struct ReportFiles {
    pub report: PathBuf,
    pub summary: PathBuf,
    pub svg: Option<PathBuf>,
}

/// Writes `report.csv`, `summary.csv` and optionally `path.svg` into `dir`.
pub fn emit_report(report: &TrialReport, track: &Track, dir: impl AsRef<Path>, svg: bool) -> Result<ReportFiles> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;

    let report_path = dir.join("report.csv");
    let mut w = csv::Writer::from_path(&report_path)?;
    w.write_record(REPORT_COLUMNS)?;
    for t in &report.trace {
        w.write_record(
            [t.session_time, t.x, t.y, t.speed, t.steering, t.throttle, t.brake, t.lateral_offset, t.outside_distance]
                .map(|v| v.to_string()),
        )?;
    }
    w.flush()?;

    let summary_path = dir.join("summary.csv");
    let mut w = csv::Writer::from_path(&summary_path)?;
    w.write_record(SUMMARY_COLUMNS)?;
    let m = &report.metrics;
    let mean_lap = report.mean_lap_time().map(|v| v.to_string()).unwrap_or_default();
    w.write_record([
        report.successful_laps.to_string(),
        mean_lap,
        m.nbf.to_string(),
        m.bfs.to_string(),
        m.tbf.to_string(),
        m.dbf.to_string(),
        report.dnf.to_string(),
    ])?;
    w.flush()?;

    let svg_path = if svg {
        let p = dir.join("path.svg");
        fs::write(&p, render_svg(report, track))?;
        Some(p)
    } else {
        None
    };
    Ok(ReportFiles { report: report_path, summary: summary_path, svg: svg_path })
}

/// Driven path (red) over the centerline (grey), y up.
pub fn render_svg(report: &TrialReport, track: &Track) -> String {
    let center: Vec<(f64, f64)> = track.centerline().iter().map(|p| (p.x, p.y)).collect();
    let path: Vec<(f64, f64)> = report.trace.iter().map(|t| (t.x, t.y)).collect();
    let margin = track.half_width() + 5.0;
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &(x, y) in center.iter().chain(&path) {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    let (x0, y0, x1, y1) = (x0 - margin, y0 - margin, x1 + margin, y1 + margin);
    let points = |pts: &[(f64, f64)]| {
        let mut s = String::new();
        for (i, (x, y)) in pts.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            let _ = write!(s, "{:.3},{:.3}", x - x0, y1 - y);
        }
        s
    };
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {:.3} {:.3}">"#,
        x1 - x0,
        y1 - y0
    );
    let _ = writeln!(
        out,
        r##"  <polyline id="centerline" fill="none" stroke="#888" stroke-width="{:.3}" points="{}"/>"##,
        2.0 * track.half_width(),
        points(&center)
    );
    let _ = writeln!(out, r##"  <polyline id="path" fill="none" stroke="#c00" stroke-width="0.5" points="{}"/>"##, points(&path));
    out.push_str("</svg>\n");
    out
}
