use std::io::Write;
use std::path::PathBuf;

use anyhow::{anyhow, Result};
use clap::Subcommand;
use drillguide::calibration::{axis_calibrate_with, pivot_calibrate_with, AxisOptions, CalibrationError, SolverThresholds};
use drillguide::geometry::Point3;
use serde::Serialize;

use crate::files::{point_arg, read_recording, to_json};

#[derive(Subcommand)]
pub enum CalibKind {
    /// Tip of a tool pivoted about a fixed point.
    Pivot {
        /// Recording (JSON Lines) of the tool marker pose.
        recording: PathBuf,
        /// Calibration JSON; printed to stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Smallest accepted singular value of the pivot system.
        #[arg(long)]
        min_singular: Option<f64>,
    },
    /// Direction of the drill axis through a known tip.
    Axis {
        recording: PathBuf,
        /// Tip in the marker frame: `x,y,z` or a pivot calibration file.
        #[arg(long, allow_hyphen_values = true)]
        known_point: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
        /// Required ratio of the first to the second singular value.
        #[arg(long)]
        min_ratio: Option<f64>,
    },
}

#[derive(Serialize)]
struct PivotJson {
    kind: &'static str,
    body_frame: String,
    fixed_frame: String,
    point_body: [f64; 3],
    point_fixed: [f64; 3],
    rms: f64,
    n_used: usize,
    n_skipped: usize,
}

#[derive(Serialize)]
struct AxisJson {
    kind: &'static str,
    frame: String,
    point_body: [f64; 3],
    axis: [f64; 3],
    rms: f64,
    n_used: usize,
    n_skipped: usize,
    singular_values: [f64; 3],
}

fn variant(e: &CalibrationError) -> &'static str {
    match e {
        CalibrationError::TooFewMeasurements { .. } => "TooFewMeasurements",
        CalibrationError::DegenerateMotion { .. } => "DegenerateMotion",
        CalibrationError::CollinearPoints { .. } => "CollinearPoints",
        CalibrationError::LengthMismatch { .. } => "LengthMismatch",
        CalibrationError::EmptyInput => "EmptyInput",
        CalibrationError::Geometry(_) => "Geometry",
    }
}

fn solver_error(e: CalibrationError) -> anyhow::Error {
    anyhow!("calibration failed ({}): {e}", variant(&e))
}

fn emit(json: String, rms: f64, out: Option<PathBuf>) -> Result<()> {
    let line = format!("rms {:.4} mm", rms * 1e3);
    match out {
        Some(path) => {
            std::fs::write(&path, json)?;
            println!("{line}");
        }
        None => {
            eprintln!("{line}");
            std::io::stdout().write_all(json.as_bytes())?;
        }
    }
    Ok(())
}

pub fn run(kind: CalibKind) -> Result<()> {
    match kind {
        CalibKind::Pivot { recording, out, min_singular } => {
            let rec = read_recording(&recording)?;
            let mut th = SolverThresholds::default();
            if let Some(s) = min_singular {
                th.pivot_min_singular = s;
            }
            let cal = pivot_calibrate_with(&rec, &th).map_err(solver_error)?;
            let json = to_json(&PivotJson {
                kind: "pivot",
                body_frame: cal.point_body.frame.as_str().to_string(),
                fixed_frame: cal.point_fixed.frame.as_str().to_string(),
                point_body: cal.point_body.coords.into(),
                point_fixed: cal.point_fixed.coords.into(),
                rms: cal.rms,
                n_used: cal.n_used,
                n_skipped: cal.n_skipped,
            })?;
            emit(json, cal.rms, out)
        }
        CalibKind::Axis { recording, known_point, out, min_ratio } => {
            let rec = read_recording(&recording)?;
            let body = rec.frames().0.clone();
            let p = point_arg(&known_point)?;
            let known = Point3::xyz(p[0], p[1], p[2], body.clone());
            let mut opts = AxisOptions::default();
            if let Some(r) = min_ratio {
                opts.thresholds.axis_min_ratio = r;
            }
            let cal = axis_calibrate_with(&rec, &known, &opts).map_err(solver_error)?;
            let json = to_json(&AxisJson {
                kind: "axis",
                frame: body.as_str().to_string(),
                point_body: p,
                axis: (*cal.axis.dir()).into(),
                rms: cal.rms,
                n_used: cal.n_used,
                n_skipped: cal.n_skipped,
                singular_values: cal.singular_values,
            })?;
            emit(json, cal.rms, out)
        }
    }
}
