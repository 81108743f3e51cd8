//! Accuracy of a drilled hole against its plan.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::geometry::angle_between;
use crate::trajectory::{Phase, TrajectoryRow};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialMetrics {
    pub entry_translation_err: f64,
    pub exit_translation_err: f64,
    pub angular_deviation: f64,
    pub max_spring_offset: f64,
    pub terminated_early: bool,
}

/// Least-squares line through `points`: centroid and unit direction
/// (sign chosen to agree with `hint`).
pub fn fit_line(points: &[Vector3<f64>], hint: &Vector3<f64>) -> Option<(Vector3<f64>, Vector3<f64>)> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let c = points.iter().sum::<Vector3<f64>>() / n;
    let mut s = Matrix3::zeros();
    for p in points {
        let d = p - c;
        s += d * d.transpose();
    }
    let eig = s.symmetric_eigen();
    let (i, _) = eig.eigenvalues.iter().enumerate().fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    if eig.eigenvalues[i] <= 0.0 {
        return None;
    }
    let mut d: Vector3<f64> = eig.eigenvectors.column(i).into();
    if d.dot(hint) < 0.0 {
        d = -d;
    }
    Some((c, d))
}

/// Where the line `(c, d)` crosses the plane through `p` normal to `n`.
fn intersect_plane(c: &Vector3<f64>, d: &Vector3<f64>, p: &Vector3<f64>, n: &Vector3<f64>) -> Option<Vector3<f64>> {
    let den = d.dot(n);
    if den.abs() < 1e-12 {
        return None;
    }
    Some(c + d * ((p - c).dot(n) / den))
}

/// Entry error (mm), exit error (mm) and angle (deg) of a fitted hole, each
/// measured in the plane normal to the planned axis through the planned
/// point.
pub fn hole_errors(points: &[Vector3<f64>], entry: &Vector3<f64>, exit: &Vector3<f64>) -> Option<(f64, f64, f64)> {
    let plan = (exit - entry).normalize();
    let (c, d) = fit_line(points, &plan)?;
    let at_entry = intersect_plane(&c, &d, entry, &plan)?;
    let at_exit = intersect_plane(&c, &d, exit, &plan)?;
    Some(((at_entry - entry).norm() * 1e3, (at_exit - exit).norm() * 1e3, angle_between(&d, &plan).to_degrees()))
}

/// Collects what the metrics need, one control step at a time, so a trial
/// and a replay of its log give identical numbers.
#[derive(Debug, Clone, Default)]
pub struct MetricsAccumulator {
    feed_points: Vec<Vector3<f64>>,
    max_offset: f64,
    terminated: bool,
}

impl MetricsAccumulator {
    pub fn push(&mut self, phase: Phase, running: bool, tip_scan: &Vector3<f64>, o_tip: &Vector3<f64>) {
        if phase == Phase::Feed && running {
            self.feed_points.push(*tip_scan);
        }
        self.max_offset = self.max_offset.max(o_tip.norm());
        self.terminated |= !running;
    }

    pub fn push_row(&mut self, row: &TrajectoryRow) {
        self.push(row.phase, row.running, &row.tip_scan, &row.o_tip);
    }

    pub fn feed_points(&self) -> &[Vector3<f64>] {
        &self.feed_points
    }

    /// Errors are NaN when no hole was drilled.
    pub fn finish(&self, entry: &Vector3<f64>, exit: &Vector3<f64>) -> TrialMetrics {
        let (en, ex, ang) = hole_errors(&self.feed_points, entry, exit).unwrap_or((f64::NAN, f64::NAN, f64::NAN));
        TrialMetrics {
            entry_translation_err: en,
            exit_translation_err: ex,
            angular_deviation: ang,
            max_spring_offset: self.max_offset,
            terminated_early: self.terminated,
        }
    }
}

/// Metrics recomputed from a full-rate trajectory log.
pub fn metrics_from_log(rows: &[TrajectoryRow], entry: &Vector3<f64>, exit: &Vector3<f64>) -> TrialMetrics {
    let mut acc = MetricsAccumulator::default();
    for r in rows {
        acc.push_row(r);
    }
    acc.finish(entry, exit)
}
