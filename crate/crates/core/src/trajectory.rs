//! Per-step trajectory log of a simulated trial, and its CSV form.

use std::io::{Read, Write};

use nalgebra::{DVector, Vector3};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LogError {
    #[error("missing column {0:?}")]
    MissingColumn(String),
    #[error("row {row}, column {column:?}: {value:?} is not a number")]
    BadValue { row: usize, column: String, value: String },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Trial phase recorded with each row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Settle = 0,
    Feed = 1,
    Done = 2,
}

impl Phase {
    fn from_code(v: f64) -> Phase {
        match v as i64 {
            0 => Phase::Settle,
            1 => Phase::Feed,
            _ => Phase::Done,
        }
    }
}

/// Energy stored in the closed loop.
#[derive(Debug, Clone, Copy, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct EnergyReport {
    /// `½q̇ᵀMq̇`.
    pub robot: f64,
    /// `½m_v q̇_v²`.
    pub drill: f64,
    /// `Σ½k_j a_j²`.
    pub buffer: f64,
    pub spring_tip: f64,
    pub spring_base: f64,
    pub total: f64,
}

impl EnergyReport {
    pub fn new(robot: f64, drill: f64, buffer: f64, spring_tip: f64, spring_base: f64) -> Self {
        EnergyReport {
            robot,
            drill,
            buffer,
            spring_tip,
            spring_base,
            total: robot + drill + buffer + spring_tip + spring_base,
        }
    }
}

/// State at the start of a control period plus everything applied during it.
/// Robot-frame quantities unless noted.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub running: bool,
    pub phase: Phase,
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
    pub q_v: f64,
    pub qdot_v: f64,
    pub o_tip: Vector3<f64>,
    pub o_base: Vector3<f64>,
    /// Offset rates realised over this period.
    pub odot_tip: Vector3<f64>,
    pub odot_base: Vector3<f64>,
    /// Drill tip from the controller's model.
    pub z_tip: Vector3<f64>,
    /// Actual drill tip.
    pub z_tip_true: Vector3<f64>,
    /// Most recent tracker estimate of the tip (NaN before the first one).
    pub z_bar_tip: Vector3<f64>,
    /// Actual drill tip in the scan frame.
    pub tip_scan: Vector3<f64>,
    pub axis_origin: Vector3<f64>,
    pub axis_dir: Vector3<f64>,
    /// Tracking errors the offset rates were computed from.
    pub e_tip: Vector3<f64>,
    pub e_base: Vector3<f64>,
    pub torque: DVector<f64>,
    pub torque_sat: Vec<bool>,
    /// Joint torque of external forces.
    pub u_e: DVector<f64>,
    /// Applied minus demanded torque (non-zero only when saturated).
    pub sat_torque: DVector<f64>,
    pub spring_tip: Vector3<f64>,
    pub spring_base: Vector3<f64>,
    /// Stored energy with the controller's model.
    pub energy: EnergyReport,
    /// `½q̇ᵀMq̇` with the plant's mass matrix.
    pub e_robot_true: f64,
    /// Damper power `b_v q̇_v² + b|δ̇|² + Σ b_j q̇_j²`.
    pub dissipation: f64,
    /// `q̇ᵀ(g_model − g_plant)`, power of the gravity-compensation error.
    pub mismatch_power: f64,
    /// Spring energy added by moving the planned axis at the start of this
    /// period.
    pub axis_work: f64,
}

fn vec_cols(out: &mut Vec<String>, name: &str, n: usize) {
    for i in 0..n {
        out.push(format!("{name}{i}"));
    }
}

fn xyz_cols(out: &mut Vec<String>, name: &str) {
    for c in ["x", "y", "z"] {
        out.push(format!("{name}_{c}"));
    }
}

/// CSV header for a `dof`-joint robot.
pub fn header(dof: usize) -> Vec<String> {
    let mut h = vec!["t".to_string(), "running".into(), "phase".into()];
    vec_cols(&mut h, "q", dof);
    vec_cols(&mut h, "qdot", dof);
    h.push("q_v".into());
    h.push("qdot_v".into());
    for name in [
        "o_tip", "o_base", "odot_tip", "odot_base", "z_tip", "z_tip_true", "z_bar_tip", "tip_scan", "axis_origin", "axis_dir",
        "e_tip", "e_base",
    ] {
        xyz_cols(&mut h, name);
    }
    vec_cols(&mut h, "torque", dof);
    vec_cols(&mut h, "sat", dof);
    vec_cols(&mut h, "u_e", dof);
    vec_cols(&mut h, "sat_torque", dof);
    xyz_cols(&mut h, "spring_tip");
    xyz_cols(&mut h, "spring_base");
    for e in ["robot", "drill", "buffer", "spring_tip", "spring_base", "total"] {
        h.push(format!("energy_{e}"));
    }
    h.push("energy_robot_true".into());
    h.push("dissipation".into());
    h.push("mismatch_power".into());
    h.push("axis_work".into());
    h
}

impl TrajectoryRow {
    fn values(&self) -> Vec<f64> {
        let mut v = vec![self.t, self.running as u8 as f64, self.phase as u8 as f64];
        v.extend(self.q.iter());
        v.extend(self.qdot.iter());
        v.push(self.q_v);
        v.push(self.qdot_v);
        for x in [
            &self.o_tip,
            &self.o_base,
            &self.odot_tip,
            &self.odot_base,
            &self.z_tip,
            &self.z_tip_true,
            &self.z_bar_tip,
            &self.tip_scan,
            &self.axis_origin,
            &self.axis_dir,
            &self.e_tip,
            &self.e_base,
        ] {
            v.extend(x.iter());
        }
        v.extend(self.torque.iter());
        v.extend(self.torque_sat.iter().map(|&b| b as u8 as f64));
        v.extend(self.u_e.iter());
        v.extend(self.sat_torque.iter());
        v.extend(self.spring_tip.iter());
        v.extend(self.spring_base.iter());
        let e = &self.energy;
        v.extend([e.robot, e.drill, e.buffer, e.spring_tip, e.spring_base, e.total]);
        v.push(self.e_robot_true);
        v.push(self.dissipation);
        v.push(self.mismatch_power);
        v.push(self.axis_work);
        v
    }

    fn from_values(v: &[f64], dof: usize) -> TrajectoryRow {
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("row length checked");
        let t = next();
        let running = next() != 0.0;
        let phase = Phase::from_code(next());
        let dvec = |next: &mut dyn FnMut() -> f64| DVector::from_iterator(dof, (0..dof).map(|_| next()));
        let q = dvec(&mut next);
        let qdot = dvec(&mut next);
        let q_v = next();
        let qdot_v = next();
        let v3 = |next: &mut dyn FnMut() -> f64| Vector3::new(next(), next(), next());
        let o_tip = v3(&mut next);
        let o_base = v3(&mut next);
        let odot_tip = v3(&mut next);
        let odot_base = v3(&mut next);
        let z_tip = v3(&mut next);
        let z_tip_true = v3(&mut next);
        let z_bar_tip = v3(&mut next);
        let tip_scan = v3(&mut next);
        let axis_origin = v3(&mut next);
        let axis_dir = v3(&mut next);
        let e_tip = v3(&mut next);
        let e_base = v3(&mut next);
        let torque = dvec(&mut next);
        let torque_sat = (0..dof).map(|_| next() != 0.0).collect();
        let u_e = dvec(&mut next);
        let sat_torque = dvec(&mut next);
        let spring_tip = v3(&mut next);
        let spring_base = v3(&mut next);
        let energy = EnergyReport {
            robot: next(),
            drill: next(),
            buffer: next(),
            spring_tip: next(),
            spring_base: next(),
            total: next(),
        };
        TrajectoryRow {
            t,
            running,
            phase,
            q,
            qdot,
            q_v,
            qdot_v,
            o_tip,
            o_base,
            odot_tip,
            odot_base,
            z_tip,
            z_tip_true,
            z_bar_tip,
            tip_scan,
            axis_origin,
            axis_dir,
            e_tip,
            e_base,
            torque,
            torque_sat,
            u_e,
            sat_torque,
            spring_tip,
            spring_base,
            energy,
            e_robot_true: next(),
            dissipation: next(),
            mismatch_power: next(),
            axis_work: next(),
        }
    }
}

pub fn write_csv<W: Write>(rows: &[TrajectoryRow], dof: usize, w: W) -> Result<(), LogError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(header(dof))?;
    let mut buf = Vec::with_capacity(128);
    for r in rows {
        buf.clear();
        for v in r.values() {
            buf.push(format_f64(v));
        }
        csv.write_record(&buf)?;
    }
    csv.flush()?;
    Ok(())
}

/// Shortest representation that parses back to the same value.
fn format_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:?}")
    }
}

/// Reads a log, inferring the joint count from the header.
pub fn read_csv<R: Read>(r: R) -> Result<(Vec<TrajectoryRow>, usize), LogError> {
    let mut csv = csv::Reader::from_reader(r);
    let names: Vec<String> = csv.headers()?.iter().map(str::to_string).collect();
    let dof = names.iter().filter(|n| n.starts_with("qdot") && n[4..].parse::<usize>().is_ok()).count();
    let expected = header(dof);
    let index: Vec<usize> = expected
        .iter()
        .map(|c| names.iter().position(|n| n == c).ok_or_else(|| LogError::MissingColumn(c.clone())))
        .collect::<Result<_, _>>()?;
    let mut rows = Vec::new();
    let mut values = vec![0.0; expected.len()];
    for (i, rec) in csv.records().enumerate() {
        let rec = rec?;
        for (slot, (&col, name)) in values.iter_mut().zip(index.iter().zip(&expected)) {
            let text = rec.get(col).unwrap_or("");
            *slot = text.trim().parse().map_err(|_| LogError::BadValue {
                row: i + 1,
                column: name.clone(),
                value: text.to_string(),
            })?;
        }
        rows.push(TrajectoryRow::from_values(&values, dof));
    }
    Ok((rows, dof))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_row(dof: usize, t: f64) -> TrajectoryRow {
        let d = |s: f64| DVector::from_iterator(dof, (0..dof).map(|i| s + i as f64 * 0.1));
        let v = |s: f64| Vector3::new(s, -s, 0.5 * s);
        TrajectoryRow {
            t,
            running: true,
            phase: Phase::Feed,
            q: d(0.3),
            qdot: d(-0.01),
            q_v: 0.02,
            qdot_v: 1e-3,
            o_tip: v(1e-4),
            o_base: v(2e-3),
            odot_tip: v(1e-5),
            odot_base: v(-1e-5),
            z_tip: v(0.5),
            z_tip_true: v(0.501),
            z_bar_tip: Vector3::new(f64::NAN, f64::NAN, f64::NAN),
            tip_scan: v(0.01),
            axis_origin: v(0.4),
            axis_dir: Vector3::new(0.0, 0.0, -1.0),
            e_tip: v(3e-4),
            e_base: v(1e-3),
            torque: d(1.0),
            torque_sat: (0..dof).map(|i| i == 2).collect(),
            u_e: d(0.0),
            sat_torque: d(0.0),
            spring_tip: v(0.3),
            spring_base: v(0.01),
            energy: EnergyReport::new(0.1, 0.2, 0.0, 1.0 / 3.0, 1e-9),
            e_robot_true: 0.1000001,
            dissipation: 0.05,
            mismatch_power: -1e-7,
            axis_work: 0.0,
        }
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let rows = vec![sample_row(7, 0.0), sample_row(7, 0.001)];
        let mut buf = Vec::new();
        write_csv(&rows, 7, &mut buf).unwrap();
        let (back, dof) = read_csv(buf.as_slice()).unwrap();
        assert_eq!(dof, 7);
        assert_eq!(back.len(), 2);
        for (a, b) in rows.iter().zip(&back) {
            assert_eq!(a.values().len(), b.values().len());
            for (x, y) in a.values().iter().zip(b.values()) {
                assert!(x == &y || (x.is_nan() && y.is_nan()));
            }
        }
    }

    #[test]
    fn header_length_matches_values() {
        assert_eq!(header(7).len(), sample_row(7, 0.0).values().len());
        assert_eq!(header(3).len(), sample_row(3, 0.0).values().len());
    }

    #[test]
    fn missing_column_is_named() {
        let text = "t,running\n0,1\n";
        match read_csv(text.as_bytes()) {
            Err(LogError::MissingColumn(c)) => assert_eq!(c, "phase"),
            other => panic!("{other:?}"),
        }
    }
}
