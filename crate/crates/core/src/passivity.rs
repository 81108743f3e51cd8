//! Energy bookkeeping for the closed loop and an offline audit of trajectory
//! logs.
//!
//! Stored energy is `½q̇ᵀMq̇ + ½m_v q̇_v² + Σ½k_j a_j² + E_s(δ_tip+o_tip) +
//! E_s(δ_base+o_base)`. The audit checks, interval by interval, that its change
//! equals the work of the external forces, minus damper losses, plus the
//! offset work `∫ȯᵀf_s`, plus any work from gravity-compensation error,
//! torque saturation and plan updates.

use std::io::Write;

use nalgebra::{DMatrix, DVector, Vector3};
use serde::Serialize;

pub use crate::controller::spring_energy;
use crate::controller::{buffer_torque, ControllerParams, ControllerState, StepOutput};
use crate::robot::{JointState, RobotModel};
pub use crate::trajectory::EnergyReport;
use crate::trajectory::TrajectoryRow;

/// Stored energy at one instant. `mass` is the inertia matrix the kinetic
/// term is evaluated with.
pub fn stored_energy(
    params: &ControllerParams,
    mass: &DMatrix<f64>,
    joints: &JointState,
    state: &ControllerState,
    out: &StepOutput,
    extensions: &DVector<f64>,
) -> EnergyReport {
    let robot = 0.5 * joints.qdot.dot(&(mass * &joints.qdot));
    let drill = 0.5 * params.mechanism.m_v * state.qdot_v * state.qdot_v;
    let buffer = params
        .buffers
        .iter()
        .zip(extensions.iter())
        .map(|(b, a)| 0.5 * b.k * a * a)
        .sum();
    let spring_tip = spring_energy(&params.tip(), &(out.delta_tip + state.o_tip));
    let spring_base = spring_energy(&params.base(), &(out.delta_base + state.o_base));
    EnergyReport::new(robot, drill, buffer, spring_tip, spring_base)
}

/// Instantaneous damper power (always ≥ 0).
pub fn dissipated_power(
    params: &ControllerParams,
    model: &RobotModel,
    joints: &JointState,
    state: &ControllerState,
    out: &StepOutput,
) -> f64 {
    let mut p = params.mechanism.b_v * state.qdot_v * state.qdot_v
        + params.mechanism.b_tip * out.delta_dot_tip.norm_squared()
        + params.mechanism.b_base * out.delta_dot_base.norm_squared();
    for (i, j) in model.joints.iter().enumerate() {
        let b = buffer_torque(&params.buffers[i], j.lower, j.upper, joints.q[i], joints.qdot[i], params.buffer_form);
        p += b.damping * joints.qdot[i] * joints.qdot[i];
    }
    p
}

/// Upper bound on the offset power `ȯᵀf_s` for an integral gain `k_i` and
/// tracking errors `e`.
pub fn offset_power_bound(k_i: f64, sigma_tip: f64, sigma_base: f64, e_tip: &Vector3<f64>, e_base: &Vector3<f64>) -> f64 {
    k_i * (sigma_tip * e_tip.norm() + sigma_base * e_base.norm())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditOptions {
    pub k_i: f64,
    pub sigma_tip: f64,
    pub sigma_base: f64,
}

/// One control period of the audit. Work terms are in J.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntervalAudit {
    pub t: f64,
    pub dt: f64,
    /// Change of stored energy with the plant's inertia.
    pub delta_energy: f64,
    /// Same with the controller model's inertia.
    pub delta_energy_model: f64,
    pub external_work: f64,
    pub saturation_work: f64,
    pub dissipated: f64,
    pub offset_work: f64,
    pub mismatch_work: f64,
    pub axis_work: f64,
    /// `delta_energy` minus all accounted work.
    pub residual: f64,
    /// Model-book residual with the gravity mismatch left unaccounted.
    pub residual_model: f64,
    /// Energy growth not explained by external, offset, plan or mismatch
    /// work; positive values mean the loop generated energy.
    pub generated: f64,
    /// Mean offset power over the period and its bound.
    pub offset_power: f64,
    pub offset_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AuditReport {
    #[serde(skip)]
    pub intervals: Vec<IntervalAudit>,
    /// Audited time (intervals while the controller was running).
    pub duration: f64,
    pub n_intervals: usize,
    /// `|Σ residual| / duration`.
    pub residual_rate: f64,
    pub max_abs_residual: f64,
    /// Leak rate when the plant is assumed to match the model.
    pub residual_rate_model: f64,
    /// Largest per-interval `generated`.
    pub max_generated: f64,
    /// Largest per-interval `offset_power − offset_bound`.
    pub max_offset_excess: f64,
    pub total_external_work: f64,
    pub total_dissipated: f64,
    pub total_offset_work: f64,
    pub total_mismatch_work: f64,
}

fn mean_dot(a0: &DVector<f64>, a1: &DVector<f64>, b: &DVector<f64>) -> f64 {
    0.5 * (a0 + a1).dot(b)
}

/// Audits consecutive pairs of rows. Intervals that start with the
/// controller stopped are skipped.
pub fn energy_audit(rows: &[TrajectoryRow], opts: &AuditOptions) -> AuditReport {
    let mut intervals = Vec::new();
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if !a.running || !b.running {
            continue;
        }
        let dt = b.t - a.t;
        let external_work = dt * mean_dot(&a.qdot, &b.qdot, &a.u_e);
        let saturation_work = dt * mean_dot(&a.qdot, &b.qdot, &a.sat_torque);
        let dissipated = dt * 0.5 * (a.dissipation + b.dissipation);
        let offset_power = 0.5 * (a.odot_tip.dot(&(a.spring_tip + b.spring_tip)) + a.odot_base.dot(&(a.spring_base + b.spring_base)));
        let offset_work = dt * offset_power;
        let mismatch_work = dt * 0.5 * (a.mismatch_power + b.mismatch_power);
        let axis_work = b.axis_work;

        let stored = |r: &TrajectoryRow| r.energy.total - r.energy.robot + r.e_robot_true;
        let delta_energy = stored(b) - stored(a);
        let delta_energy_model = b.energy.total - a.energy.total;
        let inputs = external_work + saturation_work + offset_work + axis_work;
        let residual = delta_energy - (inputs + mismatch_work - dissipated);
        let residual_model = delta_energy_model - (inputs - dissipated);
        let generated = delta_energy - (inputs + mismatch_work);
        let offset_bound = offset_power_bound(opts.k_i, opts.sigma_tip, opts.sigma_base, &a.e_tip, &a.e_base);
        intervals.push(IntervalAudit {
            t: a.t,
            dt,
            delta_energy,
            delta_energy_model,
            external_work,
            saturation_work,
            dissipated,
            offset_work,
            mismatch_work,
            axis_work,
            residual,
            residual_model,
            generated,
            offset_power,
            offset_bound,
        });
    }

    let duration: f64 = intervals.iter().map(|i| i.dt).sum();
    let sum = |f: fn(&IntervalAudit) -> f64| intervals.iter().map(f).sum::<f64>();
    let max = |f: fn(&IntervalAudit) -> f64| intervals.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let rate = |total: f64| if duration > 0.0 { total.abs() / duration } else { 0.0 };
    AuditReport {
        duration,
        n_intervals: intervals.len(),
        residual_rate: rate(sum(|i| i.residual)),
        max_abs_residual: max(|i| i.residual.abs()).max(0.0),
        residual_rate_model: rate(sum(|i| i.residual_model)),
        max_generated: max(|i| i.generated),
        max_offset_excess: max(|i| i.offset_power - i.offset_bound),
        total_external_work: sum(|i| i.external_work),
        total_dissipated: sum(|i| i.dissipated),
        total_offset_work: sum(|i| i.offset_work),
        total_mismatch_work: sum(|i| i.mismatch_work),
        intervals,
    }
}

/// Writes one CSV row per audited interval.
pub fn write_audit_csv<W: Write>(report: &AuditReport, w: W) -> Result<(), csv::Error> {
    let mut csv = csv::Writer::from_writer(w);
    for i in &report.intervals {
        csv.serialize(i)?;
    }
    csv.flush()?;
    Ok(())
}
