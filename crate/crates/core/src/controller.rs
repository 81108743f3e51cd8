//! Inner-loop virtual-mechanism controller.
//!
//! A virtual drill slides along the planned axis on a prismatic joint. Its
//! tip and a base point `L` behind it are tied to the matching points of the
//! real drill by saturating springs and linear dampers; the spring forces
//! are mapped to joint torques through the point Jacobians. Soft buffers
//! keep each joint away from its limits.

use nalgebra::{Complex, DVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::robot::{JointState, RobotModel};

/// Extensions shorter than this produce exactly zero spring force.
pub const SPRING_DEADBAND: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("non-finite {0}")]
    NonFiniteState(&'static str),
    #[error("invalid parameter {field}: {reason}")]
    InvalidParam { field: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpringDamperParams {
    pub k: f64,
    pub sigma: f64,
    pub b: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VirtualDrillParams {
    pub m_v: f64,
    pub b_v: f64,
    pub length: f64,
}

/// The virtual-mechanism parameter table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MechanismTable {
    pub m_v: f64,
    pub b_v: f64,
    #[serde(rename = "L")]
    pub length: f64,
    pub k_tip: f64,
    pub k_base: f64,
    pub b_tip: f64,
    pub b_base: f64,
    pub sigma_tip: f64,
    pub sigma_base: f64,
}

/// Joint-limit buffer row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointBufferParams {
    pub k: f64,
    pub b_min: f64,
    pub b_plus: f64,
    pub theta: f64,
    pub phi: f64,
}

/// Which buffer-spring expression to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BufferSpringForm {
    /// Extension measured from the engagement point; continuous in `q`.
    #[default]
    Continuous,
    /// `a = q − l̂ − θ` / `a = q − ľ + θ`, which jumps at engagement. Kept
    /// for comparison only.
    Printed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ControllerParams {
    pub mechanism: MechanismTable,
    pub buffers: Vec<JointBufferParams>,
    #[serde(default)]
    pub buffer_form: BufferSpringForm,
}

impl Default for MechanismTable {
    fn default() -> Self {
        ControllerParams::default().mechanism
    }
}

impl Default for ControllerParams {
    fn default() -> Self {
        let row = |k, b_min, b_plus, theta, phi| JointBufferParams {
            k,
            b_min,
            b_plus,
            theta,
            phi,
        };
        ControllerParams {
            mechanism: MechanismTable {
                m_v: 1.0,
                b_v: 0.5,
                length: 2.0,
                k_tip: 4000.0,
                k_base: 100.0,
                b_tip: 40.0,
                b_base: 0.2,
                sigma_tip: 20.0,
                sigma_base: 3.0,
            },
            buffers: vec![
                row(50.0, 0.5, 4.0, 0.3, 0.4),
                row(50.0, 0.5, 4.0, 0.2, 0.2),
                row(50.0, 0.3, 4.0, 0.2, 0.2),
                row(60.0, 0.3, 5.0, 0.3, 0.3),
                row(35.0, 0.2, 2.0, 0.35, 0.35),
                row(30.0, 0.2, 1.5, 0.35, 0.35),
                row(30.0, 0.1, 1.0, 0.35, 0.35),
            ],
            buffer_form: BufferSpringForm::Continuous,
        }
    }
}

impl ControllerParams {
    pub fn tip(&self) -> SpringDamperParams {
        SpringDamperParams {
            k: self.mechanism.k_tip,
            sigma: self.mechanism.sigma_tip,
            b: self.mechanism.b_tip,
        }
    }

    pub fn base(&self) -> SpringDamperParams {
        SpringDamperParams {
            k: self.mechanism.k_base,
            sigma: self.mechanism.sigma_base,
            b: self.mechanism.b_base,
        }
    }

    pub fn drill(&self) -> VirtualDrillParams {
        VirtualDrillParams {
            m_v: self.mechanism.m_v,
            b_v: self.mechanism.b_v,
            length: self.mechanism.length,
        }
    }

    pub fn validate(&self, model: &RobotModel) -> Result<(), ControllerError> {
        let bad = |field: String, reason: &str| Err(ControllerError::InvalidParam { field, reason: reason.into() });
        let t = &self.mechanism;
        for (name, v) in [
            ("m_v", t.m_v),
            ("L", t.length),
            ("k_tip", t.k_tip),
            ("k_base", t.k_base),
            ("sigma_tip", t.sigma_tip),
            ("sigma_base", t.sigma_base),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("mechanism.{name}"), "must be positive");
            }
        }
        for (name, v) in [("b_v", t.b_v), ("b_tip", t.b_tip), ("b_base", t.b_base)] {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("mechanism.{name}"), "must be non-negative");
            }
        }
        if self.buffers.len() != model.dof() {
            return bad("buffers".into(), &format!("{} rows for {} joints", self.buffers.len(), model.dof()));
        }
        for (i, (b, j)) in self.buffers.iter().zip(&model.joints).enumerate() {
            for (name, v) in [("k", b.k), ("b_min", b.b_min), ("b_plus", b.b_plus), ("theta", b.theta), ("phi", b.phi)] {
                if !(v >= 0.0 && v.is_finite()) {
                    return bad(format!("buffers[{i}].{name}"), "must be non-negative");
                }
            }
            if b.phi <= 0.0 {
                return bad(format!("buffers[{i}].phi"), "must be positive");
            }
            if b.theta + b.phi >= 0.5 * (j.upper - j.lower) {
                return bad(format!("buffers[{i}].theta"), "theta + phi exceeds half the joint range");
            }
        }
        Ok(())
    }
}

/// Saturating spring `σ tanh(k|δ|/σ) δ/|δ|`.
pub fn spring_force(p: &SpringDamperParams, delta: &Vector3<f64>) -> Vector3<f64> {
    let n = delta.norm();
    if n < SPRING_DEADBAND {
        return Vector3::zeros();
    }
    let f = delta * (p.sigma * (p.k * n / p.sigma).tanh() / n);
    // tanh rounds to 1 far out; keep |f| <= σ exactly
    let m = f.norm();
    if m > p.sigma {
        f * (p.sigma / m * (1.0 - 4.0 * f64::EPSILON))
    } else {
        f
    }
}

/// `ln cosh x` without overflow, and without cancellation near zero.
pub fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    if a > 20.0 {
        a - std::f64::consts::LN_2 + (-2.0 * a).exp().ln_1p()
    } else if a < 1.0 {
        let s = (0.5 * a).sinh();
        (2.0 * s * s).ln_1p()
    } else {
        a.cosh().ln()
    }
}

/// Potential of [`spring_force`]: `(σ²/k) ln cosh(k|δ|/σ)`.
pub fn spring_energy(p: &SpringDamperParams, delta: &Vector3<f64>) -> f64 {
    p.sigma * p.sigma / p.k * ln_cosh(p.k * delta.norm() / p.sigma)
}

pub fn damper_force(b: f64, delta_dot: &Vector3<f64>) -> Vector3<f64> {
    b * delta_dot
}

fn sat01(x: f64) -> f64 {
    x.clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BufferTorque {
    /// `ν = k a + b q̇`.
    pub torque: f64,
    /// Spring extension `a`.
    pub extension: f64,
    /// Scheduled damping `b(q)`.
    pub damping: f64,
}

/// Joint-limit buffer for one joint with limits `[lower, upper]`.
pub fn buffer_torque(
    p: &JointBufferParams,
    lower: f64,
    upper: f64,
    q: f64,
    qdot: f64,
    form: BufferSpringForm,
) -> BufferTorque {
    let extension = match form {
        BufferSpringForm::Continuous => {
            if q > upper - p.theta {
                q - (upper - p.theta)
            } else if q < lower + p.theta {
                q - (lower + p.theta)
            } else {
                0.0
            }
        }
        BufferSpringForm::Printed => {
            if q > upper - p.theta {
                q - upper - p.theta
            } else if q < lower + p.theta {
                q - lower + p.theta
            } else {
                0.0
            }
        }
    };
    let damping = p.b_min
        + p.b_plus * sat01((q - (upper - p.phi - p.theta)) / p.phi)
        + p.b_plus * sat01((-q + (lower + p.phi + p.theta)) / p.phi);
    BufferTorque {
        torque: p.k * extension + damping * qdot,
        extension,
        damping,
    }
}

/// Poles of the virtual drill held by the tip spring linearised at rest:
/// roots of `m s² + (b_v + b_tip) s + k_tip`.
pub fn linearize_virtual_drill(drill: &VirtualDrillParams, tip: &SpringDamperParams) -> [Complex<f64>; 2] {
    let c = drill.b_v + tip.b;
    let disc = c * c - 4.0 * drill.m_v * tip.k;
    let re = -c / (2.0 * drill.m_v);
    if disc >= 0.0 {
        let s = disc.sqrt() / (2.0 * drill.m_v);
        [Complex::new(re + s, 0.0), Complex::new(re - s, 0.0)]
    } else {
        let s = (-disc).sqrt() / (2.0 * drill.m_v);
        [Complex::new(re, s), Complex::new(re, -s)]
    }
}

/// Calibrated drill geometry in the end-effector frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DrillTool {
    /// Bit tip `p^e_tip`.
    pub tip: Vector3<f64>,
    /// Unit drilling direction `a^e_bit`.
    pub axis: Vector3<f64>,
}

impl DrillTool {
    /// End-effector point `L` along the bit from the tip.
    pub fn base_point(&self, length: f64) -> Vector3<f64> {
        self.tip + length * self.axis
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Running,
    Terminated(TerminationReason),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    BoneTranslation,
    BoneRotation,
    NonFinite,
}

impl Status {
    pub fn is_running(&self) -> bool {
        matches!(self, Status::Running)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Terminated(TerminationReason::BoneTranslation) => "terminated:bone_translation",
            Status::Terminated(TerminationReason::BoneRotation) => "terminated:bone_rotation",
            Status::Terminated(TerminationReason::NonFinite) => "terminated:non_finite",
        }
    }
}

/// Controller state. Positions are in the robot base frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerState {
    pub q_v: f64,
    pub qdot_v: f64,
    pub o_tip: Vector3<f64>,
    pub o_base: Vector3<f64>,
    /// Planned entry point; `q_v = 0` puts the virtual tip here.
    pub axis_origin: Vector3<f64>,
    /// Unit entry→exit direction.
    pub axis_dir: Vector3<f64>,
    pub status: Status,
}

impl ControllerState {
    /// Starts with the virtual tip at the projection of the current tip onto
    /// the axis, at rest, with zero offsets.
    pub fn initialize(
        model: &RobotModel,
        tool: &DrillTool,
        q: &DVector<f64>,
        axis_origin: Vector3<f64>,
        axis_dir: Vector3<f64>,
    ) -> Self {
        let dir = axis_dir.normalize();
        let tip = model.chain(q).point(&tool.tip);
        ControllerState {
            q_v: (tip - axis_origin).dot(&dir),
            qdot_v: 0.0,
            o_tip: Vector3::zeros(),
            o_base: Vector3::zeros(),
            axis_origin,
            axis_dir: dir,
            status: Status::Running,
        }
    }

    pub fn virtual_tip(&self) -> Vector3<f64> {
        self.axis_origin + self.q_v * self.axis_dir
    }

    pub fn virtual_base(&self, length: f64) -> Vector3<f64> {
        self.virtual_tip() + length * self.axis_dir
    }

    /// Moves the axis while keeping the virtual tip at the same depth
    /// relative to the new origin.
    pub fn set_axis(&mut self, origin: Vector3<f64>, dir: Vector3<f64>) {
        self.axis_origin = origin;
        self.axis_dir = dir.normalize();
    }
}

/// Everything computed during one controller step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Commanded joint torques after saturation.
    pub torque: DVector<f64>,
    /// Torques before saturation.
    pub torque_raw: DVector<f64>,
    pub saturated: Vec<bool>,
    pub gravity: DVector<f64>,
    pub buffer: DVector<f64>,
    pub z_tip: Vector3<f64>,
    pub z_base: Vector3<f64>,
    pub z_v_tip: Vector3<f64>,
    pub z_v_base: Vector3<f64>,
    pub delta_tip: Vector3<f64>,
    pub delta_base: Vector3<f64>,
    pub delta_dot_tip: Vector3<f64>,
    pub delta_dot_base: Vector3<f64>,
    pub spring_tip: Vector3<f64>,
    pub spring_base: Vector3<f64>,
    /// Spring plus damper force acting on the virtual tip.
    pub f_tip: Vector3<f64>,
    pub f_base: Vector3<f64>,
    pub u_v: f64,
}

#[derive(Debug, Clone)]
pub struct VmController {
    pub params: ControllerParams,
    pub model: RobotModel,
    pub tool: DrillTool,
}

impl VmController {
    pub fn new(params: ControllerParams, model: RobotModel, tool: DrillTool) -> Result<Self, ControllerError> {
        params.validate(&model)?;
        Ok(VmController { params, model, tool })
    }

    /// Joint buffer torques `ν` and the buffer extensions.
    pub fn buffers(&self, joints: &JointState) -> (DVector<f64>, DVector<f64>) {
        let n = self.model.dof();
        let mut nu = DVector::zeros(n);
        let mut ext = DVector::zeros(n);
        for i in 0..n {
            let j = &self.model.joints[i];
            let b = buffer_torque(&self.params.buffers[i], j.lower, j.upper, joints.q[i], joints.qdot[i], self.params.buffer_form);
            nu[i] = b.torque;
            ext[i] = b.extension;
        }
        (nu, ext)
    }

    /// One control period: returns the torques and advances the virtual
    /// drill by `dt`. A terminated controller holds the arm with `g − ν` and
    /// leaves the virtual drill untouched.
    pub fn step(&self, joints: &JointState, state: &ControllerState, dt: f64) -> Result<(ControllerState, StepOutput), ControllerError> {
        if !joints.is_finite() {
            return Err(ControllerError::NonFiniteState("joint state"));
        }
        if ![state.q_v, state.qdot_v].iter().chain(state.o_tip.iter()).chain(state.o_base.iter()).all(|v| v.is_finite()) {
            return Err(ControllerError::NonFiniteState("controller state"));
        }
        let drill = self.params.drill();
        let tip = self.params.tip();
        let base = self.params.base();

        let chain = self.model.chain(&joints.q);
        let gravity = self.model.gravity_torque_for(&chain);
        let (nu, _) = self.buffers(joints);

        let z_tip = chain.point(&self.tool.tip);
        let z_base = chain.point(&self.tool.base_point(drill.length));
        let j_tip = chain.point_jacobian(&z_tip);
        let j_base = chain.point_jacobian(&z_base);
        let dir = state.axis_dir;
        let z_v_tip = state.virtual_tip();
        let z_v_base = state.virtual_base(drill.length);

        let delta_tip = z_tip - z_v_tip;
        let delta_base = z_base - z_v_base;
        let zdot_tip: Vector3<f64> = (&j_tip * &joints.qdot).fixed_rows::<3>(0).into();
        let zdot_base: Vector3<f64> = (&j_base * &joints.qdot).fixed_rows::<3>(0).into();
        let delta_dot_tip = zdot_tip - dir * state.qdot_v;
        let delta_dot_base = zdot_base - dir * state.qdot_v;

        let spring_tip = spring_force(&tip, &(delta_tip + state.o_tip));
        let spring_base = spring_force(&base, &(delta_base + state.o_base));
        let f_tip = spring_tip + damper_force(tip.b, &delta_dot_tip);
        let f_base = spring_base + damper_force(base.b, &delta_dot_base);
        let u_v = dir.dot(&(f_tip + f_base));

        let mut next = state.clone();
        let mut torque_raw = &gravity - &nu;
        if state.status.is_running() {
            torque_raw -= j_tip.transpose() * DVector::from_column_slice(f_tip.as_slice());
            torque_raw -= j_base.transpose() * DVector::from_column_slice(f_base.as_slice());
            let qddot_v = (u_v - drill.b_v * state.qdot_v) / drill.m_v;
            next.qdot_v += dt * qddot_v;
            next.q_v += dt * next.qdot_v;
        }

        let limits = self.model.torque_limits();
        let mut torque = torque_raw.clone();
        let mut saturated = vec![false; torque.len()];
        for i in 0..torque.len() {
            if torque[i].abs() > limits[i] {
                torque[i] = torque[i].clamp(-limits[i], limits[i]);
                saturated[i] = true;
            }
        }

        Ok((
            next,
            StepOutput {
                torque,
                torque_raw,
                saturated,
                gravity,
                buffer: nu,
                z_tip,
                z_base,
                z_v_tip,
                z_v_base,
                delta_tip,
                delta_base,
                delta_dot_tip,
                delta_dot_base,
                spring_tip,
                spring_base,
                f_tip,
                f_base,
                u_v,
            },
        ))
    }
}
