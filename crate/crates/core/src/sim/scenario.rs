//! Trial description, loaded from JSON. Every section has defaults, so `{}`
//! is the bundled scenario.

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerError, ControllerParams};
use crate::geometry::{FrameId, RigidTransform};
use crate::outer_loop::OuterLoopParams;
use crate::robot::{RobotConfig, RobotModel};

use super::SimError;

const BUNDLED: &str = include_str!("../../data/scenario.json");

/// A pose in SI units: translation in m, fixed-axis roll/pitch/yaw in rad.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pose {
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl Pose {
    pub fn transform(&self, from: FrameId, to: FrameId) -> RigidTransform {
        let r = Rotation3::from_euler_angles(self.rpy[0], self.rpy[1], self.rpy[2]);
        RigidTransform::from_rotation(r, Vector3::from(self.xyz), from, to)
    }
}

/// Ground-truth placement of everything in the room.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    /// Tracker frame in the robot base frame.
    pub camera: Pose,
    /// Scan frame in the robot base frame.
    pub bone: Pose,
    /// Bone marker in the scan frame.
    pub bone_marker: Pose,
    /// Drill marker in the end-effector frame.
    pub drill_marker: Pose,
    /// Drill tip and bit direction in the end-effector frame.
    pub drill_tip: [f64; 3],
    pub drill_axis: [f64; 3],
    /// Probe tip in the probe frame.
    pub probe_tip: [f64; 3],
    /// Registration landmarks and planned hole, scan frame.
    pub landmarks: Vec<[f64; 3]>,
    pub entry: [f64; 3],
    pub exit: [f64; 3],
    /// Joint posture the arm is placed near at the start.
    pub posture: Vec<f64>,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            camera: Pose { xyz: [1.6, 0.1, 1.0], rpy: [0.3, 2.2, 3.0] },
            bone: Pose { xyz: [0.5, 0.0, 0.2], rpy: [0.05, -0.04, 0.3] },
            bone_marker: Pose { xyz: [0.06, 0.07, 0.05], rpy: [0.2, 0.1, -0.5] },
            drill_marker: Pose { xyz: [0.08, 0.04, 0.12], rpy: [0.4, -0.2, 0.9] },
            drill_tip: [0.05, 0.0, 0.2],
            drill_axis: [0.0, 0.0, 1.0],
            probe_tip: [0.01, -0.005, 0.15],
            landmarks: vec![
                [0.03, 0.0, 0.0],
                [-0.03, 0.01, 0.01],
                [0.0, 0.035, 0.02],
                [0.0, -0.03, 0.015],
                [0.02, 0.02, 0.045],
                [-0.02, -0.02, 0.04],
                [0.035, -0.02, 0.03],
            ],
            entry: [0.0, 0.0, 0.05],
            exit: [0.004, -0.003, 0.011],
            posture: vec![0.0, -0.3, 0.0, -2.2, 0.0, 1.9, 0.785],
        }
    }
}

/// How the plant differs from the controller's model. Drawn afresh for
/// each trial.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantConfig {
    /// Largest displacement of each joint origin, m.
    pub joint_offset: f64,
    /// Largest rotation of each joint origin, rad.
    pub joint_angle: f64,
    /// Largest relative error of each link mass.
    pub mass_error: f64,
    /// Error of the controller's drill-tip estimate, m (random direction).
    pub tool_tip_bias: f64,
    /// Error of the controller's bit direction, rad (random direction).
    pub tool_axis_bias: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        PlantConfig {
            joint_offset: 0.0005,
            joint_angle: 0.1f64.to_radians(),
            mass_error: 0.0,
            tool_tip_bias: 0.003,
            tool_axis_bias: 0.3f64.to_radians(),
        }
    }
}

/// Tracker noise. `sigma` is the RMS length of the 3D translation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VisionNoise {
    pub sigma: f64,
    /// RMS rotation error angle, rad.
    pub sigma_rot: f64,
    /// Probability that a marker is missing from a frame.
    pub dropout_prob: f64,
    pub latency_frames: usize,
}

impl Default for VisionNoise {
    fn default() -> Self {
        VisionNoise {
            sigma: 0.25e-3,
            sigma_rot: 0.05f64.to_radians(),
            dropout_prob: 0.02,
            latency_frames: 0,
        }
    }
}

impl VisionNoise {
    pub fn none() -> Self {
        VisionNoise { sigma: 0.0, sigma_rot: 0.0, dropout_prob: 0.0, latency_frames: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibrationMode {
    /// Run the calibration and registration procedures on synthetic noisy
    /// measurements.
    #[default]
    Simulated,
    /// Give the controller the true transforms (the tool estimate still
    /// carries the plant's tool bias).
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationConfig {
    pub mode: CalibrationMode,
    pub pivot_samples: usize,
    pub axis_samples: usize,
    pub measurements_per_landmark: usize,
    /// Largest offset between a landmark in the scan and where it is
    /// touched on the bone, m.
    pub landmark_bias: f64,
    /// RMS scatter of repeated probe placements, m.
    pub probe_placement: f64,
    pub handeye_poses: usize,
    /// Largest joint excursion of the hand-eye poses, rad.
    pub handeye_spread: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            mode: CalibrationMode::Simulated,
            pivot_samples: 600,
            axis_samples: 600,
            measurements_per_landmark: 15,
            landmark_bias: 0.001,
            probe_placement: 0.0005,
            handeye_poses: 10,
            handeye_spread: 0.15,
        }
    }
}

/// The simulated surgeon: holds the drill while the loop settles, then
/// pushes it along the bit at a governed speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeedConfig {
    pub enabled: bool,
    /// Time before the feed starts, s.
    pub settle: f64,
    /// Start this far before the entry point, m.
    pub approach: f64,
    /// Target feed speed, m/s.
    pub speed: f64,
    /// Speed governor gain, N·s/m.
    pub gain: f64,
    /// The force limit ramps from 0 to `max_force` over `ramp_time`.
    pub max_force: f64,
    pub ramp_time: f64,
    /// Stop this far past the exit point, m.
    pub overshoot: f64,
    /// Axial hold while not feeding, N/m and N·s/m.
    pub hold_stiffness: f64,
    pub hold_damping: f64,
    /// Damping of the hand on the drill, N·s/m.
    pub hand_damping: f64,
    /// Damping of the grip against spinning the drill about its bit, N·m·s/rad.
    pub grip_damping: f64,
}

impl Default for FeedConfig {
    fn default() -> Self {
        FeedConfig {
            enabled: true,
            settle: 5.0,
            approach: 0.02,
            speed: 0.005,
            gain: 500.0,
            max_force: 15.0,
            ramp_time: 10.0,
            overshoot: 0.005,
            hold_stiffness: 300.0,
            hold_damping: 60.0,
            hand_damping: 20.0,
            grip_damping: 0.5,
        }
    }
}

/// Initial misplacement of the drill relative to the approach point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialConfig {
    pub lateral: f64,
    pub tilt: f64,
    /// Largest initial joint speed, rad/s.
    pub joint_speed: f64,
}

impl Default for InitialConfig {
    fn default() -> Self {
        InitialConfig { lateral: 0.001, tilt: 0.5f64.to_radians(), joint_speed: 0.0 }
    }
}

/// Rigid bone displacement starting at `t`, reached linearly over `ramp`
/// seconds: rotation by `angle` about `axis` through the scan origin, then
/// translation `dp` (robot frame).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoneEvent {
    pub t: f64,
    #[serde(default)]
    pub dp: [f64; 3],
    #[serde(default = "default_axis")]
    pub axis: [f64; 3],
    #[serde(default)]
    pub angle: f64,
    #[serde(default)]
    pub ramp: f64,
}

fn default_axis() -> [f64; 3] {
    [0.0, 0.0, 1.0]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForcePoint {
    Tip,
    Base,
}

/// Constant force on the real drill over `[start, end)`, robot frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForceEvent {
    pub start: f64,
    pub end: f64,
    pub point: ForcePoint,
    pub f: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    /// Longest simulated time, s.
    pub duration: f64,
    pub dt: f64,
    /// Plant integration steps per control period.
    pub substeps: usize,
    /// Controller's robot description; the bundled arm when absent.
    pub robot: Option<RobotConfig>,
    pub plant: PlantConfig,
    pub controller: ControllerParams,
    pub outer_loop: OuterLoopParams,
    pub vision: VisionNoise,
    pub calibration: CalibrationConfig,
    pub world: WorldConfig,
    pub feed: FeedConfig,
    pub initial: InitialConfig,
    pub bone_events: Vec<BoneEvent>,
    pub forces: Vec<ForceEvent>,
}

impl Default for Scenario {
    fn default() -> Self {
        Scenario {
            name: "default".into(),
            seed: 1,
            duration: 60.0,
            dt: 1e-3,
            substeps: 1,
            robot: None,
            plant: PlantConfig::default(),
            controller: ControllerParams::default(),
            outer_loop: OuterLoopParams::default(),
            vision: VisionNoise::default(),
            calibration: CalibrationConfig::default(),
            world: WorldConfig::default(),
            feed: FeedConfig::default(),
            initial: InitialConfig::default(),
            bone_events: Vec::new(),
            forces: Vec::new(),
        }
    }
}

fn invalid(field: &str, reason: impl Into<String>) -> SimError {
    SimError::InvalidScenario { field: field.to_string(), reason: reason.into() }
}

fn check(ok: bool, field: &str, reason: &str) -> Result<(), SimError> {
    if ok {
        Ok(())
    } else {
        Err(invalid(field, reason))
    }
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl Scenario {
    pub fn bundled() -> Self {
        Scenario::from_json(BUNDLED).expect("bundled scenario is valid")
    }

    /// Parses and validates. Errors name the offending field.
    pub fn from_json(text: &str) -> Result<Self, SimError> {
        let mut de = serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(&mut de).map_err(|e| SimError::ScenarioParse {
            field: e.path().to_string(),
            reason: e.inner().to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serialises")
    }

    pub fn nominal_model(&self) -> Result<RobotModel, SimError> {
        match &self.robot {
            None => Ok(RobotModel::bundled()),
            Some(c) => c.clone().into_model().map_err(|e| invalid("robot", e.to_string())),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        check(self.duration > 0.0 && self.duration.is_finite(), "duration", "must be positive")?;
        check(self.dt > 0.0 && self.dt <= 0.01, "dt", "must be in (0, 0.01]")?;
        check(self.substeps >= 1, "substeps", "must be at least 1")?;
        let model = self.nominal_model()?;
        self.controller.validate(&model).map_err(|e| match e {
            ControllerError::InvalidParam { field, reason } => invalid(&format!("controller.{field}"), reason),
            e => invalid("controller", e.to_string()),
        })?;
        self.outer_loop
            .validate()
            .map_err(|(field, reason)| invalid(&format!("outer_loop.{field}"), reason))?;
        let frame_period = 1.0 / (self.outer_loop.rate * self.dt);
        check(
            (frame_period - frame_period.round()).abs() < 1e-9 && frame_period >= 1.0,
            "outer_loop.rate",
            "must divide the control rate",
        )?;

        let v = &self.vision;
        check(v.sigma >= 0.0 && v.sigma.is_finite(), "vision.sigma", "must be non-negative")?;
        check(v.sigma_rot >= 0.0 && v.sigma_rot.is_finite(), "vision.sigma_rot", "must be non-negative")?;
        check((0.0..=1.0).contains(&v.dropout_prob), "vision.dropout_prob", "must be in [0, 1]")?;

        let p = &self.plant;
        for (name, x) in [
            ("plant.joint_offset", p.joint_offset),
            ("plant.joint_angle", p.joint_angle),
            ("plant.mass_error", p.mass_error),
            ("plant.tool_tip_bias", p.tool_tip_bias),
            ("plant.tool_axis_bias", p.tool_axis_bias),
        ] {
            check(x >= 0.0 && x.is_finite(), name, "must be non-negative")?;
        }
        check(p.mass_error < 1.0, "plant.mass_error", "must be below 1")?;

        let c = &self.calibration;
        check(c.pivot_samples >= 3, "calibration.pivot_samples", "must be at least 3")?;
        check(c.axis_samples >= 3, "calibration.axis_samples", "must be at least 3")?;
        check(c.measurements_per_landmark >= 1, "calibration.measurements_per_landmark", "must be at least 1")?;
        check(c.handeye_poses >= 3, "calibration.handeye_poses", "must be at least 3")?;
        for (name, x) in [
            ("calibration.landmark_bias", c.landmark_bias),
            ("calibration.probe_placement", c.probe_placement),
            ("calibration.handeye_spread", c.handeye_spread),
        ] {
            check(x >= 0.0 && x.is_finite(), name, "must be non-negative")?;
        }

        let w = &self.world;
        check(w.landmarks.len() >= 3, "world.landmarks", "need at least 3")?;
        check(
            finite(&w.drill_tip) && finite(&w.probe_tip) && finite(&w.entry) && finite(&w.exit),
            "world",
            "points must be finite",
        )?;
        check(Vector3::from(w.drill_axis).norm() > 1e-9, "world.drill_axis", "must be non-zero")?;
        check(
            (Vector3::from(w.exit) - Vector3::from(w.entry)).norm() > 1e-6,
            "world.exit",
            "must differ from world.entry",
        )?;
        check(w.posture.len() == model.dof(), "world.posture", "needs one value per joint")?;

        let f = &self.feed;
        for (name, x) in [
            ("feed.settle", f.settle),
            ("feed.approach", f.approach),
            ("feed.speed", f.speed),
            ("feed.gain", f.gain),
            ("feed.max_force", f.max_force),
            ("feed.overshoot", f.overshoot),
            ("feed.hold_stiffness", f.hold_stiffness),
            ("feed.hold_damping", f.hold_damping),
            ("feed.hand_damping", f.hand_damping),
            ("feed.grip_damping", f.grip_damping),
        ] {
            check(x >= 0.0 && x.is_finite(), name, "must be non-negative")?;
        }
        check(f.ramp_time > 0.0, "feed.ramp_time", "must be positive")?;

        for (i, e) in self.bone_events.iter().enumerate() {
            check(e.t >= 0.0 && e.ramp >= 0.0, &format!("bone_events[{i}]"), "t and ramp must be non-negative")?;
            check(
                e.angle == 0.0 || Vector3::from(e.axis).norm() > 1e-9,
                &format!("bone_events[{i}].axis"),
                "must be non-zero",
            )?;
        }
        for (i, e) in self.forces.iter().enumerate() {
            check(e.end >= e.start && finite(&e.f), &format!("forces[{i}]"), "needs start <= end and a finite force")?;
        }
        Ok(())
    }
}
