//! JSON robot description.
//!
//! ```json
//! {
//!   "name": "arm",
//!   "units": { "length": "mm", "angle": "deg" },
//!   "gravity": [0, 0, -9.81],
//!   "joints": [
//!     { "name": "j1", "type": "revolute", "xyz": [0, 0, 333], "rpy": [0, 0, 0],
//!       "axis": [0, 0, 1], "limits": [-166, 166], "torque_max": 87,
//!       "link": { "mass": 4.97, "com": [3.9, 2.1, -47.5],
//!                 "inertia": [ixx, iyy, izz, ixy, ixz, iyz] } }
//!   ],
//!   "flange": { "xyz": [0, 0, 107], "rpy": [0, 0, 0] }
//! }
//! ```
//!
//! `xyz`/`rpy` follow the URDF origin convention (fixed-axis roll, pitch,
//! yaw). Lengths (origins, centres of mass, prismatic limits) use the
//! length unit; inertias are in kg·(length unit)²; `rpy` and revolute limits
//! use the angle unit. Gravity is always m/s². Everything is stored in SI.

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::{Joint, JointKind, Link, RobotError, RobotModel};

const BUNDLED: &str = include_str!("../../data/panda_like.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LengthUnit {
    #[default]
    M,
    Mm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AngleUnit {
    #[default]
    Rad,
    Deg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Units {
    pub length: LengthUnit,
    pub angle: AngleUnit,
}

impl Units {
    fn length(&self) -> f64 {
        match self.length {
            LengthUnit::M => 1.0,
            LengthUnit::Mm => 1e-3,
        }
    }

    fn angle(&self) -> f64 {
        match self.angle {
            AngleUnit::Rad => 1.0,
            AngleUnit::Deg => std::f64::consts::PI / 180.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginConfig {
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkConfig {
    pub mass: f64,
    pub com: [f64; 3],
    /// `[ixx, iyy, izz, ixy, ixz, iyz]` about the centre of mass.
    pub inertia: [f64; 6],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointConfig {
    pub name: String,
    #[serde(rename = "type")]
    pub kind: JointKind,
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    pub axis: [f64; 3],
    pub limits: [f64; 2],
    pub torque_max: f64,
    pub link: LinkConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotConfig {
    pub name: String,
    #[serde(default)]
    pub units: Units,
    #[serde(default = "default_gravity")]
    pub gravity: [f64; 3],
    pub joints: Vec<JointConfig>,
    pub flange: OriginConfig,
}

fn default_gravity() -> [f64; 3] {
    [0.0, 0.0, -9.81]
}

fn origin(xyz: &[f64; 3], rpy: &[f64; 3], units: &Units) -> Isometry3<f64> {
    let l = units.length();
    let a = units.angle();
    let r = Rotation3::from_euler_angles(rpy[0] * a, rpy[1] * a, rpy[2] * a);
    Isometry3::from_parts(
        Translation3::new(xyz[0] * l, xyz[1] * l, xyz[2] * l),
        UnitQuaternion::from_rotation_matrix(&r),
    )
}

impl RobotConfig {
    pub fn bundled() -> Self {
        serde_json::from_str(BUNDLED).expect("bundled robot config parses")
    }

    pub fn from_json(text: &str) -> Result<Self, RobotError> {
        serde_json::from_str(text).map_err(|e| RobotError::Config(e.to_string()))
    }

    pub fn into_model(self) -> Result<RobotModel, RobotError> {
        let u = self.units;
        let l = u.length();
        let joints = self
            .joints
            .into_iter()
            .map(|j| {
                let limit_scale = match j.kind {
                    JointKind::Revolute => u.angle(),
                    JointKind::Prismatic => l,
                };
                let axis = Vector3::from(j.axis);
                if axis.norm() < 1e-12 {
                    return Err(RobotError::InvalidJoint {
                        joint: j.name,
                        reason: "zero axis".into(),
                    });
                }
                let [ixx, iyy, izz, ixy, ixz, iyz] = j.link.inertia.map(|v| v * l * l);
                Ok(Joint {
                    origin: origin(&j.xyz, &j.rpy, &u),
                    axis: axis.normalize(),
                    kind: j.kind,
                    lower: j.limits[0] * limit_scale,
                    upper: j.limits[1] * limit_scale,
                    torque_max: j.torque_max,
                    link: Link {
                        mass: j.link.mass,
                        com: Vector3::from(j.link.com) * l,
                        inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
                    },
                    name: j.name,
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        RobotModel::new(
            self.name,
            joints,
            origin(&self.flange.xyz, &self.flange.rpy, &u),
            Vector3::from(self.gravity),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn millimetres_and_degrees_convert_to_si() {
        let mut cfg = RobotConfig::bundled();
        cfg.units = Units {
            length: LengthUnit::Mm,
            angle: AngleUnit::Deg,
        };
        for j in &mut cfg.joints {
            j.xyz = j.xyz.map(|v| v * 1e3);
            j.rpy = j.rpy.map(f64::to_degrees);
            j.limits = j.limits.map(f64::to_degrees);
            j.link.com = j.link.com.map(|v| v * 1e3);
            j.link.inertia = j.link.inertia.map(|v| v * 1e6);
        }
        cfg.flange.xyz = cfg.flange.xyz.map(|v| v * 1e3);
        let a = cfg.into_model().unwrap();
        let b = RobotModel::bundled();
        for (x, y) in a.joints.iter().zip(&b.joints) {
            assert!((x.origin.translation.vector - y.origin.translation.vector).norm() < 1e-12);
            assert!(x.origin.rotation.angle_to(&y.origin.rotation) < 1e-12);
            assert!((x.lower - y.lower).abs() < 1e-12);
            assert!((x.link.inertia - y.link.inertia).abs().max() < 1e-12);
        }
    }

    #[test]
    fn unknown_field_is_named() {
        let text = BUNDLED.replace("\"torque_max\": 87.0,", "\"torque_max\": 87.0, \"frobnicate\": 1,");
        let err = RobotConfig::from_json(&text).unwrap_err();
        assert!(err.to_string().contains("frobnicate"), "{err}");
    }
}
