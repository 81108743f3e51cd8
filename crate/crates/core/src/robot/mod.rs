//! Serial-arm model: kinematic chain, limits, inertial parameters and the
//! rigid-body dynamics used by the controller and the simulated plant.

mod config;
mod dynamics;
mod ik;
mod kinematics;

pub use config::{AngleUnit, JointConfig, LengthUnit, LinkConfig, OriginConfig, RobotConfig, Units};
pub use dynamics::DynamicsTerms;
pub use ik::{IkOptions, IkTarget};
pub use kinematics::Chain;

use nalgebra::{DVector, Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector3};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RobotError {
    #[error("joint {joint}: {reason}")]
    InvalidJoint { joint: String, reason: String },
    #[error("model has no joints")]
    Empty,
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("unknown unit {0:?}")]
    UnknownUnit(String),
    #[error("inverse kinematics did not converge (residual {residual:.3e} m)")]
    IkFailed { residual: f64 },
    #[error("config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Link {
    pub mass: f64,
    /// Centre of mass in the joint's (moving) frame.
    pub com: Vector3<f64>,
    /// Inertia about the centre of mass, joint frame axes.
    pub inertia: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub name: String,
    /// Pose of the joint frame (at zero displacement) in the parent frame.
    pub origin: Isometry3<f64>,
    /// Unit axis in the joint frame.
    pub axis: Vector3<f64>,
    pub kind: JointKind,
    pub lower: f64,
    pub upper: f64,
    pub torque_max: f64,
    pub link: Link,
}

impl Joint {
    /// Motion of the joint frame for displacement `q`.
    pub fn motion(&self, q: f64) -> Isometry3<f64> {
        match self.kind {
            JointKind::Revolute => Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_scaled_axis(self.axis * q),
            ),
            JointKind::Prismatic => Isometry3::from_parts(
                Translation3::from(self.axis * q),
                UnitQuaternion::identity(),
            ),
        }
    }

    pub fn mid_range(&self) -> f64 {
        0.5 * (self.lower + self.upper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<Joint>,
    /// End-effector (flange) frame in the last joint frame.
    pub flange: Isometry3<f64>,
    pub gravity: Vector3<f64>,
}

impl RobotModel {
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        flange: Isometry3<f64>,
        gravity: Vector3<f64>,
    ) -> Result<Self, RobotError> {
        if joints.is_empty() {
            return Err(RobotError::Empty);
        }
        for j in &joints {
            let bad = |reason: &str| {
                Err(RobotError::InvalidJoint {
                    joint: j.name.clone(),
                    reason: reason.to_string(),
                })
            };
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return bad("axis is not unit length");
            }
            if !(j.lower < j.upper) {
                return bad("lower limit must be below upper limit");
            }
            if !(j.torque_max > 0.0) {
                return bad("torque_max must be positive");
            }
            if !(j.link.mass > 0.0) {
                return bad("mass must be positive");
            }
            let sym = (j.link.inertia - j.link.inertia.transpose()).abs().max();
            if sym > 1e-12 || j.link.inertia.cholesky().is_none() {
                return bad("inertia must be symmetric positive definite");
            }
        }
        Ok(RobotModel {
            name: name.into(),
            joints,
            flange,
            gravity,
        })
    }

    /// The bundled seven-joint arm carrying the drill.
    pub fn bundled() -> Self {
        RobotConfig::bundled()
            .into_model()
            .expect("bundled robot config is valid")
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn lower_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.lower))
    }

    pub fn upper_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.upper))
    }

    pub fn torque_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(|j| j.torque_max))
    }

    pub fn mid_range(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joints.iter().map(Joint::mid_range))
    }

    pub(crate) fn check_dim(&self, v: &DVector<f64>) -> Result<(), RobotError> {
        if v.len() != self.dof() {
            return Err(RobotError::DimensionMismatch {
                expected: self.dof(),
                got: v.len(),
            });
        }
        Ok(())
    }

    /// A copy with every joint origin displaced by a random translation of
    /// norm at most `max_offset` and rotated by at most `max_angle` about a
    /// random axis. Models unknown link-length and mounting errors.
    pub fn perturbed<R: Rng>(&self, max_offset: f64, max_angle: f64, rng: &mut R) -> RobotModel {
        let mut out = self.clone();
        for j in &mut out.joints {
            let dir = random_unit(rng);
            let dt = dir * max_offset * rng.random::<f64>();
            let axis = random_unit(rng);
            let dr = Rotation3::from_scaled_axis(axis * max_angle * rng.random::<f64>());
            j.origin = Isometry3::from_parts(
                Translation3::from(j.origin.translation.vector + dt),
                UnitQuaternion::from_rotation_matrix(&dr) * j.origin.rotation,
            );
        }
        out
    }
}

fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Joint positions and velocities.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qdot: DVector<f64>,
}

impl JointState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        JointState {
            q,
            qdot: DVector::zeros(n),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qdot.iter()).all(|x| x.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bundled_model_shape() {
        let m = RobotModel::bundled();
        assert_eq!(m.dof(), 7);
        assert_eq!(m.torque_limits()[4], 12.0);
        assert_eq!(m.joints[3].upper, -0.0698);
    }

    #[test]
    fn validation_rejects_bad_joints() {
        let mut m = RobotModel::bundled();
        m.joints[2].lower = 3.0;
        let err = RobotModel::new("x", m.joints.clone(), m.flange, m.gravity).unwrap_err();
        assert!(matches!(err, RobotError::InvalidJoint { ref joint, .. } if joint == "joint3"));

        let mut m = RobotModel::bundled();
        m.joints[0].link.inertia[(0, 0)] = -1.0;
        assert!(RobotModel::new("x", m.joints, m.flange, m.gravity).is_err());
    }

    #[test]
    fn perturbation_is_bounded() {
        let m = RobotModel::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = m.perturbed(0.003, 0.3f64.to_radians(), &mut rng);
        for (a, b) in m.joints.iter().zip(&p.joints) {
            let dt = (a.origin.translation.vector - b.origin.translation.vector).norm();
            let da = a.origin.rotation.angle_to(&b.origin.rotation);
            assert!(dt <= 0.003 + 1e-15 && da <= 0.3f64.to_radians() + 1e-12);
        }
        assert_ne!(m, p);
    }
}
