use nalgebra::{DMatrix, DVector, Isometry3, Point3 as NPoint, Vector3};

use super::{JointKind, RobotError, RobotModel};
use crate::geometry::{frames, GeometryError, Point3, RigidTransform};

/// World-frame placement of every joint for one configuration.
#[derive(Debug, Clone)]
pub struct Chain {
    /// Pose of each joint frame (after its own motion) in the base frame.
    pub frames: Vec<Isometry3<f64>>,
    /// Joint axes in the base frame.
    pub axes: Vec<Vector3<f64>>,
    pub kinds: Vec<JointKind>,
    /// End-effector frame in the base frame.
    pub flange: Isometry3<f64>,
}

impl Chain {
    pub fn origin(&self, i: usize) -> Vector3<f64> {
        self.frames[i].translation.vector
    }

    /// End-effector point expressed in the base frame.
    pub fn point(&self, p_ee: &Vector3<f64>) -> Vector3<f64> {
        (self.flange * NPoint::from(*p_ee)).coords
    }

    /// End-effector direction expressed in the base frame.
    pub fn direction(&self, d_ee: &Vector3<f64>) -> Vector3<f64> {
        self.flange.rotation * d_ee
    }

    /// Jacobian of a base-frame point rigidly attached to link `link`.
    /// Columns of joints after `link` are zero.
    pub fn link_point_jacobian(&self, link: usize, p: &Vector3<f64>) -> DMatrix<f64> {
        let n = self.axes.len();
        let mut j = DMatrix::zeros(3, n);
        for i in 0..=link {
            let col = match self.kinds[i] {
                JointKind::Revolute => self.axes[i].cross(&(p - self.origin(i))),
                JointKind::Prismatic => self.axes[i],
            };
            j.fixed_view_mut::<3, 1>(0, i).copy_from(&col);
        }
        j
    }

    /// Jacobian `∂z/∂q` of a base-frame point `p` fixed to the end effector.
    pub fn point_jacobian(&self, p: &Vector3<f64>) -> DMatrix<f64> {
        self.link_point_jacobian(self.axes.len() - 1, p)
    }

    /// Angular-velocity Jacobian of link `link`.
    pub fn angular_jacobian(&self, link: usize) -> DMatrix<f64> {
        let n = self.axes.len();
        let mut j = DMatrix::zeros(3, n);
        for i in 0..=link {
            if self.kinds[i] == JointKind::Revolute {
                j.fixed_view_mut::<3, 1>(0, i).copy_from(&self.axes[i]);
            }
        }
        j
    }
}

impl RobotModel {
    /// Joint placements for configuration `q`. Panics if `q` has the wrong
    /// length; use [`RobotModel::try_chain`] for checked input.
    pub fn chain(&self, q: &DVector<f64>) -> Chain {
        self.try_chain(q).expect("joint vector length")
    }

    pub fn try_chain(&self, q: &DVector<f64>) -> Result<Chain, RobotError> {
        self.check_dim(q)?;
        let n = self.dof();
        let mut frames = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut kinds = Vec::with_capacity(n);
        let mut pose = Isometry3::identity();
        for (j, &qi) in self.joints.iter().zip(q.iter()) {
            pose *= j.origin * j.motion(qi);
            axes.push(pose.rotation * j.axis);
            frames.push(pose);
            kinds.push(j.kind);
        }
        let flange = pose * self.flange;
        Ok(Chain {
            frames,
            axes,
            kinds,
            flange,
        })
    }

    /// `T^{re}` for configuration `q`.
    pub fn flange_pose(&self, q: &DVector<f64>) -> Result<RigidTransform, RobotError> {
        let c = self.try_chain(q)?;
        Ok(RigidTransform::new(
            c.flange.rotation.to_rotation_matrix().into_inner(),
            c.flange.translation.vector,
            frames::end_effector(),
            frames::robot(),
        )
        .expect("chain product is a rotation"))
    }

    /// Maps an end-effector point into the robot base frame.
    pub fn forward_kinematics(&self, q: &DVector<f64>, point: &Point3) -> Result<Point3, KinematicsError> {
        check_ee(point)?;
        let c = self.try_chain(q)?;
        Ok(Point3 {
            coords: c.point(&point.coords),
            frame: frames::robot(),
        })
    }

    /// 3×n Jacobian of an end-effector point.
    pub fn point_jacobian(&self, q: &DVector<f64>, point: &Point3) -> Result<DMatrix<f64>, KinematicsError> {
        check_ee(point)?;
        let c = self.try_chain(q)?;
        Ok(c.point_jacobian(&c.point(&point.coords)))
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error(transparent)]
    Robot(#[from] RobotError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

fn check_ee(p: &Point3) -> Result<(), GeometryError> {
    if p.frame != frames::end_effector() {
        return Err(GeometryError::FrameMismatch {
            expected: frames::end_effector(),
            actual: p.frame.clone(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::robot::{Joint, Link};
    use nalgebra::{Matrix3, UnitQuaternion};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_q(m: &RobotModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
        DVector::from_iterator(m.dof(), m.joints.iter().map(|j| rng.random_range(j.lower..j.upper)))
    }

    #[test]
    fn home_pose_golden_value() {
        // Chain product by hand at q = 0: the arm stands straight up with the
        // elbow offsets cancelling in x and the wrist offset pointing forward;
        // the flange faces down.
        //   x = 0.0825 - 0.0825 + 0.088 = 0.088
        //   z = 0.333 + 0.316 + 0.384 - 0.107 = 0.926
        let m = RobotModel::bundled();
        let c = m.chain(&DVector::zeros(7));
        let p = c.point(&Vector3::zeros());
        assert!((p - Vector3::new(0.088, 0.0, 0.926)).norm() < 1e-12, "{p}");
        assert!((c.direction(&Vector3::z()) - Vector3::new(0.0, 0.0, -1.0)).norm() < 1e-12);
    }

    #[test]
    fn fk_is_rigid() {
        let m = RobotModel::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let q = random_q(&m, &mut rng);
            let c = m.chain(&q);
            let a = Vector3::new(0.01, 0.02, 0.2);
            let v = Vector3::new(-0.03, 0.05, 0.01);
            let moved = c.point(&(a + v)) - c.point(&a);
            assert!((moved - c.flange.rotation * v).norm() < 1e-12);
            assert!((moved.norm() - v.norm()).abs() < 1e-12);
        }
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let m = RobotModel::bundled();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tip = Vector3::new(0.05, 0.0, 0.2);
        let h = 1e-6;
        for _ in 0..20 {
            let q = random_q(&m, &mut rng);
            let c = m.chain(&q);
            let j = c.point_jacobian(&c.point(&tip));
            for k in 0..7 {
                let mut qp = q.clone();
                qp[k] += h;
                let mut qm = q.clone();
                qm[k] -= h;
                let fd = (m.chain(&qp).point(&tip) - m.chain(&qm).point(&tip)) / (2.0 * h);
                assert!((fd - j.column(k)).abs().max() < 1e-8);
            }
        }
    }

    #[test]
    fn point_on_last_axis_has_zero_last_column() {
        let m = RobotModel::bundled();
        let q = DVector::from_vec(vec![0.1, -0.3, 0.2, -1.8, 0.1, 1.5, 0.3]);
        let c = m.chain(&q);
        let p = c.origin(6) + 0.3 * c.axes[6];
        assert!(c.point_jacobian(&p).column(6).norm() < 1e-15);
    }

    #[test]
    fn prismatic_column_is_axis() {
        let link = Link {
            mass: 1.0,
            com: Vector3::zeros(),
            inertia: Matrix3::identity() * 0.01,
        };
        let joint = |name: &str, kind, axis: Vector3<f64>| Joint {
            name: name.into(),
            origin: Isometry3::from_parts(Vector3::new(0.0, 0.0, 0.1).into(), UnitQuaternion::identity()),
            axis,
            kind,
            lower: -1.0,
            upper: 1.0,
            torque_max: 10.0,
            link: link.clone(),
        };
        let m = RobotModel::new(
            "test",
            vec![
                joint("r", JointKind::Revolute, Vector3::z()),
                joint("p", JointKind::Prismatic, Vector3::x()),
            ],
            Isometry3::identity(),
            Vector3::new(0.0, 0.0, -9.81),
        )
        .unwrap();
        let q = DVector::from_vec(vec![0.7, 0.2]);
        let j = m
            .point_jacobian(&q, &Point3::xyz(0.1, 0.0, 0.0, frames::end_effector()))
            .unwrap();
        let expected = nalgebra::Rotation3::from_axis_angle(&Vector3::z_axis(), 0.7) * Vector3::x();
        assert!((j.column(1) - expected).norm() < 1e-15);
    }

    #[test]
    fn frame_checks() {
        let m = RobotModel::bundled();
        let q = DVector::zeros(7);
        let wrong = Point3::xyz(0.0, 0.0, 0.0, frames::drill());
        assert!(m.forward_kinematics(&q, &wrong).is_err());
        let p = m
            .forward_kinematics(&q, &Point3::xyz(0.0, 0.0, 0.0, frames::end_effector()))
            .unwrap();
        assert_eq!(p.frame, frames::robot());
        assert!(matches!(
            m.forward_kinematics(&DVector::zeros(6), &Point3::xyz(0.0, 0.0, 0.0, frames::end_effector())),
            Err(KinematicsError::Robot(RobotError::DimensionMismatch { expected: 7, got: 6 }))
        ));
    }
}
