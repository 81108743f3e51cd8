//! Damped least-squares placement of a tool line, used to put the simulated
//! arm at a starting pose.

use nalgebra::{DMatrix, DVector, Vector3};

use super::{RobotError, RobotModel};

/// Place tool point `tool_point` (end-effector frame) at `tip` with tool
/// direction `tool_dir` along `dir` (both base frame).
#[derive(Debug, Clone, PartialEq)]
pub struct IkTarget {
    pub tool_point: Vector3<f64>,
    pub tool_dir: Vector3<f64>,
    pub tip: Vector3<f64>,
    pub dir: Vector3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IkOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub damping: f64,
    /// Null-space pull towards this posture.
    pub rest: Option<DVector<f64>>,
    pub rest_gain: f64,
    /// Solutions are kept this far inside each joint limit.
    pub limit_margin: f64,
}

impl Default for IkOptions {
    fn default() -> Self {
        IkOptions {
            max_iterations: 2000,
            tolerance: 1e-10,
            damping: 1e-3,
            rest: None,
            rest_gain: 0.05,
            limit_margin: 0.05,
        }
    }
}

/// Length of the lever used to turn the direction error into a point error.
const LEVER: f64 = 0.1;

impl RobotModel {
    pub fn solve_ik(&self, target: &IkTarget, seed: &DVector<f64>, opts: &IkOptions) -> Result<DVector<f64>, RobotError> {
        self.check_dim(seed)?;
        let n = self.dof();
        let rest = opts.rest.clone().unwrap_or_else(|| self.mid_range());
        let dir = target.dir.normalize();
        let tool_dir = target.tool_dir.normalize();
        let second_target = target.tip + LEVER * dir;
        let mut q = seed.clone();
        let mut residual = f64::INFINITY;
        for _ in 0..opts.max_iterations {
            let c = self.chain(&q);
            let p1 = c.point(&target.tool_point);
            let p2 = p1 + LEVER * c.direction(&tool_dir);
            let mut err = DVector::zeros(6);
            err.fixed_rows_mut::<3>(0).copy_from(&(target.tip - p1));
            err.fixed_rows_mut::<3>(3).copy_from(&(second_target - p2));
            residual = err.norm();
            if residual < opts.tolerance {
                return Ok(q);
            }
            let mut j = DMatrix::zeros(6, n);
            j.rows_mut(0, 3).copy_from(&c.point_jacobian(&p1));
            j.rows_mut(3, 3).copy_from(&c.point_jacobian(&p2));
            let jjt = &j * j.transpose() + DMatrix::identity(6, 6) * opts.damping.powi(2);
            let Some(inv) = jjt.try_inverse() else {
                break;
            };
            let pinv = j.transpose() * inv;
            let null = DMatrix::identity(n, n) - &pinv * &j;
            // the damped projector leaks a little of the posture pull into the
            // task, so it is dropped for the final refinement
            let gain = if residual > 1e-6 { opts.rest_gain } else { 0.0 };
            let step = &pinv * err + null * (gain * (&rest - &q));
            q += step;
            for (qi, jt) in q.iter_mut().zip(&self.joints) {
                *qi = qi.clamp(jt.lower + opts.limit_margin, jt.upper - opts.limit_margin);
            }
        }
        Err(RobotError::IkFailed { residual })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reaches_a_downward_drilling_pose() {
        let m = RobotModel::bundled();
        let seed = DVector::from_vec(vec![0.0, -0.3, 0.0, -2.2, 0.0, 1.9, 0.785]);
        let target = IkTarget {
            tool_point: Vector3::new(0.05, 0.0, 0.2),
            tool_dir: Vector3::z(),
            tip: Vector3::new(0.5, 0.05, 0.25),
            dir: Vector3::new(0.1, 0.0, -1.0),
        };
        let q = m.solve_ik(&target, &seed, &IkOptions { rest: Some(seed.clone()), ..Default::default() }).unwrap();
        let c = m.chain(&q);
        assert!((c.point(&target.tool_point) - target.tip).norm() < 1e-9);
        assert!(c.direction(&Vector3::z()).angle(&target.dir) < 1e-8);
        for (qi, j) in q.iter().zip(&m.joints) {
            assert!(*qi > j.lower && *qi < j.upper);
        }
    }
}
