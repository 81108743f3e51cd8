//! Rigid-body dynamics `M(q)q̈ + c(q,q̇) + g(q) = τ`.
//!
//! Everything is computed in the base frame: recursive Newton-Euler for the
//! velocity and gravity terms, composite rigid bodies for the mass matrix.

use nalgebra::{DMatrix, DVector, Matrix3, Point3 as NPoint, Vector3};

use super::kinematics::Chain;
use super::{JointKind, RobotError, RobotModel};

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    /// Velocity product terms `C(q,q̇)q̇`.
    pub coriolis: DVector<f64>,
    pub gravity: DVector<f64>,
}

/// Per-link inertial data in the base frame.
struct WorldLinks {
    com: Vec<Vector3<f64>>,
    inertia: Vec<Matrix3<f64>>,
}

impl RobotModel {
    fn world_links(&self, chain: &Chain) -> WorldLinks {
        let mut com = Vec::with_capacity(self.dof());
        let mut inertia = Vec::with_capacity(self.dof());
        for (j, f) in self.joints.iter().zip(&chain.frames) {
            let r = f.rotation.to_rotation_matrix().into_inner();
            com.push((f * NPoint::from(j.link.com)).coords);
            inertia.push(r * j.link.inertia * r.transpose());
        }
        WorldLinks { com, inertia }
    }

    /// Joint torques for motion `(q̇, q̈)`, optionally including gravity.
    fn rnea(&self, chain: &Chain, links: &WorldLinks, qdot: &DVector<f64>, qddot: &DVector<f64>, gravity: bool) -> DVector<f64> {
        let n = self.dof();
        let mut omega = Vector3::zeros();
        let mut omega_dot = Vector3::zeros();
        let mut acc = if gravity { -self.gravity } else { Vector3::zeros() };
        let mut prev_origin = Vector3::zeros();

        let mut force = Vec::with_capacity(n);
        let mut moment = Vec::with_capacity(n);
        for i in 0..n {
            let o = chain.origin(i);
            let r = o - prev_origin;
            let w = chain.axes[i];
            acc += omega_dot.cross(&r) + omega.cross(&omega.cross(&r));
            match chain.kinds[i] {
                JointKind::Revolute => {
                    omega_dot += w * qddot[i] + omega.cross(&(w * qdot[i]));
                    omega += w * qdot[i];
                }
                JointKind::Prismatic => {
                    acc += 2.0 * omega.cross(&(w * qdot[i])) + w * qddot[i];
                }
            }
            let rc = links.com[i] - o;
            let acc_com = acc + omega_dot.cross(&rc) + omega.cross(&omega.cross(&rc));
            let m = self.joints[i].link.mass;
            let inertia = &links.inertia[i];
            force.push(m * acc_com);
            moment.push(inertia * omega_dot + omega.cross(&(inertia * omega)));
            prev_origin = o;
        }

        let mut tau = DVector::zeros(n);
        let mut f_next = Vector3::zeros();
        let mut n_next = Vector3::zeros();
        for i in (0..n).rev() {
            let o = chain.origin(i);
            let next_origin = if i + 1 < n { chain.origin(i + 1) } else { o };
            let f = force[i] + f_next;
            let nm = moment[i] + (links.com[i] - o).cross(&force[i]) + n_next + (next_origin - o).cross(&f_next);
            tau[i] = match chain.kinds[i] {
                JointKind::Revolute => chain.axes[i].dot(&nm),
                JointKind::Prismatic => chain.axes[i].dot(&f),
            };
            f_next = f;
            n_next = nm;
        }
        tau
    }

    fn crba(&self, chain: &Chain, links: &WorldLinks) -> DMatrix<f64> {
        let n = self.dof();
        let mut mass = DMatrix::zeros(n, n);
        // subtree sums: mass, first moment, inertia about the base origin
        let mut m_sum = 0.0;
        let mut h_sum = Vector3::zeros();
        let mut i_origin = Matrix3::zeros();
        for j in (0..n).rev() {
            let m = self.joints[j].link.mass;
            let c = links.com[j];
            m_sum += m;
            h_sum += m * c;
            i_origin += links.inertia[j] + m * (c.norm_squared() * Matrix3::identity() - c * c.transpose());

            let cc = h_sum / m_sum;
            let i_c = i_origin - m_sum * (cc.norm_squared() * Matrix3::identity() - cc * cc.transpose());
            let w = chain.axes[j];
            let (f, nc) = match chain.kinds[j] {
                JointKind::Revolute => (m_sum * w.cross(&(cc - chain.origin(j))), i_c * w),
                JointKind::Prismatic => (m_sum * w, Vector3::zeros()),
            };
            for i in 0..=j {
                let wi = chain.axes[i];
                let v = match chain.kinds[i] {
                    JointKind::Revolute => wi.dot(&(nc + (cc - chain.origin(i)).cross(&f))),
                    JointKind::Prismatic => wi.dot(&f),
                };
                mass[(i, j)] = v;
                mass[(j, i)] = v;
            }
        }
        mass
    }

    pub fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let chain = self.chain(q);
        self.crba(&chain, &self.world_links(&chain))
    }

    pub fn gravity_torque(&self, q: &DVector<f64>) -> DVector<f64> {
        let chain = self.chain(q);
        let zero = DVector::zeros(self.dof());
        self.rnea(&chain, &self.world_links(&chain), &zero, &zero, true)
    }

    /// Gravity torque for an already computed chain.
    pub fn gravity_torque_for(&self, chain: &Chain) -> DVector<f64> {
        let zero = DVector::zeros(self.dof());
        self.rnea(chain, &self.world_links(chain), &zero, &zero, true)
    }

    pub fn coriolis(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> DVector<f64> {
        let chain = self.chain(q);
        let zero = DVector::zeros(self.dof());
        self.rnea(&chain, &self.world_links(&chain), qdot, &zero, false)
    }

    /// `M q̈ + c + g`.
    pub fn inverse_dynamics(&self, q: &DVector<f64>, qdot: &DVector<f64>, qddot: &DVector<f64>) -> DVector<f64> {
        let chain = self.chain(q);
        self.rnea(&chain, &self.world_links(&chain), qdot, qddot, true)
    }

    pub fn dynamics_terms(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> Result<DynamicsTerms, RobotError> {
        self.check_dim(q)?;
        self.check_dim(qdot)?;
        let chain = self.chain(q);
        Ok(self.dynamics_terms_for(&chain, qdot))
    }

    /// As [`RobotModel::dynamics_terms`] for an already computed chain.
    pub fn dynamics_terms_for(&self, chain: &Chain, qdot: &DVector<f64>) -> DynamicsTerms {
        let links = self.world_links(chain);
        let zero = DVector::zeros(self.dof());
        DynamicsTerms {
            mass: self.crba(chain, &links),
            coriolis: self.rnea(chain, &links, qdot, &zero, false),
            gravity: self.rnea(chain, &links, &zero, &zero, true),
        }
    }

    pub fn kinetic_energy(&self, q: &DVector<f64>, qdot: &DVector<f64>) -> f64 {
        0.5 * qdot.dot(&(self.mass_matrix(q) * qdot))
    }

    /// Gravitational potential energy relative to the base origin.
    pub fn potential_energy(&self, q: &DVector<f64>) -> f64 {
        let chain = self.chain(q);
        let links = self.world_links(&chain);
        self.joints
            .iter()
            .zip(&links.com)
            .map(|(j, c)| -j.link.mass * self.gravity.dot(c))
            .sum()
    }
}

impl DynamicsTerms {
    /// `q̈ = M⁻¹(τ − c − g)`.
    pub fn acceleration(&self, tau: &DVector<f64>) -> DVector<f64> {
        let rhs = tau - &self.coriolis - &self.gravity;
        self.mass
            .clone()
            .cholesky()
            .expect("mass matrix is positive definite")
            .solve(&rhs)
    }
}
