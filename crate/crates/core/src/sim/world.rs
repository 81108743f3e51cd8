//! Ground truth of a simulated room, synthetic calibration recordings, and
//! the calibration/registration pipeline run on them.

use nalgebra::{DVector, Rotation3, Unit, Vector3};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::calibration::{axis_calibrate_with, pivot_calibrate, AxisOptions};
use crate::controller::DrillTool;
use crate::geometry::{frames, FrameId, Point3, RigidTransform};
use crate::recording::{Measurement, Recording};
use crate::registration::{hand_eye_register, probe_measure, LandmarkSet, PosePair, RegistrationSession};
use crate::robot::RobotModel;

use super::scenario::{CalibrationConfig, CalibrationMode, VisionNoise, WorldConfig};
use super::vision::observe;
use super::SimError;

/// Calibration recordings are sampled at this rate, Hz.
pub const RECORDING_RATE: f64 = 20.0;

/// Largest rotation away from the central pose while pivoting, rad.
pub const PIVOT_RANGE: f64 = 0.8;

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    /// `T^{rv}`.
    pub t_rv: RigidTransform,
    /// `T^{rs}` before any bone motion.
    pub t_rs: RigidTransform,
    /// `T^{sb}`.
    pub t_sb: RigidTransform,
    /// `T^{ed}`.
    pub t_ed: RigidTransform,
    /// Drill tip and bit direction, end-effector frame.
    pub drill_tip: Vector3<f64>,
    pub drill_axis: Vector3<f64>,
    /// Probe tip, probe frame.
    pub probe_tip: Vector3<f64>,
    /// Scan frame.
    pub landmarks: Vec<Vector3<f64>>,
    pub entry: Vector3<f64>,
    pub exit: Vector3<f64>,
}

impl World {
    pub fn from_config(c: &WorldConfig) -> Self {
        World {
            t_rv: c.camera.transform(frames::vision(), frames::robot()),
            t_rs: c.bone.transform(frames::scan(), frames::robot()),
            t_sb: c.bone_marker.transform(frames::bone(), frames::scan()),
            t_ed: c.drill_marker.transform(frames::drill(), frames::end_effector()),
            drill_tip: Vector3::from(c.drill_tip),
            drill_axis: Vector3::from(c.drill_axis).normalize(),
            probe_tip: Vector3::from(c.probe_tip),
            landmarks: c.landmarks.iter().map(|p| Vector3::from(*p)).collect(),
            entry: Vector3::from(c.entry),
            exit: Vector3::from(c.exit),
        }
    }

    pub fn t_vr(&self) -> RigidTransform {
        self.t_rv.inverse()
    }

    pub fn t_bs(&self) -> RigidTransform {
        self.t_sb.inverse()
    }

    /// Drill tip and bit direction in the drill-marker frame.
    pub fn drill_tip_d(&self) -> Vector3<f64> {
        self.t_ed.inverse().transform_vector(&self.drill_tip)
    }

    pub fn drill_axis_d(&self) -> Vector3<f64> {
        self.t_ed.inverse().rotate_vector(&self.drill_axis)
    }

    /// `T^{vb}` for the bone at `t_rs`.
    pub fn t_vb(&self, t_rs: &RigidTransform) -> RigidTransform {
        self.t_vr().compose(t_rs).and_then(|t| t.compose(&self.t_sb)).expect("v<-r<-s<-b")
    }

    /// `T^{vd}` for flange pose `t_re`.
    pub fn t_vd(&self, t_re: &RigidTransform) -> RigidTransform {
        self.t_vr().compose(t_re).and_then(|t| t.compose(&self.t_ed)).expect("v<-r<-e<-d")
    }

    pub fn landmark_set(&self) -> LandmarkSet {
        let s = |v: &Vector3<f64>| Point3 { coords: *v, frame: frames::scan() };
        LandmarkSet::new(self.landmarks.iter().map(s).collect(), s(&self.entry), s(&self.exit)).expect("world landmarks are valid")
    }
}

pub(crate) fn random_unit<R: Rng>(rng: &mut R) -> Vector3<f64> {
    loop {
        let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random vector no longer than `max`, uniform in the ball.
pub(crate) fn random_in_ball<R: Rng>(rng: &mut R, max: f64) -> Vector3<f64> {
    random_unit(rng) * max * rng.random::<f64>().cbrt()
}

/// Random unit vector perpendicular to `u`.
pub(crate) fn random_perpendicular<R: Rng>(rng: &mut R, u: &Vector3<f64>) -> Vector3<f64> {
    loop {
        let v = random_unit(rng);
        let p = v - v.dot(u) * u;
        if p.norm() > 1e-3 {
            return p.normalize();
        }
    }
}

fn measurement(t: f64, truth: &RigidTransform, noise: &VisionNoise, rng: &mut impl Rng) -> Measurement {
    match observe(truth, noise, rng) {
        Some(transform) => Measurement { timestamp: t, transform, valid: true },
        None => Measurement { timestamp: t, transform: truth.clone(), valid: false },
    }
}

/// Pivoting a body with a tip at `tip_body` about the fixed point `pivot`
/// (tracker frame). Orientations wander within `max_tilt` of `center`.
#[allow(clippy::too_many_arguments)]
pub fn pivot_recording<R: Rng>(
    tip_body: &Vector3<f64>,
    body: FrameId,
    pivot: &Vector3<f64>,
    center: &Rotation3<f64>,
    max_tilt: f64,
    n: usize,
    noise: &VisionNoise,
    rng: &mut R,
) -> Recording {
    let entries = (0..n)
        .map(|i| {
            let r = Rotation3::new(random_in_ball(rng, max_tilt)) * center;
            let truth = RigidTransform::from_rotation(r, pivot - r * tip_body, body.clone(), frames::vision());
            measurement(i as f64 / RECORDING_RATE, &truth, noise, rng)
        })
        .collect();
    Recording::new(entries).expect("monotonic timestamps")
}

/// Sliding and turning a body in a fixed sleeve whose axis passes through
/// `line_point` along `line_dir` (tracker frame). The body's `tip_body` stays
/// on the sleeve axis and `axis_body` is aligned with it.
#[allow(clippy::too_many_arguments)]
pub fn axis_recording<R: Rng>(
    tip_body: &Vector3<f64>,
    axis_body: &Vector3<f64>,
    body: FrameId,
    line_point: &Vector3<f64>,
    line_dir: &Vector3<f64>,
    slide: f64,
    n: usize,
    noise: &VisionNoise,
    rng: &mut R,
) -> Recording {
    let u = line_dir.normalize();
    let align = Rotation3::rotation_between(axis_body, &u).unwrap_or_else(|| Rotation3::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI));
    let axis = Unit::new_normalize(u);
    let entries = (0..n)
        .map(|i| {
            let phase = i as f64 / n.max(2) as f64;
            let angle = 4.0 * std::f64::consts::PI * phase + rng.random_range(-0.1..0.1);
            let s = slide * (0.5 - 0.5 * (2.0 * std::f64::consts::PI * 3.0 * phase).cos());
            let r = Rotation3::from_axis_angle(&axis, angle) * align;
            let truth = RigidTransform::from_rotation(r, line_point + s * u - r * tip_body, body.clone(), frames::vision());
            measurement(i as f64 / RECORDING_RATE, &truth, noise, rng)
        })
        .collect();
    Recording::new(entries).expect("monotonic timestamps")
}

/// One simultaneous pair of bone and probe readings while the probe touches
/// landmark `landmark`.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkTouch {
    pub landmark: usize,
    pub bone: Measurement,
    pub probe: Measurement,
}

/// Touches every landmark `per_landmark` times. Each landmark is touched
/// at its scan position plus a fixed bias of at most `bias` and a scatter
/// of RMS `placement`.
#[allow(clippy::too_many_arguments)]
pub fn landmark_touches<R: Rng>(
    world: &World,
    t_rs: &RigidTransform,
    per_landmark: usize,
    bias: f64,
    placement: f64,
    noise: &VisionNoise,
    rng: &mut R,
) -> Vec<LandmarkTouch> {
    let t_vs = world.t_vr().compose(t_rs).expect("v<-r<-s");
    let t_vb = world.t_vb(t_rs);
    let down = t_vs.rotate_vector(&Vector3::new(0.0, 0.0, -1.0));
    let center = Rotation3::rotation_between(&Vector3::z(), &down).unwrap_or_else(Rotation3::identity);
    let biases: Vec<Vector3<f64>> = world.landmarks.iter().map(|_| random_in_ball(rng, bias)).collect();
    let mut out = Vec::new();
    let mut t = 0.0;
    for (i, l) in world.landmarks.iter().enumerate() {
        for _ in 0..per_landmark {
            let scatter = {
                let s = placement / 3f64.sqrt();
                Vector3::new(
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * s,
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * s,
                    rng.sample::<f64, _>(rand_distr::StandardNormal) * s,
                )
            };
            let touched = t_vs.transform_vector(&(l + biases[i] + scatter));
            let r = Rotation3::new(random_in_ball(rng, 0.5)) * center;
            let probe = RigidTransform::from_rotation(r, touched - r * world.probe_tip, frames::probe(), frames::vision());
            out.push(LandmarkTouch {
                landmark: i,
                bone: measurement(t, &t_vb, noise, rng),
                probe: measurement(t, &probe, noise, rng),
            });
            t += 1.0;
        }
    }
    out
}

/// Hand-eye pose pairs: flange poses from the controller's model and drill
/// marker poses seen by the tracker while the real arm is at `q`.
#[allow(clippy::too_many_arguments)]
pub fn handeye_pairs<R: Rng>(
    world: &World,
    plant: &RobotModel,
    nominal: &RobotModel,
    center: &DVector<f64>,
    spread: f64,
    n: usize,
    noise: &VisionNoise,
    rng: &mut R,
) -> Vec<PosePair> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let q = DVector::from_iterator(center.len(), center.iter().map(|c| c + rng.random_range(-spread..=spread)));
        let truth = world.t_vd(&plant.flange_pose(&q).expect("dimension"));
        if let Some(t_vd) = observe(&truth, &VisionNoise { dropout_prob: 0.0, ..*noise }, rng) {
            out.push(PosePair { t_re: nominal.flange_pose(&q).expect("dimension"), t_vd });
        }
    }
    out
}

/// What the controller believes after calibration and registration.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibrated {
    pub t_rv: RigidTransform,
    pub t_bs: RigidTransform,
    /// Drill tip and bit direction, drill-marker frame.
    pub drill_tip_d: Vector3<f64>,
    pub drill_axis_d: Vector3<f64>,
    /// Drill geometry in the end-effector frame.
    pub tool: DrillTool,
    pub report: CalibrationReport,
}

/// Fit residuals of each procedure, m. Zero in exact mode.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub probe_rms: f64,
    pub drill_tip_rms: f64,
    pub drill_axis_rms: f64,
    pub registration_rms: f64,
    pub handeye_rms: f64,
}

fn cal_err(what: &str, e: impl std::fmt::Display) -> SimError {
    SimError::Calibration(format!("{what}: {e}"))
}

/// Runs probe and drill calibration, bone registration and hand-eye
/// registration on fresh synthetic measurements. `tool` is the controller's
/// drill geometry in the end-effector frame.
#[allow(clippy::too_many_arguments)]
pub fn calibrate<R: Rng>(
    world: &World,
    config: &CalibrationConfig,
    noise: &VisionNoise,
    plant: &RobotModel,
    nominal: &RobotModel,
    posture: &DVector<f64>,
    tool: DrillTool,
    rng: &mut R,
) -> Result<Calibrated, SimError> {
    if config.mode == CalibrationMode::Exact {
        return Ok(Calibrated {
            t_rv: world.t_rv.clone(),
            t_bs: world.t_bs(),
            drill_tip_d: world.drill_tip_d(),
            drill_axis_d: world.drill_axis_d(),
            tool,
            report: CalibrationReport::default(),
        });
    }
    let noise = VisionNoise { latency_frames: 0, ..*noise };
    let pivot_point = world.t_vr().transform_vector(&Vector3::new(0.6, 0.3, 0.1));
    let down = world.t_vr().rotate_vector(&Vector3::new(0.0, 0.0, -1.0));
    let pointing = Rotation3::rotation_between(&Vector3::z(), &down).unwrap_or_else(Rotation3::identity);

    let probe_rec = pivot_recording(&world.probe_tip, frames::probe(), &pivot_point, &pointing, PIVOT_RANGE, config.pivot_samples, &noise, rng);
    let probe = pivot_calibrate(&probe_rec).map_err(|e| cal_err("probe pivot", e))?;

    let tip_d = world.drill_tip_d();
    let drill_center = pointing * Rotation3::rotation_between(&world.drill_axis_d(), &Vector3::z()).unwrap_or_else(Rotation3::identity);
    let drill_rec = pivot_recording(&tip_d, frames::drill(), &pivot_point, &drill_center, PIVOT_RANGE, config.pivot_samples, &noise, rng);
    let drill_tip = pivot_calibrate(&drill_rec).map_err(|e| cal_err("drill pivot", e))?;

    let axis_rec = axis_recording(
        &tip_d,
        &world.drill_axis_d(),
        frames::drill(),
        &pivot_point,
        &down,
        0.03,
        config.axis_samples,
        &noise,
        rng,
    );
    let hint = world.drill_axis_d();
    let axis = axis_calibrate_with(&axis_rec, &drill_tip.point_body, &AxisOptions { hint, ..Default::default() })
        .map_err(|e| cal_err("drill axis", e))?;

    let touches = landmark_touches(
        world,
        &world.t_rs,
        config.measurements_per_landmark,
        config.landmark_bias,
        config.probe_placement,
        &noise,
        rng,
    );
    let mut session = RegistrationSession::new(world.landmark_set());
    for touch in &touches {
        // a failed reading is simply not recorded, as at the console
        if let Ok(p) = probe_measure(&touch.bone, &touch.probe, &probe.point_body) {
            session.add(touch.landmark, &p).map_err(|e| cal_err("bone registration", e))?;
        }
    }
    let reg = match session.fit() {
        Some(Ok(fit)) => fit.clone(),
        Some(Err(e)) => return Err(cal_err("bone registration", e)),
        None => return Err(cal_err("bone registration", "too few landmarks measured")),
    };

    let pairs = handeye_pairs(world, plant, nominal, posture, config.handeye_spread, config.handeye_poses, &noise, rng);
    let tip_e = Point3 { coords: tool.tip, frame: frames::end_effector() };
    let he = hand_eye_register(&pairs, &tip_e, &drill_tip.point_body).map_err(|e| cal_err("hand-eye", e))?;

    Ok(Calibrated {
        t_rv: he.fit.transform.inverse(),
        t_bs: reg.transform.clone(),
        drill_tip_d: drill_tip.point_body.coords,
        drill_axis_d: *axis.axis.dir(),
        tool,
        report: CalibrationReport {
            probe_rms: probe.rms,
            drill_tip_rms: drill_tip.rms,
            drill_axis_rms: axis.rms,
            registration_rms: reg.rms,
            handeye_rms: he.fit.rms,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::axis_calibrate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn world() -> World {
        World::from_config(&WorldConfig::default())
    }

    #[test]
    fn frame_chains_are_consistent() {
        let w = world();
        let t_vb = w.t_vb(&w.t_rs);
        // the bone marker origin seen from the robot equals T^{rs} applied to
        // the marker position in the scan frame
        let via_v = w.t_rv.transform_vector(t_vb.translation());
        let via_s = w.t_rs.transform_vector(w.t_sb.translation());
        assert!((via_v - via_s).norm() < 1e-12);
        assert!((w.t_ed.transform_vector(&w.drill_tip_d()) - w.drill_tip).norm() < 1e-12);
    }

    #[test]
    fn noiseless_pivot_recovers_truth() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rec = pivot_recording(&w.probe_tip, frames::probe(), &Vector3::new(0.1, 0.0, 1.2), &Rotation3::identity(), 0.5, 100, &VisionNoise::none(), &mut rng);
        let cal = pivot_calibrate(&rec).unwrap();
        assert!((cal.point_body.coords - w.probe_tip).norm() < 1e-10);
    }

    #[test]
    fn noiseless_axis_recording_is_well_conditioned_and_exact() {
        let w = world();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rec = axis_recording(
            &w.drill_tip_d(),
            &w.drill_axis_d(),
            frames::drill(),
            &Vector3::new(0.0, 0.1, 1.3),
            &Vector3::new(0.1, -0.2, -1.0),
            0.03,
            200,
            &VisionNoise::none(),
            &mut rng,
        );
        let known = Point3 { coords: w.drill_tip_d(), frame: frames::drill() };
        let cal = axis_calibrate(&rec, &known).unwrap();
        let sv = cal.singular_values;
        assert!(sv[0] / sv[1] > 3.0);
        let a = cal.axis.dir();
        let err = a.angle(&w.drill_axis_d()).min(a.angle(&-w.drill_axis_d()));
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn recordings_are_deterministic() {
        let w = world();
        let make = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            pivot_recording(&w.probe_tip, frames::probe(), &Vector3::zeros(), &Rotation3::identity(), 0.5, 50, &VisionNoise::default(), &mut rng)
        };
        assert_eq!(make(), make());
    }

    #[test]
    fn exact_plant_and_noiseless_tracker_give_exact_calibration() {
        let w = world();
        let model = RobotModel::bundled();
        let posture = DVector::from_vec(WorldConfig::default().posture);
        let tool = DrillTool { tip: w.drill_tip, axis: w.drill_axis };
        let config = CalibrationConfig { landmark_bias: 0.0, probe_placement: 0.0, pivot_samples: 50, axis_samples: 50, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cal = calibrate(&w, &config, &VisionNoise::none(), &model, &model, &posture, tool, &mut rng).unwrap();
        assert!(cal.t_rv.difference(&w.t_rv).unwrap().1 < 1e-9);
        assert!(cal.t_bs.difference(&w.t_bs()).unwrap().1 < 1e-9);
        assert!((cal.drill_tip_d - w.drill_tip_d()).norm() < 1e-9);
        assert!(cal.drill_axis_d.angle(&w.drill_axis_d()) < 1e-8);
    }

    #[test]
    fn noisy_calibration_is_close() {
        let w = world();
        let model = RobotModel::bundled();
        let posture = DVector::from_vec(WorldConfig::default().posture);
        let tool = DrillTool { tip: w.drill_tip, axis: w.drill_axis };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cal = calibrate(&w, &CalibrationConfig::default(), &VisionNoise::default(), &model, &model, &posture, tool, &mut rng).unwrap();
        assert!(cal.t_bs.difference(&w.t_bs()).unwrap().1 < 3e-3);
        assert!((cal.drill_tip_d - w.drill_tip_d()).norm() < 1e-3);
        assert!(cal.drill_axis_d.angle(&w.drill_axis_d()) < 0.5f64.to_radians());
        assert!(cal.report.registration_rms > 0.0);
    }
}
