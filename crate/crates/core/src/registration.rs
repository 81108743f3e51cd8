//! Bone registration by probing scan landmarks, and hand-eye registration
//! of the robot base to the tracker.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calibration::{register_transform, CalibrationError, TransformFit};
use crate::geometry::{frames, GeometryError, Point3, RigidTransform};
use crate::recording::Measurement;

/// Two tracker readings closer than this in time count as simultaneous.
pub const SIMULTANEITY_WINDOW: f64 = 0.05;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RegistrationError {
    #[error("measurement failed: {0}")]
    MeasurementFailed(&'static str),
    #[error("landmark index {index} out of range (have {count})")]
    BadLandmark { index: usize, count: usize },
    #[error("nothing to undo")]
    NothingToUndo,
    #[error("need at least 3 landmarks, got {0}")]
    TooFewLandmarks(usize),
    #[error("entry and exit points coincide")]
    DegenerateAxis,
    #[error(transparent)]
    Solver(#[from] CalibrationError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Planned hole and registration landmarks, all in the scan frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawLandmarkSet")]
pub struct LandmarkSet {
    landmarks: Vec<Point3>,
    entry: Point3,
    exit: Point3,
}

#[derive(Deserialize)]
struct RawLandmarkSet {
    landmarks: Vec<Point3>,
    entry: Point3,
    exit: Point3,
}

impl TryFrom<RawLandmarkSet> for LandmarkSet {
    type Error = RegistrationError;

    fn try_from(raw: RawLandmarkSet) -> Result<Self, RegistrationError> {
        LandmarkSet::new(raw.landmarks, raw.entry, raw.exit)
    }
}

impl LandmarkSet {
    pub fn new(landmarks: Vec<Point3>, entry: Point3, exit: Point3) -> Result<Self, RegistrationError> {
        if landmarks.len() < 3 {
            return Err(RegistrationError::TooFewLandmarks(landmarks.len()));
        }
        let scan = frames::scan();
        for p in landmarks.iter().chain([&entry, &exit]) {
            if p.frame != scan {
                return Err(GeometryError::FrameMismatch {
                    expected: scan,
                    actual: p.frame.clone(),
                }
                .into());
            }
        }
        if (entry.coords - exit.coords).norm() < 1e-9 {
            return Err(RegistrationError::DegenerateAxis);
        }
        Ok(LandmarkSet { landmarks, entry, exit })
    }

    pub fn landmarks(&self) -> &[Point3] {
        &self.landmarks
    }

    pub fn entry(&self) -> &Point3 {
        &self.entry
    }

    pub fn exit(&self) -> &Point3 {
        &self.exit
    }
}

/// Probe tip in the bone-tracker frame from simultaneous tracker readings of
/// the bone marker (`T^{vb}`) and the probe (`T^{vp}`).
pub fn probe_measure(
    bone: &Measurement,
    probe: &Measurement,
    probe_tip: &Point3,
) -> Result<Point3, RegistrationError> {
    if !bone.valid {
        return Err(RegistrationError::MeasurementFailed("bone marker not visible"));
    }
    if !probe.valid {
        return Err(RegistrationError::MeasurementFailed("probe not visible"));
    }
    if (bone.timestamp - probe.timestamp).abs() > SIMULTANEITY_WINDOW {
        return Err(RegistrationError::MeasurementFailed("readings not simultaneous"));
    }
    let probe_in_bone = bone.transform.inverse().compose(&probe.transform)?;
    Ok(probe_in_bone.apply(probe_tip)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkMeasurement {
    pub landmark: usize,
    /// Probed point in the bone-tracker frame.
    pub point: [f64; 3],
}

/// Incremental landmark registration, refitting `T^{bs}` after every change.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegistrationSession {
    landmarks: LandmarkSet,
    measurements: Vec<LandmarkMeasurement>,
    #[serde(skip)]
    fit: Option<Result<TransformFit, CalibrationError>>,
}

impl RegistrationSession {
    pub fn new(landmarks: LandmarkSet) -> Self {
        RegistrationSession {
            landmarks,
            measurements: Vec::new(),
            fit: None,
        }
    }

    /// Rebuilds a session from a persisted measurement log.
    pub fn restore(landmarks: LandmarkSet, log: &[LandmarkMeasurement]) -> Result<Self, RegistrationError> {
        let mut s = RegistrationSession::new(landmarks);
        for m in log {
            s.check_index(m.landmark)?;
            s.measurements.push(*m);
        }
        s.refit();
        Ok(s)
    }

    fn check_index(&self, index: usize) -> Result<(), RegistrationError> {
        let count = self.landmarks.landmarks.len();
        if index >= count {
            return Err(RegistrationError::BadLandmark { index, count });
        }
        Ok(())
    }

    pub fn landmarks(&self) -> &LandmarkSet {
        &self.landmarks
    }

    pub fn measurements(&self) -> &[LandmarkMeasurement] {
        &self.measurements
    }

    pub fn add(&mut self, landmark: usize, point: &Point3) -> Result<(), RegistrationError> {
        self.check_index(landmark)?;
        if point.frame != frames::bone() {
            return Err(GeometryError::FrameMismatch {
                expected: frames::bone(),
                actual: point.frame.clone(),
            }
            .into());
        }
        self.measurements.push(LandmarkMeasurement {
            landmark,
            point: point.coords.into(),
        });
        self.refit();
        Ok(())
    }

    /// Deletes the most recent measurement.
    pub fn undo(&mut self) -> Result<LandmarkMeasurement, RegistrationError> {
        let m = self.measurements.pop().ok_or(RegistrationError::NothingToUndo)?;
        self.refit();
        Ok(m)
    }

    fn refit(&mut self) {
        self.fit = if self.measurements.len() < 3 {
            None
        } else {
            let (bone, scan) = self.point_sets();
            Some(register_transform(&bone, &scan))
        };
    }

    /// Paired point sets: each measurement against a copy of its landmark.
    fn point_sets(&self) -> (Vec<Point3>, Vec<Point3>) {
        self.measurements
            .iter()
            .map(|m| {
                (
                    Point3::xyz(m.point[0], m.point[1], m.point[2], frames::bone()),
                    self.landmarks.landmarks[m.landmark].clone(),
                )
            })
            .unzip()
    }

    /// Latest fit of `T^{bs}` (scan points into the bone-tracker frame);
    /// `None` with fewer than three measurements.
    pub fn fit(&self) -> Option<&Result<TransformFit, CalibrationError>> {
        self.fit.as_ref()
    }

    /// Current fit, if one exists and succeeded.
    pub fn transform(&self) -> Option<&TransformFit> {
        self.fit.as_ref().and_then(|f| f.as_ref().ok())
    }

    /// Per-measurement residual `T^{bs}(r^s) − p^b`, grouped by landmark.
    pub fn landmark_errors(&self) -> Vec<Vec<Vector3<f64>>> {
        let mut out = vec![Vec::new(); self.landmarks.landmarks.len()];
        if let Some(fit) = self.transform() {
            for m in &self.measurements {
                let mapped = fit.transform.transform_vector(&self.landmarks.landmarks[m.landmark].coords);
                out[m.landmark].push(mapped - Vector3::from(m.point));
            }
        }
        out
    }

    /// Histograms of residual magnitudes per landmark.
    pub fn histograms(&self, bin_width: f64) -> Vec<Histogram> {
        self.landmark_errors()
            .iter()
            .map(|errs| Histogram::from_values(errs.iter().map(|e| e.norm()), bin_width))
            .collect()
    }
}

/// Counts over equal-width bins starting at zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub bin_width: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn from_values(values: impl IntoIterator<Item = f64>, bin_width: f64) -> Self {
        let mut counts: Vec<usize> = Vec::new();
        for v in values {
            // values on a bin edge belong to the upper bin despite rounding
            let bin = ((v / bin_width) + 1e-9).floor().max(0.0) as usize;
            if bin >= counts.len() {
                counts.resize(bin + 1, 0);
            }
            counts[bin] += 1;
        }
        Histogram { bin_width, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HandEyeResult {
    /// `T^{vr}`: robot base into the vision frame.
    pub fit: TransformFit,
    pub n_poses: usize,
}

/// One simultaneous reading of the robot flange pose `T^{re}` (from joint
/// encoders) and the drill marker pose `T^{vd}` (from the tracker).
#[derive(Debug, Clone, PartialEq)]
pub struct PosePair {
    pub t_re: RigidTransform,
    pub t_vd: RigidTransform,
}

pub fn hand_eye_register(
    pairs: &[PosePair],
    tip_e: &Point3,
    tip_d: &Point3,
) -> Result<HandEyeResult, RegistrationError> {
    if pairs.len() < 3 {
        return Err(CalibrationError::TooFewMeasurements {
            needed: 3,
            got: pairs.len(),
        }
        .into());
    }
    let mut in_vision = Vec::with_capacity(pairs.len());
    let mut in_robot = Vec::with_capacity(pairs.len());
    for p in pairs {
        in_vision.push(p.t_vd.apply(tip_d)?);
        in_robot.push(p.t_re.apply(tip_e)?);
    }
    let fit = register_transform(&in_vision, &in_robot)?;
    Ok(HandEyeResult {
        fit,
        n_poses: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scan_pt(x: f64, y: f64, z: f64) -> Point3 {
        Point3::xyz(x, y, z, frames::scan())
    }

    fn landmark_set() -> LandmarkSet {
        LandmarkSet::new(
            vec![
                scan_pt(0.0, 0.0, 0.0),
                scan_pt(0.05, 0.0, 0.01),
                scan_pt(0.0, 0.04, -0.01),
                scan_pt(0.03, 0.03, 0.03),
                scan_pt(-0.02, 0.01, 0.02),
            ],
            scan_pt(0.01, 0.01, 0.0),
            scan_pt(0.01, 0.01, 0.04),
        )
        .unwrap()
    }

    /// `T^{bs}` ground truth used to synthesise probed points.
    fn truth() -> RigidTransform {
        RigidTransform::from_rotation(
            Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::new(1.0, 2.0, 0.5)), 0.7),
            Vector3::new(0.1, -0.05, 0.3),
            frames::scan(),
            frames::bone(),
        )
    }

    fn probed(set: &LandmarkSet, i: usize, noise: Vector3<f64>) -> Point3 {
        let mut p = truth().apply(&set.landmarks()[i]).unwrap();
        p.coords += noise;
        p
    }

    #[test]
    fn probe_measure_examples() {
        let tip = Point3::xyz(0.0, 0.0, 0.1, frames::probe());
        let bone = Measurement {
            timestamp: 1.0,
            transform: RigidTransform::identity(frames::bone(), frames::vision()),
            valid: true,
        };
        let probe = Measurement {
            timestamp: 1.02,
            transform: RigidTransform::identity(frames::probe(), frames::vision()),
            valid: true,
        };
        let p = probe_measure(&bone, &probe, &tip).unwrap();
        assert_eq!(p.coords, Vector3::new(0.0, 0.0, 0.1));
        assert_eq!(p.frame, frames::bone());

        let shifted = Measurement {
            transform: RigidTransform::translation_only(Vector3::new(0.2, 0.0, 0.0), frames::probe(), frames::vision()),
            ..probe.clone()
        };
        let p = probe_measure(&bone, &shifted, &tip).unwrap();
        assert!((p.coords - Vector3::new(0.2, 0.0, 0.1)).norm() < 1e-15);

        let hidden = Measurement { valid: false, ..probe.clone() };
        assert!(matches!(probe_measure(&bone, &hidden, &tip), Err(RegistrationError::MeasurementFailed(_))));
        let late = Measurement { timestamp: 1.2, ..probe };
        assert!(matches!(probe_measure(&bone, &late, &tip), Err(RegistrationError::MeasurementFailed(_))));
    }

    #[test]
    fn exact_session_recovers_truth() {
        let set = landmark_set();
        let mut s = RegistrationSession::new(set.clone());
        for i in 0..2 {
            s.add(i, &probed(&set, i, Vector3::zeros())).unwrap();
            assert!(s.fit().is_none());
        }
        s.add(2, &probed(&set, 2, Vector3::zeros())).unwrap();
        let fit = s.transform().unwrap();
        let (angle, dist) = fit.transform.difference(&truth()).unwrap();
        assert!(angle < 1e-9 && dist < 1e-12);
        assert!(fit.rms < 1e-12);
    }

    #[test]
    fn undo_restores_previous_fit_exactly() {
        let set = landmark_set();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut s = RegistrationSession::new(set.clone());
        for k in 0..10 {
            let noise = Vector3::from_fn(|_, _| rng.random_range(-5e-4..5e-4));
            s.add(k % 5, &probed(&set, k % 5, noise)).unwrap();
        }
        let before = s.transform().unwrap().clone();
        s.add(1, &probed(&set, 1, Vector3::new(0.003, 0.0, 0.0))).unwrap();
        assert_ne!(s.transform().unwrap(), &before);
        s.undo().unwrap();
        assert_eq!(s.transform().unwrap(), &before);
    }

    #[test]
    fn fit_is_order_and_duplication_invariant() {
        let set = landmark_set();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let items: Vec<_> = (0..20)
            .map(|k| {
                let noise = Vector3::from_fn(|_, _| rng.random_range(-5e-4..5e-4));
                (k % 5, probed(&set, k % 5, noise))
            })
            .collect();
        let build = |order: &mut dyn Iterator<Item = &(usize, Point3)>| {
            let mut s = RegistrationSession::new(set.clone());
            for (i, p) in order {
                s.add(*i, p).unwrap();
            }
            s.transform().unwrap().clone()
        };
        let base = build(&mut items.iter());
        let reversed = build(&mut items.iter().rev());
        let doubled = build(&mut items.iter().chain(items.iter()));
        for other in [&reversed, &doubled] {
            let (angle, dist) = base.transform.difference(&other.transform).unwrap();
            assert!(angle < 1e-12 && dist < 1e-12, "{angle} {dist}");
        }
    }

    #[test]
    fn session_json_round_trip() {
        let set = landmark_set();
        let mut s = RegistrationSession::new(set.clone());
        for i in 0..4 {
            s.add(i, &probed(&set, i, Vector3::new(1e-4, 0.0, 0.0))).unwrap();
        }
        let json = serde_json::to_string(&s).unwrap();
        let back: RegistrationSession = serde_json::from_str(&json).unwrap();
        let back = RegistrationSession::restore(back.landmarks().clone(), back.measurements()).unwrap();
        assert_eq!(back.transform(), s.transform());
    }

    #[test]
    fn bad_index_and_frames_rejected() {
        let set = landmark_set();
        let mut s = RegistrationSession::new(set.clone());
        assert!(matches!(
            s.add(9, &probed(&set, 0, Vector3::zeros())),
            Err(RegistrationError::BadLandmark { index: 9, count: 5 })
        ));
        assert!(matches!(s.add(0, &scan_pt(0.0, 0.0, 0.0)), Err(RegistrationError::Geometry(_))));
        assert_eq!(s.undo(), Err(RegistrationError::NothingToUndo));
        assert!(matches!(
            LandmarkSet::new(vec![scan_pt(0.0, 0.0, 0.0)], scan_pt(0.0, 0.0, 0.0), scan_pt(0.0, 0.0, 1.0)),
            Err(RegistrationError::TooFewLandmarks(1))
        ));
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::from_values([0.0, 0.00005, 0.0001, 0.00025, 0.00031], 1e-4);
        assert_eq!(h.counts, vec![2, 1, 1, 1]);
        assert_eq!(h.total(), 5);
    }

    fn hand_eye_pairs(t_vr: &RigidTransform, n: usize, seed: u64) -> Vec<PosePair> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // drill marker mounted on the flange: T^{ed}
        let t_ed = RigidTransform::from_rotation(
            Rotation3::from_euler_angles(0.1, -0.2, 0.3),
            Vector3::new(0.02, 0.0, 0.05),
            frames::drill(),
            frames::end_effector(),
        );
        (0..n)
            .map(|_| {
                let r = Rotation3::from_euler_angles(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-1.0..1.0));
                let t = Vector3::new(rng.random_range(0.3..0.6), rng.random_range(-0.2..0.2), rng.random_range(0.2..0.5));
                let t_re = RigidTransform::from_rotation(r, t, frames::end_effector(), frames::robot());
                let t_vd = t_vr.compose(&t_re).unwrap().compose(&t_ed).unwrap();
                PosePair { t_re, t_vd }
            })
            .collect()
    }

    #[test]
    fn hand_eye_noiseless_recovers_truth() {
        let t_vr = RigidTransform::from_rotation(
            Rotation3::from_euler_angles(0.3, 0.1, 2.0),
            Vector3::new(1.2, 0.4, 0.9),
            frames::robot(),
            frames::vision(),
        );
        let tip_e = Point3::xyz(0.05, 0.0, 0.2, frames::end_effector());
        // same physical tip expressed in the marker frame
        let t_ed = RigidTransform::from_rotation(
            Rotation3::from_euler_angles(0.1, -0.2, 0.3),
            Vector3::new(0.02, 0.0, 0.05),
            frames::drill(),
            frames::end_effector(),
        );
        let tip_d = t_ed.inverse().apply(&tip_e).unwrap();
        let pairs = hand_eye_pairs(&t_vr, 10, 1);
        let res = hand_eye_register(&pairs, &tip_e, &tip_d).unwrap();
        let (angle, dist) = res.fit.transform.difference(&t_vr).unwrap();
        assert!(angle < 1e-9 && dist < 1e-12, "{angle} {dist}");
        assert!(res.fit.rms < 1e-9);
        assert_eq!(res.n_poses, 10);

        let err = hand_eye_register(&pairs[..2], &tip_e, &tip_d).unwrap_err();
        assert!(matches!(err, RegistrationError::Solver(CalibrationError::TooFewMeasurements { .. })));
    }
}
