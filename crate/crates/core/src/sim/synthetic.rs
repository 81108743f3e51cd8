//! Synthetic calibration and registration recordings with known truth, in
//! the default room.

use std::str::FromStr;

use nalgebra::{DVector, Rotation3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::geometry::{frames, RigidTransform};
use crate::recording::{Measurement, Recording};
use crate::robot::RobotModel;

use super::scenario::{VisionNoise, WorldConfig};
use super::world::{axis_recording, handeye_pairs, landmark_touches, pivot_recording, World, PIVOT_RANGE};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecordingKind {
    Pivot,
    Axis,
    Landmarks,
    HandEye,
}

impl FromStr for RecordingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "pivot" => Ok(RecordingKind::Pivot),
            "axis" => Ok(RecordingKind::Axis),
            "landmarks" => Ok(RecordingKind::Landmarks),
            "handeye" => Ok(RecordingKind::HandEye),
            _ => Err(format!("unknown recording kind {s:?} (pivot, axis, landmarks, handeye)")),
        }
    }
}

impl RecordingKind {
    /// Pivot and axis: 30 s at 20 Hz. Landmarks: repeats per landmark.
    /// Hand-eye: poses.
    pub fn default_samples(self) -> usize {
        match self {
            RecordingKind::Pivot | RecordingKind::Axis => 600,
            RecordingKind::Landmarks => 15,
            RecordingKind::HandEye => 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct GroundTruth {
    /// Pivot: tip in the body frame. Axis: the known tip. Landmarks: probe
    /// tip. Hand-eye: drill tip in the end-effector frame.
    pub point: Option<[f64; 3]>,
    /// Pivot: pivot point in the tracker frame. Hand-eye: drill tip in the
    /// drill-marker frame.
    pub point_fixed: Option<[f64; 3]>,
    pub axis: Option<[f64; 3]>,
    /// Landmarks: `T^{bs}`. Hand-eye: `T^{vr}`.
    pub transform: Option<RigidTransform>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Synthetic {
    pub kind: RecordingKind,
    /// Pivot and axis: the moving body. Landmarks: probe `T^{vp}`.
    /// Hand-eye: flange `T^{re}`.
    pub primary: Recording,
    /// Landmarks: bone marker `T^{vb}`. Hand-eye: drill marker `T^{vd}`.
    pub secondary: Option<Recording>,
    /// Landmark index of each entry (landmarks only).
    pub labels: Vec<usize>,
    pub truth: GroundTruth,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

/// Generates a recording of `kind` with `samples` samples. The same seed
/// gives a bit-identical recording.
pub fn generate_recording(kind: RecordingKind, noise: &VisionNoise, samples: usize, seed: u64) -> Synthetic {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = WorldConfig::default();
    let world = World::from_config(&config);
    let pivot = Vector3::new(0.05, -0.1, 1.3);
    match kind {
        RecordingKind::Pivot => {
            let rec = pivot_recording(&world.probe_tip, frames::probe(), &pivot, &Rotation3::from_euler_angles(2.8, 0.1, 0.0), PIVOT_RANGE, samples, noise, &mut rng);
            Synthetic {
                kind,
                primary: rec,
                secondary: None,
                labels: Vec::new(),
                truth: GroundTruth { point: Some(arr(&world.probe_tip)), point_fixed: Some(arr(&pivot)), ..Default::default() },
            }
        }
        RecordingKind::Axis => {
            let rec = axis_recording(
                &world.drill_tip_d(),
                &world.drill_axis_d(),
                frames::drill(),
                &pivot,
                &Vector3::new(0.1, 0.2, -1.0),
                0.03,
                samples,
                noise,
                &mut rng,
            );
            Synthetic {
                kind,
                primary: rec,
                secondary: None,
                labels: Vec::new(),
                truth: GroundTruth { point: Some(arr(&world.drill_tip_d())), axis: Some(arr(&world.drill_axis_d())), ..Default::default() },
            }
        }
        RecordingKind::Landmarks => {
            let touches = landmark_touches(&world, &world.t_rs, samples, 0.0, 0.0, noise, &mut rng);
            let labels = touches.iter().map(|t| t.landmark).collect();
            let (bone, probe): (Vec<Measurement>, Vec<Measurement>) = touches.into_iter().map(|t| (t.bone, t.probe)).unzip();
            Synthetic {
                kind,
                primary: Recording::new(probe).expect("ordered"),
                secondary: Some(Recording::new(bone).expect("ordered")),
                labels,
                truth: GroundTruth { point: Some(arr(&world.probe_tip)), transform: Some(world.t_bs()), ..Default::default() },
            }
        }
        RecordingKind::HandEye => {
            let model = RobotModel::bundled();
            let posture = DVector::from_vec(config.posture.clone());
            let pairs = handeye_pairs(&world, &model, &model, &posture, 0.15, samples, noise, &mut rng);
            let stamp = |i: usize, transform: RigidTransform| Measurement { timestamp: i as f64, transform, valid: true };
            let (re, vd): (Vec<_>, Vec<_>) = pairs.into_iter().enumerate().map(|(i, p)| (stamp(i, p.t_re), stamp(i, p.t_vd))).unzip();
            Synthetic {
                kind,
                primary: Recording::new(re).expect("ordered"),
                secondary: Some(Recording::new(vd).expect("ordered")),
                labels: Vec::new(),
                truth: GroundTruth {
                    point: Some(arr(&world.drill_tip)),
                    point_fixed: Some(arr(&world.drill_tip_d())),
                    transform: Some(world.t_vr()),
                    ..Default::default()
                },
            }
        }
    }
}
