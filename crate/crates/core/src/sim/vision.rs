//! Synthetic optical tracker.

use std::collections::VecDeque;

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::geometry::RigidTransform;
use crate::outer_loop::VisionFrame;

use super::scenario::VisionNoise;

fn gaussian3<R: Rng>(rng: &mut R, rms: f64) -> Vector3<f64> {
    let s = rms / 3f64.sqrt();
    Vector3::new(
        rng.sample::<f64, _>(StandardNormal) * s,
        rng.sample::<f64, _>(StandardNormal) * s,
        rng.sample::<f64, _>(StandardNormal) * s,
    )
}

/// A marker pose as the tracker reports it: the true pose perturbed by a
/// small rotation and a translation, both in the tracker frame.
pub fn noisy_pose<R: Rng>(truth: &RigidTransform, noise: &VisionNoise, rng: &mut R) -> RigidTransform {
    let dt = gaussian3(rng, noise.sigma);
    let dr = Rotation3::new(gaussian3(rng, noise.sigma_rot));
    RigidTransform::from_rotation(
        dr * Rotation3::from_matrix_unchecked(*truth.rotation()),
        truth.translation() + dt,
        truth.from_frame().clone(),
        truth.to_frame().clone(),
    )
}

/// Noisy pose, or `None` on a dropout. Always consumes the same number of
/// random draws so dropouts do not shift later noise.
pub fn observe<R: Rng>(truth: &RigidTransform, noise: &VisionNoise, rng: &mut R) -> Option<RigidTransform> {
    let seen = rng.random::<f64>() >= noise.dropout_prob;
    let pose = noisy_pose(truth, noise, rng);
    seen.then_some(pose)
}

/// Tracker that delivers frames `latency_frames` periods late.
#[derive(Debug, Clone)]
pub struct VisionSensor {
    pub noise: VisionNoise,
    queue: VecDeque<VisionFrame>,
}

impl VisionSensor {
    pub fn new(noise: VisionNoise) -> Self {
        VisionSensor { noise, queue: VecDeque::new() }
    }

    /// Captures the true bone and drill marker poses at `t` and returns the
    /// frame due now, if any.
    pub fn capture<R: Rng>(
        &mut self,
        t: f64,
        t_vb: &RigidTransform,
        t_vd: &RigidTransform,
        rng: &mut R,
    ) -> Option<VisionFrame> {
        let frame = VisionFrame {
            timestamp: t,
            t_vb: observe(t_vb, &self.noise, rng),
            t_vd: observe(t_vd, &self.noise, rng),
        };
        self.queue.push_back(frame);
        if self.queue.len() > self.noise.latency_frames {
            self.queue.pop_front()
        } else {
            None
        }
    }

    pub fn clear(&mut self) {
        self.queue.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::frames;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pose() -> RigidTransform {
        RigidTransform::from_rotation(
            Rotation3::from_euler_angles(0.3, -0.2, 1.0),
            Vector3::new(0.1, 0.2, 1.5),
            frames::bone(),
            frames::vision(),
        )
    }

    #[test]
    fn translation_noise_has_the_configured_rms() {
        let noise = VisionNoise { sigma: 0.25e-3, sigma_rot: 0.0, dropout_prob: 0.0, latency_frames: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let truth = pose();
        let n = 20_000;
        let ms: f64 = (0..n)
            .map(|_| (noisy_pose(&truth, &noise, &mut rng).translation() - truth.translation()).norm_squared())
            .sum::<f64>()
            / n as f64;
        assert!((ms.sqrt() / 0.25e-3 - 1.0).abs() < 0.02);
    }

    #[test]
    fn rotation_noise_has_the_configured_rms() {
        let noise = VisionNoise { sigma: 0.0, sigma_rot: 1e-3, dropout_prob: 0.0, latency_frames: 0 };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let truth = pose();
        let n = 20_000;
        let ms: f64 = (0..n)
            .map(|_| noisy_pose(&truth, &noise, &mut rng).difference(&truth).unwrap().0.powi(2))
            .sum::<f64>()
            / n as f64;
        assert!((ms.sqrt() / 1e-3 - 1.0).abs() < 0.02);
    }

    #[test]
    fn dropout_rate_matches() {
        let noise = VisionNoise { dropout_prob: 0.3, ..VisionNoise::none() };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let missing = (0..n).filter(|_| observe(&pose(), &noise, &mut rng).is_none()).count();
        assert!((missing as f64 / n as f64 - 0.3).abs() < 0.02);
    }

    #[test]
    fn latency_delays_by_whole_frames() {
        let noise = VisionNoise { latency_frames: 3, ..VisionNoise::none() };
        let mut sensor = VisionSensor::new(noise);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut out = Vec::new();
        for k in 0..10 {
            let t = k as f64 * 0.05;
            out.push(sensor.capture(t, &pose(), &pose(), &mut rng).map(|f| f.timestamp));
        }
        assert!(out[..3].iter().all(Option::is_none));
        for (k, stamp) in out.iter().enumerate().skip(3) {
            assert_eq!(*stamp, Some((k - 3) as f64 * 0.05));
        }
    }
}
