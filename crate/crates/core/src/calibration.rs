//! Best-fit solvers for tool calibration and point registration.
//!
//! * [`pivot_calibrate`] finds a point fixed in a moving body that stays at
//!   one place in the sensor frame while the body pivots about it.
//! * [`axis_calibrate`] finds the direction of a body-fixed axis through a
//!   known point from motion constrained to slide along / turn about it.
//! * [`register_transform`] fits the rigid transform between two
//!   corresponded point sets (Arun's SVD method).
//!
//! Every solver reports the RMS of its residual vectors.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{FrameId, GeometryError, Point3, RigidTransform, UnitVec3};
use crate::recording::Recording;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalibrationError {
    #[error("need at least {needed} measurements, got {got}")]
    TooFewMeasurements { needed: usize, got: usize },
    #[error("degenerate motion: {what} = {value:.3e} below threshold {threshold:.3e}")]
    DegenerateMotion {
        what: &'static str,
        value: f64,
        threshold: f64,
    },
    #[error("points are collinear (singular value ratio {ratio:.3e})")]
    CollinearPoints { ratio: f64 },
    #[error("point sets differ in length: {a} vs {b}")]
    LengthMismatch { a: usize, b: usize },
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// Degeneracy thresholds; the defaults are the documented ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverThresholds {
    /// Pivot: smallest singular value of the stacked `3N×6` system.
    pub pivot_min_singular: f64,
    /// Axis: required ratio of first to second singular value of `M`.
    pub axis_min_ratio: f64,
    /// Axis: smallest RMS travel (m) of the known point along the axis.
    pub axis_min_travel: f64,
    /// Registration: required `σ₂/σ₁` of the cross-covariance.
    pub collinear_ratio: f64,
}

impl Default for SolverThresholds {
    fn default() -> Self {
        SolverThresholds {
            pivot_min_singular: 1e-8,
            axis_min_ratio: 3.0,
            axis_min_travel: 1e-6,
            collinear_ratio: 1e-10,
        }
    }
}

/// Result of a fixed-point calibration.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCalibration {
    /// The point in the moving body's frame (`p^b`).
    pub point_body: Point3,
    /// The fixed point in the sensor frame (`p^a`).
    pub point_fixed: Point3,
    pub rms: f64,
    pub n_used: usize,
    /// Invalid (dropout) entries skipped.
    pub n_skipped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AxisCalibration {
    pub axis: UnitVec3,
    pub rms: f64,
    pub n_used: usize,
    pub n_skipped: usize,
    /// Singular values of the centred point matrix, descending.
    pub singular_values: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformFit {
    pub transform: RigidTransform,
    pub rms: f64,
    pub n_used: usize,
}

/// Root mean square of the norms of `errors`.
pub fn rms_error(errors: &[Vector3<f64>]) -> Result<f64, CalibrationError> {
    if errors.is_empty() {
        return Err(CalibrationError::EmptyInput);
    }
    let sum: f64 = errors.iter().map(|e| e.norm_squared()).sum();
    Ok((sum / errors.len() as f64).sqrt())
}

/// Pivot residuals `p^a − (R_i p^b + o_i)`.
pub fn pivot_residuals<'a>(
    transforms: impl IntoIterator<Item = &'a RigidTransform>,
    point_body: &Vector3<f64>,
    point_fixed: &Vector3<f64>,
) -> Vec<Vector3<f64>> {
    transforms
        .into_iter()
        .map(|t| point_fixed - t.transform_vector(point_body))
        .collect()
}

pub fn pivot_calibrate(rec: &Recording) -> Result<PointCalibration, CalibrationError> {
    pivot_calibrate_with(rec, &SolverThresholds::default())
}

/// Least-squares solution of the stacked system `[-R_i  I] [p^b; p^a] = o_i`.
pub fn pivot_calibrate_with(
    rec: &Recording,
    thresholds: &SolverThresholds,
) -> Result<PointCalibration, CalibrationError> {
    let transforms: Vec<&RigidTransform> = rec.valid().collect();
    let n = transforms.len();
    if n < 3 {
        return Err(CalibrationError::TooFewMeasurements { needed: 3, got: n });
    }
    let mut a = DMatrix::<f64>::zeros(3 * n, 6);
    let mut y = DVector::<f64>::zeros(3 * n);
    for (i, t) in transforms.iter().enumerate() {
        let r = t.rotation();
        for row in 0..3 {
            for col in 0..3 {
                a[(3 * i + row, col)] = -r[(row, col)];
            }
            a[(3 * i + row, 3 + row)] = 1.0;
            y[3 * i + row] = t.translation()[row];
        }
    }

    let svd = a.svd(true, true);
    let smallest = svd.singular_values.min();
    if smallest < thresholds.pivot_min_singular {
        return Err(CalibrationError::DegenerateMotion {
            what: "smallest singular value",
            value: smallest,
            threshold: thresholds.pivot_min_singular,
        });
    }
    let x = svd
        .solve(&y, 0.0)
        .expect("SVD was computed with both U and V");
    let p_body = Vector3::new(x[0], x[1], x[2]);
    let p_fixed = Vector3::new(x[3], x[4], x[5]);

    let residuals = pivot_residuals(transforms.iter().copied(), &p_body, &p_fixed);
    let (from, to) = rec.frames();
    Ok(PointCalibration {
        point_body: Point3::new(p_body, from.clone())?,
        point_fixed: Point3::new(p_fixed, to.clone())?,
        rms: rms_error(&residuals)?,
        n_used: n,
        n_skipped: rec.n_invalid(),
    })
}

/// Options for [`axis_calibrate_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct AxisOptions {
    /// The returned axis has a non-negative dot product with this direction
    /// (body frame). Defaults to `+z`.
    pub hint: Vector3<f64>,
    pub thresholds: SolverThresholds,
}

impl Default for AxisOptions {
    fn default() -> Self {
        AxisOptions {
            hint: Vector3::z(),
            thresholds: SolverThresholds::default(),
        }
    }
}

/// Centroid of the known point in the fixed frame, mapped back into the body
/// frame for each measurement.
pub fn axis_centroid_points(transforms: &[&RigidTransform], known_point: &Vector3<f64>) -> Vec<Vector3<f64>> {
    let n = transforms.len() as f64;
    let centroid_fixed = transforms
        .iter()
        .map(|t| t.transform_vector(known_point))
        .sum::<Vector3<f64>>()
        / n;
    transforms
        .iter()
        .map(|t| t.rotation().transpose() * (centroid_fixed - t.translation()))
        .collect()
}

/// Distances of `points` from the line through `origin` along unit `axis`.
pub fn axis_residuals(points: &[Vector3<f64>], origin: &Vector3<f64>, axis: &Vector3<f64>) -> Vec<Vector3<f64>> {
    points
        .iter()
        .map(|p| {
            let d = p - origin;
            d - d.dot(axis) * axis
        })
        .collect()
}

pub fn axis_calibrate(rec: &Recording, known_point: &Point3) -> Result<AxisCalibration, CalibrationError> {
    axis_calibrate_with(rec, known_point, &AxisOptions::default())
}

pub fn axis_calibrate_with(
    rec: &Recording,
    known_point: &Point3,
    opts: &AxisOptions,
) -> Result<AxisCalibration, CalibrationError> {
    let (body, _) = rec.frames();
    if &known_point.frame != body {
        return Err(GeometryError::FrameMismatch {
            expected: body.clone(),
            actual: known_point.frame.clone(),
        }
        .into());
    }
    let transforms: Vec<&RigidTransform> = rec.valid().collect();
    let n = transforms.len();
    if n < 3 {
        return Err(CalibrationError::TooFewMeasurements { needed: 3, got: n });
    }

    let mu_body = axis_centroid_points(&transforms, &known_point.coords);
    let mean = mu_body.iter().sum::<Vector3<f64>>() / n as f64;
    let m = DMatrix::from_fn(n, 3, |i, j| mu_body[i][j] - mean[j]);
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V");

    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let sv = order.map(|i| svd.singular_values[i]);
    let travel = sv[0] / (n as f64).sqrt();
    if !(travel >= opts.thresholds.axis_min_travel) {
        return Err(CalibrationError::DegenerateMotion {
            what: "RMS travel along the axis",
            value: travel,
            threshold: opts.thresholds.axis_min_travel,
        });
    }
    let ratio = if sv[1] > 0.0 { sv[0] / sv[1] } else { f64::INFINITY };
    if !(ratio >= opts.thresholds.axis_min_ratio) {
        return Err(CalibrationError::DegenerateMotion {
            what: "first/second singular value ratio",
            value: ratio,
            threshold: opts.thresholds.axis_min_ratio,
        });
    }
    let row = v_t.row(order[0]);
    let mut axis = Vector3::new(row[0], row[1], row[2]).normalize();
    if axis.dot(&opts.hint) < 0.0 {
        axis = -axis;
    }

    let residuals = axis_residuals(&mu_body, &known_point.coords, &axis);
    Ok(AxisCalibration {
        axis: UnitVec3::new(axis, body.clone())?,
        rms: rms_error(&residuals)?,
        n_used: n,
        n_skipped: rec.n_invalid(),
        singular_values: sv,
    })
}

/// Residuals `T(p_i^b) − p_i^a`.
pub fn registration_residuals(t: &RigidTransform, points_a: &[Point3], points_b: &[Point3]) -> Vec<Vector3<f64>> {
    points_a
        .iter()
        .zip(points_b)
        .map(|(a, b)| t.transform_vector(&b.coords) - a.coords)
        .collect()
}

fn common_frame(points: &[Point3]) -> Result<FrameId, CalibrationError> {
    let frame = points[0].frame.clone();
    for p in points {
        if p.frame != frame {
            return Err(GeometryError::FrameMismatch {
                expected: frame,
                actual: p.frame.clone(),
            }
            .into());
        }
    }
    Ok(frame)
}

/// Least-squares rigid transform `T^{ab}` mapping `points_b` onto `points_a`
/// (matched by index).
pub fn register_transform(points_a: &[Point3], points_b: &[Point3]) -> Result<TransformFit, CalibrationError> {
    register_transform_with(points_a, points_b, &SolverThresholds::default())
}

pub fn register_transform_with(
    points_a: &[Point3],
    points_b: &[Point3],
    thresholds: &SolverThresholds,
) -> Result<TransformFit, CalibrationError> {
    if points_a.len() != points_b.len() {
        return Err(CalibrationError::LengthMismatch {
            a: points_a.len(),
            b: points_b.len(),
        });
    }
    let n = points_a.len();
    if n < 3 {
        return Err(CalibrationError::TooFewMeasurements { needed: 3, got: n });
    }
    let frame_a = common_frame(points_a)?;
    let frame_b = common_frame(points_b)?;

    let centroid_a = points_a.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n as f64;
    let centroid_b = points_b.iter().map(|p| p.coords).sum::<Vector3<f64>>() / n as f64;
    let mut h = Matrix3::zeros();
    for (a, b) in points_a.iter().zip(points_b) {
        h += (b.coords - centroid_b) * (a.coords - centroid_a).transpose();
    }

    let svd = h.svd(true, true);
    let mut sv = [svd.singular_values[0], svd.singular_values[1], svd.singular_values[2]];
    sv.sort_by(|x, y| y.total_cmp(x));
    let ratio = if sv[0] > 0.0 { sv[1] / sv[0] } else { 0.0 };
    if ratio < thresholds.collinear_ratio {
        return Err(CalibrationError::CollinearPoints { ratio });
    }
    let u = svd.u.expect("requested U");
    let v = svd.v_t.expect("requested V").transpose();
    let d = (v * u.transpose()).determinant().signum();
    let rotation = v * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * u.transpose();
    let translation = centroid_a - rotation * centroid_b;

    let transform = RigidTransform::new(rotation, translation, frame_b, frame_a)?;
    let rms = rms_error(&registration_residuals(&transform, points_a, points_b))?;
    Ok(TransformFit {
        transform,
        rms,
        n_used: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recording::Measurement;
    use nalgebra::{Rotation3, Unit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rot(axis: [f64; 3], angle: f64) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(axis)), angle)
    }

    /// Body pose that places body point `tip` at fixed point `pivot`.
    fn pivot_pose(r: Rotation3<f64>, tip: &Vector3<f64>, pivot: &Vector3<f64>) -> RigidTransform {
        RigidTransform::from_rotation(r, pivot - r * tip, "p".into(), "v".into())
    }

    fn random_rotation(rng: &mut ChaCha8Rng, max_angle: f64) -> Rotation3<f64> {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        rot(axis.into(), rng.random_range(-max_angle..max_angle))
    }

    /// Independent oracle: explicit normal equations `(AᵀA)⁻¹Aᵀy`.
    fn pivot_normal_equations(ts: &[RigidTransform]) -> (Vector3<f64>, Vector3<f64>) {
        let mut ata = nalgebra::Matrix6::<f64>::zeros();
        let mut aty = nalgebra::Vector6::<f64>::zeros();
        for t in ts {
            let mut a = nalgebra::Matrix3x6::<f64>::zeros();
            a.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-t.rotation()));
            a.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());
            ata += a.transpose() * a;
            aty += a.transpose() * t.translation();
        }
        let x = ata.try_inverse().unwrap() * aty;
        (x.fixed_rows::<3>(0).into(), x.fixed_rows::<3>(3).into())
    }

    #[test]
    fn rms_error_examples() {
        assert_eq!(rms_error(&[Vector3::zeros()]).unwrap(), 0.0);
        let mm = 1e-3;
        let r = rms_error(&[Vector3::new(mm, 0.0, 0.0), Vector3::new(0.0, mm, 0.0)]).unwrap();
        assert!((r - mm).abs() < 1e-18);
        let r = rms_error(&[Vector3::new(3.0 * mm, 0.0, 0.0), Vector3::new(0.0, 4.0 * mm, 0.0)]).unwrap();
        assert!((r - 12.5f64.sqrt() * mm).abs() < 1e-15);
        assert_eq!(rms_error(&[]), Err(CalibrationError::EmptyInput));
    }

    #[test]
    fn pivot_exact_three_measurements() {
        let tip = Vector3::new(0.0, 0.0, 0.15);
        let pivot = Vector3::new(0.1, 0.2, 0.3);
        let ts = vec![
            pivot_pose(Rotation3::identity(), &tip, &pivot),
            pivot_pose(rot([1.0, 0.0, 0.0], std::f64::consts::FRAC_PI_2), &tip, &pivot),
            pivot_pose(rot([0.0, 1.0, 0.0], std::f64::consts::FRAC_PI_2), &tip, &pivot),
        ];
        let cal = pivot_calibrate(&Recording::from_transforms(ts, 20.0).unwrap()).unwrap();
        assert!((cal.point_body.coords - tip).norm() < 1e-12);
        assert!((cal.point_fixed.coords - pivot).norm() < 1e-12);
        assert!(cal.rms < 1e-12);
        assert_eq!(cal.point_body.frame.as_str(), "p");
        assert_eq!(cal.point_fixed.frame.as_str(), "v");
    }

    #[test]
    fn pivot_two_measurements_is_too_few() {
        let tip = Vector3::new(0.0, 0.0, 0.15);
        let ts = vec![
            pivot_pose(Rotation3::identity(), &tip, &Vector3::zeros()),
            pivot_pose(rot([1.0, 0.0, 0.0], 1.5), &tip, &Vector3::zeros()),
        ];
        let err = pivot_calibrate(&Recording::from_transforms(ts, 20.0).unwrap()).unwrap_err();
        assert_eq!(err, CalibrationError::TooFewMeasurements { needed: 3, got: 2 });
    }

    #[test]
    fn pivot_without_rotation_is_degenerate() {
        let tip = Vector3::new(0.0, 0.0, 0.15);
        let ts: Vec<_> = (0..50)
            .map(|_| pivot_pose(Rotation3::identity(), &tip, &Vector3::zeros()))
            .collect();
        let err = pivot_calibrate(&Recording::from_transforms(ts, 20.0).unwrap()).unwrap_err();
        assert!(matches!(err, CalibrationError::DegenerateMotion { .. }), "{err:?}");
    }

    #[test]
    fn pivot_skips_invalid_entries() {
        let tip = Vector3::new(0.01, -0.02, 0.15);
        let pivot = Vector3::new(0.1, 0.2, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut entries: Vec<Measurement> = (0..40)
            .map(|i| Measurement {
                timestamp: i as f64 * 0.05,
                transform: pivot_pose(random_rotation(&mut rng, 0.6), &tip, &pivot),
                valid: true,
            })
            .collect();
        // corrupted dropouts must not influence the fit
        for m in entries.iter_mut().step_by(7) {
            m.valid = false;
            m.transform = RigidTransform::translation_only(Vector3::new(5.0, 5.0, 5.0), "p".into(), "v".into());
        }
        let cal = pivot_calibrate(&Recording::new(entries).unwrap()).unwrap();
        assert_eq!(cal.n_skipped, 6);
        assert_eq!(cal.n_used, 34);
        assert!((cal.point_body.coords - tip).norm() < 1e-12);
    }

    #[test]
    fn pivot_agrees_with_normal_equations_oracle() {
        let tip = Vector3::new(0.0, 0.0, 0.15);
        let pivot = Vector3::new(0.1, 0.2, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let normal = rand_distr::Normal::new(0.0, 1e-4 / 3f64.sqrt()).unwrap();
        let ts: Vec<_> = (0..100)
            .map(|_| {
                let t = pivot_pose(random_rotation(&mut rng, 0.7), &tip, &pivot);
                let noise = Vector3::from_fn(|_, _| rng.sample(normal));
                RigidTransform::from_rotation(
                    Rotation3::from_matrix_unchecked(*t.rotation()),
                    t.translation() + noise,
                    "p".into(),
                    "v".into(),
                )
            })
            .collect();
        let (pb, pa) = pivot_normal_equations(&ts);
        let cal = pivot_calibrate(&Recording::from_transforms(ts.clone(), 20.0).unwrap()).unwrap();
        assert!((cal.point_body.coords - pb).abs().max() < 1e-10);
        assert!((cal.point_fixed.coords - pa).abs().max() < 1e-10);
        assert!((cal.point_body.coords - tip).norm() < 5e-5);
        let recomputed = rms_error(&pivot_residuals(&ts, &pb, &pa)).unwrap();
        assert!((cal.rms - recomputed).abs() < 1e-12);
    }

    proptest::proptest! {
        #[test]
        fn pivot_is_equivariant(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let tip = Vector3::new(0.0, 0.01, 0.12);
            let pivot = Vector3::new(-0.2, 0.1, 0.9);
            let ts: Vec<_> = (0..20).map(|_| pivot_pose(random_rotation(&mut rng, 0.8), &tip, &pivot)).collect();
            let g = RigidTransform::from_rotation(random_rotation(&mut rng, 3.0), Vector3::new(0.3, -0.5, 0.2), "v".into(), "v".into());
            let moved: Vec<_> = ts.iter().map(|t| g.compose(t).unwrap()).collect();
            let a = pivot_calibrate(&Recording::from_transforms(ts, 20.0).unwrap()).unwrap();
            let b = pivot_calibrate(&Recording::from_transforms(moved, 20.0).unwrap()).unwrap();
            proptest::prop_assert!((a.point_body.coords - b.point_body.coords).norm() < 1e-9);
            let mapped = g.transform_vector(&a.point_fixed.coords);
            proptest::prop_assert!((mapped - b.point_fixed.coords).norm() < 1e-9);
        }
    }

    /// Poses sliding `s` along body axis `axis` through `known` and rotating
    /// by `phi` about it, expressed so the axis is fixed in the sensor frame.
    fn axis_pose(axis: &Vector3<f64>, known: &Vector3<f64>, s: f64, phi: f64, base: &RigidTransform) -> RigidTransform {
        let spin = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), phi);
        // body-frame motion: p -> spin * (p - known) + known + s * axis
        let local = RigidTransform::from_rotation(spin, known - spin * known + s * axis, "d".into(), "d".into());
        base.compose(&local).unwrap()
    }

    fn sensor_base() -> RigidTransform {
        RigidTransform::from_rotation(rot([0.3, -0.2, 1.0], 0.8), Vector3::new(0.5, -0.1, 1.2), "d".into(), "v".into())
    }

    #[test]
    fn axis_exact_slide() {
        let known = Vector3::new(0.01, 0.02, 0.2);
        let axis = Vector3::z();
        let ts: Vec<_> = (0..=100)
            .map(|i| axis_pose(&axis, &known, i as f64 * 1e-3, 0.0, &sensor_base()))
            .collect();
        let cal = axis_calibrate(
            &Recording::from_transforms(ts, 20.0).unwrap(),
            &Point3::new(known, "d".into()).unwrap(),
        )
        .unwrap();
        assert!(crate::geometry::angle_between(cal.axis.dir(), &axis) < 1e-9);
        assert!(cal.rms < 1e-12);
    }

    #[test]
    fn axis_hint_flips_sign() {
        let known = Vector3::new(0.0, 0.0, 0.2);
        let axis = Vector3::new(1.0, 1.0, 0.0).normalize();
        let ts: Vec<_> = (0..30)
            .map(|i| axis_pose(&axis, &known, i as f64 * 2e-3, 0.1 * i as f64, &sensor_base()))
            .collect();
        let rec = Recording::from_transforms(ts, 20.0).unwrap();
        let kp = Point3::new(known, "d".into()).unwrap();
        for hint in [axis, -axis] {
            let opts = AxisOptions { hint, ..Default::default() };
            let cal = axis_calibrate_with(&rec, &kp, &opts).unwrap();
            assert!((cal.axis.dir() - hint).norm() < 1e-9);
        }
    }

    #[test]
    fn axis_pure_rotation_is_degenerate() {
        let known = Vector3::new(0.0, 0.0, 0.2);
        let ts: Vec<_> = (0..30)
            .map(|i| axis_pose(&Vector3::z(), &known, 0.0, 0.2 * i as f64, &sensor_base()))
            .collect();
        let err = axis_calibrate(
            &Recording::from_transforms(ts, 20.0).unwrap(),
            &Point3::new(known, "d".into()).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, CalibrationError::DegenerateMotion { .. }));
    }

    #[test]
    fn axis_without_motion_is_degenerate() {
        let known = Vector3::new(0.0, 0.0, 0.2);
        let ts: Vec<_> = (0..30).map(|_| axis_pose(&Vector3::z(), &known, 0.01, 0.3, &sensor_base())).collect();
        let err = axis_calibrate(
            &Recording::from_transforms(ts, 20.0).unwrap(),
            &Point3::new(known, "d".into()).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, CalibrationError::DegenerateMotion { what: "RMS travel along the axis", .. }), "{err:?}");
    }

    #[test]
    fn axis_rejects_point_in_wrong_frame() {
        let known = Vector3::new(0.0, 0.0, 0.2);
        let ts: Vec<_> = (0..10)
            .map(|i| axis_pose(&Vector3::z(), &known, i as f64 * 0.01, 0.0, &sensor_base()))
            .collect();
        let err = axis_calibrate(
            &Recording::from_transforms(ts, 20.0).unwrap(),
            &Point3::new(known, "e".into()).unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, CalibrationError::Geometry(GeometryError::FrameMismatch { .. })));
    }

    #[test]
    fn axis_invariant_under_reordering() {
        let known = Vector3::new(0.0, 0.01, 0.2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let axis = Vector3::new(0.1, -0.2, 1.0).normalize();
        let mut ts: Vec<_> = (0..60)
            .map(|_| {
                let mut t = axis_pose(&axis, &known, rng.random_range(0.0..0.1), rng.random_range(-3.0..3.0), &sensor_base());
                let jitter = Vector3::new(rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4), rng.random_range(-1e-4..1e-4));
                t = RigidTransform::from_rotation(Rotation3::from_matrix_unchecked(*t.rotation()), t.translation() + jitter, "d".into(), "v".into());
                t
            })
            .collect();
        let kp = Point3::new(known, "d".into()).unwrap();
        let a = axis_calibrate(&Recording::from_transforms(ts.clone(), 20.0).unwrap(), &kp).unwrap();
        ts.reverse();
        ts.swap(3, 40);
        let b = axis_calibrate(&Recording::from_transforms(ts, 20.0).unwrap(), &kp).unwrap();
        assert!(a.axis.dir().cross(b.axis.dir()).norm() < 1e-12);
        assert!((a.rms - b.rms).abs() < 1e-12);
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, frame: &str) -> Vec<Point3> {
        (0..n)
            .map(|_| Point3::xyz(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1), frame.into()))
            .collect()
    }

    #[test]
    fn register_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pb = random_points(&mut rng, 7, "b");
        let pa: Vec<_> = pb.iter().map(|p| Point3::new(p.coords, "a".into()).unwrap()).collect();
        let fit = register_transform(&pa, &pb).unwrap();
        assert!((fit.transform.rotation() - Matrix3::identity()).abs().max() < 1e-12);
        assert!(fit.rms < 1e-15);
        assert_eq!(fit.transform.from_frame().as_str(), "b");
        assert_eq!(fit.transform.to_frame().as_str(), "a");
    }

    #[test]
    fn register_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pa = random_points(&mut rng, 4, "a");
        let pb = random_points(&mut rng, 3, "b");
        assert_eq!(register_transform(&pa, &pb).unwrap_err(), CalibrationError::LengthMismatch { a: 4, b: 3 });
        let line: Vec<_> = (0..5).map(|i| Point3::xyz(i as f64 * 0.01, 0.0, 0.0, "b".into())).collect();
        let line_a: Vec<_> = (0..5).map(|i| Point3::xyz(0.0, i as f64 * 0.01, 0.0, "a".into())).collect();
        assert!(matches!(register_transform(&line_a, &line), Err(CalibrationError::CollinearPoints { .. })));
        assert!(matches!(
            register_transform(&pa[..2], &pb[..2]),
            Err(CalibrationError::TooFewMeasurements { .. })
        ));
    }

    #[test]
    fn register_never_reflects_mirrored_data() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let pb = random_points(&mut rng, 8, "b");
        let pa: Vec<_> = pb
            .iter()
            .map(|p| Point3::xyz(-p.coords.x, p.coords.y, p.coords.z, "a".into()))
            .collect();
        let fit = register_transform(&pa, &pb).unwrap();
        assert!((fit.transform.rotation().determinant() - 1.0).abs() < 1e-12);
    }
}
