//! Frame-tagged points, directions and rigid transforms.
//!
//! Every transform carries the frame it maps *from* and the frame it maps
//! *to*; `T^{ab}` in the usual notation is a transform with `from = b` and
//! `to = a`. Frame tags are checked at runtime on every `apply`/`compose`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Inputs whose orthonormality defect is at most this are accepted unchanged.
pub const ORTHONORMAL_TOL: f64 = 1e-9;
/// Inputs with a larger defect than this are rejected instead of repaired.
pub const MAX_REPAIRABLE_DEFECT: f64 = 1e-3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("frame mismatch: expected `{expected}`, got `{actual}`")]
    FrameMismatch { expected: FrameId, actual: FrameId },
    #[error("rotation matrix defect {defect:.3e} exceeds repair limit")]
    NotARotation { defect: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("zero-length direction vector")]
    ZeroVector,
    #[error("empty frame name")]
    EmptyFrame,
}

/// Short symbolic frame name, e.g. `v`, `r`, `s`, `p`, `b`, `m`, `d`, `e`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct FrameId(Arc<str>);

impl FrameId {
    pub fn new(name: &str) -> Result<Self, GeometryError> {
        if name.is_empty() {
            return Err(GeometryError::EmptyFrame);
        }
        Ok(FrameId(Arc::from(name)))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

/// Frame tags used throughout the system.
pub mod frames {
    use super::FrameId;

    macro_rules! frame_fn {
        ($($name:ident => $tag:literal),* $(,)?) => {
            $(pub fn $name() -> FrameId { FrameId::new($tag).unwrap() })*
        };
    }

    frame_fn! {
        vision => "v",
        robot => "r",
        scan => "s",
        probe => "p",
        bone => "b",
        rod => "m",
        drill => "d",
        end_effector => "e",
    }
}

impl TryFrom<String> for FrameId {
    type Error = GeometryError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        FrameId::new(&s)
    }
}

impl From<FrameId> for String {
    fn from(f: FrameId) -> String {
        f.0.to_string()
    }
}

impl From<&str> for FrameId {
    /// Panics on an empty name; use [`FrameId::new`] for untrusted input.
    fn from(s: &str) -> Self {
        FrameId::new(s).expect("frame name must be non-empty")
    }
}

impl fmt::Debug for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", &*self.0)
    }
}

impl fmt::Display for FrameId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

fn check_finite(v: &Vector3<f64>, what: &'static str) -> Result<(), GeometryError> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(GeometryError::NonFinite(what))
    }
}

/// A point (metres) expressed in a named frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub coords: Vector3<f64>,
    pub frame: FrameId,
}

impl Point3 {
    pub fn new(coords: Vector3<f64>, frame: FrameId) -> Result<Self, GeometryError> {
        check_finite(&coords, "point")?;
        Ok(Point3 { coords, frame })
    }

    pub fn xyz(x: f64, y: f64, z: f64, frame: FrameId) -> Self {
        Point3 {
            coords: Vector3::new(x, y, z),
            frame,
        }
    }

    pub fn distance(&self, other: &Point3) -> Result<f64, GeometryError> {
        same_frame(&self.frame, &other.frame)?;
        Ok((self.coords - other.coords).norm())
    }
}

/// A unit direction expressed in a named frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawDirection")]
pub struct UnitVec3 {
    dir: Vector3<f64>,
    pub frame: FrameId,
}

#[derive(Deserialize)]
struct RawDirection {
    dir: Vector3<f64>,
    frame: FrameId,
}

impl TryFrom<RawDirection> for UnitVec3 {
    type Error = GeometryError;

    fn try_from(raw: RawDirection) -> Result<Self, GeometryError> {
        UnitVec3::new(raw.dir, raw.frame)
    }
}

impl UnitVec3 {
    /// Normalises `v`; fails on zero or non-finite input.
    pub fn new(v: Vector3<f64>, frame: FrameId) -> Result<Self, GeometryError> {
        check_finite(&v, "direction")?;
        let n = v.norm();
        if n < 1e-15 {
            return Err(GeometryError::ZeroVector);
        }
        Ok(UnitVec3 { dir: v / n, frame })
    }

    pub fn dir(&self) -> &Vector3<f64> {
        &self.dir
    }

    pub fn negated(&self) -> Self {
        UnitVec3 {
            dir: -self.dir,
            frame: self.frame.clone(),
        }
    }

    /// Angle in radians between two directions of the same frame.
    pub fn angle_to(&self, other: &UnitVec3) -> Result<f64, GeometryError> {
        same_frame(&self.frame, &other.frame)?;
        Ok(angle_between(&self.dir, &other.dir))
    }
}

/// Numerically robust angle between two vectors.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

fn same_frame(expected: &FrameId, actual: &FrameId) -> Result<(), GeometryError> {
    if expected == actual {
        Ok(())
    } else {
        Err(GeometryError::FrameMismatch {
            expected: expected.clone(),
            actual: actual.clone(),
        })
    }
}

/// Largest absolute entry of `R Rᵀ − I`, plus the determinant deviation.
pub fn orthonormality_defect(r: &Matrix3<f64>) -> f64 {
    let gram = (r * r.transpose() - Matrix3::identity()).abs().max();
    gram.max((r.determinant() - 1.0).abs())
}

/// Axis-angle magnitude of a rotation matrix, radians in `[0, π]`.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let s = Vector3::new(
        r[(2, 1)] - r[(1, 2)],
        r[(0, 2)] - r[(2, 0)],
        r[(1, 0)] - r[(0, 1)],
    )
    .norm()
        / 2.0;
    s.atan2(c)
}

/// Closest proper rotation to `m` in the Frobenius sense.
pub fn nearest_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let d = (u * v_t).determinant().signum();
    u * Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, d)) * v_t
}

/// Rigid transform `p_to = R p_from + o`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
    from: FrameId,
    to: FrameId,
    correction: f64,
}

impl RigidTransform {
    /// Validates `rotation`; small defects are projected onto SO(3) and the
    /// Frobenius size of the correction is kept in [`Self::correction`].
    pub fn new(
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        from: FrameId,
        to: FrameId,
    ) -> Result<Self, GeometryError> {
        check_finite(&translation, "translation")?;
        if rotation.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("rotation"));
        }
        let defect = orthonormality_defect(&rotation);
        let (rotation, correction) = if defect <= ORTHONORMAL_TOL {
            (rotation, 0.0)
        } else if defect <= MAX_REPAIRABLE_DEFECT {
            let fixed = nearest_rotation(&rotation);
            (fixed, (fixed - rotation).norm())
        } else {
            return Err(GeometryError::NotARotation { defect });
        };
        Ok(RigidTransform {
            rotation,
            translation,
            from,
            to,
            correction,
        })
    }

    /// Builds from a quaternion `[w, x, y, z]`, normalised on the way in.
    pub fn from_quaternion(
        q: [f64; 4],
        translation: Vector3<f64>,
        from: FrameId,
        to: FrameId,
    ) -> Result<Self, GeometryError> {
        let raw = Quaternion::new(q[0], q[1], q[2], q[3]);
        if q.iter().any(|x| !x.is_finite()) {
            return Err(GeometryError::NonFinite("quaternion"));
        }
        if raw.norm() < 1e-12 {
            return Err(GeometryError::ZeroVector);
        }
        let uq = UnitQuaternion::from_quaternion(raw);
        Self::new(*uq.to_rotation_matrix().matrix(), translation, from, to)
    }

    pub fn from_rotation(
        rotation: Rotation3<f64>,
        translation: Vector3<f64>,
        from: FrameId,
        to: FrameId,
    ) -> Self {
        RigidTransform {
            rotation: *rotation.matrix(),
            translation,
            from,
            to,
            correction: 0.0,
        }
    }

    pub fn identity(from: FrameId, to: FrameId) -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            from,
            to,
            correction: 0.0,
        }
    }

    pub fn translation_only(t: Vector3<f64>, from: FrameId, to: FrameId) -> Self {
        RigidTransform {
            translation: t,
            ..Self::identity(from, to)
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    pub fn from_frame(&self) -> &FrameId {
        &self.from
    }

    pub fn to_frame(&self) -> &FrameId {
        &self.to
    }

    /// Frobenius norm of the repair applied at construction (0 if none).
    pub fn correction(&self) -> f64 {
        self.correction
    }

    /// Same numbers, relabelled frames.
    pub fn relabel(mut self, from: FrameId, to: FrameId) -> Self {
        self.from = from;
        self.to = to;
        self
    }

    pub fn quaternion(&self) -> [f64; 4] {
        let q = UnitQuaternion::from_matrix(&self.rotation);
        [q.w, q.i, q.j, q.k]
    }

    /// Magnitude of the rotation (axis-angle angle), radians in `[0, π]`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }

    /// Untagged action on raw coordinates.
    #[inline]
    pub fn transform_vector(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    #[inline]
    pub fn rotate_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn apply(&self, p: &Point3) -> Result<Point3, GeometryError> {
        same_frame(&self.from, &p.frame)?;
        Ok(Point3 {
            coords: self.transform_vector(&p.coords),
            frame: self.to.clone(),
        })
    }

    pub fn apply_dir(&self, u: &UnitVec3) -> Result<UnitVec3, GeometryError> {
        same_frame(&self.from, &u.frame)?;
        Ok(UnitVec3 {
            dir: self.rotation * u.dir,
            frame: self.to.clone(),
        })
    }

    /// `self ∘ inner`: apply `inner` first.
    pub fn compose(&self, inner: &RigidTransform) -> Result<RigidTransform, GeometryError> {
        same_frame(&self.from, &inner.to)?;
        Ok(RigidTransform {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation + self.translation,
            from: inner.from.clone(),
            to: self.to.clone(),
            correction: 0.0,
        })
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
            from: self.to.clone(),
            to: self.from.clone(),
            correction: 0.0,
        }
    }

    /// Rotation angle and translation distance between two transforms with
    /// the same frame tags.
    pub fn difference(&self, other: &RigidTransform) -> Result<(f64, f64), GeometryError> {
        same_frame(&self.from, &other.from)?;
        same_frame(&self.to, &other.to)?;
        let rel = self.rotation.transpose() * other.rotation;
        Ok((
            rotation_angle(&rel),
            (self.translation - other.translation).norm(),
        ))
    }
}

/// Serialized form `{from, to, q: [w,x,y,z], t: [x,y,z]}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransformRecord {
    pub from: FrameId,
    pub to: FrameId,
    pub q: [f64; 4],
    pub t: [f64; 3],
}

impl From<&RigidTransform> for TransformRecord {
    fn from(t: &RigidTransform) -> Self {
        TransformRecord {
            from: t.from.clone(),
            to: t.to.clone(),
            q: t.quaternion(),
            t: [t.translation.x, t.translation.y, t.translation.z],
        }
    }
}

impl TryFrom<TransformRecord> for RigidTransform {
    type Error = GeometryError;
    fn try_from(r: TransformRecord) -> Result<Self, Self::Error> {
        RigidTransform::from_quaternion(r.q, Vector3::from(r.t), r.from, r.to)
    }
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        TransformRecord::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let rec = TransformRecord::deserialize(d)?;
        RigidTransform::try_from(rec).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::*;
    use proptest::prelude::*;

    mod approx_eq {
        use nalgebra::{Matrix3, Vector3};
        pub fn vclose(a: &Vector3<f64>, b: &Vector3<f64>, tol: f64) -> bool {
            (a - b).abs().max() <= tol
        }
        pub fn mclose(a: &Matrix3<f64>, b: &Matrix3<f64>, tol: f64) -> bool {
            (a - b).abs().max() <= tol
        }
    }

    fn f(s: &str) -> FrameId {
        FrameId::from(s)
    }

    fn rot_z(angle: f64) -> Matrix3<f64> {
        *Rotation3::from_axis_angle(&Vector3::z_axis(), angle).matrix()
    }

    fn arb_transform(from: &'static str, to: &'static str) -> impl Strategy<Value = RigidTransform> {
        (
            prop::array::uniform3(-1.0f64..1.0),
            -3.1f64..3.1,
            prop::array::uniform3(-2.0f64..2.0),
        )
            .prop_filter("axis", |(a, _, _)| Vector3::from(*a).norm() > 1e-3)
            .prop_map(move |(axis, angle, t)| {
                let axis = nalgebra::Unit::new_normalize(Vector3::from(axis));
                RigidTransform::from_rotation(
                    Rotation3::from_axis_angle(&axis, angle),
                    Vector3::from(t),
                    f(from),
                    f(to),
                )
            })
    }

    #[test]
    fn apply_identity() {
        let t = RigidTransform::identity(f("b"), f("a"));
        let p = t.apply(&Point3::xyz(1.0, 2.0, 3.0, f("b"))).unwrap();
        assert_eq!(p.coords, Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(p.frame, f("a"));
    }

    #[test]
    fn apply_pure_translation() {
        let t = RigidTransform::translation_only(Vector3::new(0.1, 0.0, 0.0), f("b"), f("a"));
        let p = t.apply(&Point3::xyz(0.0, 0.0, 0.0, f("b"))).unwrap();
        assert_eq!(p.coords, Vector3::new(0.1, 0.0, 0.0));
    }

    #[test]
    fn apply_quarter_turn() {
        let t = RigidTransform::new(rot_z(std::f64::consts::FRAC_PI_2), Vector3::zeros(), f("b"), f("a"))
            .unwrap();
        let p = t.apply(&Point3::xyz(1.0, 0.0, 0.0, f("b"))).unwrap();
        assert!(vclose(&p.coords, &Vector3::new(0.0, 1.0, 0.0), 1e-15));
    }

    #[test]
    fn apply_rejects_wrong_frame() {
        let t = RigidTransform::identity(f("b"), f("a"));
        let err = t.apply(&Point3::xyz(0.0, 0.0, 0.0, f("c"))).unwrap_err();
        assert!(matches!(err, GeometryError::FrameMismatch { .. }));
    }

    #[test]
    fn compose_checks_frames() {
        let ab = RigidTransform::identity(f("b"), f("a"));
        let cd = RigidTransform::identity(f("d"), f("c"));
        assert!(ab.compose(&cd).is_err());
        let bc = RigidTransform::identity(f("c"), f("b"));
        let ac = ab.compose(&bc).unwrap();
        assert_eq!(ac.from_frame(), &f("c"));
        assert_eq!(ac.to_frame(), &f("a"));
    }

    #[test]
    fn inverse_of_translation() {
        let t = RigidTransform::translation_only(Vector3::new(0.1, 0.0, 0.0), f("b"), f("a"));
        let inv = t.inverse();
        assert_eq!(inv.translation(), &Vector3::new(-0.1, 0.0, 0.0));
        assert_eq!(inv.from_frame(), &f("a"));
        let id = RigidTransform::identity(f("a"), f("a"));
        assert_eq!(id.inverse().rotation(), &Matrix3::identity());
    }

    #[test]
    fn noisy_rotation_is_repaired_and_reported() {
        let mut r = rot_z(0.3);
        r[(0, 1)] += 1e-5;
        let t = RigidTransform::new(r, Vector3::zeros(), f("b"), f("a")).unwrap();
        assert!(t.correction() > 0.0 && t.correction() < 1e-4);
        assert!(orthonormality_defect(t.rotation()) < 1e-12);
    }

    #[test]
    fn grossly_wrong_rotation_is_rejected() {
        let mut r = rot_z(0.3);
        r[(0, 1)] += 0.01;
        assert!(matches!(
            RigidTransform::new(r, Vector3::zeros(), f("b"), f("a")),
            Err(GeometryError::NotARotation { .. })
        ));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(RigidTransform::new(reflection, Vector3::zeros(), f("b"), f("a")).is_err());
    }

    #[test]
    fn json_form_round_trips_and_normalises() {
        let json = r#"{"from":"d","to":"v","q":[2.0,0.0,0.0,0.0],"t":[0.1,0.2,0.3]}"#;
        let t: RigidTransform = serde_json::from_str(json).unwrap();
        assert!(mclose(t.rotation(), &Matrix3::identity(), 1e-15));
        assert_eq!(t.from_frame().as_str(), "d");
        let back = serde_json::to_string(&t).unwrap();
        let t2: RigidTransform = serde_json::from_str(&back).unwrap();
        assert!(vclose(t2.translation(), t.translation(), 0.0));
    }

    #[test]
    fn empty_frame_rejected() {
        assert!(FrameId::new("").is_err());
        assert!(serde_json::from_str::<FrameId>("\"\"").is_err());
    }

    #[test]
    fn rotation_angle_matches_construction() {
        let axis = nalgebra::Unit::new_normalize(Vector3::new(1.0, -2.0, 0.5));
        for &a in &[0.0, 1e-8, 0.35, 2.0, 3.1] {
            let t = RigidTransform::from_rotation(
                Rotation3::from_axis_angle(&axis, a),
                Vector3::zeros(),
                f("b"),
                f("a"),
            );
            assert!((t.rotation_angle() - a).abs() < 1e-12, "{a}");
        }
    }

    proptest! {
        #[test]
        fn compose_matches_double_application(
            a in arb_transform("b", "a"),
            b in arb_transform("c", "b"),
            pts in prop::collection::vec(prop::array::uniform3(-1.0f64..1.0), 10),
        ) {
            let ab = a.compose(&b).unwrap();
            for p in pts {
                let p = Point3::new(Vector3::from(p), f("c")).unwrap();
                let direct = ab.apply(&p).unwrap();
                let twice = a.apply(&b.apply(&p).unwrap()).unwrap();
                prop_assert!(vclose(&direct.coords, &twice.coords, 1e-12));
            }
        }

        #[test]
        fn compose_with_inverse_is_identity(t in arb_transform("b", "a")) {
            let id = t.compose(&t.inverse()).unwrap();
            prop_assert!(mclose(id.rotation(), &Matrix3::identity(), 1e-12));
            prop_assert!(vclose(id.translation(), &Vector3::zeros(), 1e-12));
            let id2 = t.inverse().compose(&t).unwrap();
            prop_assert!(mclose(id2.rotation(), &Matrix3::identity(), 1e-12));
            prop_assert!(vclose(id2.translation(), &Vector3::zeros(), 1e-12));
            let with_identity = t.compose(&RigidTransform::identity(f("b"), f("b"))).unwrap();
            prop_assert!(mclose(with_identity.rotation(), t.rotation(), 0.0));
        }

        #[test]
        fn apply_preserves_distances(
            t in arb_transform("b", "a"),
            p in prop::array::uniform3(-1.0f64..1.0),
            q in prop::array::uniform3(-1.0f64..1.0),
        ) {
            let p = Point3::new(Vector3::from(p), f("b")).unwrap();
            let q = Point3::new(Vector3::from(q), f("b")).unwrap();
            let d0 = p.distance(&q).unwrap();
            let d1 = t.apply(&p).unwrap().distance(&t.apply(&q).unwrap()).unwrap();
            prop_assert!((d0 - d1).abs() < 1e-9);
        }

        #[test]
        fn compose_is_associative(
            a in arb_transform("b", "a"),
            b in arb_transform("c", "b"),
            c in arb_transform("d", "c"),
        ) {
            let left = a.compose(&b).unwrap().compose(&c).unwrap();
            let right = a.compose(&b.compose(&c).unwrap()).unwrap();
            prop_assert!(mclose(left.rotation(), right.rotation(), 1e-12));
            prop_assert!(vclose(left.translation(), right.translation(), 1e-12));
        }
    }
}
