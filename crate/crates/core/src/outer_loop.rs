//! Vision-rate correction loop.
//!
//! Each tracker frame re-aligns the virtual drill with the (low-pass
//! filtered) planned axis as the bone moves, integrates the spring offsets
//! so the *measured* drill converges onto the virtual one, and stops the
//! controller if the bone moves too far.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::controller::{ControllerState, Status, TerminationReason};
use crate::geometry::RigidTransform;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OuterLoopParams {
    /// Integral gain, 1/s.
    pub k_i: f64,
    /// Vision rate, Hz.
    pub rate: f64,
    /// Cutoff of the entry/exit low-pass filter, Hz.
    pub filter_cutoff: f64,
    pub clamp_tip: f64,
    pub clamp_base: f64,
    pub terminate_translation: f64,
    pub terminate_rotation: f64,
}

impl Default for OuterLoopParams {
    fn default() -> Self {
        OuterLoopParams {
            k_i: 1.0,
            rate: 20.0,
            filter_cutoff: 2.0,
            clamp_tip: 0.025,
            clamp_base: 0.150,
            terminate_translation: 0.075,
            terminate_rotation: 20f64.to_radians(),
        }
    }
}

impl OuterLoopParams {
    /// Checks the parameters; the error names the offending field.
    pub fn validate(&self) -> Result<(), (&'static str, String)> {
        if !(self.k_i >= 0.0 && self.k_i.is_finite()) {
            return Err(("k_i", "must be non-negative".into()));
        }
        for (name, v) in [
            ("rate", self.rate),
            ("filter_cutoff", self.filter_cutoff),
            ("clamp_tip", self.clamp_tip),
            ("clamp_base", self.clamp_base),
            ("terminate_translation", self.terminate_translation),
            ("terminate_rotation", self.terminate_rotation),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err((name, "must be positive".into()));
            }
        }
        if self.clamp_tip >= self.clamp_base {
            return Err(("clamp_tip", "must be below clamp_base".into()));
        }
        Ok(())
    }

    /// Smoothing factor of the per-frame exponential filter.
    pub fn filter_alpha(&self) -> f64 {
        1.0 - (-2.0 * std::f64::consts::PI * self.filter_cutoff / self.rate).exp()
    }
}

/// Largest axis tilt the base offset can produce for virtual drill length
/// `length`.
pub fn max_angular_correction(params: &OuterLoopParams, length: f64) -> f64 {
    (params.clamp_base / length).atan()
}

/// One tracker frame; `None` means the marker was not seen.
#[derive(Debug, Clone, PartialEq)]
pub struct VisionFrame {
    pub timestamp: f64,
    /// `T^{vb}`, bone marker.
    pub t_vb: Option<RigidTransform>,
    /// `T^{vd}`, drill marker.
    pub t_vd: Option<RigidTransform>,
}

/// Registration and calibration results the loop works from.
#[derive(Debug, Clone, PartialEq)]
pub struct OuterLoopSetup {
    /// `T^{rv}`, vision into robot base.
    pub t_rv: RigidTransform,
    /// `T^{bs}`, scan into bone marker.
    pub t_bs: RigidTransform,
    /// Planned entry and exit, scan frame.
    pub entry: Vector3<f64>,
    pub exit: Vector3<f64>,
    /// Drill bit tip and direction in the drill-marker frame.
    pub drill_tip: Vector3<f64>,
    pub drill_axis: Vector3<f64>,
    /// Virtual drill length `L`.
    pub length: f64,
}

impl OuterLoopSetup {
    /// Planned entry and exit in the robot frame for bone pose `t_vb`.
    pub fn plan_in_robot(&self, t_vb: &RigidTransform) -> (Vector3<f64>, Vector3<f64>) {
        let t_rs = self
            .t_rv
            .compose(t_vb)
            .and_then(|t| t.compose(&self.t_bs))
            .expect("frames chain r<-v<-b<-s");
        (t_rs.transform_vector(&self.entry), t_rs.transform_vector(&self.exit))
    }

    /// Measured drill tip and base points in the robot frame.
    pub fn measured_drill(&self, t_vd: &RigidTransform) -> (Vector3<f64>, Vector3<f64>) {
        let t_rd = self.t_rv.compose(t_vd).expect("frames chain r<-v<-d");
        let tip = t_rd.transform_vector(&self.drill_tip);
        let base = t_rd.transform_vector(&(self.drill_tip + self.length * self.drill_axis));
        (tip, base)
    }
}

/// What a frame did, for logging.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameReport {
    pub axis_updated: bool,
    pub offsets_updated: bool,
    pub terminated: bool,
    /// Measured tip and base (robot frame), when the drill was seen.
    pub measured_tip: Option<Vector3<f64>>,
    pub measured_base: Option<Vector3<f64>>,
}

#[derive(Debug, Clone)]
pub struct OuterLoop {
    pub params: OuterLoopParams,
    pub setup: OuterLoopSetup,
    filtered: Option<(Vector3<f64>, Vector3<f64>)>,
    reference_bone: Option<RigidTransform>,
    rate_tip: Vector3<f64>,
    rate_base: Vector3<f64>,
    e_tip: Vector3<f64>,
    e_base: Vector3<f64>,
}

impl OuterLoop {
    pub fn new(params: OuterLoopParams, setup: OuterLoopSetup) -> Self {
        OuterLoop {
            params,
            setup,
            filtered: None,
            reference_bone: None,
            rate_tip: Vector3::zeros(),
            rate_base: Vector3::zeros(),
            e_tip: Vector3::zeros(),
            e_base: Vector3::zeros(),
        }
    }

    /// Starts the filter at a known axis so the first frame does not jump.
    pub fn prime_axis(&mut self, entry: Vector3<f64>, exit: Vector3<f64>) {
        self.filtered = Some((entry, exit));
    }

    pub fn filtered_axis(&self) -> Option<(Vector3<f64>, Vector3<f64>)> {
        self.filtered
    }

    /// Latest tracking errors `z_v − z̄` (tip, base).
    pub fn errors(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.e_tip, self.e_base)
    }

    /// Offset rates currently being integrated (tip, base).
    pub fn rates(&self) -> (Vector3<f64>, Vector3<f64>) {
        (self.rate_tip, self.rate_base)
    }

    pub fn reference_bone(&self) -> Option<&RigidTransform> {
        self.reference_bone.as_ref()
    }

    /// Latches termination if the bone moved too far from its reference.
    pub fn safety_check(&mut self, t_vb: &RigidTransform, state: &mut ControllerState) -> bool {
        let reference = self.reference_bone.get_or_insert_with(|| t_vb.clone());
        if !state.status.is_running() {
            return true;
        }
        let (angle, distance) = reference.difference(t_vb).expect("same frames");
        let reason = if distance > self.params.terminate_translation {
            Some(TerminationReason::BoneTranslation)
        } else if angle > self.params.terminate_rotation {
            Some(TerminationReason::BoneRotation)
        } else {
            None
        };
        if let Some(r) = reason {
            state.status = Status::Terminated(r);
            self.rate_tip = Vector3::zeros();
            self.rate_base = Vector3::zeros();
            return true;
        }
        false
    }

    /// Filters the planned axis for bone pose `t_vb` and re-aligns the
    /// virtual drill with it.
    pub fn update_axis(&mut self, t_vb: &RigidTransform, state: &mut ControllerState) {
        let (entry, exit) = self.setup.plan_in_robot(t_vb);
        let alpha = self.params.filter_alpha();
        let (fe, fx) = match self.filtered {
            None => (entry, exit),
            Some((e, x)) => (e + alpha * (entry - e), x + alpha * (exit - x)),
        };
        self.filtered = Some((fe, fx));
        state.set_axis(fe, fx - fe);
    }

    /// Sets the offset rates from a drill measurement, or zeroes them when
    /// the drill was not seen.
    pub fn update_offsets(&mut self, t_vd: Option<&RigidTransform>, state: &ControllerState) -> Option<(Vector3<f64>, Vector3<f64>)> {
        match t_vd {
            Some(t) => {
                let (tip, base) = self.setup.measured_drill(t);
                self.e_tip = state.virtual_tip() - tip;
                self.e_base = state.virtual_base(self.setup.length) - base;
                self.rate_tip = -self.params.k_i * self.e_tip;
                self.rate_base = -self.params.k_i * self.e_base;
                Some((tip, base))
            }
            None => {
                self.rate_tip = Vector3::zeros();
                self.rate_base = Vector3::zeros();
                None
            }
        }
    }

    /// Processes one tracker frame.
    pub fn on_frame(&mut self, frame: &VisionFrame, state: &mut ControllerState) -> FrameReport {
        let mut report = FrameReport::default();
        if !state.status.is_running() {
            report.terminated = true;
            return report;
        }
        if let Some(t_vb) = &frame.t_vb {
            if self.safety_check(t_vb, state) {
                report.terminated = true;
                return report;
            }
            self.update_axis(t_vb, state);
            report.axis_updated = true;
        }
        if let Some((tip, base)) = self.update_offsets(frame.t_vd.as_ref(), state) {
            report.offsets_updated = true;
            report.measured_tip = Some(tip);
            report.measured_base = Some(base);
        }
        report
    }

    /// Advances the offsets by one control period and returns the realised
    /// rates `(ȯ_tip, ȯ_base)` after clamping.
    pub fn integrate(&self, state: &mut ControllerState, dt: f64) -> (Vector3<f64>, Vector3<f64>) {
        if !state.status.is_running() {
            return (Vector3::zeros(), Vector3::zeros());
        }
        let ct = self.params.clamp_tip;
        let cb = self.params.clamp_base;
        let new_tip = (state.o_tip + dt * self.rate_tip).map(|v| v.clamp(-ct, ct));
        let new_base = (state.o_base + dt * self.rate_base).map(|v| v.clamp(-cb, cb));
        let rates = ((new_tip - state.o_tip) / dt, (new_base - state.o_base) / dt);
        state.o_tip = new_tip;
        state.o_base = new_base;
        rates
    }
}
