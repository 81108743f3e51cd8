//! Closed-loop trial: the plant arm under the controller, the tracker and
//! outer loop at frame rate, a scripted surgeon and scripted bone motion.

use nalgebra::{DVector, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::controller::{spring_energy, ControllerState, DrillTool, Status, StepOutput, TerminationReason, VmController};
use crate::geometry::{frames, RigidTransform};
use crate::outer_loop::{OuterLoop, OuterLoopSetup, VisionFrame};
use crate::passivity::{dissipated_power, stored_energy, EnergyReport};
use crate::robot::{IkOptions, IkTarget, JointState, RobotModel};
use crate::trajectory::{Phase, TrajectoryRow};

use super::metrics::{MetricsAccumulator, TrialMetrics};
use super::scenario::{BoneEvent, ForcePoint, Scenario};
use super::vision::VisionSensor;
use super::world::{calibrate, random_perpendicular, random_unit, Calibrated, CalibrationReport, World};
use super::SimError;

/// Parameters `set_param` may change while running.
pub const LIVE_PARAMS: &[&str] = &[
    "outer_loop.k_i",
    "vision.sigma",
    "vision.sigma_rot",
    "vision.dropout_prob",
    "feed.speed",
    "feed.max_force",
    "feed.gain",
    "feed.hand_damping",
];

#[derive(Debug, Clone, Copy, PartialEq)]
struct ManualForce {
    point: ForcePoint,
    f: Vector3<f64>,
    until: f64,
}

/// State published to viewers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub q: Vec<f64>,
    pub q_v: f64,
    /// Actual drill tip and base point, robot frame.
    pub tip: [f64; 3],
    pub tip_measured: Option<[f64; 3]>,
    pub base: [f64; 3],
    pub axis_origin: [f64; 3],
    pub axis_dir: [f64; 3],
    pub o_tip: [f64; 3],
    pub o_base: [f64; 3],
    pub energy: EnergyReport,
    pub status: String,
    pub torque_sat: Vec<bool>,
}

/// Result of [`run_trial`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub index: u64,
    pub metrics: TrialMetrics,
    pub calibration: CalibrationReport,
    /// Simulated time, s.
    pub duration: f64,
    /// Set when the simulation diverged.
    pub failure: Option<String>,
    pub log: Option<Vec<TrajectoryRow>>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

#[derive(Debug, Clone)]
pub struct Simulation {
    scenario: Scenario,
    index: u64,
    world: World,
    calibration: Calibrated,
    plant: RobotModel,
    true_tool: DrillTool,
    controller: VmController,
    outer: OuterLoop,
    sensor: VisionSensor,
    vision_rng: ChaCha8Rng,
    joints: JointState,
    state: ControllerState,
    steps: u64,
    frame_period: u64,
    phase: Phase,
    hold_depth: f64,
    bone_events: Vec<BoneEvent>,
    manual: Vec<ManualForce>,
    measured_tip: Option<Vector3<f64>>,
    last_saturated: Vec<bool>,
    metrics: MetricsAccumulator,
    log: Option<Vec<TrajectoryRow>>,
    decimation: u64,
    failure: Option<String>,
}

impl Simulation {
    /// Builds trial `index` of `scenario`: draws the plant and tool errors,
    /// runs the calibration procedures and places the arm.
    pub fn new(scenario: &Scenario, index: u64) -> Result<Self, SimError> {
        scenario.validate()?;
        let mut master = ChaCha8Rng::seed_from_u64(scenario.seed);
        master.set_stream(index);
        let mut plant_rng = ChaCha8Rng::seed_from_u64(master.random());
        let mut cal_rng = ChaCha8Rng::seed_from_u64(master.random());
        let mut init_rng = ChaCha8Rng::seed_from_u64(master.random());
        let vision_rng = ChaCha8Rng::seed_from_u64(master.random());

        let nominal = scenario.nominal_model()?;
        let world = World::from_config(&scenario.world);
        let p = &scenario.plant;
        let mut plant = if p.joint_offset > 0.0 || p.joint_angle > 0.0 {
            nominal.perturbed(p.joint_offset, p.joint_angle, &mut plant_rng)
        } else {
            nominal.clone()
        };
        if p.mass_error > 0.0 {
            for j in &mut plant.joints {
                j.link.mass *= 1.0 + plant_rng.random_range(-p.mass_error..=p.mass_error);
            }
        }
        let true_tool = DrillTool { tip: world.drill_tip, axis: world.drill_axis };
        let tool_estimate = {
            let tip = world.drill_tip + random_unit(&mut plant_rng) * p.tool_tip_bias;
            let tilt_axis = Unit::new_normalize(random_perpendicular(&mut plant_rng, &world.drill_axis));
            DrillTool { tip, axis: Rotation3::from_axis_angle(&tilt_axis, p.tool_axis_bias) * world.drill_axis }
        };

        let posture = DVector::from_vec(scenario.world.posture.clone());
        let calibration = calibrate(
            &world,
            &scenario.calibration,
            &scenario.vision,
            &plant,
            &nominal,
            &posture,
            tool_estimate,
            &mut cal_rng,
        )?;

        // start on the approach line, slightly misplaced
        let entry = world.t_rs.transform_vector(&world.entry);
        let exit = world.t_rs.transform_vector(&world.exit);
        let dir = (exit - entry).normalize();
        let init = &scenario.initial;
        let start = entry - scenario.feed.approach * dir + random_perpendicular(&mut init_rng, &dir) * init.lateral;
        let tilt_axis = Unit::new_normalize(random_perpendicular(&mut init_rng, &dir));
        let target = IkTarget {
            tool_point: true_tool.tip,
            tool_dir: true_tool.axis,
            tip: start,
            dir: Rotation3::from_axis_angle(&tilt_axis, init.tilt) * dir,
        };
        let q0 = plant
            .solve_ik(&target, &posture, &IkOptions { rest: Some(posture.clone()), ..Default::default() })
            .map_err(|e| SimError::Setup(format!("initial pose: {e}")))?;
        let qdot0 = DVector::from_iterator(q0.len(), (0..q0.len()).map(|_| init_rng.random_range(-1.0..=1.0) * init.joint_speed));
        let joints = JointState { q: q0, qdot: qdot0 };

        let setup = OuterLoopSetup {
            t_rv: calibration.t_rv.clone(),
            t_bs: calibration.t_bs.clone(),
            entry: world.entry,
            exit: world.exit,
            drill_tip: calibration.drill_tip_d,
            drill_axis: calibration.drill_axis_d,
            length: scenario.controller.mechanism.length,
        };
        let mut outer = OuterLoop::new(scenario.outer_loop, setup);
        let (plan_entry, plan_exit) = outer.setup.plan_in_robot(&world.t_vb(&world.t_rs));
        outer.prime_axis(plan_entry, plan_exit);
        let controller = VmController::new(scenario.controller.clone(), nominal, calibration.tool)
            .map_err(|e| SimError::Setup(e.to_string()))?;
        let state = ControllerState::initialize(&controller.model, &controller.tool, &joints.q, plan_entry, plan_exit - plan_entry);

        let frame_period = (1.0 / (scenario.outer_loop.rate * scenario.dt)).round() as u64;
        let dof = plant.dof();
        let mut sim = Simulation {
            scenario: scenario.clone(),
            index,
            world,
            calibration,
            plant,
            true_tool,
            controller,
            outer,
            sensor: VisionSensor::new(scenario.vision),
            vision_rng,
            joints,
            state,
            steps: 0,
            frame_period,
            phase: Phase::Settle,
            hold_depth: 0.0,
            bone_events: scenario.bone_events.clone(),
            manual: Vec::new(),
            measured_tip: None,
            last_saturated: vec![false; dof],
            metrics: MetricsAccumulator::default(),
            log: None,
            decimation: 1,
            failure: None,
        };
        sim.hold_depth = sim.depth_and_speed().0;
        Ok(sim)
    }

    /// Keeps every `decimation`-th step in a trajectory log.
    pub fn enable_log(&mut self, decimation: u64) {
        self.log = Some(Vec::new());
        self.decimation = decimation.max(1);
    }

    pub fn take_log(&mut self) -> Option<Vec<TrajectoryRow>> {
        self.log.take()
    }

    pub fn time(&self) -> f64 {
        self.steps as f64 * self.scenario.dt
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn calibration(&self) -> &Calibrated {
        &self.calibration
    }

    pub fn plant(&self) -> &RobotModel {
        &self.plant
    }

    pub fn controller(&self) -> &VmController {
        &self.controller
    }

    pub fn outer_loop(&self) -> &OuterLoop {
        &self.outer
    }

    pub fn joints(&self) -> &JointState {
        &self.joints
    }

    pub fn state(&self) -> &ControllerState {
        &self.state
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn failure(&self) -> Option<&str> {
        self.failure.as_deref()
    }

    pub fn metrics(&self) -> TrialMetrics {
        let (entry, exit) = (self.world.entry, self.world.exit);
        self.metrics.finish(&entry, &exit)
    }

    /// Whether a batch trial is over.
    pub fn finished(&self) -> bool {
        self.failure.is_some()
            || !self.state.status.is_running()
            || self.phase == Phase::Done
            || self.time() >= self.scenario.duration - 0.5 * self.scenario.dt
    }

    /// Bone pose `T^{rs}` at time `t`.
    pub fn bone_pose(&self, t: f64) -> RigidTransform {
        let base = &self.world.t_rs;
        let mut rot = Rotation3::from_matrix_unchecked(*base.rotation());
        let mut origin = *base.translation();
        for e in &self.bone_events {
            if t < e.t {
                continue;
            }
            let s = if e.ramp > 0.0 { ((t - e.t) / e.ramp).min(1.0) } else { 1.0 };
            if e.angle != 0.0 {
                rot = Rotation3::from_axis_angle(&Unit::new_normalize(Vector3::from(e.axis)), e.angle * s) * rot;
            }
            origin += Vector3::from(e.dp) * s;
        }
        RigidTransform::from_rotation(rot, origin, frames::scan(), frames::robot())
    }

    /// Depth of the actual tip along the planned hole (from the entry
    /// point) and its rate.
    fn depth_and_speed(&self) -> (f64, f64) {
        let t_rs = self.bone_pose(self.time());
        let entry = t_rs.transform_vector(&self.world.entry);
        let exit = t_rs.transform_vector(&self.world.exit);
        let dir = (exit - entry).normalize();
        let chain = self.plant.chain(&self.joints.q);
        let tip = chain.point(&self.true_tool.tip);
        let j = chain.point_jacobian(&tip);
        let v: Vector3<f64> = (&j * &self.joints.qdot).fixed_rows::<3>(0).into();
        ((tip - entry).dot(&dir), v.dot(&dir))
    }

    pub fn apply_force(&mut self, point: ForcePoint, f: Vector3<f64>, hold: f64) {
        self.manual.retain(|m| m.point != point);
        self.manual.push(ManualForce { point, f, until: self.time() + hold });
    }

    /// Displaces the bone now, rotating about the scan origin.
    pub fn move_bone(&mut self, dp: Vector3<f64>, axis: Vector3<f64>, angle: f64) {
        self.bone_events.push(BoneEvent { t: self.time(), dp: arr(&dp), axis: arr(&axis), angle, ramp: 0.0 });
    }

    pub fn set_param(&mut self, path: &str, value: f64) -> Result<(), String> {
        if !value.is_finite() {
            return Err("value must be finite".into());
        }
        let nonneg = |v: f64| if v >= 0.0 { Ok(v) } else { Err(format!("{path} must be non-negative")) };
        match path {
            "outer_loop.k_i" => {
                self.scenario.outer_loop.k_i = nonneg(value)?;
                self.outer.params.k_i = value;
            }
            "vision.sigma" => self.scenario.vision.sigma = nonneg(value)?,
            "vision.sigma_rot" => self.scenario.vision.sigma_rot = nonneg(value)?,
            "vision.dropout_prob" => {
                if !(0.0..=1.0).contains(&value) {
                    return Err("vision.dropout_prob must be in [0, 1]".into());
                }
                self.scenario.vision.dropout_prob = value;
            }
            "feed.speed" => self.scenario.feed.speed = nonneg(value)?,
            "feed.max_force" => self.scenario.feed.max_force = nonneg(value)?,
            "feed.gain" => self.scenario.feed.gain = nonneg(value)?,
            "feed.hand_damping" => self.scenario.feed.hand_damping = nonneg(value)?,
            _ => return Err(format!("{path} is not a live parameter")),
        }
        let latency = self.sensor.noise.latency_frames;
        self.sensor.noise = self.scenario.vision;
        self.sensor.noise.latency_frames = latency;
        Ok(())
    }

    fn spring_energy_now(&self, state: &ControllerState) -> f64 {
        let p = &self.controller.params;
        let chain = self.controller.model.chain(&self.joints.q);
        let tip = chain.point(&self.controller.tool.tip);
        let base = chain.point(&self.controller.tool.base_point(p.mechanism.length));
        spring_energy(&p.tip(), &(tip - state.virtual_tip() + state.o_tip))
            + spring_energy(&p.base(), &(base - state.virtual_base(p.mechanism.length) + state.o_base))
    }

    /// Axial force of the simulated surgeon.
    fn surgeon_force(&mut self, t: f64) -> f64 {
        let f = self.scenario.feed;
        if !f.enabled {
            return 0.0;
        }
        let (depth, speed) = self.depth_and_speed();
        let length = (self.world.exit - self.world.entry).norm();
        if self.phase == Phase::Settle && t >= f.settle {
            self.phase = Phase::Feed;
        }
        if self.phase == Phase::Feed && depth > length + f.overshoot {
            self.phase = Phase::Done;
            self.hold_depth = depth;
        }
        match self.phase {
            Phase::Feed => {
                let limit = f.max_force * ((t - f.settle) / f.ramp_time).min(1.0);
                (f.gain * (f.speed - speed)).clamp(-limit, limit)
            }
            _ => -f.hold_stiffness * (depth - self.hold_depth) - f.hold_damping * speed,
        }
    }

    /// Advances one control period.
    pub fn step(&mut self) -> Result<(), SimError> {
        if let Some(f) = &self.failure {
            return Err(SimError::Diverged(f.clone()));
        }
        let dt = self.scenario.dt;
        let t = self.time();

        // tracker frame
        let mut axis_work = 0.0;
        if self.steps.is_multiple_of(self.frame_period) {
            let t_rs = self.bone_pose(t);
            let t_vb = self.world.t_vb(&t_rs);
            let t_vd = self.world.t_vd(&self.plant.flange_pose(&self.joints.q).expect("dimension"));
            if let Some(frame) = self.sensor.capture(t, &t_vb, &t_vd, &mut self.vision_rng) {
                axis_work = self.process_frame(&frame);
            }
        }

        // controller
        let (mut next, out) = match self.controller.step(&self.joints, &self.state, dt) {
            Ok(v) => v,
            Err(e) => return Err(self.fail(e.to_string())),
        };
        let (odot_tip, odot_base) = self.outer.integrate(&mut next, dt);

        // surgeon, scripted and manual forces on the actual drill
        let chain = self.plant.chain(&self.joints.q);
        let tip = chain.point(&self.true_tool.tip);
        let axis = chain.direction(&self.true_tool.axis);
        let length = self.controller.params.mechanism.length;
        let base = tip + length * axis;
        let j_tip = chain.point_jacobian(&tip);
        let j_base = chain.point_jacobian(&base);
        let tip_vel: Vector3<f64> = (&j_tip * &self.joints.qdot).fixed_rows::<3>(0).into();
        let mut f_tip = self.surgeon_force(t) * axis - self.scenario.feed.hand_damping * tip_vel;
        let mut f_base = Vector3::zeros();
        for e in &self.scenario.forces {
            if t >= e.start && t < e.end {
                match e.point {
                    ForcePoint::Tip => f_tip += Vector3::from(e.f),
                    ForcePoint::Base => f_base += Vector3::from(e.f),
                }
            }
        }
        self.manual.retain(|m| m.until > t);
        for m in &self.manual {
            match m.point {
                ForcePoint::Tip => f_tip += m.f,
                ForcePoint::Base => f_base += m.f,
            }
        }
        let j_rot = chain.angular_jacobian(self.plant.dof() - 1);
        let omega: Vector3<f64> = (&j_rot * &self.joints.qdot).fixed_rows::<3>(0).into();
        let roll = axis.dot(&omega);
        let grip = -self.scenario.feed.grip_damping * roll * axis;
        let u_e = j_tip.transpose() * DVector::from_column_slice(f_tip.as_slice())
            + j_base.transpose() * DVector::from_column_slice(f_base.as_slice())
            + j_rot.transpose() * DVector::from_column_slice(grip.as_slice());

        // plant
        let terms = self.plant.dynamics_terms_for(&chain, &self.joints.qdot);
        let drive = &out.torque + &u_e;
        let mut joints = self.joints.clone();
        let h = dt / self.scenario.substeps as f64;
        for k in 0..self.scenario.substeps {
            let qddot = if k == 0 {
                terms.acceleration(&drive)
            } else {
                self.plant.dynamics_terms(&joints.q, &joints.qdot).expect("dimension").acceleration(&drive)
            };
            joints.qdot += h * qddot;
            joints.q += h * &joints.qdot;
        }

        // bookkeeping for the state the step started from
        let t_rs = self.bone_pose(t);
        let tip_scan = t_rs.inverse().transform_vector(&tip);
        let running = self.state.status.is_running();
        self.metrics.push(self.phase, running, &tip_scan, &self.state.o_tip);
        if self.log.is_some() && self.steps.is_multiple_of(self.decimation) {
            let row = self.log_row(t, &out, &terms.mass, &terms.gravity, &u_e, tip, tip_scan, odot_tip, odot_base, axis_work);
            if let Some(log) = &mut self.log {
                log.push(row);
            }
        }
        self.last_saturated = out.saturated.clone();

        if !joints.is_finite() {
            return Err(self.fail(format!("non-finite joint state at t = {t:.3} s")));
        }
        self.joints = joints;
        self.state = next;
        self.steps += 1;
        Ok(())
    }

    fn fail(&mut self, msg: String) -> SimError {
        self.failure = Some(msg.clone());
        self.state.status = Status::Terminated(TerminationReason::NonFinite);
        SimError::Diverged(msg)
    }

    /// Feeds a tracker frame to the outer loop; returns the spring energy
    /// the resulting plan change added.
    fn process_frame(&mut self, frame: &VisionFrame) -> f64 {
        let before = self.spring_energy_now(&self.state);
        let report = self.outer.on_frame(frame, &mut self.state);
        if let Some(m) = report.measured_tip {
            self.measured_tip = Some(m);
        }
        if report.terminated {
            return 0.0;
        }
        self.spring_energy_now(&self.state) - before
    }

    #[allow(clippy::too_many_arguments)]
    fn log_row(
        &self,
        t: f64,
        out: &StepOutput,
        plant_mass: &nalgebra::DMatrix<f64>,
        plant_gravity: &DVector<f64>,
        u_e: &DVector<f64>,
        tip: Vector3<f64>,
        tip_scan: Vector3<f64>,
        odot_tip: Vector3<f64>,
        odot_base: Vector3<f64>,
        axis_work: f64,
    ) -> TrajectoryRow {
        let params = &self.controller.params;
        let model = &self.controller.model;
        let (_, ext) = self.controller.buffers(&self.joints);
        let energy = stored_energy(params, &model.mass_matrix(&self.joints.q), &self.joints, &self.state, out, &ext);
        let qd = &self.joints.qdot;
        let (e_tip, e_base) = self.outer.errors();
        let nan = Vector3::repeat(f64::NAN);
        TrajectoryRow {
            t,
            running: self.state.status.is_running(),
            phase: self.phase,
            q: self.joints.q.clone(),
            qdot: qd.clone(),
            q_v: self.state.q_v,
            qdot_v: self.state.qdot_v,
            o_tip: self.state.o_tip,
            o_base: self.state.o_base,
            odot_tip,
            odot_base,
            z_tip: out.z_tip,
            z_tip_true: tip,
            z_bar_tip: self.measured_tip.unwrap_or(nan),
            tip_scan,
            axis_origin: self.state.axis_origin,
            axis_dir: self.state.axis_dir,
            e_tip,
            e_base,
            torque: out.torque.clone(),
            torque_sat: out.saturated.clone(),
            u_e: u_e.clone(),
            sat_torque: &out.torque - &out.torque_raw,
            spring_tip: out.spring_tip,
            spring_base: out.spring_base,
            energy,
            e_robot_true: 0.5 * qd.dot(&(plant_mass * qd)),
            dissipation: dissipated_power(params, model, &self.joints, &self.state, out),
            mismatch_power: qd.dot(&(&out.gravity - plant_gravity)),
            axis_work,
        }
    }

    /// Current state for viewers.
    pub fn snapshot(&self) -> Snapshot {
        let chain = self.plant.chain(&self.joints.q);
        let tip = chain.point(&self.true_tool.tip);
        let base = tip + self.controller.params.mechanism.length * chain.direction(&self.true_tool.axis);
        let energy = match self.controller.step(&self.joints, &self.state, self.scenario.dt) {
            Ok((_, out)) => {
                let (_, ext) = self.controller.buffers(&self.joints);
                let m = self.controller.model.mass_matrix(&self.joints.q);
                stored_energy(&self.controller.params, &m, &self.joints, &self.state, &out, &ext)
            }
            Err(_) => EnergyReport::default(),
        };
        Snapshot {
            t: self.time(),
            q: self.joints.q.iter().copied().collect(),
            q_v: self.state.q_v,
            tip: arr(&tip),
            tip_measured: self.measured_tip.map(|m| arr(&m)),
            base: arr(&base),
            axis_origin: arr(&self.state.axis_origin),
            axis_dir: arr(&self.state.axis_dir),
            o_tip: arr(&self.state.o_tip),
            o_base: arr(&self.state.o_base),
            energy,
            status: self.state.status.label().to_string(),
            torque_sat: self.last_saturated.clone(),
        }
    }
}

/// Runs trial `index` until the hole is drilled, the controller stops or
/// the scenario duration is reached.
pub fn run_trial(scenario: &Scenario, index: u64, log: bool) -> Result<TrialOutcome, SimError> {
    let mut sim = Simulation::new(scenario, index)?;
    if log {
        sim.enable_log(1);
    }
    let mut failure = None;
    while !sim.finished() {
        if let Err(e) = sim.step() {
            failure = Some(e.to_string());
            break;
        }
    }
    Ok(TrialOutcome {
        index,
        metrics: sim.metrics(),
        calibration: sim.calibration.report,
        duration: sim.time(),
        failure,
        log: sim.take_log(),
    })
}
