use drillguide::passivity::{energy_audit, AuditOptions};
use drillguide::sim::scenario::{BoneEvent, CalibrationMode, PlantConfig};
use drillguide::sim::{metrics_from_log, run_trial, ForceEvent, ForcePoint, Scenario, Simulation, VisionNoise};
use drillguide::trajectory::{read_csv, write_csv};

fn perfect() -> Scenario {
    let mut s = Scenario::bundled();
    s.plant = PlantConfig { joint_offset: 0.0, joint_angle: 0.0, mass_error: 0.0, tool_tip_bias: 0.0, tool_axis_bias: 0.0 };
    s.calibration.mode = CalibrationMode::Exact;
    s.vision = VisionNoise::none();
    s
}

fn audit_opts(s: &Scenario) -> AuditOptions {
    AuditOptions { k_i: s.outer_loop.k_i, sigma_tip: s.controller.mechanism.sigma_tip, sigma_base: s.controller.mechanism.sigma_base }
}

#[test]
fn bundled_file_is_the_default_scenario() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/data/scenario.json")).unwrap();
    let expected = Scenario { name: "bundled".into(), ..Default::default() };
    assert_eq!(Scenario::from_json(&text).unwrap(), expected);
}

#[test]
fn perfect_information_drills_the_plan() {
    let out = run_trial(&perfect(), 0, false).unwrap();
    let m = out.metrics;
    assert!(out.failure.is_none() && !m.terminated_early);
    assert!(m.entry_translation_err < 0.01, "entry {} mm", m.entry_translation_err);
    assert!(m.exit_translation_err < 0.01, "exit {} mm", m.exit_translation_err);
    assert!(m.angular_deviation < 0.01, "angle {} deg", m.angular_deviation);
}

#[test]
fn bone_moved_mid_trial_terminates() {
    let mut s = Scenario::bundled();
    s.bone_events = vec![BoneEvent { t: 8.0, dp: [0.0, 0.08, 0.0], axis: [0.0, 0.0, 1.0], angle: 0.0, ramp: 0.5 }];
    let out = run_trial(&s, 0, false).unwrap();
    assert!(out.metrics.terminated_early);
    assert!(out.duration < 9.0);
}

#[test]
fn same_seed_gives_identical_log_bytes() {
    let mut s = Scenario::bundled();
    s.duration = 3.0;
    let bytes = || {
        let out = run_trial(&s, 5, true).unwrap();
        let mut buf = Vec::new();
        write_csv(out.log.as_ref().unwrap(), 7, &mut buf).unwrap();
        buf
    };
    assert_eq!(bytes(), bytes());
}

#[test]
fn metrics_recomputed_from_the_written_log_match() {
    let s = Scenario::bundled();
    let out = run_trial(&s, 2, true).unwrap();
    let mut buf = Vec::new();
    write_csv(out.log.as_ref().unwrap(), 7, &mut buf).unwrap();
    let (rows, dof) = read_csv(buf.as_slice()).unwrap();
    assert_eq!(dof, 7);
    assert_eq!(rows.len(), out.log.as_ref().unwrap().len());
    let again = metrics_from_log(&rows, &s.world.entry.into(), &s.world.exit.into());
    assert_eq!(again, out.metrics);
}

/// Control steps from t = 1 s until the virtual axis follows a bone step.
fn axis_response_step(latency: usize) -> u64 {
    let mut s = perfect();
    s.duration = 2.0;
    s.feed.enabled = false;
    s.vision.latency_frames = latency;
    s.bone_events = vec![BoneEvent { t: 1.013, dp: [0.005, 0.0, 0.0], axis: [0.0, 0.0, 1.0], angle: 0.0, ramp: 0.0 }];
    let mut sim = Simulation::new(&s, 0).unwrap();
    while sim.time() < 1.0 {
        sim.step().unwrap();
    }
    let origin = sim.state().axis_origin;
    let mut steps = 0;
    while sim.state().axis_origin == origin {
        sim.step().unwrap();
        steps += 1;
    }
    steps
}

#[test]
fn latency_delays_the_outer_loop_by_whole_frames() {
    let base = axis_response_step(0);
    for n in 1..=3 {
        // 1 kHz control, 20 Hz frames: one frame is 50 steps
        assert_eq!(axis_response_step(n) - base, 50 * n as u64);
    }
}

#[test]
fn plant_energy_balances_over_a_trial() {
    let s = Scenario::bundled();
    let out = run_trial(&s, 1, true).unwrap();
    let audit = energy_audit(out.log.as_ref().unwrap(), &audit_opts(&s));
    assert!(audit.residual_rate < 1e-4, "{}", audit.residual_rate);
    assert!(audit.max_offset_excess <= 1e-9);
}

#[test]
fn pushing_on_the_drill_never_generates_energy() {
    let mut s = perfect();
    s.duration = 6.0;
    s.feed.enabled = false;
    s.outer_loop.k_i = 0.0;
    s.forces = vec![
        ForceEvent { start: 0.5, end: 1.5, point: ForcePoint::Tip, f: [15.0, -8.0, 3.0] },
        ForceEvent { start: 2.0, end: 2.2, point: ForcePoint::Base, f: [0.0, 5.0, 0.0] },
        ForceEvent { start: 3.0, end: 4.0, point: ForcePoint::Tip, f: [-30.0, 0.0, 10.0] },
    ];
    let out = run_trial(&s, 3, true).unwrap();
    let audit = energy_audit(out.log.as_ref().unwrap(), &audit_opts(&s));
    assert!(audit.total_external_work.abs() > 1e-3);
    assert!(audit.max_generated < 1e-4, "{}", audit.max_generated);
}

#[test]
fn tip_push_is_resisted_by_a_saturating_force() {
    // a hard lateral push moves the drill off the axis; the spring force
    // never exceeds its saturation level
    let mut s = perfect();
    s.duration = 3.0;
    s.feed.enabled = false;
    s.outer_loop.k_i = 0.0;
    s.forces = vec![ForceEvent { start: 0.5, end: 2.5, point: ForcePoint::Tip, f: [0.0, 40.0, 0.0] }];
    let out = run_trial(&s, 0, true).unwrap();
    let log = out.log.unwrap();
    let max = log.iter().map(|r| r.spring_tip.norm()).fold(0.0, f64::max);
    assert!(max <= s.controller.mechanism.sigma_tip);
    assert!(max > 0.9 * s.controller.mechanism.sigma_tip);
    let off: f64 = log.iter().map(|r| (r.z_tip_true - r.axis_origin).cross(&r.axis_dir).norm()).fold(0.0, f64::max);
    assert!(off > 5e-3, "{off}");
}
