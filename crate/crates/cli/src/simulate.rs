use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use drillguide::passivity::{energy_audit, write_audit_csv, AuditOptions};
use drillguide::sim::{generate_recording, run_batch, summarize, write_metrics_csv, Execution, RecordingKind, VisionNoise};
use drillguide::trajectory::{read_csv, write_csv};
use drillguide::sim::world::World;

use crate::files::{to_json, write_json, write_recording};
use crate::load_scenario;

#[derive(Args)]
pub struct GenerateArgs {
    /// pivot, axis, landmarks or handeye.
    kind: RecordingKind,
    /// Output directory.
    #[arg(short, long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Samples (pivot, axis), touches per landmark or hand-eye poses.
    #[arg(long)]
    samples: Option<usize>,
    /// Tracker position noise, 3D RMS in m.
    #[arg(long)]
    sigma: Option<f64>,
    /// Tracker orientation noise, rad.
    #[arg(long)]
    sigma_rot: Option<f64>,
    /// Probability that a reading is lost.
    #[arg(long)]
    dropout: Option<f64>,
    /// No tracker noise at all.
    #[arg(long, conflicts_with_all = ["sigma", "sigma_rot", "dropout"])]
    noiseless: bool,
}

pub fn generate(a: GenerateArgs) -> Result<()> {
    let mut noise = if a.noiseless { VisionNoise::none() } else { VisionNoise::default() };
    if let Some(s) = a.sigma {
        noise.sigma = s;
    }
    if let Some(s) = a.sigma_rot {
        noise.sigma_rot = s;
    }
    if let Some(p) = a.dropout {
        noise.dropout_prob = p;
    }
    if !(noise.sigma >= 0.0 && noise.sigma_rot >= 0.0 && (0.0..=1.0).contains(&noise.dropout_prob)) {
        bail!("noise levels must be non-negative and dropout in [0, 1]");
    }
    let samples = a.samples.unwrap_or(a.kind.default_samples());
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let s = generate_recording(a.kind, &noise, samples, a.seed);
    let dir = &a.out;
    let mut written = Vec::new();
    let mut put = |name: &str| {
        written.push(name.to_string());
        dir.join(name)
    };
    match a.kind {
        RecordingKind::Pivot => write_recording(&put("pivot.jsonl"), &s.primary)?,
        RecordingKind::Axis => write_recording(&put("axis.jsonl"), &s.primary)?,
        RecordingKind::Landmarks => {
            write_recording(&put("probe.jsonl"), &s.primary)?;
            write_recording(&put("bone.jsonl"), s.secondary.as_ref().expect("landmarks have bone readings"))?;
            let labels: Vec<usize> = s.labels.iter().map(|l| l + 1).collect();
            std::fs::write(put("labels.json"), serde_json::to_string(&labels)? + "\n")?;
            write_json(&put("landmarks.json"), &World::from_config(&Default::default()).landmark_set())?;
        }
        RecordingKind::HandEye => {
            write_recording(&put("robot.jsonl"), &s.primary)?;
            write_recording(&put("drill.jsonl"), s.secondary.as_ref().expect("hand-eye has drill readings"))?;
        }
    }
    write_json(&put("truth.json"), &s.truth)?;
    println!("wrote {} in {}", written.join(", "), dir.display());
    Ok(())
}

#[derive(Args)]
pub struct SimulateArgs {
    /// Scenario JSON; the bundled scenario when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(short = 'n', long, default_value_t = 1)]
    trials: usize,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for `metrics.csv` and logs.
    #[arg(short, long, default_value = ".")]
    out: PathBuf,
    /// Also write each trial's trajectory log as `trial_<i>.csv`.
    #[arg(long)]
    logs: bool,
    /// Run trials one after another on this thread.
    #[arg(long)]
    sequential: bool,
}

pub fn simulate(a: SimulateArgs) -> Result<()> {
    let mut scenario = load_scenario(a.scenario.as_ref())?;
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    scenario.validate()?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let execution = if a.sequential { Execution::Sequential } else { Execution::Parallel };
    let outcomes = run_batch(&scenario, a.trials, execution, a.logs)?;

    let path = a.out.join("metrics.csv");
    let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    write_metrics_csv(&scenario, &outcomes, &mut w)?;
    w.flush()?;
    for o in &outcomes {
        if let Some(log) = &o.log {
            let dof = log.first().map_or(0, |r| r.q.len());
            let path = a.out.join(format!("trial_{}.csv", o.index));
            let mut w = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
            write_csv(log, dof, &mut w)?;
            w.flush()?;
        }
        if let Some(f) = &o.failure {
            eprintln!("trial {} failed: {f}", o.index);
        }
    }
    let s = summarize(&outcomes);
    println!(
        "{} trials (seed {}), {} failed, {} terminated early; mean entry {:.3} mm, exit {:.3} mm, angle {:.3} deg",
        s.trials, scenario.seed, s.failures, s.terminated, s.mean_entry_mm, s.mean_exit_mm, s.mean_angle_deg
    );
    println!("wrote {}", path.display());
    Ok(())
}

#[derive(Args)]
pub struct AuditArgs {
    /// Trajectory log CSV written by `simulate --logs`.
    log: PathBuf,
    /// Scenario the log came from, for the gains and saturation levels.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Overrides the outer-loop gain.
    #[arg(long)]
    k_i: Option<f64>,
    /// Report JSON; printed to stdout when absent.
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Per-step audit CSV.
    #[arg(long)]
    steps: Option<PathBuf>,
}

pub fn audit(a: AuditArgs) -> Result<()> {
    let scenario = load_scenario(a.scenario.as_ref())?;
    let f = File::open(&a.log).with_context(|| format!("opening {}", a.log.display()))?;
    let (rows, _) = read_csv(BufReader::new(f)).with_context(|| format!("reading log {}", a.log.display()))?;
    if rows.len() < 2 {
        bail!("log {} has fewer than two rows", a.log.display());
    }
    let mech = &scenario.controller.mechanism;
    let opts = AuditOptions { k_i: a.k_i.unwrap_or(scenario.outer_loop.k_i), sigma_tip: mech.sigma_tip, sigma_base: mech.sigma_base };
    let report = energy_audit(&rows, &opts);
    if let Some(path) = &a.steps {
        let w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
        write_audit_csv(&report, w)?;
    }
    let summary = format!(
        "{} intervals over {:.3} s: residual rate {:.3e} J/s, max generated {:.3e} J, max offset excess {:.3e} W",
        report.n_intervals, report.duration, report.residual_rate, report.max_generated, report.max_offset_excess
    );
    let json = to_json(&report)?;
    match &a.out {
        Some(path) => {
            std::fs::write(path, json).with_context(|| format!("writing {}", path.display()))?;
            println!("{summary}");
        }
        None => {
            eprintln!("{summary}");
            std::io::stdout().write_all(json.as_bytes())?;
        }
    }
    Ok(())
}
