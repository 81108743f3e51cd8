use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Subcommand;
use drillguide::calibration::TransformFit;
use drillguide::geometry::{frames, Point3, RigidTransform};
use drillguide::recording::Measurement;
use drillguide::registration::{hand_eye_register, probe_measure, Histogram, LandmarkMeasurement, LandmarkSet, PosePair, RegistrationSession};
use drillguide::sim::world::World;
use serde::{Deserialize, Serialize};

use crate::files::{point_arg, read_recording, to_json};

/// Residual histogram bin, m.
const BIN_WIDTH: f64 = 1e-4;

#[derive(Subcommand)]
pub enum RegisterKind {
    /// Bone registration by probing scan landmarks.
    ///
    /// Each reading pairs a bone-marker pose with a probe pose taken at the
    /// same time. Commands, one per line (landmarks numbered from 1):
    /// `next <landmark>` takes the next reading as a touch of that landmark,
    /// `skip` discards the next reading, `undo` deletes the most recent
    /// measurement, `status` prints the current fit, `done` finishes.
    Bone {
        /// Landmark set (scan frame) JSON; the bundled phantom when absent.
        #[arg(long)]
        landmarks: Option<PathBuf>,
        /// Probe tip in the probe frame: `x,y,z` or a pivot calibration file.
        #[arg(long, allow_hyphen_values = true)]
        probe_tip: String,
        /// Probe marker poses `T^{vp}` (JSON Lines).
        #[arg(long)]
        probe: Option<PathBuf>,
        /// Bone marker poses `T^{vb}`, one per probe reading.
        #[arg(long)]
        bone: Option<PathBuf>,
        /// JSON array with the landmark (from 1) of every reading; batch mode.
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Command script instead of labels.
        #[arg(long, conflicts_with = "labels")]
        script: Option<PathBuf>,
        /// Read commands from stdin with prompts.
        #[arg(short, long, conflicts_with_all = ["labels", "script"])]
        interactive: bool,
        /// Continue a session saved by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Session and fit JSON; printed to stdout when absent.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Robot base to tracker from paired flange and drill-marker poses.
    Handeye {
        /// Flange poses `T^{re}` from the robot kinematics (JSON Lines).
        #[arg(long)]
        robot: PathBuf,
        /// Drill marker poses `T^{vd}`, one per flange pose.
        #[arg(long)]
        drill: PathBuf,
        /// Drill tip in the flange frame, `x,y,z`.
        #[arg(long, allow_hyphen_values = true)]
        tip_e: String,
        /// Drill tip in the drill-marker frame: `x,y,z` or a pivot calibration.
        #[arg(long, allow_hyphen_values = true)]
        tip_d: String,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

#[derive(Serialize)]
struct FitJson<'a> {
    /// `T^{bs}` or `T^{vr}`.
    transform: &'a RigidTransform,
    rms: f64,
    n_used: usize,
}

impl<'a> From<&'a TransformFit> for FitJson<'a> {
    fn from(f: &'a TransformFit) -> Self {
        FitJson { transform: &f.transform, rms: f.rms, n_used: f.n_used }
    }
}

#[derive(Serialize)]
struct LandmarkHistogram {
    landmark: usize,
    bin_width: f64,
    counts: Vec<usize>,
}

#[derive(Serialize)]
struct BoneOutput<'a> {
    landmarks: &'a LandmarkSet,
    measurements: &'a [LandmarkMeasurement],
    fit: FitJson<'a>,
    histograms: Vec<LandmarkHistogram>,
}

#[derive(Deserialize)]
struct SavedSession {
    landmarks: LandmarkSet,
    measurements: Vec<LandmarkMeasurement>,
}

#[derive(Serialize)]
struct HandEyeOutput<'a> {
    fit: FitJson<'a>,
    n_poses: usize,
}

enum Op {
    Next(usize),
    Skip,
    Undo,
    Status,
    Done,
}

fn parse_op(line: &str) -> Result<Option<Op>> {
    let line = line.split('#').next().unwrap_or("").trim();
    let mut words = line.split_whitespace();
    let Some(cmd) = words.next() else { return Ok(None) };
    let op = match cmd {
        "next" => {
            let n: usize = words.next().context("next needs a landmark number")?.parse().context("landmark number")?;
            if n == 0 {
                bail!("landmarks are numbered from 1");
            }
            Op::Next(n - 1)
        }
        "skip" => Op::Skip,
        "undo" => Op::Undo,
        "status" => Op::Status,
        "done" => Op::Done,
        _ => bail!("unknown command {cmd:?} (next <n>, skip, undo, status, done)"),
    };
    if words.next().is_some() {
        bail!("trailing words after {cmd}");
    }
    Ok(Some(op))
}

struct BoneRun<'a> {
    session: RegistrationSession,
    readings: Vec<(Measurement, Measurement)>,
    cursor: usize,
    tip: Point3,
    log: &'a mut dyn Write,
}

impl BoneRun<'_> {
    fn next_reading(&mut self) -> Result<(Measurement, Measurement)> {
        let r = self.readings.get(self.cursor).cloned().context("no readings left")?;
        self.cursor += 1;
        Ok(r)
    }

    fn status(&mut self) -> Result<()> {
        let n = self.session.measurements().len();
        match self.session.fit() {
            None => writeln!(self.log, "{n} measurements, no fit yet")?,
            Some(Ok(fit)) => writeln!(self.log, "{n} measurements, rms {:.4} mm", fit.rms * 1e3)?,
            Some(Err(e)) => writeln!(self.log, "{n} measurements, fit failed: {e}")?,
        }
        Ok(())
    }

    /// Applies one command; `Ok(false)` ends the session.
    fn apply(&mut self, op: Op) -> Result<bool> {
        match op {
            Op::Next(landmark) => {
                let (bone, probe) = self.next_reading()?;
                match probe_measure(&bone, &probe, &self.tip) {
                    Ok(p) => {
                        self.session.add(landmark, &p)?;
                        write!(self.log, "landmark {}: ", landmark + 1)?;
                        self.status()?;
                    }
                    Err(e) => writeln!(self.log, "reading {} rejected: {e}", self.cursor)?,
                }
            }
            Op::Skip => {
                self.next_reading()?;
            }
            Op::Undo => {
                let m = self.session.undo()?;
                write!(self.log, "deleted a measurement of landmark {}; ", m.landmark + 1)?;
                self.status()?;
            }
            Op::Status => self.status()?,
            Op::Done => return Ok(false),
        }
        Ok(true)
    }
}

fn histogram_text(h: &Histogram) -> String {
    h.counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(i, c)| format!("{:.1}-{:.1}:{c}", i as f64 * h.bin_width * 1e3, (i + 1) as f64 * h.bin_width * 1e3))
        .collect::<Vec<_>>()
        .join(" ")
}

fn pair_readings(a: &[Measurement], b: &[Measurement], what: &str) -> Result<Vec<(Measurement, Measurement)>> {
    if a.len() != b.len() {
        bail!("{what}: recordings differ in length ({} vs {})", a.len(), b.len());
    }
    Ok(a.iter().cloned().zip(b.iter().cloned()).collect())
}

#[allow(clippy::too_many_arguments)]
fn bone(
    landmarks: Option<PathBuf>,
    probe_tip: String,
    probe: Option<PathBuf>,
    bone: Option<PathBuf>,
    labels: Option<PathBuf>,
    script: Option<PathBuf>,
    interactive: bool,
    resume: Option<PathBuf>,
    out: Option<PathBuf>,
) -> Result<()> {
    let session = match &resume {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let saved: SavedSession = serde_json::from_str(&text).with_context(|| format!("parsing session {}", path.display()))?;
            RegistrationSession::restore(saved.landmarks, &saved.measurements)?
        }
        None => {
            let set = match &landmarks {
                Some(path) => {
                    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                    serde_json::from_str(&text).with_context(|| format!("parsing landmark set {}", path.display()))?
                }
                None => World::from_config(&Default::default()).landmark_set(),
            };
            RegistrationSession::new(set)
        }
    };
    let readings = match (&bone, &probe) {
        (Some(b), Some(p)) => {
            let (b, p) = (read_recording(b)?, read_recording(p)?);
            pair_readings(b.entries(), p.entries(), "bone/probe")?
        }
        (None, None) => Vec::new(),
        _ => bail!("--bone and --probe go together"),
    };
    let t = point_arg(&probe_tip)?;

    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    let log: &mut dyn Write = if out.is_some() { &mut stdout } else { &mut stderr };
    let mut run = BoneRun { session, readings, cursor: 0, tip: Point3::xyz(t[0], t[1], t[2], frames::probe()), log };

    if let Some(path) = labels {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let labels: Vec<usize> = serde_json::from_str(&text).with_context(|| format!("parsing labels {}", path.display()))?;
        for l in labels {
            if l == 0 {
                bail!("labels are landmark numbers from 1");
            }
            run.apply(Op::Next(l - 1))?;
        }
    } else if let Some(path) = script {
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        for (i, line) in text.lines().enumerate() {
            let op = parse_op(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
            if let Some(op) = op {
                if !run.apply(op).with_context(|| format!("{}:{}", path.display(), i + 1))? {
                    break;
                }
            }
        }
    } else if interactive {
        let n = run.session.landmarks().landmarks().len();
        writeln!(run.log, "Bone registration, {n} landmarks, {} readings.", run.readings.len())?;
        writeln!(run.log, "1. Fix the bone marker.  2. Touch a landmark with the probe.")?;
        writeln!(run.log, "3. `next <landmark>` records the touch.  4. `undo` deletes the last one.")?;
        writeln!(run.log, "5. Repeat over all landmarks, then `done`.")?;
        let stdin = std::io::stdin();
        let mut lines = stdin.lock().lines();
        loop {
            write!(run.log, "> ")?;
            run.log.flush()?;
            let Some(line) = lines.next() else { break };
            let line = line?;
            let op = match parse_op(&line) {
                Ok(Some(op)) => op,
                Ok(None) => continue,
                Err(e) => {
                    writeln!(run.log, "{e}")?;
                    continue;
                }
            };
            match run.apply(op) {
                Ok(true) => {}
                Ok(false) => break,
                Err(e) => writeln!(run.log, "{e}")?,
            }
        }
    } else if resume.is_none() {
        bail!("give --labels, --script or --interactive");
    }

    let session = &run.session;
    let touched: BTreeSet<usize> = session.measurements().iter().map(|m| m.landmark).collect();
    if touched.len() < 3 {
        bail!("no fit: measurements cover {} landmarks, need at least 3", touched.len());
    }
    let fit = match session.fit() {
        Some(Ok(fit)) => fit,
        Some(Err(e)) => bail!("no fit: {e}"),
        None => bail!("no fit: fewer than 3 measurements"),
    };
    let histograms = session.histograms(BIN_WIDTH);
    writeln!(run.log, "fit: {} measurements, rms {:.4} mm", fit.n_used, fit.rms * 1e3)?;
    for (i, h) in histograms.iter().enumerate() {
        writeln!(run.log, "r{} (n={}) mm {}", i + 1, h.total(), histogram_text(h))?;
    }
    let json = to_json(&BoneOutput {
        landmarks: session.landmarks(),
        measurements: session.measurements(),
        fit: fit.into(),
        histograms: histograms
            .into_iter()
            .enumerate()
            .map(|(i, h)| LandmarkHistogram { landmark: i + 1, bin_width: h.bin_width, counts: h.counts })
            .collect(),
    })?;
    match out {
        Some(path) => std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?,
        None => std::io::stdout().write_all(json.as_bytes())?,
    }
    Ok(())
}

fn handeye(robot: PathBuf, drill: PathBuf, tip_e: String, tip_d: String, out: Option<PathBuf>) -> Result<()> {
    let (re, vd) = (read_recording(&robot)?, read_recording(&drill)?);
    let pairs: Vec<PosePair> = pair_readings(re.entries(), vd.entries(), "robot/drill")?
        .into_iter()
        .filter(|(a, b)| a.valid && b.valid)
        .map(|(a, b)| PosePair { t_re: a.transform, t_vd: b.transform })
        .collect();
    let (e, d) = (point_arg(&tip_e)?, point_arg(&tip_d)?);
    let result = hand_eye_register(
        &pairs,
        &Point3::xyz(e[0], e[1], e[2], frames::end_effector()),
        &Point3::xyz(d[0], d[1], d[2], frames::drill()),
    )?;
    let line = format!("hand-eye: {} poses, rms {:.4} mm", result.n_poses, result.fit.rms * 1e3);
    let json = to_json(&HandEyeOutput { fit: (&result.fit).into(), n_poses: result.n_poses })?;
    match out {
        Some(path) => {
            std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
            println!("{line}");
        }
        None => {
            eprintln!("{line}");
            std::io::stdout().write_all(json.as_bytes())?;
        }
    }
    Ok(())
}

pub fn run(kind: RegisterKind) -> Result<()> {
    match kind {
        RegisterKind::Bone { landmarks, probe_tip, probe, bone: b, labels, script, interactive, resume, out } => {
            bone(landmarks, probe_tip, probe, b, labels, script, interactive, resume, out)
        }
        RegisterKind::Handeye { robot, drill, tip_e, tip_d, out } => handeye(robot, drill, tip_e, tip_d, out),
    }
}
