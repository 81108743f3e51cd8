//! Live simulation behind a websocket.
//!
//! One thread steps the simulation in real time and applies commands
//! between steps. Each client has its own thread, which forwards commands
//! and drains a short snapshot queue; when a client falls behind the oldest
//! snapshot is dropped, so the simulation never waits on a socket.

use std::io::ErrorKind;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, Weak};
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::Args;
use crossbeam_channel::{bounded, Receiver, Sender, TryRecvError, TrySendError};
use drillguide::sim::{ForcePoint, Scenario, Simulation, Snapshot};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use tungstenite::{Message, Utf8Bytes};

const BROADCAST_PERIOD: Duration = Duration::from_millis(50);
const CLIENT_QUEUE: usize = 8;
const POLL: Duration = Duration::from_millis(5);
/// Longest simulated time the stepper catches up in one go.
const MAX_LAG: f64 = 0.1;

#[derive(Args)]
pub struct ServeArgs {
    /// Scenario JSON; the bundled scenario when absent.
    #[arg(long)]
    scenario: Option<PathBuf>,
    /// Port to listen on; 0 picks a free one.
    #[arg(short, long, default_value_t = 8765)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Trial index, which selects the random stream.
    #[arg(long, default_value_t = 0)]
    trial: u64,
}

fn vec3(a: [f64; 3]) -> Vector3<f64> {
    Vector3::from(a)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Command {
    ApplyForce { point: ForcePoint, f: [f64; 3], hold_ms: f64 },
    MoveBone { dp: [f64; 3], daxis: [f64; 3], dangle_rad: f64 },
    Pause,
    Resume,
    Reset,
    SetParam { path: String, value: f64 },
}

struct Request {
    command: Command,
    reply: Sender<Result<(), String>>,
}

#[derive(Serialize)]
struct Axis {
    origin: [f64; 3],
    dir: [f64; 3],
}

#[derive(Serialize)]
struct StateMsg<'a> {
    #[serde(rename = "type")]
    kind: &'static str,
    t: f64,
    q: &'a [f64],
    q_v: f64,
    tip: [f64; 3],
    tip_measured: Option<[f64; 3]>,
    base: [f64; 3],
    axis: Axis,
    o_tip: [f64; 3],
    o_base: [f64; 3],
    energy: &'a drillguide::trajectory::EnergyReport,
    status: &'a str,
    torque_sat: &'a [bool],
}

fn state_json(s: &Snapshot, status: &str) -> String {
    let msg = StateMsg {
        kind: "state",
        t: s.t,
        q: &s.q,
        q_v: s.q_v,
        tip: s.tip,
        tip_measured: s.tip_measured,
        base: s.base,
        axis: Axis { origin: s.axis_origin, dir: s.axis_dir },
        o_tip: s.o_tip,
        o_base: s.o_base,
        energy: &s.energy,
        status,
        torque_sat: &s.torque_sat,
    };
    serde_json::to_string(&msg).expect("state serializes")
}

struct Subscriber {
    tx: Sender<Utf8Bytes>,
    /// Held to drop the oldest entry when the queue is full.
    rx: Receiver<Utf8Bytes>,
    client: Weak<()>,
}

/// Snapshot queues of the connected clients.
#[derive(Default)]
struct Hub {
    subscribers: Mutex<Vec<Subscriber>>,
}

impl Hub {
    /// A snapshot queue, kept while the returned token lives.
    fn subscribe(&self) -> (Receiver<Utf8Bytes>, Arc<()>) {
        let (tx, rx) = bounded(CLIENT_QUEUE);
        let token = Arc::new(());
        self.subscribers.lock().unwrap().push(Subscriber { tx, rx: rx.clone(), client: Arc::downgrade(&token) });
        (rx, token)
    }

    fn publish(&self, text: &str) {
        let msg = Utf8Bytes::from(text.to_string());
        self.subscribers.lock().unwrap().retain(|s| loop {
            match s.tx.try_send(msg.clone()) {
                Ok(()) => return true,
                Err(TrySendError::Full(_)) => {
                    let _ = s.rx.try_recv();
                }
                Err(TrySendError::Disconnected(_)) => return false,
            }
        });
    }

    /// Drops subscribers whose client has gone.
    fn prune(&self) {
        self.subscribers.lock().unwrap().retain(|s| s.client.strong_count() > 0);
    }
}

fn validate(command: &Command) -> Result<(), String> {
    let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
    match command {
        Command::ApplyForce { f, hold_ms, .. } => {
            if !finite(f) || !hold_ms.is_finite() || *hold_ms < 0.0 {
                return Err("force must be finite and hold_ms non-negative".into());
            }
        }
        Command::MoveBone { dp, daxis, dangle_rad } => {
            if !finite(dp) || !finite(daxis) || !dangle_rad.is_finite() {
                return Err("bone motion must be finite".into());
            }
            if *dangle_rad != 0.0 && vec3(*daxis).norm() < 1e-12 {
                return Err("rotation needs a non-zero daxis".into());
            }
        }
        _ => {}
    }
    Ok(())
}

struct Stepper {
    scenario: Scenario,
    trial: u64,
    sim: Simulation,
    paused: bool,
}

impl Stepper {
    fn new(scenario: Scenario, trial: u64) -> Result<Self> {
        let sim = Simulation::new(&scenario, trial)?;
        Ok(Stepper { scenario, trial, sim, paused: false })
    }

    fn apply(&mut self, command: Command) -> Result<(), String> {
        validate(&command)?;
        match command {
            Command::ApplyForce { point, f, hold_ms } => self.sim.apply_force(point, vec3(f), hold_ms * 1e-3),
            Command::MoveBone { dp, daxis, dangle_rad } => {
                let axis = if dangle_rad == 0.0 { vec3([0.0, 0.0, 1.0]) } else { vec3(daxis).normalize() };
                self.sim.move_bone(vec3(dp), axis, dangle_rad);
            }
            Command::Pause => self.paused = true,
            Command::Resume => self.paused = false,
            Command::Reset => {
                self.sim = Simulation::new(&self.scenario, self.trial).map_err(|e| e.to_string())?;
            }
            Command::SetParam { path, value } => self.sim.set_param(&path, value)?,
        }
        Ok(())
    }

    fn status(&self) -> String {
        if self.sim.failure().is_some() {
            "failed".into()
        } else if self.paused {
            "paused".into()
        } else {
            self.sim.state().status.label().into()
        }
    }
}

fn simulation_loop(mut stepper: Stepper, commands: Receiver<Request>, hub: Arc<Hub>, stop: Arc<AtomicBool>) {
    // simulated time runs `origin` behind the wall clock while not paused
    let start = Instant::now();
    let mut origin = 0.0;
    let mut next_broadcast = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        loop {
            match commands.try_recv() {
                Ok(req) => {
                    let was_paused = stepper.paused;
                    let reset = req.command == Command::Reset;
                    let result = stepper.apply(req.command);
                    if result.is_ok() && (reset || was_paused != stepper.paused) {
                        origin = start.elapsed().as_secs_f64() - stepper.sim.time();
                    }
                    let _ = req.reply.send(result);
                }
                Err(TryRecvError::Empty) => break,
                Err(TryRecvError::Disconnected) => return,
            }
        }
        if !stepper.paused && stepper.sim.failure().is_none() {
            let target = start.elapsed().as_secs_f64() - origin;
            if target - stepper.sim.time() > MAX_LAG {
                origin += target - stepper.sim.time() - MAX_LAG;
            }
            let target = start.elapsed().as_secs_f64() - origin;
            while stepper.sim.time() < target && stepper.sim.step().is_ok() {}
        } else {
            origin = start.elapsed().as_secs_f64() - stepper.sim.time();
        }
        let now = Instant::now();
        if now >= next_broadcast {
            hub.prune();
            hub.publish(&state_json(&stepper.sim.snapshot(), &stepper.status()));
            next_broadcast += BROADCAST_PERIOD;
            if next_broadcast < now {
                next_broadcast = now + BROADCAST_PERIOD;
            }
        }
        thread::sleep(Duration::from_millis(1));
    }
}

/// Reply to one client text frame.
fn handle_text(text: &str, commands: &Sender<Request>) -> String {
    let mut value: Value = match serde_json::from_str(text) {
        Ok(v) => v,
        Err(e) => return json!({"type": "err", "id": null, "reason": format!("invalid JSON: {e}")}).to_string(),
    };
    let id = value.as_object_mut().and_then(|o| o.remove("id")).unwrap_or(Value::Null);
    let command: Command = match serde_json::from_value(value) {
        Ok(c) => c,
        Err(e) => return json!({"type": "err", "id": id, "reason": format!("invalid command: {e}")}).to_string(),
    };
    let (reply, rx) = bounded(1);
    let result = commands
        .send_timeout(Request { command, reply }, Duration::from_secs(1))
        .map_err(|_| "simulation not responding".to_string())
        .and_then(|()| rx.recv_timeout(Duration::from_secs(2)).map_err(|_| "simulation not responding".to_string())?);
    match result {
        Ok(()) => json!({"type": "ack", "id": id}).to_string(),
        Err(reason) => json!({"type": "err", "id": id, "reason": reason}).to_string(),
    }
}

fn client_loop(stream: TcpStream, hub: Arc<Hub>, commands: Sender<Request>, stop: Arc<AtomicBool>) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut ws = tungstenite::accept(stream).map_err(|e| anyhow::anyhow!("handshake: {e}"))?;
    ws.get_ref().set_read_timeout(Some(POLL))?;
    ws.get_ref().set_write_timeout(Some(Duration::from_secs(5)))?;
    let (states, _token) = hub.subscribe();
    loop {
        if stop.load(Ordering::Relaxed) {
            let _ = ws.close(None);
            let _ = ws.flush();
            return Ok(());
        }
        while let Ok(text) = states.try_recv() {
            ws.send(Message::Text(text))?;
        }
        match ws.read() {
            Ok(Message::Text(text)) => {
                let reply = handle_text(text.as_str(), &commands);
                ws.send(Message::text(reply))?;
            }
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        }
    }
}

pub fn run(a: ServeArgs) -> Result<()> {
    let mut scenario = crate::load_scenario(a.scenario.as_ref())?;
    // live sessions run until stopped
    scenario.duration = 1e9;
    let stepper = Stepper::new(scenario, a.trial)?;

    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().with_context(|| format!("bad address {}:{}", a.host, a.port))?;
    let listener = match TcpListener::bind(addr) {
        Ok(l) => l,
        Err(e) if e.kind() == ErrorKind::AddrInUse => bail!("port {} is busy", a.port),
        Err(e) => return Err(e).with_context(|| format!("binding {addr}")),
    };
    listener.set_nonblocking(true)?;
    let local = listener.local_addr()?;

    let stop = Arc::new(AtomicBool::new(false));
    {
        let stop = stop.clone();
        ctrlc::set_handler(move || stop.store(true, Ordering::Relaxed)).context("installing signal handler")?;
    }
    let hub = Arc::new(Hub::default());
    let (cmd_tx, cmd_rx) = bounded::<Request>(64);
    let sim_thread = {
        let (hub, stop) = (hub.clone(), stop.clone());
        thread::spawn(move || simulation_loop(stepper, cmd_rx, hub, stop))
    };
    println!("listening on ws://{local}");

    let mut clients = Vec::new();
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, peer)) => {
                stream.set_nonblocking(false)?;
                let (hub, cmd_tx, stop) = (hub.clone(), cmd_tx.clone(), stop.clone());
                clients.push(thread::spawn(move || {
                    if let Err(e) = client_loop(stream, hub, cmd_tx, stop) {
                        eprintln!("client {peer}: {e:#}");
                    }
                }));
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
            Err(e) => eprintln!("accept: {e}"),
        }
        clients.retain(|c| !c.is_finished());
    }
    eprintln!("shutting down");
    drop(cmd_tx);
    for c in clients {
        let _ = c.join();
    }
    let _ = sim_thread.join();
    Ok(())
}
