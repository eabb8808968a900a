//! The simulation thread. It owns the [`LiveSim`], reads the latest command
//! from a single-slot mailbox every control tick, serves record/replay
//! requests between state frames and publishes serialized snapshots on a
//! broadcast channel. It never waits on the network.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use tokio::sync::{broadcast, oneshot};

use rspread_core::control::Variant;

use crate::live::{ClientId, LiveSim, SessionStatus};
use crate::mailbox::Mailbox;
use crate::wire::{Ack, CommandMsg, ErrorCode, Hello, RecordAction, WireError, WireMessage};

/// Buffered state frames per subscriber before it starts skipping.
const STATE_BUFFER: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pacing {
    /// One control period of wall time per tick.
    RealTime,
    /// As fast as the machine allows.
    Fast,
}

pub type Reply = oneshot::Sender<Result<Ack, WireError>>;

pub enum Request {
    Record {
        client: ClientId,
        action: RecordAction,
        reply: Reply,
    },
    Replay {
        variant: Variant,
        displacement: f64,
        reply: Reply,
    },
    ClientGone(ClientId),
    Status(oneshot::Sender<SessionStatus>),
    /// Runs `f` on the session between frames.
    Inspect(Box<dyn FnOnce(&LiveSim) + Send>),
}

pub struct SimHandle {
    commands: Arc<Mailbox<CommandMsg>>,
    requests: Mutex<mpsc::Sender<Request>>,
    states: broadcast::Sender<Arc<str>>,
    stop: Arc<AtomicBool>,
    thread: Mutex<Option<JoinHandle<LiveSim>>>,
    hello: Hello,
}

impl SimHandle {
    pub fn spawn(sim: LiveSim, pacing: Pacing) -> Arc<Self> {
        let commands = Arc::new(Mailbox::new());
        let (req_tx, req_rx) = mpsc::channel();
        let (states, _) = broadcast::channel(STATE_BUFFER);
        let stop = Arc::new(AtomicBool::new(false));
        let hello = sim.hello();
        let thread = {
            let (commands, states, stop) = (commands.clone(), states.clone(), stop.clone());
            std::thread::Builder::new()
                .name("rspread-sim".into())
                .spawn(move || sim_loop(sim, pacing, &commands, &req_rx, &states, &stop))
                .expect("spawn simulation thread")
        };
        Arc::new(Self { commands, requests: Mutex::new(req_tx), states, stop, thread: Mutex::new(Some(thread)), hello })
    }

    pub fn hello(&self) -> &Hello {
        &self.hello
    }

    pub fn arms(&self) -> usize {
        self.hello.arms.unwrap_or(0)
    }

    /// Latest command wins; it is applied at the next control tick.
    pub fn command(&self, cmd: CommandMsg) {
        self.commands.put(cmd);
    }

    pub fn subscribe(&self) -> broadcast::Receiver<Arc<str>> {
        self.states.subscribe()
    }

    pub fn send(&self, req: Request) -> bool {
        self.requests.lock().unwrap_or_else(|e| e.into_inner()).send(req).is_ok()
    }

    pub async fn record(&self, client: ClientId, action: RecordAction) -> Result<Ack, WireError> {
        let (reply, rx) = oneshot::channel();
        self.ask(Request::Record { client, action, reply }, rx).await
    }

    pub async fn replay(&self, variant: Variant, displacement: f64) -> Result<Ack, WireError> {
        let (reply, rx) = oneshot::channel();
        self.ask(Request::Replay { variant, displacement, reply }, rx).await
    }

    pub async fn status(&self) -> Option<SessionStatus> {
        let (tx, rx) = oneshot::channel();
        self.send(Request::Status(tx));
        rx.await.ok()
    }

    /// Evaluates `f` on the session from the simulation thread.
    pub async fn inspect<T: Send + 'static>(&self, f: impl FnOnce(&LiveSim) -> T + Send + 'static) -> Option<T> {
        let (tx, rx) = oneshot::channel();
        self.send(Request::Inspect(Box::new(move |s| {
            let _ = tx.send(f(s));
        })));
        rx.await.ok()
    }

    async fn ask(&self, req: Request, rx: oneshot::Receiver<Result<Ack, WireError>>) -> Result<Ack, WireError> {
        if !self.send(req) {
            return Err(WireError::new(ErrorCode::Internal, "simulation stopped"));
        }
        rx.await.unwrap_or_else(|_| Err(WireError::new(ErrorCode::Internal, "simulation stopped")))
    }

    /// Stops the thread and hands back the session.
    pub fn shutdown(&self) -> Option<LiveSim> {
        self.stop.store(true, Ordering::Relaxed);
        let thread = self.thread.lock().unwrap_or_else(|e| e.into_inner()).take()?;
        thread.join().ok()
    }
}

impl Drop for SimHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

fn publish(states: &broadcast::Sender<Arc<str>>, msg: &WireMessage) {
    // No subscribers is fine.
    let _ = states.send(Arc::from(msg.to_json()));
}

fn handle(sim: &mut LiveSim, req: Request, states: &broadcast::Sender<Arc<str>>) {
    match req {
        Request::Record { client, action, reply } => {
            let r = match action {
                RecordAction::Start => sim.record_start(client),
                RecordAction::Stop => sim.record_stop(),
            };
            let _ = reply.send(r);
        }
        Request::Replay { variant, displacement, reply } => {
            let _ = reply.send(sim.replay(variant, displacement));
        }
        Request::ClientGone(client) => {
            if let Some(ack) = sim.client_gone(client) {
                tracing::info!(samples = ack.detail.samples, "recording owner disconnected; recording stopped");
                publish(states, &WireMessage::Ack(ack));
            }
        }
        Request::Status(reply) => {
            let _ = reply.send(sim.status());
        }
        Request::Inspect(f) => f(sim),
    }
}

fn sim_loop(
    mut sim: LiveSim,
    pacing: Pacing,
    commands: &Mailbox<CommandMsg>,
    requests: &mpsc::Receiver<Request>,
    states: &broadcast::Sender<Arc<str>>,
    stop: &AtomicBool,
) -> LiveSim {
    let frame = Duration::from_secs_f64(sim.scenario().dt() * sim.decimation() as f64);
    let mut deadline = Instant::now();
    while !stop.load(Ordering::Relaxed) {
        while let Ok(req) = requests.try_recv() {
            handle(&mut sim, req, states);
        }
        if let Some(f) = sim.next_replay_frame() {
            publish(states, &WireMessage::State(f));
        } else {
            for _ in 0..sim.decimation() {
                if let Some(cmd) = commands.take() {
                    if let Err(e) = sim.apply_command(&cmd) {
                        publish(states, &e.to_message());
                    }
                }
                match sim.tick() {
                    Ok(Some(s)) => publish(states, &WireMessage::State(s)),
                    Ok(None) => {}
                    Err(e) => {
                        tracing::warn!("simulation reset: {e}");
                        publish(states, &WireError::new(ErrorCode::Internal, format!("simulation reset: {e}")).to_message());
                        break;
                    }
                }
            }
        }
        match pacing {
            Pacing::RealTime => {
                deadline += frame;
                let now = Instant::now();
                if deadline > now {
                    std::thread::sleep(deadline - now);
                } else if now - deadline > frame * 10 {
                    // Too far behind to catch up; restart the clock.
                    deadline = now;
                }
            }
            Pacing::Fast => std::thread::yield_now(),
        }
    }
    sim
}
