//! WebSocket front end on `/ws`. Each connection gets a writer task fed by
//! a bounded queue; state frames are dropped for a client whose queue is
//! full rather than slowing the simulation down.

use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::IntoResponse;
use axum::routing::get;
use axum::Router;
use futures_util::{SinkExt, StreamExt};
use tokio::sync::{broadcast, mpsc, oneshot};

use crate::live::ClientId;
use crate::runtime::{Request, SimHandle};
use crate::wire::{ErrorCode, WireError, WireMessage, WIRE_SCHEMA_VERSION};
use crate::TeleopError;

/// Outgoing messages queued per client.
const CLIENT_QUEUE: usize = 64;

#[derive(Clone)]
struct AppState {
    sim: Arc<SimHandle>,
    next_id: Arc<AtomicU64>,
}

pub struct Server {
    pub local_addr: SocketAddr,
    pub handle: Arc<SimHandle>,
    shutdown: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<()>,
}

impl Server {
    /// Binds `addr` and serves in the background.
    pub async fn start(handle: Arc<SimHandle>, addr: SocketAddr) -> Result<Self, TeleopError> {
        let listener = tokio::net::TcpListener::bind(addr).await.map_err(|e| match e.kind() {
            std::io::ErrorKind::AddrInUse => TeleopError::PortInUse(addr),
            _ => TeleopError::Io(e),
        })?;
        let local_addr = listener.local_addr()?;
        let state = AppState { sim: handle.clone(), next_id: Arc::new(AtomicU64::new(1)) };
        let app = Router::new().route("/ws", get(upgrade)).with_state(state);
        let (tx, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(async move {
            let serve = axum::serve(listener, app).with_graceful_shutdown(async {
                let _ = rx.await;
            });
            if let Err(e) = serve.await {
                tracing::error!("server stopped: {e}");
            }
        });
        tracing::info!(%local_addr, "teleoperation server listening");
        Ok(Self { local_addr, handle, shutdown: Some(tx), task })
    }

    /// Stops accepting connections and waits for the listener to close.
    pub async fn stop(mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        // Open sockets keep graceful shutdown waiting; do not hang on them.
        self.task.abort();
        let _ = self.task.await;
    }
}

/// Serves until ctrl-c, then stops the simulation thread.
pub async fn serve_forever(handle: Arc<SimHandle>, addr: SocketAddr) -> Result<(), TeleopError> {
    let server = Server::start(handle.clone(), addr).await?;
    tokio::signal::ctrl_c().await?;
    tracing::info!("shutting down");
    server.stop().await;
    handle.shutdown();
    Ok(())
}

async fn upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> impl IntoResponse {
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    ws.on_upgrade(move |socket| session(socket, state.sim, id))
}

fn text(msg: &WireMessage) -> Message {
    Message::Text(msg.to_json().into())
}

async fn session(socket: WebSocket, sim: Arc<SimHandle>, id: ClientId) {
    let (mut sink, mut stream) = socket.split();
    let (out, mut out_rx) = mpsc::channel::<Message>(CLIENT_QUEUE);
    let writer = tokio::spawn(async move {
        while let Some(m) = out_rx.recv().await {
            let close = matches!(m, Message::Close(_));
            if sink.send(m).await.is_err() || close {
                break;
            }
        }
    });
    let _ = out.send(text(&WireMessage::Hello(sim.hello().clone()))).await;
    tracing::debug!(client = id, "connected");

    let mut forwarder: Option<tokio::task::JoinHandle<()>> = None;
    while let Some(Ok(frame)) = stream.next().await {
        let raw = match frame {
            Message::Text(t) => t,
            Message::Binary(_) => {
                let _ = out.send(text(&WireError::new(ErrorCode::Malformed, "binary frames are not accepted").to_message())).await;
                continue;
            }
            Message::Close(_) => break,
            _ => continue,
        };
        let msg = match WireMessage::parse_client(raw.as_str()) {
            Ok(m) => m,
            Err(e) => {
                let _ = out.send(text(&e.to_message())).await;
                continue;
            }
        };
        if forwarder.is_none() {
            match msg {
                WireMessage::Hello(h) if h.schema_version == WIRE_SCHEMA_VERSION => {
                    forwarder = Some(tokio::spawn(forward(sim.subscribe(), out.clone())));
                }
                WireMessage::Hello(h) => {
                    let e = WireError::new(ErrorCode::SchemaVersion, format!("server speaks version {WIRE_SCHEMA_VERSION}, client {}", h.schema_version));
                    let _ = out.send(text(&e.to_message())).await;
                    let _ = out.send(Message::Close(None)).await;
                    break;
                }
                _ => {
                    let _ = out.send(text(&WireError::new(ErrorCode::HandshakeRequired, "send hello first").to_message())).await;
                }
            }
            continue;
        }
        let reply = match msg {
            WireMessage::Hello(_) => None,
            WireMessage::Command(c) => match c.arm {
                crate::wire::ArmSelector::Index(i) if i >= sim.arms() => Some(WireMessage::Error { code: ErrorCode::Invalid, message: format!("no arm {i}") }),
                _ => {
                    sim.command(c);
                    None
                }
            },
            WireMessage::Record { action } => Some(ack_or_error(sim.record(id, action).await)),
            WireMessage::Replay { variant, displacement } => Some(ack_or_error(sim.replay(variant, displacement).await)),
            _ => None,
        };
        if let Some(r) = reply {
            if out.send(text(&r)).await.is_err() {
                break;
            }
        }
    }

    if let Some(f) = forwarder {
        f.abort();
    }
    drop(out);
    let _ = writer.await;
    sim.send(Request::ClientGone(id));
    tracing::debug!(client = id, "disconnected");
}

fn ack_or_error(r: Result<crate::wire::Ack, WireError>) -> WireMessage {
    match r {
        Ok(a) => WireMessage::Ack(a),
        Err(e) => e.to_message(),
    }
}

async fn forward(mut states: broadcast::Receiver<Arc<str>>, out: mpsc::Sender<Message>) {
    loop {
        match states.recv().await {
            Ok(s) => match out.try_send(Message::Text(s.as_ref().into())) {
                Ok(()) | Err(mpsc::error::TrySendError::Full(_)) => {}
                Err(mpsc::error::TrySendError::Closed(_)) => break,
            },
            Err(broadcast::error::RecvError::Lagged(n)) => tracing::debug!(skipped = n, "slow client"),
            Err(broadcast::error::RecvError::Closed) => break,
        }
    }
}
